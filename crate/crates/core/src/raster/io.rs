//! RAW+META raster files and PNG quick-looks.
//!
//! A raster `scene` is stored as `scene.raw` (C·H·W little-endian `f32`,
//! band-major) plus a `scene.meta` sidecar of `key=value` lines:
//!
//! ```text
//! bands=3
//! height=64
//! width=64
//! dtype=f32le
//! band.0.name=B4
//! band.0.gsd=10
//! band.0.gnyq=0.3
//! band.0.min=0
//! band.0.max=255
//! ```
//!
//! `band.<i>.min`/`max` are optional and default to 0 and 255.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{BandSpec, Raster};
use crate::error::{bail, Error, Result};

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Parameter(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Returns the `(raw, meta)` paths for a raster path given with or without
/// a `.raw`/`.meta` extension.
pub fn raster_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("raw") | Some("meta") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let raw = PathBuf::from(format!("{}.raw", stem.display()));
    let meta = PathBuf::from(format!("{}.meta", stem.display()));
    (raw, meta)
}

pub fn format_meta(img: &Raster) -> String {
    let mut s = format!(
        "bands={}\nheight={}\nwidth={}\ndtype=f32le\n",
        img.bands(),
        img.height(),
        img.width()
    );
    for (i, b) in img.band_meta().iter().enumerate() {
        s.push_str(&format!(
            "band.{i}.name={}\nband.{i}.gsd={}\nband.{i}.gnyq={}\nband.{i}.min={}\nband.{i}.max={}\n",
            b.name, b.gsd, b.gnyq, b.value_range.0, b.value_range.1
        ));
    }
    s
}

pub fn encode_raw(img: &Raster) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(img.data().len() * 4);
    for &v in img.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    bytes
}

pub fn write_raster(path: &Path, img: &Raster) -> Result<()> {
    let (raw, meta) = raster_paths(path);
    atomic_write(&raw, &encode_raw(img))?;
    atomic_write(&meta, format_meta(img).as_bytes())
}

fn parse_num<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let v = map.get(key).ok_or_else(|| Error::Format(format!("missing key `{key}`")))?;
    v.parse().map_err(|_| Error::Format(format!("bad value `{v}` for `{key}`")))
}

/// Parses a metadata sidecar into `(bands, height, width, band specs)`.
pub fn parse_meta(text: &str) -> Result<(usize, usize, usize, Vec<BandSpec>)> {
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!(Format, "line {}: expected key=value", n + 1);
        };
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    let bands: usize = parse_num(&map, "bands")?;
    let height: usize = parse_num(&map, "height")?;
    let width: usize = parse_num(&map, "width")?;
    match map.get("dtype").map(String::as_str) {
        Some("f32le") => {}
        other => bail!(Format, "unsupported dtype {other:?}"),
    }
    let mut meta = Vec::with_capacity(bands);
    for i in 0..bands {
        let name = map.get(&format!("band.{i}.name")).cloned().unwrap_or_else(|| format!("b{i}"));
        let mut spec = BandSpec::new(name, parse_num(&map, &format!("band.{i}.gsd"))?)
            .with_gnyq(parse_num(&map, &format!("band.{i}.gnyq"))?);
        let min = map.contains_key(&format!("band.{i}.min"));
        if min {
            spec.value_range = (
                parse_num(&map, &format!("band.{i}.min"))?,
                parse_num(&map, &format!("band.{i}.max"))?,
            );
        }
        meta.push(spec);
    }
    Ok((bands, height, width, meta))
}

pub fn read_raster(path: &Path) -> Result<Raster> {
    let (raw, meta) = raster_paths(path);
    let (bands, height, width, specs) = parse_meta(&fs::read_to_string(&meta)?)?;
    let bytes = fs::read(&raw)?;
    if bytes.len() != bands * height * width * 4 {
        bail!(
            Format,
            "{}: {} bytes, expected {}",
            raw.display(),
            bytes.len(),
            bands * height * width * 4
        );
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Raster::new(bands, height, width, data, specs)
}

/// Value at quantile `q` of `sorted` (nearest-rank on `q·(n-1)`).
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let idx = (q * (sorted.len() - 1) as f64).round() as usize;
    sorted[idx]
}

/// Stretches one band to 8 bits between its 2nd and 98th percentiles.
pub fn stretch_band(plane: &[f64]) -> Vec<u8> {
    let mut sorted = plane.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = quantile(&sorted, 0.02);
    let hi = quantile(&sorted, 0.98);
    let span = if hi > lo { hi - lo } else { 1.0 };
    plane
        .iter()
        .map(|v| (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

/// Writes an 8-bit PNG from one band (grayscale) or three bands (RGB).
pub fn write_png(path: &Path, img: &Raster, bands: &[usize]) -> Result<()> {
    let color = match bands.len() {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        n => bail!(Parameter, "PNG export needs 1 or 3 bands, got {n}"),
    };
    let planes: Vec<Vec<u8>> = bands
        .iter()
        .map(|&b| {
            if b >= img.bands() {
                bail!(Dimension, "band {b} out of range");
            }
            Ok(stretch_band(img.band(b)))
        })
        .collect::<Result<_>>()?;
    let n = img.plane_len();
    let mut pixels = Vec::with_capacity(n * planes.len());
    for i in 0..n {
        pixels.extend(planes.iter().map(|p| p[i]));
    }
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, img.width() as u32, img.height() as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| Error::Format(e.to_string()))?;
        w.write_image_data(&pixels).map_err(|e| Error::Format(e.to_string()))?;
    }
    atomic_write(path, &buf)
}
