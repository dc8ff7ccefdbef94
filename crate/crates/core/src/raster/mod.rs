//! Planar multi-band rasters and the deterministic primitives built on them.

pub(crate) mod convolve;
mod fold;
pub mod io;
mod resample;

pub use convolve::{conv2d_reflect, conv_separable_reflect, reflect_index, Kernel2D};
pub use fold::{pixel_fold, pixel_unfold};
pub use resample::{
    boxcar_downsample, cubic_taps, resample_bicubic, resample_bilinear, upsample_nearest, Taps,
};

use crate::error::{bail, Result};

/// Per-band metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct BandSpec {
    pub name: String,
    /// Ground sampling distance in meters.
    pub gsd: f64,
    /// MTF amplitude at the Nyquist frequency.
    pub gnyq: f64,
    pub value_range: (f64, f64),
}

impl BandSpec {
    pub const DEFAULT_GNYQ: f64 = 0.3;

    pub fn new(name: impl Into<String>, gsd: f64) -> Self {
        Self {
            name: name.into(),
            gsd,
            gnyq: Self::DEFAULT_GNYQ,
            value_range: (0.0, 255.0),
        }
    }

    pub fn with_gnyq(mut self, gnyq: f64) -> Self {
        self.gnyq = gnyq;
        self
    }

    pub fn with_range(mut self, min: f64, max: f64) -> Self {
        self.value_range = (min, max);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gnyq > 0.0 && self.gnyq < 1.0) {
            bail!(Parameter, "band {}: gnyq {} outside (0, 1)", self.name, self.gnyq);
        }
        if !(self.gsd > 0.0) {
            bail!(Parameter, "band {}: gsd must be positive", self.name);
        }
        let (lo, hi) = self.value_range;
        if !(lo < hi) {
            bail!(Parameter, "band {}: empty value range [{lo}, {hi}]", self.name);
        }
        Ok(())
    }

    pub fn dynamic_range(&self) -> f64 {
        self.value_range.1 - self.value_range.0
    }
}

impl Default for BandSpec {
    fn default() -> Self {
        Self::new("band", 10.0)
    }
}

/// A C×H×W image stored band-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    bands: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
    band_meta: Vec<BandSpec>,
}

impl Raster {
    /// Builds a raster, checking shape, finiteness and band metadata.
    pub fn new(
        bands: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
        band_meta: Vec<BandSpec>,
    ) -> Result<Self> {
        if bands == 0 || height == 0 || width == 0 {
            bail!(Dimension, "raster dimensions must be positive, got {bands}x{height}x{width}");
        }
        if data.len() != bands * height * width {
            bail!(
                Dimension,
                "data length {} does not match {bands}x{height}x{width}",
                data.len()
            );
        }
        if band_meta.len() != bands {
            bail!(Dimension, "{} band specs for {bands} bands", band_meta.len());
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            bail!(Domain, "non-finite value at flat index {i}");
        }
        for b in &band_meta {
            b.validate()?;
        }
        Ok(Self { bands, height, width, data, band_meta })
    }

    /// Builds a raster with default band metadata.
    pub fn from_vec(bands: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(bands, height, width, data, default_meta(bands))
    }

    pub fn zeros(bands: usize, height: usize, width: usize) -> Self {
        Self::filled(bands, height, width, 0.0)
    }

    pub fn filled(bands: usize, height: usize, width: usize, value: f64) -> Self {
        assert!(bands > 0 && height > 0 && width > 0, "empty raster");
        Self {
            bands,
            height,
            width,
            data: vec![value; bands * height * width],
            band_meta: default_meta(bands),
        }
    }

    /// Stacks per-band planes of equal size.
    pub fn from_planes(planes: Vec<Vec<f64>>, height: usize, width: usize) -> Result<Self> {
        let bands = planes.len();
        let mut data = Vec::with_capacity(bands * height * width);
        for (i, p) in planes.iter().enumerate() {
            if p.len() != height * width {
                bail!(Dimension, "plane {i} has {} values, expected {}", p.len(), height * width);
            }
            data.extend_from_slice(p);
        }
        Self::from_vec(bands, height, width, data)
    }

    /// Same shape and metadata as `self`, new data. Panics on length mismatch.
    pub(crate) fn with_data(&self, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), self.data.len());
        Self { data, ..self.clone_meta_only() }
    }

    pub(crate) fn from_parts(
        bands: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
        band_meta: Vec<BandSpec>,
    ) -> Self {
        debug_assert_eq!(data.len(), bands * height * width);
        debug_assert_eq!(band_meta.len(), bands);
        Self { bands, height, width, data, band_meta }
    }

    fn clone_meta_only(&self) -> Self {
        Self {
            bands: self.bands,
            height: self.height,
            width: self.width,
            data: Vec::new(),
            band_meta: self.band_meta.clone(),
        }
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.bands, self.height, self.width)
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn band(&self, b: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn band_mut(&mut self, b: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn get(&self, b: usize, y: usize, x: usize) -> f64 {
        self.data[(b * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, b: usize, y: usize, x: usize, v: f64) {
        self.data[(b * self.height + y) * self.width + x] = v;
    }

    pub fn band_meta(&self) -> &[BandSpec] {
        &self.band_meta
    }

    pub fn band_meta_mut(&mut self) -> &mut [BandSpec] {
        &mut self.band_meta
    }

    pub fn with_band_meta(mut self, meta: Vec<BandSpec>) -> Result<Self> {
        if meta.len() != self.bands {
            bail!(Dimension, "{} band specs for {} bands", meta.len(), self.bands);
        }
        for m in &meta {
            m.validate()?;
        }
        self.band_meta = meta;
        Ok(self)
    }

    /// Multiplies every band's GSD by `factor`.
    pub fn scale_gsd(&mut self, factor: f64) {
        for m in &mut self.band_meta {
            m.gsd *= factor;
        }
    }

    pub fn same_shape(&self, other: &Raster) -> bool {
        self.shape() == other.shape()
    }

    pub fn ensure_same_shape(&self, other: &Raster, what: &str) -> Result<()> {
        if !self.same_shape(other) {
            bail!(
                Dimension,
                "{what}: shape {:?} does not match {:?}",
                self.shape(),
                other.shape()
            );
        }
        Ok(())
    }

    /// New raster holding the listed bands, in order.
    pub fn select_bands(&self, idx: &[usize]) -> Result<Raster> {
        if idx.is_empty() {
            bail!(Dimension, "empty band selection");
        }
        let mut data = Vec::with_capacity(idx.len() * self.plane_len());
        let mut meta = Vec::with_capacity(idx.len());
        for &b in idx {
            if b >= self.bands {
                bail!(Dimension, "band index {b} out of range for {} bands", self.bands);
            }
            data.extend_from_slice(self.band(b));
            meta.push(self.band_meta[b].clone());
        }
        Ok(Self::from_parts(idx.len(), self.height, self.width, data, meta))
    }

    /// Concatenates rasters along the band axis.
    pub fn stack(parts: &[&Raster]) -> Result<Raster> {
        let Some(first) = parts.first() else {
            bail!(Dimension, "nothing to stack");
        };
        let (h, w) = (first.height, first.width);
        let mut data = Vec::new();
        let mut meta = Vec::new();
        for p in parts {
            if (p.height, p.width) != (h, w) {
                bail!(Dimension, "cannot stack {}x{} with {h}x{w}", p.height, p.width);
            }
            data.extend_from_slice(&p.data);
            meta.extend(p.band_meta.iter().cloned());
        }
        Ok(Self::from_parts(meta.len(), h, w, data, meta))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Raster {
        self.with_data(self.data.iter().map(|&v| f(v)).collect())
    }

    /// Per-pixel mean across bands as a single-band raster.
    pub fn band_mean(&self) -> Raster {
        let n = self.plane_len();
        let mut out = vec![0.0; n];
        for b in 0..self.bands {
            for (o, v) in out.iter_mut().zip(self.band(b)) {
                *o += v;
            }
        }
        let inv = self.bands as f64;
        out.iter_mut().for_each(|v| *v /= inv);
        let mut meta = self.band_meta[0].clone();
        meta.name = "mean".into();
        Self::from_parts(1, self.height, self.width, out, vec![meta])
    }

    pub fn band_mean_value(&self, b: usize) -> f64 {
        let p = self.band(b);
        p.iter().sum::<f64>() / p.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

fn default_meta(bands: usize) -> Vec<BandSpec> {
    (0..bands).map(|i| BandSpec::new(format!("b{i}"), 10.0)).collect()
}
