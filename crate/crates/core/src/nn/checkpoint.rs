//! Parameter checkpoints: a text manifest listing each parameter's name,
//! shape and byte offset, plus a blob of little-endian `f32` values.
//!
//! ```text
//! s2fuse-checkpoint 1
//! meta ratio 4
//! param detail.head.w 32,5,3,3 0
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::ParamStore;
use crate::error::{bail, Result};
use crate::raster::io::atomic_write;

const MAGIC: &str = "s2fuse-checkpoint 1";

/// `(manifest, blob)` paths for a checkpoint path with any extension.
pub fn checkpoint_paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("manifest"), path.with_extension("params"))
}

/// Free-form metadata stored next to the parameters.
pub type Meta = BTreeMap<String, String>;

pub fn save(path: &Path, store: &ParamStore, meta: &Meta) -> Result<()> {
    let (manifest_path, blob_path) = checkpoint_paths(path);
    let mut text = format!("{MAGIC}\n");
    for (k, v) in meta {
        if k.contains(char::is_whitespace) || v.contains('\n') {
            bail!(Parameter, "metadata key {k:?} or its value is not storable");
        }
        text.push_str(&format!("meta {k} {v}\n"));
    }
    let mut blob = Vec::with_capacity(store.num_scalars() * 4);
    for p in store.iter() {
        let shape: Vec<String> = p.shape.iter().map(|d| d.to_string()).collect();
        text.push_str(&format!("param {} {} {}\n", p.name, shape.join(","), blob.len()));
        for v in &p.value {
            blob.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    atomic_write(&blob_path, &blob)?;
    atomic_write(&manifest_path, text.as_bytes())
}

struct Entry {
    shape: Vec<usize>,
    offset: usize,
}

fn parse_manifest(text: &str) -> Result<(Meta, BTreeMap<String, Entry>)> {
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        bail!(Format, "not a checkpoint manifest");
    }
    let mut meta = Meta::new();
    let mut params = BTreeMap::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let mut parts = line.splitn(3, ' ');
        match (parts.next(), parts.next(), parts.next()) {
            (Some("meta"), Some(k), v) => {
                meta.insert(k.to_string(), v.unwrap_or("").to_string());
            }
            (Some("param"), Some(name), Some(rest)) => {
                let (shape, offset) = rest
                    .split_once(' ')
                    .ok_or_else(|| crate::Error::Format(format!("bad param line: {line}")))?;
                let shape = shape
                    .split(',')
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| crate::Error::Format(format!("bad shape in: {line}")))?;
                let offset = offset
                    .parse()
                    .map_err(|_| crate::Error::Format(format!("bad offset in: {line}")))?;
                params.insert(name.to_string(), Entry { shape, offset });
            }
            _ => bail!(Format, "unrecognized manifest line: {line}"),
        }
    }
    Ok((meta, params))
}

/// Reads only the metadata of a checkpoint.
pub fn load_meta(path: &Path) -> Result<Meta> {
    let (manifest_path, _) = checkpoint_paths(path);
    Ok(parse_manifest(&std::fs::read_to_string(manifest_path)?)?.0)
}

/// Fills `store` (matched by name and shape) from a checkpoint and returns
/// its metadata.
pub fn load_into(path: &Path, store: &mut ParamStore) -> Result<Meta> {
    let (manifest_path, blob_path) = checkpoint_paths(path);
    let (meta, entries) = parse_manifest(&std::fs::read_to_string(manifest_path)?)?;
    let blob = std::fs::read(blob_path)?;
    for p in store.iter_mut() {
        let Some(e) = entries.get(&p.name) else {
            bail!(Format, "checkpoint lacks parameter {}", p.name);
        };
        if e.shape != p.shape {
            bail!(Dimension, "parameter {}: checkpoint shape {:?}, model {:?}", p.name, e.shape, p.shape);
        }
        let end = e.offset + 4 * p.value.len();
        if end > blob.len() {
            bail!(Format, "parameter {} runs past the end of the blob", p.name);
        }
        for (v, b) in p.value.iter_mut().zip(blob[e.offset..end].chunks_exact(4)) {
            *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64;
        }
    }
    if entries.len() != store.len() {
        bail!(Format, "checkpoint has {} parameters, model has {}", entries.len(), store.len());
    }
    Ok(meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut s = ParamStore::new();
        s.add("a.w", &[2, 3], vec![0.1, -2.5, 3.0, 1e-7, 0.0, 7.25]);
        s.add("a.b", &[2], vec![1.0, -1.0]);
        let mut meta = Meta::new();
        meta.insert("ratio".into(), "4".into());
        save(&path, &s, &meta).unwrap();
        let mut t = s.clone();
        t.iter_mut().for_each(|p| p.value.iter_mut().for_each(|v| *v = 9.0));
        let m = load_into(&path, &mut t).unwrap();
        assert_eq!(m.get("ratio").map(String::as_str), Some("4"));
        for (p, q) in s.iter().zip(t.iter()) {
            for (a, b) in p.value.iter().zip(&q.value) {
                assert_eq!(*a as f32, *b as f32);
            }
        }
        let text = std::fs::read_to_string(dir.path().join("m.manifest")).unwrap();
        assert!(text.contains("param a.b 2 24"));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m");
        let mut s = ParamStore::new();
        s.add("w", &[4], vec![0.0; 4]);
        save(&path, &s, &Meta::new()).unwrap();
        let mut t = ParamStore::new();
        t.add("w", &[2, 2], vec![0.0; 4]);
        assert!(load_into(&path, &mut t).is_err());
    }
}
