//! Shared fixtures for the benchmarks.

use s2fuse_core::fusion::BandGroup;
use s2fuse_core::scene::{gen_scene, SceneContent, SceneSpec};
use s2fuse_core::Raster;

/// Native-grid bands of `group` and an RGB guide from one mixture scene.
pub fn group_scene(group: BandGroup, size: usize, seed: u64) -> (Raster, Raster) {
    let c = group.bands().len();
    let sc = gen_scene(&SceneSpec::new(size, 3 + c, SceneContent::Mixture, seed)).expect("valid scene");
    let rgb = sc.select_bands(&[0, 1, 2]).expect("rgb bands");
    let idx: Vec<usize> = (3..3 + c).collect();
    let ms = sc.select_bands(&idx).and_then(|m| m.with_band_meta(group.band_specs())).expect("group bands");
    (ms, rgb)
}
