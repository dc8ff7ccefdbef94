//! Seeded synthetic multispectral scenes standing in for real imagery.

use std::str::FromStr;

use crate::error::{bail, Error, Result};
use crate::raster::{conv_separable_reflect, BandSpec};
use crate::{Raster, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneContent {
    /// Independent planar ramps per band.
    Gradients,
    /// Sums of Gaussian blobs shared across bands with per-band weights.
    Blobs,
    /// Overlapping axis-aligned rectangles with per-band levels.
    Rectangles,
    /// Two-level checkerboard identical in every band.
    Checkerboard,
    /// Linear mixtures of material spectra with spatially varying
    /// abundances, plus independent per-band texture.
    Mixture,
}

impl FromStr for SceneContent {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "gradients" => SceneContent::Gradients,
            "blobs" => SceneContent::Blobs,
            "rectangles" => SceneContent::Rectangles,
            "checkerboard" => SceneContent::Checkerboard,
            "mixture" => SceneContent::Mixture,
            _ => bail!(Parameter, "unknown scene content `{s}`"),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub size: usize,
    pub bands: usize,
    pub content: SceneContent,
    pub seed: u64,
    /// Standard deviation of the independent per-band texture (mixtures).
    pub texture: f64,
    /// Number of materials in a mixture.
    pub materials: usize,
}

impl SceneSpec {
    pub fn new(size: usize, bands: usize, content: SceneContent, seed: u64) -> Self {
        Self { size, bands, content, seed, texture: 2.0, materials: 4 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 2 || self.bands == 0 {
            bail!(Parameter, "scene needs size ≥ 2 and at least one band");
        }
        if self.content == SceneContent::Mixture && self.materials == 0 {
            bail!(Parameter, "a mixture needs at least one material");
        }
        if !(self.texture >= 0.0) {
            bail!(Parameter, "texture must be non-negative");
        }
        Ok(())
    }
}

/// Checkerboard levels and cell size.
pub const CHECKER_LEVELS: (f64, f64) = (64.0, 192.0);
pub const CHECKER_CELL: usize = 8;

fn blob_field(size: usize, rng: &mut SeededRng, count: usize) -> Vec<f64> {
    let n = size as f64;
    let mut f = vec![0.0; size * size];
    for _ in 0..count {
        let (cy, cx) = (rng.uniform_range(0.0, n), rng.uniform_range(0.0, n));
        let s = rng.uniform_range(n / 16.0, n / 4.0).max(0.5);
        let a = rng.uniform_range(-1.0, 1.0);
        for y in 0..size {
            for x in 0..size {
                let d2 = (y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2);
                f[y * size + x] += a * (-d2 / (2.0 * s * s)).exp();
            }
        }
    }
    f
}

fn rect_field(size: usize, rng: &mut SeededRng, count: usize) -> Vec<f64> {
    let mut f = vec![0.0; size * size];
    for _ in 0..count {
        let y0 = rng.below(size);
        let x0 = rng.below(size);
        let y1 = (y0 + 1 + rng.below(size / 2 + 1)).min(size);
        let x1 = (x0 + 1 + rng.below(size / 2 + 1)).min(size);
        let a = rng.uniform_range(-1.0, 1.0);
        for y in y0..y1 {
            for x in x0..x1 {
                f[y * size + x] += a;
            }
        }
    }
    f
}

fn ramp(size: usize, rng: &mut SeededRng) -> Vec<f64> {
    let (a, b) = (rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0));
    let n = size as f64;
    (0..size * size)
        .map(|i| a * ((i / size) as f64 / n - 0.5) + b * ((i % size) as f64 / n - 0.5))
        .collect()
}

/// Unit-variance noise smoothed with a σ = 1 px Gaussian.
fn texture(n: usize, rng: &mut SeededRng) -> Vec<f64> {
    let taps = crate::degradation::gaussian_taps(TEXTURE_SIGMA, 2 * n + 1);
    let white = Raster::from_vec(1, n, n, rng.normals(n * n)).expect("square plane");
    let mut t = conv_separable_reflect(&white, &taps).expect("valid taps").into_data();
    let sd = (t.iter().map(|v| v * v).sum::<f64>() / t.len() as f64).sqrt();
    if sd > 0.0 {
        t.iter_mut().for_each(|v| *v /= sd);
    }
    t
}

/// Correlation length of mixture texture, in pixels.
pub const TEXTURE_SIGMA: f64 = 1.0;

/// Spatially varying material fractions (`materials` maps summing to one per
/// pixel) and material spectra (`materials` × `bands`, 0–255 scale), each
/// a jittered copy of a [`library_spectrum`].
pub fn mixture_parts(spec: &SceneSpec) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    spec.validate()?;
    let mut rng = SeededRng::new(spec.seed);
    let (n, k) = (spec.size, spec.materials);
    let sharp = 6.0;
    let logits: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            let b = blob_field(n, &mut rng, 4);
            let r = rect_field(n, &mut rng, 3);
            let g = ramp(n, &mut rng);
            b.iter().zip(&r).zip(&g).map(|((b, r), g)| sharp * (b + r + g)).collect()
        })
        .collect();
    let mut abund = vec![vec![0.0; n * n]; k];
    for p in 0..n * n {
        let m = logits.iter().map(|l| l[p]).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l[p] - m).exp()).sum();
        for j in 0..k {
            abund[j][p] = (logits[j][p] - m).exp() / z;
        }
    }
    let spectra = (0..k)
        .map(|j| {
            let (gain, tilt) = (rng.uniform_range(0.85, 1.15), rng.uniform_range(-15.0, 15.0));
            (0..spec.bands)
                .map(|b| {
                    let lam = if spec.bands > 1 { b as f64 / (spec.bands - 1) as f64 } else { 0.5 };
                    let v = gain * library_spectrum(j, lam) + tilt * (lam - 0.5) + rng.uniform_range(-5.0, 5.0);
                    v.clamp(5.0, 250.0)
                })
                .collect()
        })
        .collect();
    Ok((abund, spectra))
}

/// Reference reflectance (0–255) of material `j` at normalized band
/// position `lam` ∈ [0, 1]; materials past the library cycle through it.
pub fn library_spectrum(j: usize, lam: f64) -> f64 {
    match j % 4 {
        // vegetation: dark in the visible, bright past a red edge
        0 => 35.0 + 150.0 / (1.0 + (-(lam - 0.6) * 18.0).exp()),
        // bare soil
        1 => 70.0 + 110.0 * lam,
        // water
        2 => 90.0 - 70.0 * lam,
        // built-up
        _ => 150.0 + 20.0 * (lam * std::f64::consts::PI).sin(),
    }
}

/// Generates a `bands`×`size`×`size` raster on a 0–255 scale.
pub fn gen_scene(spec: &SceneSpec) -> Result<Raster> {
    spec.validate()?;
    let (n, c) = (spec.size, spec.bands);
    let mut rng = SeededRng::new(spec.seed);
    let planes: Vec<Vec<f64>> = match spec.content {
        SceneContent::Gradients => (0..c)
            .map(|_| {
                let r = ramp(n, &mut rng);
                let base = rng.uniform_range(60.0, 190.0);
                r.iter().map(|v| base + 100.0 * v).collect()
            })
            .collect(),
        SceneContent::Blobs => {
            let shared: Vec<Vec<f64>> = (0..3).map(|_| blob_field(n, &mut rng, 5)).collect();
            (0..c)
                .map(|_| {
                    let w: Vec<f64> = (0..3).map(|_| rng.uniform_range(0.2, 1.0)).collect();
                    let base = rng.uniform_range(80.0, 170.0);
                    (0..n * n).map(|p| base + 60.0 * (0..3).map(|j| w[j] * shared[j][p]).sum::<f64>()).collect()
                })
                .collect()
        }
        SceneContent::Rectangles => {
            let shared = rect_field(n, &mut rng, 6);
            (0..c)
                .map(|_| {
                    let (base, amp) = (rng.uniform_range(80.0, 170.0), rng.uniform_range(20.0, 60.0));
                    shared.iter().map(|v| base + amp * v).collect()
                })
                .collect()
        }
        SceneContent::Checkerboard => {
            let (lo, hi) = CHECKER_LEVELS;
            let plane: Vec<f64> = (0..n * n)
                .map(|p| if ((p / n) / CHECKER_CELL + (p % n) / CHECKER_CELL) % 2 == 0 { lo } else { hi })
                .collect();
            vec![plane; c]
        }
        SceneContent::Mixture => {
            let (abund, spectra) = mixture_parts(spec)?;
            let mut tex_rng = rng.fork(1);
            (0..c)
                .map(|b| {
                    let mut plane: Vec<f64> = (0..n * n)
                        .map(|p| abund.iter().zip(&spectra).map(|(a, s)| a[p] * s[b]).sum())
                        .collect();
                    if spec.texture > 0.0 {
                        for (v, e) in plane.iter_mut().zip(texture(n, &mut tex_rng)) {
                            *v += spec.texture * e;
                        }
                    }
                    plane
                })
                .collect()
        }
    };
    let img = Raster::from_planes(planes, n, n)?;
    let meta = (0..c).map(|b| BandSpec::new(format!("b{b}"), 10.0)).collect();
    img.with_band_meta(meta)
}

/// Separable smoothing used to make "smooth" variants of any scene.
pub fn smooth(img: &Raster, sigma: f64) -> Result<Raster> {
    let taps = crate::degradation::gaussian_taps(sigma, 2 * img.height().min(img.width()) + 1);
    conv_separable_reflect(img, &taps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_scene() {
        for content in [
            SceneContent::Gradients,
            SceneContent::Blobs,
            SceneContent::Rectangles,
            SceneContent::Checkerboard,
            SceneContent::Mixture,
        ] {
            let s = SceneSpec::new(24, 3, content, 7);
            assert_eq!(gen_scene(&s).unwrap(), gen_scene(&s).unwrap());
        }
        let a = gen_scene(&SceneSpec::new(24, 3, SceneContent::Mixture, 1)).unwrap();
        let b = gen_scene(&SceneSpec::new(24, 3, SceneContent::Mixture, 2)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn checkerboard_has_two_levels() {
        let img = gen_scene(&SceneSpec::new(32, 2, SceneContent::Checkerboard, 0)).unwrap();
        let (lo, hi) = CHECKER_LEVELS;
        let n_lo = img.data().iter().filter(|&&v| v == lo).count();
        let n_hi = img.data().iter().filter(|&&v| v == hi).count();
        assert_eq!(n_lo + n_hi, img.data().len());
        assert_eq!(n_lo, n_hi);
    }

    #[test]
    fn abundances_are_fractions() {
        let (a, s) = mixture_parts(&SceneSpec::new(16, 5, SceneContent::Mixture, 3)).unwrap();
        assert_eq!((a.len(), s.len(), s[0].len()), (4, 4, 5));
        for p in 0..256 {
            let t: f64 = a.iter().map(|m| m[p]).sum();
            assert!((t - 1.0).abs() < 1e-12);
        }
    }
}
