//! Simulated Sentinel-2 style observations: harmonization, blind Gaussian
//! blur, downsampling and additive noise, plus Wald-protocol pairs.

use std::f64::consts::PI;
use std::path::Path;

use crate::error::{bail, Error, Result};
use crate::raster::{boxcar_downsample, conv2d_reflect, conv_separable_reflect, resample_bicubic};
use crate::{Kernel2D, Raster, SeededRng};

pub const DEFAULT_KERNEL_SIZE: usize = 21;
pub const TRAIN_LAMBDA_RANGE: (f64, f64) = (0.2, 4.0);
pub const VALIDATION_SIGMA_RANGE: (f64, f64) = (2.0, 4.0);
pub const NOISE_SIGMA_RANGE: (f64, f64) = (0.0, 25.0);
/// Dynamic range on which gammas and noise levels are expressed.
pub const DEFAULT_DYNAMIC_RANGE: f64 = 255.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BlurShape {
    Isotropic { sigma: f64 },
    /// Covariance `R(θ)·diag(λ1, λ2)·R(θ)ᵀ`; the λ are variances.
    Anisotropic { lambda1: f64, lambda2: f64, theta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlurSpec {
    pub shape: BlurShape,
    pub size: usize,
}

impl BlurSpec {
    pub fn isotropic(sigma: f64) -> Self {
        Self { shape: BlurShape::Isotropic { sigma }, size: DEFAULT_KERNEL_SIZE }
    }

    pub fn anisotropic(lambda1: f64, lambda2: f64, theta: f64) -> Self {
        Self {
            shape: BlurShape::Anisotropic { lambda1, lambda2, theta },
            size: DEFAULT_KERNEL_SIZE,
        }
    }

    pub fn with_size(mut self, size: usize) -> Self {
        self.size = size;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.size % 2 == 0 || self.size == 0 {
            bail!(Parameter, "blur kernel size {} must be odd", self.size);
        }
        match self.shape {
            BlurShape::Isotropic { sigma } if !(sigma > 0.0) => {
                bail!(Parameter, "blur sigma must be positive, got {sigma}")
            }
            BlurShape::Anisotropic { lambda1, lambda2, .. } if !(lambda1 > 0.0 && lambda2 > 0.0) => {
                bail!(Parameter, "blur eigenvalues must be positive")
            }
            _ => Ok(()),
        }
    }
}

/// Which blur distribution to draw from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BlurMode {
    /// Anisotropic, λ1, λ2 ∈ [0.2, 4], θ ∈ [0, π].
    Train,
    /// Isotropic, σ ∈ [2, 4].
    Validation,
    /// Always isotropic with the given σ.
    Fixed(f64),
}

impl std::str::FromStr for BlurMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "val" | "validation" => Ok(Self::Validation),
            _ => {
                let sigma = s
                    .strip_prefix("fixed:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| Error::Parameter(format!("unknown blur mode `{s}`")))?;
                if !(sigma > 0.0) {
                    bail!(Parameter, "fixed blur sigma must be positive");
                }
                Ok(Self::Fixed(sigma))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegradationSpec {
    pub blur: Option<BlurSpec>,
    pub scale: usize,
    /// Noise standard deviation on the 0–255 scale.
    pub noise_sigma: f64,
    /// Per-band harmonization gammas; `None` disables the stage.
    pub gammas: Option<Vec<f64>>,
    pub k: f64,
}

impl Default for DegradationSpec {
    fn default() -> Self {
        Self { blur: None, scale: 1, noise_sigma: 0.0, gammas: None, k: DEFAULT_DYNAMIC_RANGE }
    }
}

impl DegradationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.scale == 0 {
            bail!(Parameter, "scale must be at least 1");
        }
        if !(self.noise_sigma >= 0.0) {
            bail!(Parameter, "noise sigma must be non-negative");
        }
        if let Some(g) = &self.gammas {
            if g.iter().any(|&v| !(v > 0.0)) {
                bail!(Parameter, "gammas must be positive");
            }
        }
        if let Some(b) = &self.blur {
            b.validate()?;
        }
        Ok(())
    }
}

/// Per-band power law `out = (in/k)^(1/γ_b) · k`.
pub fn harmonize(img: &Raster, gammas: &[f64], k: f64) -> Result<Raster> {
    if gammas.len() != img.bands() {
        bail!(Dimension, "{} gammas for {} bands", gammas.len(), img.bands());
    }
    if let Some(g) = gammas.iter().find(|&&g| !(g > 0.0)) {
        bail!(Parameter, "gamma {g} must be positive");
    }
    if !(k > 0.0) {
        bail!(Parameter, "dynamic range k must be positive");
    }
    if let Some(v) = img.data().iter().find(|&&v| !(0.0..=k).contains(&v)) {
        bail!(Domain, "value {v} outside [0, {k}]");
    }
    let mut out = img.clone();
    for (b, &g) in gammas.iter().enumerate() {
        let e = 1.0 / g;
        for v in out.band_mut(b) {
            *v = (*v / k).powf(e) * k;
        }
    }
    Ok(out)
}

/// Samples the (rotated) Gaussian density on integer offsets and normalizes.
pub fn gaussian_kernel(spec: &BlurSpec) -> Result<Kernel2D> {
    spec.validate()?;
    // Inverse covariance entries.
    let (a, b, c) = match spec.shape {
        BlurShape::Isotropic { sigma } => {
            let s2 = sigma * sigma;
            (1.0 / s2, 0.0, 1.0 / s2)
        }
        BlurShape::Anisotropic { lambda1, lambda2, theta } => {
            let (s, co) = theta.sin_cos();
            let (i1, i2) = (1.0 / lambda1, 1.0 / lambda2);
            (co * co * i1 + s * s * i2, co * s * (i1 - i2), s * s * i1 + co * co * i2)
        }
    };
    let half = (spec.size / 2) as isize;
    let mut w = Vec::with_capacity(spec.size * spec.size);
    for dy in -half..=half {
        for dx in -half..=half {
            let (x, y) = (dx as f64, dy as f64);
            w.push((-0.5 * (a * x * x + 2.0 * b * x * y + c * y * y)).exp());
        }
    }
    Kernel2D::normalized(spec.size, w)
}

/// Normalized 1-D Gaussian taps with `2·ceil(3σ)+1` support, clamped to
/// `max_len` (odd).
pub fn gaussian_taps(sigma: f64, max_len: usize) -> Vec<f64> {
    let mut half = (3.0 * sigma).ceil() as usize;
    half = half.min(max_len.saturating_sub(1) / 2);
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let mut t: Vec<f64> = (-(half as isize)..=half as isize)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = t.iter().sum();
    t.iter_mut().for_each(|v| *v /= s);
    t
}

pub fn sample_blur(rng: &mut SeededRng, mode: BlurMode) -> BlurSpec {
    match mode {
        BlurMode::Train => {
            let (lo, hi) = TRAIN_LAMBDA_RANGE;
            let lambda1 = rng.uniform_range(lo, hi);
            let lambda2 = rng.uniform_range(lo, hi);
            let theta = rng.uniform_range(0.0, PI);
            BlurSpec::anisotropic(lambda1, lambda2, theta)
        }
        BlurMode::Validation => {
            let (lo, hi) = VALIDATION_SIGMA_RANGE;
            BlurSpec::isotropic(rng.uniform_range(lo, hi))
        }
        BlurMode::Fixed(sigma) => BlurSpec::isotropic(sigma),
    }
}

/// Harmonize (optional) → blur (optional) → bicubic downsample → additive
/// Gaussian noise. Noise is drawn band-major, pixel by pixel, and rescaled
/// from the 0–255 scale to each band's value range.
pub fn degrade(img: &Raster, spec: &DegradationSpec, rng: &mut SeededRng) -> Result<Raster> {
    spec.validate()?;
    let (_, h, w) = img.shape();
    if h % spec.scale != 0 || w % spec.scale != 0 {
        bail!(Dimension, "{h}x{w} is not divisible by scale {}", spec.scale);
    }
    let mut cur = match &spec.gammas {
        Some(g) => harmonize(img, g, spec.k)?,
        None => img.clone(),
    };
    if let Some(blur) = &spec.blur {
        cur = conv2d_reflect(&cur, &gaussian_kernel(blur)?)?;
    }
    if spec.scale > 1 {
        cur = resample_bicubic(&cur, 1.0 / spec.scale as f64)?;
    }
    if spec.noise_sigma > 0.0 {
        for b in 0..cur.bands() {
            let std = spec.noise_sigma * cur.band_meta()[b].dynamic_range() / DEFAULT_DYNAMIC_RANGE;
            for v in cur.band_mut(b) {
                *v += std * rng.normal();
            }
        }
    }
    Ok(cur)
}

/// Reduced-resolution training pair; `target` borrows the source raster.
#[derive(Debug)]
pub struct WaldPair<'a> {
    pub input: Raster,
    pub target: &'a Raster,
}

/// Optional per-band Gaussian blur then boxcar downsampling by `ratio`.
pub fn wald_pair<'a>(ms: &'a Raster, ratio: usize, blur: Option<&[f64]>) -> Result<WaldPair<'a>> {
    if ratio == 0 {
        bail!(Parameter, "ratio must be positive");
    }
    let (c, h, w) = ms.shape();
    if h % ratio != 0 || w % ratio != 0 {
        bail!(Dimension, "{h}x{w} is not divisible by ratio {ratio}");
    }
    let blurred = match blur {
        None => None,
        Some(sigmas) => {
            if sigmas.len() != c {
                bail!(Dimension, "{} blur sigmas for {c} bands", sigmas.len());
            }
            let max_len = 2 * h.min(w) + 1;
            let mut out = ms.clone();
            for (b, &s) in sigmas.iter().enumerate() {
                if s > 0.0 {
                    let band = ms.select_bands(&[b])?;
                    let f = conv_separable_reflect(&band, &gaussian_taps(s, max_len))?;
                    out.band_mut(b).copy_from_slice(f.data());
                }
            }
            Some(out)
        }
    };
    let input = boxcar_downsample(blurred.as_ref().unwrap_or(ms), ratio)?;
    Ok(WaldPair { input, target: ms })
}

/// Reads one gamma per line; blank lines and `#` comments are skipped.
pub fn parse_gammas(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let g: f64 = line
            .parse()
            .map_err(|_| Error::Format(format!("gamma file line {}: `{line}`", n + 1)))?;
        if !(g > 0.0) {
            bail!(Parameter, "gamma file line {}: {g} must be positive", n + 1);
        }
        out.push(g);
    }
    if out.is_empty() {
        bail!(Format, "gamma file holds no values");
    }
    Ok(out)
}

pub fn read_gammas(path: &Path) -> Result<Vec<f64>> {
    parse_gammas(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(c: usize, h: usize, w: usize) -> Raster {
        Raster::from_vec(c, h, w, (0..c * h * w).map(|i| (i % 251) as f64).collect()).unwrap()
    }

    #[test]
    fn harmonize_examples() {
        let img = Raster::from_vec(1, 1, 3, vec![0.0, 63.75, 255.0]).unwrap();
        let out = harmonize(&img, &[2.0], 255.0).unwrap();
        assert_eq!(out.data()[0], 0.0);
        assert!((out.data()[1] - 127.5).abs() < 1e-12);
        assert!((out.data()[2] - 255.0).abs() < 1e-12);
        assert_eq!(harmonize(&img, &[1.0], 255.0).unwrap(), img);
    }

    #[test]
    fn harmonize_errors() {
        let img = Raster::from_vec(1, 1, 2, vec![0.0, 300.0]).unwrap();
        assert!(matches!(harmonize(&img, &[1.0], 255.0), Err(Error::Domain(_))));
        let ok = Raster::from_vec(1, 1, 1, vec![1.0]).unwrap();
        assert!(matches!(harmonize(&ok, &[0.0], 255.0), Err(Error::Parameter(_))));
        assert!(matches!(harmonize(&ok, &[1.0, 1.0], 255.0), Err(Error::Dimension(_))));
    }

    #[test]
    fn kernel_properties() {
        for spec in [
            BlurSpec::isotropic(2.5),
            BlurSpec::anisotropic(0.3, 3.7, 0.0),
            BlurSpec::anisotropic(0.3, 3.7, PI / 2.0),
            BlurSpec::anisotropic(1.2, 0.4, 1.1),
        ] {
            let k = gaussian_kernel(&spec).unwrap();
            let w = k.weights();
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(w.iter().all(|&v| v >= 0.0));
            let n = w.len();
            let center = w[n / 2];
            assert!(w.iter().all(|&v| v <= center));
            for i in 0..n {
                assert!((w[i] - w[n - 1 - i]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn isotropic_anisotropic_agree() {
        let iso = gaussian_kernel(&BlurSpec::isotropic(1.7)).unwrap();
        let ani = gaussian_kernel(&BlurSpec::anisotropic(1.7 * 1.7, 1.7 * 1.7, 0.83)).unwrap();
        for (a, b) in iso.weights().iter().zip(ani.weights()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn center_weight_matches_density_oracle() {
        let k = gaussian_kernel(&BlurSpec::isotropic(2.0)).unwrap();
        // Bivariate normal density on the 21x21 grid, normalized over the grid.
        let pdf = |x: f64, y: f64| (-(x * x + y * y) / 8.0).exp() / (2.0 * PI * 4.0);
        let mut z = 0.0;
        for i in -10..=10 {
            for j in -10..=10 {
                z += pdf(i as f64, j as f64);
            }
        }
        assert!((k.at(10, 10) - pdf(0.0, 0.0) / z).abs() < 1e-12);
    }

    #[test]
    fn blur_modes() {
        let mut rng = SeededRng::new(3);
        assert_eq!(sample_blur(&mut rng, BlurMode::Fixed(3.0)), BlurSpec::isotropic(3.0));
        let a = sample_blur(&mut SeededRng::new(11), BlurMode::Train);
        let b = sample_blur(&mut SeededRng::new(11), BlurMode::Train);
        assert_eq!(a, b);
        for _ in 0..10_000 {
            match sample_blur(&mut rng, BlurMode::Train).shape {
                BlurShape::Anisotropic { lambda1, lambda2, theta } => {
                    assert!((0.2..=4.0).contains(&lambda1) && (0.2..=4.0).contains(&lambda2));
                    assert!((0.0..=PI).contains(&theta));
                }
                other => panic!("unexpected {other:?}"),
            }
            match sample_blur(&mut rng, BlurMode::Validation).shape {
                BlurShape::Isotropic { sigma } => assert!((2.0..=4.0).contains(&sigma)),
                other => panic!("unexpected {other:?}"),
            }
        }
        assert_eq!("fixed:3".parse::<BlurMode>().unwrap(), BlurMode::Fixed(3.0));
        assert_eq!("val".parse::<BlurMode>().unwrap(), BlurMode::Validation);
        assert!("fixed:x".parse::<BlurMode>().is_err());
    }

    #[test]
    fn degrade_identity_and_constants() {
        let img = ramp(2, 8, 8);
        let out = degrade(&img, &DegradationSpec::default(), &mut SeededRng::new(0)).unwrap();
        assert_eq!(out, img);

        let flat = Raster::filled(1, 32, 32, 100.0);
        let spec = DegradationSpec {
            blur: Some(BlurSpec::isotropic(3.0)),
            scale: 4,
            ..Default::default()
        };
        let out = degrade(&flat, &spec, &mut SeededRng::new(0)).unwrap();
        assert_eq!(out.shape(), (1, 8, 8));
        assert!(out.data().iter().all(|v| (v - 100.0).abs() < 1e-9));
        assert_eq!(out.band_meta()[0].gsd, 40.0);
    }

    #[test]
    fn degrade_noise_level_and_determinism() {
        let flat = Raster::filled(1, 100, 100, 128.0);
        let spec = DegradationSpec { noise_sigma: 25.0, ..Default::default() };
        let a = degrade(&flat, &spec, &mut SeededRng::new(5)).unwrap();
        let b = degrade(&flat, &spec, &mut SeededRng::new(5)).unwrap();
        assert_eq!(a, b);
        let d: Vec<f64> = a.data().iter().map(|v| v - 128.0).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let std = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d.len() as f64).sqrt();
        assert!((std - 25.0).abs() < 0.03 * 25.0, "std {std}");
    }

    #[test]
    fn degrade_rejects_indivisible() {
        let spec = DegradationSpec { scale: 3, ..Default::default() };
        assert!(degrade(&ramp(1, 8, 8), &spec, &mut SeededRng::new(0)).is_err());
    }

    #[test]
    fn wald_pairs() {
        let img = Raster::from_vec(1, 2, 2, vec![1., 2., 3., 4.]).unwrap();
        let pair = wald_pair(&img, 2, None).unwrap();
        assert_eq!(pair.input.data(), &[2.5]);
        assert!(std::ptr::eq(pair.target, &img));

        let ms = ramp(1, 8, 8);
        let pair = wald_pair(&ms, 4, Some(&[1.0])).unwrap();
        assert_eq!(pair.input.band_meta()[0].gsd, 40.0);
        assert_eq!(pair.target.band_meta()[0].gsd, 10.0);
        let flat = Raster::filled(2, 24, 24, 7.0);
        let p = wald_pair(&flat, 24, Some(&[2.0, 0.0])).unwrap();
        assert!(p.input.data().iter().all(|v| (v - 7.0).abs() < 1e-12));
        assert!(wald_pair(&ms, 3, None).is_err());
    }

    #[test]
    fn gamma_file() {
        assert_eq!(parse_gammas("1.2\n# c\n\n0.9 # x\n").unwrap(), vec![1.2, 0.9]);
        assert!(parse_gammas("0\n").is_err());
        assert!(parse_gammas("abc").is_err());
    }
}
