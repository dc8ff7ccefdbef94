//! Classical pansharpening baselines: Gram-Schmidt, generalized IHS, PCA and
//! MTF-GLP with regression-based injection.
//!
//! All methods upsample the multispectral bands with the same bicubic
//! interpolator as the fusion network and use population (1/N) statistics.

use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{bail, Error, Result};
use crate::fusion::{glp_detail, mtf_sigma, upsample};
use crate::Raster;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Gs,
    Ihs,
    Pca,
    Glp,
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "gs" => Method::Gs,
            "ihs" => Method::Ihs,
            "pca" => Method::Pca,
            "glp" => Method::Glp,
            _ => bail!(Parameter, "unknown method `{s}` (expected gs, ihs, pca or glp)"),
        })
    }
}

/// Per-band detail injection coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionGains(pub Vec<f64>);

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population covariance.
pub fn covariance(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / a.len() as f64
}

/// `cov(x, ref) / var(ref)`, or zero (with a warning) when `ref` is flat.
fn regression_gain(x: &[f64], reference: &[f64], what: &str) -> f64 {
    let var = covariance(reference, reference);
    let m = mean(reference);
    // Rounding noise on a flat signal is not variance.
    if var <= 1e-20 * (m * m).max(1.0) {
        log::warn!("{what}: zero-variance reference, injection gain set to 0");
        return 0.0;
    }
    covariance(x, reference) / var
}

/// Affine map of `src` onto the mean and standard deviation of `target`.
/// A flat `src` maps to the target mean.
pub fn match_mean_std(src: &[f64], target: &[f64]) -> Vec<f64> {
    let (ms, mt) = (mean(src), mean(target));
    let ss = covariance(src, src).sqrt();
    let st = covariance(target, target).sqrt();
    if ss == 0.0 {
        return vec![mt; src.len()];
    }
    let k = st / ss;
    src.iter().map(|v| (v - ms) * k + mt).collect()
}

fn prepare(ms_lr: &Raster, pan: &Raster, ratio: usize) -> Result<Raster> {
    if pan.bands() != 1 {
        bail!(Dimension, "pan must be a single band, got {}", pan.bands());
    }
    if pan.height() != ms_lr.height() * ratio || pan.width() != ms_lr.width() * ratio {
        bail!(
            Dimension,
            "pan {}x{} is not {ratio}x the multispectral grid {}x{}",
            pan.height(),
            pan.width(),
            ms_lr.height(),
            ms_lr.width()
        );
    }
    upsample(ms_lr, ratio)
}

fn intensity(xt: &Raster) -> Vec<f64> {
    xt.band_mean().into_data()
}

/// Component-substitution Gram-Schmidt with band-mean intensity.
pub fn gs_pansharpen(ms_lr: &Raster, pan: &Raster, ratio: usize) -> Result<Raster> {
    let mut xt = prepare(ms_lr, pan, ratio)?;
    let i = intensity(&xt);
    let pan_hm = match_mean_std(pan.data(), &i);
    for b in 0..xt.bands() {
        let g = regression_gain(xt.band(b), &i, "gs");
        for (v, (p, iv)) in xt.band_mut(b).iter_mut().zip(pan_hm.iter().zip(&i)) {
            *v += g * (p - iv);
        }
    }
    Ok(xt)
}

/// Generalized IHS: the same detail `pan_hm − I` is added to every band.
pub fn ihs_pansharpen(ms_lr: &Raster, pan: &Raster, ratio: usize) -> Result<Raster> {
    let mut xt = prepare(ms_lr, pan, ratio)?;
    let i = intensity(&xt);
    let pan_hm = match_mean_std(pan.data(), &i);
    for b in 0..xt.bands() {
        for (v, (p, iv)) in xt.band_mut(b).iter_mut().zip(pan_hm.iter().zip(&i)) {
            *v += p - iv;
        }
    }
    Ok(xt)
}

/// Principal components of the band vectors, sorted by decreasing variance.
/// Each eigenvector is signed so that its components sum to a non-negative
/// value.
pub fn principal_components(xt: &Raster) -> Result<(Vec<f64>, Vec<f64>, DMatrix<f64>)> {
    let c = xt.bands();
    let means: Vec<f64> = (0..c).map(|b| mean(xt.band(b))).collect();
    let cov = DMatrix::from_fn(c, c, |i, j| covariance(xt.band(i), xt.band(j)));
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let top = values[0];
    if !(top > 0.0) || values[c - 1] <= 1e-12 * top {
        bail!(Degenerate, "band covariance is rank deficient (eigenvalues {values:?})");
    }
    let mut vecs = DMatrix::zeros(c, c);
    for (col, &k) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(k).clone_owned();
        if v.sum() < 0.0 {
            v = -v;
        }
        vecs.set_column(col, &v);
    }
    Ok((means, values, vecs))
}

/// PCA substitution: PC1 is replaced by the pan matched to PC1's mean/std.
pub fn pca_pansharpen(ms_lr: &Raster, pan: &Raster, ratio: usize) -> Result<Raster> {
    if ms_lr.bands() < 2 {
        bail!(Parameter, "PCA pansharpening needs at least two bands");
    }
    let mut xt = prepare(ms_lr, pan, ratio)?;
    let (means, _, vecs) = principal_components(&xt)?;
    let (c, n) = (xt.bands(), xt.plane_len());
    let pc1: Vec<f64> = (0..n)
        .map(|p| (0..c).map(|b| (xt.band(b)[p] - means[b]) * vecs[(b, 0)]).sum())
        .collect();
    let sub = match_mean_std(pan.data(), &pc1);
    for b in 0..c {
        let v1 = vecs[(b, 0)];
        for (p, x) in xt.band_mut(b).iter_mut().enumerate() {
            // Orthonormal basis: replacing the first score only moves the
            // reconstruction along v1.
            *x += (sub[p] - pc1[p]) * v1;
        }
    }
    Ok(xt)
}

/// How MTF-GLP weights the injected details.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Injection {
    /// `g_b = cov(x̃_b, p̃_b) / var(p̃_b)`.
    Regression,
    /// `g_b = 1`.
    Unit,
}

/// MTF-GLP with per-band blur σ given directly.
pub fn mtf_glp_with_sigmas(
    ms_lr: &Raster,
    pan: &Raster,
    ratio: usize,
    sigmas: &[f64],
    injection: Injection,
) -> Result<(Raster, InjectionGains)> {
    let mut xt = prepare(ms_lr, pan, ratio)?;
    if sigmas.len() != xt.bands() {
        bail!(Dimension, "{} blur σ for {} bands", sigmas.len(), xt.bands());
    }
    let mut gains = Vec::with_capacity(sigmas.len());
    for (b, &s) in sigmas.iter().enumerate() {
        let (low, delta) = glp_detail(pan, s, ratio)?;
        let g = match injection {
            Injection::Unit => 1.0,
            Injection::Regression => regression_gain(xt.band(b), low.data(), "mtf-glp"),
        };
        for (v, d) in xt.band_mut(b).iter_mut().zip(delta.data()) {
            *v += g * d;
        }
        gains.push(g);
    }
    Ok((xt, InjectionGains(gains)))
}

/// MTF-GLP with regression injection; σ_b from each band's GNyq.
pub fn mtf_glp_pansharpen(ms_lr: &Raster, pan: &Raster, ratio: usize, gnyq: &[f64]) -> Result<(Raster, InjectionGains)> {
    let sigmas: Vec<f64> = gnyq.iter().map(|&q| mtf_sigma(q, ratio)).collect::<Result<_>>()?;
    mtf_glp_with_sigmas(ms_lr, pan, ratio, &sigmas, Injection::Regression)
}

/// Dispatches on `method`; GLP takes GNyq from the band metadata.
pub fn pansharpen(method: Method, ms_lr: &Raster, pan: &Raster, ratio: usize) -> Result<Raster> {
    match method {
        Method::Gs => gs_pansharpen(ms_lr, pan, ratio),
        Method::Ihs => ihs_pansharpen(ms_lr, pan, ratio),
        Method::Pca => pca_pansharpen(ms_lr, pan, ratio),
        Method::Glp => {
            let gnyq: Vec<f64> = ms_lr.band_meta().iter().map(|b| b.gnyq).collect();
            Ok(mtf_glp_pansharpen(ms_lr, pan, ratio, &gnyq)?.0)
        }
    }
}
