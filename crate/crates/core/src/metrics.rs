//! Quality metrics. Where a metric is asymmetric the first argument is the
//! reference.

use std::fmt::Write as _;

use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{bail, Result};
use crate::raster::boxcar_downsample;
use crate::Raster;

fn check_pair(a: &Raster, b: &Raster, what: &str) -> Result<()> {
    a.ensure_same_shape(b, what)
}

fn mse_slices(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

pub fn mse(a: &Raster, b: &Raster) -> Result<f64> {
    check_pair(a, b, "mse")?;
    Ok(mse_slices(a.data(), b.data()))
}

/// PSNR in dB; identical inputs give `f64::INFINITY`.
pub fn psnr(a: &Raster, b: &Raster, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        bail!(Parameter, "peak must be positive");
    }
    Ok(psnr_from_mse(mse(a, b)?, peak))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn ssim_taps() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as isize;
    let mut t: Vec<f64> = (-half..=half)
        .map(|i| (-((i * i) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = t.iter().sum();
    t.iter_mut().for_each(|v| *v /= s);
    t
}

/// Valid-mode separable filtering of an `h`×`w` plane.
fn filter_valid(src: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = taps.iter().zip(&src[y * w + x..y * w + x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for (i, t) in taps.iter().enumerate() {
            for x in 0..ow {
                out[y * ow + x] += t * tmp[(y + i) * ow + x];
            }
        }
    }
    out
}

/// Mean SSIM of one band pair over all fully-contained 11×11 windows.
pub fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, peak: f64) -> Result<f64> {
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        bail!(Dimension, "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}");
    }
    let taps = ssim_taps();
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
        a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
    };
    let mu_a = filter_valid(a, h, w, &taps);
    let mu_b = filter_valid(b, h, w, &taps);
    let aa = filter_valid(&prod(&|x, _| x * x), h, w, &taps);
    let bb = filter_valid(&prod(&|_, y| y * y), h, w, &taps);
    let ab = filter_valid(&prod(&|x, y| x * y), h, w, &taps);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / n as f64)
}

/// Unweighted mean of per-band SSIM.
pub fn ssim(a: &Raster, b: &Raster, peak: f64) -> Result<f64> {
    check_pair(a, b, "ssim")?;
    Ok(ssim_per_band(a, b, peak)?.iter().sum::<f64>() / a.bands() as f64)
}

pub fn ssim_per_band(a: &Raster, b: &Raster, peak: f64) -> Result<Vec<f64>> {
    check_pair(a, b, "ssim")?;
    (0..a.bands())
        .map(|i| ssim_plane(a.band(i), b.band(i), a.height(), a.width(), peak))
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `1 − Σ(a−b)²/Σ(a−ā)²` with `a` the reference.
pub fn r2_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    let ma = mean(a);
    let ss_tot: f64 = a.iter().map(|v| (v - ma) * (v - ma)).sum();
    if ss_tot == 0.0 {
        bail!(Degenerate, "R² reference has zero variance");
    }
    let ss_res: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Pearson correlation.
pub fn ncc_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        bail!(Degenerate, "correlation of a constant signal");
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

pub fn r2(a: &Raster, b: &Raster) -> Result<f64> {
    check_pair(a, b, "r2")?;
    r2_slices(a.data(), b.data())
}

pub fn ncc(a: &Raster, b: &Raster) -> Result<f64> {
    check_pair(a, b, "ncc")?;
    ncc_slices(a.data(), b.data())
}

/// `100/ratio · sqrt(mean_b (RMSE_b / μ_b)²)`, μ_b the reference band mean.
pub fn ergas(reference: &Raster, pred: &Raster, ratio: f64) -> Result<f64> {
    check_pair(reference, pred, "ergas")?;
    if !(ratio > 0.0) {
        bail!(Parameter, "ERGAS ratio must be positive");
    }
    let mut acc = 0.0;
    for b in 0..reference.bands() {
        let mu = mean(reference.band(b));
        if mu == 0.0 {
            bail!(Degenerate, "band {b} has zero mean");
        }
        acc += mse_slices(reference.band(b), pred.band(b)) / (mu * mu);
    }
    Ok(100.0 / ratio * (acc / reference.bands() as f64).sqrt())
}

/// Mean per-pixel spectral angle in degrees. Pixels where either spectrum is
/// all zero are skipped with a warning.
pub fn sad(a: &Raster, b: &Raster) -> Result<f64> {
    check_pair(a, b, "sad")?;
    let n = a.plane_len();
    let mut total = 0.0;
    let mut used = 0usize;
    for p in 0..n {
        let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
        for c in 0..a.bands() {
            let (x, y) = (a.band(c)[p], b.band(c)[p]);
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
        if na == 0.0 || nb == 0.0 {
            continue;
        }
        total += (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0).acos().to_degrees();
        used += 1;
    }
    if used == 0 {
        bail!(Degenerate, "every pixel has a zero spectrum");
    }
    if used < n {
        log::warn!("sad: skipped {} zero-spectrum pixels", n - used);
    }
    Ok(total / used as f64)
}

/// Mean absolute difference between the boxcar-downsampled `sr` and `lr`.
pub fn reflectance_consistency(sr: &Raster, lr: &Raster, ratio: usize) -> Result<f64> {
    let (c, h, w) = sr.shape();
    if (c, h, w) != (lr.bands(), lr.height() * ratio, lr.width() * ratio) {
        bail!(
            Dimension,
            "sr {:?} is not {ratio}x the size of lr {:?}",
            sr.shape(),
            lr.shape()
        );
    }
    let down = boxcar_downsample(sr, ratio)?;
    Ok(down.data().iter().zip(lr.data()).map(|(x, y)| (x - y).abs()).sum::<f64>()
        / lr.data().len() as f64)
}

fn fft2(plane: &mut [Complex<f64>], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    for r in plane.chunks_exact_mut(w) {
        row.process(r);
    }
    let mut column = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = plane[y * w + x];
        }
        col.process(&mut column);
        for y in 0..h {
            plane[y * w + x] = column[y];
        }
    }
}

/// Integer shift `(dy, dx)` such that `b(y, x) ≈ a(y − dy, x − dx)` (circular),
/// from the peak of the normalized cross-power spectrum. Uses band 0.
pub fn phase_correlation_shift(a: &Raster, b: &Raster) -> Result<(isize, isize)> {
    check_pair(a, b, "phase correlation")?;
    let (h, w) = (a.height(), a.width());
    let (pa, pb) = (a.band(0), b.band(0));
    for (name, p) in [("first", pa), ("second", pb)] {
        let m = mean(p);
        if p.iter().all(|v| *v == m) {
            bail!(Degenerate, "{name} image is constant");
        }
    }
    let to_c = |p: &[f64]| -> Vec<Complex<f64>> { p.iter().map(|&v| Complex::new(v, 0.0)).collect() };
    let mut fa = to_c(pa);
    let mut fb = to_c(pb);
    fft2(&mut fa, h, w, false);
    fft2(&mut fb, h, w, false);
    let mut cross: Vec<Complex<f64>> = fa
        .iter()
        .zip(&fb)
        .map(|(x, y)| {
            let c = x.conj() * y;
            let n = c.norm();
            if n > 1e-12 {
                c / n
            } else {
                Complex::new(0.0, 0.0)
            }
        })
        .collect();
    fft2(&mut cross, h, w, true);
    let (mut best, mut arg) = (f64::NEG_INFINITY, 0);
    for (i, c) in cross.iter().enumerate() {
        if c.re > best {
            best = c.re;
            arg = i;
        }
    }
    let wrap = |v: usize, n: usize| if v > n / 2 { v as isize - n as isize } else { v as isize };
    Ok((wrap(arg / w, h), wrap(arg % w, w)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandMetrics {
    pub name: String,
    pub mse: f64,
    pub psnr: f64,
    pub ssim: Option<f64>,
    pub r2: Option<f64>,
    pub ncc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub ergas: f64,
    pub sad_mean: f64,
    pub reflectance_l1: Option<f64>,
    pub spatial_shift: Option<(isize, isize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub per_band: Vec<BandMetrics>,
    pub aggregate: Aggregate,
}

impl MetricsReport {
    /// Full-reference comparison of `pred` against `reference`. `lr`, when
    /// given, is the low-resolution input used for reflectance consistency.
    /// Metrics that are undefined for the data (tiny tiles for SSIM,
    /// constant bands for R²/NCC) are left empty.
    pub fn compute(
        reference: &Raster,
        pred: &Raster,
        ratio: usize,
        peak: f64,
        lr: Option<&Raster>,
    ) -> Result<Self> {
        check_pair(reference, pred, "report")?;
        let (h, w) = (reference.height(), reference.width());
        let mut per_band = Vec::with_capacity(reference.bands());
        for b in 0..reference.bands() {
            let (ra, pa) = (reference.band(b), pred.band(b));
            let m = mse_slices(ra, pa);
            per_band.push(BandMetrics {
                name: reference.band_meta()[b].name.clone(),
                mse: m,
                psnr: psnr_from_mse(m, peak),
                ssim: ssim_plane(ra, pa, h, w, peak).ok(),
                r2: r2_slices(ra, pa).ok(),
                ncc: ncc_slices(ra, pa).ok(),
            });
        }
        let reflectance_l1 = match lr {
            Some(lr) => Some(reflectance_consistency(pred, lr, ratio)?),
            None => None,
        };
        let aggregate = Aggregate {
            ergas: ergas(reference, pred, ratio as f64)?,
            sad_mean: sad(reference, pred)?,
            reflectance_l1,
            spatial_shift: phase_correlation_shift(reference, pred).ok(),
        };
        Ok(Self { per_band, aggregate })
    }

    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<f64>| v.map_or("nan".to_string(), |x| format!("{x}"));
        for b in &self.per_band {
            let _ = writeln!(s, "band.{}.mse={}", b.name, b.mse);
            let _ = writeln!(s, "band.{}.psnr={}", b.name, b.psnr);
            let _ = writeln!(s, "band.{}.ssim={}", b.name, opt(b.ssim));
            let _ = writeln!(s, "band.{}.r2={}", b.name, opt(b.r2));
            let _ = writeln!(s, "band.{}.ncc={}", b.name, opt(b.ncc));
        }
        let a = &self.aggregate;
        let _ = writeln!(s, "ergas={}", a.ergas);
        let _ = writeln!(s, "sad={}", a.sad_mean);
        let _ = writeln!(s, "reflectance_l1={}", opt(a.reflectance_l1));
        match a.spatial_shift {
            Some((dy, dx)) => {
                let _ = writeln!(s, "shift={dy},{dx}");
            }
            None => {
                let _ = writeln!(s, "shift=nan");
            }
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        let _ = writeln!(s, "{:<10} {:>12} {:>9} {:>8} {:>8} {:>8}", "band", "mse", "psnr", "ssim", "r2", "ncc");
        for b in &self.per_band {
            let _ = writeln!(
                s,
                "{:<10} {:>12.5} {:>9.3} {:>8} {:>8} {:>8}",
                b.name,
                b.mse,
                b.psnr,
                opt(b.ssim),
                opt(b.r2),
                opt(b.ncc)
            );
        }
        let a = &self.aggregate;
        let _ = writeln!(s, "ERGAS {:.4}  SAD {:.4} deg", a.ergas, a.sad_mean);
        if let Some(r) = a.reflectance_l1 {
            let _ = writeln!(s, "reflectance L1 {r:.5}");
        }
        if let Some((dy, dx)) = a.spatial_shift {
            let _ = writeln!(s, "spatial shift ({dy}, {dx})");
        }
        s
    }
}

/// Average rank per method across metrics, ties sharing the mean of their
/// ranks. `scores[m][k]` is method `m` on metric `k`; `higher_better[k]`
/// gives each metric's direction. Rank 1 is best.
pub fn average_rank(scores: &[Vec<f64>], higher_better: &[bool]) -> Result<Vec<f64>> {
    let n = scores.len();
    if scores.iter().any(|s| s.len() != higher_better.len()) {
        bail!(Dimension, "every method needs one score per metric");
    }
    let mut total = vec![0.0; n];
    for (k, &hb) in higher_better.iter().enumerate() {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| {
            let (a, b) = (scores[i][k], scores[j][k]);
            if hb { b.total_cmp(&a) } else { a.total_cmp(&b) }
        });
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && scores[order[j + 1]][k] == scores[order[i]][k] {
                j += 1;
            }
            let r = (i + j) as f64 / 2.0 + 1.0;
            for &m in &order[i..=j] {
                total[m] += r;
            }
            i = j + 1;
        }
    }
    Ok(total.into_iter().map(|t| t / higher_better.len().max(1) as f64).collect())
}
