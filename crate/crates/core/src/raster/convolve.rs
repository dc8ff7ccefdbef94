use super::Raster;
use crate::error::{bail, Result};

/// Square, odd-sized convolution kernel normalized to unit sum.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel2D {
    size: usize,
    weights: Vec<f64>,
}

impl Kernel2D {
    /// Row-major `size`×`size` weights; they must sum to 1 within 1e-9.
    pub fn new(size: usize, weights: Vec<f64>) -> Result<Self> {
        if size % 2 == 0 {
            bail!(Parameter, "kernel size {size} must be odd");
        }
        if weights.len() != size * size {
            bail!(Dimension, "{} weights for a {size}x{size} kernel", weights.len());
        }
        if weights.iter().any(|w| !w.is_finite()) {
            bail!(Domain, "non-finite kernel weight");
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            bail!(Parameter, "kernel weights sum to {sum}, expected 1");
        }
        Ok(Self { size, weights })
    }

    /// Divides by the sum of `weights`.
    pub fn normalized(size: usize, mut weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) {
            bail!(Degenerate, "kernel weights sum to {sum}");
        }
        weights.iter_mut().for_each(|w| *w /= sum);
        Self::new(size, weights)
    }

    pub fn identity() -> Self {
        Self { size: 1, weights: vec![1.0] }
    }

    pub fn box_filter(size: usize) -> Result<Self> {
        Self::normalized(size, vec![1.0; size * size])
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.size + col]
    }
}

/// Maps any integer index onto `0..n` by half-sample symmetric reflection
/// (`.. b a | a b c .. | c b ..`), periodic with period `2n`.
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period) as usize;
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

fn check_kernel_fits(size: usize, h: usize, w: usize) -> Result<()> {
    let limit = 2 * h.min(w) + 1;
    if size > limit {
        bail!(Dimension, "kernel size {size} exceeds limit {limit} for a {h}x{w} image");
    }
    Ok(())
}

/// Convolves every band with `k`, reflecting at the borders.
///
/// This is true convolution: `out(y,x) = Σ k(i,j) · in(y-i+c, x-j+c)`.
pub fn conv2d_reflect(img: &Raster, k: &Kernel2D) -> Result<Raster> {
    let (c, h, w) = img.shape();
    check_kernel_fits(k.size, h, w)?;
    let half = (k.size / 2) as isize;
    let mut out = vec![0.0; c * h * w];
    // Reflected index tables: rows[y][i] is the source row for output y and tap i.
    let rows: Vec<usize> = (0..h as isize)
        .flat_map(|y| (0..k.size as isize).map(move |i| reflect_index(y - i + half, h)))
        .collect();
    let cols: Vec<usize> = (0..w as isize)
        .flat_map(|x| (0..k.size as isize).map(move |j| reflect_index(x - j + half, w)))
        .collect();
    for b in 0..c {
        let src = img.band(b);
        let dst = &mut out[b * h * w..(b + 1) * h * w];
        for y in 0..h {
            let ry = &rows[y * k.size..(y + 1) * k.size];
            for x in 0..w {
                let cx = &cols[x * k.size..(x + 1) * k.size];
                let mut acc = 0.0;
                for (i, &sy) in ry.iter().enumerate() {
                    let line = &src[sy * w..(sy + 1) * w];
                    let kw = &k.weights[i * k.size..(i + 1) * k.size];
                    for (wt, &sx) in kw.iter().zip(cx) {
                        acc += wt * line[sx];
                    }
                }
                dst[y * w + x] = acc;
            }
        }
    }
    Ok(img.with_data(out))
}

/// Applies a 1-D kernel along rows and then along columns, reflecting at
/// borders. `taps` must have odd length.
pub fn conv_separable_reflect(img: &Raster, taps: &[f64]) -> Result<Raster> {
    let (c, h, w) = img.shape();
    if taps.len() % 2 == 0 {
        bail!(Parameter, "separable kernel length {} must be odd", taps.len());
    }
    check_kernel_fits(taps.len(), h, w)?;
    let mut out = img.data().to_vec();
    let mut tmp = vec![0.0; h * w];
    for b in 0..c {
        let plane = &mut out[b * h * w..(b + 1) * h * w];
        conv1d_rows(plane, h, w, taps, &mut tmp);
        conv1d_cols(&tmp, h, w, taps, plane);
    }
    Ok(img.with_data(out))
}

/// Horizontal pass: `dst(y,x) = Σ_j taps[j] · src(y, refl(x - j + c))`.
pub(crate) fn conv1d_rows(src: &[f64], h: usize, w: usize, taps: &[f64], dst: &mut [f64]) {
    let half = (taps.len() / 2) as isize;
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (j, t) in taps.iter().enumerate() {
                acc += t * line[reflect_index(x as isize - j as isize + half, w)];
            }
            dst[y * w + x] = acc;
        }
    }
}

/// Vertical pass: `dst(y,x) = Σ_i taps[i] · src(refl(y - i + c), x)`.
pub(crate) fn conv1d_cols(src: &[f64], h: usize, w: usize, taps: &[f64], dst: &mut [f64]) {
    let half = (taps.len() / 2) as isize;
    dst.iter_mut().for_each(|v| *v = 0.0);
    for y in 0..h {
        let row = &mut dst[y * w..(y + 1) * w];
        for (i, t) in taps.iter().enumerate() {
            let sy = reflect_index(y as isize - i as isize + half, h);
            let line = &src[sy * w..(sy + 1) * w];
            for (o, s) in row.iter_mut().zip(line) {
                *o += t * s;
            }
        }
    }
}
