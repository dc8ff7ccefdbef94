use super::convolve::reflect_index;
use super::Raster;
use crate::error::{bail, Result};

/// Mean over non-overlapping `stride`×`stride` blocks.
pub fn boxcar_downsample(img: &Raster, stride: usize) -> Result<Raster> {
    let (c, h, w) = img.shape();
    if stride == 0 || h % stride != 0 || w % stride != 0 {
        bail!(Dimension, "{h}x{w} is not divisible by stride {stride}");
    }
    let (oh, ow) = (h / stride, w / stride);
    let norm = (stride * stride) as f64;
    let mut out = vec![0.0; c * oh * ow];
    for b in 0..c {
        let src = img.band(b);
        let dst = &mut out[b * oh * ow..(b + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for y in oy * stride..(oy + 1) * stride {
                    acc += src[y * w + ox * stride..y * w + (ox + 1) * stride].iter().sum::<f64>();
                }
                dst[oy * ow + ox] = acc / norm;
            }
        }
    }
    let mut r = Raster::from_parts(c, oh, ow, out, img.band_meta().to_vec());
    r.scale_gsd(stride as f64);
    Ok(r)
}

/// Replicates every pixel into an `r`×`r` block.
pub fn upsample_nearest(img: &Raster, r: usize) -> Result<Raster> {
    if r == 0 {
        bail!(Parameter, "replication factor must be positive");
    }
    let (c, h, w) = img.shape();
    let (oh, ow) = (h * r, w * r);
    let mut out = Vec::with_capacity(c * oh * ow);
    for b in 0..c {
        let src = img.band(b);
        for y in 0..oh {
            out.extend((0..ow).map(|x| src[(y / r) * w + x / r]));
        }
    }
    let mut res = Raster::from_parts(c, oh, ow, out, img.band_meta().to_vec());
    res.scale_gsd(1.0 / r as f64);
    Ok(res)
}

/// Interpolation taps for one axis: `per` source indices and weights for each
/// output position.
#[derive(Debug, Clone)]
pub struct Taps {
    pub in_len: usize,
    pub out_len: usize,
    pub per: usize,
    pub index: Vec<usize>,
    pub weight: Vec<f64>,
}

impl Taps {
    /// Applies the taps along rows of an `h`×`in_len` plane.
    pub fn apply_rows(&self, src: &[f64], h: usize, dst: &mut [f64]) {
        for y in 0..h {
            let line = &src[y * self.in_len..(y + 1) * self.in_len];
            for x in 0..self.out_len {
                let k = x * self.per;
                let mut acc = 0.0;
                for t in k..k + self.per {
                    acc += self.weight[t] * line[self.index[t]];
                }
                dst[y * self.out_len + x] = acc;
            }
        }
    }

    /// Applies the taps along columns of an `in_len`×`w` plane.
    pub fn apply_cols(&self, src: &[f64], w: usize, dst: &mut [f64]) {
        for y in 0..self.out_len {
            let row = &mut dst[y * w..(y + 1) * w];
            row.iter_mut().for_each(|v| *v = 0.0);
            let k = y * self.per;
            for t in k..k + self.per {
                let wt = self.weight[t];
                let line = &src[self.index[t] * w..(self.index[t] + 1) * w];
                for (o, s) in row.iter_mut().zip(line) {
                    *o += wt * s;
                }
            }
        }
    }

    /// Adjoint of [`Taps::apply_rows`]: scatters output gradients back.
    pub fn adjoint_rows(&self, grad_out: &[f64], h: usize, grad_in: &mut [f64]) {
        for y in 0..h {
            for x in 0..self.out_len {
                let g = grad_out[y * self.out_len + x];
                let k = x * self.per;
                for t in k..k + self.per {
                    grad_in[y * self.in_len + self.index[t]] += self.weight[t] * g;
                }
            }
        }
    }

    /// Adjoint of [`Taps::apply_cols`].
    pub fn adjoint_cols(&self, grad_out: &[f64], w: usize, grad_in: &mut [f64]) {
        for y in 0..self.out_len {
            let k = y * self.per;
            for t in k..k + self.per {
                let wt = self.weight[t];
                let src = self.index[t];
                for x in 0..w {
                    grad_in[src * w + x] += wt * grad_out[y * w + x];
                }
            }
        }
    }
}

const CUBIC_A: f64 = -0.5;

fn cubic(d: f64) -> f64 {
    let d = d.abs();
    if d <= 1.0 {
        ((CUBIC_A + 2.0) * d - (CUBIC_A + 3.0)) * d * d + 1.0
    } else if d < 2.0 {
        ((CUBIC_A * d - 5.0 * CUBIC_A) * d + 8.0 * CUBIC_A) * d - 4.0 * CUBIC_A
    } else {
        0.0
    }
}

/// Catmull-Rom taps with pixel-center alignment and reflected borders.
pub fn cubic_taps(in_len: usize, out_len: usize) -> Taps {
    let ratio = in_len as f64 / out_len as f64;
    let mut index = Vec::with_capacity(out_len * 4);
    let mut weight = Vec::with_capacity(out_len * 4);
    for i in 0..out_len {
        let src = (i as f64 + 0.5) * ratio - 0.5;
        let f = src.floor();
        let t = src - f;
        let f = f as isize;
        for (k, d) in [(-1isize, t + 1.0), (0, t), (1, 1.0 - t), (2, 2.0 - t)] {
            index.push(reflect_index(f + k, in_len));
            weight.push(cubic(d));
        }
    }
    Taps { in_len, out_len, per: 4, index, weight }
}

/// Linear taps with the align-corners convention (end samples coincide).
fn linear_taps(in_len: usize, out_len: usize) -> Taps {
    let mut index = Vec::with_capacity(out_len * 2);
    let mut weight = Vec::with_capacity(out_len * 2);
    for i in 0..out_len {
        let src = if out_len > 1 {
            i as f64 * (in_len - 1) as f64 / (out_len - 1) as f64
        } else {
            (in_len - 1) as f64 / 2.0
        };
        let f = src.floor();
        let t = src - f;
        let f = f as isize;
        index.push(reflect_index(f, in_len));
        index.push(reflect_index(f + 1, in_len));
        weight.push(1.0 - t);
        weight.push(t);
    }
    Taps { in_len, out_len, per: 2, index, weight }
}

fn output_size(len: usize, scale: f64) -> Result<usize> {
    if !(scale > 0.0) || !scale.is_finite() {
        bail!(Parameter, "scale must be positive and finite, got {scale}");
    }
    let n = (len as f64 * scale).round();
    if n < 1.0 {
        bail!(Dimension, "scale {scale} maps length {len} to an empty output");
    }
    Ok(n as usize)
}

fn apply_separable(img: &Raster, rows: &Taps, cols: &Taps) -> Raster {
    let (c, h, _) = img.shape();
    let (oh, ow) = (cols.out_len, rows.out_len);
    let mut out = vec![0.0; c * oh * ow];
    let mut tmp = vec![0.0; h * ow];
    for b in 0..c {
        rows.apply_rows(img.band(b), h, &mut tmp);
        cols.apply_cols(&tmp, ow, &mut out[b * oh * ow..(b + 1) * oh * ow]);
    }
    let mut r = Raster::from_parts(c, oh, ow, out, img.band_meta().to_vec());
    r.scale_gsd(img.width() as f64 / ow as f64);
    r
}

/// Separable Catmull-Rom (a = -0.5) resampling by `scale`.
pub fn resample_bicubic(img: &Raster, scale: f64) -> Result<Raster> {
    let oh = output_size(img.height(), scale)?;
    let ow = output_size(img.width(), scale)?;
    Ok(apply_separable(img, &cubic_taps(img.width(), ow), &cubic_taps(img.height(), oh)))
}

/// Separable linear resampling by `scale`, align-corners convention.
pub fn resample_bilinear(img: &Raster, scale: f64) -> Result<Raster> {
    let oh = output_size(img.height(), scale)?;
    let ow = output_size(img.width(), scale)?;
    Ok(apply_separable(img, &linear_taps(img.width(), ow), &linear_taps(img.height(), oh)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boxcar_two_by_two() {
        let img = Raster::from_vec(1, 2, 2, vec![1., 2., 3., 4.]).unwrap();
        let out = boxcar_downsample(&img, 2).unwrap();
        assert_eq!(out.data(), &[2.5]);
        assert_eq!(out.band_meta()[0].gsd, 20.0);
        assert!(boxcar_downsample(&Raster::zeros(1, 3, 4), 2).is_err());
    }

    #[test]
    fn boxcar_inverts_replication() {
        let img = Raster::from_vec(2, 2, 3, (0..12).map(|v| v as f64 * 1.5).collect()).unwrap();
        let up = upsample_nearest(&img, 3).unwrap();
        assert_eq!(boxcar_downsample(&up, 3).unwrap().data(), img.data());
    }

    #[test]
    fn cubic_weights_partition_unity() {
        let taps = cubic_taps(7, 19);
        for w in taps.weight.chunks(4) {
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn bicubic_identity_and_degenerate_size() {
        let img = Raster::from_vec(1, 3, 5, (0..15).map(|v| (v as f64).sin()).collect()).unwrap();
        let same = resample_bicubic(&img, 1.0).unwrap();
        for (a, b) in same.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(resample_bicubic(&img, 0.01).is_err());
        assert!(resample_bicubic(&img, -1.0).is_err());
    }

    #[test]
    fn bicubic_reproduces_linear_ramp_in_interior() {
        let img = Raster::from_vec(1, 8, 8, (0..64).map(|i| (i % 8) as f64 * 2.0 + 1.0).collect())
            .unwrap();
        let up = resample_bicubic(&img, 2.0).unwrap();
        // Output column x samples source position (x + 0.5)/2 - 0.5.
        for y in 0..16 {
            for x in 4..12 {
                let src = (x as f64 + 0.5) / 2.0 - 0.5;
                assert!((up.get(0, y, x) - (src * 2.0 + 1.0)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn bilinear_align_corners_columns() {
        let img = Raster::from_vec(1, 2, 2, vec![0., 1., 0., 1.]).unwrap();
        let up = resample_bilinear(&img, 2.0).unwrap();
        for y in 0..4 {
            for (x, want) in [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0].into_iter().enumerate() {
                assert!((up.get(0, y, x) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn taps_adjoint_matches_dot_product() {
        let taps = cubic_taps(5, 11);
        let x: Vec<f64> = (0..15).map(|v| (v as f64 * 0.37).cos()).collect();
        let g: Vec<f64> = (0..33).map(|v| (v as f64 * 0.11).sin()).collect();
        let mut ax = vec![0.0; 33];
        taps.apply_rows(&x, 3, &mut ax);
        let mut atg = vec![0.0; 15];
        taps.adjoint_rows(&g, 3, &mut atg);
        let lhs: f64 = ax.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&atg).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
