use super::{BandSpec, Raster};
use crate::error::{bail, Result};

/// Space-to-depth: C×H×W → (C·r²)×(H/r)×(W/r).
///
/// Output channel `c·r² + sy·r + sx` holds input pixels `(c, y·r+sy, x·r+sx)`,
/// i.e. sub-pixels in row-major order with the column offset varying fastest.
pub fn pixel_fold(img: &Raster, r: usize) -> Result<Raster> {
    let (c, h, w) = img.shape();
    if r == 0 || h % r != 0 || w % r != 0 {
        bail!(Dimension, "{h}x{w} is not divisible by fold factor {r}");
    }
    let (oh, ow) = (h / r, w / r);
    let mut out = Vec::with_capacity(c * h * w);
    let mut meta = Vec::with_capacity(c * r * r);
    for b in 0..c {
        let src = img.band(b);
        for sy in 0..r {
            for sx in 0..r {
                for y in 0..oh {
                    out.extend((0..ow).map(|x| src[(y * r + sy) * w + x * r + sx]));
                }
                let mut m = img.band_meta()[b].clone();
                m.gsd *= r as f64;
                meta.push(m);
            }
        }
    }
    Ok(Raster::from_parts(c * r * r, oh, ow, out, meta))
}

/// Depth-to-space, the exact inverse of [`pixel_fold`].
pub fn pixel_unfold(img: &Raster, r: usize) -> Result<Raster> {
    let (c, h, w) = img.shape();
    if r == 0 || c % (r * r) != 0 {
        bail!(Dimension, "{c} channels are not divisible by {}", r * r);
    }
    let oc = c / (r * r);
    let (oh, ow) = (h * r, w * r);
    let mut out = vec![0.0; oc * oh * ow];
    let mut meta: Vec<BandSpec> = Vec::with_capacity(oc);
    for b in 0..oc {
        for sy in 0..r {
            for sx in 0..r {
                let src = img.band(b * r * r + sy * r + sx);
                for y in 0..h {
                    for x in 0..w {
                        out[(b * oh + y * r + sy) * ow + x * r + sx] = src[y * w + x];
                    }
                }
            }
        }
        let mut m = img.band_meta()[b * r * r].clone();
        m.gsd /= r as f64;
        meta.push(m);
    }
    Ok(Raster::from_parts(oc, oh, ow, out, meta))
}
