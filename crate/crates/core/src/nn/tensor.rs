use crate::error::{bail, Result};
use crate::Raster;

/// Dense row-major array of `f64`. Images are `[C, H, W]`, vectors `[N]`,
/// scalars `[1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() || shape.is_empty() {
            bail!(Dimension, "shape {shape:?} does not hold {} values", data.len());
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn scalar(v: f64) -> Self {
        Self { shape: vec![1], data: vec![v] }
    }

    pub fn vector(v: Vec<f64>) -> Self {
        Self { shape: vec![v.len()], data: v }
    }

    pub fn from_raster(r: &Raster) -> Self {
        Self { shape: vec![r.bands(), r.height(), r.width()], data: r.data().to_vec() }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(C, H, W)` of an image tensor.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => bail!(Dimension, "expected a [C, H, W] tensor, got {:?}", self.shape),
        }
    }

    /// Converts a `[C, H, W]` tensor to a raster carrying `template`'s band
    /// metadata when the band counts agree, defaults otherwise.
    pub fn to_raster(&self, template: Option<&Raster>) -> Result<Raster> {
        let (c, h, w) = self.chw()?;
        let r = Raster::from_vec(c, h, w, self.data.clone())?;
        match template {
            Some(t) if t.bands() == c => r.with_band_meta(t.band_meta().to_vec()),
            _ => Ok(r),
        }
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }
}
