//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every builder method runs its forward computation immediately and records
//! the operation. [`Graph::gradients`] then walks the tape backwards applying
//! each operation's vector-Jacobian product.

use std::collections::HashMap;

use super::{ParamId, ParamStore, Tensor};
use crate::degradation::gaussian_taps;
use crate::error::{bail, Result};
use crate::raster::{cubic_taps, reflect_index};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param,
    Conv2d { x: Var, w: Var, b: Option<Var>, k: usize },
    LeakyRelu { x: Var, slope: f64 },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale { x: Var, s: f64 },
    AddConst { x: Var },
    Concat(Vec<Var>),
    ChannelMean(Var),
    GlobalAvgPool(Var),
    Softmax(Var),
    Dense { x: Var, w: Var, b: Var },
    ScaleChannels { x: Var, s: Var },
    AddChannelBias { x: Var, b: Var },
    WeightedChannelSum { x: Var, w: Var },
    SelectChannel { x: Var, c: usize },
    GaussianBlur { x: Var, sigma: Var, taps: Vec<f64>, mid: Vec<f64> },
    AvgPool { x: Var, r: usize },
    UpsampleBicubic { x: Var, r: usize },
    Permute { x: Var, src: Vec<usize> },
    Sum(Var),
    Mean(Var),
    L1 { a: Var, b: Var },
    InfoNce { q: Var, cands: Vec<Var>, tau: f64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation. Build one per forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Gradients of a scalar with respect to the graph's leaves.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

/// `C = A·B (+ C if accumulate)`, with optional transposes of row-major inputs.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: slice lengths cover m×k, k×n and m×n under the strides above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Zero-padded "same" patch matrix: `[Cin·k·k, H·W]`.
fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let pad = (k / 2) as isize;
    let hw = h * w;
    let mut col = vec![0.0; c * k * k * hw];
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((ci * k + ky) * k + kx) * hw..][..hw];
                let dx = kx as isize - pad;
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad;
                    if sy < 0 || sy >= h as isize || x0 >= x1 {
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let dst = &mut row[y * w..(y + 1) * w];
                    for xx in x0..x1 {
                        dst[xx] = src[(xx as isize + dx) as usize];
                    }
                }
            }
        }
    }
    col
}

fn col2im(col: &[f64], c: usize, h: usize, w: usize, k: usize, out: &mut [f64]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut out[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((ci * k + ky) * k + kx) * hw..][..hw];
                let dx = kx as isize - pad;
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad;
                    if sy < 0 || sy >= h as isize || x0 >= x1 {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    let src = &row[y * w..(y + 1) * w];
                    for xx in x0..x1 {
                        dst[(xx as isize + dx) as usize] += src[xx];
                    }
                }
            }
        }
    }
}

/// `Σ_c w_c · x_c` over the planes of a band-major buffer.
pub fn weighted_plane_sum(x: &[f64], planes: usize, w: &[f64]) -> Vec<f64> {
    let n = x.len() / planes;
    let mut out = vec![0.0; n];
    for (c, wc) in w.iter().enumerate().take(planes) {
        for (o, v) in out.iter_mut().zip(&x[c * n..(c + 1) * n]) {
            *o += wc * v;
        }
    }
    out
}

/// Separable reflected blur; returns `(row-pass, output)` for one plane.
fn blur_plane(src: &[f64], h: usize, w: usize, taps: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut mid = vec![0.0; h * w];
    let mut out = vec![0.0; h * w];
    crate::raster::convolve::conv1d_rows(src, h, w, taps, &mut mid);
    crate::raster::convolve::conv1d_cols(&mid, h, w, taps, &mut out);
    (mid, out)
}

/// Bicubic ×`r` upsampling of a `[C, H, W]` buffer.
pub(crate) fn bicubic_up(x: &[f64], c: usize, h: usize, w: usize, r: usize) -> Vec<f64> {
    let rows = cubic_taps(w, w * r);
    let cols = cubic_taps(h, h * r);
    let (oh, ow) = (h * r, w * r);
    let mut out = vec![0.0; c * oh * ow];
    let mut tmp = vec![0.0; h * ow];
    for b in 0..c {
        rows.apply_rows(&x[b * h * w..(b + 1) * h * w], h, &mut tmp);
        cols.apply_cols(&tmp, ow, &mut out[b * oh * ow..(b + 1) * oh * ow]);
    }
    out
}

pub(crate) fn avg_pool(x: &[f64], c: usize, h: usize, w: usize, r: usize) -> Vec<f64> {
    let (oh, ow) = (h / r, w / r);
    let norm = (r * r) as f64;
    let mut out = vec![0.0; c * oh * ow];
    for b in 0..c {
        let src = &x[b * h * w..(b + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for y in oy * r..(oy + 1) * r {
                    acc += src[y * w + ox * r..y * w + (ox + 1) * r].iter().sum::<f64>();
                }
                out[(b * oh + oy) * ow + ox] = acc / norm;
            }
        }
    }
    out
}

fn cosine(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    (dot / (na * nb), na, nb)
}

/// InfoNCE value and per-candidate softmax weights; candidate 0 is the positive.
fn infonce_forward(q: &[f64], cands: &[&[f64]], tau: f64) -> (f64, Vec<f64>, Vec<f64>) {
    let sims: Vec<f64> = cands.iter().map(|c| cosine(q, c).0).collect();
    let logits: Vec<f64> = sims.iter().map(|s| s / tau).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let loss = -(logits[0] - max) + z.ln();
    let probs = exps.iter().map(|e| e / z).collect();
    (loss, sims, probs)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Constant leaf; gradients are still reported for it by [`Graph::gradients`].
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, true)
    }

    /// Constant leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, false)
    }

    /// Leaf bound to a stored parameter; repeated calls reuse the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let p = store.get(id);
        let t = Tensor { shape: p.shape.clone(), data: p.value.clone() };
        let v = self.push(t, Op::Param, p.requires_grad);
        self.params.insert(id, v);
        v
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (&self.value(a).shape, &self.value(b).shape);
        if sa != sb {
            bail!(Dimension, "{what}: shapes {sa:?} and {sb:?} differ");
        }
        Ok(())
    }

    fn chw(&self, v: Var) -> Result<(usize, usize, usize)> {
        self.value(v).chw()
    }

    /// Zero-padded stride-1 convolution. `w` is `[Cout, Cin, k, k]`, `b` is `[Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (ci, h, wd) = self.chw(x)?;
        let ws = self.value(w).shape.clone();
        let [co, wci, k, k2] = ws[..] else {
            bail!(Dimension, "conv weight must be 4-D, got {ws:?}");
        };
        if wci != ci || k != k2 || k % 2 == 0 {
            bail!(Dimension, "conv weight {ws:?} incompatible with {ci} input channels");
        }
        if let Some(b) = b {
            if self.value(b).shape != [co] {
                bail!(Dimension, "conv bias must be [{co}]");
            }
        }
        let hw = h * wd;
        let mut out = vec![0.0; co * hw];
        let xv = &self.value(x).data;
        let wv = &self.value(w).data;
        if k == 1 {
            gemm(co, ci, hw, wv, false, xv, false, &mut out, false);
        } else {
            let col = im2col(xv, ci, h, wd, k);
            gemm(co, ci * k * k, hw, wv, false, &col, false, &mut out, false);
        }
        if let Some(b) = b {
            for (o, bv) in self.value(b).data.iter().enumerate() {
                out[o * hw..(o + 1) * hw].iter_mut().for_each(|v| *v += bv);
            }
        }
        let needs = self.ng(&[x, w]) || b.is_some_and(|b| self.ng(&[b]));
        Ok(self.push(Tensor { shape: vec![co, h, wd], data: out }, Op::Conv2d { x, w, b, k }, needs))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let t = self.value(x);
        let data = t.data.iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect();
        let out = Tensor { shape: t.shape.clone(), data };
        let needs = self.ng(&[x]);
        self.push(out, Op::LeakyRelu { x, slope }, needs)
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op, what: &str) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor { shape: ta.shape.clone(), data };
        let needs = self.ng(&[a, b]);
        Ok(self.push(out, op, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let t = self.value(x);
        let out = Tensor { shape: t.shape.clone(), data: t.data.iter().map(|v| v * s).collect() };
        let needs = self.ng(&[x]);
        self.push(out, Op::Scale { x, s }, needs)
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x);
        let out = Tensor { shape: t.shape.clone(), data: t.data.iter().map(|v| v + c).collect() };
        let needs = self.ng(&[x]);
        self.push(out, Op::AddConst { x }, needs)
    }

    /// Concatenates along the leading axis.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            bail!(Dimension, "concat of nothing");
        };
        let tail = self.value(first).shape[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &v in xs {
            let t = self.value(v);
            if t.shape[1..] != tail[..] {
                bail!(Dimension, "concat: {:?} vs trailing {tail:?}", t.shape);
            }
            lead += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let needs = self.ng(xs);
        Ok(self.push(Tensor { shape, data }, Op::Concat(xs.to_vec()), needs))
    }

    /// Per-pixel mean over channels: `[C,H,W] → [1,H,W]`.
    pub fn channel_mean(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.chw(x)?;
        let mut data = vec![0.0; h * w];
        let xv = &self.value(x).data;
        for ch in 0..c {
            for (o, v) in data.iter_mut().zip(&xv[ch * h * w..(ch + 1) * h * w]) {
                *o += v;
            }
        }
        data.iter_mut().for_each(|v| *v /= c as f64);
        let needs = self.ng(&[x]);
        Ok(self.push(Tensor { shape: vec![1, h, w], data }, Op::ChannelMean(x), needs))
    }

    /// `[C,H,W] → [C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.chw(x)?;
        let n = (h * w) as f64;
        let xv = &self.value(x).data;
        let data = (0..c).map(|ch| xv[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>() / n).collect();
        let needs = self.ng(&[x]);
        Ok(self.push(Tensor::vector(data), Op::GlobalAvgPool(x), needs))
    }

    /// Softmax of a vector.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.shape.len() != 1 {
            bail!(Dimension, "softmax expects a vector, got {:?}", t.shape);
        }
        let data = softmax(&t.data);
        let needs = self.ng(&[x]);
        Ok(self.push(Tensor::vector(data), Op::Softmax(x), needs))
    }

    /// `W·x + b` with `W` `[M, N]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let n = self.value(x).len();
        let ws = self.value(w).shape.clone();
        if ws.len() != 2 || ws[1] != n || self.value(b).shape != [ws[0]] {
            bail!(Dimension, "dense weight {ws:?} incompatible with input of {n}");
        }
        let m = ws[0];
        let mut out = self.value(b).data.clone();
        gemm(m, n, 1, &self.value(w).data, false, &self.value(x).data, false, &mut out, true);
        let needs = self.ng(&[x, w, b]);
        Ok(self.push(Tensor::vector(out), Op::Dense { x, w, b }, needs))
    }

    fn per_channel(&self, x: Var, v: Var, what: &str) -> Result<(usize, usize)> {
        let (c, h, w) = self.chw(x)?;
        if self.value(v).shape != [c] {
            bail!(Dimension, "{what}: expected [{c}], got {:?}", self.value(v).shape);
        }
        Ok((c, h * w))
    }

    /// `out_c = s_c · x_c`.
    pub fn scale_channels(&mut self, x: Var, s: Var) -> Result<Var> {
        let (_, n) = self.per_channel(x, s, "scale_channels")?;
        let mut out = self.value(x).clone();
        for (c, sv) in self.value(s).data.iter().enumerate() {
            out.data[c * n..(c + 1) * n].iter_mut().for_each(|v| *v *= sv);
        }
        let needs = self.ng(&[x, s]);
        Ok(self.push(out, Op::ScaleChannels { x, s }, needs))
    }

    /// `out_c = x_c + b_c`.
    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (_, n) = self.per_channel(x, b, "add_channel_bias")?;
        let mut out = self.value(x).clone();
        for (c, bv) in self.value(b).data.iter().enumerate() {
            out.data[c * n..(c + 1) * n].iter_mut().for_each(|v| *v += bv);
        }
        let needs = self.ng(&[x, b]);
        Ok(self.push(out, Op::AddChannelBias { x, b }, needs))
    }

    /// `Σ_c w_c · x_c`: `[C,H,W] → [1,H,W]`.
    pub fn weighted_channel_sum(&mut self, x: Var, w: Var) -> Result<Var> {
        let (c, h, wd) = self.chw(x)?;
        self.per_channel(x, w, "weighted_channel_sum")?;
        let data = weighted_plane_sum(&self.value(x).data, c, &self.value(w).data);
        let needs = self.ng(&[x, w]);
        Ok(self.push(Tensor { shape: vec![1, h, wd], data }, Op::WeightedChannelSum { x, w }, needs))
    }

    pub fn select_channel(&mut self, x: Var, c: usize) -> Result<Var> {
        let (cc, h, w) = self.chw(x)?;
        if c >= cc {
            bail!(Dimension, "channel {c} out of {cc}");
        }
        let data = self.value(x).data[c * h * w..(c + 1) * h * w].to_vec();
        let needs = self.ng(&[x]);
        Ok(self.push(Tensor { shape: vec![1, h, w], data }, Op::SelectChannel { x, c }, needs))
    }

    /// Separable Gaussian blur with reflected borders; `sigma` is a `[1]`
    /// tensor and receives a gradient.
    pub fn gaussian_blur(&mut self, x: Var, sigma: Var) -> Result<Var> {
        let (c, h, w) = self.chw(x)?;
        if self.value(sigma).shape != [1] {
            bail!(Dimension, "blur sigma must be a scalar");
        }
        let taps = gaussian_taps(self.value(sigma).item(), 2 * h.min(w) + 1);
        let xv = &self.value(x).data;
        let mut mid = Vec::with_capacity(c * h * w);
        let mut out = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            let (m, o) = blur_plane(&xv[ch * h * w..(ch + 1) * h * w], h, w, &taps);
            mid.extend(m);
            out.extend(o);
        }
        let needs = self.ng(&[x, sigma]);
        let t = Tensor { shape: vec![c, h, w], data: out };
        Ok(self.push(t, Op::GaussianBlur { x, sigma, taps, mid }, needs))
    }

    /// Non-overlapping `r`×`r` mean pooling.
    pub fn avg_pool(&mut self, x: Var, r: usize) -> Result<Var> {
        let (c, h, w) = self.chw(x)?;
        if r == 0 || h % r != 0 || w % r != 0 {
            bail!(Dimension, "{h}x{w} is not divisible by {r}");
        }
        let data = avg_pool(&self.value(x).data, c, h, w, r);
        let needs = self.ng(&[x]);
        Ok(self.push(Tensor { shape: vec![c, h / r, w / r], data }, Op::AvgPool { x, r }, needs))
    }

    /// Catmull-Rom ×`r` upsampling, matching [`crate::raster::resample_bicubic`].
    pub fn upsample_bicubic(&mut self, x: Var, r: usize) -> Result<Var> {
        let (c, h, w) = self.chw(x)?;
        if r == 0 {
            bail!(Parameter, "upsampling factor must be positive");
        }
        let data = bicubic_up(&self.value(x).data, c, h, w, r);
        let needs = self.ng(&[x]);
        Ok(self.push(Tensor { shape: vec![c, h * r, w * r], data }, Op::UpsampleBicubic { x, r }, needs))
    }

    fn permute(&mut self, x: Var, shape: Vec<usize>, src: Vec<usize>) -> Var {
        let xv = &self.value(x).data;
        let data = src.iter().map(|&i| xv[i]).collect();
        let needs = self.ng(&[x]);
        self.push(Tensor { shape, data }, Op::Permute { x, src }, needs)
    }

    /// Space-to-depth with the layout of [`crate::raster::pixel_fold`].
    pub fn pixel_fold(&mut self, x: Var, r: usize) -> Result<Var> {
        let (c, h, w) = self.chw(x)?;
        if r == 0 || h % r != 0 || w % r != 0 {
            bail!(Dimension, "{h}x{w} is not divisible by fold factor {r}");
        }
        let (oh, ow) = (h / r, w / r);
        let mut src = Vec::with_capacity(c * h * w);
        for b in 0..c {
            for sy in 0..r {
                for sx in 0..r {
                    for y in 0..oh {
                        for xx in 0..ow {
                            src.push((b * h + y * r + sy) * w + xx * r + sx);
                        }
                    }
                }
            }
        }
        Ok(self.permute(x, vec![c * r * r, oh, ow], src))
    }

    /// Depth-to-space, inverse of [`Graph::pixel_fold`].
    pub fn pixel_unfold(&mut self, x: Var, r: usize) -> Result<Var> {
        let (c, h, w) = self.chw(x)?;
        if r == 0 || c % (r * r) != 0 {
            bail!(Dimension, "{c} channels are not divisible by {}", r * r);
        }
        let oc = c / (r * r);
        let (oh, ow) = (h * r, w * r);
        let mut src = vec![0; c * h * w];
        for b in 0..oc {
            for sy in 0..r {
                for sx in 0..r {
                    let ch = b * r * r + sy * r + sx;
                    for y in 0..h {
                        for xx in 0..w {
                            src[(b * oh + y * r + sy) * ow + xx * r + sx] = (ch * h + y) * w + xx;
                        }
                    }
                }
            }
        }
        Ok(self.permute(x, vec![oc, oh, ow], src))
    }

    /// Element `i` of any tensor as a `[1]` scalar.
    pub fn element(&mut self, x: Var, i: usize) -> Result<Var> {
        if i >= self.value(x).len() {
            bail!(Dimension, "index {i} out of {} elements", self.value(x).len());
        }
        Ok(self.permute(x, vec![1], vec![i]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().sum();
        let needs = self.ng(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), needs)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data.iter().sum::<f64>() / t.len() as f64;
        let needs = self.ng(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), needs)
    }

    /// Mean absolute difference.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape(pred, target, "l1_loss")?;
        let (a, b) = (self.value(pred), self.value(target));
        let s = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
        let needs = self.ng(&[pred, target]);
        Ok(self.push(Tensor::scalar(s), Op::L1 { a: pred, b: target }, needs))
    }

    /// `−log(exp(sim(q,p)/τ) / Σ_j exp(sim(q,c_j)/τ))` over the positive and
    /// all negatives, with cosine similarity.
    pub fn infonce(&mut self, q: Var, positive: Var, negatives: &[Var], tau: f64) -> Result<Var> {
        if !(tau > 0.0) {
            bail!(Parameter, "temperature must be positive");
        }
        let mut cands = vec![positive];
        cands.extend_from_slice(negatives);
        let n = self.value(q).len();
        for &v in std::iter::once(&q).chain(&cands) {
            let t = self.value(v);
            if t.len() != n {
                bail!(Dimension, "embedding lengths differ");
            }
            if t.data.iter().all(|&x| x == 0.0) {
                bail!(Domain, "zero-norm embedding");
            }
        }
        let cv: Vec<&[f64]> = cands.iter().map(|&c| &self.value(c).data[..]).collect();
        let (loss, _, _) = infonce_forward(&self.value(q).data, &cv, tau);
        let mut all = vec![q];
        all.extend_from_slice(&cands);
        let needs = self.ng(&all);
        Ok(self.push(Tensor::scalar(loss), Op::InfoNce { q, cands, tau }, needs))
    }

    /// Gradients of the scalar `loss` with respect to every leaf.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape != [1] {
            bail!(Dimension, "loss must be a scalar, got {:?}", self.value(loss).shape);
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Input | Op::Param) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if node.needs_grad {
                self.backprop(i, &g, &mut grads);
            }
        }
        Ok(Gradients { grads })
    }

    /// Accumulates `d loss / d param` into the store for trainable parameters.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (&id, &v) in &self.params {
            let p = store.get_mut(id);
            if !p.requires_grad {
                continue;
            }
            if let Some(g) = grads.get(v) {
                for (a, b) in p.grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
        Ok(())
    }

    fn backprop(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            f(slot);
        };
        let val = |v: Var| &nodes[v.0].value;
        match &nodes[i].op {
            Op::Input | Op::Param => {}
            Op::Conv2d { x, w, b, k } => {
                let (ci, h, wd) = val(*x).chw().expect("conv input");
                let co = val(*w).shape[0];
                let hw = h * wd;
                let kc = ci * k * k;
                let col_owned;
                let col: &[f64] = if *k == 1 {
                    &val(*x).data
                } else {
                    col_owned = im2col(&val(*x).data, ci, h, wd, *k);
                    &col_owned
                };
                acc(*w, &mut |gw| gemm(co, hw, kc, g, false, col, true, gw, true));
                if let Some(b) = b {
                    acc(*b, &mut |gb| {
                        for (o, gbv) in gb.iter_mut().enumerate() {
                            *gbv += g[o * hw..(o + 1) * hw].iter().sum::<f64>();
                        }
                    });
                }
                if nodes[x.0].needs_grad {
                    let wv = &val(*w).data;
                    acc(*x, &mut |gx| {
                        if *k == 1 {
                            gemm(kc, co, hw, wv, true, g, false, gx, true);
                        } else {
                            let mut gcol = vec![0.0; kc * hw];
                            gemm(kc, co, hw, wv, true, g, false, &mut gcol, false);
                            col2im(&gcol, ci, h, wd, *k, gx);
                        }
                    });
                }
            }
            Op::LeakyRelu { x, slope } => {
                let xv = &val(*x).data;
                acc(*x, &mut |gx| {
                    for ((a, &v), gv) in gx.iter_mut().zip(xv).zip(g) {
                        *a += if v > 0.0 { *gv } else { slope * gv };
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&val(*a).data, &val(*b).data);
                acc(*a, &mut |ga| {
                    for ((x, gv), y) in ga.iter_mut().zip(g).zip(bv) {
                        *x += gv * y;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((x, gv), y) in gb.iter_mut().zip(g).zip(av) {
                        *x += gv * y;
                    }
                });
            }
            Op::Scale { x, s } => {
                acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(a, b)| *a += s * b));
            }
            Op::AddConst { x } => {
                acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(a, b)| *a += b));
            }
            Op::Concat(xs) => {
                let mut off = 0;
                for &v in xs {
                    let n = val(v).len();
                    let part = &g[off..off + n];
                    acc(v, &mut |gv| gv.iter_mut().zip(part).for_each(|(a, b)| *a += b));
                    off += n;
                }
            }
            Op::ChannelMean(x) => {
                let c = val(*x).shape[0];
                let n = g.len();
                acc(*x, &mut |gx| {
                    for ch in 0..c {
                        for (a, b) in gx[ch * n..(ch + 1) * n].iter_mut().zip(g) {
                            *a += b / c as f64;
                        }
                    }
                });
            }
            Op::GlobalAvgPool(x) => {
                let n = val(*x).len() / g.len();
                acc(*x, &mut |gx| {
                    for (ch, gv) in g.iter().enumerate() {
                        gx[ch * n..(ch + 1) * n].iter_mut().for_each(|a| *a += gv / n as f64);
                    }
                });
            }
            Op::Softmax(x) => {
                let y = &nodes[i].value.data;
                let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
                acc(*x, &mut |gx| {
                    for ((a, yv), gv) in gx.iter_mut().zip(y).zip(g) {
                        *a += yv * (gv - dot);
                    }
                });
            }
            Op::Dense { x, w, b } => {
                let (m, n) = (val(*w).shape[0], val(*w).shape[1]);
                let xv = &val(*x).data;
                acc(*w, &mut |gw| gemm(m, 1, n, g, false, xv, false, gw, true));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(a, c)| *a += c));
                let wv = &val(*w).data;
                acc(*x, &mut |gx| gemm(n, m, 1, wv, true, g, false, gx, true));
            }
            Op::ScaleChannels { x, s } => {
                let sv = &val(*s).data;
                let xv = &val(*x).data;
                let n = xv.len() / sv.len();
                acc(*x, &mut |gx| {
                    for (c, s) in sv.iter().enumerate() {
                        for (a, b) in gx[c * n..(c + 1) * n].iter_mut().zip(&g[c * n..(c + 1) * n]) {
                            *a += s * b;
                        }
                    }
                });
                acc(*s, &mut |gs| {
                    for (c, a) in gs.iter_mut().enumerate() {
                        *a += g[c * n..(c + 1) * n].iter().zip(&xv[c * n..(c + 1) * n]).map(|(p, q)| p * q).sum::<f64>();
                    }
                });
            }
            Op::AddChannelBias { x, b } => {
                let c = val(*b).len();
                let n = g.len() / c;
                acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(a, v)| *a += v));
                acc(*b, &mut |gb| {
                    for (ch, a) in gb.iter_mut().enumerate() {
                        *a += g[ch * n..(ch + 1) * n].iter().sum::<f64>();
                    }
                });
            }
            Op::WeightedChannelSum { x, w } => {
                let wv = &val(*w).data;
                let xv = &val(*x).data;
                let n = g.len();
                acc(*x, &mut |gx| {
                    for (c, wc) in wv.iter().enumerate() {
                        for (a, b) in gx[c * n..(c + 1) * n].iter_mut().zip(g) {
                            *a += wc * b;
                        }
                    }
                });
                acc(*w, &mut |gw| {
                    for (c, a) in gw.iter_mut().enumerate() {
                        *a += xv[c * n..(c + 1) * n].iter().zip(g).map(|(p, q)| p * q).sum::<f64>();
                    }
                });
            }
            Op::SelectChannel { x, c } => {
                let n = g.len();
                acc(*x, &mut |gx| {
                    gx[c * n..(c + 1) * n].iter_mut().zip(g).for_each(|(a, b)| *a += b);
                });
            }
            Op::GaussianBlur { x, sigma, taps, mid } => {
                let (c, h, w) = val(*x).chw().expect("blur input");
                let xv = &val(*x).data;
                let n = h * w;
                let half = (taps.len() / 2) as isize;
                let mut dtaps = vec![0.0; taps.len()];
                let mut gx_all = vec![0.0; c * n];
                for ch in 0..c {
                    let go = &g[ch * n..(ch + 1) * n];
                    let md = &mid[ch * n..(ch + 1) * n];
                    let src = &xv[ch * n..(ch + 1) * n];
                    let mut gmid = vec![0.0; n];
                    for y in 0..h {
                        for (t, tv) in taps.iter().enumerate() {
                            let sy = reflect_index(y as isize - t as isize + half, h);
                            let mut d = 0.0;
                            for xx in 0..w {
                                let gv = go[y * w + xx];
                                d += gv * md[sy * w + xx];
                                gmid[sy * w + xx] += tv * gv;
                            }
                            dtaps[t] += d;
                        }
                    }
                    let gx = &mut gx_all[ch * n..(ch + 1) * n];
                    for y in 0..h {
                        for xx in 0..w {
                            let gv = gmid[y * w + xx];
                            for (t, tv) in taps.iter().enumerate() {
                                let sx = reflect_index(xx as isize - t as isize + half, w);
                                dtaps[t] += gv * src[y * w + sx];
                                gx[y * w + sx] += tv * gv;
                            }
                        }
                    }
                }
                acc(*x, &mut |a| a.iter_mut().zip(&gx_all).for_each(|(p, q)| *p += q));
                let s = val(*sigma).item();
                if taps.len() > 1 && s > 0.0 {
                    // t_i ∝ exp(-d_i²/2σ²) normalized: dt_i/dσ = t_i (d_i² − Σ t d²)/σ³.
                    let d2: Vec<f64> = (0..taps.len()).map(|t| ((t as isize - half).pow(2)) as f64).collect();
                    let m2: f64 = taps.iter().zip(&d2).map(|(t, d)| t * d).sum();
                    let ds: f64 = taps
                        .iter()
                        .zip(&d2)
                        .zip(&dtaps)
                        .map(|((t, d), gt)| gt * t * (d - m2) / (s * s * s))
                        .sum();
                    acc(*sigma, &mut |gs| gs[0] += ds);
                }
            }
            Op::AvgPool { x, r } => {
                let (c, h, w) = val(*x).chw().expect("pool input");
                let (oh, ow) = (h / r, w / r);
                let norm = (r * r) as f64;
                acc(*x, &mut |gx| {
                    for ch in 0..c {
                        for y in 0..h {
                            for xx in 0..w {
                                gx[(ch * h + y) * w + xx] += g[(ch * oh + y / r) * ow + xx / r] / norm;
                            }
                        }
                    }
                });
            }
            Op::UpsampleBicubic { x, r } => {
                let (c, h, w) = val(*x).chw().expect("upsample input");
                let rows = cubic_taps(w, w * r);
                let cols = cubic_taps(h, h * r);
                let (oh, ow) = (h * r, w * r);
                acc(*x, &mut |gx| {
                    let mut gtmp = vec![0.0; h * ow];
                    for ch in 0..c {
                        gtmp.iter_mut().for_each(|v| *v = 0.0);
                        cols.adjoint_cols(&g[ch * oh * ow..(ch + 1) * oh * ow], ow, &mut gtmp);
                        rows.adjoint_rows(&gtmp, h, &mut gx[ch * h * w..(ch + 1) * h * w]);
                    }
                });
            }
            Op::Permute { x, src } => {
                acc(*x, &mut |gx| {
                    for (gv, &s) in g.iter().zip(src) {
                        gx[s] += gv;
                    }
                });
            }
            Op::Sum(x) => {
                acc(*x, &mut |gx| gx.iter_mut().for_each(|a| *a += g[0]));
            }
            Op::Mean(x) => {
                let n = val(*x).len() as f64;
                acc(*x, &mut |gx| gx.iter_mut().for_each(|a| *a += g[0] / n));
            }
            Op::L1 { a, b } => {
                let (av, bv) = (&val(*a).data, &val(*b).data);
                let s = g[0] / av.len() as f64;
                let sign = |p: f64, q: f64| if p > q { 1.0 } else if p < q { -1.0 } else { 0.0 };
                acc(*a, &mut |ga| {
                    for ((x, p), q) in ga.iter_mut().zip(av).zip(bv) {
                        *x += s * sign(*p, *q);
                    }
                });
                acc(*b, &mut |gb| {
                    for ((x, p), q) in gb.iter_mut().zip(av).zip(bv) {
                        *x -= s * sign(*p, *q);
                    }
                });
            }
            Op::InfoNce { q, cands, tau } => {
                let qv = &val(*q).data;
                let cv: Vec<&[f64]> = cands.iter().map(|&c| &val(c).data[..]).collect();
                let (_, sims, probs) = infonce_forward(qv, &cv, *tau);
                let mut gq = vec![0.0; qv.len()];
                for (j, c) in cv.iter().enumerate() {
                    // dL/ds_j = (p_j − [j = 0]) / τ
                    let ds = g[0] * (probs[j] - if j == 0 { 1.0 } else { 0.0 }) / tau;
                    let (_, nq, nc) = cosine(qv, c);
                    for (k, gqk) in gq.iter_mut().enumerate() {
                        *gqk += ds * (c[k] / (nq * nc) - sims[j] * qv[k] / (nq * nq));
                    }
                    acc(cands[j], &mut |gc| {
                        for k in 0..gc.len() {
                            gc[k] += ds * (qv[k] / (nq * nc) - sims[j] * c[k] / (nc * nc));
                        }
                    });
                }
                acc(*q, &mut |a| a.iter_mut().zip(&gq).for_each(|(p, v)| *p += v));
            }
        }
    }
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}
