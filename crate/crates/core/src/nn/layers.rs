//! Parameterized building blocks over [`Graph`].

use super::{Graph, ParamId, ParamStore, Var};
use crate::error::Result;
use crate::SeededRng;

/// Negative slope of every LeakyReLU in the networks.
pub const LEAKY_SLOPE: f64 = 0.2;
/// Scale applied to dense-block and RRDB residuals.
pub const RESIDUAL_SCALE: f64 = 0.2;

/// Weight initialization. `Uniform` draws from `±gain·√(3/fan_in)`, which
/// gives variance `gain²/fan_in`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Uniform { gain: f64 },
    Zero,
}

impl Init {
    pub const DEFAULT: Init = Init::Uniform { gain: 1.0 };

    fn values(self, n: usize, fan_in: usize, rng: &mut SeededRng) -> Vec<f64> {
        match self {
            Init::Zero => vec![0.0; n],
            Init::Uniform { gain } => {
                let bound = gain * (3.0 / fan_in as f64).sqrt();
                (0..n).map(|_| rng.uniform_range(-bound, bound)).collect()
            }
        }
    }
}

/// Same-padded stride-1 convolution.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        bias: bool,
        init: Init,
        rng: &mut SeededRng,
    ) -> Self {
        let fan_in = in_ch * k * k;
        let weight = store.add(
            format!("{name}.w"),
            &[out_ch, in_ch, k, k],
            init.values(out_ch * fan_in, fan_in, rng),
        );
        let bias = bias.then(|| store.add(format!("{name}.b"), &[out_ch], vec![0.0; out_ch]));
        Self { weight, bias, in_ch, out_ch, k }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|b| g.param(store, b));
        g.conv2d(x, w, b)
    }
}

/// Fully connected layer on vectors.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub n_in: usize,
    pub n_out: usize,
}

impl Dense {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        n_in: usize,
        n_out: usize,
        init: Init,
        rng: &mut SeededRng,
    ) -> Self {
        let weight = store.add(format!("{name}.w"), &[n_out, n_in], init.values(n_out * n_in, n_in, rng));
        let bias = store.add(format!("{name}.b"), &[n_out], vec![0.0; n_out]);
        Self { weight, bias, n_in, n_out }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.dense(x, w, b)
    }
}

/// Residual dense block: `layers` 3×3 conv + LeakyReLU stages, each fed the
/// concatenation of all previous features, then a linear 3×3 fuse back to
/// the block width. Returns `x + 0.2·fuse(...)`.
#[derive(Debug, Clone)]
pub struct DenseBlock {
    pub layers: Vec<Conv2d>,
    pub fuse: Conv2d,
}

impl DenseBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        ch: usize,
        growth: usize,
        layers: usize,
        rng: &mut SeededRng,
    ) -> Self {
        let convs = (0..layers)
            .map(|j| Conv2d::new(store, &format!("{name}.c{j}"), ch + j * growth, growth, 3, true, Init::DEFAULT, rng))
            .collect();
        let fuse = Conv2d::new(store, &format!("{name}.fuse"), ch + layers * growth, ch, 3, true, Init::DEFAULT, rng);
        Self { layers: convs, fuse }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let mut feats = vec![x];
        for conv in &self.layers {
            let cat = if feats.len() == 1 { x } else { g.concat(&feats)? };
            let y = conv.forward(g, store, cat)?;
            feats.push(g.leaky_relu(y, LEAKY_SLOPE));
        }
        let cat = g.concat(&feats)?;
        let out = self.fuse.forward(g, store, cat)?;
        let out = g.scale(out, RESIDUAL_SCALE);
        g.add(x, out)
    }
}

/// Residual-in-residual dense block: three dense blocks in sequence with an
/// outer residual, `y = x + 0.2·(chain(x) − x)`. With every weight zero the
/// chain is the identity and so is the block.
#[derive(Debug, Clone)]
pub struct Rrdb {
    pub blocks: Vec<DenseBlock>,
}

impl Rrdb {
    pub fn new(store: &mut ParamStore, name: &str, ch: usize, growth: usize, layers: usize, rng: &mut SeededRng) -> Self {
        let blocks = (0..3)
            .map(|i| DenseBlock::new(store, &format!("{name}.rdb{i}"), ch, growth, layers, rng))
            .collect();
        Self { blocks }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        for b in &self.blocks {
            h = b.forward(g, store, h)?;
        }
        let d = g.sub(h, x)?;
        let d = g.scale(d, RESIDUAL_SCALE);
        g.add(x, d)
    }
}

/// `x + conv(LeakyReLU(conv(x)))`.
#[derive(Debug, Clone)]
pub struct ResBlock {
    pub c1: Conv2d,
    pub c2: Conv2d,
}

impl ResBlock {
    pub fn new(store: &mut ParamStore, name: &str, ch: usize, rng: &mut SeededRng) -> Self {
        Self {
            c1: Conv2d::new(store, &format!("{name}.c1"), ch, ch, 3, true, Init::DEFAULT, rng),
            c2: Conv2d::new(store, &format!("{name}.c2"), ch, ch, 3, true, Init::DEFAULT, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.c1.forward(g, store, x)?;
        let h = g.leaky_relu(h, LEAKY_SLOPE);
        let h = self.c2.forward(g, store, h)?;
        g.add(x, h)
    }
}

/// Degradation-aware 3×3 convolution: each output channel's kernel is scaled
/// by `1 + m_o` where `m = dense(v)`.
#[derive(Debug, Clone)]
pub struct DaConv {
    pub conv: Conv2d,
    pub bias: ParamId,
    pub modulation: Dense,
}

impl DaConv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        embed: usize,
        modulation_init: Init,
        rng: &mut SeededRng,
    ) -> Self {
        let conv = Conv2d::new(store, &format!("{name}.conv"), in_ch, out_ch, 3, false, Init::DEFAULT, rng);
        let bias = store.add(format!("{name}.b"), &[out_ch], vec![0.0; out_ch]);
        let modulation = Dense::new(store, &format!("{name}.mod"), embed, out_ch, modulation_init, rng);
        Self { conv, bias, modulation }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, v: Var) -> Result<Var> {
        let m = self.modulation.forward(g, store, v)?;
        let s = g.add_const(m, 1.0);
        // Scaling a kernel's output channel is the same as scaling that
        // kernel before convolving, since the bias is added afterwards.
        let y = self.conv.forward(g, store, x)?;
        let y = g.scale_channels(y, s)?;
        let b = g.param(store, self.bias);
        g.add_channel_bias(y, b)
    }
}
