//! Conditional diffusion at toy scale: cosine noise schedule, forward
//! corruption, x₀-parameterized reverse sampling, timestep and degradation
//! embeddings, and a small DAConv denoiser with its consistency decoder.

use std::path::Path;

use crate::degradation::{degrade, sample_blur, BlurMode, DegradationSpec};
use crate::error::{bail, Error, Result};
use crate::nn::checkpoint::{self, Meta};
use crate::nn::{
    AdamState, Conv2d, DaConv, Dense, Graph, Init, ParamStore, Rrdb, Tensor, Var, LEAKY_SLOPE,
};
use crate::scene::{gen_scene, SceneContent, SceneSpec};
use crate::{Raster, SeededRng};

/// Default number of diffusion steps.
pub const DEFAULT_STEPS: usize = 1000;
/// Default cosine-schedule offset.
pub const DEFAULT_OFFSET: f64 = 0.008;
/// Range that every per-step α is clipped to.
pub const ALPHA_CLIP: (f64, f64) = (0.001, 0.9999);
/// Default weight of the contrastive term in the total loss.
pub const DEFAULT_LAMBDA_CONTRAST: f64 = 0.01;
/// Default width of the degradation embedding.
pub const DEFAULT_EMBED_WIDTH: usize = 64;
pub const EMA_DECAY: f64 = 0.999;

/// `α_t` for `t = 1..=T` and `ᾱ_t` for `t = 0..=T`, with `ᾱ_t = Π_{s≤t} α_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Schedule from explicit per-step α values (each in (0, 1]).
    pub fn from_alphas(alphas: Vec<f64>) -> Result<Self> {
        if alphas.is_empty() {
            bail!(Parameter, "a schedule needs at least one step");
        }
        if alphas.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
            bail!(Parameter, "every α must lie in (0, 1]");
        }
        let mut alpha_bars = Vec::with_capacity(alphas.len() + 1);
        alpha_bars.push(1.0);
        for a in &alphas {
            alpha_bars.push(alpha_bars.last().unwrap() * a);
        }
        Ok(Self { alphas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.alphas.len()
    }

    /// `α_t`, `1 ≤ t ≤ T`.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// `ᾱ_t`, `0 ≤ t ≤ T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            bail!(Parameter, "timestep {t} outside [1, {}]", self.steps());
        }
        Ok(())
    }

    /// Posterior variance `σ_t² = (1−ᾱ_{t−1})(1−α_t)/(1−ᾱ_t)`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        let (a, ab, ab_prev) = (self.alpha(t), self.alpha_bar(t), self.alpha_bar(t - 1));
        if ab >= 1.0 {
            return 0.0;
        }
        (1.0 - ab_prev) * (1.0 - a) / (1.0 - ab)
    }

    /// Coefficients `(c₀, c_t)` of the posterior mean `c₀·x̂₀ + c_t·x_t`.
    pub fn posterior_coefficients(&self, t: usize) -> (f64, f64) {
        let (a, ab, ab_prev) = (self.alpha(t), self.alpha_bar(t), self.alpha_bar(t - 1));
        if ab >= 1.0 {
            return (0.0, 1.0);
        }
        (ab_prev.sqrt() * (1.0 - a) / (1.0 - ab), a.sqrt() * (1.0 - ab_prev) / (1.0 - ab))
    }
}

/// Cosine schedule `ᾱ(t) = f(t)/f(0)`, `f(t) = cos²(((t/T + s)/(1+s))·π/2)`,
/// converted to per-step α and clipped to [`ALPHA_CLIP`].
pub fn cosine_schedule(steps: usize, offset: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        bail!(Parameter, "T must be at least 1");
    }
    if !(offset > 0.0) {
        bail!(Parameter, "schedule offset must be positive");
    }
    let f = |t: usize| {
        let x = ((t as f64 / steps as f64 + offset) / (1.0 + offset)) * std::f64::consts::FRAC_PI_2;
        x.cos().powi(2)
    };
    let f0 = f(0);
    let alphas = (1..=steps)
        .map(|t| {
            let a = (f(t) / f0) / (f(t - 1) / f0);
            a.clamp(ALPHA_CLIP.0, ALPHA_CLIP.1)
        })
        .collect();
    NoiseSchedule::from_alphas(alphas)
}

fn combine(a: &Raster, ca: f64, b: &Raster, cb: f64) -> Result<Raster> {
    a.ensure_same_shape(b, "diffusion step")?;
    let mut out = a.clone();
    for (o, (x, y)) in out.data_mut().iter_mut().zip(a.data().iter().zip(b.data())) {
        *o = ca * x + cb * y;
    }
    Ok(out)
}

fn noise_like(img: &Raster, rng: &mut SeededRng) -> Raster {
    let (c, h, w) = img.shape();
    Raster::new(c, h, w, rng.normals(c * h * w), img.band_meta().to_vec()).expect("shape of a valid raster")
}

/// `x_t = √ᾱ_t·x₀ + √(1−ᾱ_t)·ε`.
pub fn forward_marginal(x0: &Raster, t: usize, eps: &Raster, sched: &NoiseSchedule) -> Result<Raster> {
    sched.check_t(t)?;
    let ab = sched.alpha_bar(t);
    combine(x0, ab.sqrt(), eps, (1.0 - ab).sqrt())
}

/// `x_t = √α_t·x_{t−1} + √(1−α_t)·ε` with fresh standard-normal ε.
pub fn forward_step(x_prev: &Raster, t: usize, sched: &NoiseSchedule, rng: &mut SeededRng) -> Result<Raster> {
    sched.check_t(t)?;
    let a = sched.alpha(t);
    let eps = noise_like(x_prev, rng);
    combine(x_prev, a.sqrt(), &eps, (1.0 - a).sqrt())
}

/// One ancestral step from the x₀ prediction. No noise is added at `t = 1`.
pub fn reverse_step(
    x_t: &Raster,
    t: usize,
    x0_pred: &Raster,
    sched: &NoiseSchedule,
    rng: &mut SeededRng,
) -> Result<Raster> {
    sched.check_t(t)?;
    let (c0, ct) = sched.posterior_coefficients(t);
    let mut mean = combine(x0_pred, c0, x_t, ct)?;
    let var = sched.posterior_variance(t);
    if t > 1 && var > 0.0 {
        let s = var.sqrt();
        for v in mean.data_mut() {
            *v += s * rng.normal();
        }
    }
    Ok(mean)
}

/// Conditioning passed to a denoiser: spatial features `u`, degradation
/// embedding `v` and the low-resolution observation.
#[derive(Debug, Clone, Default)]
pub struct Conditioning {
    pub u: Option<Tensor>,
    pub v: Option<Vec<f64>>,
    pub lr: Option<Raster>,
}

/// Maps `(x_t, t, conditioning)` to a prediction of `x₀` of the same shape.
pub trait Denoiser {
    fn predict(&self, x_t: &Raster, t: usize, cond: &Conditioning) -> Result<Raster>;
}

impl<F> Denoiser for F
where
    F: Fn(&Raster, usize, &Conditioning) -> Result<Raster>,
{
    fn predict(&self, x_t: &Raster, t: usize, cond: &Conditioning) -> Result<Raster> {
        self(x_t, t, cond)
    }
}

/// Ancestral sampling from `x_T ~ N(0, I)` of the given `(C, H, W)` shape.
pub fn sample<D: Denoiser + ?Sized>(
    denoiser: &D,
    cond: &Conditioning,
    sched: &NoiseSchedule,
    rng: &mut SeededRng,
    shape: (usize, usize, usize),
) -> Result<Raster> {
    let (c, h, w) = shape;
    let mut x = Raster::from_vec(c, h, w, rng.normals(c * h * w))?;
    for t in (1..=sched.steps()).rev() {
        let x0 = denoiser.predict(&x, t, cond)?;
        if x0.shape() != x.shape() {
            bail!(Dimension, "denoiser returned {:?} for input {:?}", x0.shape(), x.shape());
        }
        x = reverse_step(&x, t, &x0, sched, rng)?;
    }
    Ok(x)
}

/// Interleaved `(sin(tω_0), cos(tω_0), sin(tω_1), …)` with
/// `ω_d = 10000^(−2d/dim)`.
pub fn timestep_embedding(t: f64, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || dim % 2 != 0 {
        bail!(Parameter, "embedding width must be even and positive, got {dim}");
    }
    let mut out = Vec::with_capacity(dim);
    for d in 0..dim / 2 {
        let w = 10000f64.powf(-2.0 * d as f64 / dim as f64);
        out.push((t * w).sin());
        out.push((t * w).cos());
    }
    Ok(out)
}

/// Exponential moving average of a parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaState {
    pub decay: f64,
    pub shadow: Vec<Vec<f64>>,
}

impl EmaState {
    pub fn new(store: &ParamStore, decay: f64) -> Self {
        Self { decay, shadow: store.iter().map(|p| p.value.clone()).collect() }
    }

    /// `shadow ← decay·shadow + (1 − decay)·live`.
    pub fn update(&mut self, store: &ParamStore) -> Result<()> {
        if store.len() != self.shadow.len() {
            bail!(Dimension, "EMA tracks {} tensors, store has {}", self.shadow.len(), store.len());
        }
        for (s, p) in self.shadow.iter_mut().zip(store.iter()) {
            if s.len() != p.value.len() {
                bail!(Dimension, "EMA shadow of {} has the wrong length", p.name);
            }
            for (a, b) in s.iter_mut().zip(&p.value) {
                *a = self.decay * *a + (1.0 - self.decay) * b;
            }
        }
        Ok(())
    }

    /// Copies the shadow values into `store`.
    pub fn copy_to(&self, store: &mut ParamStore) {
        for (s, p) in self.shadow.iter().zip(store.iter_mut()) {
            p.value.copy_from_slice(s);
        }
    }
}

/// Conv stack → global average pool → dense projection.
#[derive(Debug, Clone)]
pub struct DegradationEncoder {
    pub convs: Vec<Conv2d>,
    pub proj: Dense,
}

impl DegradationEncoder {
    pub fn new(store: &mut ParamStore, name: &str, in_ch: usize, width: usize, embed: usize, rng: &mut SeededRng) -> Self {
        let convs = vec![
            Conv2d::new(store, &format!("{name}.c0"), in_ch, width, 3, true, Init::DEFAULT, rng),
            Conv2d::new(store, &format!("{name}.c1"), width, width, 3, true, Init::DEFAULT, rng),
            Conv2d::new(store, &format!("{name}.c2"), width, width, 3, true, Init::DEFAULT, rng),
        ];
        let proj = Dense::new(store, &format!("{name}.proj"), width, embed, Init::DEFAULT, rng);
        Self { convs, proj }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        for c in &self.convs {
            h = c.forward(g, store, h)?;
            h = g.leaky_relu(h, LEAKY_SLOPE);
        }
        let pooled = g.global_avg_pool(h)?;
        self.proj.forward(g, store, pooled)
    }
}

/// Embeds a raster with a standalone encoder.
pub fn degradation_encode(x_lr: &Raster, enc: &DegradationEncoder, store: &ParamStore) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_raster(x_lr));
    let v = enc.forward(&mut g, store, x)?;
    Ok(g.value(v).data.clone())
}

/// `ℓ1(x̂₀, x₀) + ℓ1(coarse, x₀) + λ·contrast`.
pub fn total_loss(
    g: &mut Graph,
    x0: Var,
    x0_pred: Var,
    coarse: Option<Var>,
    contrast: Option<Var>,
    lambda_contrast: f64,
) -> Result<Var> {
    let mut loss = g.l1_loss(x0_pred, x0)?;
    if let Some(c) = coarse {
        let l = g.l1_loss(c, x0)?;
        loss = g.add(loss, l)?;
    }
    if let Some(c) = contrast {
        let l = g.scale(c, lambda_contrast);
        loss = g.add(loss, l)?;
    }
    Ok(loss)
}

/// Architecture of the toy conditional model.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub channels: usize,
    /// Super-resolution factor; also the pixel-folding factor.
    pub scale: usize,
    pub width: usize,
    pub rrdb_blocks: usize,
    pub dense_growth: usize,
    pub dense_layers: usize,
    pub embed: usize,
    pub time_dim: usize,
    pub blocks: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            channels: 1,
            scale: 2,
            width: 32,
            rrdb_blocks: 2,
            dense_growth: 8,
            dense_layers: 2,
            embed: DEFAULT_EMBED_WIDTH,
            time_dim: 32,
            blocks: 4,
        }
    }
}

impl ToyConfig {
    fn to_meta(&self, m: &mut Meta) {
        for (k, v) in [
            ("channels", self.channels),
            ("scale", self.scale),
            ("width", self.width),
            ("rrdb_blocks", self.rrdb_blocks),
            ("dense_growth", self.dense_growth),
            ("dense_layers", self.dense_layers),
            ("embed", self.embed),
            ("time_dim", self.time_dim),
            ("blocks", self.blocks),
        ] {
            m.insert(format!("toy.{k}"), v.to_string());
        }
    }

    fn from_meta(m: &Meta) -> Result<Self> {
        let get = |k: &str| -> Result<usize> {
            m.get(&format!("toy.{k}"))
                .ok_or_else(|| Error::Format(format!("checkpoint lacks toy.{k}")))?
                .parse()
                .map_err(|_| Error::Format(format!("bad toy.{k}")))
        };
        Ok(Self {
            channels: get("channels")?,
            scale: get("scale")?,
            width: get("width")?,
            rrdb_blocks: get("rrdb_blocks")?,
            dense_growth: get("dense_growth")?,
            dense_layers: get("dense_layers")?,
            embed: get("embed")?,
            time_dim: get("time_dim")?,
            blocks: get("blocks")?,
        })
    }
}

/// Toy conditional SR model. The LR image feeds an RRDB encoder (spatial
/// features `u`) and a degradation encoder (`v`). The denoiser folds `x_t`
/// to the LR grid, concatenates `u` at its first layer only, and runs DAConv
/// blocks modulated by `v` with a timestep bias. The consistency decoder maps
/// `u` to a coarse HR estimate.
#[derive(Debug, Clone)]
pub struct ToyModel {
    pub store: ParamStore,
    pub config: ToyConfig,
    u_head: Conv2d,
    u_blocks: Vec<Rrdb>,
    pub encoder: DegradationEncoder,
    d_head: Conv2d,
    d_blocks: Vec<DaConv>,
    d_time: Vec<Dense>,
    d_tail: Conv2d,
    c_da: DaConv,
    c_tail: Conv2d,
}

impl ToyModel {
    pub fn new(config: ToyConfig, seed: u64) -> Result<Self> {
        if config.channels == 0 || config.scale == 0 || config.width == 0 || config.time_dim % 2 != 0 {
            bail!(Parameter, "invalid toy model configuration");
        }
        let mut rng = SeededRng::new(seed);
        let mut st = ParamStore::new();
        let (c, f, r2) = (config.channels, config.width, config.scale * config.scale);
        let u_head = Conv2d::new(&mut st, "u.head", c, f, 3, true, Init::DEFAULT, &mut rng);
        let u_blocks = (0..config.rrdb_blocks)
            .map(|i| Rrdb::new(&mut st, &format!("u.rrdb{i}"), f, config.dense_growth, config.dense_layers, &mut rng))
            .collect();
        let encoder = DegradationEncoder::new(&mut st, "enc", c, f, config.embed, &mut rng);
        let d_head = Conv2d::new(&mut st, "den.head", c * r2 + f, f, 3, true, Init::DEFAULT, &mut rng);
        let mod_init = Init::Uniform { gain: 0.1 };
        let d_blocks = (0..config.blocks)
            .map(|i| DaConv::new(&mut st, &format!("den.da{i}"), f, f, config.embed, mod_init, &mut rng))
            .collect();
        let d_time = (0..config.blocks)
            .map(|i| Dense::new(&mut st, &format!("den.time{i}"), config.time_dim, f, Init::DEFAULT, &mut rng))
            .collect();
        let d_tail = Conv2d::new(&mut st, "den.tail", f, c * r2, 3, true, Init::Zero, &mut rng);
        let c_da = DaConv::new(&mut st, "dec.da", f, f, config.embed, mod_init, &mut rng);
        let c_tail = Conv2d::new(&mut st, "dec.tail", f, c * r2, 3, true, Init::Zero, &mut rng);
        Ok(Self { store: st, config, u_head, u_blocks, encoder, d_head, d_blocks, d_time, d_tail, c_da, c_tail })
    }

    /// `(u, v)` from the LR observation.
    pub fn features(&self, g: &mut Graph, lr: Var) -> Result<(Var, Var)> {
        let st = &self.store;
        let mut u = self.u_head.forward(g, st, lr)?;
        u = g.leaky_relu(u, LEAKY_SLOPE);
        for b in &self.u_blocks {
            u = b.forward(g, st, u)?;
        }
        let v = self.encoder.forward(g, st, lr)?;
        Ok((u, v))
    }

    /// x̂₀ from `x_t` (HR grid), timestep `t`, features and the LR input.
    pub fn denoise(&self, g: &mut Graph, x_t: Var, t: usize, u: Var, v: Var, lr: Var) -> Result<Var> {
        let st = &self.store;
        let r = self.config.scale;
        let xf = g.pixel_fold(x_t, r)?;
        let inp = g.concat(&[xf, u])?;
        let mut h = self.d_head.forward(g, st, inp)?;
        h = g.leaky_relu(h, LEAKY_SLOPE);
        let temb = g.constant(Tensor::vector(timestep_embedding(t as f64, self.config.time_dim)?));
        for (da, tm) in self.d_blocks.iter().zip(&self.d_time) {
            let y = da.forward(g, st, h, v)?;
            let tb = tm.forward(g, st, temb)?;
            let y = g.add_channel_bias(y, tb)?;
            let y = g.leaky_relu(y, LEAKY_SLOPE);
            h = g.add(h, y)?;
        }
        let out = self.d_tail.forward(g, st, h)?;
        let out = g.pixel_unfold(out, r)?;
        let base = g.upsample_bicubic(lr, r)?;
        g.add(base, out)
    }

    /// Coarse HR estimate from the spatial features alone.
    pub fn decode(&self, g: &mut Graph, u: Var, v: Var, lr: Var) -> Result<Var> {
        let st = &self.store;
        let h = self.c_da.forward(g, st, u, v)?;
        let h = g.leaky_relu(h, LEAKY_SLOPE);
        let out = self.c_tail.forward(g, st, h)?;
        let out = g.pixel_unfold(out, self.config.scale)?;
        let base = g.upsample_bicubic(lr, self.config.scale)?;
        g.add(base, out)
    }

    /// Consistency-decoder super-resolution of an LR raster.
    pub fn super_resolve(&self, lr: &Raster) -> Result<Raster> {
        let mut g = Graph::new();
        let l = g.constant(Tensor::from_raster(lr));
        let (u, v) = self.features(&mut g, l)?;
        let out = self.decode(&mut g, u, v, l)?;
        g.value(out).to_raster(Some(lr))
    }

    /// Ancestral sampling conditioned on `lr`.
    pub fn sample(&self, lr: &Raster, sched: &NoiseSchedule, rng: &mut SeededRng) -> Result<Raster> {
        let mut g = Graph::new();
        let l = g.constant(Tensor::from_raster(lr));
        let (u, v) = self.features(&mut g, l)?;
        let cond = Conditioning {
            u: Some(g.value(u).clone()),
            v: Some(g.value(v).data.clone()),
            lr: Some(lr.clone()),
        };
        let den = |x: &Raster, t: usize, c: &Conditioning| -> Result<Raster> {
            let mut g = Graph::new();
            let xv = g.constant(Tensor::from_raster(x));
            let uv = g.constant(c.u.clone().expect("set above"));
            let vv = g.constant(Tensor::vector(c.v.clone().expect("set above")));
            let lv = g.constant(Tensor::from_raster(c.lr.as_ref().expect("set above")));
            let out = self.denoise(&mut g, xv, t, uv, vv, lv)?;
            g.value(out).to_raster(Some(x))
        };
        let r = self.config.scale;
        sample(&den, &cond, sched, rng, (lr.bands(), lr.height() * r, lr.width() * r))
    }

    pub fn save(&self, path: &Path, extra: &Meta) -> Result<()> {
        let mut meta = extra.clone();
        meta.insert("kind".into(), "diffusion-toy".into());
        self.config.to_meta(&mut meta);
        checkpoint::save(path, &self.store, &meta)
    }

    pub fn load(path: &Path) -> Result<(Self, Meta)> {
        let meta = checkpoint::load_meta(path)?;
        if meta.get("kind").map(String::as_str) != Some("diffusion-toy") {
            bail!(Format, "{} is not a toy diffusion checkpoint", path.display());
        }
        let mut model = Self::new(ToyConfig::from_meta(&meta)?, 0)?;
        checkpoint::load_into(path, &mut model.store)?;
        Ok((model, meta))
    }
}

/// Maps 0–255 values to [−1, 1].
pub fn to_unit(img: &Raster) -> Raster {
    img.map(|v| v / 127.5 - 1.0)
}

/// Inverse of [`to_unit`].
pub fn from_unit(img: &Raster) -> Raster {
    img.map(|v| (v + 1.0) * 127.5)
}

/// What the toy training loop optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToyObjective {
    /// Denoiser, consistency decoder and contrastive terms.
    Full,
    /// Consistency decoder (and contrastive term) only: a direct SR proxy.
    Consistency,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyTrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub schedule_steps: usize,
    /// HR patch side.
    pub patch: usize,
    pub blur: BlurMode,
    /// Noise σ on the 0–255 scale is drawn uniformly from `[0, noise_max]`.
    pub noise_max: f64,
    pub lambda_contrast: f64,
    pub objective: ToyObjective,
    pub seed: u64,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: 1e-3,
            schedule_steps: 64,
            patch: 32,
            blur: BlurMode::Train,
            noise_max: 0.0,
            lambda_contrast: DEFAULT_LAMBDA_CONTRAST,
            objective: ToyObjective::Full,
            seed: 0,
        }
    }
}

/// HR scene and its degraded LR observation, both on the [−1, 1] scale.
#[derive(Debug, Clone)]
pub struct ToyPair {
    pub hr: Raster,
    pub lr: Raster,
}

const TOY_CONTENTS: [SceneContent; 3] = [SceneContent::Mixture, SceneContent::Rectangles, SceneContent::Blobs];

/// Draws one synthetic HR patch and degrades it with a blur from `mode`.
pub fn toy_pair(
    channels: usize,
    patch: usize,
    scale: usize,
    mode: BlurMode,
    noise_max: f64,
    rng: &mut SeededRng,
) -> Result<ToyPair> {
    let content = TOY_CONTENTS[rng.below(TOY_CONTENTS.len())];
    let mut spec = SceneSpec::new(patch, channels, content, rng.next_u64());
    spec.texture = 1.0;
    let hr = gen_scene(&spec)?;
    let spec = DegradationSpec {
        blur: Some(sample_blur(rng, mode)),
        scale,
        noise_sigma: if noise_max > 0.0 { rng.uniform_range(0.0, noise_max) } else { 0.0 },
        gammas: None,
        ..Default::default()
    };
    let lr = degrade(&hr, &spec, rng)?;
    Ok(ToyPair { hr: to_unit(&hr), lr: to_unit(&lr) })
}

fn crop_tensor(t: &Tensor, y0: usize, x0: usize, size: usize) -> Result<Tensor> {
    let (c, _, w) = t.chw()?;
    let h = t.shape[1];
    let mut data = Vec::with_capacity(c * size * size);
    for b in 0..c {
        for y in y0..y0 + size {
            let row = (b * h + y) * w;
            data.extend_from_slice(&t.data[row + x0..row + x0 + size]);
        }
    }
    Tensor::new(vec![c, size, size], data)
}

/// Contrastive term: two crops of one LR image are positives, a crop of a
/// differently degraded image is the negative.
fn contrast_term(model: &ToyModel, g: &mut Graph, a: &Raster, b: &Raster, rng: &mut SeededRng) -> Result<Var> {
    let n = a.height().min(a.width());
    let size = (n / 2).max(1);
    let mut crop = |img: &Raster, rng: &mut SeededRng| -> Result<Var> {
        let t = Tensor::from_raster(img);
        let y0 = rng.below(img.height() - size + 1);
        let x0 = rng.below(img.width() - size + 1);
        Ok(g.constant(crop_tensor(&t, y0, x0, size)?))
    };
    let (q, p, ng) = (crop(a, rng)?, crop(a, rng)?, crop(b, rng)?);
    let st = &model.store;
    let vq = model.encoder.forward(g, st, q)?;
    let vp = model.encoder.forward(g, st, p)?;
    let vn = model.encoder.forward(g, st, ng)?;
    g.infonce(vq, vp, &[vn], 0.5)
}

#[derive(Debug, Clone)]
pub struct ToyTrainReport {
    pub losses: Vec<f64>,
    pub ema: EmaState,
}

/// Trains `model` on freshly drawn synthetic pairs; returns per-step losses
/// and the EMA of the weights.
pub fn train_toy(model: &mut ToyModel, cfg: &ToyTrainConfig) -> Result<ToyTrainReport> {
    if cfg.steps == 0 || cfg.patch % model.config.scale != 0 {
        bail!(Parameter, "need at least one step and a patch divisible by the scale");
    }
    let sched = cosine_schedule(cfg.schedule_steps, DEFAULT_OFFSET)?;
    let mut rng = SeededRng::new(cfg.seed);
    let mut adam = AdamState::new(&model.store, cfg.lr);
    let mut ema = EmaState::new(&model.store, EMA_DECAY);
    let mut losses = Vec::with_capacity(cfg.steps);
    let (c, r) = (model.config.channels, model.config.scale);
    for _ in 0..cfg.steps {
        let pair = toy_pair(c, cfg.patch, r, cfg.blur, cfg.noise_max, &mut rng)?;
        let mut g = Graph::new();
        let x0 = g.constant(Tensor::from_raster(&pair.hr));
        let lr = g.constant(Tensor::from_raster(&pair.lr));
        let (u, v) = model.features(&mut g, lr)?;
        let coarse = model.decode(&mut g, u, v, lr)?;
        let contrast = if cfg.lambda_contrast > 0.0 {
            let other = toy_pair(c, cfg.patch, r, cfg.blur, cfg.noise_max, &mut rng)?;
            Some(contrast_term(model, &mut g, &pair.lr, &other.lr, &mut rng)?)
        } else {
            None
        };
        let loss = match cfg.objective {
            ToyObjective::Full => {
                let t = 1 + rng.below(sched.steps());
                let eps = noise_like(&pair.hr, &mut rng);
                let xt = forward_marginal(&pair.hr, t, &eps, &sched)?;
                let xt = g.constant(Tensor::from_raster(&xt));
                let pred = model.denoise(&mut g, xt, t, u, v, lr)?;
                total_loss(&mut g, x0, pred, Some(coarse), contrast, cfg.lambda_contrast)?
            }
            ToyObjective::Consistency => {
                let l = g.l1_loss(coarse, x0)?;
                match contrast {
                    Some(ct) => {
                        let s = g.scale(ct, cfg.lambda_contrast);
                        g.add(l, s)?
                    }
                    None => l,
                }
            }
        };
        let value = g.value(loss).item();
        if !value.is_finite() {
            bail!(Degenerate, "toy training loss became non-finite");
        }
        model.store.zero_grad();
        g.backward(loss, &mut model.store)?;
        adam.step(&mut model.store);
        ema.update(&model.store)?;
        losses.push(value);
    }
    Ok(ToyTrainReport { losses, ema })
}
