//! GLP-inspired neural fusion of a low-resolution band group with an RGB
//! guide on an `r`× finer grid.
//!
//! The network follows the generalized Laplacian pyramid: a learnable convex
//! mix of the guide gives a pan proxy `p`; per band, an MTF-matched low-pass
//! `p̃_i` gives the detail `Δ_i = p − p̃_i`. DetailNet refines each detail,
//! GainNet predicts a per-pixel injection gain around one, and RefineNet
//! corrects the stacked result. All three start from zero output layers, so
//! an untrained model is exactly unit-gain MTF-GLP.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{bail, Error, Result};
use crate::metrics::ergas;
use crate::nn::checkpoint::{self, Meta};
use crate::nn::{
    clip_grad_norm, cosine_lr, AdamState, Conv2d, Graph, Init, ParamId, ParamStore, ResBlock, Rrdb,
    Tensor, Var, LEAKY_SLOPE,
};
use crate::raster::{boxcar_downsample, BandSpec};
use crate::{Raster, SeededRng};

/// Sentinel-2 resolution groups and their fusion ratios to 2.5 m.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BandGroup {
    M10,
    M20,
    M60,
}

impl BandGroup {
    pub fn bands(self) -> &'static [&'static str] {
        match self {
            BandGroup::M10 => &["B2", "B3", "B4", "B8"],
            BandGroup::M20 => &["B5", "B6", "B7", "B8A", "B11", "B12"],
            BandGroup::M60 => &["B9", "B10"],
        }
    }

    pub fn ratio(self) -> usize {
        match self {
            BandGroup::M10 => 4,
            BandGroup::M20 => 8,
            BandGroup::M60 => 24,
        }
    }

    pub fn gsd(self) -> f64 {
        match self {
            BandGroup::M10 => 10.0,
            BandGroup::M20 => 20.0,
            BandGroup::M60 => 60.0,
        }
    }

    pub fn band_specs(self) -> Vec<BandSpec> {
        self.bands().iter().map(|n| BandSpec::new(*n, self.gsd())).collect()
    }
}

impl FromStr for BandGroup {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "10m" => Ok(BandGroup::M10),
            "20m" => Ok(BandGroup::M20),
            "60m" => Ok(BandGroup::M60),
            _ => bail!(Parameter, "unknown band group `{s}` (expected 10m, 20m or 60m)"),
        }
    }
}

impl fmt::Display for BandGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BandGroup::M10 => "10m",
            BandGroup::M20 => "20m",
            BandGroup::M60 => "60m",
        };
        f.write_str(s)
    }
}

/// Gaussian σ (fine pixels) whose continuous transfer equals `gnyq` at the
/// coarse Nyquist frequency `1/(2r)`.
pub fn mtf_sigma(gnyq: f64, ratio: usize) -> Result<f64> {
    if !(gnyq > 0.0 && gnyq < 1.0) {
        bail!(Parameter, "GNyq must lie in (0, 1), got {gnyq}");
    }
    if ratio == 0 {
        bail!(Parameter, "ratio must be at least 1");
    }
    Ok(ratio as f64 / std::f64::consts::PI * (2.0 * (1.0 / gnyq).ln()).sqrt())
}

/// Pixelwise convex combination of three guide bands with weights
/// `softmax(logits)`.
pub fn mix_pan(rgb: &Raster, logits: &[f64; 3]) -> Result<Raster> {
    if rgb.bands() != 3 {
        bail!(Dimension, "pan mixer needs 3 guide bands, got {}", rgb.bands());
    }
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_raster(rgb));
    let l = g.constant(Tensor::vector(logits.to_vec()));
    let w = g.softmax(l)?;
    let p = g.weighted_channel_sum(x, w)?;
    let mut meta = rgb.band_meta()[0].clone();
    meta.name = "pan".into();
    g.value(p).to_raster(None)?.with_band_meta(vec![meta])
}

fn glp_low_var(g: &mut Graph, p: Var, sigma: Var, ratio: usize) -> Result<Var> {
    let b = g.gaussian_blur(p, sigma)?;
    let d = g.avg_pool(b, ratio)?;
    g.upsample_bicubic(d, ratio)
}

/// MTF low-pass `p̃ = bicubic_up(area_down(blur(p, σ)))` and detail `p − p̃`
/// of a single-band raster.
pub fn glp_detail(p: &Raster, sigma: f64, ratio: usize) -> Result<(Raster, Raster)> {
    if p.bands() != 1 {
        bail!(Dimension, "GLP detail expects one band, got {}", p.bands());
    }
    if !sigma.is_finite() || sigma < 0.0 {
        bail!(Parameter, "blur σ must be finite and non-negative");
    }
    let mut g = Graph::new();
    let pv = g.constant(Tensor::from_raster(p));
    let s = g.constant(Tensor::scalar(sigma));
    let low = glp_low_var(&mut g, pv, s, ratio)?;
    let delta = g.sub(pv, low)?;
    let meta = p.band_meta().to_vec();
    Ok((
        g.value(low).to_raster(None)?.with_band_meta(meta.clone())?,
        g.value(delta).to_raster(None)?.with_band_meta(meta)?,
    ))
}

/// Bicubic upsampling of every band by an integer factor.
pub fn upsample(ms: &Raster, ratio: usize) -> Result<Raster> {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_raster(ms));
    let u = g.upsample_bicubic(x, ratio)?;
    let mut r = g.value(u).to_raster(Some(ms))?;
    r.scale_gsd(1.0 / ratio as f64);
    Ok(r)
}

/// Widths of the three sub-networks.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    pub detail_width: usize,
    pub detail_blocks: usize,
    pub dense_growth: usize,
    pub dense_layers: usize,
    pub gain_width: usize,
    pub refine_width: usize,
    pub refine_blocks: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            detail_width: 32,
            detail_blocks: 2,
            dense_growth: 9,
            dense_layers: 3,
            gain_width: 16,
            refine_width: 32,
            refine_blocks: 2,
        }
    }
}

impl FusionConfig {
    fn to_meta(&self, meta: &mut Meta) {
        let fields = [
            ("detail_width", self.detail_width),
            ("detail_blocks", self.detail_blocks),
            ("dense_growth", self.dense_growth),
            ("dense_layers", self.dense_layers),
            ("gain_width", self.gain_width),
            ("refine_width", self.refine_width),
            ("refine_blocks", self.refine_blocks),
        ];
        for (k, v) in fields {
            meta.insert(format!("net.{k}"), v.to_string());
        }
    }

    fn from_meta(meta: &Meta) -> Result<Self> {
        let get = |k: &str| -> Result<usize> {
            meta.get(&format!("net.{k}"))
                .ok_or_else(|| Error::Format(format!("checkpoint lacks net.{k}")))?
                .parse()
                .map_err(|_| Error::Format(format!("bad net.{k}")))
        };
        Ok(Self {
            detail_width: get("detail_width")?,
            detail_blocks: get("detail_blocks")?,
            dense_growth: get("dense_growth")?,
            dense_layers: get("dense_layers")?,
            gain_width: get("gain_width")?,
            refine_width: get("refine_width")?,
            refine_blocks: get("refine_blocks")?,
        })
    }
}

#[derive(Debug, Clone)]
struct DetailNet {
    head: Conv2d,
    blocks: Vec<Rrdb>,
    tail: Conv2d,
}

#[derive(Debug, Clone)]
struct GainNet {
    c1: Conv2d,
    c2: Conv2d,
}

#[derive(Debug, Clone)]
struct RefineNet {
    head: Conv2d,
    blocks: Vec<ResBlock>,
    tail: Conv2d,
}

/// Learnable state of one band-group fusion model.
#[derive(Debug, Clone)]
pub struct FusionParams {
    pub store: ParamStore,
    pub ratio: usize,
    pub bands: Vec<BandSpec>,
    pub config: FusionConfig,
    /// Network inputs are divided by this and outputs multiplied by it.
    pub value_scale: f64,
    mixer: ParamId,
    sigmas: ParamId,
    detail: DetailNet,
    gain: GainNet,
    refine: RefineNet,
}

impl FusionParams {
    /// Fresh model for `bands` at `ratio`. Mixer logits start equal, σ_i from
    /// each band's GNyq, and every sub-network's output layer at zero.
    pub fn new(bands: &[BandSpec], ratio: usize, config: FusionConfig, seed: u64) -> Result<Self> {
        if bands.is_empty() {
            bail!(Parameter, "a fusion model needs at least one band");
        }
        for b in bands {
            b.validate()?;
        }
        let c = bands.len();
        let mut rng = SeededRng::new(seed);
        let mut store = ParamStore::new();
        let mixer = store.add("mixer.logits", &[3], vec![0.0; 3]);
        let sig: Vec<f64> = bands.iter().map(|b| mtf_sigma(b.gnyq, ratio)).collect::<Result<_>>()?;
        let sigmas = store.add("mtf.sigma", &[c], sig);

        let fw = config.detail_width;
        let detail = DetailNet {
            head: Conv2d::new(&mut store, "detail.head", 1 + c, fw, 3, true, Init::DEFAULT, &mut rng),
            blocks: (0..config.detail_blocks)
                .map(|i| {
                    Rrdb::new(&mut store, &format!("detail.rrdb{i}"), fw, config.dense_growth, config.dense_layers, &mut rng)
                })
                .collect(),
            tail: Conv2d::new(&mut store, "detail.tail", fw, 1, 3, true, Init::Zero, &mut rng),
        };
        let gain = GainNet {
            c1: Conv2d::new(&mut store, "gain.c1", 3, config.gain_width, 3, true, Init::DEFAULT, &mut rng),
            c2: Conv2d::new(&mut store, "gain.c2", config.gain_width, 1, 1, true, Init::Zero, &mut rng),
        };
        let rw = config.refine_width;
        let refine = RefineNet {
            head: Conv2d::new(&mut store, "refine.head", c + 1, rw, 3, true, Init::DEFAULT, &mut rng),
            blocks: (0..config.refine_blocks)
                .map(|i| ResBlock::new(&mut store, &format!("refine.res{i}"), rw, &mut rng))
                .collect(),
            tail: Conv2d::new(&mut store, "refine.tail", rw, c, 3, true, Init::Zero, &mut rng),
        };
        let value_scale = bands.iter().map(|b| b.dynamic_range()).fold(0.0, f64::max);
        Ok(Self {
            store,
            ratio,
            bands: bands.to_vec(),
            config,
            value_scale,
            mixer,
            sigmas,
            detail,
            gain,
            refine,
        })
    }

    pub fn num_bands(&self) -> usize {
        self.bands.len()
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    pub fn mixer_logits(&self) -> [f64; 3] {
        let v = &self.store.get(self.mixer).value;
        [v[0], v[1], v[2]]
    }

    /// Convex guide weights `softmax(logits)`.
    pub fn mixer_weights(&self) -> [f64; 3] {
        let w = crate::nn::softmax(&self.mixer_logits());
        [w[0], w[1], w[2]]
    }

    pub fn mtf_sigmas(&self) -> &[f64] {
        &self.store.get(self.sigmas).value
    }

    /// Sets every sub-network parameter (not the mixer or σ) to zero.
    pub fn zero_networks(&mut self) {
        for p in self.store.iter_mut() {
            if ["detail.", "gain.", "refine."].iter().any(|s| p.name.starts_with(s)) {
                p.value.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    fn check_inputs(&self, ms: &Raster, guide: &Raster) -> Result<()> {
        if ms.bands() != self.num_bands() {
            bail!(Dimension, "model expects {} bands, input has {}", self.num_bands(), ms.bands());
        }
        if guide.bands() != 3 {
            bail!(Dimension, "guide must have 3 bands, has {}", guide.bands());
        }
        let r = self.ratio;
        if guide.height() != ms.height() * r || guide.width() != ms.width() * r {
            bail!(
                Dimension,
                "guide {}x{} is not {r}x the multispectral grid {}x{}",
                guide.height(),
                guide.width(),
                ms.height(),
                ms.width()
            );
        }
        Ok(())
    }

    /// Records the full fusion on `g`; `ms` is `[C, h, w]`, `guide` `[3, rh, rw]`.
    pub fn forward(&self, g: &mut Graph, ms: Var, guide: Var) -> Result<Var> {
        let st = &self.store;
        let r = self.ratio;
        let c = self.num_bands();
        let inv = 1.0 / self.value_scale;

        let xt = g.upsample_bicubic(ms, r)?;
        let logits = g.param(st, self.mixer);
        let w = g.softmax(logits)?;
        let p = g.weighted_channel_sum(guide, w)?;
        let sig = g.param(st, self.sigmas);
        let x_bar = g.channel_mean(xt)?;
        let xt_n = g.scale(xt, inv);

        let mut ys = Vec::with_capacity(c);
        let mut details = Vec::with_capacity(c);
        for i in 0..c {
            let s_i = g.element(sig, i)?;
            let p_low = glp_low_var(g, p, s_i, r)?;
            let delta = g.sub(p, p_low)?;

            // DetailNet([Δ_i, x̃]) → residual on Δ_i.
            let dn = g.scale(delta, inv);
            let inp = g.concat(&[dn, xt_n])?;
            let mut h = self.detail.head.forward(g, st, inp)?;
            h = g.leaky_relu(h, LEAKY_SLOPE);
            for b in &self.detail.blocks {
                h = b.forward(g, st, h)?;
            }
            let res = self.detail.tail.forward(g, st, h)?;
            let res = g.scale(res, self.value_scale);
            let d_hat = g.add(delta, res)?;

            // GainNet([p, p̃_i, x̄]) → g_i = 1 + Δg.
            let gin = g.concat(&[p, p_low, x_bar])?;
            let gin = g.scale(gin, inv);
            let gh = self.gain.c1.forward(g, st, gin)?;
            let gh = g.leaky_relu(gh, LEAKY_SLOPE);
            let dg = self.gain.c2.forward(g, st, gh)?;
            let gain = g.add_const(dg, 1.0);

            let x_i = g.select_channel(xt, i)?;
            let inj = g.mul(gain, d_hat)?;
            ys.push(g.add(x_i, inj)?);
            details.push(d_hat);
        }
        let y = g.concat(&ys)?;
        let dstack = g.concat(&details)?;
        let d_bar = g.channel_mean(dstack)?;

        // RefineNet([Y, Δ̄]).
        let rin = g.concat(&[y, d_bar])?;
        let rin = g.scale(rin, inv);
        let mut h = self.refine.head.forward(g, st, rin)?;
        h = g.leaky_relu(h, LEAKY_SLOPE);
        for b in &self.refine.blocks {
            h = b.forward(g, st, h)?;
        }
        let corr = self.refine.tail.forward(g, st, h)?;
        let corr = g.scale(corr, self.value_scale);
        g.add(y, corr)
    }

    pub fn save(&self, path: &Path, extra: &Meta) -> Result<()> {
        let mut meta = extra.clone();
        meta.insert("kind".into(), "fusion".into());
        meta.insert("ratio".into(), self.ratio.to_string());
        meta.insert("value_scale".into(), format!("{:e}", self.value_scale));
        let names: Vec<&str> = self.bands.iter().map(|b| b.name.as_str()).collect();
        meta.insert("bands".into(), names.join(","));
        let gnyq: Vec<String> = self.bands.iter().map(|b| format!("{:e}", b.gnyq)).collect();
        meta.insert("gnyq".into(), gnyq.join(","));
        let gsd: Vec<String> = self.bands.iter().map(|b| format!("{:e}", b.gsd)).collect();
        meta.insert("gsd".into(), gsd.join(","));
        self.config.to_meta(&mut meta);
        checkpoint::save(path, &self.store, &meta)
    }

    pub fn load(path: &Path) -> Result<(Self, Meta)> {
        let meta = checkpoint::load_meta(path)?;
        if meta.get("kind").map(String::as_str) != Some("fusion") {
            bail!(Format, "{} is not a fusion checkpoint", path.display());
        }
        let field = |k: &str| -> Result<&String> {
            meta.get(k).ok_or_else(|| Error::Format(format!("checkpoint lacks `{k}`")))
        };
        let ratio: usize = field("ratio")?.parse().map_err(|_| Error::Format("bad ratio".into()))?;
        let floats = |k: &str| -> Result<Vec<f64>> {
            field(k)?
                .split(',')
                .map(|v| v.parse::<f64>().map_err(|_| Error::Format(format!("bad `{k}` entry"))))
                .collect()
        };
        let names: Vec<&str> = field("bands")?.split(',').collect();
        let (gnyq, gsd) = (floats("gnyq")?, floats("gsd")?);
        if gnyq.len() != names.len() || gsd.len() != names.len() {
            bail!(Format, "band metadata lengths disagree");
        }
        let bands: Vec<BandSpec> = names
            .iter()
            .zip(gnyq.iter().zip(&gsd))
            .map(|(n, (&q, &s))| BandSpec::new(*n, s).with_gnyq(q))
            .collect();
        let mut params = Self::new(&bands, ratio, FusionConfig::from_meta(&meta)?, 0)?;
        params.value_scale = field("value_scale")?.parse().map_err(|_| Error::Format("bad value_scale".into()))?;
        checkpoint::load_into(path, &mut params.store)?;
        Ok((params, meta))
    }
}

/// Fuses `ms_lr` with `guide` (ratio× finer) using `params`.
pub fn fuse(ms_lr: &Raster, guide: &Raster, params: &FusionParams) -> Result<Raster> {
    params.check_inputs(ms_lr, guide)?;
    let mut g = Graph::new();
    let ms = g.constant(Tensor::from_raster(ms_lr));
    let gd = g.constant(Tensor::from_raster(guide));
    let out = params.forward(&mut g, ms, gd)?;
    let mut r = g.value(out).to_raster(Some(ms_lr))?;
    r.scale_gsd(1.0 / params.ratio as f64);
    Ok(r)
}

/// Inference on native-resolution bands with a super-resolved guide. The
/// computation is exactly [`fuse`]; the SR guide stands in for the native
/// RGB the model was trained with, and is low-passed by the same per-band
/// MTF kernels inside the detail extraction.
pub fn fuse_at_inference(ms_native: &Raster, sr_guide: &Raster, params: &FusionParams) -> Result<Raster> {
    fuse(ms_native, sr_guide, params)
}

/// Overlap-free tiled inference over `tile`×`tile` blocks of the
/// multispectral grid. Tiles are independent, so the result does not depend
/// on processing order; borders between tiles see reflected/zero padding.
pub fn fuse_tiled(ms: &Raster, guide: &Raster, params: &FusionParams, tile: usize) -> Result<Raster> {
    params.check_inputs(ms, guide)?;
    if tile == 0 {
        bail!(Parameter, "tile size must be positive");
    }
    let (c, h, w) = ms.shape();
    let r = params.ratio;
    if tile >= h && tile >= w {
        return fuse(ms, guide, params);
    }
    let mut out = Raster::zeros(c, h * r, w * r).with_band_meta(ms.band_meta().to_vec())?;
    out.scale_gsd(1.0 / r as f64);
    for ty in (0..h).step_by(tile) {
        for tx in (0..w).step_by(tile) {
            let (th, tw) = (tile.min(h - ty), tile.min(w - tx));
            let m = crop(ms, ty, tx, th, tw);
            let gd = crop(guide, ty * r, tx * r, th * r, tw * r);
            let f = fuse(&m, &gd, params)?;
            for b in 0..c {
                for y in 0..th * r {
                    for x in 0..tw * r {
                        out.set(b, ty * r + y, tx * r + x, f.get(b, y, x));
                    }
                }
            }
        }
    }
    Ok(out)
}

pub(crate) fn crop(img: &Raster, y0: usize, x0: usize, h: usize, w: usize) -> Raster {
    let c = img.bands();
    let mut data = Vec::with_capacity(c * h * w);
    for b in 0..c {
        for y in y0..y0 + h {
            let row = &img.band(b)[y * img.width()..(y + 1) * img.width()];
            data.extend_from_slice(&row[x0..x0 + w]);
        }
    }
    Raster::from_parts(c, h, w, data, img.band_meta().to_vec())
}

/// One training or evaluation example.
#[derive(Debug, Clone)]
pub struct FusionSample {
    pub ms_lr: Raster,
    pub guide: Raster,
    pub target: Option<Raster>,
}

impl FusionSample {
    pub fn new(ms_lr: Raster, guide: Raster, target: Option<Raster>) -> Result<Self> {
        if guide.height() % ms_lr.height() != 0
            || guide.width() % ms_lr.width() != 0
            || guide.height() / ms_lr.height() != guide.width() / ms_lr.width()
        {
            bail!(Dimension, "guide grid is not an integer multiple of the multispectral grid");
        }
        if let Some(t) = &target {
            if t.height() != guide.height() || t.width() != guide.width() || t.bands() != ms_lr.bands() {
                bail!(Dimension, "target must match the guide grid and the band count");
            }
        }
        Ok(Self { ms_lr, guide, target })
    }

    pub fn ratio(&self) -> usize {
        self.guide.height() / self.ms_lr.height()
    }

    /// Wald-protocol pair from native data: the bands are MTF-blurred and
    /// boxcar-downsampled by `ratio` to form the input, and the native bands
    /// are the target. `guide` lives on the native band grid.
    pub fn wald(ms_native: &Raster, guide: &Raster, ratio: usize) -> Result<Self> {
        if guide.height() != ms_native.height() || guide.width() != ms_native.width() {
            bail!(Dimension, "the training guide must share the native band grid");
        }
        let sigmas: Vec<f64> = ms_native
            .band_meta()
            .iter()
            .map(|b| mtf_sigma(b.gnyq, ratio))
            .collect::<Result<_>>()?;
        let input = crate::degradation::wald_pair(ms_native, ratio, Some(&sigmas))?.input;
        Self::new(input, guide.clone(), Some(ms_native.clone()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub eval_every: usize,
    pub cosine_decay: bool,
    pub clip_norm: Option<f64>,
    /// Train on random crops of this many target pixels per side (a
    /// multiple of the ratio) instead of whole samples.
    pub crop: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            lr: AdamState::DEFAULT_LR,
            batch: 1,
            eval_every: 100,
            cosine_decay: true,
            clip_norm: None,
            crop: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub step: usize,
    pub train_l1: f64,
    pub val_ergas: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub params: FusionParams,
    pub initial_val_ergas: Option<f64>,
    pub best_val_ergas: Option<f64>,
    pub best_step: usize,
    pub history: Vec<TrainRecord>,
}

/// Mean per-sample ERGAS of the fused outputs against their targets.
pub fn evaluate_ergas(samples: &[FusionSample], params: &FusionParams) -> Result<f64> {
    if samples.is_empty() {
        bail!(Parameter, "no samples to evaluate");
    }
    let mut total = 0.0;
    for s in samples {
        let target = s.target.as_ref().ok_or_else(|| Error::Parameter("sample lacks a target".into()))?;
        total += ergas(target, &fuse(&s.ms_lr, &s.guide, params)?, params.ratio as f64)?;
    }
    Ok(total / samples.len() as f64)
}

/// Ratio-aligned random crop of `size` target pixels per side.
pub fn random_crop(s: &FusionSample, size: usize, rng: &mut SeededRng) -> Result<FusionSample> {
    let r = s.ratio();
    if size == 0 || size % r != 0 {
        bail!(Parameter, "crop {size} is not a positive multiple of ratio {r}");
    }
    let (h, w) = (s.ms_lr.height(), s.ms_lr.width());
    let c = size / r;
    if c >= h && c >= w {
        return Ok(s.clone());
    }
    let (ch, cw) = (c.min(h), c.min(w));
    let y0 = rng.below(h - ch + 1);
    let x0 = rng.below(w - cw + 1);
    Ok(FusionSample {
        ms_lr: crop(&s.ms_lr, y0, x0, ch, cw),
        guide: crop(&s.guide, y0 * r, x0 * r, ch * r, cw * r),
        target: s.target.as_ref().map(|t| crop(t, y0 * r, x0 * r, ch * r, cw * r)),
    })
}

fn check_dataset(samples: &[FusionSample], params: &FusionParams) -> Result<()> {
    for s in samples {
        if s.ratio() != params.ratio {
            bail!(Parameter, "sample ratio {} differs from model ratio {}", s.ratio(), params.ratio);
        }
        if s.target.is_none() {
            bail!(Parameter, "training samples need targets");
        }
        params.check_inputs(&s.ms_lr, &s.guide)?;
    }
    Ok(())
}

/// Adam on the ℓ1 loss between fused output and target. Validation ERGAS is
/// measured before training and every `eval_every` steps; the parameters
/// with the best validation score are returned (the final ones when `val`
/// is empty).
pub fn train_fusion(
    train: &[FusionSample],
    val: &[FusionSample],
    init: FusionParams,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if train.is_empty() {
        bail!(Parameter, "training set is empty");
    }
    if cfg.batch == 0 || cfg.eval_every == 0 {
        bail!(Parameter, "batch size and evaluation interval must be positive");
    }
    check_dataset(train, &init)?;
    check_dataset(val, &init)?;

    let mut params = init;
    let mut rng = SeededRng::new(cfg.seed);
    let mut adam = AdamState::new(&params.store, cfg.lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut cursor = order.len();
    let mut history = Vec::new();

    let initial = if val.is_empty() { None } else { Some(evaluate_ergas(val, &params)?) };
    let mut best = (initial, 0, params.store.clone());
    let mut running = 0.0;
    let mut running_n = 0usize;

    for step in 1..=cfg.steps {
        params.store.zero_grad();
        let mut batch_loss = 0.0;
        for _ in 0..cfg.batch {
            if cursor == order.len() {
                rng.shuffle(&mut order);
                cursor = 0;
            }
            let s = &train[order[cursor]];
            cursor += 1;
            let cropped;
            let s = match cfg.crop {
                Some(c) => {
                    cropped = random_crop(s, c, &mut rng)?;
                    &cropped
                }
                None => s,
            };
            let mut g = Graph::new();
            let ms = g.constant(Tensor::from_raster(&s.ms_lr));
            let gd = g.constant(Tensor::from_raster(&s.guide));
            let t = g.constant(Tensor::from_raster(s.target.as_ref().expect("checked")));
            let out = params.forward(&mut g, ms, gd)?;
            let l = g.l1_loss(out, t)?;
            let l = g.scale(l, 1.0 / cfg.batch as f64);
            batch_loss += g.value(l).item();
            g.backward(l, &mut params.store)?;
        }
        if let Some(c) = cfg.clip_norm {
            clip_grad_norm(&mut params.store, c);
        }
        adam.lr = if cfg.cosine_decay { cosine_lr(cfg.lr, step - 1, cfg.steps) } else { cfg.lr };
        adam.step(&mut params.store);
        if !batch_loss.is_finite() {
            bail!(Degenerate, "training loss became non-finite at step {step}");
        }
        running += batch_loss;
        running_n += 1;

        if step % cfg.eval_every == 0 || step == cfg.steps {
            let v = if val.is_empty() { None } else { Some(evaluate_ergas(val, &params)?) };
            log::info!(
                "step {step}: train l1 {:.4}{}",
                running / running_n as f64,
                v.map(|e| format!(", val ERGAS {e:.4}")).unwrap_or_default()
            );
            history.push(TrainRecord { step, train_l1: running / running_n as f64, val_ergas: v });
            running = 0.0;
            running_n = 0;
            if let (Some(e), Some(b)) = (v, best.0) {
                if e < b {
                    best = (v, step, params.store.clone());
                }
            }
        }
    }
    if !val.is_empty() {
        params.store = best.2;
    }
    Ok(TrainReport {
        params,
        initial_val_ergas: initial,
        best_val_ergas: if val.is_empty() { None } else { best.0 },
        best_step: if val.is_empty() { cfg.steps } else { best.1 },
        history,
    })
}

/// Fused rasters keyed by group name, for merging several groups.
pub type GroupOutputs = BTreeMap<String, Raster>;

/// Boxcar-downsamples a fused output back to the input grid.
pub fn wald_consistency_l1(fused: &Raster, ms: &Raster, ratio: usize) -> Result<f64> {
    let down = boxcar_downsample(fused, ratio)?;
    down.ensure_same_shape(ms, "consistency")?;
    Ok(down.data().iter().zip(ms.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / ms.data().len() as f64)
}
