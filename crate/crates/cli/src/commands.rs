use std::fs;
use std::path::{Path, PathBuf};

use log::{debug, info};
use s2fuse_core::classic;
use s2fuse_core::degradation::{degrade, harmonize, read_gammas, sample_blur, wald_pair, DegradationSpec};
use s2fuse_core::diffusion::{
    cosine_schedule, from_unit, to_unit, toy_pair, train_toy, ToyConfig, ToyModel, ToyObjective, ToyTrainConfig,
    DEFAULT_OFFSET,
};
use s2fuse_core::fusion::{
    fuse, fuse_tiled, train_fusion, BandGroup, FusionConfig, FusionParams, FusionSample, TrainConfig,
};
use s2fuse_core::metrics::MetricsReport;
use s2fuse_core::nn::checkpoint::Meta;
use s2fuse_core::raster::io::{atomic_write, raster_paths, read_raster, write_png, write_raster};
use s2fuse_core::scene::{gen_scene, SceneSpec};
use s2fuse_core::{BandSpec, Error, Raster, SeededRng};

use crate::cli::*;
use crate::{CliError, CliResult};

pub fn dispatch(cli: &Cli) -> CliResult<()> {
    if cli.threads == 0 {
        return Err(CliError::usage("--threads must be at least 1"));
    }
    match &cli.command {
        Command::Degrade(a) => cmd_degrade(a, need_seed(cli)?),
        Command::Harmonize(a) => cmd_harmonize(a),
        Command::MakeWald(a) => cmd_make_wald(a),
        Command::TrainFusion(a) => cmd_train_fusion(a, need_seed(cli)?),
        Command::Fuse(a) => cmd_fuse(a),
        Command::Pansharpen(a) => cmd_pansharpen(a),
        Command::Eval(a) => cmd_eval(a),
        Command::DiffuseToy(DiffuseToyCommand::Train(a)) => cmd_diffuse_train(a, need_seed(cli)?),
        Command::DiffuseToy(DiffuseToyCommand::Sample(a)) => cmd_diffuse_sample(a, need_seed(cli)?),
        Command::GenScene(a) => cmd_gen_scene(a, need_seed(cli)?),
        Command::Run(a) => crate::pipeline::run_file(&a.config, cli.seed),
    }
}

fn need_seed(cli: &Cli) -> CliResult<u64> {
    cli.seed.ok_or_else(|| CliError::usage("this command draws random numbers and needs --seed"))
}

pub(crate) fn load(path: &Path) -> CliResult<Raster> {
    debug!("reading {}", path.display());
    read_raster(path).map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        e => e,
    }
    .into())
}

pub(crate) fn store(path: &Path, img: &Raster) -> CliResult<()> {
    write_raster(path, img)?;
    info!("wrote {} ({}x{}x{})", path.display(), img.bands(), img.height(), img.width());
    Ok(())
}

pub(crate) fn quicklook(path: &Path, img: &Raster) -> CliResult<()> {
    let bands: &[usize] = if img.bands() >= 3 { &[0, 1, 2] } else { &[0] };
    write_png(path, img, bands)?;
    Ok(())
}

/// True when a raster header exists at `path`.
pub(crate) fn raster_exists(path: &Path) -> bool {
    raster_paths(path).1.is_file()
}

/// RGB guide band metadata on a grid of the given ground sampling distance.
pub(crate) fn rgb_specs(gsd: f64) -> Vec<BandSpec> {
    ["B4", "B3", "B2"].iter().map(|n| BandSpec::new(*n, gsd)).collect()
}

/// A scene split into a three-band RGB guide and the bands of `group`, both
/// on the group's native grid.
pub(crate) fn group_scene(mut spec: SceneSpec, group: BandGroup) -> CliResult<(Raster, Raster)> {
    spec.bands = 3 + group.bands().len();
    let all = gen_scene(&spec)?;
    let rgb = all.select_bands(&[0, 1, 2])?.with_band_meta(rgb_specs(group.gsd()))?;
    let idx: Vec<usize> = (3..spec.bands).collect();
    let ms = all.select_bands(&idx)?.with_band_meta(group.band_specs())?;
    Ok((rgb, ms))
}

fn cmd_gen_scene(a: &GenSceneArgs, seed: u64) -> CliResult<()> {
    let mut spec = SceneSpec::new(a.size, a.bands, a.content, seed);
    spec.texture = a.texture;
    spec.materials = a.materials;
    match a.group {
        None => {
            let img = gen_scene(&spec)?;
            store(&a.out, &img)?;
            if let Some(p) = &a.png {
                quicklook(p, &img)?;
            }
        }
        Some(group) => {
            let (rgb, ms) = group_scene(spec, group)?;
            store(&a.out.join("rgb"), &rgb)?;
            store(&a.out.join("ms"), &ms)?;
            if let Some(p) = &a.png {
                quicklook(p, &rgb)?;
            }
        }
    }
    Ok(())
}

fn cmd_degrade(a: &DegradeArgs, seed: u64) -> CliResult<()> {
    let img = load(&a.input)?;
    let mut rng = SeededRng::new(seed);
    let blur = a.blur.map(|m| sample_blur(&mut rng, m));
    debug!("blur {blur:?}");
    let gammas = a.gammas.as_deref().map(read_gammas).transpose()?;
    let spec = DegradationSpec { blur, scale: a.scale, noise_sigma: a.noise, gammas, k: a.k };
    store(&a.out, &degrade(&img, &spec, &mut rng)?)
}

fn cmd_harmonize(a: &HarmonizeArgs) -> CliResult<()> {
    let img = load(&a.input)?;
    let gammas = read_gammas(&a.gammas)?;
    store(&a.out, &harmonize(&img, &gammas, a.k)?)
}

fn cmd_make_wald(a: &MakeWaldArgs) -> CliResult<()> {
    let ms = load(&a.input)?;
    let guide = a.guide.as_deref().map(load).transpose()?;
    let input = if a.no_mtf {
        wald_pair(&ms, a.ratio, None)?.input
    } else {
        let sigmas = ms
            .band_meta()
            .iter()
            .map(|b| s2fuse_core::fusion::mtf_sigma(b.gnyq, a.ratio))
            .collect::<Result<Vec<_>, _>>()?;
        wald_pair(&ms, a.ratio, Some(&sigmas))?.input
    };
    if let Some(g) = &guide {
        FusionSample::new(input.clone(), g.clone(), Some(ms.clone()))?;
        store(&a.out.join("guide"), g)?;
    }
    store(&a.out.join("ms"), &input)?;
    store(&a.out.join("target"), &ms)
}

/// Sample directories under `dir` in lexicographic order.
pub(crate) fn sample_dirs(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && raster_exists(&p.join("ms")))
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Parameter(format!("no samples under {}", dir.display())).into());
    }
    Ok(dirs)
}

fn load_sample(dir: &Path) -> CliResult<FusionSample> {
    let target = load(&dir.join("target"))?;
    Ok(FusionSample::new(load(&dir.join("ms"))?, load(&dir.join("guide"))?, Some(target))?)
}

fn cmd_train_fusion(a: &TrainFusionArgs, seed: u64) -> CliResult<()> {
    if !(0.0..1.0).contains(&a.val_fraction) {
        return Err(CliError::usage("--val-fraction must lie in [0, 1)"));
    }
    let samples = sample_dirs(&a.data)?.iter().map(|d| load_sample(d)).collect::<CliResult<Vec<_>>>()?;
    let n_val = (a.val_fraction * samples.len() as f64).round() as usize;
    if n_val >= samples.len() {
        return Err(CliError::usage("validation split leaves no training samples"));
    }
    let (train, val) = samples.split_at(samples.len() - n_val);
    let bands = a.group.band_specs();
    if train[0].ms_lr.bands() != bands.len() {
        return Err(Error::Dimension(format!(
            "group {} has {} bands, samples have {}",
            a.group,
            bands.len(),
            train[0].ms_lr.bands()
        ))
        .into());
    }
    let init = FusionParams::new(&bands, a.group.ratio(), FusionConfig::default(), seed)?;
    let steps = a.steps.unwrap_or(a.epochs * train.len());
    let cfg = TrainConfig {
        steps,
        lr: a.lr,
        eval_every: a.eval_every.unwrap_or((steps / 10).max(1)),
        crop: a.crop,
        seed,
        ..TrainConfig::default()
    };
    info!("training on {} samples, validating on {}, {} steps", train.len(), val.len(), steps);
    let report = train_fusion(train, val, init, &cfg)?;
    for r in &report.history {
        info!("step {} train_l1 {:.4} val_ergas {:?}", r.step, r.train_l1, r.val_ergas);
    }
    let mut meta = Meta::new();
    meta.insert("group".into(), a.group.to_string());
    meta.insert("train.steps".into(), steps.to_string());
    meta.insert("train.seed".into(), seed.to_string());
    if let Some(b) = report.best_val_ergas {
        meta.insert("train.best_val_ergas".into(), format!("{b:e}"));
        println!("best validation ERGAS {b:.4} at step {}", report.best_step);
    }
    report.params.save(&a.out, &meta)?;
    Ok(())
}

fn cmd_fuse(a: &FuseArgs) -> CliResult<()> {
    let ms = load(&a.ms)?;
    let guide = load(&a.guide)?;
    let params = match &a.ckpt {
        Some(p) => {
            let (params, meta) = FusionParams::load(p)?;
            if let (Some(g), Some(m)) = (a.group, meta.get("group")) {
                if g.to_string() != *m {
                    return Err(Error::Parameter(format!("checkpoint is for group {m}, not {g}")).into());
                }
            }
            params
        }
        None => identity_params(&ms, &guide, a.group)?,
    };
    let out = match a.tile {
        Some(t) => fuse_tiled(&ms, &guide, &params, t)?,
        None => fuse(&ms, &guide, &params)?,
    };
    store(&a.out, &out)?;
    if let Some(p) = &a.png {
        quicklook(p, &out)?;
    }
    Ok(())
}

/// Untrained model whose output equals unit-gain GLP injection.
pub(crate) fn identity_params(ms: &Raster, guide: &Raster, group: Option<BandGroup>) -> CliResult<FusionParams> {
    if ms.height() == 0 || guide.height() % ms.height() != 0 {
        return Err(Error::Dimension("guide grid is not a multiple of the band grid".into()).into());
    }
    let ratio = guide.height() / ms.height();
    let bands = match group {
        Some(g) => g.band_specs(),
        None => ms.band_meta().to_vec(),
    };
    Ok(FusionParams::new(&bands, ratio, FusionConfig::default(), 0)?)
}

fn cmd_pansharpen(a: &PansharpenArgs) -> CliResult<()> {
    let ms = load(&a.ms)?;
    let pan = load(&a.pan)?;
    if pan.bands() != 1 {
        return Err(Error::Dimension(format!("pan must have one band, got {}", pan.bands())).into());
    }
    store(&a.out, &classic::pansharpen(a.method, &ms, &pan, a.ratio)?)
}

fn cmd_eval(a: &EvalArgs) -> CliResult<()> {
    let reference = load(&a.reference)?;
    let pred = load(&a.pred)?;
    let lr = a.lr.as_deref().map(load).transpose()?;
    let report = MetricsReport::compute(&reference, &pred, a.ratio, a.peak, lr.as_ref())?;
    let table = report.to_table();
    print!("{table}");
    atomic_write(&a.out, format!("{table}\n{}", report.to_key_values()).as_bytes())?;
    Ok(())
}

fn cmd_diffuse_train(a: &DiffuseTrainArgs, seed: u64) -> CliResult<()> {
    let config = ToyConfig { channels: a.channels, scale: a.scale, width: a.width, ..ToyConfig::default() };
    let mut model = ToyModel::new(config, seed)?;
    let cfg = ToyTrainConfig {
        steps: a.steps,
        lr: a.lr,
        schedule_steps: a.t,
        patch: a.patch,
        blur: a.blur,
        noise_max: a.noise,
        objective: match a.objective {
            Objective::Full => ToyObjective::Full,
            Objective::Consistency => ToyObjective::Consistency,
        },
        seed,
        ..ToyTrainConfig::default()
    };
    let report = train_toy(&mut model, &cfg)?;
    let tail = &report.losses[report.losses.len().saturating_sub(20)..];
    info!("final loss (mean of last {}) {:.5}", tail.len(), tail.iter().sum::<f64>() / tail.len() as f64);
    let mut meta = Meta::new();
    meta.insert("schedule.steps".into(), a.t.to_string());
    meta.insert("train.steps".into(), a.steps.to_string());
    meta.insert("train.seed".into(), seed.to_string());
    model.save(&a.out, &meta)?;
    Ok(())
}

/// Diffusion steps stored in a toy checkpoint.
pub(crate) fn schedule_steps(meta: &Meta) -> CliResult<usize> {
    meta.get("schedule.steps")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format("checkpoint lacks schedule.steps".into()).into())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

fn cmd_diffuse_sample(a: &DiffuseSampleArgs, seed: u64) -> CliResult<()> {
    let (model, meta) = ToyModel::load(&a.ckpt)?;
    let steps = match a.t {
        Some(t) => t,
        None => schedule_steps(&meta)?,
    };
    let mut rng = SeededRng::new(seed);
    let lr = match &a.input {
        Some(p) => to_unit(&load(p)?),
        None => {
            let c = &model.config;
            let pair = toy_pair(c.channels, a.patch, c.scale, a.blur, 0.0, &mut rng)?;
            store(&sibling(&a.out, "_lr"), &from_unit(&pair.lr))?;
            store(&sibling(&a.out, "_hr"), &from_unit(&pair.hr))?;
            pair.lr
        }
    };
    if lr.bands() != model.config.channels {
        return Err(Error::Dimension(format!(
            "model expects {} channels, input has {}",
            model.config.channels,
            lr.bands()
        ))
        .into());
    }
    let sr = match a.mode {
        SampleMode::Diffusion => model.sample(&lr, &cosine_schedule(steps, DEFAULT_OFFSET)?, &mut rng)?,
        SampleMode::Decoder => model.super_resolve(&lr)?,
    };
    store(&a.out, &from_unit(&sr))
}
