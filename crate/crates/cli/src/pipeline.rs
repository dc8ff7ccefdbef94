//! End-to-end run: scene or input → degradation → guide → fusion → metrics.

use std::fmt::Write as _;
use std::path::Path;

use log::info;
use s2fuse_core::classic;
use s2fuse_core::degradation::{degrade, read_gammas, sample_blur, wald_pair, DegradationSpec};
use s2fuse_core::diffusion::{cosine_schedule, from_unit, to_unit, ToyModel, DEFAULT_OFFSET};
use s2fuse_core::fusion::{fuse, fuse_tiled, mix_pan, mtf_sigma, FusionParams};
use s2fuse_core::metrics::MetricsReport;
use s2fuse_core::raster::io::atomic_write;
use s2fuse_core::raster::resample_bicubic;
use s2fuse_core::scene::SceneSpec;
use s2fuse_core::{Error, Raster, SeededRng};

use crate::commands::{group_scene, identity_params, load, schedule_steps, store};
use crate::config::{FuseMethod, GuideMethod, PipelineConfig};
use crate::{in_stage, CliError, CliResult};

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub ms_native: Raster,
    pub rgb_native: Raster,
    pub ms_lr: Raster,
    pub rgb_lr: Raster,
    pub guide: Raster,
    pub fused: Raster,
    pub report: MetricsReport,
}

pub fn run_file(path: &Path, global_seed: Option<u64>) -> CliResult<()> {
    let cfg = in_stage("config", PipelineConfig::from_file(path))?;
    in_stage("config", cfg.validate_paths())?;
    let out = run(&cfg, global_seed)?;
    print!("{}", out.report.to_table());
    Ok(())
}

fn seed_for(own: Option<u64>, global: Option<u64>, key: &str) -> CliResult<u64> {
    own.or(global)
        .ok_or_else(|| CliError::usage(format!("set {key} in the config or pass --seed")))
}

/// Executes the pipeline and writes every intermediate into `output.dir`.
pub fn run(cfg: &PipelineConfig, global_seed: Option<u64>) -> CliResult<PipelineOutput> {
    let (rgb_native, ms_native) = in_stage("scene", source(cfg, global_seed))?;
    let (ms_lr, rgb_lr) = in_stage("degrade", degrade_stage(cfg, &ms_native, &rgb_native, global_seed))?;
    let guide = in_stage("guide", guide_stage(cfg, &rgb_native, &rgb_lr, global_seed))?;
    let fused = in_stage("fuse", fuse_stage(cfg, &ms_lr, &guide))?;
    let report = in_stage(
        "eval",
        MetricsReport::compute(&ms_native, &fused, cfg.ratio, cfg.peak, Some(&ms_lr)).map_err(CliError::from),
    )?;
    let out = PipelineOutput { ms_native, rgb_native, ms_lr, rgb_lr, guide, fused, report };
    in_stage("write", write_outputs(cfg, &out))?;
    Ok(out)
}

fn source(cfg: &PipelineConfig, global_seed: Option<u64>) -> CliResult<(Raster, Raster)> {
    if let (Some(ms), Some(rgb)) = (&cfg.input_ms, &cfg.input_rgb) {
        let (ms, rgb) = (load(ms)?, load(rgb)?);
        if rgb.bands() != 3 || rgb.height() != ms.height() || rgb.width() != ms.width() {
            return Err(Error::Dimension("input.rgb must be three bands on the input.ms grid".into()).into());
        }
        return Ok((rgb, ms));
    }
    let seed = seed_for(cfg.scene_seed, global_seed, "scene.seed")?;
    let mut spec = SceneSpec::new(cfg.scene_size, 0, cfg.scene_content, seed);
    spec.texture = cfg.scene_texture;
    group_scene(spec, cfg.group)
}

fn degrade_stage(
    cfg: &PipelineConfig,
    ms: &Raster,
    rgb: &Raster,
    global_seed: Option<u64>,
) -> CliResult<(Raster, Raster)> {
    let sigmas = ms
        .band_meta()
        .iter()
        .map(|b| mtf_sigma(b.gnyq, cfg.ratio))
        .collect::<Result<Vec<_>, _>>()?;
    let ms_lr = wald_pair(ms, cfg.ratio, Some(&sigmas))?.input;
    let mut rng = SeededRng::new(seed_for(cfg.degrade_seed, global_seed, "degrade.seed")?);
    let spec = DegradationSpec {
        blur: cfg.blur.map(|m| sample_blur(&mut rng, m)),
        scale: cfg.ratio,
        noise_sigma: cfg.noise,
        gammas: cfg.gammas.as_deref().map(read_gammas).transpose()?,
        ..DegradationSpec::default()
    };
    let rgb_lr = degrade(rgb, &spec, &mut rng)?;
    Ok((ms_lr, rgb_lr))
}

fn guide_stage(cfg: &PipelineConfig, rgb: &Raster, rgb_lr: &Raster, global_seed: Option<u64>) -> CliResult<Raster> {
    let r = cfg.ratio as f64;
    match cfg.guide {
        GuideMethod::Native => Ok(rgb.clone()),
        GuideMethod::Bicubic => Ok(resample_bicubic(rgb_lr, r)?),
        GuideMethod::Diffusion => {
            let path = cfg.guide_ckpt.as_deref().expect("checked when parsing");
            let (model, meta) = ToyModel::load(path)?;
            if model.config.scale != cfg.ratio {
                return Err(Error::Parameter(format!(
                    "guide model upsamples by {}, pipeline ratio is {}",
                    model.config.scale, cfg.ratio
                ))
                .into());
            }
            let sched = cosine_schedule(schedule_steps(&meta)?, DEFAULT_OFFSET)?;
            let mut rng = SeededRng::new(seed_for(cfg.guide_seed, global_seed, "guide.seed")?);
            let lr = to_unit(rgb_lr);
            let sr = match model.config.channels {
                c if c == lr.bands() => model.sample(&lr, &sched, &mut rng)?,
                1 => {
                    let planes = (0..lr.bands())
                        .map(|b| model.sample(&lr.select_bands(&[b])?, &sched, &mut rng))
                        .collect::<Result<Vec<_>, _>>()?;
                    Raster::stack(&planes.iter().collect::<Vec<_>>())?
                }
                c => {
                    return Err(Error::Dimension(format!("guide model has {c} channels, RGB has {}", lr.bands())).into())
                }
            };
            let mut out = from_unit(&sr).with_band_meta(rgb.band_meta().to_vec())?;
            info!("diffusion guide sampled with {} steps", sched.steps());
            out.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 255.0));
            Ok(out)
        }
    }
}

fn fuse_stage(cfg: &PipelineConfig, ms_lr: &Raster, guide: &Raster) -> CliResult<Raster> {
    match cfg.fuse {
        FuseMethod::Bicubic => Ok(resample_bicubic(ms_lr, cfg.ratio as f64)?),
        FuseMethod::Classic(m) => {
            let pan = mix_pan(guide, &[0.0; 3])?;
            Ok(classic::pansharpen(m, ms_lr, &pan, cfg.ratio)?)
        }
        FuseMethod::Glpnn => {
            let params = match &cfg.fuse_ckpt {
                Some(p) => FusionParams::load(p)?.0,
                None => identity_params(ms_lr, guide, None)?,
            };
            if params.ratio != cfg.ratio {
                return Err(Error::Parameter(format!(
                    "fusion model ratio {} differs from pipeline ratio {}",
                    params.ratio, cfg.ratio
                ))
                .into());
            }
            Ok(match cfg.tile {
                Some(t) => fuse_tiled(ms_lr, guide, &params, t)?,
                None => fuse(ms_lr, guide, &params)?,
            })
        }
    }
}

fn write_outputs(cfg: &PipelineConfig, out: &PipelineOutput) -> CliResult<()> {
    let dir = &cfg.output_dir;
    for (name, img) in [
        ("ms_native", &out.ms_native),
        ("rgb_native", &out.rgb_native),
        ("ms_lr", &out.ms_lr),
        ("rgb_lr", &out.rgb_lr),
        ("guide", &out.guide),
        ("fused", &out.fused),
    ] {
        store(&dir.join(name), img)?;
    }
    let mut text = out.report.to_table();
    let _ = writeln!(text);
    text.push_str(&out.report.to_key_values());
    atomic_write(&dir.join("report.txt"), text.as_bytes())?;
    Ok(())
}
