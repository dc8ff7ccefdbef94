use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use s2fuse_core::classic::Method;
use s2fuse_core::degradation::BlurMode;
use s2fuse_core::fusion::BandGroup;
use s2fuse_core::scene::SceneContent;

#[derive(Debug, Parser)]
#[command(name = "s2fuse", version, about = "Sentinel-2 style degradation, fusion and evaluation")]
pub struct Cli {
    /// Seed for every random draw; required by commands that generate data.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (computation is single-threaded; results never depend on this).
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a low-resolution observation.
    Degrade(DegradeArgs),
    /// Apply per-band gamma harmonization.
    Harmonize(HarmonizeArgs),
    /// Build a reduced-resolution (Wald) training sample.
    MakeWald(MakeWaldArgs),
    /// Train a GLP-NN fusion model for one band group.
    TrainFusion(TrainFusionArgs),
    /// Fuse multispectral bands with an RGB guide.
    Fuse(FuseArgs),
    /// Classical pansharpening.
    Pansharpen(PansharpenArgs),
    /// Compare a prediction with a reference.
    Eval(EvalArgs),
    /// Toy-scale conditional diffusion.
    #[command(subcommand)]
    DiffuseToy(DiffuseToyCommand),
    /// Generate a synthetic scene.
    GenScene(GenSceneArgs),
    /// Run a whole pipeline from a configuration file.
    Run(RunArgs),
}

#[derive(Debug, Args)]
pub struct DegradeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub scale: usize,
    /// `train`, `val` or `fixed:σ`; omit for no blur.
    #[arg(long)]
    pub blur: Option<BlurMode>,
    /// Noise σ on the 0–255 scale.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// File with one gamma per band.
    #[arg(long)]
    pub gammas: Option<PathBuf>,
    #[arg(long, default_value_t = 255.0)]
    pub k: f64,
}

#[derive(Debug, Args)]
pub struct HarmonizeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub gammas: PathBuf,
    #[arg(long, default_value_t = 255.0)]
    pub k: f64,
}

#[derive(Debug, Args)]
pub struct MakeWaldArgs {
    /// Native-resolution multispectral bands.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// RGB guide on the native grid, copied into the sample.
    #[arg(long)]
    pub guide: Option<PathBuf>,
    #[arg(long)]
    pub ratio: usize,
    /// Skip the per-band MTF blur before boxcar downsampling.
    #[arg(long)]
    pub no_mtf: bool,
    /// Sample directory; receives `ms`, `target` and optionally `guide`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainFusionArgs {
    #[arg(long)]
    pub group: BandGroup,
    /// Directory of sample directories as written by `make-wald`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    /// Optimizer steps; overrides `--epochs`.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value_t = s2fuse_core::nn::AdamState::DEFAULT_LR)]
    pub lr: f64,
    /// Train on random crops of this many target pixels per side.
    #[arg(long)]
    pub crop: Option<usize>,
    /// Fraction of samples (taken from the end) held out for validation.
    #[arg(long, default_value_t = 0.0)]
    pub val_fraction: f64,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long)]
    pub group: Option<BandGroup>,
    #[arg(long)]
    pub ms: PathBuf,
    #[arg(long)]
    pub guide: PathBuf,
    /// Trained model; without one the identity-initialized network is used.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub tile: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Optional quick-look of the first three output bands.
    #[arg(long)]
    pub png: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PansharpenArgs {
    #[arg(long)]
    pub method: Method,
    #[arg(long)]
    pub ms: PathBuf,
    #[arg(long)]
    pub pan: PathBuf,
    #[arg(long)]
    pub ratio: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub ratio: usize,
    /// Low-resolution input, for the reflectance-consistency term.
    #[arg(long)]
    pub lr: Option<PathBuf>,
    #[arg(long, default_value_t = 255.0)]
    pub peak: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Objective {
    Full,
    Consistency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SampleMode {
    /// Ancestral sampling through the denoiser.
    Diffusion,
    /// One pass of the consistency decoder.
    Decoder,
}

#[derive(Debug, Subcommand)]
pub enum DiffuseToyCommand {
    Train(DiffuseTrainArgs),
    Sample(DiffuseSampleArgs),
}

#[derive(Debug, Args)]
pub struct DiffuseTrainArgs {
    /// Diffusion steps.
    #[arg(long = "T", default_value_t = 64)]
    pub t: usize,
    /// High-resolution patch side.
    #[arg(long, default_value_t = 32)]
    pub patch: usize,
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value = "train")]
    pub blur: BlurMode,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, value_enum, default_value_t = Objective::Full)]
    pub objective: Objective,
    #[arg(long, default_value_t = 2)]
    pub scale: usize,
    #[arg(long, default_value_t = 1)]
    pub channels: usize,
    #[arg(long, default_value_t = 32)]
    pub width: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DiffuseSampleArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Low-resolution input on the 0–255 scale; a synthetic one is drawn otherwise.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    /// Diffusion steps; defaults to the training value.
    #[arg(long = "T")]
    pub t: Option<usize>,
    /// Patch side of the synthetic high-resolution scene.
    #[arg(long, default_value_t = 32)]
    pub patch: usize,
    #[arg(long, default_value = "train")]
    pub blur: BlurMode,
    #[arg(long, value_enum, default_value_t = SampleMode::Diffusion)]
    pub mode: SampleMode,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenSceneArgs {
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 4)]
    pub bands: usize,
    #[arg(long, default_value = "mixture")]
    pub content: SceneContent,
    #[arg(long, default_value_t = 2.0)]
    pub texture: f64,
    #[arg(long, default_value_t = 4)]
    pub materials: usize,
    /// Emit an RGB guide plus this group's bands as `<out>/rgb` and `<out>/ms`.
    #[arg(long)]
    pub group: Option<BandGroup>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub png: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
}
