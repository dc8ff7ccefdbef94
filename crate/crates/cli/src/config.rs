//! Flat `section.key = value` pipeline configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use s2fuse_core::classic::Method;
use s2fuse_core::degradation::BlurMode;
use s2fuse_core::fusion::BandGroup;
use s2fuse_core::scene::SceneContent;

use crate::commands::raster_exists;
use crate::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuideMethod {
    Bicubic,
    /// The native-resolution RGB itself (an oracle upper bound).
    Native,
    Diffusion,
}

impl FromStr for GuideMethod {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "bicubic" => Ok(Self::Bicubic),
            "native" => Ok(Self::Native),
            "diffusion" => Ok(Self::Diffusion),
            _ => Err(CliError::usage(format!("unknown guide method `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FuseMethod {
    Glpnn,
    Classic(Method),
    Bicubic,
}

impl FromStr for FuseMethod {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "glpnn" => Ok(Self::Glpnn),
            "bicubic" => Ok(Self::Bicubic),
            _ => Method::from_str(s)
                .map(Self::Classic)
                .map_err(|_| CliError::usage(format!("unknown fusion method `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub output_dir: PathBuf,
    pub scene_size: usize,
    pub scene_content: SceneContent,
    pub scene_texture: f64,
    pub scene_seed: Option<u64>,
    pub group: BandGroup,
    pub input_ms: Option<PathBuf>,
    pub input_rgb: Option<PathBuf>,
    pub ratio: usize,
    pub blur: Option<BlurMode>,
    pub noise: f64,
    pub gammas: Option<PathBuf>,
    pub degrade_seed: Option<u64>,
    pub guide: GuideMethod,
    pub guide_ckpt: Option<PathBuf>,
    pub guide_seed: Option<u64>,
    pub fuse: FuseMethod,
    pub fuse_ckpt: Option<PathBuf>,
    pub tile: Option<usize>,
    pub peak: f64,
}

const KEYS: &[&str] = &[
    "output.dir",
    "scene.size",
    "scene.content",
    "scene.texture",
    "scene.seed",
    "scene.group",
    "input.ms",
    "input.rgb",
    "degrade.ratio",
    "degrade.blur",
    "degrade.noise",
    "degrade.gammas",
    "degrade.seed",
    "guide.method",
    "guide.ckpt",
    "guide.seed",
    "fuse.method",
    "fuse.ckpt",
    "fuse.tile",
    "eval.peak",
];

fn parse_entries(text: &str) -> CliResult<BTreeMap<String, (usize, String)>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("config line {n}: expected `key = value`")))?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return Err(CliError::usage(format!("config line {n}: unknown key `{k}`")));
        }
        if v.is_empty() {
            return Err(CliError::usage(format!("config line {n}: `{k}` has no value")));
        }
        if let Some((first, _)) = map.insert(k.to_string(), (n, v.to_string())) {
            return Err(CliError::usage(format!("config line {n}: `{k}` already set on line {first}")));
        }
    }
    Ok(map)
}

struct Entries(BTreeMap<String, (usize, String)>);

impl Entries {
    fn get<T: FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.0.get(key) {
            None => Ok(None),
            Some((n, v)) => v
                .parse()
                .map(Some)
                .map_err(|e| CliError::usage(format!("config line {n}: `{key}`: {e}"))),
        }
    }
}

impl PipelineConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let e = Entries(parse_entries(text)?);
        let group: BandGroup = e.get("scene.group")?.unwrap_or(BandGroup::M10);
        let cfg = Self {
            output_dir: e
                .get::<PathBuf>("output.dir")?
                .ok_or_else(|| CliError::usage("config needs output.dir"))?,
            scene_size: e.get("scene.size")?.unwrap_or(64),
            scene_content: e.get("scene.content")?.unwrap_or(SceneContent::Mixture),
            scene_texture: e.get("scene.texture")?.unwrap_or(2.0),
            scene_seed: e.get("scene.seed")?,
            group,
            input_ms: e.get("input.ms")?,
            input_rgb: e.get("input.rgb")?,
            ratio: e.get("degrade.ratio")?.unwrap_or(group.ratio()),
            blur: e.get("degrade.blur")?,
            noise: e.get("degrade.noise")?.unwrap_or(0.0),
            gammas: e.get("degrade.gammas")?,
            degrade_seed: e.get("degrade.seed")?,
            guide: e.get("guide.method")?.unwrap_or(GuideMethod::Bicubic),
            guide_ckpt: e.get("guide.ckpt")?,
            guide_seed: e.get("guide.seed")?,
            fuse: e.get("fuse.method")?.unwrap_or(FuseMethod::Glpnn),
            fuse_ckpt: e.get("fuse.ckpt")?,
            tile: e.get("fuse.tile")?,
            peak: e.get("eval.peak")?.unwrap_or(255.0),
        };
        cfg.check_consistency()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Core(s2fuse_core::Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
        })?;
        Self::parse(&text)
    }

    fn check_consistency(&self) -> CliResult<()> {
        if self.input_ms.is_some() != self.input_rgb.is_some() {
            return Err(CliError::usage("input.ms and input.rgb must be given together"));
        }
        if self.ratio < 2 {
            return Err(CliError::usage("degrade.ratio must be at least 2"));
        }
        if self.noise < 0.0 || !(self.peak > 0.0) {
            return Err(CliError::usage("degrade.noise must be non-negative and eval.peak positive"));
        }
        if self.guide == GuideMethod::Diffusion && self.guide_ckpt.is_none() {
            return Err(CliError::usage("guide.method = diffusion needs guide.ckpt"));
        }
        if self.guide_ckpt.is_some() && self.guide != GuideMethod::Diffusion {
            return Err(CliError::usage("guide.ckpt is only used with guide.method = diffusion"));
        }
        if self.fuse_ckpt.is_some() && self.fuse != FuseMethod::Glpnn {
            return Err(CliError::usage("fuse.ckpt is only used with fuse.method = glpnn"));
        }
        if self.tile.is_some() && self.fuse != FuseMethod::Glpnn {
            return Err(CliError::usage("fuse.tile is only used with fuse.method = glpnn"));
        }
        if self.tile == Some(0) {
            return Err(CliError::usage("fuse.tile must be positive"));
        }
        Ok(())
    }

    /// Checks that every referenced input exists.
    pub fn validate_paths(&self) -> CliResult<()> {
        let missing = |what: &str, p: &Path| CliError::usage(format!("{what} {} does not exist", p.display()));
        for (what, p) in [("input.ms", &self.input_ms), ("input.rgb", &self.input_rgb)] {
            if let Some(p) = p {
                if !raster_exists(p) {
                    return Err(missing(what, p));
                }
            }
        }
        if let Some(p) = &self.gammas {
            if !p.is_file() {
                return Err(missing("degrade.gammas", p));
            }
        }
        for (what, p) in [("guide.ckpt", &self.guide_ckpt), ("fuse.ckpt", &self.fuse_ckpt)] {
            if let Some(p) = p {
                if !s2fuse_core::nn::checkpoint::checkpoint_paths(p).0.is_file() {
                    return Err(missing(what, p));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_in() {
        let c = PipelineConfig::parse("output.dir = out\n").unwrap();
        assert_eq!(c.ratio, 4);
        assert_eq!(c.fuse, FuseMethod::Glpnn);
        assert_eq!(c.guide, GuideMethod::Bicubic);
    }

    #[test]
    fn comments_and_blanks() {
        let c = PipelineConfig::parse("# run\n\noutput.dir = o  # here\nfuse.method = gs\n").unwrap();
        assert_eq!(c.fuse, FuseMethod::Classic(Method::Gs));
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "output.dir = o\nscene.colour = red\n",
            "output.dir = o\noutput.dir = p\n",
            "output.dir = o\nscene.size = big\n",
            "scene.size = 8\n",
            "output.dir = o\ninput.ms = a\n",
            "output.dir = o\nguide.method = diffusion\n",
            "output.dir\n",
        ] {
            assert!(matches!(PipelineConfig::parse(text), Err(CliError::Usage(_))), "{text}");
        }
    }
}
