//! Run configuration: a TOML file merged with command-line overrides.

use std::path::Path;

use anyhow::{bail, Context};
use clap::Args;
use serde::{Deserialize, Serialize};
use tfs3d_core::encoder::LocalFrequencies;
use tfs3d_core::episodes::EpisodeSettings;
use tfs3d_core::{EncoderConfig, HeadConfig, PeMode, QuestConfig};

use crate::InputError;

/// Episode shape shared by `train` and `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeOptions {
    pub n_way: usize,
    pub k_shot: usize,
    /// Queries per episode; defaults to `n_way`.
    pub queries: Option<usize>,
    pub points: usize,
    pub per_combination: usize,
}

impl Default for EpisodeOptions {
    fn default() -> Self {
        Self { n_way: 2, k_shot: 1, queries: None, points: 2048, per_combination: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    pub iterations: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { iterations: 1000 }
    }
}

/// Everything a command needs besides file paths.
///
/// The top-level `seed` is authoritative: it replaces the encoder, QUEST
/// and episode seeds when the configuration is resolved.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
    pub quest: QuestConfig,
    pub episodes: EpisodeOptions,
    pub train: TrainOptions,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| InputError(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| InputError(format!("config {}: {e}", path.display())).into())
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let check = || -> tfs3d_core::Result<()> {
            self.encoder.validate()?;
            self.head.validate()?;
            self.quest.validate()
        };
        check().context("invalid configuration")?;
        let e = &self.episodes;
        if e.n_way == 0 || e.k_shot == 0 || e.points == 0 || e.queries == Some(0) {
            bail!(InputError("episodes: n_way, k_shot, queries and points must be >= 1".into()));
        }
        Ok(())
    }

    pub fn episode_settings(&self) -> EpisodeSettings {
        let e = &self.episodes;
        EpisodeSettings {
            queries: e.queries.unwrap_or(e.n_way),
            ..EpisodeSettings::new(e.n_way, e.k_shot, e.points, self.seed)
        }
    }
}

/// Local frequency family as written on the command line:
/// `gaussian`, `log-linear`, `uniform[:range]` or `laplacian[:scale]`.
///
/// Without a parameter, uniform and Laplacian match the Gaussian variance
/// `delta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FreqDist {
    Gaussian,
    LogLinear,
    Uniform(Option<f64>),
    Laplacian(Option<f64>),
}

impl std::str::FromStr for FreqDist {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, param) = match s.split_once(':') {
            Some((k, p)) => (k, Some(p.parse::<f64>().map_err(|e| format!("bad parameter `{p}`: {e}"))?)),
            None => (s, None),
        };
        match (kind, param) {
            ("gaussian", None) => Ok(Self::Gaussian),
            ("log-linear", None) => Ok(Self::LogLinear),
            ("uniform", p) => Ok(Self::Uniform(p)),
            ("laplacian", p) => Ok(Self::Laplacian(p)),
            _ => Err(format!("unknown frequency distribution `{s}`")),
        }
    }
}

impl FreqDist {
    fn resolve(self, delta: f64) -> LocalFrequencies {
        match self {
            Self::Gaussian => LocalFrequencies::Gaussian,
            Self::LogLinear => LocalFrequencies::LogLinear,
            Self::Uniform(r) => LocalFrequencies::Uniform { range: r.unwrap_or((3.0 * delta).sqrt()) },
            Self::Laplacian(s) => LocalFrequencies::Laplacian { scale: s.unwrap_or((delta / 2.0).sqrt()) },
        }
    }
}

/// Hyperparameter flags shared by every command.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<std::path::PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Initial frequency count (output width is 90 d).
    #[arg(long, global = true)]
    pub d: Option<usize>,
    #[arg(long, global = true)]
    pub theta: Option<f64>,
    /// Variance of the Gaussian local frequencies.
    #[arg(long, global = true)]
    pub delta: Option<f64>,
    /// Coordinate weight against color.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    #[arg(long, global = true)]
    pub pool_kernel: Option<usize>,
    #[arg(long, global = true)]
    pub pool_stride: Option<usize>,
    #[arg(long, global = true)]
    pub pe_mode: Option<PeMode>,
    #[arg(long, global = true)]
    pub freq_dist: Option<FreqDist>,
    #[arg(long, global = true)]
    pub no_color: bool,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    #[arg(long, global = true)]
    pub n_way: Option<usize>,
    #[arg(long, global = true)]
    pub k_shot: Option<usize>,
    #[arg(long, global = true)]
    pub points: Option<usize>,
}

impl Overrides {
    pub fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+;)*) => {
                $(if let Some(v) = self.$flag { cfg.$($field).+ = v; })*
            };
        }
        set! {
            seed => seed;
            d => encoder.d;
            theta => encoder.theta;
            delta => encoder.delta;
            alpha => encoder.alpha;
            k => encoder.k;
            pe_mode => encoder.pe_mode;
            gamma => head.gamma;
            pool_kernel => quest.pool_kernel;
            pool_stride => quest.pool_stride;
            lr => quest.lr;
            n_way => episodes.n_way;
            k_shot => episodes.k_shot;
            points => episodes.points;
        }
        if let Some(f) = self.freq_dist {
            cfg.encoder.local_distribution = f.resolve(cfg.encoder.delta);
        }
        if self.no_color {
            cfg.encoder.use_color = false;
        }
        cfg.encoder.seed = cfg.seed;
        cfg.quest.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }
}
