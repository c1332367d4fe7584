//! Run configuration: a TOML file with optional sections, overridden by flags.
//!
//! ```toml
//! [model]
//! checkpoint = "gpt2/model.safetensors"
//! tokenizer = "gpt2"            # directory with vocab.json and merges.txt
//! param_manifest = "names.json" # optional tensor renames
//! precision = "f32"             # or "f64"
//!
//! [prune]
//! ablation = "zero"             # zero | mean | noise
//! noise_variance = 0.81
//! metric = "rank"               # rank | logit_diff | kl
//! tau = 0.04                    # logit_diff / kl threshold
//! n = 1                         # rank metric depth
//! logit_mode = "top_token"      # top_token | max_abs
//! order = "breadth_asc"         # breadth_asc | breadth_desc | reverse_layers | random | depth_first
//! seed = 0                      # noise and random-order seed
//! adjacent_only = false
//!
//! [mediation]
//! max_nodes = 4
//! delta = 0.6
//!
//! [run]
//! seed = 0
//! threads = 1
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use skillpath::circuit::AblationStrategy;
use skillpath::pruning::{LogitDiffMode, Metric, PruneConfig, SearchOrder};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum AblationKind {
    #[default]
    Zero,
    Mean,
    Noise,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    #[default]
    Rank,
    LogitDiff,
    Kl,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OrderKind {
    #[default]
    BreadthAsc,
    BreadthDesc,
    ReverseLayers,
    Random,
    DepthFirst,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum LogitModeKind {
    #[default]
    TopToken,
    MaxAbs,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub checkpoint: Option<PathBuf>,
    pub tokenizer: Option<PathBuf>,
    pub param_manifest: Option<PathBuf>,
    #[serde(default)]
    pub precision: Precision,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PruneSection {
    pub ablation: AblationKind,
    pub noise_variance: f64,
    pub metric: MetricKind,
    pub tau: Option<f64>,
    pub n: usize,
    pub logit_mode: LogitModeKind,
    pub order: OrderKind,
    pub seed: u64,
    pub adjacent_only: bool,
}

impl Default for PruneSection {
    fn default() -> Self {
        Self {
            ablation: AblationKind::Zero,
            noise_variance: skillpath::circuit::DEFAULT_NOISE_VARIANCE,
            metric: MetricKind::Rank,
            tau: None,
            n: 1,
            logit_mode: LogitModeKind::TopToken,
            order: OrderKind::BreadthAsc,
            seed: 0,
            adjacent_only: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MediationSection {
    pub max_nodes: usize,
    pub delta: Option<f64>,
}

impl Default for MediationSection {
    fn default() -> Self {
        Self {
            max_nodes: skillpath::mediation::DEFAULT_MAX_NODES,
            delta: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub threads: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub prune: PruneSection,
    pub mediation: MediationSection,
    pub run: RunSection,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        // Paths in the file are relative to the file.
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.model.checkpoint, &mut cfg.model.tokenizer, &mut cfg.model.param_manifest]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn prune_config(&self) -> CliResult<PruneConfig> {
        let p = &self.prune;
        let ablation = match p.ablation {
            AblationKind::Zero => AblationStrategy::Zero,
            AblationKind::Mean => AblationStrategy::Mean,
            AblationKind::Noise => AblationStrategy::Noise {
                variance: p.noise_variance,
                seed: p.seed,
            },
        };
        let metric = match p.metric {
            MetricKind::Rank => {
                if p.tau.is_some() {
                    return Err(CliError::Config("`tau` does not apply to the rank metric".into()));
                }
                Metric::Rank { n: p.n }
            }
            MetricKind::LogitDiff => Metric::LogitDiff {
                tau: p.tau.unwrap_or(Metric::DEFAULT_LOGIT_TAU),
                mode: match p.logit_mode {
                    LogitModeKind::TopToken => LogitDiffMode::TopToken,
                    LogitModeKind::MaxAbs => LogitDiffMode::MaxAbs,
                },
            },
            MetricKind::Kl => Metric::Kl {
                tau: p.tau.unwrap_or(Metric::DEFAULT_KL_TAU),
            },
        };
        let order = match p.order {
            OrderKind::BreadthAsc => SearchOrder::BreadthAsc,
            OrderKind::BreadthDesc => SearchOrder::BreadthDesc,
            OrderKind::ReverseLayers => SearchOrder::ReverseLayers,
            OrderKind::Random => SearchOrder::Random { seed: p.seed },
            OrderKind::DepthFirst => SearchOrder::DepthFirst,
        };
        let cfg = PruneConfig {
            ablation,
            metric,
            order,
            adjacent_only: p.adjacent_only,
            record_trace: false,
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.mediation.max_nodes < 2 {
            return Err(CliError::Config("mediation.max_nodes must be at least 2".into()));
        }
        if let Some(d) = self.mediation.delta {
            if !(0.0..1.0).contains(&d) {
                return Err(CliError::Config(format!("mediation.delta must lie in [0, 1), got {d}")));
            }
        }
        if self.run.threads == Some(0) {
            return Err(CliError::Config("run.threads must be positive".into()));
        }
        self.prune_config().map(|_| ())
    }
}

/// Flag overrides for `[prune]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize, clap::Args)]
pub struct PruneFlags {
    #[arg(long, value_enum)]
    pub ablation: Option<AblationKind>,
    #[arg(long)]
    pub noise_variance: Option<f64>,
    #[arg(long, value_enum)]
    pub metric: Option<MetricKind>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Depth of the rank metric.
    #[arg(long = "rank-n")]
    pub n: Option<usize>,
    #[arg(long, value_enum)]
    pub logit_mode: Option<LogitModeKind>,
    #[arg(long, value_enum)]
    pub order: Option<OrderKind>,
    #[arg(long = "prune-seed")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub adjacent_only: bool,
}

impl PruneFlags {
    pub fn apply(&self, cfg: &mut RunConfig) {
        let p = &mut cfg.prune;
        if let Some(v) = self.ablation {
            p.ablation = v;
        }
        if let Some(v) = self.noise_variance {
            p.noise_variance = v;
        }
        if let Some(v) = self.metric {
            p.metric = v;
        }
        if self.tau.is_some() {
            p.tau = self.tau;
        }
        if let Some(v) = self.n {
            p.n = v;
        }
        if let Some(v) = self.logit_mode {
            p.logit_mode = v;
        }
        if let Some(v) = self.order {
            p.order = v;
        }
        if let Some(v) = self.seed {
            p.seed = v;
        }
        if self.adjacent_only {
            p.adjacent_only = true;
        }
    }
}

/// Flag overrides for `[model]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize, clap::Args)]
pub struct ModelFlags {
    /// safetensors checkpoint
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Directory holding vocab.json and merges.txt
    #[arg(long)]
    pub tokenizer: Option<PathBuf>,
    #[arg(long)]
    pub param_manifest: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub precision: Option<Precision>,
}

impl ModelFlags {
    pub fn apply(&self, cfg: &mut RunConfig) {
        let m = &mut cfg.model;
        if self.model.is_some() {
            m.checkpoint = self.model.clone();
        }
        if self.tokenizer.is_some() {
            m.tokenizer = self.tokenizer.clone();
        }
        if self.param_manifest.is_some() {
            m.param_manifest = self.param_manifest.clone();
        }
        if let Some(p) = self.precision {
            m.precision = p;
        }
    }
}
