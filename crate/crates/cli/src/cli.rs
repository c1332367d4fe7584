use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::{ModelFlags, PruneFlags};

#[derive(Debug, Parser)]
#[command(name = "skillpath", version, about = "Circuit decomposition, pruning and skill-path mediation for GPT-2-style models")]
pub struct Cli {
    /// TOML run configuration
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: SKILLPATH_THREADS, then all cores)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Directory receiving outputs and the run manifest
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Subcommand)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Command {
    /// Compare the full circuit graph against the plain forward pass
    CheckDecomp(CheckDecompArgs),
    /// Build sample triads from a corpus
    GenData(GenDataArgs),
    /// Greedy-prune every triad member into per-sample circuit graphs
    Prune(PruneArgs),
    /// Path effects over pruned triads
    Mediate(MediateArgs),
    /// Threshold an effect table into a skill graph
    SkillGraph(SkillGraphArgs),
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    #[command(subcommand)]
    Export(ExportCommand),
    /// Re-run a manifest into a fresh directory and compare outputs
    Replay(ReplayArgs),
    /// Write a random toy checkpoint
    #[command(hide = true)]
    MakeToy(MakeToyArgs),
}

impl Command {
    pub fn name(&self) -> String {
        match self {
            Command::CheckDecomp(_) => "check-decomp".into(),
            Command::GenData(_) => "gen-data".into(),
            Command::Prune(_) => "prune".into(),
            Command::Mediate(_) => "mediate".into(),
            Command::SkillGraph(_) => "skill-graph".into(),
            Command::Analyze(a) => format!("analyze-{}", a.name()),
            Command::Export(e) => format!("export-{}", e.name()),
            Command::Replay(_) => "replay".into(),
            Command::MakeToy(_) => "make-toy".into(),
        }
    }

    pub fn model_flags(&self) -> Option<&ModelFlags> {
        match self {
            Command::CheckDecomp(a) => Some(&a.model),
            Command::GenData(a) => Some(&a.model),
            Command::Prune(a) => Some(&a.model),
            Command::Analyze(AnalyzeCommand::Removal(a)) => Some(&a.model),
            Command::Analyze(AnalyzeCommand::Sweep(a)) => Some(&a.model),
            Command::Export(ExportCommand::Candidates(a)) => Some(&a.model),
            _ => None,
        }
    }

    pub fn prune_flags(&self) -> Option<&PruneFlags> {
        match self {
            Command::Prune(a) => Some(&a.prune),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, clap::Args)]
pub struct CheckDecompArgs {
    #[command(flatten)]
    pub model: ModelFlags,
    /// One prompt per line
    #[arg(long)]
    pub prompts: PathBuf,
    /// Maximum tolerated absolute final-logit error
    #[arg(long, default_value_t = 1e-2)]
    pub tol: f64,
    /// Truncate prompts to this many tokens
    #[arg(long, default_value_t = 30)]
    pub max_tokens: usize,
    /// Also dump every circuit activation of the first prompt
    #[arg(long)]
    pub dump: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SkillKind {
    Pvt,
    Idt,
    Icl,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Bkg1,
    Bkg2,
    Bkg3,
    Bkg4,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, clap::Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long, value_enum)]
    pub skill: SkillKind,
    /// Text lines (pvt, idt) or `text<TAB>label` rows (icl)
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub n: usize,
    /// Overrides run.seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Induction background construction
    #[arg(long, value_enum, default_value = "bkg1")]
    pub variant: Variant,
    #[arg(long, default_value = "{text} Sentiment: {label}")]
    pub template: String,
    #[arg(long)]
    pub allow_partial: bool,
    #[arg(long, default_value = "triads.jsonl")]
    pub output: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Members {
    /// Original text only
    Ori,
    /// Original, background and self
    #[default]
    Triad,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, clap::Args)]
pub struct PruneArgs {
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub prune: PruneFlags,
    /// Triads JSONL
    #[arg(long, alias = "corpus")]
    pub triads: PathBuf,
    #[arg(long, value_enum, default_value = "triad")]
    pub members: Members,
    #[command(flatten)]
    pub range: SampleRange,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize, clap::Args)]
pub struct SampleRange {
    /// Skip this many leading samples
    #[arg(long, default_value_t = 0)]
    pub skip: usize,
    /// Use at most this many samples
    #[arg(long)]
    pub take: Option<usize>,
}

impl SampleRange {
    pub fn indices(&self, len: usize) -> std::ops::Range<usize> {
        let start = self.skip.min(len);
        let end = self.take.map_or(len, |t| (start + t).min(len));
        start..end
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, clap::Args)]
pub struct MediateArgs {
    /// Output directory of `prune`
    #[arg(long)]
    pub graphs: PathBuf,
    #[arg(long)]
    pub max_nodes: Option<usize>,
    #[command(flatten)]
    pub range: SampleRange,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, clap::Args)]
pub struct SkillGraphArgs {
    #[arg(long)]
    pub effects: PathBuf,
    /// Defaults to mediation.delta, then the skill's default
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub skill: Option<String>,
    #[arg(long, default_value = "skill_graph.json")]
    pub output: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Subcommand)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AnalyzeCommand {
    /// Incoming-path counts per receiver
    Receivers(ReceiversArgs),
    /// Edge overlap of two skill graphs
    Overlap(OverlapArgs),
    /// Percentage Hamming distance of circuit graphs
    Hamming(HammingArgs),
    /// Absence rates of nodes between correct and incorrect graph sets
    Absence(AbsenceArgs),
    /// Accuracy after removing paths or random edges
    Removal(RemovalArgs),
    /// Threshold sweep on held-out samples
    Sweep(SweepArgs),
    /// Bisection clustering of samples by skill-path presence
    Cluster(ClusterArgs),
    /// Bundle several outputs into one JSON document
    Report(ReportArgs),
}

impl AnalyzeCommand {
    pub fn name(&self) -> &'static str {
        match self {
            AnalyzeCommand::Receivers(_) => "receivers",
            AnalyzeCommand::Overlap(_) => "overlap",
            AnalyzeCommand::Hamming(_) => "hamming",
            AnalyzeCommand::Absence(_) => "absence",
            AnalyzeCommand::Removal(_) => "removal",
            AnalyzeCommand::Sweep(_) => "sweep",
            AnalyzeCommand::Cluster(_) => "cluster",
            AnalyzeCommand::Report(_) => "report",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, clap::Args)]
pub struct ReceiversArgs {
    #[arg(long)]
    pub skill_graph: PathBuf,
    #[arg(long, default_value_t = skillpath::analytics::DEFAULT_KEY_RECEIVER_THRESHOLD)]
    pub threshold: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, clap::Args)]
pub struct OverlapArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    /// Also compare against this many degree-preserving shuffles of B
    #[arg(long, default_value_t = 0)]
    pub shuffles: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, clap::Args)]
pub struct HammingArgs {
    /// Circuit graph files, paired with `--b` in order
    #[arg(long, num_args = 1.., required = true)]
    pub a: Vec<PathBuf>,
    #[arg(long, num_args = 1.., required = true)]
    pub b: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, clap::Args)]
pub struct AbsenceArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub correct: Vec<PathBuf>,
    #[arg(long, num_args = 0..)]
    pub incorrect: Vec<PathBuf>,
    /// Nodes as `layer,index`; default: every node receiving a path in the correct graphs
    #[arg(long, num_args = 1..)]
    pub nodes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, clap::Args)]
pub struct RemovalArgs {
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long)]
    pub triads: PathBuf,
    /// Output directory of `prune`
    #[arg(long)]
    pub graphs: PathBuf,
    /// `nothing`, `paths:FILE`, `random:K:SEED`, `random-like:FILE:SEED` or `difference:A:B`
    #[arg(long = "remove", num_args = 1.., required = true)]
    pub removals: Vec<String>,
    #[command(flatten)]
    pub range: SampleRange,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, clap::Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long)]
    pub effects: PathBuf,
    #[arg(long)]
    pub triads: PathBuf,
    #[arg(long)]
    pub graphs: PathBuf,
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    pub deltas: Vec<f64>,
    #[command(flatten)]
    pub range: SampleRange,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, clap::Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub graphs: PathBuf,
    #[arg(long)]
    pub effects: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub top_fraction: f64,
    #[arg(long, default_value_t = 0.1)]
    pub min_gap: f64,
    #[arg(long, default_value_t = 10)]
    pub min_cluster: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub range: SampleRange,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, clap::Args)]
pub struct ReportArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, default_value = "report.json")]
    pub output: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Subcommand)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ExportCommand {
    /// Graphviz rendering of a skill graph
    Dot(DotArgs),
    /// Effect table as JSON records
    Effects(EffectsExportArgs),
    /// `(eff_ori, eff_bkg|eff_slf)` pairs per floor
    Pairs(PairsArgs),
    /// Top-k candidate logits of every triad member
    Candidates(CandidatesArgs),
}

impl ExportCommand {
    pub fn name(&self) -> &'static str {
        match self {
            ExportCommand::Dot(_) => "dot",
            ExportCommand::Effects(_) => "effects",
            ExportCommand::Pairs(_) => "pairs",
            ExportCommand::Candidates(_) => "candidates",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, clap::Args)]
pub struct DotArgs {
    #[arg(long)]
    pub skill_graph: PathBuf,
    /// Only paths with effect above this floor are drawn
    #[arg(long, default_value_t = 0.0)]
    pub floor: f64,
    #[arg(long, default_value = "skill_graph.dot")]
    pub output: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, clap::Args)]
pub struct EffectsExportArgs {
    #[arg(long)]
    pub effects: PathBuf,
    #[arg(long, default_value = "effects.json")]
    pub output: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum AgainstKind {
    Bkg,
    Slf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, clap::Args)]
pub struct PairsArgs {
    #[arg(long)]
    pub effects: PathBuf,
    #[arg(long, value_enum, default_value = "bkg")]
    pub against: AgainstKind,
    #[arg(long, num_args = 1.., value_delimiter = ',', default_values_t = skillpath::mediation::DEFAULT_PAIR_FLOORS.to_vec())]
    pub floors: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, clap::Args)]
pub struct CandidatesArgs {
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long)]
    pub triads: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value = "candidates.csv")]
    pub output: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, clap::Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, clap::Args)]
pub struct MakeToyArgs {
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 2)]
    pub heads: usize,
    #[arg(long, default_value_t = 16)]
    pub d_model: usize,
    #[arg(long, default_value_t = 50257)]
    pub vocab: usize,
    #[arg(long, default_value_t = 64)]
    pub n_ctx: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.3)]
    pub scale: f64,
    #[arg(long, default_value = "model.safetensors")]
    pub output: String,
}
