use clap::{Args, Parser, Subcommand, ValueEnum};
use o2m_core::mrg::StrategyKind;
use o2m_core::pipeline::SelectorName;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "o2m", version, about = "Generate diverse response sets and pick the best reply")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus with planted response quality.
    Fixture(FixtureArgs),
    /// Generate a response set for every context in a JSONL file.
    Generate(GenerateArgs),
    /// Score existing response sets with the diversity and coherence metrics.
    Metrics(MetricsArgs),
    /// Run generation and selection end to end and write a results table.
    Evaluate(EvaluateArgs),
    /// Pick one response per set with a trained selector.
    Select(SelectArgs),
    /// Print the most diverse corpus samples, usable as demonstrations.
    Demos(DemosArgs),
    /// Train a selector head from preference pairs.
    Train(TrainArgs),
    /// Win/tie/loss percentages from judgment JSONL.
    Tally(TallyArgs),
    /// t-test on one metric between two record files.
    Significance(SignificanceArgs),
    /// Run the HTTP service for chat sessions and annotation.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Backend configuration file.
    #[arg(long, default_value = "o2m.toml")]
    pub config: PathBuf,
    /// Overrides the seed of every mock backend.
    #[arg(long)]
    pub backend_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct StrategyArgs {
    #[arg(long, value_parser = parse_strategy, default_value = "pc")]
    pub strategy: StrategyKind,
    #[arg(long, default_value_t = 5)]
    pub n: usize,
    /// Number of demonstrations (fs and cot only).
    #[arg(long, default_value_t = 0)]
    pub shots: usize,
    /// Corpus to draw demonstrations from.
    #[arg(long)]
    pub demos: Option<PathBuf>,
    #[arg(long, default_value_t = 0.7)]
    pub temperature: f64,
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, default_value_t = 5)]
    pub n: usize,
    /// Probability that a slot is left empty.
    #[arg(long, default_value_t = 0.0)]
    pub missing_rate: f64,
    /// Corpus output; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the preference pairs implied by the planted quality.
    #[arg(long)]
    pub preferences: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub strategy: StrategyArgs,
    /// Context JSONL.
    #[arg(long)]
    pub input: PathBuf,
    /// Response-set JSONL.
    #[arg(long)]
    pub output: PathBuf,
    /// Per-context generation logs.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Seed for mock generators; same as --backend-seed.
    #[arg(long, conflicts_with = "backend_seed")]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum UeModeArg {
    Indicator,
    Probability,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Corpus JSONL with response sets.
    #[arg(long)]
    pub input: PathBuf,
    /// Per-sample reports.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Summary CSV; standard output when omitted.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "indicator")]
    pub ue_mode: UeModeArg,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct ModelPaths {
    /// Model for the odrp selector.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Model for the odrp_hn selector.
    #[arg(long)]
    pub hn_model: Option<PathBuf>,
    /// Model for the cls selector.
    #[arg(long)]
    pub cls_model: Option<PathBuf>,
    /// Seed of the rand selector.
    #[arg(long, default_value_t = 0)]
    pub rand_seed: u64,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Context JSONL to generate for.
    #[arg(long, conflicts_with = "sets", required_unless_present = "sets")]
    pub input: Option<PathBuf>,
    /// Corpus JSONL with pre-generated sets; generation is skipped.
    #[arg(long)]
    pub sets: Option<PathBuf>,
    #[command(flatten)]
    pub strategy: StrategyArgs,
    /// Selectors to compare; repeat or separate with commas.
    #[arg(long = "selector", value_parser = parse_selector, value_delimiter = ',', default_value = "rand")]
    pub selectors: Vec<SelectorName>,
    #[command(flatten)]
    pub models: ModelPaths,
    /// Every run record, all selectors concatenated.
    #[arg(long)]
    pub records: Option<PathBuf>,
    /// Results table CSV; standard output when omitted.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "indicator")]
    pub ue_mode: UeModeArg,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// Corpus JSONL with response sets.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Selection JSONL; standard output when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct DemosArgs {
    /// Corpus JSONL with response sets.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Print the combined similarity after each id.
    #[arg(long)]
    pub scores: bool,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    Pairwise,
    Bce,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Preference JSONL.
    #[arg(long)]
    pub prefs: PathBuf,
    /// Context JSONL (or a corpus) holding every referenced context.
    #[arg(long)]
    pub contexts: Option<PathBuf>,
    /// Defaults to 2, or 4 with --hard-negatives.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = 2e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.01)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = o2m_core::odrp::DEFAULT_HIDDEN_WIDTH)]
    pub hidden: usize,
    #[arg(long, value_enum, default_value = "pairwise")]
    pub objective: ObjectiveArg,
    /// Score responses without the context embedding.
    #[arg(long)]
    pub response_only: bool,
    /// Fine-tune --base-model on its lowest-margin pairs.
    #[arg(long, requires = "base_model")]
    pub hard_negatives: bool,
    #[arg(long)]
    pub base_model: Option<PathBuf>,
    /// Fraction of pairs kept by mining.
    #[arg(long, default_value_t = o2m_core::odrp::DEFAULT_MINING_FRACTION)]
    pub fraction: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Loss-trace CSV; defaults to the model path with `.loss.csv` appended.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct TallyArgs {
    /// Judgment JSONL (`{comparison_id, verdict}`).
    #[arg(long)]
    pub input: PathBuf,
    /// CSV output; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    SelectedUe,
    SelectedUnieval,
    DLex,
    DSem,
    Ue,
    Unieval,
    Distinct1,
    Distinct2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TestArg {
    Welch,
    Paired,
}

#[derive(Debug, Args)]
pub struct SignificanceArgs {
    /// Run records of system A.
    #[arg(long)]
    pub a: PathBuf,
    /// Run records of system B.
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, value_enum, default_value = "selected-ue")]
    pub metric: MetricArg,
    #[arg(long, value_enum, default_value = "welch")]
    pub test: TestArg,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[command(flatten)]
    pub strategy: StrategyArgs,
    /// Selector for the reply; odrp when --model is given, else rand.
    #[arg(long, value_parser = parse_selector)]
    pub selector: Option<SelectorName>,
    #[command(flatten)]
    pub models: ModelPaths,
    /// Environment variable holding a bearer token required on every request.
    #[arg(long)]
    pub token_env: Option<String>,
    /// Annotation log, appended to and reloaded on start.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

fn parse_strategy(s: &str) -> Result<StrategyKind, String> {
    s.parse().map_err(|e: o2m_core::mrg::MrgError| e.to_string())
}

fn parse_selector(s: &str) -> Result<SelectorName, String> {
    s.parse().map_err(|e: o2m_core::pipeline::PipelineError| e.to_string())
}
