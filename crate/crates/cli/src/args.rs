use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "llmimage", version)]
#[command(about = "Extract full outputs, images and audits from top-k logit-bias APIs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Serve a mock model over HTTP until interrupted
    MockServe(MockServeArgs),
    /// Extract one full next-token distribution
    Extract(ExtractArgs),
    /// Collect and use model images
    #[command(subcommand)]
    Image(ImageCommand),
    /// Classify the update between two images
    Audit(AuditArgs),
    /// Decide which image an output came from
    Attribute(AttributeArgs),
    /// Print the per-strategy cost table
    Cost(CostArgs),
}

#[derive(Subcommand, Debug)]
pub enum ImageCommand {
    /// Collect outputs until the rank plateaus; writes an .llmimg file
    Collect(CollectArgs),
    /// Estimate the embedding size of an image or output matrix
    EmbedSize(EmbedSizeArgs),
    /// Write the singular spectrum as CSV
    Spectrum(SpectrumArgs),
    /// Extract a distribution with O(d) calls using a stored image
    FastExtract(FastExtractArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileArg {
    Native,
    OpenaiCompatible,
}

/// Where queries go. Without `--url` a mock model runs in-process.
#[derive(Args, Debug, Clone, Serialize)]
pub struct ApiArgs {
    /// Base URL of the API (e.g. http://127.0.0.1:8000)
    #[arg(long)]
    pub url: Option<String>,

    /// Mock model config (JSON) for in-process runs
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Override the mock seed
    #[arg(long)]
    pub seed: Option<u64>,

    /// Use a checkpoint-family member instead: clone, hidden-prompt=TEXT,
    /// partial-finetune=SIGMA, lora=RANK or full-finetune=SIGMA
    #[arg(long)]
    pub update: Option<String>,

    #[arg(long, value_enum, default_value = "native")]
    pub profile: ProfileArg,

    /// Environment variable holding a bearer token
    #[arg(long)]
    pub auth_env: Option<String>,

    /// Model name sent by the openai-compatible profile
    #[arg(long, default_value = "gpt-3.5-turbo")]
    pub model: String,

    /// Vocabulary size (openai-compatible profile)
    #[arg(long)]
    pub vocab: Option<usize>,

    /// Largest top_logprobs value (openai-compatible profile)
    #[arg(long, default_value_t = 5)]
    pub k_max: usize,

    /// Largest absolute logit bias (openai-compatible profile)
    #[arg(long, default_value_t = 100.0)]
    pub beta_max: f64,

    /// Treat the endpoint as stochastic (openai-compatible profile)
    #[arg(long)]
    pub stochastic: bool,

    /// JSON object mapping token strings to ids (openai-compatible profile)
    #[arg(long)]
    pub token_map: Option<PathBuf>,

    /// Send every query to the API, even repeats
    #[arg(long)]
    pub no_cache: bool,

    /// Queries in flight at once
    #[arg(long, default_value_t = 8)]
    pub concurrency: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyArg {
    Fast,
    Stable,
    Stochastic,
    LogprobFree,
}

#[derive(Args, Debug, Serialize)]
pub struct MockServeArgs {
    /// Mock model config (JSON); defaults to v=1000, d=64
    #[arg(long)]
    pub config: Option<PathBuf>,

    #[arg(long)]
    pub seed: Option<u64>,

    /// Serve a checkpoint-family member instead: clone, hidden-prompt=TEXT,
    /// partial-finetune=SIGMA, lora=RANK or full-finetune=SIGMA
    #[arg(long)]
    pub update: Option<String>,

    #[arg(long, default_value = "127.0.0.1:8000")]
    pub bind: String,

    /// Requests per second
    #[arg(long)]
    pub rate_limit: Option<f64>,

    /// Environment variable holding the bearer token clients must send
    #[arg(long)]
    pub auth_env: Option<String>,

    /// Answer the first N queries with 503
    #[arg(long, default_value_t = 0, hide = true)]
    pub inject_failures: u32,
}

#[derive(Args, Debug, Serialize)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub api: ApiArgs,

    #[arg(long)]
    pub context: String,

    #[arg(long, value_enum, default_value = "stable")]
    pub strategy: StrategyArg,

    /// Bias used for batches (defaults depend on the strategy)
    #[arg(long)]
    pub beta: Option<f64>,

    /// Target precision of the logprob-free strategy
    #[arg(long, default_value_t = 1e-6)]
    pub epsilon: f64,

    /// Expected replica count (stochastic)
    #[arg(long)]
    pub n_hint: Option<usize>,

    /// Call budget (stochastic)
    #[arg(long)]
    pub budget: Option<u64>,

    /// Distribution CSV
    #[arg(long)]
    pub out: PathBuf,

    /// Run manifest path; defaults to <out>.manifest.json
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct CollectArgs {
    #[command(flatten)]
    pub api: ApiArgs,

    #[arg(long, value_enum, default_value = "stable")]
    pub strategy: StrategyArg,

    /// Stop after this many outputs fail to raise the rank
    #[arg(long, default_value_t = 100)]
    pub margin: usize,

    /// Outputs between rank checks
    #[arg(long, default_value_t = 64)]
    pub batch: usize,

    /// Outputs kept beyond the plateau
    #[arg(long, default_value_t = 0)]
    pub extra: usize,

    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,

    #[arg(long)]
    pub max_columns: Option<usize>,

    /// One prompt per line; defaults to tok0, tok1, ...
    #[arg(long)]
    pub prompts: Option<PathBuf>,

    #[arg(long, default_value = "unknown")]
    pub source_id: String,

    /// Timestamp stored in the file (RFC 3339); defaults to now
    #[arg(long)]
    pub created_at: Option<String>,

    #[arg(long)]
    pub out: PathBuf,

    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct EmbedSizeArgs {
    /// An .llmimg file
    #[arg(long, conflicts_with = "matrix", required_unless_present = "matrix")]
    pub image: Option<PathBuf>,

    /// A clr output matrix as CSV (row per token)
    #[arg(long)]
    pub matrix: Option<PathBuf>,

    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,

    /// Also write the spectrum here
    #[arg(long)]
    pub spectrum_out: Option<PathBuf>,

    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct SpectrumArgs {
    #[arg(long)]
    pub image: PathBuf,

    #[arg(long)]
    pub out: PathBuf,

    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PivotArg {
    Qr,
    Leading,
}

#[derive(Args, Debug, Serialize)]
pub struct FastExtractArgs {
    #[command(flatten)]
    pub api: ApiArgs,

    #[arg(long)]
    pub image: PathBuf,

    #[arg(long)]
    pub context: String,

    #[arg(long, value_enum, default_value = "qr")]
    pub pivots: PivotArg,

    /// Largest accepted log-probability discrepancy
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,

    #[arg(long)]
    pub out: PathBuf,

    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct AuditArgs {
    #[arg(long)]
    pub image_a: PathBuf,

    #[arg(long)]
    pub image_b: PathBuf,

    /// Prompts (one per line) whose outputs are compared for a logit change
    #[arg(long)]
    pub probe_contexts: Option<PathBuf>,

    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,

    /// Also write the report here
    #[arg(long)]
    pub out: Option<PathBuf>,

    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct AttributeArgs {
    /// Directory of .llmimg candidates
    #[arg(long)]
    pub images: PathBuf,

    /// Output distribution CSV (as written by extract)
    #[arg(long)]
    pub output: PathBuf,

    #[arg(long, default_value_t = 1e-6)]
    pub max_relative_residual: f64,

    #[arg(long, default_value_t = 100.0)]
    pub min_margin: f64,

    /// Also write the report as JSON
    #[arg(long)]
    pub out: Option<PathBuf>,

    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatArg {
    Table,
    Json,
    Csv,
}

#[derive(Args, Debug, Serialize)]
pub struct CostArgs {
    #[arg(long, default_value_t = 100_000.0)]
    pub v: f64,

    #[arg(long, default_value_t = 5.0)]
    pub k: f64,

    #[arg(long, default_value_t = 4096.0)]
    pub d: f64,

    /// Replica count for the stochastic row
    #[arg(long, default_value_t = 4.0)]
    pub n: f64,

    #[arg(long, default_value_t = 100.0)]
    pub beta_max: f64,

    #[arg(long, default_value_t = 1e-6)]
    pub epsilon: f64,

    /// USD per API call
    #[arg(long, default_value_t = llmimage::extraction::DEFAULT_PRICE_PER_CALL)]
    pub price_per_call: f64,

    #[arg(long, value_enum, default_value = "table")]
    pub format: FormatArg,

    #[arg(long)]
    pub manifest: Option<PathBuf>,
}
