use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "agriqrs", version, about = "Cluster farmer queries, map new queries to clusters and rank answers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the pipeline on a call-log CSV and write an artifact directory.
    Fit(FitArgs),
    /// Answer one query.
    Query(QueryArgs),
    /// Answer queries read from stdin, one per line.
    Repl(ReplArgs),
    /// Serve POST /query and GET /health over HTTP.
    Serve(ServeArgs),
    /// Silhouette, Calinski-Harabasz and Davies-Bouldin for the artifact's
    /// clustering and a size-matched K-Means baseline.
    EvalCluster(EvalClusterArgs),
    /// Retrain the mapper on a stratified split and report held-out metrics.
    EvalMapper(EvalMapperArgs),
    /// Mean NDCG@k against a scored answer set.
    EvalRetrieval(EvalRetrievalArgs),
    /// Time threshold clustering against K-Means on synthetic corpora.
    Bench(BenchArgs),
    /// Write a synthetic call-log corpus.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EmbedderKind {
    Hashed,
    File,
    Service,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MapperChoice {
    Lstm,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Table,
}

/// Overrides applied on top of `--config` (or the defaults).
#[derive(Debug, Default, Args)]
pub struct ConfigArgs {
    /// JSON configuration with the manifest's `config` schema; absent keys
    /// take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub thresh: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub min_size: Option<usize>,
    #[arg(long, value_enum)]
    pub embedder: Option<EmbedderKind>,
    /// Embedding dimension.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Sidecar base URL for `--embedder service`.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// JSON Lines embedding table for `--embedder file`.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Seed for training and for the hashed embedder.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub mapper: Option<MapperChoice>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Call-log CSV.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Crop names, one per line. Defaults to the corpus's crop column.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Artifact directory to write.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct AnswerArgs {
    #[arg(long)]
    pub artifact: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[command(flatten)]
    pub answer: AnswerArgs,
    pub text: String,
}

#[derive(Debug, Args)]
pub struct ReplArgs {
    #[command(flatten)]
    pub answer: AnswerArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub artifact: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: String,
}

#[derive(Debug, Args)]
pub struct EvalClusterArgs {
    #[arg(long)]
    pub artifact: PathBuf,
    /// K-Means seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    /// CSV output path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalMapperArgs {
    #[arg(long)]
    pub artifact: PathBuf,
    /// JSON report path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalRetrievalArgs {
    #[arg(long)]
    pub artifact: PathBuf,
    /// JSON Lines of `{"query", "crop", "scored_answers": [{"answer", "score"}]}`.
    #[arg(long)]
    pub scored: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,3,5,10")]
    pub k: Vec<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "1000,2000,4000")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    pub repetitions: usize,
    /// Skip silhouette, CH and DB.
    #[arg(long)]
    pub no_metrics: bool,
    #[arg(long, default_value_t = 768)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub thresh: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub min_size: Option<usize>,
    /// Single-threaded code path.
    #[arg(long)]
    pub sequential: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 20)]
    pub templates: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Corpus CSV to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the crop list here.
    #[arg(long)]
    pub lexicon_out: Option<PathBuf>,
}
