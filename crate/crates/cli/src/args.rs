use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use drsne::data::{ColumnRef, CsvOptions, Projection};

#[derive(Parser, Debug)]
#[command(name = "drsne", version, about = "Density-regularized stochastic neighbor embedding")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic dataset as CSV plus a provenance JSON.
    Generate(GenerateArgs),
    /// Embed a CSV dataset.
    Embed(EmbedArgs),
    /// Score an embedding against its source data.
    Evaluate(EvaluateArgs),
    /// Repeat embeddings over one configuration axis.
    Sweep(SweepArgs),
    /// Run anomaly detectors in embedding space and report AUPRC.
    Anomaly(AnomalyArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[command(subcommand)]
    pub kind: GenerateKind,
}

#[derive(Subcommand, Debug)]
pub enum GenerateKind {
    /// Spiral in a higher-dimensional space with low-density anomaly flags.
    DensitySpiral(SpiralArgs),
    /// Noise-free 2-D spiral without anomaly flags.
    Spiral(PlainSpiralArgs),
    /// Labelled Gaussian clusters with different spreads.
    Blobs(BlobsArgs),
}

#[derive(Args, Debug)]
pub struct SpiralArgs {
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3.0)]
    pub t_min: f64,
    #[arg(long, default_value_t = 15.0)]
    pub t_max: f64,
    #[arg(long, default_value_t = 3.0)]
    pub period: f64,
    #[arg(long, default_value_t = 0.8)]
    pub amplitude: f64,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 10)]
    pub ambient_dim: usize,
    #[arg(long, default_value_t = 5.0)]
    pub anomaly_percentile: f64,
    #[arg(long, value_enum, default_value_t = ProjectionArg::Orthonormal)]
    pub projection: ProjectionArg,
    /// Keep raw ambient coordinates.
    #[arg(long)]
    pub no_standardize: bool,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct PlainSpiralArgs {
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3.0)]
    pub t_min: f64,
    #[arg(long, default_value_t = 15.0)]
    pub t_max: f64,
    #[arg(long, default_value_t = 3.0)]
    pub period: f64,
    #[arg(long, default_value_t = 0.8)]
    pub amplitude: f64,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct BlobsArgs {
    #[arg(long, default_value_t = 1500)]
    pub n: usize,
    #[arg(long, default_value_t = 10)]
    pub dim: usize,
    /// Comma-separated standard deviation per cluster.
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,1,2,4")]
    pub spreads: Vec<f64>,
    #[arg(long, default_value_t = 20.0)]
    pub center_box: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum ProjectionArg {
    Orthonormal,
    Raw,
    Identity,
}

impl From<ProjectionArg> for Projection {
    fn from(p: ProjectionArg) -> Self {
        match p {
            ProjectionArg::Orthonormal => Projection::Orthonormal,
            ProjectionArg::Raw => Projection::Raw,
            ProjectionArg::Identity => Projection::Identity,
        }
    }
}

/// How to read a feature CSV.
#[derive(Args, Debug, Clone)]
pub struct InputArgs {
    /// The first row is a header.
    #[arg(long)]
    pub header: bool,
    /// Label column, by zero-based index or header name.
    #[arg(long)]
    pub label_column: Option<String>,
    /// Anomaly-flag column, by zero-based index or header name.
    #[arg(long)]
    pub anomaly_column: Option<String>,
}

impl InputArgs {
    pub fn csv_options(&self) -> CsvOptions {
        let parse = |s: &String| s.parse::<ColumnRef>().expect("infallible");
        CsvOptions {
            has_header: self.header,
            label_column: self.label_column.as_ref().map(parse),
            anomaly_column: self.anomaly_column.as_ref().map(parse),
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct PreprocessArgs {
    /// Skip column standardization.
    #[arg(long)]
    pub no_standardize: bool,
    /// Project onto this many principal components before embedding.
    #[arg(long)]
    pub pca_dim: Option<usize>,
}

/// Optimizer settings; each flag overrides the `--config` file.
#[derive(Args, Debug, Clone)]
pub struct OptimizerArgs {
    /// JSON file with a full or partial optimizer configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub k_kl: Option<usize>,
    #[arg(long)]
    pub k_density: Option<usize>,
    #[arg(long)]
    pub perplexity: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub warmup_iters: Option<usize>,
    #[arg(long)]
    pub exaggeration: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub init_std: Option<f64>,
    /// Output dimension (1 to 3).
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Affinities over all pairs instead of the kNN graph.
    #[arg(long)]
    pub dense_affinities: bool,
    /// Recompute embedding-space density neighbors every N iterations.
    #[arg(long, value_name = "N")]
    pub recompute_density_every: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EmbedArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    /// Embedding CSV; provenance and loss trace go next to it.
    #[arg(short, long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub csv: InputArgs,
    #[command(flatten)]
    pub preprocess: PreprocessArgs,
    #[command(flatten)]
    pub optimizer: OptimizerArgs,
    /// Attach a metric report to the provenance file.
    #[arg(long)]
    pub evaluate: bool,
    /// Density neighborhood for `--evaluate`; defaults to k_density.
    #[arg(long)]
    pub k_eval: Option<usize>,
}

#[derive(ValueEnum, Clone, Copy, Debug, Default)]
pub enum CorrelationArg {
    #[default]
    Pearson,
    Spearman,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Source data the embedding was computed from.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub embedding: PathBuf,
    #[command(flatten)]
    pub csv: InputArgs,
    /// Compare against the raw columns instead of standardized ones.
    #[arg(long)]
    pub no_standardize: bool,
    #[arg(long, default_value_t = 300)]
    pub k_eval: usize,
    #[arg(long, default_value_t = 10)]
    pub k_trust: usize,
    #[arg(long, value_enum, default_value_t = CorrelationArg::Pearson)]
    pub correlation: CorrelationArg,
    /// Report path; stdout when omitted.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(long, value_parser = ["lambda", "k_density", "pca_dim", "perplexity"])]
    pub axis: String,
    /// Comma-separated axis values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// Long-format per-run CSV.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Per-value mean/std CSV; defaults to `<output stem>.summary.csv`.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[command(flatten)]
    pub csv: InputArgs,
    #[command(flatten)]
    pub preprocess: PreprocessArgs,
    #[command(flatten)]
    pub optimizer: OptimizerArgs,
    /// Density neighborhood of the evaluation; defaults to each run's k_density.
    #[arg(long)]
    pub k_eval: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub k_trust: usize,
    /// Suppress per-run progress lines on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Args, Debug)]
pub struct AnomalyArgs {
    #[arg(long)]
    pub embedding: PathBuf,
    /// CSV holding the anomaly column; defaults to the embedding file.
    #[arg(long)]
    pub flags: Option<PathBuf>,
    /// Anomaly column of the flags file, by index or header name.
    #[arg(long, default_value = "anomaly")]
    pub anomaly_column: String,
    /// The flags file has no header row.
    #[arg(long)]
    pub no_header: bool,
    #[arg(long, value_delimiter = ',', default_value = "knn,lof,iforest,centroid")]
    pub detectors: Vec<String>,
    /// Neighborhood size of knn and lof.
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    #[arg(long, default_value_t = 100)]
    pub trees: usize,
    #[arg(long, default_value_t = 256)]
    pub subsample: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-point score CSV (detector, index, score, is_anomaly).
    #[arg(short, long)]
    pub output: PathBuf,
    /// AUPRC JSON; defaults to `<output stem>.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
}
