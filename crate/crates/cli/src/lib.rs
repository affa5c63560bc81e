//! The `odorpair` command line: each subcommand is one pipeline stage that
//! reads files, writes artifacts into `--out` and records a `manifest.json`.

pub mod commands;
pub mod error;
pub mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use error::{CliError, ErrorKind};
pub use manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(
    name = "odorpair",
    version,
    about = "Odor-descriptor prediction for aroma-chemical pairs"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Run directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read pair (and single-molecule) JSONL records into a meta-graph.
    Ingest(IngestArgs),
    /// Partition the meta-graph into molecule-disjoint splits.
    Carve(CarveArgs),
    /// Train a GIN or MPNN model on a carving.
    Train(TrainArgs),
    /// Cross-validated random hyperparameter search over k-fold carvings.
    Search(SearchArgs),
    /// Score a predictor on the test component of a carving.
    Eval(EvalArgs),
    /// Regress pair embeddings on their constituents' embeddings.
    Analyze(AnalyzeArgs),
    /// Compute a Morgan fingerprint cache.
    Fp(FpArgs),
    /// Dependent and isolated notes, plus blend/constituent label agreement.
    Notes(NotesArgs),
    /// Write a synthetic rule-labeled dataset.
    Synth(SynthArgs),
    /// Check a manifest's recorded digests against the files on disk.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub mono: Option<PathBuf>,
    /// Existing vocabulary whose notes keep their indices.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    BestOf,
    FirstValid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    UsableEdges,
    Kl,
}

#[derive(Debug, Args)]
pub struct CarveArgs {
    #[arg(long)]
    pub metagraph: PathBuf,
    /// Share of molecules in the training component of a two-way carving.
    #[arg(long, default_value_t = 0.5)]
    pub fraction: f64,
    #[arg(long, default_value_t = 100_000)]
    pub max_iters: usize,
    /// Produce this many train/valid/test carvings instead of one two-way carving.
    #[arg(long)]
    pub kfold: Option<usize>,
    /// Train, valid, test fractions for `--kfold`.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.7, 0.1, 0.2])]
    pub ratios: Vec<f64>,
    #[arg(long, value_enum, default_value_t = ModeArg::BestOf)]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::UsableEdges)]
    pub objective: ObjectiveArg,
    /// Newline-separated notes that must be covered; defaults to every edge label.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ArchArg {
    Gin,
    Mpnn,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub metagraph: PathBuf,
    #[arg(long)]
    pub carving: PathBuf,
    /// JSON training settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub arch: Option<ArchArg>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Train this many replicas with consecutive seeds and score their average.
    #[arg(long)]
    pub ensemble: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SpaceArg {
    Pair,
    Single,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub metagraph: PathBuf,
    /// Three-way carving files, one per fold.
    #[arg(long, value_delimiter = ',', required = true)]
    pub carvings: Vec<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    #[arg(long, value_enum, default_value_t = SpaceArg::Pair)]
    pub space: SpaceArg,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub arch: Option<ArchArg>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Predictor {
    Gin,
    Mpnn,
    LogregMfp,
    ZeroR,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub predictor: Predictor,
    #[arg(long)]
    pub metagraph: PathBuf,
    #[arg(long)]
    pub carving: PathBuf,
    /// Training run directory; required for `gin` and `mpnn`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = odor_core::fingerprint::DEFAULT_RADIUS)]
    pub radius: usize,
    #[arg(long, default_value_t = odor_core::fingerprint::DEFAULT_NBITS)]
    pub nbits: usize,
    /// L2 penalty of the fingerprint baseline.
    #[arg(long, default_value_t = 1e-3)]
    pub l2: f64,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub metagraph: PathBuf,
    /// Training run directory.
    #[arg(long)]
    pub model: PathBuf,
    /// Restrict to the carving's test pairs; otherwise every pair.
    #[arg(long)]
    pub carving: Option<PathBuf>,
    /// KDE grid points.
    #[arg(long, default_value_t = 200)]
    pub grid: usize,
}

#[derive(Debug, Args)]
pub struct FpArgs {
    /// Fingerprint every molecule of this meta-graph.
    #[arg(long, conflicts_with = "smiles", required_unless_present = "smiles")]
    pub metagraph: Option<PathBuf>,
    /// Or a file with one SMILES per line.
    #[arg(long)]
    pub smiles: Option<PathBuf>,
    #[arg(long, default_value_t = odor_core::fingerprint::DEFAULT_RADIUS)]
    pub radius: usize,
    #[arg(long, default_value_t = odor_core::fingerprint::DEFAULT_NBITS)]
    pub nbits: usize,
}

#[derive(Debug, Args)]
pub struct NotesArgs {
    #[arg(long)]
    pub metagraph: PathBuf,
    /// `mono.bin` from ingest, for the blend/constituent agreement.
    #[arg(long)]
    pub mono: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    pub pairs: usize,
    #[arg(long, default_value_t = 150)]
    pub molecules: usize,
    #[arg(long, default_value_t = 0.3)]
    pub sulfur_rate: f64,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::internal(e.to_string()))?;
    }
    let g = &cli.global;
    match &cli.command {
        Command::Ingest(a) => commands::ingest(g, a),
        Command::Carve(a) => commands::carve(g, a),
        Command::Train(a) => commands::train(g, a),
        Command::Search(a) => commands::search(g, a),
        Command::Eval(a) => commands::eval(g, a),
        Command::Analyze(a) => commands::analyze(g, a),
        Command::Fp(a) => commands::fp(g, a),
        Command::Notes(a) => commands::notes(g, a),
        Command::Synth(a) => commands::synth(g, a),
        Command::Verify(a) => commands::verify(a),
    }
}
