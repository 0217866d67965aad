use std::path::PathBuf;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug, Clone)]
#[command(name = "stg", version, about = "Structural temporal graphs: distance, centroids, repair and studies")]
pub struct Cli {
    /// Master seed for every stochastic stage.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// SMT solver binary (default: $STG_SOLVER, then z3 on PATH).
    #[arg(long, global = true)]
    pub solver: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// TOML run configuration; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Build a compressed graph from an analysis record.
    Ingest {
        input: PathBuf,
        /// Levels to keep, e.g. `segmentation,key,chord` (default: all present).
        #[arg(long, value_delimiter = ',')]
        levels: Vec<String>,
    },
    /// Check a record or graph against the structural rules.
    Validate { input: PathBuf },
    /// Write the augmented form of a graph.
    Augment {
        input: PathBuf,
        /// Also write a DOT rendering.
        #[arg(long)]
        dot: bool,
    },
    /// Collapse an augmented graph back to its compressed form.
    Compress { input: PathBuf },
    /// Structural distance between two graphs.
    Distance {
        a: PathBuf,
        b: PathBuf,
        /// Exact alignment when the search space allows it.
        #[arg(long)]
        exhaustive: bool,
    },
    /// Pairwise distances over a set of graphs (files or directories).
    DistanceMatrix {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Keep only the top N levels of every graph first.
        #[arg(long)]
        keep: Option<usize>,
    },
    /// Derive the centroid of a corpus.
    Centroid {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Repair the result into a valid graph.
        #[arg(long)]
        repair: bool,
    },
    /// Repair an approximate centroid matrix.
    Repair {
        input: PathBuf,
        /// Keep every emitted solver script.
        #[arg(long)]
        dump_scripts: bool,
    },
    /// Generate a synthetic corpus around a base graph.
    Synth {
        #[arg(long)]
        base: PathBuf,
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// Flips per variant (default: half the base's edges).
        #[arg(long, conflicts_with = "p")]
        edits: Option<usize>,
        /// Flips per variant as a ratio of the base's edges.
        #[arg(long)]
        p: Option<f64>,
    },
    /// Evaluation studies.
    Study {
        #[command(subcommand)]
        study: Study,
    },
    /// Mantel test with Spearman's rank correlation between two matrices.
    Mantel {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        perms: Option<usize>,
    },
    /// Connected subgraphs common to a corpus and their share in a centroid.
    Mine {
        #[arg(required = true)]
        corpus: Vec<PathBuf>,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        centroid: Option<PathBuf>,
    },
    /// Execute the pipeline steps of a run configuration.
    Run { config: PathBuf },
    /// Re-execute a recorded run and compare its outputs bit for bit.
    Replay { manifest: PathBuf },
}

#[derive(Subcommand, Debug, Clone)]
pub enum Study {
    /// Relative error of annealed distances against known edit counts.
    DistError {
        #[arg(long, required = true)]
        base: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        p: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        replicates: usize,
        /// Skip checking that no cheaper alignment undoes part of a script.
        #[arg(long)]
        no_certify: bool,
    },
    /// Loss error of derived and naive centroids against the true centroid.
    CentroidError {
        #[arg(long)]
        base: PathBuf,
        #[arg(long, value_delimiter = ',')]
        ks: Vec<usize>,
        /// Score the unrepaired centroid.
        #[arg(long)]
        no_repair: bool,
    },
    /// Distance matrices with 5, 4, …, 1 levels kept.
    Ablation {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::Validate { .. } => "validate",
            Command::Augment { .. } => "augment",
            Command::Compress { .. } => "compress",
            Command::Distance { .. } => "distance",
            Command::DistanceMatrix { .. } => "distance-matrix",
            Command::Centroid { .. } => "centroid",
            Command::Repair { .. } => "repair",
            Command::Synth { .. } => "synth",
            Command::Study { .. } => "study",
            Command::Mantel { .. } => "mantel",
            Command::Mine { .. } => "mine",
            Command::Run { .. } => "run",
            Command::Replay { .. } => "replay",
        }
    }

    pub fn needs_solver(&self) -> bool {
        matches!(
            self,
            Command::Repair { .. }
                | Command::Centroid { repair: true, .. }
                | Command::Study {
                    study: Study::CentroidError { no_repair: false, .. }
                }
        )
    }
}
