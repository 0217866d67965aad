use thiserror::Error;

use crate::model::LevelKind;
use crate::validate::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed span at {level} #{index}: end {end} <= start {start}")]
    MalformedSpan {
        level: LevelKind,
        index: usize,
        start: f64,
        end: f64,
    },
    #[error("{level} node {id} [{start}, {end}] is not covered by any {parent} interval")]
    Uncovered {
        level: LevelKind,
        parent: LevelKind,
        id: String,
        start: f64,
        end: f64,
    },
    #[error("requested level {0} is missing from the analysis file")]
    MissingLevel(LevelKind),
    #[error("unsupported analysis file version {0}")]
    UnsupportedVersion(u32),
    #[error("illegal feature {name}={value} for level {level}")]
    IllegalFeature {
        level: LevelKind,
        name: String,
        value: String,
    },
    #[error("malformed graph: {0}")]
    MalformedGraph(String),
    #[error("graph is structurally invalid: {0}")]
    Invalid(ValidationReport),
    #[error("keep_top_n = {keep} out of range 1..={levels}")]
    AblationRange { keep: usize, levels: usize },
    #[error("level structure mismatch: {0:?} vs {1:?}")]
    LevelMismatch(Vec<LevelKind>, Vec<LevelKind>),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("partition maps differ")]
    PartitionMismatch,
    #[error("invalid annealing schedule: {0}")]
    Schedule(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("no admissible centroid move")]
    NoAdmissibleMove,
    #[error("cannot find {wanted} valid edits (found {found}) within retry budget")]
    EditBudget { wanted: usize, found: usize },
    #[error("label mismatch between distance matrices")]
    LabelMismatch,
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("subgraph size {0} outside 2..=5")]
    SubgraphSize(usize),
    #[error("subgraph enumeration exceeded cap of {0} candidates")]
    SubgraphOverflow(usize),
    #[error("constraint encoding: {0}")]
    Encoding(String),
    #[error("partition {partition} is unsatisfiable")]
    Unsatisfiable { partition: String },
    #[error("solver failure: {0}")]
    Solver(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
