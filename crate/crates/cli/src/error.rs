use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("input: {0}")]
    Input(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: stg_core::Error,
    },
    #[error("replay differs from the recorded run: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use stg_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Input(_) | CliError::Io(_) => 3,
            CliError::Mismatch(_) => 5,
            CliError::Stage { source, .. } => match source {
                E::Schedule(_) => 2,
                E::Solver(_) | E::Unsatisfiable { .. } | E::Encoding(_) => 4,
                E::MalformedSpan { .. }
                | E::Uncovered { .. }
                | E::MissingLevel(_)
                | E::UnsupportedVersion(_)
                | E::IllegalFeature { .. }
                | E::MalformedGraph(_)
                | E::Invalid(_)
                | E::AblationRange { .. }
                | E::LevelMismatch(..)
                | E::DimensionMismatch(..)
                | E::EmptyCorpus
                | E::LabelMismatch
                | E::Degenerate(_)
                | E::SubgraphSize(_)
                | E::Io(_)
                | E::Json(_) => 3,
                E::PartitionMismatch
                | E::NoAdmissibleMove
                | E::EditBudget { .. }
                | E::SubgraphOverflow(_) => 5,
            },
        }
    }
}

/// Tag core errors with the stage that raised them.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError>;
}

impl<T> StageExt<T> for stg_core::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Stage { stage, source })
    }
}
