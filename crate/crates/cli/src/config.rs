//! TOML run configuration. Every field has a default, so an empty file (or
//! none at all) is a complete configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stg_core::align::{Aligner, AnnealSchedule};
use stg_core::centroid::{CentroidConfig, NestedEndpoints};

use crate::args::Cli;
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: Option<usize>,
    pub solver: Option<PathBuf>,
    pub align: AlignSection,
    pub centroid: CentroidSection,
    pub repair: RepairSection,
    pub mantel: MantelSection,
    pub mine: MineSection,
    pub pipeline: PipelineSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignSection {
    pub steps: usize,
    pub t_max: f64,
    pub t_min: f64,
    /// Largest search space aligned exactly where exact alignment is used.
    pub exhaustive_limit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CentroidSection {
    pub steps: usize,
    pub t_max: f64,
    pub t_min: f64,
    pub nested: NestedEndpoints,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RepairSection {
    pub timeout_secs: u64,
    pub lns: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MantelSection {
    pub permutations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MineSection {
    pub size: usize,
    pub cap: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    /// Subcommand argument lists run in order by `stg run`. `$OUT` in an
    /// argument expands to the run's output directory.
    pub steps: Vec<Vec<String>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            workers: None,
            solver: None,
            align: AlignSection::default(),
            centroid: CentroidSection::default(),
            repair: RepairSection::default(),
            mantel: MantelSection::default(),
            mine: MineSection::default(),
            pipeline: PipelineSection::default(),
        }
    }
}

impl Default for AlignSection {
    fn default() -> Self {
        let s = AnnealSchedule::default();
        AlignSection {
            steps: s.steps,
            t_max: s.t_max,
            t_min: s.t_min,
            exhaustive_limit: 1e7,
        }
    }
}

impl Default for CentroidSection {
    fn default() -> Self {
        let c = CentroidConfig::default();
        CentroidSection {
            steps: c.outer.steps,
            t_max: c.outer.t_max,
            t_min: c.outer.t_min,
            nested: c.nested,
        }
    }
}

impl Default for RepairSection {
    fn default() -> Self {
        RepairSection {
            timeout_secs: stg_core::repair::DEFAULT_TIMEOUT.as_secs(),
            lns: true,
        }
    }
}

impl Default for MantelSection {
    fn default() -> Self {
        MantelSection {
            permutations: stg_core::stats::DEFAULT_PERMUTATIONS,
        }
    }
}

impl Default for MineSection {
    fn default() -> Self {
        MineSection {
            size: 5,
            cap: stg_core::mine::DEFAULT_CAP,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// File settings (if any) with command-line flags on top.
    pub fn resolve(cli: &Cli) -> Result<Self, CliError> {
        let mut cfg = match &cli.config {
            Some(p) => Self::load(p)?,
            None => RunConfig::default(),
        };
        cfg.apply_flags(cli);
        Ok(cfg)
    }

    pub fn apply_flags(&mut self, cli: &Cli) {
        if let Some(s) = cli.seed {
            self.seed = s;
        }
        if let Some(w) = cli.workers {
            self.workers = Some(w);
        }
        if let Some(p) = &cli.solver {
            self.solver = Some(p.clone());
        }
    }

    pub fn schedule(&self, seed: u64) -> AnnealSchedule {
        AnnealSchedule {
            steps: self.align.steps,
            t_max: self.align.t_max,
            t_min: self.align.t_min,
            seed,
        }
    }

    pub fn annealer(&self) -> Aligner {
        Aligner::Anneal(self.schedule(self.seed))
    }

    pub fn auto_aligner(&self) -> Aligner {
        Aligner::Auto {
            limit: self.align.exhaustive_limit,
            schedule: self.schedule(self.seed),
        }
    }

    pub fn centroid_config(&self, seed: u64) -> CentroidConfig {
        CentroidConfig {
            outer: AnnealSchedule {
                steps: self.centroid.steps,
                t_max: self.centroid.t_max,
                t_min: self.centroid.t_min,
                seed,
            },
            nested: self.centroid.nested,
            naive: self.annealer(),
        }
    }
}
