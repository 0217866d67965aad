//! Structural temporal graphs (STGs) for hierarchical sequence structure.
//!
//! The crate covers the whole pipeline: ingesting per-level analyses into
//! compressed STGs ([`record`], [`model`]), validating them ([`validate`]),
//! augmenting them with prototype nodes and chains ([`augment`]), measuring
//! structural distance by annealed matrix alignment ([`matrix`], [`align`]),
//! deriving corpus centroids ([`centroid`]) and repairing them with an
//! external SMT optimizer ([`repair`]), plus the synthetic and statistical
//! evaluation harness ([`synth`], [`study`], [`stats`], [`mine`]).
//!
//! Data-parallel loops run on rayon when the `parallel` feature is enabled
//! (the default) and sequentially otherwise.

pub mod align;
pub mod augment;
pub mod centroid;
pub mod error;
pub mod fixtures;
pub mod io;
pub mod matrix;
pub mod mine;
pub mod model;
pub mod par;
pub mod record;
pub mod repair;
pub mod seed;
pub mod stats;
pub mod study;
pub mod synth;
pub mod validate;

pub use augment::{augment, compress, AugmentedGraph, PrototypeNode};
pub use error::{Error, Result};
pub use model::{levels_ablate, FeatureSet, LevelKind, StructuralTemporalGraph};
pub use record::{ingest, ingest_all, AnalysisRecordFile};
pub use validate::{validate_augmented, validate_stg, Rule, ValidationReport};
