//! Experiment protocol: cohorts, model selection, statistics, reports and
//! latent traversals.

pub mod experiment;
pub mod ids;
pub mod reports;
pub mod select;
pub mod spec;
pub mod stats;
pub mod traversal;

pub use experiment::{run_experiment, ExperimentSummary};
pub use ids::{LabelKey, ModelId};
pub use select::{select, SelectionOutcome, Strategy};
pub use spec::{CorruptionKind, ExperimentSpec};
