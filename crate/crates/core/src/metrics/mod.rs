//! Disentanglement scores and the shared information estimators.

pub mod info;
pub mod intervention;
mod report;
pub mod scores;

pub use info::{discrete_mi, discretize, entropy, MiMatrix, DEFAULT_BINS};
pub use intervention::{betavae_score, factorvae_score, InterventionConfig};
pub use report::{evaluate_test, evaluate_validation, score_codes, EvalConfig, Metric, MetricReport, Split};
pub use scores::{
    avg_mi, avg_mi_aligned, dci_disentanglement, dci_from_importance, importance_matrix, mig, mig_from_matrix,
    modularity, modularity_from_matrix, off_diagonal_energy, sap, sap_from_matrix,
};
