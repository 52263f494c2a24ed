use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::GroundTruthModel;
use crate::error::{Error, Result};
use crate::labeling::LabeledSet;
use crate::metrics::info::DEFAULT_BINS;
use crate::metrics::intervention::{betavae_score, factorvae_score, InterventionConfig};
use crate::metrics::scores;
use crate::representation::{represent_chunked, Representation};
use crate::seed::SeedMixer;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "BetaVAE")]
    BetaVae,
    #[serde(rename = "FactorVAE")]
    FactorVae,
    #[serde(rename = "MIG")]
    Mig,
    Modularity,
    #[serde(rename = "DCI")]
    Dci,
    #[serde(rename = "SAP")]
    Sap,
    #[serde(rename = "avgMI")]
    AvgMi,
}

impl Metric {
    pub const TEST: [Metric; 7] = [
        Metric::BetaVae,
        Metric::FactorVae,
        Metric::Mig,
        Metric::Modularity,
        Metric::Dci,
        Metric::Sap,
        Metric::AvgMi,
    ];
    /// Metrics computable from a labeled set without access to the
    /// generative model.
    pub const VALIDATION: [Metric; 4] = [Metric::Mig, Metric::Dci, Metric::Sap, Metric::AvgMi];
    pub const SELECTION: [Metric; 3] = [Metric::Mig, Metric::Dci, Metric::Sap];
    pub const BOUNDED: [Metric; 6] = [
        Metric::BetaVae,
        Metric::FactorVae,
        Metric::Mig,
        Metric::Modularity,
        Metric::Dci,
        Metric::Sap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::BetaVae => "BetaVAE",
            Metric::FactorVae => "FactorVAE",
            Metric::Mig => "MIG",
            Metric::Modularity => "Modularity",
            Metric::Dci => "DCI",
            Metric::Sap => "SAP",
            Metric::AvgMi => "avgMI",
        }
    }

    pub fn needs_generative_model(self) -> bool {
        matches!(self, Metric::BetaVae | Metric::FactorVae)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::TEST
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Metric(format!("unknown metric '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Validation,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub split: Split,
    pub samples: usize,
    pub seed: u64,
    /// Scores in [`Metric`] order; absent metrics were not requested or are
    /// undefined on these samples.
    pub scores: Vec<(Metric, f64)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl MetricReport {
    pub fn get(&self, metric: Metric) -> Option<f64> {
        self.scores.iter().find(|(m, _)| *m == metric).map(|(_, v)| *v)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalConfig {
    pub bins: usize,
    pub test_samples: usize,
    pub intervention: InterventionConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            bins: DEFAULT_BINS,
            test_samples: 10_000,
            intervention: InterventionConfig::default(),
        }
    }
}

fn push(report: &mut MetricReport, metric: Metric, value: Result<f64>) {
    match value {
        Ok(v) => report.scores.push((metric, v)),
        Err(e) => report.notes.push(format!("{metric}: {e}")),
    }
}

/// Scores computed from codes and labels alone. `factor_dims[k]` is the code
/// dim aligned with label column `k` for avgMI.
pub fn score_codes(
    codes: &Array2<f64>,
    labels: &Array2<usize>,
    factor_dims: &[usize],
    metrics: &[Metric],
    bins: usize,
    report: &mut MetricReport,
) {
    for &m in metrics {
        let value = match m {
            Metric::Mig => scores::mig(codes.view(), labels.view(), bins),
            Metric::Modularity => scores::modularity(codes.view(), labels.view(), bins),
            Metric::Dci => scores::dci_disentanglement(codes.view(), labels.view()).map(|r| r.0),
            Metric::Sap => scores::sap(codes.view(), labels.view()).map(|r| r.0),
            Metric::AvgMi => scores::avg_mi_aligned(codes.view(), labels.view(), factor_dims, bins),
            Metric::BetaVae | Metric::FactorVae => continue,
        };
        push(report, m, value);
    }
}

/// Validation metrics on a labeled set, using its (possibly corrupted)
/// labels restricted to the observed factors.
pub fn evaluate_validation(
    model: &GroundTruthModel,
    repr: &dyn Representation,
    labeled: &LabeledSet,
    metrics: &[Metric],
    bins: usize,
) -> Result<MetricReport> {
    if let Some(m) = metrics.iter().find(|m| m.needs_generative_model()) {
        return Err(Error::Metric(format!(
            "{m} needs interventions on the generative model and is test-only"
        )));
    }
    let mut factors = Array2::zeros((labeled.len(), labeled.num_factors()));
    for (i, e) in labeled.entries.iter().enumerate() {
        for (k, v) in model.space().config_of(e.image_ref).into_iter().enumerate() {
            factors[[i, k]] = v;
        }
    }
    let batch = model.render(factors)?;
    let codes = represent_chunked(repr, &batch, 4096)?;
    let observed: Vec<usize> = (0..labeled.num_factors()).filter(|&k| labeled.observed[k]).collect();
    let labels = labeled.labels().select(Axis(1), &observed);
    let mut report = MetricReport {
        split: Split::Validation,
        samples: labeled.len(),
        seed: labeled.seed,
        scores: Vec::new(),
        notes: Vec::new(),
    };
    if codes.ncols() < labeled.num_factors() {
        return Err(Error::Metric(format!(
            "{} code dims cannot align with {} factors",
            codes.ncols(),
            labeled.num_factors()
        )));
    }
    score_codes(&codes, &labels, &observed, metrics, bins, &mut report);
    Ok(report)
}

/// All metrics on fresh exact-label samples and interventions.
pub fn evaluate_test(
    model: &GroundTruthModel,
    repr: &dyn Representation,
    config: &EvalConfig,
    seed: u64,
) -> Result<MetricReport> {
    let mix = SeedMixer::new(seed);
    let factors = model.sample_factors_seeded(config.test_samples, mix.tag("test-samples").finish())?;
    let batch = model.render(factors)?;
    let codes = represent_chunked(repr, &batch, 4096)?;
    let mut report = MetricReport {
        split: Split::Test,
        samples: config.test_samples,
        seed,
        scores: Vec::new(),
        notes: Vec::new(),
    };
    push(
        &mut report,
        Metric::BetaVae,
        betavae_score(model, repr, config.intervention, mix.tag("betavae").finish()),
    );
    push(
        &mut report,
        Metric::FactorVae,
        factorvae_score(model, repr, config.intervention, mix.tag("factorvae").finish()),
    );
    let dims: Vec<usize> = (0..model.num_factors()).collect();
    if codes.ncols() < dims.len() {
        report.notes.push("avgMI: fewer code dims than factors".into());
        let m = [Metric::Mig, Metric::Modularity, Metric::Dci, Metric::Sap];
        score_codes(&codes, &batch.factors, &dims, &m, config.bins, &mut report);
    } else {
        let m = [Metric::Mig, Metric::Modularity, Metric::Dci, Metric::Sap, Metric::AvgMi];
        score_codes(&codes, &batch.factors, &dims, &m, config.bins, &mut report);
    }
    Ok(report)
}
