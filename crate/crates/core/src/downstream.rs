//! Downstream factor prediction from representation features with a
//! cross-validated logistic regression and boosted trees.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::GroundTruthModel;
use crate::error::{Error, Result};
use crate::ml::{accuracy, Gbt, GbtConfig, Logistic, LogisticConfig};
use crate::representation::{represent_chunked, Representation};
use crate::seed::SeedMixer;

pub const STRENGTHS: [f64; 5] = [1e-3, 1e-2, 1e-1, 1.0, 10.0];
pub const SIZES: [usize; 4] = [10, 100, 1000, 10_000];
pub const FOLDS: usize = 5;

/// Either a fitted model or, for a fold whose training labels hold a single
/// class, that class.
enum Fitted {
    Model(Logistic),
    Constant(usize),
}

impl Fitted {
    fn fit(x: ArrayView2<'_, f64>, y: &[usize], strength: f64) -> Result<Self> {
        if y.iter().all(|&v| v == y[0]) {
            return Ok(Fitted::Constant(y[0]));
        }
        let config = LogisticConfig {
            strength,
            ..LogisticConfig::default()
        };
        Ok(Fitted::Model(Logistic::fit(x, y, config)?))
    }

    fn predict(&self, x: ArrayView2<'_, f64>) -> Vec<usize> {
        match self {
            Fitted::Model(m) => m.predict(x),
            Fitted::Constant(c) => vec![*c; x.nrows()],
        }
    }
}

/// Logistic regression whose L2 strength is chosen from `strengths` by
/// k-fold accuracy (row `i` in fold `i % k`), refitted on all rows. Ties go
/// to the earlier strength.
pub fn logistic_cv(x: ArrayView2<'_, f64>, y: &[usize], folds: usize, strengths: &[f64]) -> Result<(Logistic, f64)> {
    let n = x.nrows();
    if y.iter().all(|&v| v == y[0]) {
        return Err(Error::Classifier("single-class labels".into()));
    }
    if n < folds || folds < 2 {
        return Err(Error::Classifier(format!("{n} samples cannot form {folds} folds")));
    }
    if strengths.is_empty() {
        return Err(Error::Classifier("empty strength grid".into()));
    }
    let folds = folds.min(n);
    let mut best = (strengths[0], f64::NEG_INFINITY);
    for &s in strengths {
        let mut acc = 0.0;
        for f in 0..folds {
            let train: Vec<usize> = (0..n).filter(|i| i % folds != f).collect();
            let test: Vec<usize> = (0..n).filter(|i| i % folds == f).collect();
            let ytr: Vec<usize> = train.iter().map(|&i| y[i]).collect();
            let yte: Vec<usize> = test.iter().map(|&i| y[i]).collect();
            let model = Fitted::fit(x.select(Axis(0), &train).view(), &ytr, s)?;
            acc += accuracy(&model.predict(x.select(Axis(0), &test).view()), &yte);
        }
        acc /= folds as f64;
        if acc > best.1 {
            best = (s, acc);
        }
    }
    let config = LogisticConfig {
        strength: best.0,
        ..LogisticConfig::default()
    };
    Ok((Logistic::fit(x, y, config)?, best.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classifier {
    #[serde(rename = "LR")]
    Logistic,
    #[serde(rename = "GBT")]
    Gbt,
}

impl Classifier {
    pub fn name(self) -> &'static str {
        match self {
            Classifier::Logistic => "LR",
            Classifier::Gbt => "GBT",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DownstreamCell {
    pub classifier: Classifier,
    pub train_size: usize,
    pub factor: usize,
    /// `None` when the training labels held a single class.
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DownstreamReport {
    pub cells: Vec<DownstreamCell>,
}

impl DownstreamReport {
    /// Mean accuracy over the factors that were not skipped.
    pub fn mean_accuracy(&self, classifier: Classifier, train_size: usize) -> Option<f64> {
        let acc: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| c.classifier == classifier && c.train_size == train_size)
            .filter_map(|c| c.accuracy)
            .collect();
        (!acc.is_empty()).then(|| acc.iter().sum::<f64>() / acc.len() as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DownstreamConfig {
    pub sizes: Vec<usize>,
    pub test_samples: usize,
    pub folds: usize,
    pub strengths: Vec<f64>,
    pub gbt: GbtConfig,
}

impl Default for DownstreamConfig {
    fn default() -> Self {
        Self {
            sizes: SIZES.to_vec(),
            test_samples: 1000,
            folds: FOLDS,
            strengths: STRENGTHS.to_vec(),
            gbt: GbtConfig::DOWNSTREAM,
        }
    }
}

fn sample_codes(
    model: &GroundTruthModel,
    repr: &dyn Representation,
    n: usize,
    seed: u64,
) -> Result<(Array2<f64>, Array2<usize>)> {
    let batch = model.render(model.sample_factors_seeded(n, seed)?)?;
    let codes = represent_chunked(repr, &batch, 4096)?;
    Ok((codes, batch.factors))
}

/// Test accuracy of both classifiers for every (train size, factor), each
/// size with its own fresh train and test samples.
pub fn downstream_report(
    model: &GroundTruthModel,
    repr: &dyn Representation,
    config: &DownstreamConfig,
    seed: u64,
) -> Result<DownstreamReport> {
    if let Some(&s) = config.sizes.iter().find(|&&s| s < 10) {
        return Err(Error::Config(format!("downstream train sizes must be at least 10, got {s}")));
    }
    let mix = SeedMixer::new(seed).tag("downstream");
    let mut cells = Vec::new();
    for &size in &config.sizes {
        let (xtr, ftr) = sample_codes(model, repr, size, mix.tag("train").int(size as u64).finish())?;
        let (xte, fte) = sample_codes(model, repr, config.test_samples, mix.tag("test").int(size as u64).finish())?;
        for k in 0..model.num_factors() {
            let ytr = ftr.column(k).to_vec();
            let yte = fte.column(k).to_vec();
            let degenerate = ytr.iter().all(|&v| v == ytr[0]);
            let lr = if degenerate {
                log::info!("downstream: factor {k} has one class at train size {size}, skipped");
                None
            } else {
                let (clf, _) = logistic_cv(xtr.view(), &ytr, config.folds.min(size), &config.strengths)?;
                Some(accuracy(&clf.predict(xte.view()), &yte))
            };
            let gbt = if degenerate {
                None
            } else {
                let clf = Gbt::fit(xtr.view(), &ytr, config.gbt)?;
                Some(accuracy(&clf.predict(xte.view()), &yte))
            };
            for (classifier, accuracy) in [(Classifier::Logistic, lr), (Classifier::Gbt, gbt)] {
                cells.push(DownstreamCell {
                    classifier,
                    train_size: size,
                    factor: k,
                    accuracy,
                });
            }
        }
    }
    Ok(DownstreamReport { cells })
}
