//! Small deterministic classifiers shared by the metrics and the downstream
//! evaluation.

mod gbt;
mod logistic;

pub use gbt::{Gbt, GbtConfig, RegressionTree};
pub use logistic::{Logistic, LogisticConfig};

use crate::error::{Error, Result};

/// Distinct labels in ascending order; errors with fewer than two.
pub(crate) fn classes_of(labels: &[usize]) -> Result<Vec<usize>> {
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::Classifier(format!(
            "need at least two classes, got {}",
            classes.len()
        )));
    }
    Ok(classes)
}

pub fn accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    predicted.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}

/// Mean per-class recall over the classes present in `truth`.
pub fn balanced_accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    let mut classes = truth.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.is_empty() {
        return 0.0;
    }
    let recall: f64 = classes
        .iter()
        .map(|&c| {
            let (hit, total) = predicted
                .iter()
                .zip(truth)
                .filter(|(_, &t)| t == c)
                .fold((0usize, 0usize), |(h, n), (&p, _)| (h + (p == c) as usize, n + 1));
            hit as f64 / total as f64
        })
        .sum();
    recall / classes.len() as f64
}
