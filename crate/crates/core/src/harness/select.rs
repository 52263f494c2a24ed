use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Metric;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    /// Unsupervised training, selection by a validation metric (maximized).
    Unsupervised(Metric),
    /// Semi-supervised training, selection by validation `R_s` (minimized).
    SemiSupervised,
    /// Supervised-only baseline, selection by validation `R_s`.
    Baseline,
}

impl Strategy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "S2/S:Rs" | "s2s" => Ok(Strategy::SemiSupervised),
            "baseline:Rs" | "baseline" => Ok(Strategy::Baseline),
            _ => {
                let metric = s
                    .strip_prefix("U/S:")
                    .ok_or_else(|| Error::Selection(format!("unknown strategy '{s}'")))?;
                Strategy::unsupervised(metric.parse()?)
            }
        }
    }

    /// Rejects metrics that are not computable on a labeled validation set.
    pub fn unsupervised(metric: Metric) -> Result<Self> {
        if !Metric::SELECTION.contains(&metric) {
            return Err(Error::Selection(format!(
                "{metric} cannot select models: it needs the generative model or is a diagnostic"
            )));
        }
        Ok(Strategy::Unsupervised(metric))
    }

    pub fn minimizes(self) -> bool {
        !matches!(self, Strategy::Unsupervised(_))
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Unsupervised(m) => write!(f, "U/S:{m}"),
            Strategy::SemiSupervised => f.write_str("S2/S:Rs"),
            Strategy::Baseline => f.write_str("baseline:Rs"),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::parse(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub strategy: String,
    pub index: usize,
    pub model_id: String,
    pub score: f64,
    /// Other member indices that tied with the selected score.
    pub tied_with: Vec<usize>,
}

/// Picks the best member by validation score (argmax, or argmin for the
/// `R_s` strategies). `None` entries are failed members and are skipped.
/// Ties go to the lowest index and are reported.
pub fn select(ids: &[String], scores: &[Option<f64>], strategy: Strategy) -> Result<SelectionOutcome> {
    if ids.len() != scores.len() {
        return Err(Error::Selection(format!("{} ids for {} scores", ids.len(), scores.len())));
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        let Some(s) = *s else { continue };
        let better = match best {
            None => true,
            Some((_, b)) => {
                if strategy.minimizes() {
                    s < b
                } else {
                    s > b
                }
            }
        };
        if better {
            best = Some((i, s));
        }
    }
    let (index, score) = best.ok_or_else(|| Error::Selection("cohort has no scored members".into()))?;
    let tied_with = (index + 1..scores.len()).filter(|&i| scores[i] == Some(score)).collect::<Vec<_>>();
    if !tied_with.is_empty() {
        log::info!("{strategy}: tie at {score} between {index} and {tied_with:?}, lowest index kept");
    }
    Ok(SelectionOutcome {
        strategy: strategy.to_string(),
        index,
        model_id: ids[index].clone(),
        score,
        tied_with,
    })
}
