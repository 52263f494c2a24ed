//! Small labeled subsets and the label-corruption regimes.
//!
//! Every corruption is a pure function of the set, its parameters and a
//! seed. Images are never copied: an entry keeps the flat configuration
//! index of its true factors and the (possibly corrupted) labels.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::GroundTruthModel;
use crate::error::{Error, Result};
use crate::seed::{self, SeedMixer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledEntry {
    /// Stable identity assigned at draw time; keys the per-entry noise streams.
    pub id: u64,
    pub config: Vec<usize>,
    pub image_ref: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Corruption {
    Perfect,
    Binned { bins: usize },
    Noisy { p: f64, seed: u64 },
    Partial { observed: Vec<usize>, seed: u64 },
    Permuted { permutations: Vec<Vec<usize>>, seed: u64 },
}

impl Corruption {
    pub fn name(&self) -> &'static str {
        match self {
            Corruption::Perfect => "perfect",
            Corruption::Binned { .. } => "binned",
            Corruption::Noisy { .. } => "noisy",
            Corruption::Partial { .. } => "partial",
            Corruption::Permuted { .. } => "permuted",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSet {
    pub seed: u64,
    pub corruption: Corruption,
    pub factor_cardinalities: Vec<usize>,
    /// Number of distinct values each label column can take after corruption.
    pub effective_cardinalities: Vec<usize>,
    pub observed: Vec<bool>,
    pub entries: Vec<LabeledEntry>,
}

/// Targets in `[0, 1]` with an observation mask; masked cells hold 0.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedTargets {
    pub values: Array2<f32>,
    pub mask: Array2<bool>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_factors(&self) -> usize {
        self.factor_cardinalities.len()
    }

    pub fn image_refs(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.image_ref).collect()
    }

    pub fn labels(&self) -> Array2<usize> {
        let d = self.num_factors();
        Array2::from_shape_fn((self.len(), d), |(i, k)| self.entries[i].config[k])
    }

    fn require_perfect(&self, op: &str) -> Result<()> {
        if self.corruption != Corruption::Perfect {
            return Err(Error::Labels(format!(
                "{op} expects a perfect set, got a {} one",
                self.corruption.name()
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// `n` i.i.d. configurations with exact labels.
pub fn draw_labeled_subset(model: &GroundTruthModel, n: usize, seed: u64) -> Result<LabeledSet> {
    if n < 2 {
        return Err(Error::Labels(format!("labeled subsets need at least 2 entries, got {n}")));
    }
    let factors = model.sample_factors_seeded(n, SeedMixer::new(seed).tag("labels").finish())?;
    let entries = factors
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let config = row.to_vec();
            let image_ref = model.space().index_of(&config)?;
            Ok(LabeledEntry {
                id: i as u64,
                config,
                image_ref,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let cards = model.space().cardinalities().to_vec();
    Ok(LabeledSet {
        seed,
        corruption: Corruption::Perfect,
        effective_cardinalities: cards.clone(),
        observed: vec![true; cards.len()],
        factor_cardinalities: cards,
        entries,
    })
}

pub fn bin_value(v: usize, cardinality: usize, bins: usize) -> usize {
    if cardinality <= bins {
        v
    } else {
        v * bins / cardinality
    }
}

/// Equal-width index binning to at most `bins` values per factor.
pub fn corrupt_bin(set: &LabeledSet, bins: usize) -> Result<LabeledSet> {
    set.require_perfect("binning")?;
    if bins < 2 {
        return Err(Error::Labels(format!("bin count must be at least 2, got {bins}")));
    }
    let cards = &set.factor_cardinalities;
    let mut out = set.clone();
    for e in &mut out.entries {
        for (v, &c) in e.config.iter_mut().zip(cards) {
            *v = bin_value(*v, c, bins);
        }
    }
    out.effective_cardinalities = cards.iter().map(|&c| c.min(bins)).collect();
    out.corruption = Corruption::Binned { bins };
    Ok(out)
}

/// With probability `p` per (entry, factor) the label is redrawn uniformly
/// over all values, so it may coincide with the original.
pub fn corrupt_noise(set: &LabeledSet, p: f64, seed: u64) -> Result<LabeledSet> {
    set.require_perfect("noise")?;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Labels(format!("noise probability {p} outside [0, 1]")));
    }
    let cards = set.factor_cardinalities.clone();
    let mut out = set.clone();
    for e in &mut out.entries {
        let mut rng = seed::rng(SeedMixer::new(seed).tag("noise").int(e.id).finish());
        for (v, &c) in e.config.iter_mut().zip(&cards) {
            if rng.random_bool(p) {
                *v = rng.random_range(0..c);
            }
        }
    }
    out.corruption = Corruption::Noisy { p, seed };
    Ok(out)
}

/// One uniformly random `k`-subset of factors stays observed for the whole set.
pub fn corrupt_partial(set: &LabeledSet, k: usize, seed: u64) -> Result<LabeledSet> {
    set.require_perfect("partial labeling")?;
    let d = set.num_factors();
    if k == 0 || k > d {
        return Err(Error::Labels(format!("cannot observe {k} of {d} factors")));
    }
    let mut rng = seed::rng(SeedMixer::new(seed).tag("partial").finish());
    let mut observed = index::sample(&mut rng, d, k).into_vec();
    observed.sort_unstable();
    let mut out = set.clone();
    out.observed = (0..d).map(|j| observed.contains(&j)).collect();
    out.corruption = Corruption::Partial { observed, seed };
    Ok(out)
}

/// A fixed random permutation of each factor's values, applied to every entry.
pub fn corrupt_permute(set: &LabeledSet, seed: u64) -> Result<LabeledSet> {
    set.require_perfect("permutation")?;
    let mut rng = seed::rng(SeedMixer::new(seed).tag("permute").finish());
    let permutations: Vec<Vec<usize>> = set
        .factor_cardinalities
        .iter()
        .map(|&c| {
            let mut p: Vec<usize> = (0..c).collect();
            p.shuffle(&mut rng);
            p
        })
        .collect();
    let mut out = set.clone();
    for e in &mut out.entries {
        for (v, perm) in e.config.iter_mut().zip(&permutations) {
            *v = perm[*v];
        }
    }
    out.corruption = Corruption::Permuted { permutations, seed };
    Ok(out)
}

pub fn normalize_value(v: usize, effective_cardinality: usize) -> f32 {
    if effective_cardinality <= 1 {
        0.5
    } else {
        v as f32 / (effective_cardinality - 1) as f32
    }
}

pub fn normalize_targets(set: &LabeledSet) -> NormalizedTargets {
    let (n, d) = (set.len(), set.num_factors());
    let mask = Array2::from_shape_fn((n, d), |(_, k)| set.observed[k]);
    let values = Array2::from_shape_fn((n, d), |(i, k)| {
        if set.observed[k] {
            normalize_value(set.entries[i].config[k], set.effective_cardinalities[k])
        } else {
            0.0
        }
    });
    NormalizedTargets { values, mask }
}

/// Seeded shuffle, then the first `round(ratio * n)` entries train.
pub fn split_train_val(set: &LabeledSet, ratio: f64, seed: u64) -> Result<(LabeledSet, LabeledSet)> {
    let n = set.len();
    if n < 10 {
        return Err(Error::Labels(format!("need at least 10 entries to split, got {n}")));
    }
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Labels(format!("split ratio {ratio} outside [0, 1]")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(SeedMixer::new(seed).tag("split").finish()));
    let n_train = (ratio * n as f64).round() as usize;
    let pick = |idx: &[usize]| {
        let mut part = set.clone();
        part.entries = idx.iter().map(|&i| set.entries[i].clone()).collect();
        part
    };
    Ok((pick(&order[..n_train]), pick(&order[n_train..])))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bin_examples() {
        assert_eq!(bin_value(39, 40, 5), 4);
        assert_eq!(bin_value(2, 3, 5), 2);
    }

    #[test]
    fn normalization_endpoints() {
        assert_eq!(normalize_value(0, 8), 0.0);
        assert_eq!(normalize_value(7, 8), 1.0);
        assert_eq!(normalize_value(2, 5), 0.5);
        assert_eq!(normalize_value(0, 1), 0.5);
    }
}
