//! Scores that intervene on the generative model: they sample batches
//! sharing one factor value and so are only available on the test side.

use ndarray::{Array2, Axis};
use rand::Rng;

use crate::data::GroundTruthModel;
use crate::error::{Error, Result};
use crate::ml::{accuracy, Logistic, LogisticConfig};
use crate::representation::{represent_chunked, Representation};
use crate::seed::{self, SeedMixer};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterventionConfig {
    pub n_train: usize,
    pub n_test: usize,
    /// Pairs per BetaVAE-score point, batch size per FactorVAE-score vote.
    pub group: usize,
    /// Samples used to estimate per-dim scales for the FactorVAE score.
    pub variance_samples: usize,
}

impl Default for InterventionConfig {
    fn default() -> Self {
        Self {
            n_train: 1000,
            n_test: 500,
            group: 64,
            variance_samples: 10_000,
        }
    }
}

const CHUNK: usize = 4096;

fn check_space(model: &GroundTruthModel) -> Result<()> {
    if model.num_factors() < 2 {
        return Err(Error::Metric("intervention scores need at least two factors".into()));
    }
    Ok(())
}

/// Features for `points` BetaVAE-score examples: the mean absolute code
/// difference over `group` pairs that agree on a uniformly chosen factor.
fn betavae_points<R: Rng + ?Sized>(
    model: &GroundTruthModel,
    repr: &dyn Representation,
    points: usize,
    group: usize,
    rng: &mut R,
) -> Result<(Array2<f64>, Vec<usize>)> {
    let d = model.num_factors();
    let mut labels = Vec::with_capacity(points);
    let mut first = model.sample_factors(points * group, rng)?;
    let mut second = model.sample_factors(points * group, rng)?;
    for p in 0..points {
        let k = rng.random_range(0..d);
        labels.push(k);
        for r in p * group..(p + 1) * group {
            second[[r, k]] = first[[r, k]];
        }
    }
    let a = represent_chunked(repr, &model.render(std::mem::take(&mut first))?, CHUNK)?;
    let b = represent_chunked(repr, &model.render(std::mem::take(&mut second))?, CHUNK)?;
    let diff = (a - b).mapv(f64::abs);
    let dims = diff.ncols();
    let features = diff
        .into_shape_with_order((points, group, dims))
        .expect("grouped rows")
        .mean_axis(Axis(1))
        .expect("nonempty group");
    Ok((features, labels))
}

/// Accuracy of a multinomial logistic classifier predicting which factor
/// was held fixed from averaged absolute code differences.
pub fn betavae_score(
    model: &GroundTruthModel,
    repr: &dyn Representation,
    config: InterventionConfig,
    seed: u64,
) -> Result<f64> {
    check_space(model)?;
    let mut rng = seed::rng(SeedMixer::new(seed).tag("betavae-score").finish());
    let (mut xtr, ytr) = betavae_points(model, repr, config.n_train, config.group, &mut rng)?;
    let (mut xte, yte) = betavae_points(model, repr, config.n_test, config.group, &mut rng)?;
    // per-dim scale of the training features, so code rescaling cancels
    for (j, sd) in xtr.std_axis(Axis(0), 0.0).into_iter().enumerate() {
        if sd > 0.0 {
            xtr.column_mut(j).mapv_inplace(|v| v / sd);
            xte.column_mut(j).mapv_inplace(|v| v / sd);
        }
    }
    if ytr.iter().all(|&y| y == ytr[0]) {
        return Ok(accuracy(&vec![ytr[0]; yte.len()], &yte));
    }
    let clf = Logistic::fit(xtr.view(), &ytr, LogisticConfig::default())?;
    Ok(accuracy(&clf.predict(xte.view()), &yte))
}

/// Votes `(argmin normalized-variance dim, fixed factor)`.
fn factorvae_votes<R: Rng + ?Sized>(
    model: &GroundTruthModel,
    repr: &dyn Representation,
    scale: &[f64],
    active: &[usize],
    votes: usize,
    group: usize,
    rng: &mut R,
) -> Result<Vec<(usize, usize)>> {
    let d = model.num_factors();
    let cards = model.space().cardinalities().to_vec();
    let mut factors = model.sample_factors(votes * group, rng)?;
    let mut fixed = Vec::with_capacity(votes);
    for v in 0..votes {
        let k = rng.random_range(0..d);
        let value = rng.random_range(0..cards[k]);
        fixed.push(k);
        for r in v * group..(v + 1) * group {
            factors[[r, k]] = value;
        }
    }
    let codes = represent_chunked(repr, &model.render(factors)?, CHUNK)?;
    let mut out = Vec::with_capacity(votes);
    for (v, &k) in fixed.iter().enumerate() {
        let block = codes.slice(ndarray::s![v * group..(v + 1) * group, ..]);
        let mut best = (active[0], f64::INFINITY);
        for &j in active {
            let col = block.column(j).mapv(|c| c / scale[j]);
            let var = col.var(0.0);
            if var < best.1 {
                best = (j, var);
            }
        }
        out.push((best.0, k));
    }
    Ok(out)
}

/// Majority-vote classifier from the least-varying normalized code dim to
/// the fixed factor, scored on fresh votes.
pub fn factorvae_score(
    model: &GroundTruthModel,
    repr: &dyn Representation,
    config: InterventionConfig,
    seed: u64,
) -> Result<f64> {
    check_space(model)?;
    let mut rng = seed::rng(SeedMixer::new(seed).tag("factorvae-score").finish());
    let global = represent_chunked(
        repr,
        &model.render(model.sample_factors(config.variance_samples, &mut rng)?)?,
        CHUNK,
    )?;
    let var = global.var_axis(Axis(0), 0.0);
    let mean_var = var.mean().unwrap_or(0.0);
    let active: Vec<usize> = (0..var.len()).filter(|&j| var[j] >= 0.05 * mean_var && var[j] > 0.0).collect();
    if active.is_empty() {
        log::warn!("factorvae score: every code dimension was pruned, reporting 0");
        return Ok(0.0);
    }
    let scale: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
    let train = factorvae_votes(model, repr, &scale, &active, config.n_train, config.group, &mut rng)?;
    let test = factorvae_votes(model, repr, &scale, &active, config.n_test, config.group, &mut rng)?;
    let d = model.num_factors();
    let mut counts = vec![vec![0usize; d]; var.len()];
    for &(j, k) in &train {
        counts[j][k] += 1;
    }
    let table: Vec<usize> = counts
        .iter()
        .map(|row| row.iter().enumerate().fold(0, |best, (k, &c)| if c > row[best] { k } else { best }))
        .collect();
    let hits = test.iter().filter(|&&(j, k)| counts[j].iter().any(|&c| c > 0) && table[j] == k).count();
    Ok(hits as f64 / test.len() as f64)
}
