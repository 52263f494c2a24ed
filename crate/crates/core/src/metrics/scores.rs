//! Scores computed from codes and factor labels of the same samples.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::metrics::info::{factor_entropies, MiMatrix};
use crate::ml::{balanced_accuracy, Gbt, GbtConfig, Logistic, LogisticConfig};

fn check_rows(codes: ArrayView2<'_, f64>, factors: ArrayView2<'_, usize>, min: usize) -> Result<()> {
    if codes.nrows() != factors.nrows() {
        return Err(Error::Metric(format!(
            "{} code rows for {} factor rows",
            codes.nrows(),
            factors.nrows()
        )));
    }
    if codes.nrows() < min {
        return Err(Error::Metric(format!("need at least {min} samples, got {}", codes.nrows())));
    }
    Ok(())
}

/// Mean over factors with positive entropy of the gap between the two
/// largest MI entries of the factor's column, divided by its entropy.
pub fn mig_from_matrix(mi: &MiMatrix, entropies: &[f64]) -> Result<f64> {
    let mut gaps = Vec::new();
    for (k, &h) in entropies.iter().enumerate() {
        if h <= 0.0 {
            continue;
        }
        let mut col: Vec<f64> = mi.values.column(k).to_vec();
        col.sort_by(|a, b| b.total_cmp(a));
        let second = col.get(1).copied().unwrap_or(0.0);
        gaps.push((col[0] - second) / h);
    }
    if gaps.is_empty() {
        return Err(Error::Metric("MIG undefined: every factor has zero entropy".into()));
    }
    Ok(gaps.iter().sum::<f64>() / gaps.len() as f64)
}

pub fn mig(codes: ArrayView2<'_, f64>, factors: ArrayView2<'_, usize>, bins: usize) -> Result<f64> {
    check_rows(codes, factors, 2)?;
    let mi = MiMatrix::estimate(codes, factors, bins);
    mig_from_matrix(&mi, &factor_entropies(factors))
}

/// Per code dim: `1 - sum_{k != k*} m_ik^2 / (theta_i^2 (K - 1))`, with dims
/// carrying no information scoring 0; averaged over dims.
pub fn modularity_from_matrix(mi: &Array2<f64>) -> f64 {
    let k = mi.ncols();
    if mi.nrows() == 0 {
        return 0.0;
    }
    let per_dim: f64 = mi
        .rows()
        .into_iter()
        .map(|row| {
            let (best, theta) = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc });
            if theta <= 0.0 || k < 2 {
                return 0.0;
            }
            let off: f64 = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != best)
                .map(|(_, v)| v * v)
                .sum();
            1.0 - off / (theta * theta * (k - 1) as f64)
        })
        .sum();
    per_dim / mi.nrows() as f64
}

pub fn modularity(codes: ArrayView2<'_, f64>, factors: ArrayView2<'_, usize>, bins: usize) -> Result<f64> {
    check_rows(codes, factors, 2)?;
    Ok(modularity_from_matrix(&MiMatrix::estimate(codes, factors, bins).values))
}

/// Importance-weighted mean over code dims of one minus the base-K entropy
/// of the dim's normalized importance profile.
pub fn dci_from_importance(r: &Array2<f64>) -> f64 {
    let k = r.ncols();
    let total = r.sum();
    if total <= 0.0 || k < 2 {
        return 0.0;
    }
    r.rows()
        .into_iter()
        .map(|row| {
            let s = row.sum();
            if s <= 0.0 {
                return 0.0;
            }
            let h: f64 = row
                .iter()
                .filter(|&&v| v > 0.0)
                .map(|&v| {
                    let p = v / s;
                    -p * p.ln()
                })
                .sum::<f64>()
                / (k as f64).ln();
            (s / total) * (1.0 - h)
        })
        .sum()
}

/// Column-normalized split-gain importances of one boosted classifier per
/// factor; factors with a single class get a zero column.
pub fn importance_matrix(codes: ArrayView2<'_, f64>, factors: ArrayView2<'_, usize>) -> Result<Array2<f64>> {
    let mut r = Array2::zeros((codes.ncols(), factors.ncols()));
    for k in 0..factors.ncols() {
        let labels = factors.column(k).to_vec();
        if labels.iter().all(|&v| v == labels[0]) {
            continue;
        }
        let gbt = Gbt::fit(codes, &labels, GbtConfig::DCI)?;
        let total: f64 = gbt.importances().iter().sum();
        if total > 0.0 {
            for (i, &g) in gbt.importances().iter().enumerate() {
                r[[i, k]] = g / total;
            }
        }
    }
    Ok(r)
}

pub fn dci_disentanglement(codes: ArrayView2<'_, f64>, factors: ArrayView2<'_, usize>) -> Result<(f64, Array2<f64>)> {
    check_rows(codes, factors, 20)?;
    let r = importance_matrix(codes, factors)?;
    Ok((dci_from_importance(&r), r))
}

pub const SAP_TRAIN_FRACTION: f64 = 0.7;
const SAP_CLASSIFIER: LogisticConfig = LogisticConfig {
    strength: 1e-2,
    max_iter: 5000,
    tolerance: 1e-5,
};

/// Mean over factors of the gap between the two best single-dim scores.
pub fn sap_from_matrix(s: &Array2<f64>, eligible: &[bool]) -> Result<f64> {
    let mut gaps = Vec::new();
    for (k, _) in eligible.iter().enumerate().filter(|(_, &e)| e) {
        let mut col: Vec<f64> = s.column(k).to_vec();
        col.sort_by(|a, b| b.total_cmp(a));
        gaps.push(col[0] - col.get(1).copied().unwrap_or(0.0));
    }
    if gaps.is_empty() {
        return Err(Error::Metric("SAP undefined: no factor has two classes in both splits".into()));
    }
    Ok(gaps.iter().sum::<f64>() / gaps.len() as f64)
}

/// Balanced test accuracy of a one-feature multinomial logistic classifier
/// for every (code dim, factor), trained on the first 70% of the samples.
pub fn sap(codes: ArrayView2<'_, f64>, factors: ArrayView2<'_, usize>) -> Result<(f64, Array2<f64>)> {
    check_rows(codes, factors, 20)?;
    let n = codes.nrows();
    let n_train = (SAP_TRAIN_FRACTION * n as f64).round() as usize;
    let mut s = Array2::zeros((codes.ncols(), factors.ncols()));
    let mut eligible = vec![false; factors.ncols()];
    let distinct = |v: &[usize]| v.iter().any(|&x| x != v[0]);
    for k in 0..factors.ncols() {
        let labels = factors.column(k).to_vec();
        let (train_y, test_y) = labels.split_at(n_train);
        if !distinct(train_y) || !distinct(test_y) {
            continue;
        }
        eligible[k] = true;
        for i in 0..codes.ncols() {
            let col = codes.column(i).insert_axis(Axis(1));
            let (train_x, test_x) = col.view().split_at(Axis(0), n_train);
            let clf = Logistic::fit(train_x, train_y, SAP_CLASSIFIER)?;
            s[[i, k]] = balanced_accuracy(&clf.predict(test_x), test_y);
        }
    }
    Ok((sap_from_matrix(&s, &eligible)?, s))
}

/// Squared Frobenius norm of the off-diagonal part of the MI matrix between
/// code dims `0..d` and the given factors, code dim `k` aligned with factor
/// column `k`. `factor_dims[k]` names the code dim that column `k` aligns
/// with when only a subset of factors is present.
pub fn avg_mi_aligned(codes: ArrayView2<'_, f64>, factors: ArrayView2<'_, usize>, factor_dims: &[usize], bins: usize) -> Result<f64> {
    check_rows(codes, factors, 2)?;
    if factor_dims.len() != factors.ncols() || factor_dims.iter().any(|&d| d >= codes.ncols()) {
        return Err(Error::Metric(format!(
            "cannot align {} factors with {} code dims",
            factors.ncols(),
            codes.ncols()
        )));
    }
    let selected = codes.select(Axis(1), factor_dims);
    let mi = MiMatrix::estimate(selected.view(), factors, bins);
    Ok(off_diagonal_energy(&mi.values))
}

pub fn avg_mi(codes: ArrayView2<'_, f64>, factors: ArrayView2<'_, usize>, bins: usize) -> Result<f64> {
    let dims: Vec<usize> = (0..factors.ncols()).collect();
    avg_mi_aligned(codes, factors, &dims, bins)
}

pub fn off_diagonal_energy(m: &Array2<f64>) -> f64 {
    m.indexed_iter().filter(|((i, j), _)| i != j).map(|(_, v)| v * v).sum()
}
