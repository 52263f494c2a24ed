//! Discretization and plug-in information estimates, in nats.

use std::collections::HashMap;

use ndarray::{Array2, ArrayView1, ArrayView2};

pub const DEFAULT_BINS: usize = 20;

/// Equal-width binning of every column over its observed `[min, max]`;
/// constant columns map to bin 0.
pub fn discretize(codes: ArrayView2<'_, f64>, bins: usize) -> Array2<usize> {
    let (n, m) = codes.dim();
    let mut out = Array2::zeros((n, m));
    for j in 0..m {
        let col = codes.column(j);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = hi - lo;
        if !(width > 0.0) {
            continue;
        }
        for (i, &v) in col.iter().enumerate() {
            let b = ((v - lo) / width * bins as f64).floor() as usize;
            out[[i, j]] = b.min(bins - 1);
        }
    }
    out
}

/// Relabels values to `0..k` in order of first appearance.
fn dense(a: &[usize]) -> (Vec<usize>, usize) {
    let mut map = HashMap::new();
    let codes = a
        .iter()
        .map(|v| {
            let next = map.len();
            *map.entry(*v).or_insert(next)
        })
        .collect();
    (codes, map.len())
}

pub fn entropy(a: &[usize]) -> f64 {
    let (codes, k) = dense(a);
    let mut counts = vec![0usize; k];
    for c in codes {
        counts[c] += 1;
    }
    let n = a.len() as f64;
    counts
        .into_iter()
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `sum p(a, b) ln(p(a, b) / (p(a) p(b)))` over the joint histogram,
/// clamped at 0.
pub fn discrete_mi(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "mutual information needs equal lengths");
    if a.is_empty() {
        return 0.0;
    }
    let (ca, ka) = dense(a);
    let (cb, kb) = dense(b);
    let mut joint = vec![0usize; ka * kb];
    let mut ma = vec![0usize; ka];
    let mut mb = vec![0usize; kb];
    for (&x, &y) in ca.iter().zip(&cb) {
        joint[x * kb + y] += 1;
        ma[x] += 1;
        mb[y] += 1;
    }
    let n = a.len() as f64;
    let mut terms = Vec::with_capacity(ka * kb);
    for x in 0..ka {
        for y in 0..kb {
            let c = joint[x * kb + y];
            if c > 0 {
                let pxy = c as f64 / n;
                terms.push(pxy * (pxy / (ma[x] as f64 / n * (mb[y] as f64 / n))).ln());
            }
        }
    }
    // summing in sorted order makes the estimate exactly symmetric
    terms.sort_by(f64::total_cmp);
    terms.iter().sum::<f64>().max(0.0)
}

/// Pairwise MI between discretized code dims (rows) and factors (columns).
#[derive(Clone, Debug, PartialEq)]
pub struct MiMatrix {
    pub values: Array2<f64>,
    pub samples: usize,
    pub bins: usize,
}

fn column(a: ArrayView1<'_, usize>) -> Vec<usize> {
    a.to_vec()
}

impl MiMatrix {
    pub fn estimate(codes: ArrayView2<'_, f64>, factors: ArrayView2<'_, usize>, bins: usize) -> Self {
        let disc = discretize(codes, bins);
        let dims = codes.ncols();
        let k = factors.ncols();
        let fcols: Vec<Vec<usize>> = (0..k).map(|j| column(factors.column(j))).collect();
        let mut values = Array2::zeros((dims, k));
        for i in 0..dims {
            let c = column(disc.column(i));
            for (j, f) in fcols.iter().enumerate() {
                values[[i, j]] = discrete_mi(&c, f);
            }
        }
        Self {
            values,
            samples: codes.nrows(),
            bins,
        }
    }
}

pub fn factor_entropies(factors: ArrayView2<'_, usize>) -> Vec<f64> {
    (0..factors.ncols()).map(|j| entropy(&column(factors.column(j)))).collect()
}
