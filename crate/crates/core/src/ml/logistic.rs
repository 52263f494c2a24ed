use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::ml::classes_of;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogisticConfig {
    /// L2 penalty on the weights (not the intercepts).
    pub strength: f64,
    pub max_iter: usize,
    pub tolerance: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            strength: 1e-2,
            max_iter: 5000,
            tolerance: 1e-5,
        }
    }
}

/// Multinomial logistic regression on standardized features, fitted by
/// accelerated full-batch gradient descent on the mean cross-entropy plus
/// `strength / 2 * |W|^2`.
#[derive(Clone, Debug)]
pub struct Logistic {
    classes: Vec<usize>,
    mean: Array1<f64>,
    scale: Array1<f64>,
    /// `[features + 1, classes]`, intercept in the last row.
    weights: Array2<f64>,
    iterations: usize,
}

fn standardize(x: ArrayView2<'_, f64>, mean: &Array1<f64>, scale: &Array1<f64>) -> Array2<f64> {
    let (n, p) = x.dim();
    let mut out = Array2::ones((n, p + 1));
    for ((i, j), v) in x.indexed_iter() {
        out[[i, j]] = (v - mean[j]) / scale[j];
    }
    out
}

/// Row-wise softmax in place.
fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
}

impl Logistic {
    pub fn fit(x: ArrayView2<'_, f64>, labels: &[usize], config: LogisticConfig) -> Result<Self> {
        let (n, p) = x.dim();
        if n != labels.len() {
            return Err(Error::Classifier(format!("{n} rows for {} labels", labels.len())));
        }
        let classes = classes_of(labels)?;
        let k = classes.len();
        let mean = x.mean_axis(Axis(0)).expect("nonempty");
        let scale = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
        let xs = standardize(x, &mean, &scale);
        let mut onehot = Array2::zeros((n, k));
        for (i, y) in labels.iter().enumerate() {
            onehot[[i, classes.binary_search(y).expect("known class")]] = 1.0;
        }
        let lambda = config.strength;
        // softmax curvature is at most half the largest eigenvalue of X^T X / n
        let gram = xs.t().dot(&xs) / n as f64;
        let lipschitz = 0.5 * largest_eigenvalue(&gram) + lambda;
        let step = 1.0 / lipschitz;
        let mut penalty_mask = Array2::from_elem((p + 1, k), 1.0);
        penalty_mask.row_mut(p).fill(0.0);

        let gradient = |w: &Array2<f64>| -> Array2<f64> {
            let mut prob = xs.dot(w);
            softmax_rows(&mut prob);
            let resid = prob - &onehot;
            xs.t().dot(&resid) / n as f64 + &(w * &penalty_mask * lambda)
        };

        let mut w = Array2::<f64>::zeros((p + 1, k));
        let mut w_prev = w.clone();
        let mut momentum = 1.0f64;
        let mut iterations = 0;
        for it in 0..config.max_iter {
            iterations = it + 1;
            let t_next = (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0;
            let beta = (momentum - 1.0) / t_next;
            let y = &w + &((&w - &w_prev) * beta);
            let g = gradient(&y);
            if g.iter().map(|v| v * v).sum::<f64>().sqrt() < config.tolerance {
                w = y;
                break;
            }
            let w_next = &y - &(g * step);
            // restart the momentum when it points uphill
            let uphill = ((&y - &w_next) * (&w_next - &w)).sum() > 0.0;
            w_prev = w;
            w = w_next;
            momentum = if uphill { 1.0 } else { t_next };
        }
        Ok(Self {
            classes,
            mean,
            scale,
            weights: w,
            iterations,
        })
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn decision(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        standardize(x, &self.mean, &self.scale).dot(&self.weights)
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Vec<usize> {
        self.decision(x)
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                self.classes[best]
            })
            .collect()
    }
}

fn largest_eigenvalue(m: &Array2<f64>) -> f64 {
    let n = m.nrows();
    let mut v = Array1::from_elem(n, 1.0 / (n as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..200 {
        let mv = m.dot(&v);
        let norm = mv.dot(&mv).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next = mv / norm;
        let converged = (norm - lambda).abs() <= 1e-10 * norm;
        lambda = norm;
        v = next;
        if converged {
            break;
        }
    }
    // slight overestimate keeps the step size safe
    lambda * 1.01
}
