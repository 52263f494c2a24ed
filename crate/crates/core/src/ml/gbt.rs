use ndarray::ArrayView2;

use crate::error::{Error, Result};
use crate::ml::classes_of;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GbtConfig {
    pub rounds: usize,
    pub depth: usize,
    pub learning_rate: f64,
}

impl GbtConfig {
    pub const DOWNSTREAM: GbtConfig = GbtConfig {
        rounds: 100,
        depth: 2,
        learning_rate: 0.1,
    };
    pub const DCI: GbtConfig = GbtConfig {
        rounds: 10,
        depth: 2,
        learning_rate: 0.1,
    };
}

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Splitmix64 finalizer; summed over a row set it gives an order-free key.
fn row_hash(r: usize) -> u64 {
    let mut z = (r as u64).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Least-squares regression tree with exact greedy splits. Equal gains (up
/// to rounding) are broken by a hash of the left row set, so the chosen
/// partition does not depend on feature order.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

struct SplitSearch<'a> {
    columns: &'a [Vec<f64>],
    /// Row indices sorted by each feature's value (stable, so equal values
    /// keep row order).
    sorted: &'a [Vec<usize>],
    gains: &'a mut [f64],
}

impl RegressionTree {
    pub fn fit(
        columns: &[Vec<f64>],
        sorted: &[Vec<usize>],
        targets: &[f64],
        depth: usize,
        gains: &mut [f64],
    ) -> Self {
        let mut tree = Self { nodes: Vec::new() };
        let rows: Vec<usize> = (0..targets.len()).collect();
        let mut member = vec![false; targets.len()];
        let mut search = SplitSearch { columns, sorted, gains };
        tree.grow(&mut search, targets, rows, depth, &mut member);
        tree
    }

    fn grow(
        &mut self,
        s: &mut SplitSearch<'_>,
        targets: &[f64],
        rows: Vec<usize>,
        depth: usize,
        member: &mut [bool],
    ) -> usize {
        let id = self.nodes.len();
        let n = rows.len() as f64;
        let total: f64 = rows.iter().map(|&r| targets[r]).sum();
        self.nodes.push(Node::Leaf(if rows.is_empty() { 0.0 } else { total / n }));
        if depth == 0 || rows.len() < 2 {
            return id;
        }
        for &r in &rows {
            member[r] = true;
        }
        let parent_score = total * total / n;
        let mut best: Option<(f64, u64, usize, f64)> = None;
        // features inducing the same best partition share its gain
        let mut sharing: Vec<usize> = Vec::new();
        for (f, order) in s.sorted.iter().enumerate() {
            let col = &s.columns[f];
            let mut left_sum = 0.0;
            let mut left_n = 0usize;
            let mut left_hash = 0u64;
            let mut prev: Option<usize> = None;
            for &r in order.iter().filter(|&&r| member[r]) {
                if let Some(p) = prev {
                    if col[r] > col[p] {
                        let right_n = rows.len() - left_n;
                        let right_sum = total - left_sum;
                        let score = left_sum * left_sum / left_n as f64 + right_sum * right_sum / right_n as f64;
                        let gain = score - parent_score;
                        let (better, same) = match best {
                            None => (true, false),
                            Some((g, h, _, _)) => {
                                let tol = 1e-12 * g.abs();
                                let tie = (gain - g).abs() <= tol;
                                (gain > g + tol || (tie && left_hash < h), tie && left_hash == h)
                            }
                        };
                        if gain > 1e-12 && better {
                            best = Some((gain, left_hash, f, 0.5 * (col[p] + col[r])));
                            sharing.clear();
                            sharing.push(f);
                        } else if same && sharing.last() != Some(&f) {
                            sharing.push(f);
                        }
                    }
                }
                left_sum += targets[r];
                left_n += 1;
                left_hash = left_hash.wrapping_add(row_hash(r));
                prev = Some(r);
            }
        }
        for &r in &rows {
            member[r] = false;
        }
        let Some((gain, _, feature, threshold)) = best else {
            return id;
        };
        for &f in &sharing {
            s.gains[f] += gain / sharing.len() as f64;
        }
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            rows.into_iter().partition(|&r| s.columns[feature][r] <= threshold);
        let left = self.grow(s, targets, left_rows, depth - 1, member);
        let right = self.grow(s, targets, right_rows, depth - 1, member);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[feature] <= threshold { left } else { right },
            }
        }
    }
}

/// One-vs-rest gradient boosting: for every class a sequence of regression
/// trees fitted to the squared-error residual of the class indicator,
/// starting from the class frequency. Prediction is the argmax score.
#[derive(Clone, Debug, PartialEq)]
pub struct Gbt {
    classes: Vec<usize>,
    base: Vec<f64>,
    trees: Vec<Vec<RegressionTree>>,
    learning_rate: f64,
    /// Summed split gain per feature over all trees and classes.
    importances: Vec<f64>,
}

impl Gbt {
    pub fn fit(x: ArrayView2<'_, f64>, labels: &[usize], config: GbtConfig) -> Result<Self> {
        let (n, p) = x.dim();
        if n != labels.len() {
            return Err(Error::Classifier(format!("{n} rows for {} labels", labels.len())));
        }
        let classes = classes_of(labels)?;
        let columns: Vec<Vec<f64>> = (0..p).map(|j| x.column(j).to_vec()).collect();
        let sorted: Vec<Vec<usize>> = columns
            .iter()
            .map(|col| {
                let mut idx: Vec<usize> = (0..n).collect();
                idx.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
                idx
            })
            .collect();
        let mut importances = vec![0.0; p];
        let mut base = Vec::with_capacity(classes.len());
        let mut trees = Vec::with_capacity(classes.len());
        for &c in &classes {
            let y: Vec<f64> = labels.iter().map(|&l| (l == c) as u8 as f64).collect();
            let prior = y.iter().sum::<f64>() / n as f64;
            let mut score = vec![prior; n];
            let mut class_trees = Vec::with_capacity(config.rounds);
            for _ in 0..config.rounds {
                let resid: Vec<f64> = y.iter().zip(&score).map(|(t, s)| t - s).collect();
                let tree = RegressionTree::fit(&columns, &sorted, &resid, config.depth, &mut importances);
                let mut row = vec![0.0; p];
                for (i, s) in score.iter_mut().enumerate() {
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = columns[j][i];
                    }
                    *s += config.learning_rate * tree.predict_row(&row);
                }
                class_trees.push(tree);
            }
            base.push(prior);
            trees.push(class_trees);
        }
        Ok(Self {
            classes,
            base,
            trees,
            learning_rate: config.learning_rate,
            importances,
        })
    }

    pub fn importances(&self) -> &[f64] {
        &self.importances
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Vec<usize> {
        x.rows()
            .into_iter()
            .map(|row| {
                let row = row.to_vec();
                let mut best = (0, f64::NEG_INFINITY);
                for (c, class_trees) in self.trees.iter().enumerate() {
                    let s = self.base[c]
                        + self.learning_rate * class_trees.iter().map(|t| t.predict_row(&row)).sum::<f64>();
                    if s > best.1 {
                        best = (c, s);
                    }
                }
                self.classes[best.0]
            })
            .collect()
    }
}
