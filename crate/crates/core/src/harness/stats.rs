//! Rank correlation and win-rate statistics.

/// Ranks starting at 1, ties receiving the mean of the ranks they span.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rho as the Pearson correlation of average ranks; `None` when
/// either vector is constant or fewer than two pairs exist.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "spearman needs paired samples");
    if x.len() < 2 {
        return None;
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Clone, Debug, PartialEq)]
pub struct WinRate {
    pub strategy: String,
    pub wins: f64,
    pub trials: usize,
    pub probability: f64,
    pub standard_error: f64,
}

/// `scores[t][s]` is strategy `s`'s test score in trial `t` (higher wins).
/// Each trial awards one win, split equally among tied leaders.
pub fn win_rates(strategies: &[String], scores: &[Vec<f64>]) -> Vec<WinRate> {
    let mut wins = vec![0.0; strategies.len()];
    for trial in scores {
        assert_eq!(trial.len(), strategies.len(), "one score per strategy");
        let best = trial.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let leaders: Vec<usize> = (0..trial.len()).filter(|&s| trial[s] == best).collect();
        for &s in &leaders {
            wins[s] += 1.0 / leaders.len() as f64;
        }
    }
    let n = scores.len();
    strategies
        .iter()
        .zip(wins)
        .map(|(name, w)| {
            let p = if n > 0 { w / n as f64 } else { 0.0 };
            WinRate {
                strategy: name.clone(),
                wins: w,
                trials: n,
                probability: p,
                standard_error: binomial_se(p, n),
            }
        })
        .collect()
}

pub fn binomial_se(p: f64, trials: usize) -> f64 {
    if trials == 0 {
        return 0.0;
    }
    (p * (1.0 - p) / trials as f64).sqrt()
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 30.0, 40.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0]), Some(-1.0));
        let rho = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((rho - 0.8).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), None);
    }

    #[test]
    fn ties_share_ranks() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), [3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn win_rate_examples() {
        let names = vec!["a".to_string(), "b".to_string()];
        let r = win_rates(&names, &vec![vec![0.8, 0.6]; 10]);
        assert_eq!((r[0].probability, r[1].probability), (1.0, 0.0));
        let r = win_rates(&names, &vec![vec![0.5, 0.5]; 10]);
        assert_eq!((r[0].probability, r[1].probability), (0.5, 0.5));
        assert!((binomial_se(0.5, 120) - 0.0456).abs() < 1e-4);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
