mod common;

use dlab::data::GroundTruthModel;
use dlab::downstream::{downstream_report, logistic_cv, Classifier, DownstreamConfig, SIZES, STRENGTHS};
use dlab::ml::{accuracy, Gbt, GbtConfig};
use dlab::representation::{Constant, FactorCopy};
use ndarray::{Array2, Axis};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use common::rng;

/// Two Gaussian blobs far apart in 2-D.
fn blobs(n: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
    let mut r = rng(seed);
    let noise = Normal::new(0.0, 0.5).unwrap();
    let y: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let x = Array2::from_shape_fn((n, 2), |(i, j)| {
        let centre = if y[i] == 0 { -3.0 } else { 3.0 };
        centre * if j == 0 { 1.0 } else { 0.5 } + noise.sample(&mut r)
    });
    (x, y)
}

/// Four Gaussian clusters at `(+-1, +-1)`, labeled by the sign product.
fn xor(n: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
    let mut r = rng(seed);
    let noise = Normal::new(0.0, 0.3).unwrap();
    let corners: Vec<(f64, f64)> = (0..n)
        .map(|_| (if r.random_bool(0.5) { 1.0 } else { -1.0 }, if r.random_bool(0.5) { 1.0 } else { -1.0 }))
        .collect();
    let x = Array2::from_shape_fn((n, 2), |(i, j)| {
        let c = if j == 0 { corners[i].0 } else { corners[i].1 };
        c + noise.sample(&mut r)
    });
    let y = corners.iter().map(|&(a, b)| usize::from(a != b)).collect();
    (x, y)
}

#[test]
fn logistic_cv_separates_blobs() {
    let (x, y) = blobs(100, 0);
    let (xt, yt) = blobs(500, 1);
    let (clf, strength) = logistic_cv(x.view(), &y, 5, &STRENGTHS).unwrap();
    assert!(STRENGTHS.contains(&strength));
    assert_eq!(accuracy(&clf.predict(xt.view()), &yt), 1.0);
    assert_eq!(STRENGTHS.len(), 5);
}

#[test]
fn logistic_cv_is_at_chance_on_independent_labels() {
    let mut r = rng(2);
    let x = Array2::from_shape_fn((1000, 5), |_| r.random_range(-1.0..1.0));
    let y: Vec<usize> = (0..1000).map(|_| r.random_range(0..4)).collect();
    let xt = Array2::from_shape_fn((1000, 5), |_| r.random_range(-1.0..1.0));
    let yt: Vec<usize> = (0..1000).map(|_| r.random_range(0..4)).collect();
    let (clf, _) = logistic_cv(x.view(), &y, 5, &STRENGTHS).unwrap();
    let acc = accuracy(&clf.predict(xt.view()), &yt);
    assert!(acc <= 0.35, "{acc}");
}

#[test]
fn logistic_cv_rejects_bad_inputs() {
    let x = Array2::zeros((10, 2));
    assert!(logistic_cv(x.view(), &[1; 10], 5, &STRENGTHS).is_err());
    assert!(logistic_cv(x.slice(ndarray::s![..3, ..]), &[0, 1, 0], 5, &STRENGTHS).is_err());
    assert!(logistic_cv(x.view(), &[0, 1, 0, 1, 0, 1, 0, 1, 0, 1], 5, &[]).is_err());
}

#[test]
fn gbt_captures_xor() {
    // a greedy depth-2 root split on XOR is noise-driven, so single draws
    // vary; the median over draws carries the bound
    let mut accs = Vec::new();
    for draw in 0..8 {
        let (x, y) = xor(400, 2 * draw + 3);
        let (xt, yt) = xor(1000, 2 * draw + 4);
        let clf = Gbt::fit(x.view(), &y, GbtConfig::DOWNSTREAM).unwrap();
        accs.push(accuracy(&clf.predict(xt.view()), &yt));
        if draw == 0 {
            let (lr, _) = logistic_cv(x.view(), &y, 5, &STRENGTHS).unwrap();
            assert!(accuracy(&lr.predict(xt.view()), &yt) < 0.75, "a linear model should not fit XOR");
        }
    }
    accs.sort_by(f64::total_cmp);
    assert!(accs[0] >= 0.9, "{accs:?}");
    assert!(0.5 * (accs[3] + accs[4]) >= 0.95, "{accs:?}");
}

#[test]
fn gbt_on_a_constant_feature_predicts_the_majority() {
    let y: Vec<usize> = (0..100).map(|i| usize::from(i % 10 < 3) + 2 * usize::from(i % 10 == 9)).collect();
    let x = Array2::from_elem((100, 1), 4.0);
    let clf = Gbt::fit(x.view(), &y, GbtConfig::DOWNSTREAM).unwrap();
    let pred = clf.predict(x.view());
    assert!(pred.iter().all(|&p| p == 0));
    assert_eq!(accuracy(&pred, &y), 0.6);
}

#[test]
fn gbt_is_deterministic() {
    let (x, y) = xor(300, 5);
    let a = Gbt::fit(x.view(), &y, GbtConfig::DOWNSTREAM).unwrap();
    let b = Gbt::fit(x.view(), &y, GbtConfig::DOWNSTREAM).unwrap();
    assert_eq!(a, b);
}

fn shapes() -> GroundTruthModel {
    GroundTruthModel::mini_shapes(16).unwrap()
}

fn config(sizes: Vec<usize>) -> DownstreamConfig {
    DownstreamConfig {
        sizes,
        ..DownstreamConfig::default()
    }
}

#[test]
fn identity_representation_predicts_factors() {
    let m = shapes();
    let report = downstream_report(&m, &FactorCopy { dims: 10 }, &config(vec![1000]), 0).unwrap();
    for classifier in [Classifier::Logistic, Classifier::Gbt] {
        let acc = report.mean_accuracy(classifier, 1000).unwrap();
        assert!(acc >= 0.95, "{} {acc}", classifier.name());
    }
}

#[test]
fn constant_representation_is_at_chance() {
    let m = shapes();
    let report = downstream_report(&m, &Constant { dims: 10 }, &config(vec![100, 1000]), 1).unwrap();
    for cell in &report.cells {
        let chance = 1.0 / m.space().cardinalities()[cell.factor] as f64;
        let acc = cell.accuracy.unwrap();
        assert!((acc - chance).abs() <= 0.05, "{cell:?} vs {chance}");
    }
}

#[test]
fn report_shape_and_bounds() {
    let m = shapes();
    assert_eq!(DownstreamConfig::default().sizes, SIZES.to_vec());
    assert_eq!(SIZES, [10, 100, 1000, 10_000]);
    let cfg = DownstreamConfig {
        test_samples: 200,
        ..config(vec![10, 100, 1000])
    };
    let report = downstream_report(&m, &FactorCopy { dims: 10 }, &cfg, 2).unwrap();
    assert_eq!(report.cells.len(), 2 * 3 * m.num_factors());
    for c in &report.cells {
        if let Some(a) = c.accuracy {
            assert!((0.0..=1.0).contains(&a));
        }
    }
    assert_eq!(downstream_report(&m, &FactorCopy { dims: 10 }, &cfg, 2).unwrap(), report);
    assert!(downstream_report(&m, &FactorCopy { dims: 10 }, &config(vec![5]), 2).is_err());
}

#[test]
fn identity_accuracy_grows_with_data() {
    let m = shapes();
    let cfg = DownstreamConfig {
        test_samples: 500,
        ..DownstreamConfig::default()
    };
    let reports: Vec<_> = (0..5)
        .map(|s| downstream_report(&m, &FactorCopy { dims: 10 }, &cfg, 10 + s).unwrap())
        .collect();
    for classifier in [Classifier::Logistic, Classifier::Gbt] {
        let medians: Vec<f64> = SIZES
            .iter()
            .map(|&size| {
                let mut v: Vec<f64> = reports.iter().map(|r| r.mean_accuracy(classifier, size).unwrap()).collect();
                v.sort_by(f64::total_cmp);
                v[2]
            })
            .collect();
        for w in medians.windows(2) {
            assert!(w[1] >= w[0], "{}: {medians:?}", classifier.name());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn classifiers_ignore_feature_order(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = 120;
        let x = Array2::from_shape_fn((n, 4), |_| r.random_range(-1.0..1.0));
        let y: Vec<usize> = x.rows().into_iter().map(|p| usize::from(p[0] + 0.5 * p[2] > 0.0) + usize::from(p[1] > 0.6)).collect();
        let xt = Array2::from_shape_fn((300, 4), |_| r.random_range(-1.0..1.0));
        let mut order: Vec<usize> = (0..4).collect();
        order.shuffle(&mut r);
        let (px, pxt) = (x.select(Axis(1), &order), xt.select(Axis(1), &order));
        let (a, sa) = logistic_cv(x.view(), &y, 5, &STRENGTHS).unwrap();
        let (b, sb) = logistic_cv(px.view(), &y, 5, &STRENGTHS).unwrap();
        prop_assert_eq!(sa, sb);
        prop_assert_eq!(a.predict(xt.view()), b.predict(pxt.view()));

        let g = Gbt::fit(x.view(), &y, GbtConfig::DOWNSTREAM).unwrap();
        let h = Gbt::fit(px.view(), &y, GbtConfig::DOWNSTREAM).unwrap();
        prop_assert_eq!(g.predict(x.view()), h.predict(px.view()));
        for (j, &o) in order.iter().enumerate() {
            prop_assert!((h.importances()[j] - g.importances()[o]).abs() < 1e-9);
        }
    }
}
