use dlab_tensor::{Adam, AdamConfig, ConvGeometry, Graph, ParamSet, Tensor, TensorError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t(shape: &[usize], data: &[f32]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

#[test]
fn sigmoid_and_relu_values() {
    let mut g = Graph::new();
    let x = g.param(t(&[2], &[0.0, -3.2])).unwrap();
    let s = g.sigmoid(x).unwrap();
    let r = g.relu(x).unwrap();
    assert_eq!(g.value(s).data()[0], 0.5);
    assert_eq!(g.value(r).data()[1], 0.0);
}

#[test]
fn sigmoid_derivative_at_zero() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(0.0)).unwrap();
    let s = g.sigmoid(x).unwrap();
    let grads = g.backward(s).unwrap();
    assert!((grads.get(x).unwrap()[0] - 0.25).abs() < 1e-7);
}

#[test]
fn conv_of_ones() {
    let mut g = Graph::new();
    let geom = ConvGeometry::forward(1, 1, (2, 2), 2, 0, (4, 4)).unwrap();
    let x = g.constant(Tensor::full(vec![1, 1, 4, 4], 1.0)).unwrap();
    let w = g.param(Tensor::full(vec![1, 1, 2, 2], 1.0)).unwrap();
    let y = g.conv2d(x, w, geom).unwrap();
    assert_eq!(g.shape(y), &[1, 1, 2, 2]);
    assert_eq!(g.value(y).data(), &[4.0; 4]);
}

#[test]
fn same_padding_halves_extents() {
    let mut hw = (64, 64);
    for &(k, c_in, c_out) in &[(4, 1, 32), (4, 32, 32), (2, 32, 64), (2, 64, 64)] {
        let pad = ConvGeometry::same_padding(k, 2).unwrap();
        let geom = ConvGeometry::forward(c_in, c_out, (k, k), 2, pad, hw).unwrap();
        assert_eq!(geom.map_hw, (hw.0 / 2, hw.1 / 2));
        hw = geom.map_hw;
    }
    assert_eq!(hw, (4, 4));
    assert!(ConvGeometry::same_padding(3, 2).is_err());
}

#[test]
fn matmul_sum_gradient_is_ones_times_b_transposed() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a: Vec<f32> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
    let b: Vec<f32> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut g = Graph::new();
    let va = g.param(t(&[3, 4], &a)).unwrap();
    let vb = g.param(t(&[4, 2], &b)).unwrap();
    let p = g.matmul(va, vb).unwrap();
    let s = g.sum(p).unwrap();
    let grads = g.backward(s).unwrap();
    let ga = grads.get(va).unwrap();
    for i in 0..3 {
        for k in 0..4 {
            let expect = b[k * 2] + b[k * 2 + 1];
            assert!((ga[i * 4 + k] - expect).abs() < 1e-6);
        }
    }
}

#[test]
fn unreachable_parameters_get_zero_gradient() {
    let mut g = Graph::new();
    let used = g.param(t(&[2], &[1.0, 2.0])).unwrap();
    let unused = g.param(t(&[3], &[1.0, 2.0, 3.0])).unwrap();
    let s = g.sum(used).unwrap();
    let grads = g.backward(s).unwrap();
    assert!(grads.get(unused).is_none());
    assert_eq!(grads.tensor(unused).data(), &[0.0; 3]);
    assert_eq!(grads.tensor(used).data(), &[1.0, 1.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut g = Graph::new();
    let x = g.param(t(&[2], &[1.0, 2.0])).unwrap();
    let y = g.exp(x).unwrap();
    assert!(matches!(g.backward(y), Err(TensorError::NonScalarLoss(_))));
}

#[test]
fn shape_mismatch_names_both_shapes() {
    let mut g = Graph::new();
    let a = g.param(Tensor::zeros(vec![3, 4])).unwrap();
    let b = g.param(Tensor::zeros(vec![3, 2])).unwrap();
    let err = g.matmul(a, b).unwrap_err().to_string();
    assert!(err.contains("[3, 4]") && err.contains("[3, 2]"), "{err}");
}

#[test]
fn non_finite_values_are_rejected() {
    assert!(matches!(Tensor::new(vec![1], vec![f32::NAN]), Err(TensorError::NonFinite { .. })));
    let mut g = Graph::new();
    let x = g.param(t(&[1], &[-1.0])).unwrap();
    assert!(matches!(g.log(x), Err(TensorError::NonFinite { op: "log" })));
    let big = g.param(t(&[1], &[200.0])).unwrap();
    assert!(g.exp(big).is_err());
}

#[test]
fn record_is_topologically_ordered() {
    let mut g = Graph::new();
    let a = g.param(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
    let b = g.matmul(a, a).unwrap();
    let c = g.sigmoid(b).unwrap();
    let _ = g.sum(c).unwrap();
    for rec in g.records() {
        assert!(rec.inputs.iter().all(|i| i.id() < rec.output.id()), "{rec:?}");
    }
    assert_eq!(g.records()[1].tag, "matmul");
}

#[test]
fn transposed_conv_is_gradient_of_conv() {
    // d/dx sum(conv(x, w) * m) = conv_transpose(m, w)
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut rand_t = |shape: Vec<usize>| {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
    };
    let geom = ConvGeometry::forward(3, 4, (4, 4), 2, 1, (8, 8)).unwrap();
    let x = rand_t(vec![2, 3, 8, 8]);
    let w = rand_t(vec![4, 3, 4, 4]);
    let m = rand_t(vec![2, 4, 4, 4]);

    let mut g = Graph::new();
    let vx = g.param(x).unwrap();
    let vw = g.constant(w.clone()).unwrap();
    let vm = g.constant(m.clone()).unwrap();
    let y = g.conv2d(vx, vw, geom).unwrap();
    let p = g.mul(y, vm).unwrap();
    let s = g.sum(p).unwrap();
    let back = g.backward(s).unwrap().tensor(vx);

    let mut g2 = Graph::new();
    let vm2 = g2.constant(m).unwrap();
    let vw2 = g2.constant(w).unwrap();
    let fwd = g2.conv_transpose2d(vm2, vw2, geom).unwrap();
    let diff = back
        .data()
        .iter()
        .zip(g2.value(fwd).data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    assert!(diff < 1e-6, "max abs diff {diff}");
}

#[test]
fn identical_inputs_give_bitwise_identical_gradients() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a: Vec<f32> = (0..64 * 32).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f32> = (0..32 * 16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut g = Graph::new();
        let va = g.constant(t(&[64, 32], &a)).unwrap();
        let vw = g.param(t(&[32, 16], &w)).unwrap();
        let h = g.matmul(va, vw).unwrap();
        let r = g.leaky_relu(h, 0.2).unwrap();
        let s = g.sum(r).unwrap();
        let grads = g.backward(s).unwrap();
        (g.value(s).item().to_bits(), grads.tensor(vw).into_data())
    };
    let (l1, g1) = run();
    let (l2, g2) = run();
    assert_eq!(l1, l2);
    assert!(g1.iter().zip(&g2).all(|(a, b)| a.to_bits() == b.to_bits()));
}

fn single(value: f32) -> ParamSet {
    let mut p = ParamSet::new();
    p.insert("w", Tensor::scalar(value));
    p
}

#[test]
fn adam_zero_gradient_leaves_parameters() {
    let mut p = single(1.5);
    let mut adam = Adam::new(AdamConfig::default(), &p);
    adam.step(&mut p, &[Tensor::scalar(0.0)]).unwrap();
    assert_eq!(p.tensors()[0].item(), 1.5);
    assert_eq!(adam.step_count(), 1);
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    let mut p = single(0.0);
    let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
    let mut adam = Adam::new(cfg, &p);
    adam.step(&mut p, &[Tensor::scalar(1.0)]).unwrap();
    assert!((p.tensors()[0].item() + 0.1).abs() < 1e-6);
}

#[test]
fn adam_descends_a_quadratic() {
    // scalar oracle: 100 steps of Adam on w^2 from w = 1 with lr 0.01
    let mut w = 1.0f64;
    let (mut m, mut v) = (0.0f64, 0.0f64);
    for t in 1..=100 {
        let g = 2.0 * w;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        w -= 0.01 * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
    }
    assert!(w.abs() < 0.9);

    let mut p = single(1.0);
    let cfg = AdamConfig { lr: 0.01, ..AdamConfig::default() };
    let mut adam = Adam::new(cfg, &p);
    for _ in 0..100 {
        let mut g = Graph::new();
        let vars = p.bind(&mut g).unwrap();
        let sq = g.square(vars[0]).unwrap();
        let grads = g.backward(sq).unwrap();
        adam.step(&mut p, &[grads.tensor(vars[0])]).unwrap();
    }
    let got = p.tensors()[0].item() as f64;
    assert!(got.abs() < 0.9);
    assert!((got - w).abs() < 1e-4, "adam {got} vs oracle {w}");
}

#[test]
fn adam_rejects_shape_mismatch() {
    let mut p = single(0.0);
    let mut adam = Adam::new(AdamConfig::default(), &p);
    assert!(adam.step(&mut p, &[Tensor::zeros(vec![2])]).is_err());
    assert!(adam.step(&mut p, &[]).is_err());
}

#[test]
fn discriminator_adam_settings() {
    let d = AdamConfig::discriminator();
    assert_eq!((d.lr, d.beta1, d.beta2, d.eps), (1e-4, 0.5, 0.9, 1e-8));
    let e = AdamConfig::default();
    assert_eq!((e.lr, e.beta1, e.beta2, e.eps), (1e-4, 0.9, 0.999, 1e-8));
}
