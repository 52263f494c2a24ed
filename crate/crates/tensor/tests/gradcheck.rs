//! Central finite-difference checks (h = 1e-4) of every primitive, run in f64.

use dlab_tensor::{ConvGeometry, Graph, Result, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-4;
const TOL: f64 = 1e-3;

fn random(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            // keep away from the kinks of relu / leaky relu
            let mut v: f64 = rng.random_range(lo..hi);
            if v.abs() < 0.05 {
                v += 0.1;
            }
            v
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Reduces the op output to a scalar with fixed random weights.
fn weighted_loss<F>(build: &F, inputs: &[Tensor<f64>], weights_seed: u64) -> Result<(Graph<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::default();
    let vars = inputs.iter().map(|t| g.param(t.clone())).collect::<Result<Vec<_>>>()?;
    let out = build(&mut g, &vars)?;
    let shape = g.shape(out).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(weights_seed);
    let w = random(&shape, -1.0, 1.0, &mut rng);
    let wv = g.constant(w)?;
    let prod = g.mul(out, wv)?;
    let loss = g.sum(prod)?;
    Ok((g, vars, loss))
}

fn max_rel_error<F>(build: F, inputs: Vec<Tensor<f64>>, skip: &[usize]) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let (g, vars, loss) = weighted_loss(&build, &inputs, 99).unwrap();
    let grads = g.backward(loss).unwrap();
    let mut worst = 0f64;
    for (k, var) in vars.iter().enumerate() {
        if skip.contains(&k) {
            continue;
        }
        let analytic = grads.tensor(*var);
        for i in 0..inputs[k].numel() {
            let eval = |delta: f64| {
                let mut shifted = inputs.clone();
                shifted[k].data_mut()[i] += delta;
                let (g, _, l) = weighted_loss(&build, &shifted, 99).unwrap();
                g.value(l).item()
            };
            let numeric = (eval(H) - eval(-H)) / (2.0 * H);
            let a = analytic.data()[i];
            let scale = a.abs().max(numeric.abs());
            if scale < 1e-7 {
                continue;
            }
            worst = worst.max((a - numeric).abs() / scale);
        }
    }
    worst
}

fn check<F>(name: &str, build: F, inputs: Vec<Tensor<f64>>)
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    check_skip(name, build, inputs, &[]);
}

fn check_skip<F>(name: &str, build: F, inputs: Vec<Tensor<f64>>, skip: &[usize])
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let err = max_rel_error(build, inputs, skip);
    assert!(err < TOL, "{name}: relative error {err:e}");
}

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(7)
}

#[test]
fn matmul_and_bias() {
    let mut r = rng();
    check("matmul", |g, v| g.matmul(v[0], v[1]), vec![random(&[3, 4], -1.0, 1.0, &mut r), random(&[4, 2], -1.0, 1.0, &mut r)]);
    check("add_bias", |g, v| g.add_bias(v[0], v[1]), vec![random(&[3, 4], -1.0, 1.0, &mut r), random(&[4], -1.0, 1.0, &mut r)]);
    check(
        "add_channel_bias",
        |g, v| g.add_channel_bias(v[0], v[1]),
        vec![random(&[2, 3, 2, 2], -1.0, 1.0, &mut r), random(&[3], -1.0, 1.0, &mut r)],
    );
}

#[test]
fn elementwise_binary() {
    let mut r = rng();
    let a = random(&[3, 4], -1.0, 1.0, &mut r);
    let b = random(&[3, 4], -1.0, 1.0, &mut r);
    check("add", |g, v| g.add(v[0], v[1]), vec![a.clone(), b.clone()]);
    check("sub", |g, v| g.sub(v[0], v[1]), vec![a.clone(), b.clone()]);
    check("mul", |g, v| g.mul(v[0], v[1]), vec![a.clone(), b.clone()]);
    check("square", |g, v| g.square(v[0]), vec![a]);
}

#[test]
fn elementwise_unary() {
    let mut r = rng();
    let a = random(&[3, 4], -2.0, 2.0, &mut r);
    check("scale", |g, v| g.scale(v[0], -1.7), vec![a.clone()]);
    check("add_scalar", |g, v| g.add_scalar(v[0], 0.3), vec![a.clone()]);
    check("exp", |g, v| g.exp(v[0]), vec![a.clone()]);
    check("sigmoid", |g, v| g.sigmoid(v[0]), vec![a.clone()]);
    check("relu", |g, v| g.relu(v[0]), vec![a.clone()]);
    check("leaky_relu", |g, v| g.leaky_relu(v[0], 0.2), vec![a]);
    check("log", |g, v| g.log(v[0]), vec![random(&[3, 4], 0.2, 3.0, &mut r)]);
}

#[test]
fn shape_ops() {
    let mut r = rng();
    let a = random(&[3, 4], -1.0, 1.0, &mut r);
    check("reshape", |g, v| g.reshape(v[0], vec![2, 6]), vec![a.clone()]);
    check("transpose", |g, v| g.transpose(v[0]), vec![a.clone()]);
    check("narrow_cols", |g, v| g.narrow_cols(v[0], 1, 2), vec![a]);
}

#[test]
fn reductions() {
    let mut r = rng();
    let a = random(&[3, 4], -1.0, 1.0, &mut r);
    check("sum", |g, v| g.sum(v[0]), vec![a.clone()]);
    check("mean", |g, v| g.mean(v[0]), vec![a.clone()]);
    check("log_softmax", |g, v| g.log_softmax(v[0]), vec![a]);
    let c = random(&[2, 3, 4], -1.5, 1.5, &mut r);
    for axis in 0..3 {
        check("sum_axis", move |g, v| g.sum_axis(v[0], axis), vec![c.clone()]);
        check("logsumexp_axis", move |g, v| g.logsumexp_axis(v[0], axis), vec![c.clone()]);
    }
}

#[test]
fn fused_losses() {
    let mut r = rng();
    let logits = random(&[3, 4], -3.0, 3.0, &mut r);
    let targets = random(&[3, 4], 0.0, 1.0, &mut r);
    check_skip("bce_with_logits", |g, v| g.bce_with_logits(v[0], v[1]), vec![logits, targets], &[1]);
    let z = random(&[3, 4], -1.0, 1.0, &mut r);
    let mu = random(&[3, 4], -1.0, 1.0, &mut r);
    let lv = random(&[3, 4], -1.0, 1.0, &mut r);
    check("gaussian_pairwise", |g, v| g.gaussian_pairwise(v[0], v[1], v[2]), vec![z, mu, lv]);
}

#[test]
fn convolutions() {
    let mut r = rng();
    let geom = ConvGeometry::forward(2, 3, (4, 4), 2, 1, (6, 6)).unwrap();
    assert_eq!(geom.map_hw, (3, 3));
    let x = random(&[2, 2, 6, 6], -1.0, 1.0, &mut r);
    let w = random(&[3, 2, 4, 4], -1.0, 1.0, &mut r);
    check("conv2d", move |g, v| g.conv2d(v[0], v[1], geom), vec![x, w.clone()]);
    let m = random(&[2, 3, 3, 3], -1.0, 1.0, &mut r);
    check("conv_transpose2d", move |g, v| g.conv_transpose2d(v[0], v[1], geom), vec![m, w]);

    let odd = ConvGeometry::forward(1, 2, (3, 2), 2, 0, (5, 4)).unwrap();
    let x = random(&[1, 1, 5, 4], -1.0, 1.0, &mut r);
    let w = random(&[2, 1, 3, 2], -1.0, 1.0, &mut r);
    check("conv2d_rect", move |g, v| g.conv2d(v[0], v[1], odd), vec![x, w]);
}

#[test]
fn composite_through_shared_inputs() {
    // a node consumed twice must accumulate both contributions
    let mut r = rng();
    let a = random(&[3, 4], -1.0, 1.0, &mut r);
    let b = random(&[4, 3], -1.0, 1.0, &mut r);
    check(
        "composite",
        |g, v| {
            let p = g.matmul(v[0], v[1])?;
            let s = g.sigmoid(p)?;
            let t = g.mul(s, p)?;
            let l = g.log_softmax(t)?;
            g.add(l, p)
        },
        vec![a, b],
    );
}
