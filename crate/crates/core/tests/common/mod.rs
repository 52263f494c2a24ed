//! Helpers shared by integration test targets.
#![allow(dead_code)]

use dlab_tensor::{ConvGeometry, Graph, Result, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform values in `[lo, hi)`, nudged away from zero (the relu kinks).
pub fn random(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let mut v: f64 = rng.random_range(lo..hi);
            if v.abs() < 0.05 {
                v += 0.1;
            }
            v
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn scalar_loss<F>(build: &F, inputs: &[Tensor<f64>]) -> Result<(Graph<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::default();
    let vars = inputs.iter().map(|t| g.param(t.clone())).collect::<Result<Vec<_>>>()?;
    let out = build(&mut g, &vars)?;
    let shape = g.shape(out).to_vec();
    if shape.iter().product::<usize>() == 1 {
        let s = g.sum(out)?;
        return Ok((g, vars, s));
    }
    let w = random(&shape, -1.0, 1.0, &mut rng(99));
    let wv = g.constant(w)?;
    let prod = g.mul(out, wv)?;
    let loss = g.sum(prod)?;
    Ok((g, vars, loss))
}

/// Largest relative error between reverse-mode and central-difference
/// gradients over every input not listed in `skip`.
pub fn max_rel_error<F>(build: F, inputs: &[Tensor<f64>], skip: &[usize]) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let (g, vars, loss) = scalar_loss(&build, inputs).unwrap();
    let grads = g.backward(loss).unwrap();
    let mut worst = 0f64;
    for (k, var) in vars.iter().enumerate() {
        if skip.contains(&k) {
            continue;
        }
        let analytic = grads.tensor(*var);
        for i in 0..inputs[k].numel() {
            let eval = |delta: f64| {
                let mut shifted = inputs.to_vec();
                shifted[k].data_mut()[i] += delta;
                let (g, _, l) = scalar_loss(&build, &shifted).unwrap();
                g.value(l).item()
            };
            let numeric = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
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

type Build = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;

/// Every differentiable primitive with small random inputs; the last field
/// lists inputs excluded from the check (targets).
pub fn primitive_cases() -> Vec<(&'static str, Build, Vec<Tensor<f64>>, Vec<usize>)> {
    let mut r = rng(7);
    let m34 = |r: &mut ChaCha8Rng| random(&[3, 4], -1.0, 1.0, r);
    let geom = ConvGeometry::forward(2, 3, (4, 4), 2, 1, (6, 6)).unwrap();
    let mut cases: Vec<(&'static str, Build, Vec<Tensor<f64>>, Vec<usize>)> = vec![
        ("matmul", Box::new(|g, v| g.matmul(v[0], v[1])), vec![m34(&mut r), random(&[4, 2], -1.0, 1.0, &mut r)], vec![]),
        ("add_bias", Box::new(|g, v| g.add_bias(v[0], v[1])), vec![m34(&mut r), random(&[4], -1.0, 1.0, &mut r)], vec![]),
        (
            "add_channel_bias",
            Box::new(|g, v| g.add_channel_bias(v[0], v[1])),
            vec![random(&[2, 3, 2, 2], -1.0, 1.0, &mut r), random(&[3], -1.0, 1.0, &mut r)],
            vec![],
        ),
        ("add", Box::new(|g, v| g.add(v[0], v[1])), vec![m34(&mut r), m34(&mut r)], vec![]),
        ("sub", Box::new(|g, v| g.sub(v[0], v[1])), vec![m34(&mut r), m34(&mut r)], vec![]),
        ("mul", Box::new(|g, v| g.mul(v[0], v[1])), vec![m34(&mut r), m34(&mut r)], vec![]),
        ("scale", Box::new(|g, v| g.scale(v[0], -1.7)), vec![m34(&mut r)], vec![]),
        ("add_scalar", Box::new(|g, v| g.add_scalar(v[0], 0.3)), vec![m34(&mut r)], vec![]),
        ("exp", Box::new(|g, v| g.exp(v[0])), vec![m34(&mut r)], vec![]),
        ("log", Box::new(|g, v| g.log(v[0])), vec![random(&[3, 4], 0.2, 3.0, &mut r)], vec![]),
        ("sigmoid", Box::new(|g, v| g.sigmoid(v[0])), vec![random(&[3, 4], -3.0, 3.0, &mut r)], vec![]),
        ("relu", Box::new(|g, v| g.relu(v[0])), vec![m34(&mut r)], vec![]),
        ("leaky_relu", Box::new(|g, v| g.leaky_relu(v[0], 0.2)), vec![m34(&mut r)], vec![]),
        ("square", Box::new(|g, v| g.square(v[0])), vec![m34(&mut r)], vec![]),
        ("reshape", Box::new(|g, v| g.reshape(v[0], vec![2, 6])), vec![m34(&mut r)], vec![]),
        ("transpose", Box::new(|g, v| g.transpose(v[0])), vec![m34(&mut r)], vec![]),
        ("narrow_cols", Box::new(|g, v| g.narrow_cols(v[0], 1, 2)), vec![m34(&mut r)], vec![]),
        ("sum", Box::new(|g, v| g.sum(v[0])), vec![m34(&mut r)], vec![]),
        ("mean", Box::new(|g, v| g.mean(v[0])), vec![m34(&mut r)], vec![]),
        ("log_softmax", Box::new(|g, v| g.log_softmax(v[0])), vec![m34(&mut r)], vec![]),
        (
            "bce_with_logits",
            Box::new(|g, v| g.bce_with_logits(v[0], v[1])),
            vec![random(&[3, 4], -3.0, 3.0, &mut r), random(&[3, 4], 0.0, 1.0, &mut r)],
            vec![1],
        ),
        (
            "gaussian_pairwise",
            Box::new(|g, v| g.gaussian_pairwise(v[0], v[1], v[2])),
            vec![m34(&mut r), m34(&mut r), m34(&mut r)],
            vec![],
        ),
        (
            "conv2d",
            Box::new(move |g, v| g.conv2d(v[0], v[1], geom)),
            vec![random(&[2, 2, 6, 6], -1.0, 1.0, &mut r), random(&[3, 2, 4, 4], -1.0, 1.0, &mut r)],
            vec![],
        ),
        (
            "conv_transpose2d",
            Box::new(move |g, v| g.conv_transpose2d(v[0], v[1], geom)),
            vec![random(&[2, 3, 3, 3], -1.0, 1.0, &mut r), random(&[3, 2, 4, 4], -1.0, 1.0, &mut r)],
            vec![],
        ),
    ];
    for axis in 0..3 {
        let c = random(&[2, 3, 4], -1.5, 1.5, &mut r);
        cases.push(("sum_axis", Box::new(move |g, v| g.sum_axis(v[0], axis)), vec![c.clone()], vec![]));
        cases.push(("logsumexp_axis", Box::new(move |g, v| g.logsumexp_axis(v[0], axis)), vec![c], vec![]));
    }
    cases
}

use dlab::vae::losses;

fn err(e: dlab::Error) -> dlab_tensor::TensorError {
    match e {
        dlab::Error::Tensor(t) => t,
        other => panic!("loss construction failed: {other}"),
    }
}

/// `R_s` on free means against fixed targets with one masked cell.
pub fn rs_case() -> (Build, Vec<Tensor<f64>>) {
    let mut r = rng(21);
    let targets = random(&[4, 3], 0.0, 1.0, &mut r);
    let mut mask = Tensor::full(vec![4, 3], 1.0);
    mask.data_mut()[4] = 0.0;
    let build: Build = Box::new(move |g, v| losses::supervised_rs(g, v[0], &targets, &mask).map_err(err));
    (build, vec![random(&[4, 5], -2.0, 2.0, &mut r)])
}

/// DIP-VAE-I penalty on means produced by a linear encoder.
pub fn dip_case() -> (Build, Vec<Tensor<f64>>) {
    let mut r = rng(22);
    let build: Build = Box::new(|g, v| {
        let mu = g.matmul(v[0], v[1])?;
        losses::dip_i_penalty(g, mu, 2.0, 20.0).map_err(err)
    });
    (build, vec![random(&[6, 5], -1.0, 1.0, &mut r), random(&[5, 3], -1.0, 1.0, &mut r)])
}

/// The full beta-VAE objective (`-recon + beta * KL`) of a one-layer
/// encoder and decoder on binary images, with frozen reparameterization noise.
pub fn beta_vae_case(beta: f64) -> (Build, Vec<Tensor<f64>>) {
    let mut r = rng(23);
    let (n, px, latent) = (4, 6, 2);
    let images = Tensor::new(vec![n, px], (0..n * px).map(|_| if r.random_bool(0.5) { 1.0 } else { 0.0 }).collect()).unwrap();
    let eps = random(&[n, latent], -1.5, 1.5, &mut r);
    let build: Build = Box::new(move |g, v| {
        let x = g.constant(images.clone())?;
        let e = g.constant(eps.clone())?;
        let h = g.matmul(x, v[0])?;
        let h = g.add_bias(h, v[1])?;
        let mu = g.narrow_cols(h, 0, latent)?;
        let logvar = g.narrow_cols(h, latent, latent)?;
        let z = losses::reparameterize(g, mu, logvar, e).map_err(err)?;
        let logits = g.matmul(z, v[2])?;
        let logits = g.add_bias(logits, v[3])?;
        let recon = losses::bernoulli_log_likelihood(g, logits, x).map_err(err)?;
        let kl = losses::kl_standard_normal(g, mu, logvar).map_err(err)?;
        let weighted = g.scale(kl, beta)?;
        g.sub(weighted, recon)
    });
    let inputs = vec![
        random(&[px, 2 * latent], -0.5, 0.5, &mut r),
        random(&[2 * latent], -0.5, 0.5, &mut r),
        random(&[latent, px], -0.5, 0.5, &mut r),
        random(&[px], -0.5, 0.5, &mut r),
    ];
    (build, inputs)
}

/// The minibatch-weighted-sampling total correlation in all three inputs.
pub fn tc_case() -> (Build, Vec<Tensor<f64>>) {
    let mut r = rng(24);
    let build: Build = Box::new(|g, v| losses::total_correlation(g, v[0], v[1], v[2], 100.0).map_err(err));
    (
        build,
        vec![
            random(&[5, 3], -1.0, 1.0, &mut r),
            random(&[5, 3], -1.0, 1.0, &mut r),
            random(&[5, 3], -1.0, 0.5, &mut r),
        ],
    )
}
