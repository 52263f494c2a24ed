//! Loss components, written once over any [`Element`] so the same code
//! trains in `f32` and is finite-difference checked in `f64`.
//!
//! All batch reductions are means over the batch axis.

use dlab_tensor::{Element, Graph, Tensor, Var};

use crate::error::{Error, Result};

/// `mu + exp(logvar / 2) * eps` with `eps` supplied as a constant.
pub fn reparameterize<T: Element>(g: &mut Graph<T>, mu: Var, logvar: Var, eps: Var) -> Result<Var> {
    let half = g.scale(logvar, T::lit(0.5))?;
    let sigma = g.exp(half)?;
    let noise = g.mul(sigma, eps)?;
    Ok(g.add(mu, noise)?)
}

/// `KL(N(mu, exp(logvar)) || N(0, I))` summed over latent dims, batch mean.
pub fn kl_standard_normal<T: Element>(g: &mut Graph<T>, mu: Var, logvar: Var) -> Result<Var> {
    let batch = g.shape(mu)[0];
    let mu2 = g.square(mu)?;
    let var = g.exp(logvar)?;
    let a = g.add(mu2, var)?;
    let b = g.sub(a, logvar)?;
    let c = g.add_scalar(b, -T::one())?;
    let s = g.sum(c)?;
    Ok(g.scale(s, T::lit(0.5 / batch as f64))?)
}

/// Bernoulli log-likelihood of `targets` under decoder `logits`, summed over
/// pixels, batch mean.
pub fn bernoulli_log_likelihood<T: Element>(g: &mut Graph<T>, logits: Var, targets: Var) -> Result<Var> {
    let batch = g.shape(logits)[0];
    let bce = g.bce_with_logits(logits, targets)?;
    let s = g.sum(bce)?;
    Ok(g.scale(s, T::lit(-1.0 / batch as f64))?)
}

/// Minibatch-weighted-sampling total correlation of the aggregated
/// posterior, evaluated at samples `z` with batch posteriors `(mu, logvar)`:
/// `mean_i [log q(z_i) - sum_d log q(z_id)]`, each density estimated by a
/// log-sum-exp over the batch minus `log(batch * dataset_size)`.
pub fn total_correlation<T: Element>(
    g: &mut Graph<T>,
    z: Var,
    mu: Var,
    logvar: Var,
    dataset_size: f64,
) -> Result<Var> {
    let (batch, dims) = (g.shape(z)[0], g.shape(z)[1]);
    if batch < 2 {
        return Err(Error::Config("total correlation needs a batch of at least 2".into()));
    }
    let pairwise = g.gaussian_pairwise(z, mu, logvar)?;
    let joint_terms = g.sum_axis(pairwise, 2)?;
    let joint = g.logsumexp_axis(joint_terms, 1)?;
    let marginals = g.logsumexp_axis(pairwise, 1)?;
    let product = g.sum_axis(marginals, 1)?;
    let diff = g.sub(joint, product)?;
    let mean = g.mean(diff)?;
    let norm = (batch as f64 * dataset_size).ln();
    Ok(g.add_scalar(mean, T::lit((dims as f64 - 1.0) * norm))?)
}

/// Plug-in covariance of the rows of `x` (`[B, D]` -> `[D, D]`).
pub fn covariance<T: Element>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let batch = g.shape(x)[0];
    let col_sum = g.sum_axis(x, 0)?;
    let neg_mean = g.scale(col_sum, T::lit(-1.0 / batch as f64))?;
    let centered = g.add_bias(x, neg_mean)?;
    let ct = g.transpose(centered)?;
    let outer = g.matmul(ct, centered)?;
    Ok(g.scale(outer, T::lit(1.0 / batch as f64))?)
}

/// `lambda_od * sum_{i != j} C_ij^2 + lambda_d * sum_i (C_ii - 1)^2` for the
/// covariance `C` of the encoder means.
pub fn dip_i_penalty<T: Element>(g: &mut Graph<T>, mu: Var, lambda_od: f64, lambda_d: f64) -> Result<Var> {
    let batch = g.shape(mu)[0];
    if batch < 2 {
        return Err(Error::Config("DIP-VAE-I needs a batch of at least 2".into()));
    }
    let dims = g.shape(mu)[1];
    let cov = covariance(g, mu)?;
    let eye: Vec<T> = (0..dims * dims)
        .map(|i| if i / dims == i % dims { T::one() } else { T::zero() })
        .collect();
    let off: Vec<T> = eye.iter().map(|&e| T::one() - e).collect();
    let eye = g.constant(Tensor::new(vec![dims, dims], eye)?)?;
    let off = g.constant(Tensor::new(vec![dims, dims], off)?)?;
    let off_entries = g.mul(cov, off)?;
    let off_sq = g.square(off_entries)?;
    let off_sum = g.sum(off_sq)?;
    let diag_entries = g.mul(cov, eye)?;
    let diag_dev = g.sub(diag_entries, eye)?;
    let diag_sq = g.square(diag_dev)?;
    let diag_sum = g.sum(diag_sq)?;
    let a = g.scale(off_sum, T::lit(lambda_od))?;
    let b = g.scale(diag_sum, T::lit(lambda_d))?;
    Ok(g.add(a, b)?)
}

/// Supervised regularizer: BCE between `sigmoid(mu[:, k])` and normalized
/// target `k` for each observed factor, summed over factors and averaged
/// over entries. `targets` and `mask` are `[n, d]` with `d <= latent dim`;
/// masked cells contribute nothing.
pub fn supervised_rs<T: Element>(g: &mut Graph<T>, mu: Var, targets: &Tensor<T>, mask: &Tensor<T>) -> Result<Var> {
    let (n, d) = (targets.shape()[0], targets.shape()[1]);
    if g.shape(mu)[0] != n || g.shape(mu)[1] < d || mask.shape() != targets.shape() {
        return Err(Error::Config(format!(
            "supervised targets {:?} do not fit means {:?}",
            targets.shape(),
            g.shape(mu)
        )));
    }
    let logits = g.narrow_cols(mu, 0, d)?;
    let t = g.constant(targets.clone())?;
    let m = g.constant(mask.clone())?;
    let bce = g.bce_with_logits(logits, t)?;
    let masked = g.mul(bce, m)?;
    let s = g.sum(masked)?;
    Ok(g.scale(s, T::lit(1.0 / n as f64))?)
}

/// Density-ratio total correlation estimate `mean(logit_0 - logit_1)` from
/// discriminator logits `[B, 2]` on real latents.
pub fn density_ratio_tc<T: Element>(g: &mut Graph<T>, logits: Var) -> Result<Var> {
    let real = g.narrow_cols(logits, 0, 1)?;
    let fake = g.narrow_cols(logits, 1, 1)?;
    let diff = g.sub(real, fake)?;
    Ok(g.mean(diff)?)
}

/// Cross-entropy of a discriminator labelling `real` logits class 0 and
/// `permuted` logits class 1, averaged over both halves.
pub fn discriminator_loss<T: Element>(g: &mut Graph<T>, real: Var, permuted: Var) -> Result<Var> {
    let lr = g.log_softmax(real)?;
    let lp = g.log_softmax(permuted)?;
    let r0 = g.narrow_cols(lr, 0, 1)?;
    let p1 = g.narrow_cols(lp, 1, 1)?;
    let a = g.mean(r0)?;
    let b = g.mean(p1)?;
    let s = g.add(a, b)?;
    Ok(g.scale(s, T::lit(-0.5))?)
}

/// Shuffles every column of a row-major `[B, D]` matrix independently.
pub fn permute_dims<R: rand::Rng + ?Sized>(data: &[f32], dims: usize, rng: &mut R) -> Vec<f32> {
    use rand::seq::SliceRandom;
    let batch = data.len() / dims;
    let mut out = data.to_vec();
    let mut order: Vec<usize> = (0..batch).collect();
    for d in 0..dims {
        order.shuffle(rng);
        for (i, &src) in order.iter().enumerate() {
            out[i * dims + d] = data[src * dims + d];
        }
    }
    out
}
