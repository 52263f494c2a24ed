//! The optimization loop shared by all methods.
//!
//! Each step draws a fresh unlabeled batch from the generative model for the
//! ELBO and unsupervised regularizer; semi-supervised runs add a labeled
//! batch drawn with replacement from the training labels.

use std::time::Instant;

use dlab_tensor::{Adam, AdamConfig, Element, Graph, ParamSet, Tensor, TensorError, Var};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::GroundTruthModel;
use crate::error::{Error, Result};
use crate::labeling::{normalize_targets, LabeledSet};
use crate::seed::{self, SeedMixer};
use crate::vae::config::Method;
use crate::vae::losses;
use crate::vae::model::{Curves, TrainedModel};
use crate::vae::nets::Network;
use crate::vae::MethodConfig;

/// Labeled images and normalized targets, ready to be batched.
struct Supervision {
    images: Vec<f32>,
    targets: Vec<f32>,
    mask: Vec<f32>,
    rows: usize,
    factors: usize,
}

impl Supervision {
    fn new(model: &GroundTruthModel, set: &LabeledSet) -> Result<Self> {
        let px = model.image_shape().pixels();
        let mut images = vec![0.0; set.len() * px];
        for (e, img) in set.entries.iter().zip(images.chunks_mut(px)) {
            img.copy_from_slice(&model.render_index(e.image_ref)?);
        }
        let t = normalize_targets(set);
        Ok(Self {
            images,
            targets: t.values.iter().copied().collect(),
            mask: t.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
            rows: set.len(),
            factors: set.num_factors(),
        })
    }

    fn batch<R: Rng + ?Sized>(&self, size: usize, px: usize, rng: &mut R) -> (Vec<f32>, Tensor, Tensor) {
        let d = self.factors;
        let mut images = Vec::with_capacity(size * px);
        let mut targets = Vec::with_capacity(size * d);
        let mut mask = Vec::with_capacity(size * d);
        for _ in 0..size {
            let i = rng.random_range(0..self.rows);
            images.extend_from_slice(&self.images[i * px..(i + 1) * px]);
            targets.extend_from_slice(&self.targets[i * d..(i + 1) * d]);
            mask.extend_from_slice(&self.mask[i * d..(i + 1) * d]);
        }
        (
            images,
            Tensor::new(vec![size, d], targets).expect("finite targets"),
            Tensor::new(vec![size, d], mask).expect("finite mask"),
        )
    }
}

/// Components recorded as they are computed, so an abort can report them.
#[derive(Default)]
struct StepLog(Vec<(&'static str, f64)>);

impl StepLog {
    fn record<T: Element>(&mut self, name: &'static str, g: &Graph<T>, v: Var) {
        self.0.push((name, g.value(v).item().as_f64()));
    }

    fn describe(&self) -> String {
        if self.0.is_empty() {
            return "no component evaluated".into();
        }
        self.0.iter().map(|(n, v)| format!("{n}={v}")).collect::<Vec<_>>().join(", ")
    }
}

fn split_posterior<T: Element>(g: &mut Graph<T>, h: Var, latent: usize) -> Result<(Var, Var)> {
    Ok((g.narrow_cols(h, 0, latent)?, g.narrow_cols(h, latent, latent)?))
}

fn standard_normal<R: Rng + ?Sized>(shape: Vec<usize>, rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
    Tensor::new(shape, data).expect("finite noise")
}

/// Trains `config` on `data`. `labeled` is the training split of the label
/// budget; it is required when `gamma_sup > 0` and ignored otherwise.
pub fn train(config: &MethodConfig, data: &GroundTruthModel, labeled: Option<&LabeledSet>) -> Result<TrainedModel> {
    let mut model = TrainedModel::initialize(config, data.image_shape())?;
    let supervision = if config.is_semi_supervised() {
        let set = labeled.ok_or_else(|| {
            Error::Config(format!("gamma_sup = {} requires a labeled set", config.gamma_sup))
        })?;
        if set.num_factors() > config.latent_dim {
            return Err(Error::Config(format!(
                "{} labeled factors exceed latent dimension {}",
                set.num_factors(),
                config.latent_dim
            )));
        }
        if set.is_empty() {
            return Err(Error::Config("labeled set is empty".into()));
        }
        Some(Supervision::new(data, set)?)
    } else {
        None
    };

    let started = Instant::now();
    let mix = SeedMixer::new(config.seed);
    let mut batch_rng = seed::rng(mix.tag("unlabeled").finish());
    let mut eps_rng = seed::rng(mix.tag("eps").finish());
    let mut label_rng = seed::rng(mix.tag("labeled").finish());
    let mut disc_rng = seed::rng(mix.tag("discriminator").finish());
    let adam_config = AdamConfig {
        lr: config.learning_rate as f32,
        ..AdamConfig::default()
    };
    let mut adam = Adam::new(adam_config, &model.params);
    let mut disc_adam = model
        .discriminator
        .as_ref()
        .map(|(_, dp)| Adam::new(AdamConfig::discriminator(), dp));
    let mut curves = Curves::new();
    let latent = config.latent_dim;
    let px = data.image_shape().pixels();
    let dataset_size = data.space().num_configs() as f64;

    for step in 0..config.steps {
        let mut log = StepLog::default();
        let mut g = Graph::new();
        let vars = model.params.bind(&mut g)?;
        let mut loss: Option<Var> = None;
        let mut real_latents: Option<Vec<f32>> = None;

        let outcome: Result<()> = (|| {
            if let Some(decoder) = &model.decoder {
                let batch = data.sample(config.batch_size, &mut batch_rng)?;
                let x = g.constant(model.network_input(
                    batch.images.as_slice().expect("standard layout"),
                    config.batch_size,
                )?)?;
                let h = model.encoder.forward(&mut g, &vars, x)?;
                let (mu, logvar) = split_posterior(&mut g, h, latent)?;
                let eps = g.constant(standard_normal(vec![config.batch_size, latent], &mut eps_rng))?;
                let z = losses::reparameterize(&mut g, mu, logvar, eps)?;
                let logits = decoder.forward(&mut g, &vars, z)?;
                let recon = losses::bernoulli_log_likelihood(&mut g, logits, x)?;
                log.record("reconstruction", &g, recon);
                let kl = losses::kl_standard_normal(&mut g, mu, logvar)?;
                log.record("kl", &g, kl);
                let neg_elbo = g.sub(kl, recon)?;
                let total = match config.method {
                    Method::BetaVae => {
                        let beta = config.beta.expect("validated");
                        let extra = g.scale(kl, beta as f32 - 1.0)?;
                        g.add(neg_elbo, extra)?
                    }
                    Method::BetaTcvae => {
                        let beta = config.beta.expect("validated");
                        let tc = losses::total_correlation(&mut g, z, mu, logvar, dataset_size)?;
                        log.record("tc", &g, tc);
                        let extra = g.scale(tc, beta as f32 - 1.0)?;
                        g.add(neg_elbo, extra)?
                    }
                    Method::FactorVae => {
                        let (disc, dp) = model.discriminator.as_ref().expect("factor-vae has a discriminator");
                        let dvars = dp.bind_frozen(&mut g)?;
                        let logits = disc.forward(&mut g, &dvars, z)?;
                        let tc = losses::density_ratio_tc(&mut g, logits)?;
                        log.record("tc", &g, tc);
                        real_latents = Some(g.value(z).data().to_vec());
                        let extra = g.scale(tc, config.gamma.expect("validated") as f32)?;
                        g.add(neg_elbo, extra)?
                    }
                    Method::DipVaeI => {
                        let pen = losses::dip_i_penalty(
                            &mut g,
                            mu,
                            config.lambda_od.expect("validated"),
                            config.lambda_d.expect("validated"),
                        )?;
                        log.record("dip", &g, pen);
                        g.add(neg_elbo, pen)?
                    }
                    Method::SupervisedOnly => unreachable!("supervised-only has no decoder"),
                };
                loss = Some(total);
            }
            if let Some(sup) = &supervision {
                let size = config.batch_size.min(sup.rows);
                let (images, targets, mask) = sup.batch(size, px, &mut label_rng);
                let xl = g.constant(model.network_input(&images, size)?)?;
                let h = model.encoder.forward(&mut g, &vars, xl)?;
                let mu = g.narrow_cols(h, 0, latent)?;
                let rs = losses::supervised_rs(&mut g, mu, &targets, &mask)?;
                log.record("rs", &g, rs);
                let weighted = g.scale(rs, config.gamma_sup as f32)?;
                loss = Some(match loss {
                    Some(l) => g.add(l, weighted)?,
                    None => weighted,
                });
            }
            Ok(())
        })();
        let abort = |e: Error, log: &StepLog| match e {
            Error::Tensor(TensorError::NonFinite { op }) => Error::NonFiniteLoss {
                step,
                components: format!("{}; non-finite output of {op}", log.describe()),
            },
            other => other,
        };
        outcome.map_err(|e| abort(e, &log))?;
        let loss = loss.expect("every method has a loss");
        log.record("loss", &g, loss);
        let grads = g.backward(loss).map_err(|e| abort(e.into(), &log))?;
        let grads: Vec<Tensor> = vars.iter().map(|&v| grads.tensor(v)).collect();
        adam.step(&mut model.params, &grads)?;

        if let Some(real) = real_latents {
            let fresh = data.sample(config.batch_size, &mut disc_rng)?;
            let permuted = sample_permuted(&model, &fresh.images, &mut disc_rng)?;
            let (disc, dp) = model.discriminator.as_mut().expect("factor-vae has a discriminator");
            let dadam = disc_adam.as_mut().expect("factor-vae has a discriminator optimizer");
            let dl = discriminator_step(disc, dp, dadam, real, permuted, config.batch_size, latent)
                .map_err(|e| abort(e, &log))?;
            log.0.push(("discriminator", dl));
        }

        for (name, v) in &log.0 {
            curves.entry((*name).to_string()).or_default().push(*v as f32);
        }
    }
    model.curves = curves;
    model.train_seconds = started.elapsed().as_secs_f64();
    Ok(model)
}

/// Posterior samples of a fresh batch, column-shuffled.
fn sample_permuted<R: Rng + ?Sized>(
    model: &TrainedModel,
    images: &ndarray::Array2<f32>,
    rng: &mut R,
) -> Result<Vec<f32>> {
    let latent = model.latent_dim();
    let rows = images.nrows();
    let mut g = Graph::new();
    let vars = model.params.bind_frozen(&mut g)?;
    let x = g.constant(model.network_input(images.as_slice().expect("standard layout"), rows)?)?;
    let h = model.encoder.forward(&mut g, &vars, x)?;
    let (mu, logvar) = split_posterior(&mut g, h, latent)?;
    let eps = g.constant(standard_normal(vec![rows, latent], rng))?;
    let z = losses::reparameterize(&mut g, mu, logvar, eps)?;
    Ok(losses::permute_dims(g.value(z).data(), latent, rng))
}

/// One discriminator update; returns its loss before the update.
pub fn discriminator_step(
    disc: &Network,
    params: &mut ParamSet,
    adam: &mut Adam,
    real: Vec<f32>,
    permuted: Vec<f32>,
    batch: usize,
    latent: usize,
) -> Result<f64> {
    let mut g = Graph::new();
    let vars = params.bind(&mut g)?;
    let real = g.constant(Tensor::new(vec![real.len() / latent, latent], real)?)?;
    let fake = g.constant(Tensor::new(vec![batch, latent], permuted)?)?;
    let lr = disc.forward(&mut g, &vars, real)?;
    let lf = disc.forward(&mut g, &vars, fake)?;
    let loss = losses::discriminator_loss(&mut g, lr, lf)?;
    let grads = g.backward(loss)?;
    let grads: Vec<Tensor> = vars.iter().map(|&v| grads.tensor(v)).collect();
    adam.step(params, &grads)?;
    Ok(g.value(loss).item() as f64)
}
