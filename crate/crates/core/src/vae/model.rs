use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use dlab_tensor::{checkpoint, Graph, ParamSet, Tensor};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{GroundTruthModel, ImageShape, ObservationBatch};
use crate::error::{Error, Result};
use crate::labeling::{normalize_targets, LabeledSet};
use crate::representation::Representation;
use crate::seed;
use crate::vae::config::MethodConfig;
use crate::vae::nets::{self, chw_to_hwc, hwc_to_chw, Network};

/// Per-step loss components, one column per component, every column as
/// long as the number of steps run.
pub type Curves = BTreeMap<String, Vec<f32>>;

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub config: MethodConfig,
    pub image: ImageShape,
    pub params: ParamSet,
    pub encoder: Network,
    pub decoder: Option<Network>,
    pub discriminator: Option<(Network, ParamSet)>,
    pub curves: Curves,
    pub train_seconds: f64,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    config: MethodConfig,
    image: [usize; 3],
    train_seconds: f64,
    curves: Curves,
}

const INFERENCE_CHUNK: usize = 500;

impl TrainedModel {
    /// Fresh, untrained parameters for `config` on images of `image` extents.
    pub fn initialize(config: &MethodConfig, image: ImageShape) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(seed::SeedMixer::new(config.seed).tag("init").finish());
        let mut params = ParamSet::new();
        let backbone = nets::build(
            config.architecture,
            image,
            config.latent_dim,
            config.has_decoder(),
            &mut params,
            &mut rng,
        )?;
        let discriminator = config.discriminator_width.map(|w| {
            let mut dp = ParamSet::new();
            let net = nets::discriminator(config.latent_dim, w, &mut dp, &mut rng);
            (net, dp)
        });
        Ok(Self {
            config: config.clone(),
            image,
            params,
            encoder: backbone.encoder,
            decoder: backbone.decoder,
            discriminator,
            curves: Curves::new(),
            train_seconds: 0.0,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    fn check_images(&self, images: &Array2<f32>) -> Result<()> {
        if images.ncols() != self.image.pixels() {
            return Err(Error::Config(format!(
                "images have {} values, model expects {}x{}x{}",
                images.ncols(),
                self.image.height,
                self.image.width,
                self.image.channels
            )));
        }
        Ok(())
    }

    /// Row-major images in the layout the encoder consumes.
    pub fn network_input(&self, images: &[f32], rows: usize) -> Result<Tensor> {
        Ok(Tensor::new(
            vec![rows, self.image.pixels()],
            hwc_to_chw(images, self.image),
        )?)
    }

    /// Posterior means and log-variances, `[n, latent]` each.
    pub fn encode(&self, images: &Array2<f32>) -> Result<(Array2<f32>, Array2<f32>)> {
        self.check_images(images)?;
        let n = images.nrows();
        let l = self.latent_dim();
        let mut mu = Array2::zeros((n, l));
        let mut logvar = Array2::zeros((n, l));
        let images = images.as_standard_layout();
        let flat = images.as_slice().expect("standard layout");
        let px = self.image.pixels();
        let mut start = 0;
        while start < n {
            let end = (start + INFERENCE_CHUNK).min(n);
            let mut g = Graph::new();
            let vars = self.params.bind_frozen(&mut g)?;
            let x = g.constant(self.network_input(&flat[start * px..end * px], end - start)?)?;
            let h = self.encoder.forward(&mut g, &vars, x)?;
            let out = g.value(h).data();
            for (r, row) in out.chunks(2 * l).enumerate() {
                for j in 0..l {
                    mu[[start + r, j]] = row[j];
                    logvar[[start + r, j]] = row[l + j];
                }
            }
            start = end;
        }
        Ok((mu, logvar))
    }

    /// `r(x)`: the posterior mean.
    pub fn represent_images(&self, images: &Array2<f32>) -> Result<Array2<f32>> {
        Ok(self.encode(images)?.0)
    }

    /// `R_s` of the posterior means on a labeled set: per-example sum of
    /// masked binary cross-entropies against normalized targets, averaged.
    pub fn supervised_loss(&self, data: &GroundTruthModel, set: &LabeledSet) -> Result<f64> {
        if set.is_empty() || set.num_factors() > self.latent_dim() {
            return Err(Error::Labels(format!(
                "cannot score {} labeled factors over {} latent dims",
                set.num_factors(),
                self.latent_dim()
            )));
        }
        let px = self.image.pixels();
        let mut images = Array2::zeros((set.len(), px));
        for (e, mut row) in set.entries.iter().zip(images.rows_mut()) {
            row.assign(&ndarray::ArrayView1::from(&data.render_index(e.image_ref)?));
        }
        let mu = self.represent_images(&images)?;
        let t = normalize_targets(set);
        let mut total = 0.0;
        for ((i, k), &z) in t.values.indexed_iter() {
            if t.mask[[i, k]] {
                let x = f64::from(mu[[i, k]]);
                total += x.max(0.0) - x * f64::from(z) + (-x.abs()).exp().ln_1p();
            }
        }
        Ok(total / set.len() as f64)
    }

    /// Bernoulli means of the decoder at latent codes `z` (`[n, latent]`),
    /// as row-major images.
    pub fn decode(&self, z: &Array2<f32>) -> Result<Array2<f32>> {
        let decoder = self
            .decoder
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{} models have no decoder", self.config.method)))?;
        if z.ncols() != self.latent_dim() {
            return Err(Error::Config(format!(
                "codes have {} dims, model has {}",
                z.ncols(),
                self.latent_dim()
            )));
        }
        let z = z.as_standard_layout();
        let mut g = Graph::new();
        let vars = self.params.bind_frozen(&mut g)?;
        let zv = g.constant(Tensor::new(
            vec![z.nrows(), z.ncols()],
            z.as_slice().expect("standard layout").to_vec(),
        )?)?;
        let logits = decoder.forward(&mut g, &vars, zv)?;
        let probs = g.sigmoid(logits)?;
        let data = chw_to_hwc(g.value(probs).data(), self.image);
        Ok(Array2::from_shape_vec((z.nrows(), self.image.pixels()), data).expect("decoder width"))
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        checkpoint::save(&self.params, dir.join("params.dlab"))?;
        if let Some((_, dp)) = &self.discriminator {
            checkpoint::save(dp, dir.join("discriminator.dlab"))?;
        }
        let sidecar = Sidecar {
            config: self.config.clone(),
            image: [self.image.height, self.image.width, self.image.channels],
            train_seconds: self.train_seconds,
            curves: self.curves.clone(),
        };
        // the sidecar is written last so its presence marks a complete save
        fs::write(dir.join("model.json"), serde_json::to_string(&sidecar)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let sidecar: Sidecar = serde_json::from_str(&fs::read_to_string(dir.join("model.json"))?)?;
        let [height, width, channels] = sidecar.image;
        let image = ImageShape {
            height,
            width,
            channels,
        };
        let mut model = Self::initialize(&sidecar.config, image)?;
        model.params.assign(&checkpoint::load(dir.join("params.dlab"))?)?;
        if let Some((_, dp)) = &mut model.discriminator {
            dp.assign(&checkpoint::load(dir.join("discriminator.dlab"))?)?;
        }
        model.curves = sidecar.curves;
        model.train_seconds = sidecar.train_seconds;
        Ok(model)
    }

    pub fn is_saved(dir: impl AsRef<Path>) -> bool {
        let dir = dir.as_ref();
        dir.join("model.json").is_file() && dir.join("params.dlab").is_file()
    }
}

impl Representation for TrainedModel {
    fn represent(&self, batch: &ObservationBatch) -> Result<Array2<f64>> {
        Ok(self.represent_images(&batch.images)?.mapv(|v| v as f64))
    }
}
