//! Layer stacks for encoders, decoders and the FactorVAE discriminator.

use dlab_tensor::init::glorot_uniform;
use dlab_tensor::{ConvGeometry, Element, Graph, ParamSet, Tensor, Var};
use rand::Rng;

use crate::data::ImageShape;
use crate::error::{Error, Result};
use crate::vae::config::Architecture;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu(f64),
}

#[derive(Clone, Debug, PartialEq)]
enum Layer {
    Dense { inputs: usize, outputs: usize },
    Conv(ConvGeometry),
    UpConv(ConvGeometry),
    /// Reshape everything after the batch axis.
    Reshape(Vec<usize>),
}

/// A feed-forward stack whose parameters live in a shared [`ParamSet`]
/// starting at `offset` (weight then bias for every layer).
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    layers: Vec<(Layer, Activation)>,
    offset: usize,
    inputs: usize,
    outputs: usize,
}

impl Network {
    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().filter(|(l, _)| !matches!(l, Layer::Reshape(_))).count() * 2
    }

    /// Appends freshly initialized parameters (Glorot weights, zero biases).
    fn init<R: Rng + ?Sized>(&mut self, prefix: &str, params: &mut ParamSet, rng: &mut R) {
        self.offset = params.len();
        let mut k = 0;
        for (layer, _) in &self.layers {
            let (w, b) = match layer {
                Layer::Dense { inputs, outputs } => (
                    glorot_uniform(vec![*inputs, *outputs], *inputs, *outputs, rng),
                    Tensor::zeros(vec![*outputs]),
                ),
                Layer::Conv(g) | Layer::UpConv(g) => {
                    let (kh, kw) = g.kernel;
                    let (fan_in, fan_out, bias) = if matches!(layer, Layer::Conv(_)) {
                        (g.image_channels * kh * kw, g.map_channels * kh * kw, g.map_channels)
                    } else {
                        (g.map_channels * kh * kw, g.image_channels * kh * kw, g.image_channels)
                    };
                    let shape = g.weight_shape().to_vec();
                    (glorot_uniform(shape, fan_in, fan_out, rng), Tensor::zeros(vec![bias]))
                }
                Layer::Reshape(_) => continue,
            };
            params.insert(format!("{prefix}.{k}.weight"), w);
            params.insert(format!("{prefix}.{k}.bias"), b);
            k += 1;
        }
    }

    /// Applies the stack to `x` of shape `[batch, inputs]` (or image-shaped
    /// for convolutional inputs); `vars` are the bound parameters.
    pub fn forward<T: Element>(&self, g: &mut Graph<T>, vars: &[Var], mut x: Var) -> Result<Var> {
        let mut p = self.offset;
        for (layer, act) in &self.layers {
            let batch = g.shape(x)[0];
            x = match layer {
                Layer::Dense { .. } => {
                    let h = g.matmul(x, vars[p])?;
                    g.add_bias(h, vars[p + 1])?
                }
                Layer::Conv(geom) => {
                    let h = g.conv2d(x, vars[p], *geom)?;
                    g.add_channel_bias(h, vars[p + 1])?
                }
                Layer::UpConv(geom) => {
                    let h = g.conv_transpose2d(x, vars[p], *geom)?;
                    g.add_channel_bias(h, vars[p + 1])?
                }
                Layer::Reshape(shape) => {
                    let mut full = vec![batch];
                    full.extend_from_slice(shape);
                    g.reshape(x, full)?
                }
            };
            if !matches!(layer, Layer::Reshape(_)) {
                p += 2;
            }
            x = match act {
                Activation::Identity => x,
                Activation::Relu => g.relu(x)?,
                Activation::LeakyRelu(s) => g.leaky_relu(x, T::lit(*s))?,
            };
        }
        Ok(x)
    }
}

struct Builder {
    layers: Vec<(Layer, Activation)>,
}

impl Builder {
    fn new() -> Self {
        Self { layers: Vec::new() }
    }

    fn dense(mut self, inputs: usize, outputs: usize, act: Activation) -> Self {
        self.layers.push((Layer::Dense { inputs, outputs }, act));
        self
    }

    fn push(mut self, layer: Layer, act: Activation) -> Self {
        self.layers.push((layer, act));
        self
    }

    fn finish(self, inputs: usize, outputs: usize) -> Network {
        Network {
            layers: self.layers,
            offset: 0,
            inputs,
            outputs,
        }
    }
}

/// Geometry of a 2x downsampling convolution with "same" padding.
fn down(cin: usize, cout: usize, k: usize, hw: usize) -> Result<ConvGeometry> {
    let pad = ConvGeometry::same_padding(k, 2)?;
    Ok(ConvGeometry::forward(cin, cout, (k, k), 2, pad, (hw, hw))?)
}

/// A transposed convolution doubling `hw`: the adjoint of `down` on the larger grid.
fn up(cin: usize, cout: usize, k: usize, hw: usize) -> Result<ConvGeometry> {
    down(cout, cin, k, hw * 2)
}

pub struct Backbone {
    pub encoder: Network,
    pub decoder: Option<Network>,
}

/// Builds and initializes encoder (and decoder) parameters into `params`.
pub fn build<R: Rng + ?Sized>(
    arch: Architecture,
    image: ImageShape,
    latent: usize,
    with_decoder: bool,
    params: &mut ParamSet,
    rng: &mut R,
) -> Result<Backbone> {
    use Activation::{Identity, Relu};
    let px = image.pixels();
    let (mut encoder, decoder) = match arch {
        Architecture::MlpSmall => (
            Builder::new()
                .dense(px, 256, Relu)
                .dense(256, 128, Relu)
                .dense(128, 2 * latent, Identity)
                .finish(px, 2 * latent),
            Builder::new()
                .dense(latent, 128, Relu)
                .dense(128, 256, Relu)
                .dense(256, px, Identity)
                .finish(latent, px),
        ),
        Architecture::Conv64 => {
            if image.height != 64 || image.width != 64 {
                return Err(Error::Config(format!(
                    "conv-64 needs 64x64 inputs, got {}x{}",
                    image.height, image.width
                )));
            }
            let c = image.channels;
            let encoder = Builder::new()
                .push(Layer::Reshape(vec![c, 64, 64]), Identity)
                .push(Layer::Conv(down(c, 32, 4, 64)?), Relu)
                .push(Layer::Conv(down(32, 32, 4, 32)?), Relu)
                .push(Layer::Conv(down(32, 64, 2, 16)?), Relu)
                .push(Layer::Conv(down(64, 64, 2, 8)?), Relu)
                .push(Layer::Reshape(vec![64 * 4 * 4]), Identity)
                .dense(1024, 256, Relu)
                .dense(256, 2 * latent, Identity)
                .finish(px, 2 * latent);
            let decoder = Builder::new()
                .dense(latent, 256, Relu)
                .dense(256, 1024, Relu)
                .push(Layer::Reshape(vec![64, 4, 4]), Identity)
                .push(Layer::UpConv(up(64, 64, 4, 4)?), Relu)
                .push(Layer::UpConv(up(64, 32, 4, 8)?), Relu)
                .push(Layer::UpConv(up(32, 32, 4, 16)?), Relu)
                .push(Layer::UpConv(up(32, c, 4, 32)?), Identity)
                .push(Layer::Reshape(vec![px]), Identity)
                .finish(latent, px);
            (encoder, decoder)
        }
    };
    encoder.init("encoder", params, rng);
    let decoder = with_decoder.then(|| {
        let mut d = decoder;
        d.init("decoder", params, rng);
        d
    });
    Ok(Backbone { encoder, decoder })
}

/// Six leaky-ReLU hidden layers of `width` and two output logits.
pub fn discriminator<R: Rng + ?Sized>(latent: usize, width: usize, params: &mut ParamSet, rng: &mut R) -> Network {
    let act = Activation::LeakyRelu(0.2);
    let mut b = Builder::new().dense(latent, width, act);
    for _ in 0..5 {
        b = b.dense(width, width, act);
    }
    let mut net = b.dense(width, 2, Activation::Identity).finish(latent, 2);
    net.init("discriminator", params, rng);
    net
}

/// Row-major `[n, H*W*C]` images to the channel-major layout the
/// convolutional stack consumes. Identity for one channel.
pub fn hwc_to_chw(data: &[f32], image: ImageShape) -> Vec<f32> {
    let c = image.channels;
    if c == 1 {
        return data.to_vec();
    }
    let hw = image.height * image.width;
    let mut out = vec![0.0; data.len()];
    for (src, dst) in data.chunks(hw * c).zip(out.chunks_mut(hw * c)) {
        for p in 0..hw {
            for ch in 0..c {
                dst[ch * hw + p] = src[p * c + ch];
            }
        }
    }
    out
}

pub fn chw_to_hwc(data: &[f32], image: ImageShape) -> Vec<f32> {
    let c = image.channels;
    if c == 1 {
        return data.to_vec();
    }
    let hw = image.height * image.width;
    let mut out = vec![0.0; data.len()];
    for (src, dst) in data.chunks(hw * c).zip(out.chunks_mut(hw * c)) {
        for p in 0..hw {
            for ch in 0..c {
                dst[p * c + ch] = src[ch * hw + p];
            }
        }
    }
    out
}
