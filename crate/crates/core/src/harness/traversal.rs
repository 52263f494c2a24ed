//! Latent traversal grids: row `s` holds the decoded images for the `s`-th
//! value of the traversed coordinate, column `j` traverses latent dim `j`.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use crate::data::ImageShape;
use crate::error::{Error, Result};
use crate::vae::TrainedModel;

#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Row-major, channels interleaved, values in `[0, 1]`.
    pub pixels: Vec<f32>,
}

impl ImageGrid {
    pub fn tile(&self, row: usize, col: usize, tile: ImageShape) -> Vec<f32> {
        let mut out = Vec::with_capacity(tile.pixels());
        for y in 0..tile.height {
            let start = ((row * tile.height + y) * self.width + col * tile.width) * self.channels;
            out.extend_from_slice(&self.pixels[start..start + tile.width * self.channels]);
        }
        out
    }

    /// Binary PGM for one channel, PPM for three.
    pub fn write_pnm(&self, path: impl AsRef<Path>) -> Result<()> {
        let magic = match self.channels {
            1 => "P5",
            3 => "P6",
            c => return Err(Error::Config(format!("cannot write a {c}-channel image as PGM/PPM"))),
        };
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        write!(out, "{magic}\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.pixels.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        out.write_all(&bytes)?;
        out.flush()?;
        Ok(())
    }
}

pub fn equispaced(lo: f32, hi: f32, steps: usize) -> Vec<f32> {
    match steps {
        0 => vec![],
        1 => vec![0.5 * (lo + hi)],
        _ => (0..steps).map(|s| lo + (hi - lo) * s as f32 / (steps - 1) as f32).collect(),
    }
}

/// Encodes `base` to its posterior mean, then decodes `steps` equispaced
/// values in `[lo, hi]` of each latent coordinate with the rest held fixed.
pub fn traversal_grid(model: &TrainedModel, base: &[f32], lo: f32, hi: f32, steps: usize) -> Result<ImageGrid> {
    let shape = model.image;
    if base.len() != shape.pixels() {
        return Err(Error::Config(format!(
            "base image has {} values, model expects {}",
            base.len(),
            shape.pixels()
        )));
    }
    let dims = model.latent_dim();
    let mu = model.represent_images(&Array2::from_shape_vec((1, base.len()), base.to_vec()).expect("one row"))?;
    let values = equispaced(lo, hi, steps);
    let mut codes = Array2::zeros((steps * dims, dims));
    for (s, &v) in values.iter().enumerate() {
        for j in 0..dims {
            let mut row = codes.row_mut(s * dims + j);
            row.assign(&mu.row(0));
            row[j] = v;
        }
    }
    let images = model.decode(&codes)?;
    let (h, w, c) = (shape.height, shape.width, shape.channels);
    let width = dims * w;
    let mut pixels = vec![0.0; steps * h * width * c];
    for s in 0..steps {
        for j in 0..dims {
            let img = images.row(s * dims + j);
            for y in 0..h {
                let dst = ((s * h + y) * width + j * w) * c;
                let src = y * w * c;
                for (d, v) in pixels[dst..dst + w * c].iter_mut().zip(img.iter().skip(src)) {
                    *d = *v;
                }
            }
        }
    }
    Ok(ImageGrid {
        height: steps * h,
        width,
        channels: c,
        pixels,
    })
}
