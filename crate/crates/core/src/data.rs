//! Ground-truth generative models: a discrete factor space plus a
//! deterministic renderer from factor configurations to images.
//!
//! The built-in `mini-shapes` model draws one anti-aliased grayscale sprite
//! (square, ellipse or triangle) controlled by scale, orientation and 2-D
//! position. Externally rendered data sets can be loaded from a factor-table
//! file, whose renderer is a lookup by flat configuration index.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1};
use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;

/// Names and cardinalities of the discrete factors of variation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FactorSpace {
    names: Vec<String>,
    cardinalities: Vec<usize>,
}

impl FactorSpace {
    pub fn new(names: Vec<String>, cardinalities: Vec<usize>) -> Result<Self> {
        if names.len() != cardinalities.len() {
            return Err(Error::FactorSpace(format!(
                "{} names for {} cardinalities",
                names.len(),
                cardinalities.len()
            )));
        }
        if cardinalities.len() < 2 {
            return Err(Error::FactorSpace("need at least two factors".into()));
        }
        if let Some(k) = cardinalities.iter().position(|&c| c == 0) {
            return Err(Error::FactorSpace(format!("factor {k} has cardinality 0")));
        }
        cardinalities
            .iter()
            .try_fold(1u64, |acc, &c| acc.checked_mul(c as u64))
            .ok_or_else(|| Error::FactorSpace("configuration count overflows 64 bits".into()))?;
        Ok(Self { names, cardinalities })
    }

    pub fn num_factors(&self) -> usize {
        self.cardinalities.len()
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cardinalities
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn num_configs(&self) -> u64 {
        self.cardinalities.iter().map(|&c| c as u64).product()
    }

    pub fn check(&self, config: &[usize]) -> Result<()> {
        if config.len() != self.num_factors() {
            return Err(Error::FactorSpace(format!(
                "configuration has {} values, space has {} factors",
                config.len(),
                self.num_factors()
            )));
        }
        for (factor, (&value, &cardinality)) in config.iter().zip(&self.cardinalities).enumerate() {
            if value >= cardinality {
                return Err(Error::FactorOutOfRange {
                    factor,
                    value,
                    cardinality,
                });
            }
        }
        Ok(())
    }

    /// Mixed-radix flat index; the last factor varies fastest.
    pub fn index_of(&self, config: &[usize]) -> Result<u64> {
        self.check(config)?;
        Ok(config
            .iter()
            .zip(&self.cardinalities)
            .fold(0u64, |acc, (&v, &c)| acc * c as u64 + v as u64))
    }

    pub fn config_of(&self, mut index: u64) -> Vec<usize> {
        let mut config = vec![0; self.num_factors()];
        for (slot, &c) in config.iter_mut().zip(&self.cardinalities).rev() {
            *slot = (index % c as u64) as usize;
            index /= c as u64;
        }
        config
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub fn pixels(&self) -> usize {
        self.height * self.width * self.channels
    }
}

/// Procedural sprite renderer behind `mini-shapes`.
#[derive(Clone, Debug, PartialEq)]
pub struct MiniShapes {
    resolution: usize,
}

pub const SHAPE_NAMES: [&str; 3] = ["square", "ellipse", "triangle"];

impl MiniShapes {
    const MIN_RADIUS: f64 = 0.1;
    const MAX_RADIUS: f64 = 0.2;
    const SUPERSAMPLE: usize = 2;

    fn inside(shape: usize, x: f64, y: f64) -> bool {
        match shape {
            0 => x.abs() <= 0.7 && y.abs() <= 0.7,
            1 => x * x + 4.0 * y * y <= 1.0,
            _ => {
                // triangle with vertices on the unit circle, apex at +y
                let verts = [(0.0, 1.0), (-0.866_025, -0.5), (0.866_025, -0.5)];
                (0..3).all(|i| {
                    let (ax, ay) = verts[i];
                    let (bx, by) = verts[(i + 1) % 3];
                    (bx - ax) * (y - ay) - (by - ay) * (x - ax) >= 0.0
                })
            }
        }
    }

    fn render(&self, space: &FactorSpace, config: &[usize], out: &mut [f32]) {
        let c = space.cardinalities();
        let frac = |v: usize, card: usize| if card > 1 { v as f64 / (card - 1) as f64 } else { 0.5 };
        let shape = config[0];
        let radius = Self::MIN_RADIUS + (Self::MAX_RADIUS - Self::MIN_RADIUS) * frac(config[1], c[1]);
        // full turn over the factor's range; a square repeats every quarter turn
        let theta = 2.0 * PI * config[2] as f64 / c[2] as f64;
        let cx = Self::MAX_RADIUS + (1.0 - 2.0 * Self::MAX_RADIUS) * frac(config[3], c[3]);
        let cy = Self::MAX_RADIUS + (1.0 - 2.0 * Self::MAX_RADIUS) * frac(config[4], c[4]);
        let (sin, cos) = theta.sin_cos();
        let res = self.resolution;
        let ss = Self::SUPERSAMPLE;
        let weight = 1.0 / (ss * ss) as f32;
        for row in 0..res {
            for col in 0..res {
                let mut hits = 0usize;
                for si in 0..ss {
                    for sj in 0..ss {
                        let u = (col as f64 + (sj as f64 + 0.5) / ss as f64) / res as f64;
                        let v = (row as f64 + (si as f64 + 0.5) / ss as f64) / res as f64;
                        let (dx, dy) = (u - cx, cy - v);
                        let lx = (cos * dx + sin * dy) / radius;
                        let ly = (-sin * dx + cos * dy) / radius;
                        if Self::inside(shape, lx, ly) {
                            hits += 1;
                        }
                    }
                }
                out[row * res + col] = (hits as f32 * weight).clamp(0.0, 1.0);
            }
        }
    }
}

#[derive(Clone, Debug)]
enum Renderer {
    MiniShapes(MiniShapes),
    Table,
}

/// Factor space plus a pure renderer. Cheap to clone: rendered images are
/// shared behind an `Arc`.
#[derive(Clone, Debug)]
pub struct GroundTruthModel {
    name: String,
    space: FactorSpace,
    image: ImageShape,
    renderer: Renderer,
    table: Option<Arc<Vec<f32>>>,
}

/// Images (one flattened `H*W*C` row each) with their factor configurations.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationBatch {
    pub images: Array2<f32>,
    pub factors: Array2<usize>,
}

impl ObservationBatch {
    pub fn len(&self) -> usize {
        self.factors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Fully rendered tables are kept in memory below this many floats.
const CACHE_LIMIT: u64 = 1 << 25;

pub const MINI_SHAPES_FACTORS: [&str; 5] = ["shape", "scale", "orientation", "pos_x", "pos_y"];

impl GroundTruthModel {
    /// The built-in sprite model at 16, 32 or 64 pixels.
    pub fn mini_shapes(resolution: usize) -> Result<Self> {
        let cards = match resolution {
            16 | 32 => vec![3, 4, 8, 8, 8],
            64 => vec![3, 6, 16, 16, 16],
            other => return Err(Error::Resolution(other)),
        };
        let space = FactorSpace::new(MINI_SHAPES_FACTORS.iter().map(|s| s.to_string()).collect(), cards)?;
        let image = ImageShape {
            height: resolution,
            width: resolution,
            channels: 1,
        };
        let mut model = Self {
            name: format!("mini-shapes-{resolution}"),
            space,
            image,
            renderer: Renderer::MiniShapes(MiniShapes { resolution }),
            table: None,
        };
        if model.space.num_configs() * image.pixels() as u64 <= CACHE_LIMIT {
            let table = model.render_all();
            model.table = Some(Arc::new(table));
        }
        Ok(model)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn space(&self) -> &FactorSpace {
        &self.space
    }

    pub fn image_shape(&self) -> ImageShape {
        self.image
    }

    pub fn num_factors(&self) -> usize {
        self.space.num_factors()
    }

    fn render_all(&self) -> Vec<f32> {
        let px = self.image.pixels();
        let n = self.space.num_configs() as usize;
        let mut out = vec![0.0; n * px];
        for (i, chunk) in out.chunks_mut(px).enumerate() {
            let config = self.space.config_of(i as u64);
            self.render_uncached(&config, chunk);
        }
        out
    }

    fn render_uncached(&self, config: &[usize], out: &mut [f32]) {
        match &self.renderer {
            Renderer::MiniShapes(r) => r.render(&self.space, config, out),
            Renderer::Table => unreachable!("table models always hold their images"),
        }
    }

    /// Renders one configuration into `out` (length `H*W*C`).
    pub fn render_into(&self, config: &[usize], out: &mut [f32]) -> Result<()> {
        let idx = self.space.index_of(config)?;
        match &self.table {
            Some(t) => {
                let px = self.image.pixels();
                out.copy_from_slice(&t[idx as usize * px..(idx as usize + 1) * px]);
            }
            None => self.render_uncached(config, out),
        }
        Ok(())
    }

    pub fn render_one(&self, config: &[usize]) -> Result<Vec<f32>> {
        let mut out = vec![0.0; self.image.pixels()];
        self.render_into(config, &mut out)?;
        Ok(out)
    }

    pub fn render_index(&self, index: u64) -> Result<Vec<f32>> {
        if index >= self.space.num_configs() {
            return Err(Error::FactorSpace(format!("flat index {index} out of range")));
        }
        self.render_one(&self.space.config_of(index))
    }

    /// Renders a batch of configurations (rows of `factors`).
    pub fn render(&self, factors: Array2<usize>) -> Result<ObservationBatch> {
        let px = self.image.pixels();
        let mut images = Array2::zeros((factors.nrows(), px));
        for (row, mut img) in factors.rows().into_iter().zip(images.rows_mut()) {
            let config = row.to_vec();
            self.render_into(&config, img.as_slice_mut().expect("standard layout"))?;
        }
        Ok(ObservationBatch { images, factors })
    }

    /// `n` configurations, each factor independent and uniform.
    pub fn sample_factors<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Array2<usize>> {
        if n == 0 {
            return Err(Error::FactorSpace("cannot sample 0 configurations".into()));
        }
        let d = self.num_factors();
        let cards = self.space.cardinalities();
        Ok(Array2::from_shape_fn((n, d), |(_, k)| rng.random_range(0..cards[k])))
    }

    pub fn sample_factors_seeded(&self, n: usize, seed: u64) -> Result<Array2<usize>> {
        self.sample_factors(n, &mut seed::rng(seed))
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<ObservationBatch> {
        let factors = self.sample_factors(n, rng)?;
        self.render(factors)
    }

    pub fn flat_index(&self, config: ArrayView1<'_, usize>) -> Result<u64> {
        self.space.index_of(&config.to_vec())
    }

    /// Writes every configuration's image in flat-index order.
    pub fn export_factor_table(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        let factors = self
            .space
            .names()
            .iter()
            .zip(self.space.cardinalities())
            .map(|(n, c)| format!("{n}:{c}"))
            .collect::<Vec<_>>()
            .join(",");
        write!(
            out,
            "{TABLE_MAGIC}\nfactors: {factors}\nimage: {}x{}x{}\n",
            self.image.height, self.image.width, self.image.channels
        )?;
        let px = self.image.pixels();
        let mut buf = vec![0.0; px];
        for i in 0..self.space.num_configs() {
            self.render_into(&self.space.config_of(i), &mut buf)?;
            for v in &buf {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn import_factor_table(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "table".into());
        Self::parse_factor_table(&bytes, name)
    }

    pub fn parse_factor_table(bytes: &[u8], name: String) -> Result<Self> {
        let mut pos = 0usize;
        let line = |pos: &mut usize| -> Result<(usize, String)> {
            let start = *pos;
            let end = bytes[start..]
                .iter()
                .position(|&b| b == b'\n')
                .map(|e| start + e)
                .ok_or_else(|| Error::FactorTable(format!("unterminated header line at byte {start}")))?;
            *pos = end + 1;
            let text = std::str::from_utf8(&bytes[start..end])
                .map_err(|_| Error::FactorTable(format!("header at byte {start} is not UTF-8")))?;
            Ok((start, text.trim_end_matches('\r').to_string()))
        };
        let (off, magic) = line(&mut pos)?;
        if magic != TABLE_MAGIC {
            return Err(Error::FactorTable(format!("expected '{TABLE_MAGIC}' at byte {off}")));
        }
        let (off, factors) = line(&mut pos)?;
        let spec = factors
            .strip_prefix("factors:")
            .ok_or_else(|| Error::FactorTable(format!("expected 'factors:' at byte {off}")))?;
        let mut names = Vec::new();
        let mut cards = Vec::new();
        for item in spec.split(',') {
            let (n, c) = item
                .trim()
                .split_once(':')
                .ok_or_else(|| Error::FactorTable(format!("malformed factor '{item}' at byte {off}")))?;
            let c: usize = c
                .trim()
                .parse()
                .map_err(|_| Error::FactorTable(format!("bad cardinality '{c}' at byte {off}")))?;
            names.push(n.trim().to_string());
            cards.push(c);
        }
        let space = FactorSpace::new(names, cards)?;
        let (off, image) = line(&mut pos)?;
        let dims = image
            .strip_prefix("image:")
            .ok_or_else(|| Error::FactorTable(format!("expected 'image:' at byte {off}")))?
            .trim()
            .split('x')
            .map(|s| s.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::FactorTable(format!("malformed image extents at byte {off}")))?;
        let [height, width, channels] = dims[..] else {
            return Err(Error::FactorTable(format!("image extents need HxWxC at byte {off}")));
        };
        let image = ImageShape {
            height,
            width,
            channels,
        };
        let px = image.pixels();
        if px == 0 {
            return Err(Error::FactorTable(format!("empty image extents at byte {off}")));
        }
        let payload = &bytes[pos..];
        let expected = space.num_configs();
        let bytes_per_image = 4 * px as u64;
        let stored = payload.len() as u64 / bytes_per_image;
        if stored < expected {
            return Err(Error::FactorTable(format!(
                "missing configuration {stored} (header declares {expected} configurations)"
            )));
        }
        if stored > expected || payload.len() as u64 % bytes_per_image != 0 {
            return Err(Error::FactorTable(format!(
                "header declares {expected} configurations but {} bytes of images follow byte {pos}",
                payload.len()
            )));
        }
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(bad) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::FactorTable(format!(
                "configuration {} has pixel value {} outside [0, 1]",
                bad / px,
                data[bad]
            )));
        }
        Ok(Self {
            name,
            space,
            image,
            renderer: Renderer::Table,
            table: Some(Arc::new(data)),
        })
    }
}

pub const TABLE_MAGIC: &str = "DLAB-FTABLE v1";
