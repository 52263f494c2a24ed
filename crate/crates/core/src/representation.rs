//! Representations map observations to code vectors. Trained encoders are
//! one kind; the fixed maps here act as oracles for metrics and downstream
//! evaluation.

use ndarray::{Array2, Axis};

use crate::data::ObservationBatch;
use crate::error::Result;

pub trait Representation: Sync {
    fn represent(&self, batch: &ObservationBatch) -> Result<Array2<f64>>;
}

impl<F> Representation for F
where
    F: Fn(&ObservationBatch) -> Result<Array2<f64>> + Sync,
{
    fn represent(&self, batch: &ObservationBatch) -> Result<Array2<f64>> {
        self(batch)
    }
}

/// Codes equal to the factor labels, one dimension per factor, padded with
/// zero dimensions up to `dims`.
#[derive(Clone, Copy, Debug)]
pub struct FactorCopy {
    pub dims: usize,
}

impl Representation for FactorCopy {
    fn represent(&self, batch: &ObservationBatch) -> Result<Array2<f64>> {
        let f = &batch.factors;
        Ok(Array2::from_shape_fn((f.nrows(), self.dims.max(f.ncols())), |(i, k)| {
            if k < f.ncols() {
                f[[i, k]] as f64
            } else {
                0.0
            }
        }))
    }
}

/// Factor labels passed through a fixed linear map: `codes = factors * M`
/// with `M` of shape `[d, dims]`.
#[derive(Clone, Debug)]
pub struct LinearMix {
    pub matrix: Array2<f64>,
}

impl Representation for LinearMix {
    fn represent(&self, batch: &ObservationBatch) -> Result<Array2<f64>> {
        let f = batch.factors.mapv(|v| v as f64);
        Ok(f.dot(&self.matrix))
    }
}

/// Every observation maps to the same code.
#[derive(Clone, Copy, Debug)]
pub struct Constant {
    pub dims: usize,
}

impl Representation for Constant {
    fn represent(&self, batch: &ObservationBatch) -> Result<Array2<f64>> {
        Ok(Array2::zeros((batch.len(), self.dims)))
    }
}

/// Raw pixels as codes.
#[derive(Clone, Copy, Debug)]
pub struct Pixels;

impl Representation for Pixels {
    fn represent(&self, batch: &ObservationBatch) -> Result<Array2<f64>> {
        Ok(batch.images.mapv(|v| v as f64))
    }
}

/// Applies `repr` to batch rows in chunks of `chunk`, concatenating codes.
pub fn represent_chunked(repr: &dyn Representation, batch: &ObservationBatch, chunk: usize) -> Result<Array2<f64>> {
    if batch.len() <= chunk {
        return repr.represent(batch);
    }
    let mut parts = Vec::new();
    let mut start = 0;
    while start < batch.len() {
        let end = (start + chunk).min(batch.len());
        let sub = ObservationBatch {
            images: batch.images.slice(ndarray::s![start..end, ..]).to_owned(),
            factors: batch.factors.slice(ndarray::s![start..end, ..]).to_owned(),
        };
        parts.push(repr.represent(&sub)?);
        start = end;
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    Ok(ndarray::concatenate(Axis(0), &views).expect("chunks share a width"))
}
