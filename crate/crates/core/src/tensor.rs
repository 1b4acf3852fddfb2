use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::ring::layout;

/// A plaintext tensor of reals, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl RealTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if layout::numel(&shape) != data.len() {
            return Err(shape_err(format!("{} values for shape {shape:?}", data.len())));
        }
        Ok(RealTensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        RealTensor {
            shape: shape.to_vec(),
            data: vec![0.0; layout::numel(shape)],
        }
    }

    pub fn scalar(value: f64) -> Self {
        RealTensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if layout::numel(shape) != self.data.len() {
            return Err(shape_err(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Rows of a rank-2 tensor.
    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        let cols = self.shape.last().copied().unwrap_or(1).max(1);
        self.data.chunks(cols)
    }

    /// Repeats this tensor over leading axes so it has `shape`. Only trailing
    /// axes may match, as in `[C]` against `[B, H, W, C]`.
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Self> {
        if !shape.ends_with(&self.shape) {
            return Err(shape_err(format!("cannot broadcast {:?} to {shape:?}", self.shape)));
        }
        let total = layout::numel(shape);
        let data = self.data.iter().copied().cycle().take(total).collect();
        Ok(RealTensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// `count` entries along axis 0 starting at `start`. along axis 0.
    pub fn slice_batch(&self, start: usize, count: usize) -> Result<Self> {
        let batch = *self.shape.first().ok_or_else(|| shape_err("scalar has no batch axis"))?;
        if start + count > batch {
            return Err(shape_err(format!("batch slice {start}..{} of {batch}", start + count)));
        }
        let per = self.data.len() / batch.max(1);
        let mut shape = self.shape.clone();
        shape[0] = count;
        Ok(RealTensor {
            shape,
            data: self.data[start * per..(start + count) * per].to_vec(),
        })
    }
}
