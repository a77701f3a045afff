use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Tensor stored by its nonzero entries as `(flat index, value)` in index order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseTensor {
    shape: Vec<usize>,
    entries: Vec<(u32, f64)>,
}

impl SparseTensor {
    /// Entries must be in strictly increasing index order and inside the shape.
    pub fn new(shape: Vec<usize>, entries: Vec<(u32, f64)>) -> Result<Self> {
        let len: usize = shape.iter().product();
        let ordered = entries.windows(2).all(|w| w[0].0 < w[1].0);
        if !ordered || entries.last().is_some_and(|e| e.0 as usize >= len) {
            return Err(Error::ShapeMismatch { expected: shape, got: vec![entries.len()] });
        }
        Ok(Self { shape, entries })
    }

    pub fn from_dense(t: &Tensor) -> Self {
        let entries =
            t.data().iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, v)| (i as u32, *v)).collect();
        Self { shape: t.shape().to_vec(), entries }
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(self.shape.clone());
        for &(i, v) in &self.entries {
            t.data_mut()[i as usize] = v;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    /// Average-pools each channel of a `[c, h, w]` tensor by `k` into a flat vector.
    pub fn pooled(&self, k: usize) -> Vec<f64> {
        let [c, h, w] = self.shape[..] else {
            panic!("pooling needs a 3-D tensor, got {:?}", self.shape);
        };
        let (oh, ow) = (h / k, w / k);
        let mut out = vec![0.0; c * oh * ow];
        let scale = 1.0 / (k * k) as f64;
        for &(i, v) in &self.entries {
            let i = i as usize;
            let (ch, rest) = (i / (h * w), i % (h * w));
            let (y, x) = (rest / w, rest % w);
            if y / k < oh && x / k < ow {
                out[(ch * oh + y / k) * ow + x / k] += v * scale;
            }
        }
        out
    }
}
