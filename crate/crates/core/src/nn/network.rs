use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layers::{AvgPool2d, Conv2d, ConvPool, Dense, Layer};
use super::{ParamVector, SparseTensor, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
}

impl SgdConfig {
    pub fn new(learning_rate: f64) -> Result<Self> {
        if !(learning_rate.is_finite() && learning_rate > 0.0) {
            return Err(Error::config("learning_rate", "must be > 0"));
        }
        Ok(Self { learning_rate })
    }
}

/// Sequential stack of layers with per-layer gradient slots.
#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<Layer>,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    cache: Option<Cache>,
}

/// Layer inputs kept by `forward`; the first one may be sparse.
#[derive(Debug, Clone)]
struct Cache {
    sparse_input: Option<SparseTensor>,
    inputs: Vec<Tensor>,
}

/// Declarative layer list; shapes are checked and parameters drawn at `build`.
#[derive(Debug, Clone)]
pub struct NetworkBuilder {
    input_shape: Vec<usize>,
    specs: Vec<Spec>,
}

#[derive(Debug, Clone)]
enum Spec {
    Dense(usize),
    Conv(usize, usize),
    ConvPool(usize, usize, usize),
    Pool(usize),
    Relu,
    Softmax,
}

impl NetworkBuilder {
    pub fn new(input_shape: Vec<usize>) -> Self {
        Self {
            input_shape,
            specs: Vec::new(),
        }
    }

    pub fn dense(mut self, out: usize) -> Self {
        self.specs.push(Spec::Dense(out));
        self
    }

    pub fn conv2d(mut self, out_ch: usize, kernel: usize) -> Self {
        self.specs.push(Spec::Conv(out_ch, kernel));
        self
    }

    /// Fused convolution, ReLU and average pooling, fast on sparse inputs.
    pub fn conv_relu_pool(mut self, out_ch: usize, kernel: usize, pool: usize) -> Self {
        self.specs.push(Spec::ConvPool(out_ch, kernel, pool));
        self
    }

    pub fn avg_pool(mut self, kernel: usize) -> Self {
        self.specs.push(Spec::Pool(kernel));
        self
    }

    pub fn relu(mut self) -> Self {
        self.specs.push(Spec::Relu);
        self
    }

    pub fn softmax(mut self) -> Self {
        self.specs.push(Spec::Softmax);
        self
    }

    pub fn build<R: Rng + ?Sized>(self, rng: &mut R) -> Result<Network> {
        let mut shape = self.input_shape.clone();
        let mut layers = Vec::with_capacity(self.specs.len());
        for spec in self.specs {
            let layer = match spec {
                Spec::Dense(out) => Layer::Dense(Dense::new(shape.iter().product(), out, rng)),
                Spec::Conv(out_ch, k) => match shape.as_slice() {
                    &[c, h, w] if k % 2 == 1 => Layer::Conv2d(Conv2d::new(c, out_ch, k, h, w, rng)),
                    _ => {
                        return Err(Error::ShapeMismatch {
                            expected: vec![0, 0, 0],
                            got: shape,
                        })
                    }
                },
                Spec::ConvPool(out_ch, k, pool) => match shape.as_slice() {
                    &[c, h, w] if k % 2 == 1 => {
                        Layer::ConvPool(ConvPool { conv: Conv2d::new(c, out_ch, k, h, w, rng), pool })
                    }
                    _ => {
                        return Err(Error::ShapeMismatch {
                            expected: vec![0, 0, 0],
                            got: shape,
                        })
                    }
                },
                Spec::Pool(k) => Layer::AvgPool2d(AvgPool2d { kernel: k }),
                Spec::Relu => Layer::Relu,
                Spec::Softmax => Layer::Softmax,
            };
            shape = layer.output_shape(&shape)?;
            layers.push(layer);
        }
        Ok(Network {
            layers,
            input_shape: self.input_shape,
            output_shape: shape,
            cache: None,
        })
    }
}

impl Network {
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn output_len(&self) -> usize {
        self.output_shape.iter().product()
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.shape() != self.input_shape.as_slice() {
            return Err(Error::ShapeMismatch {
                expected: self.input_shape.clone(),
                got: input.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn check_sparse(&self, input: &SparseTensor) -> Result<()> {
        if input.shape() != self.input_shape.as_slice() {
            return Err(Error::ShapeMismatch {
                expected: self.input_shape.clone(),
                got: input.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Inference without touching the activation cache.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let mut x = input.clone();
        for layer in &self.layers {
            x = layer.apply(&x);
        }
        Ok(x)
    }

    /// [`Network::predict`] for a sparse input.
    pub fn predict_sparse(&self, input: &SparseTensor) -> Result<Tensor> {
        self.check_sparse(input)?;
        let Some((first, rest)) = self.layers.split_first() else {
            return Ok(input.to_dense());
        };
        let mut x = first.apply_sparse(input);
        for layer in rest {
            x = layer.apply(&x);
        }
        Ok(x)
    }

    /// Forward pass that keeps every layer input for a following `backward`.
    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for layer in &self.layers {
            let y = layer.apply(&x);
            inputs.push(x);
            x = y;
        }
        self.cache = Some(Cache { sparse_input: None, inputs });
        Ok(x)
    }

    /// [`Network::forward`] for a sparse input.
    pub fn forward_sparse(&mut self, input: &SparseTensor) -> Result<Tensor> {
        self.check_sparse(input)?;
        let Some((first, rest)) = self.layers.split_first() else {
            return self.forward(&input.to_dense());
        };
        let mut inputs = Vec::with_capacity(rest.len());
        let mut x = first.apply_sparse(input);
        for layer in rest {
            let y = layer.apply(&x);
            inputs.push(x);
            x = y;
        }
        self.cache = Some(Cache { sparse_input: Some(input.clone()), inputs });
        Ok(x)
    }

    /// Backpropagates `output_grad`, accumulating parameter gradients, and
    /// returns the gradient with respect to the network input.
    pub fn backward(&mut self, output_grad: &Tensor) -> Result<Tensor> {
        self.backward_impl(output_grad, true).map(|g| g.expect("input grad requested"))
    }

    /// Like [`Network::backward`] but skips the input gradient of the first layer.
    pub fn backward_params(&mut self, output_grad: &Tensor) -> Result<()> {
        self.backward_impl(output_grad, false).map(|_| ())
    }

    fn backward_impl(&mut self, output_grad: &Tensor, need_input: bool) -> Result<Option<Tensor>> {
        let Cache { sparse_input, inputs } = self.cache.take().ok_or(Error::MissingCache)?;
        if output_grad.len() != self.output_len() {
            return Err(Error::ShapeMismatch {
                expected: self.output_shape.clone(),
                got: output_grad.shape().to_vec(),
            });
        }
        let mut g = output_grad.clone();
        // Dense inputs line up with the layers after the sparse one, if any.
        let offset = usize::from(sparse_input.is_some());
        for (i, x) in inputs.iter().enumerate().rev() {
            let layer = i + offset;
            match self.layers[layer].backward(x, &g, need_input || layer > 0) {
                Some(dx) => g = dx,
                None => return Ok(None),
            }
        }
        match sparse_input {
            Some(x) => Ok(self.layers[0].backward_sparse(&x, &g, need_input)),
            None => Ok(need_input.then_some(g)),
        }
    }

    /// Gradient of `output_grad . f(input)` with respect to `input`, leaving
    /// the cache and parameter gradients alone.
    pub fn input_gradient(&self, input: &Tensor, output_grad: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_input(input)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for layer in &self.layers {
            let y = layer.apply(&x);
            inputs.push(x);
            x = y;
        }
        if output_grad.len() != x.len() {
            return Err(Error::ShapeMismatch {
                expected: self.output_shape.clone(),
                got: output_grad.shape().to_vec(),
            });
        }
        let mut g = output_grad.clone();
        for (layer, xi) in self.layers.iter().zip(&inputs).rev() {
            g = layer.input_grad(xi, &g);
        }
        Ok((x, g))
    }

    pub fn zero_grad(&mut self) {
        for layer in &mut self.layers {
            for g in layer.grads_mut() {
                g.fill(0.0);
            }
        }
    }

    /// `p <- p - lr * grad` for every parameter, then clears gradients.
    pub fn sgd_step(&mut self, cfg: &SgdConfig) {
        for layer in &mut self.layers {
            for (p, g) in layer.params_and_grads() {
                for (pi, gi) in p.iter_mut().zip(g) {
                    *pi -= cfg.learning_rate * gi;
                }
            }
        }
        self.zero_grad();
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().flat_map(|l| l.params()).map(<[f64]>::len).sum()
    }

    pub fn export_params(&self) -> ParamVector {
        ParamVector(self.layers.iter().flat_map(|l| l.params()).flatten().copied().collect())
    }

    pub fn export_grads(&self) -> ParamVector {
        ParamVector(self.layers.iter().flat_map(|l| l.grads()).flatten().copied().collect())
    }

    /// Writes gradients into `out`, which must have length `param_count()`.
    pub(crate) fn copy_grads_into(&self, out: &mut [f64]) {
        let mut offset = 0;
        for g in self.layers.iter().flat_map(|l| l.grads()) {
            out[offset..offset + g.len()].copy_from_slice(g);
            offset += g.len();
        }
    }

    pub fn import_params(&mut self, v: &ParamVector) -> Result<()> {
        self.import_slice(v.as_slice())
    }

    pub(crate) fn import_slice(&mut self, v: &[f64]) -> Result<()> {
        let n = self.param_count();
        if v.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: v.len(),
            });
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            for p in layer.params_mut() {
                p.copy_from_slice(&v[offset..offset + p.len()]);
                offset += p.len();
            }
        }
        Ok(())
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for layer in &mut self.layers {
            for g in layer.grads_mut() {
                g.iter_mut().for_each(|v| *v *= factor);
            }
        }
    }

    pub fn grad_norm_sq(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.grads())
            .flatten()
            .map(|g| g * g)
            .sum()
    }

    /// Stable textual description of the architecture.
    pub fn describe(&self) -> String {
        let layers: Vec<String> = self.layers.iter().map(Layer::name).collect();
        format!("{:?}|{}", self.input_shape, layers.join(","))
    }

    pub fn arch_hash(&self) -> String {
        arch_hash(&self.describe())
    }
}

pub fn arch_hash(description: &str) -> String {
    let digest = Sha256::digest(description.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}
