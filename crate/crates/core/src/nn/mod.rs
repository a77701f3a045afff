//! Minimal differentiable network kit: dense, conv2d, average pooling, ReLU and
//! softmax layers, plain SGD and flat parameter import/export. All math is `f64`.

mod layers;
mod network;
mod params;
mod sparse;
mod tensor;

pub use layers::Layer;
pub(crate) use layers::softmax;
pub use network::{arch_hash, Network, NetworkBuilder, SgdConfig};
pub use params::ParamVector;
pub use sparse::SparseTensor;
pub use tensor::Tensor;


/// Mean-squared error and its gradient with respect to the prediction.
pub fn mse(pred: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let n = pred.len() as f64;
    let loss = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n;
    let grad = pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n).collect();
    (loss, grad)
}

#[cfg(test)]
mod tests;
