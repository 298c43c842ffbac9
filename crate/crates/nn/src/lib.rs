//! A deliberately small, CPU-only convolutional network substrate.
//!
//! Networks are fixed layer graphs (a DAG of nodes, each one layer from a
//! closed catalogue) over per-sample tensors laid out as `[channels, height,
//! width]` or `[features]`. Gradients are exact and analytic; every layer is
//! covered by finite-difference checks in 64-bit mode. Training loops process
//! samples one at a time and accumulate gradients in a fixed order, so a run is
//! a pure function of its seed.

mod adam;
mod checkpoint;
mod error;
mod gradcheck;
mod kernels;
mod layer;
mod loss;
mod network;
mod params;
mod real;
mod tensor;
mod train;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, NamedNetwork, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use error::{NnError, Result};
pub use gradcheck::{grad_check, grad_check_with, CheckLoss, GradCheckReport};
pub use layer::{Graph, Layer, Node, NodeId, Padding};
pub use loss::{bce_loss, bce_with_logits, sum_squared_error, BCE_EPSILON};
pub use network::{GraphBuilder, Network, Trace};
pub use params::{Gradients, Param, ParamSet};
pub use real::Real;
pub use tensor::Tensor;
pub use train::{fit, Objective, TrainConfig, TrainHistory};

/// One `forward_backward` pass: the network output and the gradients of the
/// scalar loss whose derivative with respect to the output is `upstream`.
///
/// Returns `(output, parameter_gradients, input_gradient)`.
pub fn forward_backward<T: Real>(
    network: &Network<T>,
    input: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<(Tensor<T>, Gradients<T>, Tensor<T>)> {
    let trace = network.forward(input)?;
    let mut grads = network.params().zero_gradients();
    let input_grad = network
        .backward(&trace, upstream, &mut grads, true)?
        .expect("input gradient requested");
    Ok((trace.output().clone(), grads, input_grad))
}
