//! Fully connected classifier substrate: parameter tensors, forward and
//! backward passes, cross-entropy and cost-sensitive losses, SGD.

mod checkpoint;
mod loss;
mod mlp;
mod tensors;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointHeader};
pub use loss::{argmax, cost_sensitive_loss, cross_entropy, CostMatrix};
pub use mlp::{backward, forward, init_mlp, predict, Activation, ForwardCache, ParamSet};
pub use tensors::{per_layer_grad_norm_sq, sgd_step, ControlVariate, GradSet, Layer, Tensors};
