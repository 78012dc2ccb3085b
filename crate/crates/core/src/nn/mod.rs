//! Small neural-network substrate: dense and convolutional layers with
//! hand-written backward passes, Adam, softmax/entropy helpers, finite
//! difference gradient checks and a JSON checkpoint format.

mod checkpoint;
mod distribution;
mod gradcheck;
mod layer;
mod network;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use distribution::{entropy, log_softmax, softmax, PolicyDistribution};
pub use gradcheck::{grad_check, BlockError, GradCheckConfig, GradientReport, ParamBlock};
pub use layer::{sigmoid, Layer, LayerKind, LayerSpec};
pub use network::{AdamConfig, AdamState, GradBlock, Gradients, Network};
pub use tensor::Tensor;
