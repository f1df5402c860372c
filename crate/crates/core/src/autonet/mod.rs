//! Small dense numerical engine: row-batched layer stacks with a recorded
//! tape for reverse-mode gradients, softmax cross-entropy and squared-error
//! losses, Adam, and a binary tensor archive for checkpoints.

mod archive;
mod layers;
mod loss;
mod optim;
mod tensor;

pub use archive::{TensorArchive, TensorEntry};
pub use layers::{
    Affine, BatchNorm, Layer, LayerSpec, Mode, Sequential, StackGrads, Tape, DEFAULT_BN_EPS,
    DEFAULT_BN_MOMENTUM,
};
pub use loss::{cross_entropy, mse, softmax};
pub use optim::AdamState;
pub use tensor::Tensor;

/// Dense row-major matrix used for activations (`rows = items`).
pub type Matrix = ndarray::Array2<f64>;
