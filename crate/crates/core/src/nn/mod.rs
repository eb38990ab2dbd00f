//! Minimal neural-network core.
//!
//! Tensors are row-major and channels-first: `[batch, features]`,
//! `[batch, channels, length]` or `[batch, channels, height, width]`. A
//! [`Model`] is either a sequential stack or two branches joined by a
//! concatenation junction and followed by a shared head. Every layer kind has
//! a hand-written backward pass; the element type is generic so the same code
//! runs in `f32` for training and `f64` for finite-difference checks.

pub mod checkpoint;
pub mod layer;
pub mod model;
pub mod ops;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Provenance};
pub use layer::{Layer, LayerKind, LayerSpec};
pub use model::{BackwardPass, Branch, Gradients, Model, StackBuilder, Tape, TapeOptions};
pub use ops::{Activation, Mode};
pub use tensor::{Scalar, Tensor};
pub use train::{train, train_with, Dataset, EpochStats, Sgd, TrainConfig};
