//! Early-exit ensembles for per-time-point signal segmentation.
//!
//! A one-dimensional U-Net carries an auxiliary classifier after every
//! hidden decoder block. A single forward pass therefore yields several
//! predictions whose averaged softmax doubles as a predictive distribution
//! for uncertainty estimates.

// `!(x > 0.0)` style guards are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod rng;
pub mod signal;
pub mod tensor;
pub mod trainer;
pub mod uncertainty;

pub use autodiff::{Gradients, Phase, Tape, Var};
pub use error::{Error, Result};
pub use losses::LossWeights;
pub use model::{ExitBundle, Model, ModelConfig, Variant};
pub use signal::{ArtifactKind, Segment};
pub use tensor::{Scalar, Tensor};
pub use trainer::{Checkpoint, TrainConfig};
