//! From-scratch NVFormer: autograd tape, Transformer layers, training and
//! the binary model artifact.

pub mod artifact;
pub mod dataset;
pub mod layers;
pub mod model;
pub mod tape;
pub mod train;

pub use artifact::{load, save};
pub use dataset::build_examples;
pub use model::{mse_loss, positional_encoding, reduce_samples, NvFormerConfig, NvFormerModel};
pub use train::{grad_check, train, TrainConfig, TrainOutcome, TrainingExample};
