//! Minimal dense/convolutional network engine with exact backpropagation,
//! Adam, plateau learning-rate decay, inverted dropout and early stopping.
//! All arithmetic is f64.

pub mod checkpoint;
mod gemm;
pub mod layers;
pub mod model;
pub mod optim;
pub mod train;

pub mod tensor;

pub use layers::{
    conv2d_forward, dense_forward, dropout, Activation, ConvParams, DenseParams, DropoutMode,
    Layer,
};
pub use model::{Gradients, Model};
pub use optim::{AdamParams, AdamState, PlateauScheduler};
pub use tensor::Tensor3;
pub use train::{train, EpochRecord, TrainConfig, TrainHistory};
