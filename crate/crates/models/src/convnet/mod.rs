//! Convolutional encoder-decoder with hand-written backpropagation.

pub mod layers;
pub mod train;
pub mod unet;

pub use layers::{pad_replicate, Tensor4};
pub use train::{evaluate_loss, grid_search, train, train_quantile, train_regression, SpatialSample, TrainParams, TrainingLog};
pub use unet::{masked_loss, Loss, OutputActivation, UNet, UNetConfig};
