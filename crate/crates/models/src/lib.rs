//! Forecasting models: linear and quantile regression, logistic regression,
//! random and quantile forests, a convolutional encoder-decoder and a stacked
//! meta-learner.

pub mod adam;
pub mod checkpoint;
pub mod convnet;
pub mod error;
pub mod forecaster;
pub mod forest;
pub mod linear;
pub mod stack;
pub mod task;

pub use error::{Error, Result};
pub use forecaster::{AnyForecaster, Forecaster, ModelKind, ModelSpec};
pub use task::{pinball_loss, Task};
