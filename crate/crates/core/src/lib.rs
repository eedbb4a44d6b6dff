//! Core data model and preprocessing for machine-learning post-processing of
//! subseasonal ensemble forecasts.
//!
//! * [`grid`]: grid geometry, land masks, the monthly time axis and fields.
//! * [`dataset`]: the dataset container and read-guarded split views.
//! * [`io`]: the manifest + delimited-grid directory format.
//! * [`synth`]: the seeded synthetic generator standing in for hindcast archives.
//! * [`preprocess`]: climatologies, terciles, SST PCA, normalization, fills,
//!   positional encodings, lags and feature assembly.
//! * [`baselines`]: the non-learned reference predictors.

pub mod baselines;
pub mod dataset;
pub mod error;
pub mod grid;
pub mod io;
pub mod preprocess;
pub mod stats;
pub mod synth;

pub use dataset::{split_dataset, DataView, Dataset, Split, SplitViews, TargetKind};
pub use error::{Error, Result};
pub use grid::{EnsembleField, GridSpec, LandMask, SpatialField, TimeIndex, YearMonth};
