//! Preprocessing: climatologies, terciles, SST principal components,
//! normalization, missing-value fill, positional encoding, lags and feature
//! assembly.

pub mod climatology;
pub mod encoding;
pub mod features;
pub mod fill;
pub mod lags;
pub mod normalize;
pub mod pca;
pub mod tercile;

pub use climatology::{add_back, detrend, model_climatology, monthly_climatology, Climatology, ClimatologySource};
pub use encoding::{location_encoding, positional_encoding};
pub use features::{
    EnsembleMode, FeatureCatalog, FeatureConfig, FeatureGroup, FeatureMatrix, FeaturePipeline, FeatureSource, FeatureStack,
    LocationMode, Paradigm, RowKey,
};
pub use fill::{nearest_fill, FillPlan};
pub use lags::{lag_features, AVAILABILITY_LAG, LAGS, MAX_LAG};
pub use normalize::{FeatureScaling, NormalizationState, ScalingMode};
pub use pca::PcaModel;
pub use tercile::{tercile_label, TercileClass, TercileThresholds};
