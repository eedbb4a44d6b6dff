//! Forecast verification: per-location skill metrics and their aggregates,
//! the paired sign test, bootstrap stability runs, feature ablations, region
//! summaries and heatmap export.

pub mod error;
pub mod experiments;
pub mod heatmap;
pub mod metrics;
pub mod report;
pub mod signtest;

pub use error::{Error, Result};
pub use metrics::{Aggregates, LocationGrid, R2Convention};
pub use report::{evaluate, EvalOptions, EvalReport};
pub use signtest::{sign_test, SignTestResult};
