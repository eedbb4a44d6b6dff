//! Lagged target features.

use crate::error::{Error, Result};

/// Months before the target date whose observed value enters the features.
pub const LAGS: [usize; 5] = [2, 3, 4, 12, 24];
/// Longest lag; earlier samples are never formed.
pub const MAX_LAG: usize = 24;
/// Delay before inputs such as covariates and SSTs are available.
pub const AVAILABILITY_LAG: usize = 2;

/// `history[t - lag]` for each lag in [`LAGS`].
pub fn lag_features(history: &[f64], t: usize) -> Result<[f64; 5]> {
    if t < MAX_LAG || t >= history.len() + AVAILABILITY_LAG {
        return Err(Error::InsufficientHistory { t, needed: MAX_LAG });
    }
    let mut out = [0.0; 5];
    for (o, lag) in out.iter_mut().zip(LAGS) {
        *o = history[t - lag];
    }
    Ok(out)
}
