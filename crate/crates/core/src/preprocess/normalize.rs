//! Per-feature scaling fitted on the training split.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalingMode {
    MinMax,
    Standardize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum FeatureScaling {
    MinMax { min: f64, max: f64 },
    Standardize { mean: f64, std: f64 },
    /// Feature with no spread on the training data; mapped to 0.
    Constant { value: f64 },
}

impl FeatureScaling {
    pub fn fit(values: &[f64], mode: ScalingMode) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InsufficientSamples("no values to fit a scaling on".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("scaling input".into()));
        }
        Ok(match mode {
            ScalingMode::MinMax => {
                let min = values.iter().copied().fold(f64::INFINITY, f64::min);
                let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if max > min {
                    FeatureScaling::MinMax { min, max }
                } else {
                    FeatureScaling::Constant { value: min }
                }
            }
            ScalingMode::Standardize => {
                let mean = stats::mean(values);
                let std = stats::variance(values).sqrt();
                if std > 0.0 {
                    FeatureScaling::Standardize { mean, std }
                } else {
                    FeatureScaling::Constant { value: mean }
                }
            }
        })
    }

    pub fn apply(&self, v: f64) -> f64 {
        match *self {
            FeatureScaling::MinMax { min, max } => (v - min) / (max - min),
            FeatureScaling::Standardize { mean, std } => (v - mean) / std,
            FeatureScaling::Constant { .. } => 0.0,
        }
    }

    pub fn invert(&self, v: f64) -> f64 {
        match *self {
            FeatureScaling::MinMax { min, max } => min + v * (max - min),
            FeatureScaling::Standardize { mean, std } => mean + v * std,
            FeatureScaling::Constant { value } => value,
        }
    }
}

/// Scalings for a fixed list of features (columns or channels).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationState {
    scalings: Vec<FeatureScaling>,
}

impl NormalizationState {
    /// Fit on row-major data with `n_features` columns.
    pub fn fit(data: &[f64], n_features: usize, modes: &[ScalingMode]) -> Result<Self> {
        if modes.len() != n_features || n_features == 0 || data.len() % n_features != 0 {
            return Err(Error::Shape(format!(
                "{} values, {n_features} features, {} modes",
                data.len(),
                modes.len()
            )));
        }
        let scalings = (0..n_features)
            .map(|j| {
                let column: Vec<f64> = data.iter().skip(j).step_by(n_features).copied().collect();
                FeatureScaling::fit(&column, modes[j])
            })
            .collect::<Result<_>>()?;
        Ok(Self { scalings })
    }

    pub fn from_scalings(scalings: Vec<FeatureScaling>) -> Self {
        Self { scalings }
    }

    pub fn n_features(&self) -> usize {
        self.scalings.len()
    }

    pub fn scaling(&self, j: usize) -> &FeatureScaling {
        &self.scalings[j]
    }

    /// Scale row-major data in place. Values are not clipped.
    pub fn apply(&self, data: &mut [f64]) -> Result<()> {
        let n = self.scalings.len();
        if data.len() % n != 0 {
            return Err(Error::Shape(format!("{} values for {n} features", data.len())));
        }
        for row in data.chunks_mut(n) {
            for (v, s) in row.iter_mut().zip(&self.scalings) {
                *v = s.apply(*v);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_feature_maps_to_zero() {
        let s = FeatureScaling::fit(&[4.0, 4.0], ScalingMode::MinMax).unwrap();
        assert_eq!(s, FeatureScaling::Constant { value: 4.0 });
        assert_eq!(s.apply(10.0), 0.0);
        let s = FeatureScaling::fit(&[4.0, 4.0], ScalingMode::Standardize).unwrap();
        assert_eq!(s.apply(-3.0), 0.0);
    }

    #[test]
    fn standardize_round_trip() {
        let s = FeatureScaling::fit(&[1.0, 2.0, 3.0, 6.0], ScalingMode::Standardize).unwrap();
        assert!((s.invert(s.apply(5.5)) - 5.5).abs() < 1e-12);
        assert!((s.apply(3.0)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn min_max_on_train_lands_in_unit_interval(
            train in proptest::collection::vec(-1e4f64..1e4, 4..60),
            other in -1e5f64..1e5,
        ) {
            let state = NormalizationState::fit(&train, 2, &[ScalingMode::MinMax; 2]);
            let n = train.len() / 2 * 2;
            let state = if n == train.len() { state.unwrap() } else {
                NormalizationState::fit(&train[..n], 2, &[ScalingMode::MinMax; 2]).unwrap()
            };
            let mut scaled = train[..n].to_vec();
            state.apply(&mut scaled).unwrap();
            for (i, v) in scaled.iter().enumerate() {
                match state.scaling(i % 2) {
                    FeatureScaling::Constant { .. } => prop_assert_eq!(*v, 0.0),
                    _ => prop_assert!((0.0..=1.0).contains(v)),
                }
            }
            // Unseen values are not clipped.
            if let FeatureScaling::MinMax { min, max } = *state.scaling(0) {
                let out = state.scaling(0).apply(other);
                prop_assert_eq!(out < 0.0, other < min);
                prop_assert_eq!(out > 1.0, other > max);
            }
        }
    }
}
