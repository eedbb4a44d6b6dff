//! Per-location verification metrics over `[t][location]` series and their
//! aggregates over land. Pairs with a non-finite truth or prediction are
//! skipped.

use serde::{Deserialize, Serialize};
use ssf_core::preprocess::climatology::{detrend, Climatology};
use ssf_core::stats::{mean, percentile_r7, std_dev};
use ssf_models::task::pinball;

use crate::error::{Error, Result};

/// Mean, standard error (sample deviation over locations / √L), median and
/// 90th percentile of the defined per-location values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub mean: f64,
    pub se: f64,
    pub median: f64,
    pub p90: f64,
    pub n_locations: usize,
}

impl Aggregates {
    /// `None` when no value is defined.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        Some(Self {
            mean: mean(values),
            se: std_dev(values) / (values.len() as f64).sqrt(),
            median: percentile_r7(values, 0.5)?,
            p90: percentile_r7(values, 0.9)?,
            n_locations: values.len(),
        })
    }
}

/// One metric per land location; `None` marks an undefined location, which
/// is left out of the aggregates and counted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationGrid {
    pub values: Vec<Option<f64>>,
    pub aggregates: Option<Aggregates>,
    pub n_undefined: usize,
}

impl LocationGrid {
    pub fn new(values: Vec<Option<f64>>) -> Self {
        let defined: Vec<f64> = values.iter().flatten().copied().collect();
        Self {
            aggregates: Aggregates::of(&defined),
            n_undefined: values.len() - defined.len(),
            values,
        }
    }

    /// Aggregates over the locations where `keep` is true.
    pub fn restricted(&self, keep: &[bool]) -> Result<Option<Aggregates>> {
        if keep.len() != self.values.len() {
            return Err(Error::Shape(format!("{} flags for {} locations", keep.len(), self.values.len())));
        }
        let defined: Vec<f64> = self.values.iter().zip(keep).filter(|(_, k)| **k).filter_map(|(v, _)| *v).collect();
        Ok(Aggregates::of(&defined))
    }

    pub fn mean(&self) -> Option<f64> {
        self.aggregates.as_ref().map(|a| a.mean)
    }
}

/// Which mean the R² denominator subtracts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum R2Convention {
    /// Mean of the detrended truth over the evaluation period.
    #[default]
    TruthMean,
    /// Mean of the detrended predictions, as the formula is literally written.
    PredictionMean,
}

fn shape_of(truth: &[Vec<f64>], pred: &[Vec<f64>]) -> Result<usize> {
    if truth.len() != pred.len() {
        return Err(Error::Shape(format!("{} truth steps, {} predicted", truth.len(), pred.len())));
    }
    let n_loc = truth.first().map_or(0, Vec::len);
    if truth.iter().chain(pred).any(|row| row.len() != n_loc) {
        return Err(Error::Shape("rows differ in location count".into()));
    }
    Ok(n_loc)
}

/// Finite `(truth, prediction)` pairs at one location.
fn pairs(truth: &[Vec<f64>], pred: &[Vec<f64>], loc: usize) -> Vec<(f64, f64)> {
    truth
        .iter()
        .zip(pred)
        .map(|(y, p)| (y[loc], p[loc]))
        .filter(|(y, p)| y.is_finite() && p.is_finite())
        .collect()
}

fn per_location(truth: &[Vec<f64>], pred: &[Vec<f64>], f: impl Fn(&[(f64, f64)]) -> Option<f64>) -> Result<LocationGrid> {
    let n_loc = shape_of(truth, pred)?;
    Ok(LocationGrid::new((0..n_loc).map(|loc| f(&pairs(truth, pred, loc))).collect()))
}

fn mean_of(pairs: &[(f64, f64)], f: impl Fn(f64, f64) -> f64) -> Option<f64> {
    (!pairs.is_empty()).then(|| pairs.iter().map(|&(y, p)| f(y, p)).sum::<f64>() / pairs.len() as f64)
}

pub fn mse_report(truth: &[Vec<f64>], pred: &[Vec<f64>]) -> Result<LocationGrid> {
    per_location(truth, pred, |pairs| mean_of(pairs, |y, p| (y - p).powi(2)))
}

/// Per-location mean pinball loss of `alpha`-quantile forecasts.
pub fn quantile_loss_report(truth: &[Vec<f64>], pred: &[Vec<f64>], alpha: f64) -> Result<LocationGrid> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("quantile level {alpha} outside (0, 1)")));
    }
    per_location(truth, pred, |pairs| mean_of(pairs, |y, p| pinball(y - p, alpha)))
}

/// Per-location percentage of correctly predicted tercile labels.
pub fn tercile_accuracy(labels: &[Vec<f64>], predicted: &[Vec<f64>]) -> Result<LocationGrid> {
    if labels.iter().flatten().any(|&l| l.is_finite() && ![-1.0, 0.0, 1.0].contains(&l)) {
        return Err(Error::Invalid("tercile labels must be -1, 0 or 1".into()));
    }
    per_location(labels, predicted, |pairs| mean_of(pairs, |y, p| if y == p { 100.0 } else { 0.0 }))
}

/// R² on already detrended series. A location with no pairs or a zero
/// denominator is undefined.
pub fn r2_detrended(truth: &[Vec<f64>], pred: &[Vec<f64>], convention: R2Convention) -> Result<LocationGrid> {
    per_location(truth, pred, |pairs| {
        if pairs.is_empty() {
            return None;
        }
        let centre = match convention {
            R2Convention::TruthMean => mean(&pairs.iter().map(|p| p.0).collect::<Vec<_>>()),
            R2Convention::PredictionMean => mean(&pairs.iter().map(|p| p.1).collect::<Vec<_>>()),
        };
        let residual: f64 = pairs.iter().map(|(y, p)| (y - p).powi(2)).sum();
        let spread: f64 = pairs.iter().map(|(y, _)| (y - centre).powi(2)).sum();
        (spread > 0.0).then(|| 1.0 - residual / spread)
    })
}

/// Skill relative to climatology: truth is detrended with `truth_clim`,
/// predictions with `pred_clim` (the observed climatology for learned models,
/// the model's own climatology for raw ensemble statistics).
pub fn r2_per_location(
    truth: &[Vec<f64>],
    pred: &[Vec<f64>],
    months: &[u8],
    truth_clim: &Climatology,
    pred_clim: &Climatology,
    convention: R2Convention,
) -> Result<LocationGrid> {
    shape_of(truth, pred)?;
    let truth_det = detrend(truth, months, truth_clim)?;
    let pred_det = detrend(pred, months, pred_clim)?;
    r2_detrended(&truth_det, &pred_det, convention)
}
