//! Non-learned reference predictors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::climatology::Climatology;
use crate::stats::{mean, percentile_r7};

pub const UPPER_DECILE: f64 = 0.9;

/// Historical average: `s[m(t), l]`.
pub fn predict_historical(clim: &Climatology, month: u8, loc: usize) -> f64 {
    clim.get(month, loc)
}

/// Average of the ensemble members.
pub fn predict_ensemble_mean(members: &[f64]) -> f64 {
    mean(members)
}

/// 90th percentile (R-7) of the ensemble members.
pub fn predict_ensemble_q90(members: &[f64]) -> f64 {
    percentile_r7(members, UPPER_DECILE).unwrap_or(f64::NAN)
}

/// 90th percentile (R-7) of the reference values for one month and location.
pub fn predict_historical_q90(reference: &[f64]) -> Option<f64> {
    percentile_r7(reference, UPPER_DECILE)
}

/// Per (month, location) quantile of a reference series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileTable {
    pub alpha: f64,
    n_loc: usize,
    values: Vec<f64>,
}

impl QuantileTable {
    pub fn fit(months: &[u8], series: &[Vec<f64>], alpha: f64) -> Result<Self> {
        if months.len() != series.len() {
            return Err(Error::Shape(format!("{} months for {} rows", months.len(), series.len())));
        }
        let n_loc = series.first().map(Vec::len).unwrap_or(0);
        let mut values = vec![0.0; 12 * n_loc];
        let mut missing = Vec::new();
        for m in 1..=12u8 {
            let rows: Vec<&Vec<f64>> = months.iter().zip(series).filter(|(mm, _)| **mm == m).map(|(_, r)| r).collect();
            if rows.is_empty() {
                missing.push(m);
                continue;
            }
            for l in 0..n_loc {
                let column: Vec<f64> = rows.iter().map(|r| r[l]).collect();
                values[(m as usize - 1) * n_loc + l] = percentile_r7(&column, alpha).expect("nonempty");
            }
        }
        if !missing.is_empty() {
            return Err(Error::MissingMonths(missing));
        }
        Ok(Self { alpha, n_loc, values })
    }

    pub fn get(&self, month: u8, loc: usize) -> f64 {
        self.values[(month as usize - 1) * self.n_loc + loc]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    HistoricalAverage,
    EnsembleAverage,
    HistoricalQ90,
    EnsembleQ90,
}

/// A baseline together with the table it reads from, if any.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BaselinePredictor {
    HistoricalAverage(Climatology),
    EnsembleAverage,
    HistoricalQ90(QuantileTable),
    EnsembleQ90,
}

impl BaselinePredictor {
    pub fn kind(&self) -> BaselineKind {
        match self {
            BaselinePredictor::HistoricalAverage(_) => BaselineKind::HistoricalAverage,
            BaselinePredictor::EnsembleAverage => BaselineKind::EnsembleAverage,
            BaselinePredictor::HistoricalQ90(_) => BaselineKind::HistoricalQ90,
            BaselinePredictor::EnsembleQ90 => BaselineKind::EnsembleQ90,
        }
    }

    /// Prediction at one location. Historical kinds ignore `members`; ensemble
    /// kinds ignore `month` and `loc`.
    pub fn predict(&self, month: u8, loc: usize, members: &[f64]) -> f64 {
        match self {
            BaselinePredictor::HistoricalAverage(c) => predict_historical(c, month, loc),
            BaselinePredictor::EnsembleAverage => predict_ensemble_mean(members),
            BaselinePredictor::HistoricalQ90(q) => q.get(month, loc),
            BaselinePredictor::EnsembleQ90 => predict_ensemble_q90(members),
        }
    }
}

/// Remove the per (month, location) mean error measured against the truth
/// over the same period. This uses the test truth and is an oracle, not an
/// operational forecast.
pub fn oracle_debias(predictions: &[Vec<f64>], truth: &[Vec<f64>], months: &[u8]) -> Result<Vec<Vec<f64>>> {
    if predictions.len() != truth.len() || predictions.len() != months.len() {
        return Err(Error::Shape(format!(
            "{} predictions, {} truths, {} months",
            predictions.len(),
            truth.len(),
            months.len()
        )));
    }
    let n_loc = predictions.first().map(Vec::len).unwrap_or(0);
    let mut bias = vec![0.0; 12 * n_loc];
    let mut counts = [0usize; 12];
    for ((p, y), &m) in predictions.iter().zip(truth).zip(months) {
        if p.len() != n_loc || y.len() != n_loc {
            return Err(Error::Shape("ragged prediction rows".into()));
        }
        let base = (m as usize - 1) * n_loc;
        for l in 0..n_loc {
            bias[base + l] += p[l] - y[l];
        }
        counts[m as usize - 1] += 1;
    }
    let absent: Vec<u8> = (1..=12u8).filter(|m| counts[*m as usize - 1] == 0).collect();
    if !absent.is_empty() {
        log::warn!("oracle debias: months {absent:?} absent from the period; left unchanged");
    }
    for m in 0..12 {
        if counts[m] > 0 {
            bias[m * n_loc..(m + 1) * n_loc].iter_mut().for_each(|b| *b /= counts[m] as f64);
        }
    }
    Ok(predictions
        .iter()
        .zip(months)
        .map(|(p, &m)| {
            let base = (m as usize - 1) * n_loc;
            p.iter().enumerate().map(|(l, v)| v - bias[base + l]).collect()
        })
        .collect())
}
