//! Monthly climatologies and detrending.
//!
//! Series are laid out as one row per time step, each row holding one value
//! per location, alongside the calendar month (1..=12) of every row.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClimatologySource {
    Observed,
    Model,
}

/// Mean of a variable per (calendar month, location).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Climatology {
    n_loc: usize,
    /// `values[(m - 1) * n_loc + l]`
    values: Vec<f64>,
    source: ClimatologySource,
}

impl Climatology {
    pub fn from_series(months: &[u8], series: &[Vec<f64>], source: ClimatologySource) -> Result<Self> {
        if months.len() != series.len() {
            return Err(Error::Shape(format!("{} months for {} rows", months.len(), series.len())));
        }
        let n_loc = series.first().map(Vec::len).unwrap_or(0);
        let mut sums = vec![0.0; 12 * n_loc];
        let mut counts = [0usize; 12];
        for (&m, row) in months.iter().zip(series) {
            if !(1..=12).contains(&m) {
                return Err(Error::InvalidTime(format!("month {m}")));
            }
            if row.len() != n_loc {
                return Err(Error::Shape(format!("row with {} locations, expected {n_loc}", row.len())));
            }
            let base = (m as usize - 1) * n_loc;
            for (s, v) in sums[base..base + n_loc].iter_mut().zip(row) {
                *s += v;
            }
            counts[m as usize - 1] += 1;
        }
        let missing: Vec<u8> = (1..=12u8).filter(|m| counts[*m as usize - 1] == 0).collect();
        if !missing.is_empty() {
            return Err(Error::MissingMonths(missing));
        }
        for m in 0..12 {
            for s in &mut sums[m * n_loc..(m + 1) * n_loc] {
                *s /= counts[m] as f64;
            }
        }
        Ok(Self {
            n_loc,
            values: sums,
            source,
        })
    }

    pub fn get(&self, month: u8, loc: usize) -> f64 {
        self.values[(month as usize - 1) * self.n_loc + loc]
    }

    pub fn month_row(&self, month: u8) -> &[f64] {
        let base = (month as usize - 1) * self.n_loc;
        &self.values[base..base + self.n_loc]
    }

    pub fn n_locations(&self) -> usize {
        self.n_loc
    }

    pub fn source(&self) -> ClimatologySource {
        self.source
    }
}

/// Observed climatology `s[m, l]`: mean over all occurrences of each calendar
/// month in the reference series.
pub fn monthly_climatology(months: &[u8], series: &[Vec<f64>]) -> Result<Climatology> {
    Climatology::from_series(months, series, ClimatologySource::Observed)
}

/// Model climatology from a model's predictions over the training period.
pub fn model_climatology(months: &[u8], predictions: &[Vec<f64>]) -> Result<Climatology> {
    Climatology::from_series(months, predictions, ClimatologySource::Model)
}

/// Subtract `s[m(t), l]` from every value.
pub fn detrend(values: &[Vec<f64>], months: &[u8], clim: &Climatology) -> Result<Vec<Vec<f64>>> {
    shift(values, months, clim, -1.0)
}

/// Inverse of [`detrend`].
pub fn add_back(values: &[Vec<f64>], months: &[u8], clim: &Climatology) -> Result<Vec<Vec<f64>>> {
    shift(values, months, clim, 1.0)
}

fn shift(values: &[Vec<f64>], months: &[u8], clim: &Climatology, sign: f64) -> Result<Vec<Vec<f64>>> {
    if values.len() != months.len() {
        return Err(Error::Shape(format!("{} months for {} rows", months.len(), values.len())));
    }
    values
        .iter()
        .zip(months)
        .map(|(row, &m)| {
            if !(1..=12).contains(&m) {
                return Err(Error::MissingMonths(vec![m]));
            }
            if row.len() != clim.n_loc {
                return Err(Error::Shape(format!("row with {} locations, climatology has {}", row.len(), clim.n_loc)));
            }
            Ok(row.iter().zip(clim.month_row(m)).map(|(v, s)| v + sign * s).collect())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn months(n: usize) -> Vec<u8> {
        (0..n).map(|t| (t % 12) as u8 + 1).collect()
    }

    #[test]
    fn january_means() {
        let m = months(24);
        let mut series: Vec<Vec<f64>> = (0..24).map(|_| vec![0.0]).collect();
        series[0][0] = 5.0;
        series[12][0] = 5.0;
        assert_eq!(monthly_climatology(&m, &series).unwrap().get(1, 0), 5.0);
        series[0][0] = 2.0;
        series[12][0] = 4.0;
        assert_eq!(monthly_climatology(&m, &series).unwrap().get(1, 0), 3.0);
    }

    #[test]
    fn missing_marches_listed() {
        let (m, s): (Vec<u8>, Vec<Vec<f64>>) = months(24).into_iter().filter(|&m| m != 3).map(|m| (m, vec![1.0])).unzip();
        match monthly_climatology(&m, &s) {
            Err(Error::MissingMonths(v)) => assert_eq!(v, vec![3]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn model_climatology_examples() {
        let m = months(24);
        let constant: Vec<Vec<f64>> = (0..24).map(|_| vec![7.0, 7.0]).collect();
        let c = model_climatology(&m, &constant).unwrap();
        assert!((1..=12).all(|mm| c.get(mm, 1) == 7.0));
        assert_eq!(c.source(), ClimatologySource::Model);

        let alternating: Vec<Vec<f64>> = m.iter().map(|&mm| vec![if mm <= 6 { 1.0 } else { 3.0 }]).collect();
        let c = model_climatology(&m, &alternating).unwrap();
        assert_eq!(c.get(1, 0), 1.0);
        assert_eq!(c.get(7, 0), 3.0);
    }

    #[test]
    fn shifted_predictions_shift_climatology() {
        // Stationary truth; predictions offset by b. Oracle: direct per-month means.
        let m = months(36);
        let truth: Vec<Vec<f64>> = (0..36).map(|t| vec![(t as f64 * 0.37).sin(), (t as f64).cos()]).collect();
        let b = 2.5;
        let preds: Vec<Vec<f64>> = truth.iter().map(|r| r.iter().map(|v| v + b).collect()).collect();
        let s = monthly_climatology(&m, &truth).unwrap();
        let s_hat = model_climatology(&m, &preds).unwrap();
        for mm in 1..=12u8 {
            for l in 0..2 {
                let direct: f64 = (0..36).filter(|&t| m[t] == mm).map(|t| preds[t][l]).sum::<f64>() / 3.0;
                assert!((s_hat.get(mm, l) - direct).abs() < 1e-12);
                assert!((s_hat.get(mm, l) - (s.get(mm, l) + b)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn detrend_examples() {
        let m = months(12);
        let s: Vec<Vec<f64>> = (0..12).map(|t| vec![t as f64 * 1.5]).collect();
        let clim = monthly_climatology(&m, &s).unwrap();
        assert!(detrend(&s, &m, &clim).unwrap().iter().all(|r| r[0] == 0.0));
        let plus1: Vec<Vec<f64>> = s.iter().map(|r| vec![r[0] + 1.0]).collect();
        assert!(detrend(&plus1, &m, &clim).unwrap().iter().all(|r| r[0] == 1.0));
        assert!(detrend(&s, &[13; 12], &clim).is_err());
    }

    proptest! {
        #[test]
        fn detrend_add_back_identity(vals in proptest::collection::vec(-1e3f64..1e3, 36)) {
            let m = months(12);
            let series: Vec<Vec<f64>> = vals.chunks(3).map(|c| c.to_vec()).collect();
            let clim = monthly_climatology(&m, &series).unwrap();
            let back = add_back(&detrend(&series, &m, &clim).unwrap(), &m, &clim).unwrap();
            for (a, b) in back.iter().flatten().zip(series.iter().flatten()) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }
    }
}
