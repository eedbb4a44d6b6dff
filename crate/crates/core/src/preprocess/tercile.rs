//! Per-(month, location) tercile thresholds and class labels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::percentile_r7_sorted;

pub const LOWER_QUANTILE: f64 = 0.33;
pub const UPPER_QUANTILE: f64 = 0.66;
pub const MIN_REFERENCE_SAMPLES: usize = 3;

/// Ternary outlook class: below normal, near normal, above normal.
pub type TercileClass = i8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TercileThresholds {
    n_loc: usize,
    q33: Vec<f64>,
    q66: Vec<f64>,
}

impl TercileThresholds {
    /// Fit from a reference series laid out as one row of `n_loc` values per
    /// time step.
    pub fn fit(months: &[u8], series: &[Vec<f64>]) -> Result<Self> {
        if months.len() != series.len() {
            return Err(Error::Shape(format!("{} months for {} rows", months.len(), series.len())));
        }
        let n_loc = series.first().map(Vec::len).unwrap_or(0);
        let mut q33 = vec![0.0; 12 * n_loc];
        let mut q66 = vec![0.0; 12 * n_loc];
        for m in 1..=12u8 {
            let rows: Vec<&Vec<f64>> = months.iter().zip(series).filter(|(mm, _)| **mm == m).map(|(_, r)| r).collect();
            if rows.len() < MIN_REFERENCE_SAMPLES {
                return Err(Error::InsufficientSamples(format!(
                    "month {m} has {} reference samples, need {MIN_REFERENCE_SAMPLES}",
                    rows.len()
                )));
            }
            let base = (m as usize - 1) * n_loc;
            let mut column = Vec::with_capacity(rows.len());
            for l in 0..n_loc {
                column.clear();
                for r in &rows {
                    if r.len() != n_loc {
                        return Err(Error::Shape(format!("row with {} locations, expected {n_loc}", r.len())));
                    }
                    column.push(r[l]);
                }
                column.sort_by(f64::total_cmp);
                q33[base + l] = percentile_r7_sorted(&column, LOWER_QUANTILE);
                q66[base + l] = percentile_r7_sorted(&column, UPPER_QUANTILE);
            }
        }
        Ok(Self { n_loc, q33, q66 })
    }

    pub fn lower(&self, month: u8, loc: usize) -> f64 {
        self.q33[(month as usize - 1) * self.n_loc + loc]
    }

    pub fn upper(&self, month: u8, loc: usize) -> f64 {
        self.q66[(month as usize - 1) * self.n_loc + loc]
    }

    pub fn label(&self, value: f64, month: u8, loc: usize) -> TercileClass {
        tercile_label(value, self.lower(month, loc), self.upper(month, loc))
    }

    pub fn n_locations(&self) -> usize {
        self.n_loc
    }
}

/// -1 strictly below `q33`, +1 strictly above `q66`, otherwise 0.
pub fn tercile_label(value: f64, q33: f64, q66: f64) -> TercileClass {
    if value < q33 {
        -1
    } else if value > q66 {
        1
    } else {
        0
    }
}

/// Map a class to a 0-based index (below, near, above).
pub fn class_index(class: TercileClass) -> usize {
    (class + 1) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_percentile(values: &[f64], q: f64) -> f64 {
        let mut s = values.to_vec();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let pos = q * (s.len() as f64 - 1.0);
        let below = pos.floor() as usize;
        let frac = pos - below as f64;
        if below + 1 < s.len() {
            s[below] * (1.0 - frac) + s[below + 1] * frac
        } else {
            s[below]
        }
    }

    #[test]
    fn thirty_value_reference() {
        let months = vec![1u8; 30]
            .into_iter()
            .chain((2..=12u8).flat_map(|m| std::iter::repeat(m).take(3)))
            .collect::<Vec<_>>();
        let series: Vec<Vec<f64>> = (0..months.len()).map(|i| vec![if i < 30 { i as f64 + 1.0 } else { 0.0 }]).collect();
        let th = TercileThresholds::fit(&months, &series).unwrap();
        let reference: Vec<f64> = (1..=30).map(f64::from).collect();
        assert!((th.lower(1, 0) - brute_percentile(&reference, 0.33)).abs() < 1e-12);
        assert!((th.upper(1, 0) - brute_percentile(&reference, 0.66)).abs() < 1e-12);
        assert!((th.lower(1, 0) - 10.57).abs() < 1e-9);
        assert!((th.upper(1, 0) - 20.14).abs() < 1e-9);
        assert_eq!(th.label(5.0, 1, 0), -1);
        assert_eq!(th.label(th.lower(1, 0), 1, 0), 0);
        assert_eq!(th.label(th.upper(1, 0), 1, 0), 0);
        assert_eq!(th.label(25.0, 1, 0), 1);
    }

    #[test]
    fn degenerate_reference() {
        let months: Vec<u8> = (0..36).map(|t| (t % 12) as u8 + 1).collect();
        let series = vec![vec![2.0]; 36];
        let th = TercileThresholds::fit(&months, &series).unwrap();
        assert_eq!(th.lower(4, 0), th.upper(4, 0));
        assert_eq!(th.label(2.0, 4, 0), 0);
        assert!(matches!(
            TercileThresholds::fit(&months[..24], &series[..24]),
            Err(Error::InsufficientSamples(_))
        ));
    }

    #[test]
    fn stationary_sample_splits_into_thirds() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 3000;
        let months: Vec<u8> = (0..n).map(|t| (t % 12) as u8 + 1).collect();
        let reference: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen::<f64>()]).collect();
        let th = TercileThresholds::fit(&months, &reference).unwrap();
        let mut counts = [0usize; 3];
        for t in 0..n {
            let v: f64 = rng.gen();
            counts[class_index(th.label(v, months[t], 0))] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 1.0 / 3.0).abs() < 0.05, "{counts:?}");
        }
        assert!((1..=12).all(|m| th.lower(m, 0) <= th.upper(m, 0)));
    }
}
