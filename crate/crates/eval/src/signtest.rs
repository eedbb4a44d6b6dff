//! Paired one-sided sign test per location with a Bonferroni-corrected
//! global decision.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// `P(X >= wins)` for `X ~ Binomial(trials, 1/2)`, summed exactly in log
/// space from log-gamma binomial coefficients.
pub fn binomial_upper_tail(trials: u64, wins: u64) -> f64 {
    if wins == 0 {
        return 1.0;
    }
    if wins > trials {
        return 0.0;
    }
    let n = trials as f64;
    let ln_n_fact = ln_gamma(n + 1.0);
    let logs: Vec<f64> = (wins..=trials)
        .map(|k| {
            let k = k as f64;
            ln_n_fact - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0) - n * std::f64::consts::LN_2
        })
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total = top + logs.iter().map(|l| (l - top).exp()).sum::<f64>().ln();
    total.exp().clamp(0.0, 1.0)
}

/// Per-test level after Bonferroni correction over `n_tests` locations.
pub fn bonferroni_threshold(level: f64, n_tests: usize) -> f64 {
    level / n_tests as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignTestResult {
    /// Steps where model A's absolute error is strictly smaller.
    pub wins: Vec<usize>,
    /// Non-tied comparable steps.
    pub trials: Vec<usize>,
    pub ties: Vec<usize>,
    pub p_values: Vec<f64>,
    /// Locations without a single untied comparison (p = 1).
    pub no_data: Vec<usize>,
    pub level: f64,
    pub threshold: f64,
    pub min_p: f64,
    pub n_significant: usize,
    /// Whether A beats B at some location after correction.
    pub reject: bool,
}

/// `|prediction - truth|` per step and location.
pub fn abs_errors(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if pred.len() != truth.len() || pred.iter().zip(truth).any(|(p, y)| p.len() != y.len()) {
        return Err(Error::Shape("predictions and truth are not aligned".into()));
    }
    Ok(pred.iter().zip(truth).map(|(p, y)| p.iter().zip(y).map(|(a, b)| (a - b).abs()).collect()).collect())
}

/// Test, at every location, whether model A's absolute errors are smaller
/// than model B's more often than chance. Inputs are `[t][location]`; steps
/// where either error is missing or the errors tie are dropped.
pub fn sign_test(errors_a: &[Vec<f64>], errors_b: &[Vec<f64>], level: f64) -> Result<SignTestResult> {
    if errors_a.len() != errors_b.len() {
        return Err(Error::Shape(format!("{} vs {} steps", errors_a.len(), errors_b.len())));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("significance level {level} outside (0, 1)")));
    }
    let n_loc = errors_a.first().map_or(0, Vec::len);
    if n_loc == 0 || errors_a.iter().chain(errors_b).any(|r| r.len() != n_loc) {
        return Err(Error::Shape("error series must share a non-zero location count".into()));
    }
    let mut wins = vec![0; n_loc];
    let mut trials = vec![0; n_loc];
    let mut ties = vec![0; n_loc];
    for (a, b) in errors_a.iter().zip(errors_b) {
        for loc in 0..n_loc {
            let (ea, eb) = (a[loc], b[loc]);
            if !(ea.is_finite() && eb.is_finite()) {
                continue;
            }
            if ea == eb {
                ties[loc] += 1;
                continue;
            }
            trials[loc] += 1;
            if ea < eb {
                wins[loc] += 1;
            }
        }
    }
    let p_values: Vec<f64> = wins.iter().zip(&trials).map(|(&w, &n)| binomial_upper_tail(n as u64, w as u64)).collect();
    let no_data = (0..n_loc).filter(|&l| trials[l] == 0).collect();
    let threshold = bonferroni_threshold(level, n_loc);
    let min_p = p_values.iter().copied().fold(1.0, f64::min);
    let n_significant = p_values.iter().filter(|&&p| p < threshold).count();
    Ok(SignTestResult {
        wins,
        trials,
        ties,
        p_values,
        no_data,
        level,
        threshold,
        min_p,
        n_significant,
        reject: min_p < threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_wins_out_of_ten() {
        assert!((binomial_upper_tail(10, 10) - 2f64.powi(-10)).abs() < 1e-18);
        assert!((binomial_upper_tail(10, 10) - 9.766e-4).abs() < 1e-7);
    }

    #[test]
    fn half_wins_exceed_one_half() {
        for n in (2..40).step_by(2) {
            assert!(binomial_upper_tail(n, n / 2) > 0.5);
        }
        assert_eq!(binomial_upper_tail(5, 0), 1.0);
        assert_eq!(binomial_upper_tail(5, 6), 0.0);
    }

    #[test]
    fn ties_and_gaps_are_dropped() {
        let a = vec![vec![1.0, 1.0], vec![0.5, f64::NAN], vec![2.0, 0.0]];
        let b = vec![vec![1.0, 2.0], vec![1.0, 1.0], vec![1.0, 1.0]];
        let r = sign_test(&a, &b, 0.05).unwrap();
        assert_eq!(r.ties, vec![1, 0]);
        assert_eq!(r.trials, vec![2, 2]);
        assert_eq!(r.wins, vec![1, 2]);
        assert!((r.p_values[1] - 0.25).abs() < 1e-12);
        assert_eq!(r.threshold, 0.025);
    }

    #[test]
    fn location_without_comparisons_is_flagged() {
        let a = vec![vec![1.0, 0.0]];
        let b = vec![vec![1.0, 1.0]];
        let r = sign_test(&a, &b, 0.05).unwrap();
        assert_eq!(r.no_data, vec![0]);
        assert_eq!(r.p_values[0], 1.0);
    }

    #[test]
    fn clear_winner_rejects() {
        let a: Vec<Vec<f64>> = (0..40).map(|_| vec![0.1, 0.5]).collect();
        let b: Vec<Vec<f64>> = (0..40).map(|_| vec![0.2, 0.4]).collect();
        let r = sign_test(&a, &b, 0.05).unwrap();
        assert!(r.reject);
        assert_eq!(r.n_significant, 1);
        assert!(r.p_values[1] == 1.0);
        assert!(sign_test(&a, &b[..3], 0.05).is_err());
        assert!(sign_test(&a, &b, 0.0).is_err());
    }

    #[test]
    fn abs_errors_align() {
        assert_eq!(abs_errors(&[vec![1.0, -1.0]], &[vec![3.0, 1.0]]).unwrap(), vec![vec![2.0, 2.0]]);
        assert!(abs_errors(&[vec![1.0]], &[]).is_err());
    }
}
