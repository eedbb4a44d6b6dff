//! Ordinary least squares, linear quantile regression and multinomial
//! logistic regression on row-major design matrices.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::{pinball, Task};
use ssf_core::stats::percentile_r7;

/// Linear predictor. Regression and quantile models have one output; the
/// tercile model has three (below, near, above) combined by softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub task: Task,
    /// One coefficient vector per output, in feature order.
    pub weights: Vec<Vec<f64>>,
    pub intercepts: Vec<f64>,
}

impl LinearModel {
    pub fn n_features(&self) -> usize {
        self.weights[0].len()
    }

    fn score(&self, k: usize, row: &[f64]) -> f64 {
        self.intercepts[k] + self.weights[k].iter().zip(row).map(|(w, x)| w * x).sum::<f64>()
    }

    pub fn check_row(&self, row: &[f64]) -> Result<()> {
        if row.len() != self.n_features() {
            return Err(Error::FeatureCount {
                found: row.len(),
                expected: self.n_features(),
            });
        }
        Ok(())
    }

    /// Point prediction (first output).
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.score(0, row)
    }

    /// Class probabilities for a tercile model.
    pub fn predict_proba(&self, row: &[f64]) -> [f64; 3] {
        softmax([self.score(0, row), self.score(1, row), self.score(2, row)])
    }

    /// Plain-text serialization: one `key value...` line per field, preceded
    /// by the feature catalog hash.
    pub fn to_text(&self, catalog_hash: &str) -> String {
        let mut s = format!("catalog_hash {catalog_hash}\ntask {}\n", self.task);
        for (k, (w, b)) in self.weights.iter().zip(&self.intercepts).enumerate() {
            s.push_str(&format!("intercept_{k} {b:.17e}\nweights_{k}"));
            for v in w {
                s.push_str(&format!(" {v:.17e}"));
            }
            s.push('\n');
        }
        s
    }
}

pub(crate) fn softmax(z: [f64; 3]) -> [f64; 3] {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = z.map(|v| (v - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}

fn check_design(x: &[f64], n_cols: usize, y_len: usize, what: &'static str) -> Result<usize> {
    if n_cols == 0 && !x.is_empty() || n_cols > 0 && x.len() % n_cols != 0 {
        return Err(Error::shape(what, format!("{} values for {n_cols} columns", x.len())));
    }
    let n = if n_cols == 0 { y_len } else { x.len() / n_cols };
    if n != y_len {
        return Err(Error::shape(what, format!("{n} rows but {y_len} targets")));
    }
    if n == 0 {
        return Err(Error::Config(format!("{what}: no training rows")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput(what));
    }
    Ok(n)
}

fn column_means(x: &[f64], n_cols: usize, n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n_cols];
    for row in x.chunks(n_cols.max(1)).take(n) {
        for (a, v) in m.iter_mut().zip(row) {
            *a += v;
        }
    }
    m.iter_mut().for_each(|a| *a /= n as f64);
    m
}

/// Least squares with an unpenalized intercept:
/// `min Σ (y - Xθ - θ0)² + λ‖θ‖²`.
///
/// The normal equations are solved by Cholesky; when the system is not
/// numerically positive definite the minimum-norm SVD solution is used.
pub fn ols_fit(x: &[f64], n_cols: usize, y: &[f64], ridge: f64) -> Result<LinearModel> {
    let n = check_design(x, n_cols, y.len(), "ols")?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("ols"));
    }
    if !(ridge >= 0.0) {
        return Err(Error::Config(format!("ridge penalty {ridge} must be nonnegative")));
    }
    let x_mean = column_means(x, n_cols, n);
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let xc = DMatrix::from_fn(n, n_cols, |i, j| x[i * n_cols + j] - x_mean[j]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    let xt = xc.transpose();
    let mut gram = &xt * &xc;
    for j in 0..n_cols {
        gram[(j, j)] += ridge;
    }
    let rhs = &xt * &yc;
    let max_diag = (0..n_cols).map(|j| gram[(j, j)]).fold(0.0f64, f64::max);
    let theta = match gram.clone().cholesky() {
        Some(ch) if well_conditioned(ch.l_dirty(), max_diag) => ch.solve(&rhs),
        _ => {
            let svd = xc.svd(true, true);
            let tol = svd.singular_values.max() * 1e-10;
            if ridge == 0.0 {
                svd.solve(&yc, tol).map_err(|e| Error::Invalid(e.to_string()))?
            } else {
                let g = gram.svd(true, true);
                let tol = g.singular_values.max() * 1e-12;
                g.solve(&rhs, tol).map_err(|e| Error::Invalid(e.to_string()))?
            }
        }
    };
    let weights: Vec<f64> = theta.iter().copied().collect();
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFiniteInput("ols solution"));
    }
    let intercept = y_mean - weights.iter().zip(&x_mean).map(|(w, m)| w * m).sum::<f64>();
    Ok(LinearModel {
        task: Task::Regression,
        weights: vec![weights],
        intercepts: vec![intercept],
    })
}

fn well_conditioned(l: &DMatrix<f64>, max_diag: f64) -> bool {
    let min_pivot = (0..l.nrows()).map(|j| l[(j, j)] * l[(j, j)]).fold(f64::INFINITY, f64::min);
    l.nrows() == 0 || (min_pivot.is_finite() && min_pivot > 1e-10 * max_diag.max(f64::MIN_POSITIVE))
}

/// Options for [`linear_qr_fit`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantileFitParams {
    pub max_epochs: usize,
    /// Initial step size in standardized units; decays as `1/√(epoch+1)`.
    pub step: f64,
    /// Stop when the best loss improves by less than this over
    /// `patience` epochs.
    pub tolerance: f64,
    pub patience: usize,
}

impl Default for QuantileFitParams {
    fn default() -> Self {
        Self {
            max_epochs: 5000,
            step: 0.5,
            tolerance: 1e-8,
            patience: 50,
        }
    }
}

/// Per-column standardization used by the iterative fits.
struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    fn fit(x: &[f64], n_cols: usize, n: usize) -> Self {
        let mean = column_means(x, n_cols, n);
        let mut var = vec![0.0; n_cols];
        for row in x.chunks(n_cols.max(1)).take(n) {
            for j in 0..n_cols {
                var[j] += (row[j] - mean[j]).powi(2);
            }
        }
        // Constant columns get scale 0 and are ignored.
        let scale = var.iter().map(|v| if *v > 0.0 { 1.0 / (v / n as f64).sqrt() } else { 0.0 }).collect();
        Self { mean, scale }
    }

    fn apply(&self, x: &[f64], n_cols: usize) -> Vec<f64> {
        let mut out = x.to_vec();
        for row in out.chunks_mut(n_cols.max(1)) {
            for j in 0..n_cols {
                row[j] = (row[j] - self.mean[j]) * self.scale[j];
            }
        }
        out
    }

    /// Map standardized weights and intercept back to raw features.
    fn unscale(&self, w: &[f64], b: f64) -> (Vec<f64>, f64) {
        let raw: Vec<f64> = w.iter().zip(&self.scale).map(|(w, s)| w * s).collect();
        let b = b - raw.iter().zip(&self.mean).map(|(w, m)| w * m).sum::<f64>();
        (raw, b)
    }
}

/// Linear quantile regression by subgradient descent (keeping the best iterate) on the mean
/// pinball loss, starting from the empirical `alpha`-quantile intercept.
pub fn linear_qr_fit(x: &[f64], n_cols: usize, y: &[f64], alpha: f64, params: &QuantileFitParams) -> Result<LinearModel> {
    let task = Task::quantile(alpha).map_err(|e| Error::Config(e.to_string()))?;
    let n = check_design(x, n_cols, y.len(), "linear quantile regression")?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("linear quantile regression"));
    }
    let std = Standardizer::fit(x, n_cols, n);
    let xs = std.apply(x, n_cols);
    let q0 = percentile_r7(y, alpha).expect("nonempty");
    let spread = ssf_core::stats::std_dev(y);
    let y_scale = if spread > 0.0 { spread } else { 1.0 };
    let z: Vec<f64> = y.iter().map(|v| (v - q0) / y_scale).collect();

    let dim = n_cols + 1;
    let mut theta = vec![0.0; dim]; // intercept last
    let mut best_theta = theta.clone();
    let mut grad = vec![0.0; dim];
    let loss_of = |t: &[f64]| -> f64 {
        (0..n)
            .map(|i| {
                let row = &xs[i * n_cols..(i + 1) * n_cols];
                let pred = t[n_cols] + row.iter().zip(t).map(|(a, b)| a * b).sum::<f64>();
                pinball(z[i] - pred, alpha)
            })
            .sum::<f64>()
            / n as f64
    };
    let mut best = loss_of(&theta);
    let mut best_epoch = 0;
    for epoch in 0..params.max_epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            let row = &xs[i * n_cols..(i + 1) * n_cols];
            let pred = theta[n_cols] + row.iter().zip(&theta).map(|(a, b)| a * b).sum::<f64>();
            let r = z[i] - pred;
            let psi = if r > 0.0 {
                alpha
            } else if r < 0.0 {
                alpha - 1.0
            } else {
                0.0
            };
            for (g, v) in grad.iter_mut().zip(row) {
                *g -= psi * v;
            }
            grad[n_cols] -= psi;
        }
        let eta = params.step / ((epoch + 1) as f64).sqrt();
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t -= eta * g / n as f64;
        }
        let loss = loss_of(&theta);
        if !loss.is_finite() {
            return Err(Error::Diverged { step: params.step });
        }
        if loss < best {
            if loss < best - params.tolerance {
                best_epoch = epoch;
            }
            best = loss;
            best_theta.copy_from_slice(&theta);
        } else if epoch - best_epoch >= params.patience {
            break;
        }
    }
    let w_std: Vec<f64> = best_theta[..n_cols].iter().map(|w| w * y_scale).collect();
    let (weights, intercept) = std.unscale(&w_std, best_theta[n_cols] * y_scale + q0);
    Ok(LinearModel {
        task,
        weights: vec![weights],
        intercepts: vec![intercept],
    })
}

/// Options for [`logistic_fit`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticParams {
    pub l2: f64,
    pub max_iter: usize,
    pub gradient_tolerance: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            max_iter: 2000,
            gradient_tolerance: 1e-7,
        }
    }
}

/// Multinomial logistic regression on labels in {-1, 0, 1}, by gradient
/// descent on the mean cross-entropy with an L2 penalty on the weights.
pub fn logistic_fit(x: &[f64], n_cols: usize, labels: &[i8], params: &LogisticParams) -> Result<LinearModel> {
    let n = check_design(x, n_cols, labels.len(), "logistic regression")?;
    for class in [-1i8, 0, 1] {
        if !labels.contains(&class) {
            return Err(Error::MissingClass(class));
        }
    }
    if labels.iter().any(|c| !(-1..=1).contains(c)) {
        return Err(Error::Config("tercile labels must be -1, 0 or 1".into()));
    }
    let std = Standardizer::fit(x, n_cols, n);
    let xs = std.apply(x, n_cols);
    let lr = 2.0 / (n_cols as f64 + 1.0);
    let mut w = vec![vec![0.0; n_cols]; 3];
    let mut b = [0.0; 3];
    let mut gw = vec![vec![0.0; n_cols]; 3];
    for _ in 0..params.max_iter {
        gw.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v = 0.0));
        let mut gb = [0.0; 3];
        for i in 0..n {
            let row = &xs[i * n_cols..(i + 1) * n_cols];
            let scores = [0, 1, 2].map(|k| b[k] + w[k].iter().zip(row).map(|(a, v)| a * v).sum::<f64>());
            let p = softmax(scores);
            let target = (labels[i] + 1) as usize;
            for k in 0..3 {
                let d = p[k] - if k == target { 1.0 } else { 0.0 };
                gb[k] += d;
                for (g, v) in gw[k].iter_mut().zip(row) {
                    *g += d * v;
                }
            }
        }
        let mut norm2 = 0.0;
        for k in 0..3 {
            gb[k] /= n as f64;
            norm2 += gb[k] * gb[k];
            for (g, wk) in gw[k].iter_mut().zip(&w[k]) {
                *g = *g / n as f64 + params.l2 * wk;
                norm2 += *g * *g;
            }
        }
        if !norm2.is_finite() {
            return Err(Error::Diverged { step: lr });
        }
        if norm2.sqrt() < params.gradient_tolerance {
            break;
        }
        for k in 0..3 {
            b[k] -= lr * gb[k];
            for (wk, g) in w[k].iter_mut().zip(&gw[k]) {
                *wk -= lr * g;
            }
        }
    }
    let mut weights = Vec::with_capacity(3);
    let mut intercepts = Vec::with_capacity(3);
    for k in 0..3 {
        let (wr, br) = std.unscale(&w[k], b[k]);
        weights.push(wr);
        intercepts.push(br);
    }
    Ok(LinearModel {
        task: Task::Tercile,
        weights,
        intercepts,
    })
}

/// Models fitted independently per location. A location whose fit fails gets
/// `fallback` instead, and the failure is recorded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerLocation<M> {
    pub models: Vec<M>,
    pub failures: Vec<(usize, String)>,
}

impl<M> PerLocation<M> {
    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

/// Run `fit` for every location in parallel; output order follows input order.
pub fn per_location_fit<D, M, F, G>(data: &[D], fit: F, fallback: G) -> Result<PerLocation<M>>
where
    D: Sync,
    M: Send,
    F: Fn(&D) -> Result<M> + Sync,
    G: Fn(&D) -> Result<M> + Sync,
{
    let results: Vec<std::result::Result<M, (String, Result<M>)>> = data
        .par_iter()
        .map(|d| fit(d).map_err(|e| (e.to_string(), fallback(d))))
        .collect();
    let mut models = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (l, r) in results.into_iter().enumerate() {
        match r {
            Ok(m) => models.push(m),
            Err((msg, fb)) => {
                log::warn!("location {l}: {msg}; using fallback");
                failures.push((l, msg.clone()));
                models.push(fb.map_err(|_| Error::Locations(vec![(l, msg)]))?);
            }
        }
    }
    Ok(PerLocation { models, failures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn normal(rng: &mut ChaCha8Rng) -> f64 {
        rng.sample(StandardNormal)
    }

    #[test]
    fn ols_recovers_line() {
        let x: Vec<f64> = (0..20).map(|i| i as f64 * 0.3).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let m = ols_fit(&x, 1, &y, 0.0).unwrap();
        assert!((m.weights[0][0] - 2.0).abs() < 1e-8);
        assert!((m.intercepts[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn ols_duplicated_column_matches_pseudoinverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 15;
        let base: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let other: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|i| 3.0 * base[i] - other[i] + 0.1 * normal(&mut rng)).collect();
        let dup: Vec<f64> = (0..n).flat_map(|i| [base[i], base[i], other[i], 1.0]).collect();
        let plain: Vec<f64> = (0..n).flat_map(|i| [base[i], other[i]]).collect();
        let m_dup = ols_fit(&dup, 4, &y, 0.0).unwrap();
        let m_plain = ols_fit(&plain, 2, &y, 0.0).unwrap();
        // Oracle: Moore-Penrose solution on the design with an explicit intercept column.
        let a = DMatrix::from_fn(n, 5, |i, j| if j == 4 { 1.0 } else { dup[i * 4 + j] });
        let pinv = a.clone().pseudo_inverse(1e-12).unwrap();
        let theta = pinv * DVector::from_vec(y.clone());
        for i in 0..n {
            let oracle: f64 = (0..5).map(|j| a[(i, j)] * theta[j]).sum();
            let ours = m_dup.predict(&dup[i * 4..i * 4 + 4]);
            assert!((ours - oracle).abs() < 1e-9);
            assert!((ours - m_plain.predict(&plain[i * 2..i * 2 + 2])).abs() < 1e-9);
        }
        // Minimum norm splits the duplicated coefficient evenly.
        assert!((m_dup.weights[0][0] - m_dup.weights[0][1]).abs() < 1e-9);
    }

    #[test]
    fn heavy_ridge_shrinks_to_mean() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [2.0, 1.0, 5.0, 8.0];
        let m = ols_fit(&x, 1, &y, 1e12).unwrap();
        assert!(m.weights[0][0].abs() < 1e-9);
        assert!((m.intercepts[0] - 4.0).abs() < 1e-8);
        assert!(ols_fit(&[f64::NAN], 1, &[1.0], 0.0).is_err());
    }

    #[test]
    fn ols_residuals_orthogonal_to_design() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let (n, p) = (40, 5);
            let x: Vec<f64> = (0..n * p).map(|_| normal(&mut rng)).collect();
            let y: Vec<f64> = (0..n).map(|_| normal(&mut rng) * 3.0).collect();
            let m = ols_fit(&x, p, &y, 0.0).unwrap();
            let y_norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            for j in 0..p {
                let dot: f64 = (0..n).map(|i| x[i * p + j] * (y[i] - m.predict(&x[i * p..(i + 1) * p]))).sum();
                assert!(dot.abs() < 1e-6 * y_norm);
            }
        }
    }

    #[test]
    fn intercept_only_quantile() {
        let y: Vec<f64> = (1..=100).map(f64::from).collect();
        let m = linear_qr_fit(&[], 0, &y, 0.9, &QuantileFitParams::default()).unwrap();
        let oracle = {
            let mut s = y.clone();
            s.sort_by(f64::total_cmp);
            let h: f64 = 0.9 * 99.0;
            s[h as usize] + (h - h.floor()) * (s[h as usize + 1] - s[h as usize])
        };
        assert!((m.intercepts[0] - oracle).abs() <= 0.5, "{}", m.intercepts[0]);
    }

    #[test]
    fn median_regression_on_collinear_points() {
        // Three collinear points: every least-absolute-deviation line passes
        // through two of them; enumerate the candidates.
        let x = [0.0, 1.0, 2.0];
        let y = [1.0, 3.0, 5.0];
        let m = linear_qr_fit(&x, 1, &y, 0.5, &QuantileFitParams::default()).unwrap();
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for a in 0..3 {
            for b in a + 1..3 {
                let slope = (y[b] - y[a]) / (x[b] - x[a]);
                let icpt = y[a] - slope * x[a];
                let lad: f64 = (0..3).map(|i| (y[i] - icpt - slope * x[i]).abs()).sum();
                if lad < best.0 {
                    best = (lad, slope, icpt);
                }
            }
        }
        assert!((m.weights[0][0] - best.1).abs() < 0.02, "{:?}", m);
        assert!((m.intercepts[0] - best.2).abs() < 0.02);
    }

    #[test]
    fn noiseless_identity_any_level() {
        let x: Vec<f64> = (0..50).map(|i| i as f64 / 5.0).collect();
        for alpha in [0.1, 0.5, 0.9] {
            let m = linear_qr_fit(&x, 1, &x, alpha, &QuantileFitParams::default()).unwrap();
            assert!((m.weights[0][0] - 1.0).abs() < 0.02, "alpha {alpha}: {m:?}");
        }
        assert!(linear_qr_fit(&x, 1, &x, 1.2, &QuantileFitParams::default()).is_err());
    }

    #[test]
    fn median_slope_close_to_ols_under_symmetric_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..3 {
            let n = 200;
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let y: Vec<f64> = x.iter().map(|v| 1.5 * v + 0.5 + normal(&mut rng)).collect();
            let ols = ols_fit(&x, 1, &y, 0.0).unwrap();
            let med = linear_qr_fit(&x, 1, &y, 0.5, &QuantileFitParams::default()).unwrap();
            let resid: f64 = (0..n).map(|i| (y[i] - ols.predict(&[x[i]])).powi(2)).sum::<f64>() / (n - 2) as f64;
            let sxx: f64 = {
                let mx = x.iter().sum::<f64>() / n as f64;
                x.iter().map(|v| (v - mx).powi(2)).sum()
            };
            let se = (resid / sxx).sqrt();
            assert!((med.weights[0][0] - ols.weights[0][0]).abs() < 3.0 * se);
        }
    }

    #[test]
    fn logistic_separable_and_uninformative() {
        let x: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let labels: Vec<i8> = (0..30).map(|i| if i < 10 { -1 } else if i < 20 { 0 } else { 1 }).collect();
        let m = logistic_fit(&x, 1, &labels, &LogisticParams::default()).unwrap();
        for (i, &lab) in labels.iter().enumerate() {
            let p = m.predict_proba(&[x[i]]);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let arg = (0..3).max_by(|&a, &b| p[a].total_cmp(&p[b]).then(b.cmp(&a))).unwrap();
            assert_eq!(arg as i8 - 1, lab);
        }

        let zeros = vec![0.0; 40];
        let labels: Vec<i8> = (0..40).map(|i| if i < 8 { -1 } else if i < 20 { 0 } else { 1 }).collect();
        let m = logistic_fit(&zeros, 1, &labels, &LogisticParams::default()).unwrap();
        let p = m.predict_proba(&[0.0]);
        for (pk, freq) in p.iter().zip([8.0 / 40.0, 12.0 / 40.0, 20.0 / 40.0]) {
            assert!((pk - freq).abs() < 1e-3, "{p:?}");
        }
        assert!(matches!(logistic_fit(&zeros[..2], 1, &[0, 1], &LogisticParams::default()), Err(Error::MissingClass(-1))));
    }

    #[test]
    fn softmax_argmax_shift_invariant() {
        let z = [0.3, -1.2, 2.0];
        let p = softmax(z);
        let q = softmax(z.map(|v| v + 50.0));
        for k in 0..3 {
            assert!((p[k] - q[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn per_location_is_deterministic() {
        let loc = (vec![1.0, 2.0, 3.0, 4.0], vec![1.0, 3.0, 2.0, 5.0]);
        let data = vec![loc.clone(), loc];
        let fitted = per_location_fit(&data, |(x, y)| ols_fit(x, 1, y, 0.0), |(x, y)| ols_fit(x, 0, y, 0.0)).unwrap();
        assert_eq!(fitted.len(), 2);
        assert_eq!(fitted.models[0], fitted.models[1]);
        let bad = vec![(vec![f64::NAN], vec![1.0]), (vec![1.0], vec![2.0])];
        let fitted = per_location_fit(&bad, |(x, y)| ols_fit(x, 1, y, 0.0), |(_, y)| ols_fit(&[], 0, y, 0.0)).unwrap();
        assert_eq!(fitted.failures.len(), 1);
        assert_eq!(fitted.failures[0].0, 0);
    }

    #[test]
    fn text_serialization_carries_hash() {
        let m = ols_fit(&[1.0, 2.0, 3.0], 1, &[2.0, 4.0, 6.0], 0.0).unwrap();
        let text = m.to_text("abc123");
        assert!(text.starts_with("catalog_hash abc123\ntask regression\n"));
        let line = text.lines().find(|l| l.starts_with("weights_0")).unwrap();
        let w: f64 = line.split_whitespace().nth(1).unwrap().parse().unwrap();
        assert!((w - 2.0).abs() < 1e-12);
    }
}
