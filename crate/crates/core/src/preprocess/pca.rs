//! Principal components of sea surface temperatures.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    mean: Vec<f64>,
    /// One row of length `n_points` per component.
    components: Vec<Vec<f64>>,
    singular_values: Vec<f64>,
    total_variance: f64,
}

impl PcaModel {
    /// Fit on a `months × points` matrix given as rows.
    ///
    /// The number of components may not exceed `min(months, points)`. Beyond
    /// the numerical rank the extra components span the null space and carry
    /// zero variance.
    pub fn fit(rows: &[Vec<f64>], n_components: usize) -> Result<Self> {
        let n_rows = rows.len();
        let n_points = rows.first().map(Vec::len).unwrap_or(0);
        if n_rows == 0 || n_points == 0 {
            return Err(Error::InsufficientSamples("empty SST matrix".into()));
        }
        if rows.iter().any(|r| r.len() != n_points) {
            return Err(Error::Shape("ragged SST matrix".into()));
        }
        let max_rank = n_rows.min(n_points);
        if n_components == 0 || n_components > max_rank {
            return Err(Error::RankDeficient {
                requested: n_components,
                rank: max_rank,
            });
        }
        let mut mean = vec![0.0; n_points];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n_rows as f64);
        let centered = DMatrix::from_fn(n_rows, n_points, |i, j| rows[i][j] - mean[j]);
        let total_variance = centered.iter().map(|v| v * v).sum::<f64>();
        let svd = centered.svd(false, true);
        let v_t = svd.v_t.ok_or_else(|| Error::NonFinite("SVD did not converge".into()))?;
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
        let mut components = Vec::with_capacity(n_components);
        let mut singular_values = Vec::with_capacity(n_components);
        for &k in order.iter().take(n_components) {
            let mut c: Vec<f64> = v_t.row(k).iter().copied().collect();
            // Fix the sign so the entry of largest magnitude is positive.
            let pivot = c.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
            if pivot < 0.0 {
                c.iter_mut().for_each(|v| *v = -*v);
            }
            components.push(c);
            singular_values.push(svd.singular_values[k]);
        }
        Ok(Self {
            mean,
            components,
            singular_values,
            total_variance,
        })
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn n_points(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    /// Fraction of the training variance carried by each component.
    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        self.singular_values
            .iter()
            .map(|s| if self.total_variance > 0.0 { s * s / self.total_variance } else { 0.0 })
            .collect()
    }

    /// Scores of one row: `(row - mean) · componentsᵀ`.
    pub fn transform(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.n_points() {
            return Err(Error::Shape(format!("row of {} points, model has {}", row.len(), self.n_points())));
        }
        Ok(self
            .components
            .iter()
            .map(|c| c.iter().zip(row).zip(&self.mean).map(|((w, x), m)| w * (x - m)).sum())
            .collect())
    }

    pub fn reconstruct(&self, scores: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (s, c) in scores.iter().zip(&self.components) {
            for (o, w) in out.iter_mut().zip(c) {
                *o += s * w;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rows(rng: &mut ChaCha8Rng, m: usize, p: usize) -> Vec<Vec<f64>> {
        (0..m).map(|_| (0..p).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect()
    }

    #[test]
    fn rank_one_matrix() {
        let u: Vec<f64> = (0..10).map(|i| 1.0 + i as f64).collect();
        let v: Vec<f64> = (0..12).map(|j| (j as f64 * 0.7).sin()).collect();
        let rows: Vec<Vec<f64>> = u.iter().map(|a| v.iter().map(|b| a * b).collect()).collect();
        let pca = PcaModel::fit(&rows, 8).unwrap();
        let ratio = pca.explained_variance_ratio();
        assert!((ratio[0] - 1.0).abs() < 1e-10);
        for r in &rows {
            let s = pca.transform(r).unwrap();
            assert!(s[1..].iter().all(|x| x.abs() < 1e-8), "{s:?}");
        }
        let mean = pca.mean().to_vec();
        assert!(pca.transform(&mean).unwrap().iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn too_many_components() {
        let rows = vec![vec![1.0, 2.0, 3.0], vec![2.0, 1.0, 0.0]];
        assert!(matches!(PcaModel::fit(&rows, 3), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn orthonormal_components() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pca = PcaModel::fit(&random_rows(&mut rng, 30, 20), 8).unwrap();
        for (a, ca) in pca.components().iter().enumerate() {
            for (b, cb) in pca.components().iter().enumerate() {
                let dot: f64 = ca.iter().zip(cb).map(|(x, y)| x * y).sum();
                assert!((dot - if a == b { 1.0 } else { 0.0 }).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn scores_match_covariance_eigendecomposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows = random_rows(&mut rng, 5, 4);
        let pca = PcaModel::fit(&rows, 2).unwrap();

        let mean: Vec<f64> = (0..4).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / 5.0).collect();
        let x = DMatrix::from_fn(5, 4, |i, j| rows[i][j] - mean[j]);
        let cov = x.transpose() * &x / 4.0;
        let eig = SymmetricEigen::new(cov);
        let mut idx: Vec<usize> = (0..4).collect();
        idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        for (c, &k) in idx.iter().take(2).enumerate() {
            let vec = eig.eigenvectors.column(k);
            for (i, r) in rows.iter().enumerate() {
                let oracle: f64 = (0..4).map(|j| (r[j] - mean[j]) * vec[j]).sum();
                let score = pca.transform(r).unwrap()[c];
                assert!((score.abs() - oracle.abs()).abs() < 1e-8, "row {i} comp {c}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn reconstruction_matches_truncated_svd(seed in 0u64..1000, m in 3usize..10, p in 3usize..10, n in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows = random_rows(&mut rng, m, p);
            let n = n.min(m.min(p));
            let pca = PcaModel::fit(&rows, n).unwrap();
            let err: f64 = rows.iter().map(|r| {
                let back = pca.reconstruct(&pca.transform(r).unwrap());
                back.iter().zip(r).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            }).sum();
            // Eckart-Young: the best rank-n error is the sum of the trailing squared singular values.
            let mean: Vec<f64> = (0..p).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / m as f64).collect();
            let x = DMatrix::from_fn(m, p, |i, j| rows[i][j] - mean[j]);
            let gram = SymmetricEigen::new(x.transpose() * &x);
            let mut ev: Vec<f64> = gram.eigenvalues.iter().map(|v| v.max(0.0)).collect();
            ev.sort_by(|a, b| b.total_cmp(a));
            let oracle: f64 = ev[n..].iter().sum();
            prop_assert!(err <= oracle + 1e-8 * (1.0 + oracle));
        }
    }
}
