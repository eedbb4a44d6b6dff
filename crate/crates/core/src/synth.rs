//! Seeded synthetic stand-in for hindcast/forecast archives.
//!
//! Truth is a seasonal cycle plus a predictable part driven by three latent
//! AR(1) climate modes (seen two months ahead through covariates and SSTs), a
//! rectified nonlinear response to the first mode, a small trend and smooth
//! unpredictable noise. Ensemble member `k` is truth plus a fixed bias map
//! `bias[k] * B(l)`, smooth noise scaled by `member_noise * member_noise_weights[k]`,
//! and `drift` during the test period.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Covariate, Dataset, SstSeries, TargetKind};
use crate::error::{Error, Result};
use crate::grid::{EnsembleField, GridSpec, LandMask, SpatialField, TimeIndex, YearMonth};

const N_MODES: usize = 3;
const MODE_PERSISTENCE: f64 = 0.7;
/// Covariates and SSTs are available this many months before the target.
pub use crate::preprocess::lags::AVAILABILITY_LAG;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_lat: usize,
    pub n_lon: usize,
    pub land_fraction: f64,
    pub start: YearMonth,
    pub months: usize,
    pub train_end: usize,
    pub val_end: usize,
    /// Ensemble size `K`.
    pub k: usize,
    /// Per-member bias amplitude (target units); length `k`.
    pub member_bias: Vec<f64>,
    /// Member noise scale (target units).
    pub member_noise: f64,
    /// Per-member multiplier on `member_noise`; length `k`.
    pub member_noise_weights: Vec<f64>,
    pub seasonal_amplitude: f64,
    /// Gaussian kernel width of the smooth noise, in cells.
    pub correlation_length: f64,
    /// Additive bias applied to every member during the test period only.
    pub drift: f64,
    /// Strength of the latent-mode signal in truth.
    pub signal: f64,
    /// Strength of the rectified nonlinear response.
    pub nonlinear: f64,
    /// Standard deviation of the unpredictable part of truth.
    pub unpredictable: f64,
    /// Linear trend in target units per year.
    pub trend: f64,
    pub n_covariates: usize,
    pub sst_points: usize,
    pub target_kind: TargetKind,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_lat: 16,
            n_lon: 32,
            land_fraction: 0.6,
            start: YearMonth { year: 1985, month: 1 },
            months: 240,
            train_end: 144,
            val_end: 180,
            k: 8,
            member_bias: vec![1.0, -0.5, 0.8, 0.3, -0.7, 0.6, 1.2, -0.2],
            member_noise: 1.0,
            member_noise_weights: vec![0.35, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6, 1.8],
            seasonal_amplitude: 2.0,
            correlation_length: 2.0,
            drift: 0.0,
            signal: 0.7,
            nonlinear: 0.6,
            unpredictable: 0.8,
            trend: 0.01,
            n_covariates: 4,
            sst_points: 64,
            target_kind: TargetKind::Precipitation,
            seed: 7,
        }
    }
}

impl SynthConfig {
    /// Resize the per-member vectors to `k`, cycling the current values.
    pub fn with_members(mut self, k: usize) -> Self {
        let cycle = |v: &[f64], fill: f64| -> Vec<f64> {
            if v.is_empty() {
                vec![fill; k]
            } else {
                (0..k).map(|i| v[i % v.len()]).collect()
            }
        };
        self.member_bias = cycle(&self.member_bias, 0.0);
        self.member_noise_weights = cycle(&self.member_noise_weights, 1.0);
        self.k = k;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_lat == 0 || self.n_lon == 0 {
            return bad("grid must be non-empty".into());
        }
        if !(self.land_fraction > 0.0 && self.land_fraction <= 1.0) {
            return bad(format!("land_fraction {} not in (0, 1]", self.land_fraction));
        }
        if self.months < AVAILABILITY_LAG + 1 {
            return bad(format!(
                "months = {} is shorter than the {AVAILABILITY_LAG}-month availability lag",
                self.months
            ));
        }
        if self.k == 0 {
            return bad("need at least one ensemble member".into());
        }
        if self.member_bias.len() != self.k || self.member_noise_weights.len() != self.k {
            return bad(format!(
                "member_bias ({}) and member_noise_weights ({}) must have k = {} entries",
                self.member_bias.len(),
                self.member_noise_weights.len(),
                self.k
            ));
        }
        if self.member_noise < 0.0 || self.member_noise_weights.iter().any(|w| *w < 0.0) {
            return bad("noise scales must be non-negative".into());
        }
        if self.correlation_length < 0.0 {
            return bad("correlation_length must be non-negative".into());
        }
        if self.train_end == 0 || self.train_end >= self.val_end || self.val_end > self.months {
            return bad(format!(
                "split ({}, {}) invalid for {} months",
                self.train_end, self.val_end, self.months
            ));
        }
        Ok(())
    }
}

/// Independent random stream per component so that changing one knob does not
/// reshuffle the others.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Smooth unit-variance random field: white noise convolved with a truncated
/// Gaussian kernel of width `len` cells (separable, valid-mode on a padded
/// domain so edges keep full variance).
pub fn smooth_noise(rng: &mut ChaCha8Rng, n_lat: usize, n_lon: usize, len: f64) -> Vec<f64> {
    if len <= 0.0 {
        return (0..n_lat * n_lon).map(|_| normal(rng)).collect();
    }
    let r = (3.0 * len).ceil() as usize;
    let kernel: Vec<f64> = (0..=2 * r)
        .map(|i| {
            let d = i as f64 - r as f64;
            (-0.5 * d * d / (len * len)).exp()
        })
        .collect();
    let ksum: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|w| w / ksum).collect();
    // Standard deviation of the 2-D separable filter output for unit white noise.
    let scale = kernel.iter().map(|w| w * w).sum::<f64>();

    let (h, w) = (n_lat + 2 * r, n_lon + 2 * r);
    let white: Vec<f64> = (0..h * w).map(|_| normal(rng)).collect();
    let mut rows = vec![0.0; h * n_lon];
    for i in 0..h {
        for j in 0..n_lon {
            rows[i * n_lon + j] = kernel.iter().enumerate().map(|(d, k)| k * white[i * w + j + d]).sum();
        }
    }
    let mut out = vec![0.0; n_lat * n_lon];
    for i in 0..n_lat {
        for j in 0..n_lon {
            out[i * n_lon + j] = kernel.iter().enumerate().map(|(d, k)| k * rows[(i + d) * n_lon + j]).sum::<f64>() / scale;
        }
    }
    out
}

fn standardize(v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
    let sd = if sd > 0.0 { sd } else { 1.0 };
    v.iter_mut().for_each(|x| *x = (*x - m) / sd);
}

fn land_mask(cfg: &SynthConfig, grid: GridSpec) -> Result<LandMask> {
    let mut rng = stream(cfg.seed, 1);
    let mut score = smooth_noise(&mut rng, cfg.n_lat, cfg.n_lon, 2.0 * cfg.correlation_length.max(1.0));
    // Favor a central continent.
    for i in 0..cfg.n_lat {
        for j in 0..cfg.n_lon {
            let di = (i as f64 + 0.5) / cfg.n_lat as f64 - 0.5;
            let dj = (j as f64 + 0.5) / cfg.n_lon as f64 - 0.5;
            score[i * cfg.n_lon + j] -= 2.0 * (di * di + dj * dj);
        }
    }
    let n = score.len();
    let n_land = ((cfg.land_fraction * n as f64).round() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b)));
    let mut is_land = vec![false; n];
    for &id in &order[..n_land] {
        is_land[id] = true;
    }
    LandMask::new(grid, is_land)
}

fn covariate_meta(p: usize, target: TargetKind) -> (String, String, f64) {
    let other = match target {
        TargetKind::Precipitation => ("tmp2m", "degC", 12.0),
        TargetKind::Temperature => ("precip", "mm", 3.0),
    };
    let base = [("rhum", "%", 60.0), ("slp", "hPa", 1013.0), ("hgt500", "m", 5600.0), other];
    match base.get(p) {
        Some((n, u, o)) => (n.to_string(), u.to_string(), *o),
        None => (format!("cov{p}"), "1".into(), 0.0),
    }
}

/// Generate a dataset. A pure function of `cfg`.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let grid = GridSpec::new(cfg.n_lat, cfg.n_lon, 25.0, 235.0, 1.0)?;
    let n_cells = grid.n_cells();
    let mask = land_mask(cfg, grid)?;
    let time = TimeIndex::monthly(cfg.start, cfg.months, cfg.train_end, cfg.val_end)?;
    let len = cfg.correlation_length;
    let smooth = |rng: &mut ChaCha8Rng| smooth_noise(rng, cfg.n_lat, cfg.n_lon, len);

    // Static spatial structure.
    let mut rng = stream(cfg.seed, 2);
    let base: Vec<f64> = smooth(&mut rng).iter().map(|z| 3.0 + 0.8 * z).collect();
    let amp: Vec<f64> = smooth(&mut rng).iter().map(|z| cfg.seasonal_amplitude * (1.0 + 0.3 * z.tanh())).collect();
    let phase: Vec<f64> = smooth(&mut rng).iter().map(|z| 0.5 * z).collect();
    let patterns: Vec<Vec<f64>> = (0..N_MODES)
        .map(|_| {
            let mut p = smooth(&mut rng);
            standardize(&mut p);
            p
        })
        .collect();
    let mut nl_pattern = smooth(&mut rng);
    standardize(&mut nl_pattern);
    let bias_pattern: Vec<f64> = smooth(&mut rng).iter().map(|z| 1.0 + 0.5 * z).collect();

    // Latent modes, with burn-in so that t - AVAILABILITY_LAG is defined at t = 0.
    let mut rng = stream(cfg.seed, 3);
    let n_modes_t = cfg.months + AVAILABILITY_LAG;
    let innov = (1.0 - MODE_PERSISTENCE * MODE_PERSISTENCE).sqrt();
    let mut modes = vec![[0.0; N_MODES]; n_modes_t];
    let mut state = [0.0; N_MODES];
    for s in state.iter_mut() {
        *s = normal(&mut rng);
    }
    for row in modes.iter_mut() {
        for (j, s) in state.iter_mut().enumerate() {
            *s = MODE_PERSISTENCE * *s + innov * normal(&mut rng);
            row[j] = *s;
        }
    }
    // modes index of calendar step t is t + AVAILABILITY_LAG.
    let mode_at = |t: usize| &modes[t + AVAILABILITY_LAG];
    let mode_lagged = |t: usize| &modes[t];

    // Truth.
    let mut rng = stream(cfg.seed, 4);
    let mut truth = Vec::with_capacity(cfg.months);
    for t in 0..cfg.months {
        let m = time.month_of(t);
        let a = mode_lagged(t);
        let eps = smooth(&mut rng);
        let years = t as f64 / 12.0;
        let angle = 2.0 * PI * (m as f64 - 1.0) / 12.0;
        let rect = a[0].max(0.0) - 0.4;
        let values: Vec<f64> = (0..n_cells)
            .map(|l| {
                let seasonal = base[l] + amp[l] * (angle + phase[l]).sin();
                let linear: f64 = (0..N_MODES).map(|j| a[j] * patterns[j][l]).sum();
                seasonal
                    + cfg.signal * linear / (N_MODES as f64).sqrt()
                    + cfg.nonlinear * rect * nl_pattern[l]
                    + cfg.trend * years
                    + cfg.unpredictable * eps[l]
            })
            .collect();
        truth.push(values);
    }
    let land = mask.cells().to_vec();
    let target: Vec<SpatialField> = truth
        .iter()
        .map(|v| SpatialField::new(v.clone(), land.iter().map(|&l| !l).collect()))
        .collect::<Result<_>>()?;

    // Ensemble members.
    let mut ensemble = Vec::with_capacity(cfg.months);
    for t in 0..cfg.months {
        let drift = if t >= cfg.val_end { cfg.drift } else { 0.0 };
        let mut members = Vec::with_capacity(cfg.k);
        for k in 0..cfg.k {
            let mut rng = stream(cfg.seed, 100 + (t * cfg.k + k) as u64);
            let noise = smooth(&mut rng);
            let sigma = cfg.member_noise * cfg.member_noise_weights[k];
            let values: Vec<f64> = (0..n_cells)
                .map(|l| truth[t][l] + cfg.member_bias[k] * bias_pattern[l] + sigma * noise[l] + drift)
                .collect();
            members.push(SpatialField::new(values, land.iter().map(|&l| !l).collect())?);
        }
        ensemble.push(EnsembleField::new(members)?);
    }

    // Covariates observed at their own time; they carry the modes of that month.
    let mut covariates = Vec::with_capacity(cfg.n_covariates);
    for p in 0..cfg.n_covariates {
        let (name, units, offset) = covariate_meta(p, cfg.target_kind);
        let mut rng = stream(cfg.seed, 10 + p as u64);
        let loadings: Vec<Vec<f64>> = (0..N_MODES)
            .map(|_| {
                let mut f = smooth(&mut rng);
                standardize(&mut f);
                let w: f64 = normal(&mut rng);
                f.iter().map(|x| 0.5 * x + w).collect()
            })
            .collect();
        let scale = 1.0 + p as f64;
        let mut fields = Vec::with_capacity(cfg.months);
        for t in 0..cfg.months {
            let a = mode_at(t);
            let noise = smooth(&mut rng);
            let values: Vec<f64> = (0..n_cells)
                .map(|l| {
                    let s: f64 = (0..N_MODES).map(|j| a[j] * loadings[j][l]).sum();
                    offset + scale * (s + 0.5 * noise[l])
                })
                .collect();
            fields.push(SpatialField::complete(values)?);
        }
        covariates.push(Covariate { name, units, fields });
    }

    let sst = if cfg.sst_points > 0 {
        let mut rng = stream(cfg.seed, 50);
        let loadings: Vec<[f64; N_MODES]> = (0..cfg.sst_points)
            .map(|_| [normal(&mut rng), normal(&mut rng), normal(&mut rng)])
            .collect();
        let rows = (0..cfg.months)
            .map(|t| {
                let a = mode_at(t);
                loadings
                    .iter()
                    .map(|w| 15.0 + w.iter().zip(a).map(|(w, a)| w * a).sum::<f64>() + 0.3 * normal(&mut rng))
                    .collect()
            })
            .collect();
        Some(SstSeries {
            n_points: cfg.sst_points,
            rows,
        })
    } else {
        None
    };

    let (target_name, target_units) = match cfg.target_kind {
        TargetKind::Precipitation => ("precip", "mm"),
        TargetKind::Temperature => ("tmp2m", "degC"),
    };
    let ds = Dataset {
        grid,
        mask,
        time,
        target_name: target_name.into(),
        target_units: target_units.into(),
        target_kind: cfg.target_kind,
        target,
        ensemble_name: "synth".into(),
        ensemble,
        covariates,
        sst,
        lead_days: 14,
        seed: Some(cfg.seed),
    };
    ds.validate()?;
    Ok(ds)
}
