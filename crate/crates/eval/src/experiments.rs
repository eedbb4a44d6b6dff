//! Experiment harnesses: bootstrap stability, feature ablations, grouped
//! feature importance and regional summaries.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use ssf_core::preprocess::features::{EnsembleMode, FeatureConfig, LocationMode, Paradigm};
use ssf_core::{DataView, Dataset, Split};
use ssf_models::{AnyForecaster, Forecaster, ModelSpec};

use crate::error::{Error, Result};
use crate::metrics::Aggregates;
use crate::report::{evaluate, evaluate_model, scored_steps, EvalOptions, EvalReport};

/// Something that can produce a fresh, unfitted model for a run seed.
pub trait Trainer: Sync {
    fn id(&self) -> String;
    fn build(&self, seed: u64) -> ssf_models::Result<Box<dyn Forecaster>>;
}

impl Trainer for ModelSpec {
    fn id(&self) -> String {
        self.model.to_string()
    }

    fn build(&self, seed: u64) -> ssf_models::Result<Box<dyn Forecaster>> {
        let spec = ModelSpec { seed, ..self.clone() };
        Ok(Box::new(spec.build()?))
    }
}

/// Fit `spec` on every step of the training split.
pub fn fit_on_train(spec: &ModelSpec, ds: &Dataset) -> Result<AnyForecaster> {
    let mut model = spec.build()?;
    let train = DataView::of_split(ds, Split::Train)?;
    let times: Vec<usize> = train.times().collect();
    model.fit(&train, &times)?;
    Ok(model)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub runs: usize,
    /// Time steps drawn with replacement per run.
    pub sample_size: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            runs: 50,
            sample_size: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSeries {
    pub model_id: String,
    pub metric: String,
    /// Test score per run; `None` where the run failed.
    pub scores: Vec<Option<f64>>,
    pub failures: Vec<(usize, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub config: BootstrapConfig,
    /// Training steps drawn for each run.
    pub draws: Vec<Vec<usize>>,
    pub models: Vec<BootstrapSeries>,
}

/// Steps drawn with replacement from `pool`, one independent stream per run.
pub fn bootstrap_draws(config: &BootstrapConfig, pool: &[usize]) -> Vec<Vec<usize>> {
    (0..config.runs)
        .map(|run| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(run as u64);
            (0..config.sample_size).map(|_| pool[rng.gen_range(0..pool.len())]).collect()
        })
        .collect()
}

/// Retrain every model on bootstrap resamples of the training steps and
/// score each run on the test split. Tabular models see all land rows of
/// the drawn steps, spatial models the drawn maps. A failing run is
/// recorded and the experiment continues.
pub fn bootstrap_experiment(trainers: &[&dyn Trainer], ds: &Dataset, config: &BootstrapConfig) -> Result<BootstrapResult> {
    let train = DataView::of_split(ds, Split::Train)?;
    let pool = scored_steps(&train);
    if pool.is_empty() {
        return Err(Error::Config("the training split has no step with a full lag history".into()));
    }
    if config.sample_size == 0 {
        return Err(Error::Config("bootstrap sample size must be positive".into()));
    }
    let draws = bootstrap_draws(config, &pool);
    let jobs: Vec<(usize, usize)> = (0..trainers.len()).flat_map(|m| (0..config.runs).map(move |r| (m, r))).collect();
    let outcomes: Vec<Result<(&'static str, f64)>> = jobs
        .par_iter()
        .map(|&(m, run)| {
            let mut model = trainers[m].build(config.seed.wrapping_add(run as u64))?;
            model.fit(&train, &draws[run])?;
            let report = evaluate(model.as_ref(), ds, Split::Test, &EvalOptions::default())?;
            let metric = report.primary_metric();
            Ok((metric, report.mean(metric)?))
        })
        .collect();
    let mut models: Vec<BootstrapSeries> = trainers
        .iter()
        .map(|t| BootstrapSeries {
            model_id: t.id(),
            metric: String::new(),
            scores: Vec::with_capacity(config.runs),
            failures: Vec::new(),
        })
        .collect();
    for (&(m, run), outcome) in jobs.iter().zip(outcomes) {
        match outcome {
            Ok((metric, score)) => {
                models[m].metric = metric.to_string();
                models[m].scores.push(Some(score));
            }
            Err(e) => {
                log::warn!("bootstrap run {run} of {} failed: {e}", models[m].model_id);
                models[m].scores.push(None);
                models[m].failures.push((run, e.to_string()));
            }
        }
    }
    Ok(BootstrapResult { config: *config, draws, models })
}

/// Feature swaps compared by the ablation harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    FullEnsemble,
    EnsembleMeanOnly,
    SortedEnsemble,
    Pe,
    Latlon,
    NoLocation,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::FullEnsemble,
        Variant::EnsembleMeanOnly,
        Variant::SortedEnsemble,
        Variant::Pe,
        Variant::Latlon,
        Variant::NoLocation,
    ];

    pub fn apply(self, features: FeatureConfig) -> FeatureConfig {
        let mut f = features;
        match self {
            Variant::FullEnsemble => f.ensemble = EnsembleMode::Full,
            Variant::EnsembleMeanOnly => f.ensemble = EnsembleMode::Mean,
            Variant::SortedEnsemble => f.ensemble = EnsembleMode::Sorted,
            Variant::Pe => f.location = LocationMode::Pe,
            Variant::Latlon => f.location = LocationMode::LatLon,
            Variant::NoLocation => f.location = LocationMode::None,
        }
        f
    }

    /// `spec` with this variant's features; errors when the swap is not
    /// valid for the spec's paradigm.
    pub fn spec(self, spec: &ModelSpec) -> Result<ModelSpec> {
        let mut out = spec.clone();
        out.features = self.apply(spec.features);
        out.features.validate(out.paradigm)?;
        out.validate()?;
        Ok(out)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::FullEnsemble => "full-ensemble",
            Variant::EnsembleMeanOnly => "ensemble-mean-only",
            Variant::SortedEnsemble => "sorted-ensemble",
            Variant::Pe => "pe",
            Variant::Latlon => "latlon",
            Variant::NoLocation => "no-location",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation variant '{s}'")))
    }
}

/// Train the variant of `spec` on the training split and report on each of
/// `splits`, tagged with the variant.
pub fn ablation_run(variant: Variant, spec: &ModelSpec, ds: &Dataset, splits: &[Split], base: &EvalOptions) -> Result<Vec<EvalReport>> {
    let spec = variant.spec(spec)?;
    let model = fit_on_train(&spec, ds)?;
    let opts = EvalOptions {
        variant: Some(variant.to_string()),
        seed: Some(spec.seed),
        trained_on: Some("train".into()),
        ..base.clone()
    };
    splits.iter().map(|&s| evaluate_model(&model, ds, s, &opts)).collect()
}

/// [`ablation_run`] over several variants in parallel.
pub fn ablation_suite(variants: &[Variant], spec: &ModelSpec, ds: &Dataset, splits: &[Split], base: &EvalOptions) -> Result<Vec<Vec<EvalReport>>> {
    for v in variants {
        v.spec(spec)?;
    }
    variants.par_iter().map(|&v| ablation_run(v, spec, ds, splits, base)).collect()
}

/// Aggregates of every metric in `report` restricted to the land cells in
/// `region` (grid cell ids).
pub fn region_metrics(report: &EvalReport, region: &[usize]) -> Result<BTreeMap<String, Aggregates>> {
    if region.is_empty() {
        return Err(Error::Config("empty region".into()));
    }
    let mut keep = vec![false; report.land_cells.len()];
    for cell in region {
        let pos = report
            .land_cells
            .iter()
            .position(|c| c == cell)
            .ok_or_else(|| Error::Config(format!("region cell {cell} is not a land location")))?;
        keep[pos] = true;
    }
    report
        .metrics
        .iter()
        .map(|(name, grid)| {
            let agg = grid.restricted(&keep)?.ok_or_else(|| Error::Invalid(format!("{name} is undefined throughout the region")))?;
            Ok((name.clone(), agg))
        })
        .collect()
}

/// Land cells within a latitude-index by longitude-index box.
pub fn box_region(ds: &Dataset, lat: std::ops::Range<usize>, lon: std::ops::Range<usize>) -> Vec<usize> {
    let n_lon = ds.grid.n_lon;
    ds.mask
        .land_locations()
        .iter()
        .copied()
        .filter(|&c| lat.contains(&(c / n_lon)) && lon.contains(&(c % n_lon)))
        .collect()
}

/// The cumulative feature groups: ensemble members, then lagged targets,
/// climate covariates and SST components. Location features follow the
/// paradigm's default throughout.
pub fn cumulative_groups(paradigm: Paradigm) -> Vec<(String, FeatureConfig)> {
    let full = FeatureConfig::full(paradigm);
    let mut f = FeatureConfig {
        lags: false,
        covariates: false,
        sst_pcs: 0,
        ..full
    };
    let mut out = vec![("ensemble".to_string(), f)];
    f.lags = true;
    out.push(("+lags".into(), f));
    f.covariates = true;
    out.push(("+covariates".into(), f));
    f.sst_pcs = full.sst_pcs;
    out.push(("+sst".into(), f));
    out
}

/// Retrain `spec` on each feature group and report on the validation split.
pub fn grouped_feature_importance(spec: &ModelSpec, groups: &[(String, FeatureConfig)], ds: &Dataset) -> Result<Vec<EvalReport>> {
    groups
        .par_iter()
        .map(|(name, features)| {
            let spec = ModelSpec { features: *features, ..spec.clone() };
            let model = fit_on_train(&spec, ds)?;
            let opts = EvalOptions {
                variant: Some(name.clone()),
                seed: Some(spec.seed),
                trained_on: Some("train".into()),
                ..EvalOptions::default()
            };
            evaluate_model(&model, ds, Split::Val, &opts)
        })
        .collect()
}
