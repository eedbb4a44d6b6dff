//! Evaluation of a fitted forecaster on one split, as a self-describing
//! JSON report.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use ssf_core::baselines::oracle_debias;
use ssf_core::preprocess::climatology::{model_climatology, monthly_climatology};
use ssf_core::preprocess::lags::MAX_LAG;
use ssf_core::{DataView, Dataset, Split};
use ssf_models::forecaster::{fit_thresholds, truth_land};
use ssf_models::{AnyForecaster, Forecaster, Task};

use crate::error::{Error, Result};
use crate::metrics::{mse_report, quantile_loss_report, r2_per_location, tercile_accuracy, LocationGrid, R2Convention};

pub const SE_CAVEAT: &str = "Standard errors treat land locations as independent samples; they should be used with caution since there are significant spatial correlations.";

/// Climatology subtracted from predictions before computing R².
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Detrending {
    /// Model climatology for raw ensemble statistics, observed otherwise.
    #[default]
    Auto,
    Observed,
    Model,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub r2_convention: R2Convention,
    pub detrending: Detrending,
    /// Remove the per (month, location) bias measured on the evaluated
    /// split's own truth. A diagnostic that peeks at the answers.
    pub oracle_debias: bool,
    pub seed: Option<u64>,
    pub manifest_hash: Option<String>,
    pub catalog_hash: Option<String>,
    pub variant: Option<String>,
    /// Where the model's training data came from.
    pub trained_on: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    #[serde(flatten)]
    pub task: Task,
    pub split: Split,
    pub first_step: usize,
    pub last_step: usize,
    pub n_steps: usize,
    pub variant: Option<String>,
    pub seed: Option<u64>,
    pub catalog_hash: Option<String>,
    pub manifest_hash: Option<String>,
    pub trained_on: Option<String>,
    pub detrending: Option<Detrending>,
    pub r2_convention: R2Convention,
    pub oracle_debiased: bool,
    pub n_lat: usize,
    pub n_lon: usize,
    /// Grid cell id of each land location, in metric order.
    pub land_cells: Vec<usize>,
    pub metrics: BTreeMap<String, LocationGrid>,
    pub notes: Vec<String>,
    pub caveat: String,
}

impl EvalReport {
    pub fn metric(&self, name: &str) -> Result<&LocationGrid> {
        self.metrics.get(name).ok_or_else(|| Error::Invalid(format!("report has no metric '{name}'")))
    }

    /// Land-average of a metric.
    pub fn mean(&self, name: &str) -> Result<f64> {
        self.metric(name)?.mean().ok_or_else(|| Error::Invalid(format!("metric '{name}' is undefined everywhere")))
    }

    /// Name of the task's headline metric.
    pub fn primary_metric(&self) -> &'static str {
        primary_metric(self.task)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

pub fn primary_metric(task: Task) -> &'static str {
    match task {
        Task::Regression => "mse",
        Task::Quantile { .. } => "pinball",
        Task::Tercile => "accuracy",
    }
}

/// Steps of `view` with a complete lag history; every model is scored on
/// the same steps.
pub fn scored_steps(view: &DataView) -> Vec<usize> {
    view.times().filter(|&t| t >= MAX_LAG).collect()
}

fn truth_series(view: &DataView, times: &[usize]) -> Result<Vec<Vec<f64>>> {
    Ok(times.iter().map(|&t| truth_land(view, t)).collect::<ssf_models::Result<Vec<_>>>()?)
}

/// Score `model` on `split` of `ds`. Climatologies and tercile thresholds
/// come from the training split.
pub fn evaluate<F: Forecaster + ?Sized>(model: &F, ds: &Dataset, split: Split, opts: &EvalOptions) -> Result<EvalReport> {
    let view = DataView::of_split(ds, split)?;
    let times = scored_steps(&view);
    if times.is_empty() {
        return Err(Error::Config(format!("the {split:?} split has no step with a full lag history")));
    }
    let train = DataView::of_split(ds, Split::Train)?;
    let train_times: Vec<usize> = train.times().collect();
    let months: Vec<u8> = times.iter().map(|&t| view.month_of(t)).collect();
    let truth = truth_series(&view, &times)?;
    let mut pred = model.predict(&view, &times)?;
    let mut notes = Vec::new();
    let task = model.task();
    if opts.oracle_debias {
        if task == Task::Tercile {
            return Err(Error::Config("oracle debiasing applies to continuous forecasts only".into()));
        }
        pred = oracle_debias(&pred, &truth, &months)?;
        notes.push("predictions debiased with the evaluated split's own truth (oracle diagnostic)".into());
    }

    let mut metrics = BTreeMap::new();
    let mut detrending = None;
    match task {
        Task::Regression => {
            metrics.insert("mse".to_string(), mse_report(&truth, &pred)?);
            let train_months: Vec<u8> = train_times.iter().map(|&t| train.month_of(t)).collect();
            let observed = monthly_climatology(&train_months, &truth_series(&train, &train_times)?)?;
            let mode = match opts.detrending {
                Detrending::Auto if model.id() == "ensmean" => Detrending::Model,
                Detrending::Auto => Detrending::Observed,
                other => other,
            };
            let pred_clim = match mode {
                Detrending::Model => {
                    let fitted: Vec<usize> = scored_steps(&train);
                    let fitted_months: Vec<u8> = fitted.iter().map(|&t| train.month_of(t)).collect();
                    model_climatology(&fitted_months, &model.predict(&train, &fitted)?)?
                }
                _ => observed.clone(),
            };
            detrending = Some(mode);
            metrics.insert("r2".to_string(), r2_per_location(&truth, &pred, &months, &observed, &pred_clim, opts.r2_convention)?);
        }
        Task::Quantile { alpha } => {
            metrics.insert("pinball".to_string(), quantile_loss_report(&truth, &pred, alpha)?);
        }
        Task::Tercile => {
            let thresholds = fit_thresholds(&train, &train_times)?;
            let labels: Vec<Vec<f64>> = truth
                .iter()
                .zip(&months)
                .map(|(row, &m)| row.iter().enumerate().map(|(l, &y)| if y.is_finite() { thresholds.label(y, m, l) as f64 } else { f64::NAN }).collect())
                .collect();
            metrics.insert("accuracy".to_string(), tercile_accuracy(&labels, &pred)?);
        }
    }
    for (name, grid) in &metrics {
        if grid.n_undefined > 0 {
            notes.push(format!("{name}: {} land location(s) undefined and excluded from aggregates", grid.n_undefined));
        }
    }
    if split != Split::Train {
        notes.push(format!("scored on the {split:?} split; thresholds and climatologies come from the training split"));
    }
    let grid = ds.grid;
    Ok(EvalReport {
        model_id: model.id(),
        task,
        split,
        first_step: times[0],
        last_step: times[times.len() - 1],
        n_steps: times.len(),
        variant: opts.variant.clone(),
        seed: opts.seed,
        catalog_hash: opts.catalog_hash.clone(),
        manifest_hash: opts.manifest_hash.clone(),
        trained_on: opts.trained_on.clone(),
        detrending,
        r2_convention: opts.r2_convention,
        oracle_debiased: opts.oracle_debias,
        n_lat: grid.n_lat,
        n_lon: grid.n_lon,
        land_cells: ds.mask.land_locations().to_vec(),
        metrics,
        notes,
        caveat: SE_CAVEAT.into(),
    })
}

/// [`evaluate`] for a model record, embedding its feature catalog hash.
pub fn evaluate_model(model: &AnyForecaster, ds: &Dataset, split: Split, opts: &EvalOptions) -> Result<EvalReport> {
    let opts = EvalOptions {
        catalog_hash: opts.catalog_hash.clone().or_else(|| model.catalog_hash()),
        ..opts.clone()
    };
    evaluate(model, ds, split, &opts)
}
