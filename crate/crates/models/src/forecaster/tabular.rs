use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use ssf_core::preprocess::features::{FeatureConfig, FeaturePipeline, Paradigm};
use ssf_core::preprocess::tercile::TercileThresholds;
use ssf_core::stats::{mean, percentile_r7};
use ssf_core::{DataView, LandMask};

use super::{argmax_label, fit_thresholds, label_of, one_hot, truth_land, unfitted, Forecaster, LandProba, LandSeries, ModelKind};
use crate::error::{Error, Result};
use crate::forest::{qrf_fit, rf_fit, Forest, ForestParams, ForestTarget};
use crate::linear::{linear_qr_fit, logistic_fit, ols_fit, per_location_fit, LinearModel, LogisticParams, QuantileFitParams};
use crate::task::Task;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularHyper {
    pub ridge: f64,
    pub quantile: QuantileFitParams,
    pub logistic: LogisticParams,
    pub forest: ForestParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum TabModel {
    Linear(LinearModel),
    Forest(Forest),
    /// Stand-in for a location whose fit failed: the training target's
    /// mean or quantile, or its class frequencies.
    Constant { value: f64, proba: [f64; 3] },
}

/// Linear and forest models on tabular features, one pooled model
/// (conditional paradigm) or one model per land location (independent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularForecaster {
    kind: ModelKind,
    task: Task,
    paradigm: Paradigm,
    features: FeatureConfig,
    hyper: TabularHyper,
    pipeline: Option<FeaturePipeline>,
    thresholds: Option<TercileThresholds>,
    models: Vec<TabModel>,
    /// Locations that fell back to a constant model, with the reason.
    pub failures: Vec<(usize, String)>,
}

/// One location's (or the pooled) training rows.
struct Design {
    x: Vec<f64>,
    y: Vec<f64>,
    labels: Vec<i8>,
}

impl TabularForecaster {
    pub fn new(kind: ModelKind, task: Task, paradigm: Paradigm, features: FeatureConfig, hyper: TabularHyper) -> Result<Self> {
        if !kind.is_tabular() || !kind.supports(task) || paradigm == Paradigm::Spatial {
            return Err(Error::Config(format!("{kind} cannot be a tabular {task} model under the {paradigm} paradigm")));
        }
        features.validate(paradigm)?;
        Ok(Self {
            kind,
            task,
            paradigm,
            features,
            hyper,
            pipeline: None,
            thresholds: None,
            models: Vec::new(),
            failures: Vec::new(),
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn pipeline(&self) -> Option<&FeaturePipeline> {
        self.pipeline.as_ref()
    }

    pub fn prepare(&mut self, mask: &LandMask) -> Result<()> {
        match &mut self.pipeline {
            Some(p) => Ok(p.prepare(mask)?),
            None => Ok(()),
        }
    }

    /// Regression-style models answering the tercile task by thresholding.
    fn thresholded(&self) -> bool {
        self.task == Task::Tercile && self.kind == ModelKind::Lr
    }

    fn fit_one(&self, d: &Design, n_cols: usize) -> Result<TabModel> {
        let h = &self.hyper;
        Ok(match (self.kind, self.task) {
            (ModelKind::Lr, _) => TabModel::Linear(ols_fit(&d.x, n_cols, &d.y, h.ridge)?),
            (ModelKind::Linqr, Task::Quantile { alpha }) => TabModel::Linear(linear_qr_fit(&d.x, n_cols, &d.y, alpha, &h.quantile)?),
            (ModelKind::Logistic, _) => TabModel::Linear(logistic_fit(&d.x, n_cols, &d.labels, &h.logistic)?),
            (ModelKind::Rf, Task::Tercile) => {
                let classes: Vec<usize> = d.labels.iter().map(|&l| (l + 1) as usize).collect();
                TabModel::Forest(rf_fit(&d.x, n_cols, ForestTarget::Classification { labels: &classes, n_classes: 3 }, &h.forest)?)
            }
            (ModelKind::Rf, _) => TabModel::Forest(rf_fit(&d.x, n_cols, ForestTarget::Regression(&d.y), &h.forest)?),
            (ModelKind::Qrf, _) => TabModel::Forest(qrf_fit(&d.x, n_cols, &d.y, &h.forest)?),
            (kind, task) => return Err(Error::Config(format!("{kind} cannot fit task {task}"))),
        })
    }

    fn fallback(&self, d: &Design) -> TabModel {
        let value = match self.task {
            Task::Quantile { alpha } => percentile_r7(&d.y, alpha).unwrap_or(f64::NAN),
            _ if d.y.is_empty() => f64::NAN,
            _ => mean(&d.y),
        };
        let mut proba = [0.0; 3];
        for &l in &d.labels {
            proba[(l + 1) as usize] += 1.0 / d.labels.len() as f64;
        }
        if d.labels.is_empty() {
            proba = [f64::NAN; 3];
        }
        TabModel::Constant { value, proba }
    }

    /// Point output and class probabilities of one model for one
    /// normalized row.
    fn evaluate(&self, model: &TabModel, row: &[f64], month: u8, loc: usize) -> Result<(f64, [f64; 3])> {
        let value = match model {
            TabModel::Constant { value, proba } => {
                if self.task == Task::Tercile && self.kind != ModelKind::Lr {
                    return Ok((argmax_label(proba), *proba));
                }
                *value
            }
            TabModel::Linear(m) => {
                m.check_row(row)?;
                if self.kind == ModelKind::Logistic {
                    let p = m.predict_proba(row);
                    return Ok((argmax_label(&p), p));
                }
                m.predict(row)
            }
            TabModel::Forest(f) => match self.task {
                Task::Tercile => {
                    let p = f.predict_proba(row)?;
                    let p = [p[0], p[1], p[2]];
                    return Ok((f.predict_class(row)? as f64 - 1.0, p));
                }
                Task::Quantile { alpha } => f.qrf_predict(row, alpha)?,
                Task::Regression => f.predict(row)?,
            },
        };
        if self.thresholded() {
            let label = label_of(self.thresholds.as_ref(), value, month, loc)?;
            return Ok((label, one_hot(label)));
        }
        Ok((value, [f64::NAN; 3]))
    }

    fn outputs(&self, view: &DataView, times: &[usize]) -> Result<Vec<Vec<(f64, [f64; 3])>>> {
        let pipeline = self.pipeline.as_ref().ok_or_else(|| unfitted("feature pipeline"))?;
        let norm = pipeline.normalization().ok_or_else(|| unfitted("normalization"))?;
        if self.models.is_empty() {
            return Err(unfitted("tabular model"));
        }
        times
            .par_iter()
            .map(|&t| {
                let month = view.month_of(t);
                pipeline
                    .rows_at(view, t)?
                    .into_iter()
                    .enumerate()
                    .map(|(loc, row)| {
                        let Some(mut row) = row else {
                            return Ok((f64::NAN, [f64::NAN; 3]));
                        };
                        norm.apply(&mut row)?;
                        let model = if self.models.len() == 1 { &self.models[0] } else { &self.models[loc] };
                        self.evaluate(model, &row, month, loc)
                    })
                    .collect()
            })
            .collect()
    }
}

impl Forecaster for TabularForecaster {
    fn id(&self) -> String {
        self.kind.to_string()
    }

    fn task(&self) -> Task {
        self.task
    }

    fn fit(&mut self, view: &DataView, times: &[usize]) -> Result<()> {
        let mut pipeline = FeaturePipeline::fit(view, self.features, self.paradigm)?;
        pipeline.fit_normalization(view, times)?;
        let thresholds = match self.task {
            Task::Tercile => Some(fit_thresholds(view, times)?),
            _ => None,
        };
        let matrix = pipeline.assemble_pooled(view, times, true)?;
        let mut truth: HashMap<usize, Vec<f64>> = HashMap::new();
        for key in &matrix.keys {
            if !truth.contains_key(&key.t) {
                truth.insert(key.t, truth_land(view, key.t)?);
            }
        }
        let n_cols = matrix.n_cols;
        let n_groups = if self.paradigm == Paradigm::Independent { view.mask().n_land() } else { 1 };
        let mut designs: Vec<Design> = (0..n_groups)
            .map(|_| Design {
                x: Vec::new(),
                y: Vec::new(),
                labels: Vec::new(),
            })
            .collect();
        for (i, key) in matrix.keys.iter().enumerate() {
            let y = truth[&key.t][key.loc];
            if !y.is_finite() {
                continue;
            }
            let d = &mut designs[if n_groups == 1 { 0 } else { key.loc }];
            d.x.extend_from_slice(matrix.row(i));
            d.y.push(y);
            if let Some(th) = &thresholds {
                d.labels.push(th.label(y, view.month_of(key.t), key.loc));
            }
        }
        if designs.iter().all(|d| d.y.is_empty()) {
            return Err(Error::Config("no training samples".into()));
        }
        self.pipeline = Some(pipeline);
        self.thresholds = thresholds;
        if n_groups == 1 {
            self.models = vec![self.fit_one(&designs[0], n_cols)?];
            self.failures.clear();
        } else {
            let fitted = per_location_fit(&designs, |d| self.fit_one(d, n_cols), |d| Ok(self.fallback(d)))?;
            self.models = fitted.models;
            self.failures = fitted.failures;
        }
        Ok(())
    }

    fn predict(&self, view: &DataView, times: &[usize]) -> Result<LandSeries> {
        Ok(self.outputs(view, times)?.into_iter().map(|row| row.into_iter().map(|(v, _)| v).collect()).collect())
    }

    fn predict_proba(&self, view: &DataView, times: &[usize]) -> Result<LandProba> {
        if self.task != Task::Tercile {
            return Err(Error::Config(format!("{} does not predict tercile probabilities", self.id())));
        }
        Ok(self.outputs(view, times)?.into_iter().map(|row| row.into_iter().map(|(_, p)| p).collect()).collect())
    }
}
