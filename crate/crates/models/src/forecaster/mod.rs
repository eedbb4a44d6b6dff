//! Forecasters bind a model to the feature pipeline: they are fitted on a
//! data view and a list of time steps, and predict every land location for
//! a list of time steps.

mod baseline;
mod spatial;
mod stacked;
mod tabular;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use ssf_core::preprocess::features::{FeatureCatalog, FeatureConfig, FeaturePipeline, LocationMode, Paradigm};
use ssf_core::preprocess::tercile::TercileThresholds;
use ssf_core::{DataView, LandMask};

pub use baseline::{EnsembleForecaster, HistoricalForecaster};
pub use spatial::{ConvNetForecaster, ConvNetHyper};
pub use stacked::{stack_inputs, stack_predict, stack_predict_proba, stack_train, StackedForecaster};
pub use tabular::{TabularForecaster, TabularHyper};

use crate::error::{Error, Result};
use crate::forest::ForestParams;
use crate::linear::{LogisticParams, QuantileFitParams};
use crate::stack::StackerParams;
use crate::task::Task;

/// Per time step, one value per land location. `NaN` marks a location that
/// could not be predicted (missing inputs).
pub type LandSeries = Vec<Vec<f64>>;

/// Per time step, class probabilities (below, near, above) per land location.
pub type LandProba = Vec<Vec<[f64; 3]>>;

pub trait Forecaster: Send + Sync {
    /// Short identifier used in reports and error messages.
    fn id(&self) -> String;

    fn task(&self) -> Task;

    /// Fit on `times` of `view`. Refitting replaces all previous state.
    fn fit(&mut self, view: &DataView, times: &[usize]) -> Result<()>;

    /// Point forecasts: the conditional mean, the quantile estimate, or the
    /// tercile class (-1, 0, 1) depending on the task.
    fn predict(&self, view: &DataView, times: &[usize]) -> Result<LandSeries>;

    /// Tercile class probabilities. Models without a probabilistic output
    /// put all mass on their predicted class.
    fn predict_proba(&self, view: &DataView, times: &[usize]) -> Result<LandProba> {
        if self.task() != Task::Tercile {
            return Err(Error::Config(format!("{} does not predict tercile probabilities", self.id())));
        }
        Ok(self
            .predict(view, times)?
            .into_iter()
            .map(|row| row.into_iter().map(one_hot).collect())
            .collect())
    }
}

pub(crate) fn one_hot(label: f64) -> [f64; 3] {
    match label {
        l if l.is_nan() => [f64::NAN; 3],
        l if l < -0.5 => [1.0, 0.0, 0.0],
        l if l > 0.5 => [0.0, 0.0, 1.0],
        _ => [0.0, 1.0, 0.0],
    }
}

/// Class with the highest probability, ties to the lower class; `NaN` if any
/// probability is missing.
pub(crate) fn argmax_label(p: &[f64; 3]) -> f64 {
    if p.iter().any(|v| !v.is_finite()) {
        return f64::NAN;
    }
    let mut best = 0;
    for k in 1..3 {
        if p[k] > p[best] {
            best = k;
        }
    }
    best as f64 - 1.0
}

/// Observed target at the land locations of `t`, `NaN` where missing.
pub fn truth_land(view: &DataView, t: usize) -> Result<Vec<f64>> {
    let field = view.target(t)?;
    Ok(view.mask().land_locations().iter().map(|&c| field.get(c).unwrap_or(f64::NAN)).collect())
}

/// Tercile thresholds from the observed target over `times`.
pub fn fit_thresholds(view: &DataView, times: &[usize]) -> Result<TercileThresholds> {
    let months: Vec<u8> = times.iter().map(|&t| view.month_of(t)).collect();
    let series = times.iter().map(|&t| truth_land(view, t)).collect::<Result<Vec<_>>>()?;
    Ok(TercileThresholds::fit(&months, &series)?)
}

pub(crate) fn label_of(thresholds: Option<&TercileThresholds>, value: f64, month: u8, loc: usize) -> Result<f64> {
    let th = thresholds.ok_or(ssf_core::Error::Unfitted("tercile thresholds"))?;
    Ok(if value.is_nan() { f64::NAN } else { th.label(value, month, loc) as f64 })
}

pub(crate) fn unfitted(what: &'static str) -> Error {
    Error::Core(ssf_core::Error::Unfitted(what))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Hist,
    Ensmean,
    Lr,
    Linqr,
    Logistic,
    Rf,
    Qrf,
    Convnet,
    Stack,
}

impl ModelKind {
    pub const ALL: [ModelKind; 9] = [
        ModelKind::Hist,
        ModelKind::Ensmean,
        ModelKind::Lr,
        ModelKind::Linqr,
        ModelKind::Logistic,
        ModelKind::Rf,
        ModelKind::Qrf,
        ModelKind::Convnet,
        ModelKind::Stack,
    ];

    pub fn supports(&self, task: Task) -> bool {
        match self {
            ModelKind::Hist | ModelKind::Ensmean | ModelKind::Convnet | ModelKind::Stack => true,
            ModelKind::Lr | ModelKind::Rf => !matches!(task, Task::Quantile { .. }),
            ModelKind::Linqr | ModelKind::Qrf => matches!(task, Task::Quantile { .. }),
            ModelKind::Logistic => task == Task::Tercile,
        }
    }

    pub fn is_tabular(&self) -> bool {
        matches!(self, ModelKind::Lr | ModelKind::Linqr | ModelKind::Logistic | ModelKind::Rf | ModelKind::Qrf)
    }

    /// Paradigms the model can be trained under.
    pub fn paradigms(&self) -> &'static [Paradigm] {
        match self {
            ModelKind::Convnet => &[Paradigm::Spatial],
            k if k.is_tabular() => &[Paradigm::Independent, Paradigm::Conditional],
            _ => &[Paradigm::Independent, Paradigm::Conditional, Paradigm::Spatial],
        }
    }

    pub fn default_paradigm(&self) -> Paradigm {
        match self {
            ModelKind::Convnet => Paradigm::Spatial,
            _ => Paradigm::Conditional,
        }
    }

    /// Base models stacked by default for `task`.
    pub fn default_bases(task: Task) -> Vec<ModelKind> {
        match task {
            Task::Regression => vec![ModelKind::Lr, ModelKind::Rf, ModelKind::Convnet],
            Task::Quantile { .. } => vec![ModelKind::Linqr, ModelKind::Qrf, ModelKind::Convnet],
            Task::Tercile => vec![ModelKind::Logistic, ModelKind::Rf, ModelKind::Convnet],
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Hist => "hist",
            ModelKind::Ensmean => "ensmean",
            ModelKind::Lr => "lr",
            ModelKind::Linqr => "linqr",
            ModelKind::Logistic => "logistic",
            ModelKind::Rf => "rf",
            ModelKind::Qrf => "qrf",
            ModelKind::Convnet => "convnet",
            ModelKind::Stack => "stack",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown model '{s}'")))
    }
}

/// Hyperparameters of every model family; each model reads its own part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyper {
    pub ridge: f64,
    pub quantile: QuantileFitParams,
    pub logistic: LogisticParams,
    pub forest: ForestParams,
    pub convnet: ConvNetHyper,
    pub stacker: StackerParams,
    /// Stacked base models; empty picks [`ModelKind::default_bases`].
    pub bases: Vec<ModelKind>,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            ridge: 0.0,
            quantile: QuantileFitParams::default(),
            logistic: LogisticParams::default(),
            forest: ForestParams::default(),
            convnet: ConvNetHyper::default(),
            stacker: StackerParams::default(),
            bases: Vec::new(),
        }
    }
}

impl Hyper {
    /// Range checks that do not need data.
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("invalid hyperparameter: {what}")));
        if !(self.ridge >= 0.0) {
            return bad("ridge must be nonnegative");
        }
        let f = &self.forest;
        if f.n_trees == 0 || f.min_samples_leaf == 0 || f.min_samples_split < 2 {
            return bad("forest needs n_trees >= 1, min_samples_leaf >= 1 and min_samples_split >= 2");
        }
        let c = &self.convnet;
        if c.base_channels == 0 || c.train.batch_size == 0 || !(c.train.lr > 0.0) || !(c.train.weight_decay >= 0.0) {
            return bad("convnet needs positive channels, batch size and learning rate");
        }
        let s = &self.stacker;
        if s.hidden == 0 || s.batch_size == 0 || !(s.lr > 0.0) || !(0.0..1.0).contains(&s.validation_fraction) {
            return bad("stacker needs positive width, batch size and learning rate and a validation fraction in [0, 1)");
        }
        if !(self.quantile.step > 0.0) || !(self.logistic.l2 >= 0.0) {
            return bad("quantile step must be positive and logistic l2 nonnegative");
        }
        Ok(())
    }
}

/// Everything needed to build an unfitted forecaster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model: ModelKind,
    pub task: Task,
    pub paradigm: Paradigm,
    pub features: FeatureConfig,
    pub hyper: Hyper,
    pub seed: u64,
}

impl ModelSpec {
    /// Spec with the model's default paradigm and every feature family.
    pub fn new(model: ModelKind, task: Task) -> Self {
        let paradigm = model.default_paradigm();
        Self {
            model,
            task,
            paradigm,
            features: FeatureConfig::full(paradigm),
            hyper: Hyper::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.model.supports(self.task) {
            return Err(Error::Config(format!("model {} does not support task {}", self.model, self.task)));
        }
        if let Some(alpha) = self.task.alpha() {
            Task::quantile(alpha)?;
        }
        self.hyper.validate()?;
        if !self.model.paradigms().contains(&self.paradigm) {
            return Err(Error::Config(format!("model {} cannot be trained under the {} paradigm", self.model, self.paradigm)));
        }
        if self.model.is_tabular() || self.model == ModelKind::Convnet {
            self.features.validate(self.paradigm)?;
        }
        if self.model == ModelKind::Stack {
            let bases = self.base_specs();
            if bases.len() < 2 {
                return Err(Error::Config("stacking needs at least two base models".into()));
            }
            for b in &bases {
                if b.model == ModelKind::Stack {
                    return Err(Error::Config("stacked models cannot be nested".into()));
                }
                b.validate().map_err(|e| Error::Base {
                    id: b.model.to_string(),
                    source: Box::new(e),
                })?;
            }
        }
        Ok(())
    }

    /// Specs of the stacked base models: same task and features, each in
    /// its own paradigm, with seeds offset by position.
    pub fn base_specs(&self) -> Vec<ModelSpec> {
        let kinds = if self.hyper.bases.is_empty() { ModelKind::default_bases(self.task) } else { self.hyper.bases.clone() };
        kinds
            .into_iter()
            .enumerate()
            .map(|(i, model)| {
                let paradigm = if model.paradigms().contains(&self.paradigm) { self.paradigm } else { model.default_paradigm() };
                let mut features = self.features;
                if paradigm == Paradigm::Independent {
                    features.location = LocationMode::None;
                }
                ModelSpec {
                    model,
                    task: self.task,
                    paradigm,
                    features,
                    hyper: Hyper {
                        bases: Vec::new(),
                        ..self.hyper.clone()
                    },
                    seed: self.seed.wrapping_add(i as u64 + 1),
                }
            })
            .collect()
    }

    pub fn build(&self) -> Result<AnyForecaster> {
        self.validate()?;
        Ok(match self.model {
            ModelKind::Hist => AnyForecaster::Hist(HistoricalForecaster::new(self.task)),
            ModelKind::Ensmean => AnyForecaster::Ensmean(EnsembleForecaster::new(self.task)),
            ModelKind::Convnet => AnyForecaster::Convnet(ConvNetForecaster::new(self.task, self.features, self.hyper.convnet.clone(), self.seed)),
            ModelKind::Stack => {
                let bases = self.base_specs().iter().map(ModelSpec::build).collect::<Result<Vec<_>>>()?;
                let params = StackerParams {
                    seed: self.seed,
                    ..self.hyper.stacker
                };
                AnyForecaster::Stack(StackedForecaster::new(self.task, bases, params)?)
            }
            kind => {
                let hyper = TabularHyper {
                    ridge: self.hyper.ridge,
                    quantile: self.hyper.quantile,
                    logistic: self.hyper.logistic,
                    forest: ForestParams {
                        seed: self.seed,
                        ..self.hyper.forest
                    },
                };
                AnyForecaster::Tabular(TabularForecaster::new(kind, self.task, self.paradigm, self.features, hyper)?)
            }
        })
    }
}

/// Any fitted or unfitted forecaster, serializable as one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum AnyForecaster {
    Hist(HistoricalForecaster),
    Ensmean(EnsembleForecaster),
    Tabular(TabularForecaster),
    Convnet(ConvNetForecaster),
    Stack(StackedForecaster),
}

impl AnyForecaster {
    fn inner(&self) -> &dyn Forecaster {
        match self {
            AnyForecaster::Hist(f) => f,
            AnyForecaster::Ensmean(f) => f,
            AnyForecaster::Tabular(f) => f,
            AnyForecaster::Convnet(f) => f,
            AnyForecaster::Stack(f) => f,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Forecaster {
        match self {
            AnyForecaster::Hist(f) => f,
            AnyForecaster::Ensmean(f) => f,
            AnyForecaster::Tabular(f) => f,
            AnyForecaster::Convnet(f) => f,
            AnyForecaster::Stack(f) => f,
        }
    }

    /// Rebuild state skipped by serialization.
    pub fn prepare(&mut self, mask: &LandMask) -> Result<()> {
        match self {
            AnyForecaster::Tabular(f) => f.prepare(mask),
            AnyForecaster::Convnet(f) => f.prepare(mask),
            AnyForecaster::Stack(f) => f.bases_mut().iter_mut().try_for_each(|b| b.prepare(mask)),
            _ => Ok(()),
        }
    }

    /// Feature pipelines the model was trained with, in base order for
    /// stacked models. Baselines have none.
    pub fn pipelines(&self) -> Vec<&FeaturePipeline> {
        match self {
            AnyForecaster::Tabular(f) => f.pipeline().into_iter().collect(),
            AnyForecaster::Convnet(f) => f.pipeline().into_iter().collect(),
            AnyForecaster::Stack(f) => f.bases().iter().flat_map(|b| b.pipelines()).collect(),
            _ => Vec::new(),
        }
    }

    /// Combined hash of the trained feature catalogs; `None` for baselines.
    pub fn catalog_hash(&self) -> Option<String> {
        let hashes: Vec<String> = self.pipelines().iter().map(|p| p.catalog.hash()).collect();
        match hashes.len() {
            0 => None,
            _ => Some(hashes.join("+")),
        }
    }

    /// Check that the catalogs rebuilt from `view` match the trained ones.
    pub fn check_compatible(&self, view: &DataView) -> Result<()> {
        for p in self.pipelines() {
            let rebuilt = FeatureCatalog::build(&p.config, p.catalog.paradigm, view.k(), &view.covariate_names())?;
            if rebuilt.hash() != p.catalog.hash() {
                return Err(Error::Config(format!(
                    "feature catalog hash mismatch: model {} vs dataset {}",
                    p.catalog.hash(),
                    rebuilt.hash()
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Invalid(e.to_string()))
    }

    /// Parse a serialized model and rebuild its derived state for `mask`.
    pub fn from_json(text: &str, mask: &LandMask) -> Result<Self> {
        let mut model: Self = serde_json::from_str(text).map_err(|e| Error::Invalid(format!("model document: {e}")))?;
        model.prepare(mask)?;
        Ok(model)
    }
}

impl Forecaster for AnyForecaster {
    fn id(&self) -> String {
        self.inner().id()
    }

    fn task(&self) -> Task {
        self.inner().task()
    }

    fn fit(&mut self, view: &DataView, times: &[usize]) -> Result<()> {
        self.inner_mut().fit(view, times)
    }

    fn predict(&self, view: &DataView, times: &[usize]) -> Result<LandSeries> {
        self.inner().predict(view, times)
    }

    fn predict_proba(&self, view: &DataView, times: &[usize]) -> Result<LandProba> {
        self.inner().predict_proba(view, times)
    }
}
