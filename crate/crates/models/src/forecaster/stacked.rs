use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use ssf_core::preprocess::lags::MAX_LAG;
use ssf_core::DataView;

use super::{argmax_label, fit_thresholds, truth_land, unfitted, AnyForecaster, Forecaster, LandProba, LandSeries};
use crate::error::{Error, Result};
use crate::stack::{stacker_fit, StackTarget, Stacker, StackerParams};
use crate::task::Task;

fn base_error(id: String) -> impl FnOnce(Error) -> Error {
    move |e| Error::Base { id, source: Box::new(e) }
}

fn fit_all<F: Forecaster>(bases: &mut [F], view: &DataView, times: &[usize]) -> Result<()> {
    bases.par_iter_mut().map(|b| b.fit(view, times).map_err(base_error(b.id()))).collect()
}

/// Stacker input rows per time step and land location: the base point
/// forecasts, or their class probabilities (three per base) for terciles.
/// `None` where any base has no prediction.
pub fn stack_inputs<F: Forecaster>(bases: &[F], view: &DataView, times: &[usize], task: Task) -> Result<Vec<Vec<Option<Vec<f64>>>>> {
    let per_base: Vec<Vec<Vec<Vec<f64>>>> = bases
        .par_iter()
        .map(|b| -> Result<Vec<Vec<Vec<f64>>>> {
            let out = if task == Task::Tercile {
                b.predict_proba(view, times).map_err(base_error(b.id()))?.into_iter().map(|row| row.into_iter().map(|p| p.to_vec()).collect()).collect()
            } else {
                b.predict(view, times).map_err(base_error(b.id()))?.into_iter().map(|row| row.into_iter().map(|v| vec![v]).collect()).collect()
            };
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let n_land = view.mask().n_land();
    Ok((0..times.len())
        .map(|i| {
            (0..n_land)
                .map(|loc| {
                    let row: Vec<f64> = per_base.iter().flat_map(|b| b[i][loc].iter().copied()).collect();
                    row.iter().all(|v| v.is_finite()).then_some(row)
                })
                .collect()
        })
        .collect())
}

/// Half-split stacking. Bases are fitted on the chronologically first half
/// of the eligible `times`, the stacker on their predictions for the second
/// half, and the bases are then refitted on all of `times`.
pub fn stack_train<F: Forecaster>(bases: &mut [F], view: &DataView, times: &[usize], task: Task, params: &StackerParams) -> Result<Stacker> {
    if bases.len() < 2 {
        return Err(Error::Config(format!("stacking needs at least two base models, got {}", bases.len())));
    }
    let mut eligible: Vec<usize> = times.iter().copied().filter(|&t| t >= MAX_LAG).collect();
    eligible.sort_unstable();
    if eligible.len() < 4 {
        return Err(Error::Config(format!("stacking needs at least 4 training steps, got {}", eligible.len())));
    }
    // Repeated steps stay on one side of the cut.
    let cut = eligible[eligible.len() / 2];
    let split = eligible.partition_point(|&t| t < cut);
    let (first, second) = eligible.split_at(split);
    if first.is_empty() {
        return Err(Error::Config("stacking split left the first half empty".into()));
    }
    let early = view.window(0..cut)?;
    fit_all(bases, &early, first)?;

    let inputs = stack_inputs(bases, view, second, task)?;
    let thresholds = match task {
        Task::Tercile => Some(fit_thresholds(view, times)?),
        _ => None,
    };
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut labels = Vec::new();
    for (&t, rows) in second.iter().zip(&inputs) {
        let truth = truth_land(view, t)?;
        for (loc, row) in rows.iter().enumerate() {
            let (Some(row), true) = (row, truth[loc].is_finite()) else {
                continue;
            };
            x.extend_from_slice(row);
            match &thresholds {
                Some(th) => labels.push(th.label(truth[loc], view.month_of(t), loc)),
                None => y.push(truth[loc]),
            }
        }
    }
    let target = match task {
        Task::Tercile => StackTarget::Labels(&labels),
        _ => StackTarget::Values(&y),
    };
    let stacker = stacker_fit(&x, bases.len(), target, task, params)?;
    fit_all(bases, view, times)?;
    Ok(stacker)
}

/// Stacked point forecasts (class labels for terciles).
pub fn stack_predict<F: Forecaster>(bases: &[F], stacker: &Stacker, view: &DataView, times: &[usize]) -> Result<LandSeries> {
    let inputs = stack_inputs(bases, view, times, stacker.task)?;
    inputs
        .into_iter()
        .map(|rows| {
            rows.into_iter()
                .map(|row| match row {
                    None => Ok(f64::NAN),
                    Some(row) if stacker.task == Task::Tercile => Ok(argmax_label(&stacker.predict_proba(&row)?)),
                    Some(row) => stacker.predict(&row),
                })
                .collect()
        })
        .collect()
}

pub fn stack_predict_proba<F: Forecaster>(bases: &[F], stacker: &Stacker, view: &DataView, times: &[usize]) -> Result<LandProba> {
    let inputs = stack_inputs(bases, view, times, stacker.task)?;
    inputs
        .into_iter()
        .map(|rows| {
            rows.into_iter()
                .map(|row| match row {
                    None => Ok([f64::NAN; 3]),
                    Some(row) => stacker.predict_proba(&row),
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedForecaster {
    task: Task,
    bases: Vec<AnyForecaster>,
    params: StackerParams,
    stacker: Option<Stacker>,
}

impl StackedForecaster {
    pub fn new(task: Task, bases: Vec<AnyForecaster>, params: StackerParams) -> Result<Self> {
        if bases.len() < 2 {
            return Err(Error::Config(format!("stacking needs at least two base models, got {}", bases.len())));
        }
        if let Some(b) = bases.iter().find(|b| b.task() != task) {
            return Err(Error::Config(format!("base {} has task {}, stack has {task}", b.id(), b.task())));
        }
        Ok(Self {
            task,
            bases,
            params,
            stacker: None,
        })
    }

    pub fn bases(&self) -> &[AnyForecaster] {
        &self.bases
    }

    pub fn bases_mut(&mut self) -> &mut [AnyForecaster] {
        &mut self.bases
    }

    pub fn stacker(&self) -> Option<&Stacker> {
        self.stacker.as_ref()
    }
}

impl Forecaster for StackedForecaster {
    fn id(&self) -> String {
        let ids: Vec<String> = self.bases.iter().map(|b| b.id()).collect();
        format!("stack({})", ids.join(","))
    }

    fn task(&self) -> Task {
        self.task
    }

    fn fit(&mut self, view: &DataView, times: &[usize]) -> Result<()> {
        self.stacker = None;
        self.stacker = Some(stack_train(&mut self.bases, view, times, self.task, &self.params)?);
        Ok(())
    }

    fn predict(&self, view: &DataView, times: &[usize]) -> Result<LandSeries> {
        stack_predict(&self.bases, self.stacker.as_ref().ok_or_else(|| unfitted("stacker"))?, view, times)
    }

    fn predict_proba(&self, view: &DataView, times: &[usize]) -> Result<LandProba> {
        if self.task != Task::Tercile {
            return Err(Error::Config(format!("{} does not predict tercile probabilities", self.id())));
        }
        stack_predict_proba(&self.bases, self.stacker.as_ref().ok_or_else(|| unfitted("stacker"))?, view, times)
    }
}
