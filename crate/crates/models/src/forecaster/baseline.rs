use serde::{Deserialize, Serialize};
use ssf_core::baselines::{predict_ensemble_mean, predict_historical, QuantileTable};
use ssf_core::preprocess::climatology::{monthly_climatology, Climatology};
use ssf_core::preprocess::tercile::TercileThresholds;
use ssf_core::stats::percentile_r7;
use ssf_core::DataView;

use super::{fit_thresholds, label_of, truth_land, unfitted, Forecaster, LandSeries};
use crate::error::Result;
use crate::task::Task;

/// Monthly climatology of the observed target: the mean (regression,
/// terciles) or the `alpha`-quantile (quantile task) per month and location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoricalForecaster {
    task: Task,
    climatology: Option<Climatology>,
    quantiles: Option<QuantileTable>,
    thresholds: Option<TercileThresholds>,
}

impl HistoricalForecaster {
    pub fn new(task: Task) -> Self {
        Self {
            task,
            climatology: None,
            quantiles: None,
            thresholds: None,
        }
    }
}

impl Forecaster for HistoricalForecaster {
    fn id(&self) -> String {
        "hist".into()
    }

    fn task(&self) -> Task {
        self.task
    }

    fn fit(&mut self, view: &DataView, times: &[usize]) -> Result<()> {
        let months: Vec<u8> = times.iter().map(|&t| view.month_of(t)).collect();
        let series = times.iter().map(|&t| truth_land(view, t)).collect::<Result<Vec<_>>>()?;
        *self = Self::new(self.task);
        match self.task {
            Task::Quantile { alpha } => self.quantiles = Some(QuantileTable::fit(&months, &series, alpha)?),
            _ => self.climatology = Some(monthly_climatology(&months, &series)?),
        }
        if self.task == Task::Tercile {
            self.thresholds = Some(fit_thresholds(view, times)?);
        }
        Ok(())
    }

    fn predict(&self, view: &DataView, times: &[usize]) -> Result<LandSeries> {
        let n_land = view.mask().n_land();
        times
            .iter()
            .map(|&t| {
                let month = view.month_of(t);
                (0..n_land)
                    .map(|loc| match self.task {
                        Task::Quantile { .. } => Ok(self.quantiles.as_ref().ok_or_else(|| unfitted("quantile table"))?.get(month, loc)),
                        _ => {
                            let clim = self.climatology.as_ref().ok_or_else(|| unfitted("climatology"))?;
                            let value = predict_historical(clim, month, loc);
                            if self.task == Task::Tercile {
                                label_of(self.thresholds.as_ref(), value, month, loc)
                            } else {
                                Ok(value)
                            }
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

/// Raw ensemble statistics: the member average (regression, thresholded for
/// terciles) or the members' `alpha`-percentile for the quantile task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleForecaster {
    task: Task,
    thresholds: Option<TercileThresholds>,
}

impl EnsembleForecaster {
    pub fn new(task: Task) -> Self {
        Self { task, thresholds: None }
    }
}

impl Forecaster for EnsembleForecaster {
    fn id(&self) -> String {
        "ensmean".into()
    }

    fn task(&self) -> Task {
        self.task
    }

    fn fit(&mut self, view: &DataView, times: &[usize]) -> Result<()> {
        self.thresholds = match self.task {
            Task::Tercile => Some(fit_thresholds(view, times)?),
            _ => None,
        };
        Ok(())
    }

    fn predict(&self, view: &DataView, times: &[usize]) -> Result<LandSeries> {
        times
            .iter()
            .map(|&t| {
                let ens = view.ensemble(t)?;
                let month = view.month_of(t);
                view.mask()
                    .land_locations()
                    .iter()
                    .enumerate()
                    .map(|(loc, &cell)| {
                        let Some(members) = ens.at(cell) else {
                            return Ok(f64::NAN);
                        };
                        match self.task {
                            Task::Regression => Ok(predict_ensemble_mean(&members)),
                            Task::Quantile { alpha } => Ok(percentile_r7(&members, alpha).unwrap_or(f64::NAN)),
                            Task::Tercile => label_of(self.thresholds.as_ref(), predict_ensemble_mean(&members), month, loc),
                        }
                    })
                    .collect()
            })
            .collect()
    }
}
