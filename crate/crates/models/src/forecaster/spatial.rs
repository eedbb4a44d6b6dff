use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use ssf_core::preprocess::features::{target_scaling_mode, FeatureConfig, FeaturePipeline, Paradigm};
use ssf_core::preprocess::normalize::{FeatureScaling, ScalingMode};
use ssf_core::preprocess::tercile::TercileThresholds;
use ssf_core::{DataView, LandMask};

use super::{fit_thresholds, label_of, truth_land, unfitted, Forecaster, LandSeries};
use crate::convnet::{pad_replicate, train_quantile, train_regression, OutputActivation, SpatialSample, Tensor4, TrainParams, TrainingLog, UNet, UNetConfig};
use crate::error::{Error, Result};
use crate::task::Task;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvNetHyper {
    pub base_channels: usize,
    pub depth: usize,
    pub train: TrainParams,
    /// Pinball fine-tuning epochs after squared-loss training (quantile task).
    pub quantile_epochs: usize,
}

impl Default for ConvNetHyper {
    fn default() -> Self {
        Self {
            base_channels: 16,
            depth: 2,
            train: TrainParams::default(),
            quantile_epochs: 10,
        }
    }
}

/// Encoder-decoder over whole-grid feature stacks. Regression targets are
/// scaled per target kind; terciles come from thresholding the regression
/// output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvNetForecaster {
    task: Task,
    features: FeatureConfig,
    hyper: ConvNetHyper,
    seed: u64,
    pipeline: Option<FeaturePipeline>,
    target_scaling: Option<FeatureScaling>,
    thresholds: Option<TercileThresholds>,
    net: Option<UNet>,
    pub log: TrainingLog,
}

/// Grid geometry after padding to the network's size multiple.
struct Padded {
    n_lon: usize,
    height: usize,
    width: usize,
}

impl Padded {
    fn new(view: &DataView, multiple: usize) -> Self {
        let g = view.grid();
        Self {
            n_lon: g.n_lon,
            height: g.n_lat.div_ceil(multiple) * multiple,
            width: g.n_lon.div_ceil(multiple) * multiple,
        }
    }

    fn index(&self, cell: usize) -> usize {
        (cell / self.n_lon) * self.width + cell % self.n_lon
    }
}

impl ConvNetForecaster {
    pub fn new(task: Task, features: FeatureConfig, hyper: ConvNetHyper, seed: u64) -> Self {
        Self {
            task,
            features,
            hyper,
            seed,
            pipeline: None,
            target_scaling: None,
            thresholds: None,
            net: None,
            log: TrainingLog::default(),
        }
    }

    pub fn pipeline(&self) -> Option<&FeaturePipeline> {
        self.pipeline.as_ref()
    }

    pub fn net(&self) -> Option<&UNet> {
        self.net.as_ref()
    }

    pub fn prepare(&mut self, mask: &LandMask) -> Result<()> {
        match &mut self.pipeline {
            Some(p) => Ok(p.prepare(mask)?),
            None => Ok(()),
        }
    }

    fn input_at(&self, pipeline: &FeaturePipeline, view: &DataView, t: usize, multiple: usize) -> Result<Tensor4> {
        let stack = pipeline.stack_at(view, t, true)?;
        let x = Tensor4::new([1, stack.n_channels, stack.n_lat, stack.n_lon], stack.data)?;
        Ok(pad_replicate(&x, multiple))
    }
}

impl Forecaster for ConvNetForecaster {
    fn id(&self) -> String {
        "convnet".into()
    }

    fn task(&self) -> Task {
        self.task
    }

    fn fit(&mut self, view: &DataView, times: &[usize]) -> Result<()> {
        let mut pipeline = FeaturePipeline::fit(view, self.features, Paradigm::Spatial)?;
        pipeline.fit_normalization(view, times)?;
        let eligible = pipeline.eligible_times(times.iter().copied());
        if eligible.is_empty() {
            return Err(Error::Config("no training time steps with full lag history".into()));
        }
        let truth = eligible.iter().map(|&t| truth_land(view, t)).collect::<Result<Vec<_>>>()?;
        let observed: Vec<f64> = truth.iter().flatten().copied().filter(|v| v.is_finite()).collect();
        let mode = target_scaling_mode(view.target_kind());
        let scaling = FeatureScaling::fit(&observed, mode)?;
        let output = match mode {
            ScalingMode::MinMax => OutputActivation::Sigmoid,
            _ => OutputActivation::Identity,
        };
        let config = UNetConfig {
            in_channels: pipeline.n_features(),
            base_channels: self.hyper.base_channels,
            depth: self.hyper.depth,
            output,
        };
        let multiple = config.size_multiple();
        let padded = Padded::new(view, multiple);
        let cells = padded.height * padded.width;
        let mut land = vec![false; cells];
        for &cell in view.mask().land_locations() {
            land[padded.index(cell)] = true;
        }
        let samples = eligible
            .iter()
            .zip(&truth)
            .map(|(&t, values)| {
                let input = self.input_at(&pipeline, view, t, multiple)?;
                // Missing land targets take the step's land average.
                let present: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
                let fill = if present.is_empty() { 0.0 } else { present.iter().sum::<f64>() / present.len() as f64 };
                let mut target = vec![0.0; cells];
                for (&cell, &v) in view.mask().land_locations().iter().zip(values) {
                    target[padded.index(cell)] = scaling.apply(if v.is_finite() { v } else { fill });
                }
                Ok(SpatialSample { input, target })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut net = UNet::new(config, self.seed)?;
        let params = TrainParams {
            seed: self.seed,
            ..self.hyper.train
        };
        let mut log = train_regression(&mut net, &samples, &land, &params, None)?;
        if let Task::Quantile { alpha } = self.task {
            let fine = TrainParams {
                epochs: self.hyper.quantile_epochs,
                ..params
            };
            let tuned = train_quantile(&mut net, alpha, &samples, &land, &fine, None)?;
            let offset = log.epochs.len();
            log.epochs.extend(tuned.epochs.into_iter().map(|mut e| {
                e.epoch += offset;
                e
            }));
        }
        self.thresholds = match self.task {
            Task::Tercile => Some(fit_thresholds(view, times)?),
            _ => None,
        };
        self.pipeline = Some(pipeline);
        self.target_scaling = Some(scaling);
        self.net = Some(net);
        self.log = log;
        Ok(())
    }

    fn predict(&self, view: &DataView, times: &[usize]) -> Result<LandSeries> {
        let pipeline = self.pipeline.as_ref().ok_or_else(|| unfitted("feature pipeline"))?;
        let net = self.net.as_ref().ok_or_else(|| unfitted("network"))?;
        let scaling = self.target_scaling.as_ref().ok_or_else(|| unfitted("target scaling"))?;
        let multiple = net.config.size_multiple();
        let padded = Padded::new(view, multiple);
        times
            .par_iter()
            .map(|&t| {
                let out = net.predict(&self.input_at(pipeline, view, t, multiple)?)?;
                let month = view.month_of(t);
                view.mask()
                    .land_locations()
                    .iter()
                    .enumerate()
                    .map(|(loc, &cell)| {
                        let value = scaling.invert(out.data()[padded.index(cell)]);
                        match self.task {
                            Task::Tercile => label_of(self.thresholds.as_ref(), value, month, loc),
                            _ => Ok(value),
                        }
                    })
                    .collect()
            })
            .collect()
    }
}
