//! Mini-batch training with masked losses, quantile fine-tuning and
//! chronological-block cross-validation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use ssf_core::stats::percentile_r7;

use super::layers::Tensor4;
use super::unet::{masked_loss, Loss, OutputActivation, UNet};
use crate::adam::{adam_step, AdamParams, AdamState};
use crate::error::{shape, Error, Result};
use crate::linear::ols_fit;

/// One input stack (batch of one) and its target map, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialSample {
    pub input: Tensor4,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            lr: 1e-3,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainingLog {
    /// Tab-separated `epoch, train_loss, val_loss` with a header row.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("epoch\ttrain_loss\tval_loss\n");
        for e in &self.epochs {
            let val = e.val_loss.map(|v| v.to_string()).unwrap_or_else(|| "NA".into());
            s.push_str(&format!("{}\t{}\t{}\n", e.epoch, e.train_loss, val));
        }
        s
    }

    pub fn final_train_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }
}

fn check_samples(net: &UNet, samples: &[SpatialSample], land: &[bool]) -> Result<usize> {
    let first = samples.first().ok_or_else(|| Error::Config("no training samples".into()))?;
    let cells = first.input.height() * first.input.width();
    if land.len() != cells {
        return Err(shape("mask", format!("{} flags for {cells} cells", land.len())));
    }
    let n_land = land.iter().filter(|&&b| b).count();
    if n_land == 0 {
        return Err(Error::Config("mask has no land cells".into()));
    }
    for s in samples {
        net.check_input(&s.input)?;
        if s.input.batch() != 1 || s.target.len() != cells || s.input.dims()[2..] != first.input.dims()[2..] {
            return Err(shape("sample", format!("input {:?} with {} targets", s.input.dims(), s.target.len())));
        }
    }
    Ok(n_land)
}

/// Loss sum and parameter gradient for one sample.
fn sample_gradient(net: &UNet, s: &SpatialSample, land: &[bool], loss: Loss) -> Result<(f64, Vec<f64>)> {
    let cache = net.forward(&s.input)?;
    let (value, g) = masked_loss(cache.output.data(), &s.target, land, loss);
    let [_, _, h, w] = cache.output.dims();
    let grads = net.backward(&cache, &Tensor4::new([1, 1, h, w], g)?);
    Ok((value, grads))
}

/// Mean loss per land cell over `samples`.
pub fn evaluate_loss(net: &UNet, samples: &[SpatialSample], land: &[bool], loss: Loss) -> Result<f64> {
    let n_land = check_samples(net, samples, land)?;
    let totals = samples
        .par_iter()
        .map(|s| Ok(masked_loss(net.predict(&s.input)?.data(), &s.target, land, loss).0))
        .collect::<Result<Vec<f64>>>()?;
    Ok(totals.iter().sum::<f64>() / (samples.len() * n_land) as f64)
}

/// Minimize the mean masked loss with Adam over shuffled mini-batches.
/// Per-sample gradients may be computed in parallel; they are summed in
/// sample order, so results do not depend on the thread count.
pub fn train(net: &mut UNet, samples: &[SpatialSample], land: &[bool], loss: Loss, params: &TrainParams, validation: Option<&[SpatialSample]>) -> Result<TrainingLog> {
    let n_land = check_samples(net, samples, land)?;
    if params.batch_size == 0 || params.lr <= 0.0 {
        return Err(Error::Config("batch size and learning rate must be positive".into()));
    }
    let adam = AdamParams::new(params.lr, params.weight_decay);
    let mut state = AdamState::new(net.n_params());
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut log = TrainingLog::default();
    for epoch in 0..params.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch, chunk) in order.chunks(params.batch_size).enumerate() {
            let results = chunk
                .par_iter()
                .map(|&i| sample_gradient(net, &samples[i], land, loss))
                .collect::<Result<Vec<_>>>()?;
            let norm = (chunk.len() * n_land) as f64;
            let mut grads = vec![0.0; net.n_params()];
            let mut batch_loss = 0.0;
            for (value, g) in &results {
                batch_loss += value;
                grads.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            grads.iter_mut().for_each(|g| *g /= norm);
            adam_step(net.params_mut(), &grads, &mut state, &adam);
            epoch_loss += batch_loss;
        }
        let val_loss = validation.map(|v| evaluate_loss(net, v, land, loss)).transpose()?;
        let train_loss = epoch_loss / (samples.len() * n_land) as f64;
        log::debug!("epoch {epoch}: train {train_loss:.6} val {val_loss:?}");
        log.epochs.push(EpochLog { epoch, train_loss, val_loss });
    }
    Ok(log)
}

pub fn train_regression(net: &mut UNet, samples: &[SpatialSample], land: &[bool], params: &TrainParams, validation: Option<&[SpatialSample]>) -> Result<TrainingLog> {
    train(net, samples, land, Loss::Squared, params, validation)
}

/// Fine-tune a regression-trained network on the pinball loss. The head is
/// switched to identity and re-fitted by least squares on the decoder
/// features, then its bias is shifted by the `alpha`-quantile of the
/// residuals before gradient training.
pub fn train_quantile(net: &mut UNet, alpha: f64, samples: &[SpatialSample], land: &[bool], params: &TrainParams, validation: Option<&[SpatialSample]>) -> Result<TrainingLog> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("quantile level {alpha} outside (0, 1)")));
    }
    check_samples(net, samples, land)?;
    net.set_output(OutputActivation::Identity);
    refit_head(net, alpha, samples, land)?;
    train(net, samples, land, Loss::Pinball { alpha }, params, validation)
}

fn refit_head(net: &mut UNet, alpha: f64, samples: &[SpatialSample], land: &[bool]) -> Result<()> {
    let features: Vec<Tensor4> = samples.par_iter().map(|s| net.forward(&s.input).map(|c| c.head_input().clone())).collect::<Result<_>>()?;
    let n_feat = features[0].channels();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (f, s) in features.iter().zip(samples) {
        for (cell, _) in land.iter().enumerate().filter(|(_, &l)| l) {
            x.extend((0..n_feat).map(|c| f.plane(0, c)[cell]));
            y.push(s.target[cell]);
        }
    }
    let fit = ols_fit(&x, n_feat, &y, 1e-6)?;
    let residuals: Vec<f64> = y.iter().enumerate().map(|(i, v)| v - fit.predict(&x[i * n_feat..(i + 1) * n_feat])).collect();
    let shift = percentile_r7(&residuals, alpha).ok_or(Error::NonFiniteInput("head residuals"))?;
    let (w, b) = net.head_params_mut();
    w.copy_from_slice(&fit.weights[0]);
    *b = fit.intercepts[0] + shift;
    Ok(())
}

/// Split `0..n` into `k` contiguous blocks of near-equal size.
pub fn chronological_folds(n: usize, k: usize) -> Result<Vec<std::ops::Range<usize>>> {
    if k < 2 || k > n {
        return Err(Error::Config(format!("cannot make {k} folds from {n} samples")));
    }
    Ok((0..k).map(|f| f * n / k..(f + 1) * n / k).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult<P> {
    pub best: P,
    /// Mean validation score per candidate, in candidate order.
    pub scores: Vec<f64>,
}

/// Blocked cross-validation over contiguous time blocks. `evaluate` trains on
/// the given indices and returns the validation score (lower is better).
/// Ties keep the earlier candidate.
pub fn grid_search<P: Clone>(
    n: usize,
    folds: usize,
    candidates: &[P],
    mut evaluate: impl FnMut(&P, &[usize], &[usize]) -> Result<f64>,
) -> Result<GridSearchResult<P>> {
    if candidates.is_empty() {
        return Err(Error::Config("empty hyperparameter grid".into()));
    }
    let blocks = chronological_folds(n, folds)?;
    let mut scores = Vec::with_capacity(candidates.len());
    for c in candidates {
        let mut total = 0.0;
        for block in &blocks {
            let train_idx: Vec<usize> = (0..n).filter(|i| !block.contains(i)).collect();
            let val_idx: Vec<usize> = block.clone().collect();
            total += evaluate(c, &train_idx, &val_idx)?;
        }
        scores.push(total / blocks.len() as f64);
    }
    let best = (0..scores.len()).fold(0, |b, i| if scores[i] < scores[b] { i } else { b });
    Ok(GridSearchResult {
        best: candidates[best].clone(),
        scores,
    })
}
