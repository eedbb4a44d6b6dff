//! One-hidden-layer network combining base-model outputs.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use ssf_core::preprocess::{FeatureScaling, ScalingMode};

use crate::adam::{adam_step, AdamParams, AdamState};
use crate::checkpoint::Checkpoint;
use crate::convnet::unet::sigmoid;
use crate::error::{Error, Result};
use crate::linear::softmax;
use crate::task::{pinball, Task};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StackerParams {
    pub hidden: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Trailing fraction of rows held out for early stopping.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for StackerParams {
    fn default() -> Self {
        Self {
            hidden: 100,
            lr: 3e-3,
            batch_size: 64,
            max_epochs: 300,
            patience: 50,
            validation_fraction: 0.0,
            seed: 0,
        }
    }
}

/// Stacker training targets.
#[derive(Debug, Clone, Copy)]
pub enum StackTarget<'a> {
    Values(&'a [f64]),
    /// Tercile classes in {-1, 0, 1}.
    Labels(&'a [i8]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stacker {
    pub task: Task,
    pub n_bases: usize,
    pub n_inputs: usize,
    pub hidden: usize,
    /// `w1 [hidden × inputs]`, `b1 [hidden]`, `w2 [outputs × hidden]`, `b2 [outputs]`.
    params: Vec<f64>,
    input_scaling: Vec<FeatureScaling>,
    target_scaling: Option<FeatureScaling>,
}

/// Network shape, shared by the fitted model and the training routines.
#[derive(Debug, Clone, Copy)]
struct Shape {
    inputs: usize,
    hidden: usize,
    outputs: usize,
}

impl Shape {
    fn len(&self) -> usize {
        self.hidden * self.inputs + self.hidden + self.outputs * self.hidden + self.outputs
    }

    /// Output scores and hidden activations for one scaled input row.
    fn forward(&self, p: &[f64], x: &[f64], hidden: &mut [f64], out: &mut [f64]) {
        let (w1, rest) = p.split_at(self.hidden * self.inputs);
        let (b1, rest) = rest.split_at(self.hidden);
        let (w2, b2) = rest.split_at(self.outputs * self.hidden);
        for j in 0..self.hidden {
            let z = b1[j] + w1[j * self.inputs..(j + 1) * self.inputs].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            hidden[j] = sigmoid(z);
        }
        for k in 0..self.outputs {
            out[k] = b2[k] + w2[k * self.hidden..(k + 1) * self.hidden].iter().zip(hidden.iter()).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

/// Per-row loss and its gradient with respect to the output scores.
fn row_loss(task: Task, out: &[f64], target: f64, d_out: &mut [f64]) -> f64 {
    match task {
        Task::Regression => {
            let r = out[0] - target;
            d_out[0] = 2.0 * r;
            r * r
        }
        Task::Quantile { alpha } => {
            let z = target - out[0];
            d_out[0] = if z > 0.0 {
                -alpha
            } else if z < 0.0 {
                1.0 - alpha
            } else {
                0.0
            };
            pinball(z, alpha)
        }
        Task::Tercile => {
            let p = softmax([out[0], out[1], out[2]]);
            let class = target as usize;
            for k in 0..3 {
                d_out[k] = p[k] - if k == class { 1.0 } else { 0.0 };
            }
            -p[class].max(1e-300).ln()
        }
    }
}

/// Mean loss over `rows` and its parameter gradient.
fn loss_and_grad(shape: Shape, task: Task, p: &[f64], x: &[f64], y: &[f64], rows: &[usize], grad: &mut [f64]) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut hidden = vec![0.0; shape.hidden];
    let mut out = vec![0.0; shape.outputs];
    let mut d_out = vec![0.0; shape.outputs];
    let n_w1 = shape.hidden * shape.inputs;
    let n_w2 = shape.outputs * shape.hidden;
    let mut total = 0.0;
    for &i in rows {
        let row = &x[i * shape.inputs..(i + 1) * shape.inputs];
        shape.forward(p, row, &mut hidden, &mut out);
        total += row_loss(task, &out, y[i], &mut d_out);
        let w2 = &p[n_w1 + shape.hidden..n_w1 + shape.hidden + n_w2];
        let (g_w1, rest) = grad.split_at_mut(n_w1);
        let (g_b1, rest) = rest.split_at_mut(shape.hidden);
        let (g_w2, g_b2) = rest.split_at_mut(n_w2);
        for k in 0..shape.outputs {
            g_b2[k] += d_out[k];
            for j in 0..shape.hidden {
                g_w2[k * shape.hidden + j] += d_out[k] * hidden[j];
            }
        }
        for j in 0..shape.hidden {
            let dh: f64 = (0..shape.outputs).map(|k| d_out[k] * w2[k * shape.hidden + j]).sum();
            let dz = dh * hidden[j] * (1.0 - hidden[j]);
            g_b1[j] += dz;
            for (g, v) in g_w1[j * shape.inputs..(j + 1) * shape.inputs].iter_mut().zip(row) {
                *g += dz * v;
            }
        }
    }
    let n = rows.len().max(1) as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    total / n
}

fn mean_loss(shape: Shape, task: Task, p: &[f64], x: &[f64], y: &[f64], rows: std::ops::Range<usize>) -> f64 {
    let mut hidden = vec![0.0; shape.hidden];
    let mut out = vec![0.0; shape.outputs];
    let mut d_out = vec![0.0; shape.outputs];
    let n = rows.len().max(1) as f64;
    rows.map(|i| {
        shape.forward(p, &x[i * shape.inputs..(i + 1) * shape.inputs], &mut hidden, &mut out);
        row_loss(task, &out, y[i], &mut d_out)
    })
    .sum::<f64>()
        / n
}

/// Fit the stacker on a row-major matrix of base outputs: one column per base
/// for regression and quantile tasks, three class probabilities per base for
/// terciles. Rows are taken as chronological; the trailing
/// `validation_fraction` drives early stopping.
pub fn stacker_fit(inputs: &[f64], n_bases: usize, target: StackTarget, task: Task, params: &StackerParams) -> Result<Stacker> {
    if n_bases < 2 {
        return Err(Error::Config(format!("stacking needs at least two base models, got {n_bases}")));
    }
    let width = if task == Task::Tercile { 3 * n_bases } else { n_bases };
    let (n, y_raw): (usize, Vec<f64>) = match (target, task) {
        (StackTarget::Labels(l), Task::Tercile) => (l.len(), l.iter().map(|c| (c + 1) as f64).collect()),
        (StackTarget::Values(v), Task::Regression | Task::Quantile { .. }) => (v.len(), v.to_vec()),
        _ => return Err(Error::Config(format!("stacker targets do not match task {task}"))),
    };
    if inputs.len() != n * width {
        return Err(Error::shape("stacker", format!("{} inputs for {n} rows of width {width}", inputs.len())));
    }
    if n < 2 {
        return Err(Error::Config("stacker needs at least two rows".into()));
    }
    if inputs.iter().chain(&y_raw).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("stacker"));
    }
    if params.hidden == 0 || params.batch_size == 0 {
        return Err(Error::Config("hidden width and batch size must be positive".into()));
    }
    let input_scaling = (0..width)
        .map(|j| {
            let col: Vec<f64> = (0..n).map(|i| inputs[i * width + j]).collect();
            FeatureScaling::fit(&col, ScalingMode::MinMax)
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let target_scaling = match task {
        Task::Tercile => None,
        _ => Some(FeatureScaling::fit(&y_raw, ScalingMode::MinMax)?),
    };
    let x: Vec<f64> = inputs.iter().enumerate().map(|(i, v)| input_scaling[i % width].apply(*v)).collect();
    let y: Vec<f64> = match &target_scaling {
        Some(s) => y_raw.iter().map(|v| s.apply(*v)).collect(),
        None => y_raw,
    };
    let shape = Shape {
        inputs: width,
        hidden: params.hidden,
        outputs: if task == Task::Tercile { 3 } else { 1 },
    };
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut p = vec![0.0; shape.len()];
    let n_w1 = shape.hidden * shape.inputs;
    let w1_init = Normal::new(0.0, (1.0 / width as f64).sqrt()).expect("positive std");
    let w2_init = Normal::new(0.0, (1.0 / shape.hidden as f64).sqrt()).expect("positive std");
    for v in &mut p[..n_w1] {
        *v = w1_init.sample(&mut rng);
    }
    for v in &mut p[n_w1 + shape.hidden..n_w1 + shape.hidden + shape.outputs * shape.hidden] {
        *v = w2_init.sample(&mut rng);
    }

    let n_val = ((n as f64 * params.validation_fraction).round() as usize).min(n - 1);
    let n_train = n - n_val;
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut adam = AdamParams::new(params.lr, 0.0);
    let mut state = AdamState::new(p.len());
    let mut grad = vec![0.0; p.len()];
    let monitor = |p: &[f64]| if n_val > 0 { mean_loss(shape, task, p, &x, &y, n_train..n) } else { mean_loss(shape, task, p, &x, &y, 0..n_train) };
    let mut best = (monitor(&p), p.clone());
    let mut since_best = 0;
    for epoch in 0..params.max_epochs {
        // Cosine annealing down to a thousandth of the initial rate.
        let progress = epoch as f64 / params.max_epochs as f64;
        adam.lr = params.lr * (1e-3 + (1.0 - 1e-3) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
        order.shuffle(&mut rng);
        for (batch, rows) in order.chunks(params.batch_size).enumerate() {
            let loss = loss_and_grad(shape, task, &p, &x, &y, rows, &mut grad);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            adam_step(&mut p, &grad, &mut state, &adam);
        }
        let current = monitor(&p);
        if current < best.0 {
            best = (current, p.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= params.patience {
                log::debug!("stacker stopped at epoch {epoch}");
                break;
            }
        }
    }
    Ok(Stacker {
        task,
        n_bases,
        n_inputs: width,
        hidden: shape.hidden,
        params: best.1,
        input_scaling,
        target_scaling,
    })
}

impl Stacker {
    fn shape(&self) -> Shape {
        Shape {
            inputs: self.n_inputs,
            hidden: self.hidden,
            outputs: if self.task == Task::Tercile { 3 } else { 1 },
        }
    }

    fn scores(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.n_inputs {
            return Err(Error::FeatureCount {
                found: row.len(),
                expected: self.n_inputs,
            });
        }
        let x: Vec<f64> = row.iter().zip(&self.input_scaling).map(|(v, s)| s.apply(*v)).collect();
        let shape = self.shape();
        let mut hidden = vec![0.0; shape.hidden];
        let mut out = vec![0.0; shape.outputs];
        shape.forward(&self.params, &x, &mut hidden, &mut out);
        Ok(out)
    }

    /// Combined prediction in target units (regression and quantile tasks).
    pub fn predict(&self, row: &[f64]) -> Result<f64> {
        let scaling = self.target_scaling.as_ref().ok_or_else(|| Error::Config("tercile stacker predicts probabilities".into()))?;
        Ok(scaling.invert(self.scores(row)?[0]))
    }

    /// Class probabilities for below / near / above normal.
    pub fn predict_proba(&self, row: &[f64]) -> Result<[f64; 3]> {
        if self.task != Task::Tercile {
            return Err(Error::Config("class probabilities need a tercile stacker".into()));
        }
        let s = self.scores(row)?;
        Ok(softmax([s[0], s[1], s[2]]))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        let shape = self.shape();
        ck.set_meta("kind", "stacker");
        ck.set_meta("task", self.task);
        ck.set_meta("n_bases", self.n_bases);
        ck.set_meta("scaling", serde_json::to_string(&(&self.input_scaling, &self.target_scaling)).expect("serializable"));
        let n_w1 = shape.hidden * shape.inputs;
        let n_w2 = shape.outputs * shape.hidden;
        let p = &self.params;
        ck.push("hidden.weight", vec![shape.hidden, shape.inputs], p[..n_w1].to_vec()).expect("dims");
        ck.push("hidden.bias", vec![shape.hidden], p[n_w1..n_w1 + shape.hidden].to_vec()).expect("dims");
        ck.push("output.weight", vec![shape.outputs, shape.hidden], p[n_w1 + shape.hidden..n_w1 + shape.hidden + n_w2].to_vec()).expect("dims");
        ck.push("output.bias", vec![shape.outputs], p[n_w1 + shape.hidden + n_w2..].to_vec()).expect("dims");
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let task: Task = ck.meta_value("task")?;
        let n_bases = ck.meta_value("n_bases")?;
        let scaling = ck.meta.get("scaling").ok_or_else(|| Error::Invalid("checkpoint has no scaling".into()))?;
        let (input_scaling, target_scaling): (Vec<FeatureScaling>, Option<FeatureScaling>) =
            serde_json::from_str(scaling).map_err(|e| Error::Invalid(format!("stacker scaling: {e}")))?;
        let hw = ck.tensor("hidden.weight")?;
        let (hidden, n_inputs) = match hw.dims[..] {
            [h, i] => (h, i),
            _ => return Err(Error::Invalid("hidden.weight must be 2-D".into())),
        };
        let mut params = hw.values.clone();
        for name in ["hidden.bias", "output.weight", "output.bias"] {
            params.extend_from_slice(&ck.tensor(name)?.values);
        }
        let stacker = Stacker {
            task,
            n_bases,
            n_inputs,
            hidden,
            params,
            input_scaling,
            target_scaling,
        };
        if stacker.params.len() != stacker.shape().len() || stacker.input_scaling.len() != n_inputs {
            return Err(Error::Invalid("stacker checkpoint dimensions are inconsistent".into()));
        }
        Ok(stacker)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rows(n: usize, bases: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * bases).map(|_| rng.gen_range(-3.0..5.0)).collect()
    }

    #[test]
    fn reproduces_a_base_it_is_told_to() {
        let x = rows(1000, 2, 1);
        let y: Vec<f64> = (0..1000).map(|i| x[2 * i]).collect();
        let params = StackerParams { max_epochs: 400, ..Default::default() };
        let s = stacker_fit(&x, 2, StackTarget::Values(&y), Task::Regression, &params).unwrap();
        let scale = s.target_scaling.unwrap();
        let mse = (0..1000).map(|i| (scale.apply(s.predict(&x[2 * i..2 * i + 2]).unwrap()) - scale.apply(y[i])).powi(2)).sum::<f64>() / 1000.0;
        assert!(mse < 1e-4, "{mse}");
    }

    #[test]
    fn preconditions_and_probabilities() {
        let x = rows(30, 1, 2);
        assert!(stacker_fit(&x, 1, StackTarget::Values(&x), Task::Regression, &StackerParams::default()).is_err());
        let probs = rows(60, 6, 3);
        let labels: Vec<i8> = (0..60).map(|i| (i % 3) as i8 - 1).collect();
        let params = StackerParams { max_epochs: 5, hidden: 8, ..Default::default() };
        let s = stacker_fit(&probs, 2, StackTarget::Labels(&labels), Task::Tercile, &params).unwrap();
        for i in 0..60 {
            let p = s.predict_proba(&probs[6 * i..6 * i + 6]).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(s.predict(&probs[..6]).is_err());
        let back = Stacker::from_checkpoint(&Checkpoint::from_text(&s.to_checkpoint().to_text()).unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for task in [Task::Regression, Task::Quantile { alpha: 0.3 }, Task::Tercile] {
            let outputs = if task == Task::Tercile { 3 } else { 1 };
            let shape = Shape { inputs: 4, hidden: 5, outputs };
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let p: Vec<f64> = (0..shape.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x: Vec<f64> = (0..6 * 4).map(|_| rng.gen_range(0.0..1.0)).collect();
            let y: Vec<f64> = (0..6).map(|i| if outputs == 3 { (i % 3) as f64 } else { rng.gen_range(0.0..1.0) }).collect();
            let idx: Vec<usize> = (0..6).collect();
            let mut grad = vec![0.0; p.len()];
            loss_and_grad(shape, task, &p, &x, &y, &idx, &mut grad);
            let mut scratch = vec![0.0; p.len()];
            let eps = 1e-6;
            for i in 0..p.len() {
                let (mut up, mut down) = (p.clone(), p.clone());
                up[i] += eps;
                down[i] -= eps;
                let fd = (loss_and_grad(shape, task, &up, &x, &y, &idx, &mut scratch) - loss_and_grad(shape, task, &down, &x, &y, &idx, &mut scratch)) / (2.0 * eps);
                let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
                assert!(rel < 1e-4, "{task}: param {i} analytic {} numeric {fd}", grad[i]);
            }
        }
    }

    #[test]
    fn inference_is_pure() {
        let x = rows(50, 3, 5);
        let y: Vec<f64> = (0..50).map(|i| x[3 * i] - x[3 * i + 2]).collect();
        let params = StackerParams { max_epochs: 10, ..Default::default() };
        let s = stacker_fit(&x, 3, StackTarget::Values(&y), Task::Quantile { alpha: 0.9 }, &params).unwrap();
        let a = s.predict(&x[..3]).unwrap();
        assert_eq!(a, s.predict(&x[..3]).unwrap());
        assert_eq!(s, stacker_fit(&x, 3, StackTarget::Values(&y), Task::Quantile { alpha: 0.9 }, &params).unwrap());
    }
}
