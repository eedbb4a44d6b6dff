//! U-shaped encoder-decoder over gridded feature stacks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::*;
use crate::checkpoint::Checkpoint;
use crate::error::{shape, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputActivation {
    Sigmoid,
    Identity,
}

impl std::fmt::Display for OutputActivation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OutputActivation::Sigmoid => "sigmoid",
            OutputActivation::Identity => "identity",
        })
    }
}

impl std::str::FromStr for OutputActivation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(OutputActivation::Sigmoid),
            "identity" => Ok(OutputActivation::Identity),
            _ => Err(Error::Config(format!("unknown output activation `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    pub depth: usize,
    pub output: OutputActivation,
}

impl UNetConfig {
    pub fn new(in_channels: usize, output: OutputActivation) -> Self {
        Self {
            in_channels,
            base_channels: 16,
            depth: 2,
            output,
        }
    }

    /// Spatial sizes must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << self.depth
    }

    fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub name: String,
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    /// Start of the weights in the flat parameter vector; the bias follows.
    pub offset: usize,
}

impl ConvSpec {
    fn n_weights(&self) -> usize {
        self.out_c * self.in_c * self.k * self.k
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UNet {
    pub config: UNetConfig,
    convs: Vec<ConvSpec>,
    params: Vec<f64>,
}

/// Intermediate activations kept for the backward pass.
pub struct ForwardCache {
    input: Tensor4,
    stem: Tensor4,
    enc: Vec<(Tensor4, Tensor4)>,
    pool: Vec<(Tensor4, Vec<u32>)>,
    mid: (Tensor4, Tensor4),
    /// Per decoder level, deepest first: upsampled, up-conv output, concat, a, b.
    dec: Vec<[Tensor4; 5]>,
    pub output: Tensor4,
}

impl ForwardCache {
    /// Decoder features feeding the 1×1 head.
    pub fn head_input(&self) -> &Tensor4 {
        self.dec.last().map(|d| &d[4]).unwrap_or(&self.mid.1)
    }
}

impl UNet {
    pub fn new(config: UNetConfig, seed: u64) -> Result<Self> {
        if config.in_channels == 0 || config.base_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        let mut convs = Vec::new();
        let mut offset = 0;
        let mut add = |name: String, in_c: usize, out_c: usize, k: usize| {
            let spec = ConvSpec { name, in_c, out_c, k, offset };
            offset += spec.n_weights() + out_c;
            convs.push(spec);
        };
        let d = config.depth;
        add("stem".into(), config.in_channels, config.channels(0), 1);
        for i in 0..d {
            let input = config.channels(i.saturating_sub(1));
            add(format!("enc{i}.a"), input, config.channels(i), 3);
            add(format!("enc{i}.b"), config.channels(i), config.channels(i), 3);
        }
        let below = config.channels(d.saturating_sub(1));
        add("mid.a".into(), below, config.channels(d), 3);
        add("mid.b".into(), config.channels(d), config.channels(d), 3);
        for i in (0..d).rev() {
            add(format!("up{i}"), config.channels(i + 1), config.channels(i), 3);
            add(format!("dec{i}.a"), 2 * config.channels(i), config.channels(i), 3);
            add(format!("dec{i}.b"), config.channels(i), config.channels(i), 3);
        }
        add("head".into(), config.channels(0), 1, 1);

        let mut params = vec![0.0; offset];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = convs.len() - 1;
        for (i, c) in convs.iter().enumerate() {
            let fan_in = (c.in_c * c.k * c.k) as f64;
            let gain = if i == last { 1.0 } else { 2.0 };
            let normal = Normal::new(0.0, (gain / fan_in).sqrt()).expect("positive std");
            for w in &mut params[c.offset..c.offset + c.n_weights()] {
                *w = normal.sample(&mut rng);
            }
        }
        Ok(Self { config, convs, params })
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn convs(&self) -> &[ConvSpec] {
        &self.convs
    }

    fn head(&self) -> usize {
        self.convs.len() - 1
    }

    /// Head weights (one per decoder channel) and bias.
    pub fn head_params_mut(&mut self) -> (&mut [f64], &mut f64) {
        let h = &self.convs[self.head()];
        let (start, n) = (h.offset, h.n_weights());
        let (w, b) = self.params[start..start + n + 1].split_at_mut(n);
        (w, &mut b[0])
    }

    pub fn set_output(&mut self, output: OutputActivation) {
        self.config.output = output;
    }

    fn conv(&self, i: usize, x: &Tensor4) -> Result<Tensor4> {
        let c = &self.convs[i];
        let n = c.n_weights();
        conv2d_forward(x, &self.params[c.offset..c.offset + n], &self.params[c.offset + n..c.offset + n + c.out_c], c.k, &c.name)
    }

    fn conv_relu(&self, i: usize, x: &Tensor4) -> Result<Tensor4> {
        self.conv(i, x).map(relu_forward)
    }

    fn conv_back(&self, i: usize, x: &Tensor4, g: &Tensor4, grads: &mut [f64], need_input: bool) -> Option<Tensor4> {
        let c = &self.convs[i];
        let n = c.n_weights();
        let (gw, gb) = grads[c.offset..c.offset + n + c.out_c].split_at_mut(n);
        conv2d_backward(x, &self.params[c.offset..c.offset + n], g, c.k, gw, gb, need_input)
    }

    pub fn check_input(&self, x: &Tensor4) -> Result<()> {
        let m = self.config.size_multiple();
        if x.channels() != self.config.in_channels {
            return Err(shape("input", format!("{} channels, network expects {}", x.channels(), self.config.in_channels)));
        }
        if x.height() % m != 0 || x.width() % m != 0 {
            return Err(shape("input", format!("{}x{} not divisible by {m}", x.height(), x.width())));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor4) -> Result<ForwardCache> {
        self.check_input(x)?;
        let d = self.config.depth;
        let stem = self.conv(0, x)?;
        let mut enc = Vec::with_capacity(d);
        let mut pool: Vec<(Tensor4, Vec<u32>)> = Vec::with_capacity(d);
        for i in 0..d {
            let input = if i == 0 { &stem } else { &pool[i - 1].0 };
            let a = self.conv_relu(1 + 2 * i, input)?;
            let b = self.conv_relu(2 + 2 * i, &a)?;
            pool.push(maxpool2_forward(&b)?);
            enc.push((a, b));
        }
        let below = pool.last().map(|p| &p.0).unwrap_or(&stem);
        let mid_a = self.conv_relu(1 + 2 * d, below)?;
        let mid_b = self.conv_relu(2 + 2 * d, &mid_a)?;
        let mut dec: Vec<[Tensor4; 5]> = Vec::with_capacity(d);
        for (step, i) in (0..d).rev().enumerate() {
            let base = 3 + 2 * d + 3 * step;
            let h = dec.last().map(|l| &l[4]).unwrap_or(&mid_b);
            let up = upsample_nearest_forward(h);
            let up_conv = self.conv_relu(base, &up)?;
            let cat = concat_channels(&up_conv, &enc[i].1)?;
            let a = self.conv_relu(base + 1, &cat)?;
            let b = self.conv_relu(base + 2, &a)?;
            dec.push([up, up_conv, cat, a, b]);
        }
        let head_in = dec.last().map(|l| &l[4]).unwrap_or(&mid_b);
        let mut output = self.conv(self.head(), head_in)?;
        if self.config.output == OutputActivation::Sigmoid {
            output.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
        }
        Ok(ForwardCache {
            input: x.clone(),
            stem,
            enc,
            pool,
            mid: (mid_a, mid_b),
            dec,
            output,
        })
    }

    /// Network output, shape (n, 1, h, w).
    pub fn predict(&self, x: &Tensor4) -> Result<Tensor4> {
        Ok(self.forward(x)?.output)
    }

    /// Gradient of a loss with respect to all parameters, given the loss
    /// gradient with respect to the network output.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &Tensor4) -> Vec<f64> {
        let d = self.config.depth;
        let mut grads = vec![0.0; self.params.len()];
        let mut g = grad_output.clone();
        if self.config.output == OutputActivation::Sigmoid {
            for (gv, o) in g.data_mut().iter_mut().zip(cache.output.data()) {
                *gv *= o * (1.0 - o);
            }
        }
        let mut g = self.conv_back(self.head(), cache.head_input(), &g, &mut grads, true).expect("input grad");
        let mut skip_grads: Vec<Option<Tensor4>> = vec![None; d];
        for (step, i) in (0..d).rev().enumerate().collect::<Vec<_>>().into_iter().rev() {
            let base = 3 + 2 * d + 3 * step;
            let [up, up_conv, cat, a, b] = &cache.dec[step];
            g = relu_backward(b, g);
            g = self.conv_back(base + 2, a, &g, &mut grads, true).expect("input grad");
            g = relu_backward(a, g);
            g = self.conv_back(base + 1, cat, &g, &mut grads, true).expect("input grad");
            let (g_up, g_skip) = split_channels(&g, up_conv.channels());
            skip_grads[i] = Some(g_skip);
            let g_up = relu_backward(up_conv, g_up);
            g = self.conv_back(base, up, &g_up, &mut grads, true).expect("input grad");
            g = upsample_nearest_backward(&g);
        }
        let (mid_a, mid_b) = &cache.mid;
        g = relu_backward(mid_b, g);
        g = self.conv_back(2 + 2 * d, mid_a, &g, &mut grads, true).expect("input grad");
        g = relu_backward(mid_a, g);
        let below = cache.pool.last().map(|p| &p.0).unwrap_or(&cache.stem);
        g = self.conv_back(1 + 2 * d, below, &g, &mut grads, true).expect("input grad");
        for i in (0..d).rev() {
            let (a, b) = &cache.enc[i];
            let mut gb = maxpool2_backward(&cache.pool[i].1, &g, b.dims());
            if let Some(s) = &skip_grads[i] {
                gb.data_mut().iter_mut().zip(s.data()).for_each(|(x, y)| *x += y);
            }
            g = relu_backward(b, gb);
            g = self.conv_back(2 + 2 * i, a, &g, &mut grads, true).expect("input grad");
            g = relu_backward(a, g);
            let input = if i == 0 { &cache.stem } else { &cache.pool[i - 1].0 };
            g = self.conv_back(1 + 2 * i, input, &g, &mut grads, true).expect("input grad");
        }
        self.conv_back(0, &cache.input, &g, &mut grads, false);
        grads
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        ck.set_meta("kind", "unet");
        ck.set_meta("in_channels", self.config.in_channels);
        ck.set_meta("base_channels", self.config.base_channels);
        ck.set_meta("depth", self.config.depth);
        ck.set_meta("output", self.config.output);
        for c in &self.convs {
            let n = c.n_weights();
            ck.push(format!("{}.weight", c.name), vec![c.out_c, c.in_c, c.k, c.k], self.params[c.offset..c.offset + n].to_vec())
                .expect("consistent dims");
            ck.push(format!("{}.bias", c.name), vec![c.out_c], self.params[c.offset + n..c.offset + n + c.out_c].to_vec())
                .expect("consistent dims");
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config = UNetConfig {
            in_channels: ck.meta_value("in_channels")?,
            base_channels: ck.meta_value("base_channels")?,
            depth: ck.meta_value("depth")?,
            output: ck.meta_value("output")?,
        };
        let mut net = UNet::new(config, 0)?;
        for c in net.convs.clone() {
            let n = c.n_weights();
            let w = ck.tensor(&format!("{}.weight", c.name))?;
            let b = ck.tensor(&format!("{}.bias", c.name))?;
            if w.dims != [c.out_c, c.in_c, c.k, c.k] || b.dims != [c.out_c] {
                return Err(shape(c.name.clone(), format!("checkpoint dims {:?} / {:?}", w.dims, b.dims)));
            }
            net.params[c.offset..c.offset + n].copy_from_slice(&w.values);
            net.params[c.offset + n..c.offset + n + c.out_c].copy_from_slice(&b.values);
        }
        Ok(net)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "loss")]
pub enum Loss {
    Squared,
    Pinball { alpha: f64 },
}

/// Summed loss over land cells of one output map and its gradient with
/// respect to the outputs (zero at sea cells).
pub fn masked_loss(output: &[f64], target: &[f64], land: &[bool], loss: Loss) -> (f64, Vec<f64>) {
    let mut total = 0.0;
    let mut grad = vec![0.0; output.len()];
    for i in 0..output.len() {
        if !land[i] {
            continue;
        }
        let r = target[i] - output[i];
        match loss {
            Loss::Squared => {
                total += r * r;
                grad[i] = -2.0 * r;
            }
            Loss::Pinball { alpha } => {
                total += crate::task::pinball(r, alpha);
                grad[i] = if r > 0.0 {
                    -alpha
                } else if r < 0.0 {
                    1.0 - alpha
                } else {
                    0.0
                };
            }
        }
    }
    (total, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random(dims: [usize; 4], seed: u64) -> Tensor4 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor4::new(dims, (0..dims.iter().product()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Relative error with a floor on the denominator so parameters whose
    /// gradient is (numerically) zero compare on an absolute scale.
    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    fn gradient_check(output: OutputActivation, loss: Loss) -> f64 {
        let config = UNetConfig {
            in_channels: 3,
            base_channels: 2,
            depth: 2,
            output,
        };
        let mut net = UNet::new(config, 11).unwrap();
        // Nonzero biases keep the ReLUs away from their kinks more reliably.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for c in net.convs.clone() {
            let n = c.n_weights();
            for b in &mut net.params[c.offset + n..c.offset + n + c.out_c] {
                *b = rng.gen_range(0.05..0.2);
            }
        }
        let x = random([1, 3, 8, 8], 13);
        let target: Vec<f64> = (0..64).map(|_| rng.gen_range(0.0..1.0)).collect();
        let land: Vec<bool> = (0..64).map(|i| i % 5 != 0).collect();
        let objective = |net: &UNet| masked_loss(net.predict(&x).unwrap().data(), &target, &land, loss).0;
        let cache = net.forward(&x).unwrap();
        let (_, g_out) = masked_loss(cache.output.data(), &target, &land, loss);
        let grads = net.backward(&cache, &Tensor4::new([1, 1, 8, 8], g_out).unwrap());
        let eps = 1e-4;
        let mut worst: f64 = 0.0;
        for i in 0..net.n_params() {
            let orig = net.params[i];
            net.params[i] = orig + eps;
            let up = objective(&net);
            net.params[i] = orig - eps;
            let down = objective(&net);
            net.params[i] = orig;
            worst = worst.max(rel_err((up - down) / (2.0 * eps), grads[i]));
        }
        worst
    }

    #[test]
    fn full_network_gradient_check() {
        let worst = gradient_check(OutputActivation::Sigmoid, Loss::Squared);
        assert!(worst < 1e-4, "max relative error {worst}");
        let worst = gradient_check(OutputActivation::Identity, Loss::Squared);
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn shapes_and_checkpoint_round_trip() {
        let net = UNet::new(UNetConfig { in_channels: 4, base_channels: 3, depth: 2, output: OutputActivation::Identity }, 1).unwrap();
        let x = random([2, 4, 8, 12], 2);
        let y = net.predict(&x).unwrap();
        assert_eq!(y.dims(), [2, 1, 8, 12]);
        assert!(net.predict(&random([1, 4, 6, 12], 3)).is_err());
        assert!(net.predict(&random([1, 5, 8, 12], 3)).is_err());
        let back = UNet::from_checkpoint(&Checkpoint::from_text(&net.to_checkpoint().to_text()).unwrap()).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn identical_batch_items_give_identical_maps() {
        let net = UNet::new(UNetConfig { in_channels: 2, base_channels: 2, depth: 1, output: OutputActivation::Sigmoid }, 5).unwrap();
        let one = random([1, 2, 4, 4], 6);
        let y = net.predict(&Tensor4::stack(&[one.clone(), one]).unwrap()).unwrap();
        assert_eq!(y.plane(0, 0), y.plane(1, 0));
        assert!(y.data().iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn sea_targets_do_not_change_the_loss() {
        let out = [0.2, 0.4, 0.6];
        let land = [true, false, true];
        let (a, ga) = masked_loss(&out, &[0.0, 5.0, 1.0], &land, Loss::Squared);
        let (b, gb) = masked_loss(&out, &[0.0, -99.0, 1.0], &land, Loss::Squared);
        assert_eq!((a, ga), (b, gb));
    }
}
