//! Tensor type and the forward/backward passes of the network layers.

use serde::{Deserialize, Serialize};

use crate::error::{shape, Result};

/// Dense (batch, channels, height, width) array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor4 {
    dims: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn new(dims: [usize; 4], data: Vec<f64>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(shape("tensor", format!("zero dimension in {dims:?}")));
        }
        if data.len() != dims.iter().product::<usize>() {
            return Err(shape("tensor", format!("{} values for dims {dims:?}", data.len())));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    pub fn channels(&self) -> usize {
        self.dims[1]
    }

    pub fn height(&self) -> usize {
        self.dims[2]
    }

    pub fn width(&self) -> usize {
        self.dims[3]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    fn plane_len(&self) -> usize {
        self.dims[2] * self.dims[3]
    }

    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let p = self.plane_len();
        let start = (n * self.dims[1] + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let p = self.plane_len();
        let start = (n * self.dims[1] + c) * p;
        &mut self.data[start..start + p]
    }

    /// One batch item as a batch of one.
    pub fn item(&self, n: usize) -> Tensor4 {
        let len = self.dims[1] * self.plane_len();
        Tensor4 {
            dims: [1, self.dims[1], self.dims[2], self.dims[3]],
            data: self.data[n * len..(n + 1) * len].to_vec(),
        }
    }

    /// Stack batch-of-one tensors along the batch axis.
    pub fn stack(items: &[Tensor4]) -> Result<Tensor4> {
        let first = items.first().ok_or_else(|| shape("stack", "no tensors"))?;
        let [_, c, h, w] = first.dims;
        let mut data = Vec::with_capacity(items.len() * c * h * w);
        for t in items {
            if t.dims[1..] != first.dims[1..] {
                return Err(shape("stack", format!("{:?} vs {:?}", t.dims, first.dims)));
            }
            data.extend_from_slice(&t.data);
        }
        Tensor4::new([data.len() / (c * h * w), c, h, w], data)
    }

    fn debug_check(&self) {
        debug_assert!(self.data.iter().all(|v| v.is_finite()), "non-finite activation");
    }
}

/// 2-D convolution with a `k×k` kernel (k odd), stride 1 and zero padding
/// `k/2`. `weight` is laid out `[out][in][ky][kx]`.
pub fn conv2d_forward(input: &Tensor4, weight: &[f64], bias: &[f64], k: usize, layer: &str) -> Result<Tensor4> {
    let [n, in_c, h, w] = input.dims;
    let out_c = bias.len();
    if k % 2 == 0 || weight.len() != out_c * in_c * k * k {
        return Err(shape(layer, format!("weight of {} values for {in_c} -> {out_c} channels, k={k}", weight.len())));
    }
    let mut out = Tensor4::zeros([n, out_c, h, w]);
    let pad = (k / 2) as isize;
    for b in 0..n {
        for oc in 0..out_c {
            let plane = out.plane_mut(b, oc);
            plane.fill(bias[oc]);
            for ic in 0..in_c {
                let src = input.plane(b, ic);
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = weight[((oc * in_c + ic) * k + ky) * k + kx];
                        let (dy, dx) = (ky as isize - pad, kx as isize - pad);
                        let (ys, xs) = (overlap(h, dy), overlap(w, dx));
                        for y in ys {
                            let sy = (y as isize + dy) as usize;
                            let dst = &mut plane[y * w + xs.start..y * w + xs.end];
                            let s = &src[sy * w + (xs.start as isize + dx) as usize..sy * w + (xs.end as isize + dx) as usize];
                            for (o, i) in dst.iter_mut().zip(s) {
                                *o += wv * i;
                            }
                        }
                    }
                }
            }
        }
    }
    out.debug_check();
    Ok(out)
}

/// Backward pass of [`conv2d_forward`]: accumulates into `grad_w` and
/// `grad_b` and returns the input gradient when `need_input` is set.
pub fn conv2d_backward(
    input: &Tensor4,
    weight: &[f64],
    grad_out: &Tensor4,
    k: usize,
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    need_input: bool,
) -> Option<Tensor4> {
    let [n, in_c, h, w] = input.dims;
    let out_c = grad_out.dims[1];
    let pad = (k / 2) as isize;
    let mut grad_in = need_input.then(|| Tensor4::zeros(input.dims));
    for b in 0..n {
        for oc in 0..out_c {
            let g = grad_out.plane(b, oc);
            grad_b[oc] += g.iter().sum::<f64>();
            for ic in 0..in_c {
                let src = input.plane(b, ic);
                for ky in 0..k {
                    for kx in 0..k {
                        let wi = ((oc * in_c + ic) * k + ky) * k + kx;
                        let (dy, dx) = (ky as isize - pad, kx as isize - pad);
                        let (ys, xs) = (overlap(h, dy), overlap(w, dx));
                        let mut acc = 0.0;
                        for y in ys.clone() {
                            let sy = (y as isize + dy) as usize;
                            let gr = &g[y * w + xs.start..y * w + xs.end];
                            let s = &src[sy * w + (xs.start as isize + dx) as usize..sy * w + (xs.end as isize + dx) as usize];
                            acc += gr.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
                        }
                        grad_w[wi] += acc;
                        if let Some(gi) = grad_in.as_mut() {
                            let wv = weight[wi];
                            let dst = gi.plane_mut(b, ic);
                            for y in ys {
                                let sy = (y as isize + dy) as usize;
                                let gr = &g[y * w + xs.start..y * w + xs.end];
                                let d = &mut dst[sy * w + (xs.start as isize + dx) as usize..sy * w + (xs.end as isize + dx) as usize];
                                for (o, v) in d.iter_mut().zip(gr) {
                                    *o += wv * v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    grad_in
}

/// Output positions `y` with `0 <= y + d < len`.
fn overlap(len: usize, d: isize) -> std::ops::Range<usize> {
    let lo = (-d).max(0) as usize;
    let hi = (len as isize - d.max(0)).max(0) as usize;
    lo.min(hi)..hi
}

pub fn relu_forward(mut t: Tensor4) -> Tensor4 {
    t.data.iter_mut().for_each(|v| *v = v.max(0.0));
    t
}

/// Gradient through a ReLU, given the ReLU's output.
pub fn relu_backward(output: &Tensor4, mut grad: Tensor4) -> Tensor4 {
    for (g, o) in grad.data.iter_mut().zip(&output.data) {
        if *o <= 0.0 {
            *g = 0.0;
        }
    }
    grad
}

/// 2×2 max pooling with stride 2. Also returns, per output cell, the plane
/// offset of the selected input (first maximum on ties).
pub fn maxpool2_forward(input: &Tensor4) -> Result<(Tensor4, Vec<u32>)> {
    let [n, c, h, w] = input.dims;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(shape("maxpool2", format!("odd spatial size {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor4::zeros([n, c, oh, ow]);
    let mut idx = vec![0u32; n * c * oh * ow];
    for b in 0..n {
        for ch in 0..c {
            let src = input.plane(b, ch);
            let base = (b * c + ch) * oh * ow;
            let dst = out.plane_mut(b, ch);
            for y in 0..oh {
                for x in 0..ow {
                    let mut best = (2 * y) * w + 2 * x;
                    for off in [(2 * y) * w + 2 * x + 1, (2 * y + 1) * w + 2 * x, (2 * y + 1) * w + 2 * x + 1] {
                        if src[off] > src[best] {
                            best = off;
                        }
                    }
                    dst[y * ow + x] = src[best];
                    idx[base + y * ow + x] = best as u32;
                }
            }
        }
    }
    Ok((out, idx))
}

pub fn maxpool2_backward(indices: &[u32], grad_out: &Tensor4, input_dims: [usize; 4]) -> Tensor4 {
    let [n, c, _, _] = input_dims;
    let mut grad = Tensor4::zeros(input_dims);
    let op = grad_out.plane_len();
    for b in 0..n {
        for ch in 0..c {
            let g = grad_out.plane(b, ch);
            let base = (b * c + ch) * op;
            let dst = grad.plane_mut(b, ch);
            for (i, v) in g.iter().enumerate() {
                dst[indices[base + i] as usize] += v;
            }
        }
    }
    grad
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample_nearest_forward(input: &Tensor4) -> Tensor4 {
    let [n, c, h, w] = input.dims;
    let mut out = Tensor4::zeros([n, c, 2 * h, 2 * w]);
    for b in 0..n {
        for ch in 0..c {
            let src = input.plane(b, ch).to_vec();
            let dst = out.plane_mut(b, ch);
            for y in 0..2 * h {
                for x in 0..2 * w {
                    dst[y * 2 * w + x] = src[(y / 2) * w + x / 2];
                }
            }
        }
    }
    out
}

pub fn upsample_nearest_backward(grad_out: &Tensor4) -> Tensor4 {
    let [n, c, h2, w2] = grad_out.dims;
    let (h, w) = (h2 / 2, w2 / 2);
    let mut grad = Tensor4::zeros([n, c, h, w]);
    for b in 0..n {
        for ch in 0..c {
            let g = grad_out.plane(b, ch).to_vec();
            let dst = grad.plane_mut(b, ch);
            for y in 0..h2 {
                for x in 0..w2 {
                    dst[(y / 2) * w + x / 2] += g[y * w2 + x];
                }
            }
        }
    }
    grad
}

/// Concatenate along the channel axis.
pub fn concat_channels(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    let [n, ca, h, w] = a.dims;
    if b.dims[0] != n || b.dims[2] != h || b.dims[3] != w {
        return Err(shape("concat", format!("{:?} vs {:?}", a.dims, b.dims)));
    }
    let cb = b.dims[1];
    let p = h * w;
    let mut data = Vec::with_capacity(n * (ca + cb) * p);
    for i in 0..n {
        data.extend_from_slice(&a.data[i * ca * p..(i + 1) * ca * p]);
        data.extend_from_slice(&b.data[i * cb * p..(i + 1) * cb * p]);
    }
    Ok(Tensor4 {
        dims: [n, ca + cb, h, w],
        data,
    })
}

/// Split a channel-concatenated gradient back into its two parts.
pub fn split_channels(grad: &Tensor4, first: usize) -> (Tensor4, Tensor4) {
    let [n, c, h, w] = grad.dims;
    let p = h * w;
    let (mut a, mut b) = (Vec::with_capacity(n * first * p), Vec::with_capacity(n * (c - first) * p));
    for i in 0..n {
        let item = &grad.data[i * c * p..(i + 1) * c * p];
        a.extend_from_slice(&item[..first * p]);
        b.extend_from_slice(&item[first * p..]);
    }
    (
        Tensor4 {
            dims: [n, first, h, w],
            data: a,
        },
        Tensor4 {
            dims: [n, c - first, h, w],
            data: b,
        },
    )
}

/// Pad height and width up to multiples of `multiple` by repeating the last
/// row and column.
pub fn pad_replicate(input: &Tensor4, multiple: usize) -> Tensor4 {
    let [n, c, h, w] = input.dims;
    let (ph, pw) = (h.div_ceil(multiple) * multiple, w.div_ceil(multiple) * multiple);
    if (ph, pw) == (h, w) {
        return input.clone();
    }
    let mut out = Tensor4::zeros([n, c, ph, pw]);
    for b in 0..n {
        for ch in 0..c {
            let src = input.plane(b, ch).to_vec();
            let dst = out.plane_mut(b, ch);
            for y in 0..ph {
                for x in 0..pw {
                    dst[y * pw + x] = src[y.min(h - 1) * w + x.min(w - 1)];
                }
            }
        }
    }
    out
}
