//! Dense layers with hand-written backward passes, and Adam.
//!
//! Layers hold their parameters as flat row-major vectors. Backward methods
//! accumulate parameter gradients into a zeroed copy of the layer
//! ([`Linear::zeroed`] etc.) and return the input gradient.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Row-major f64 array with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::LengthMismatch { what: "tensor data", expected: n, got: data.len() });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![0.0; n] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

fn uniform_fill(rng: &mut impl Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::LengthMismatch { what, expected, got });
    }
    Ok(())
}

/// `y = W x + b` with `W` of shape `n_out x n_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub n_in: usize,
    pub n_out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    /// Weights and biases uniform in `+-sqrt(1 / n_in)`.
    pub fn new(n_in: usize, n_out: usize, rng: &mut impl Rng) -> Self {
        let bound = (1.0 / n_in as f64).sqrt();
        Self {
            n_in,
            n_out,
            weight: uniform_fill(rng, n_in * n_out, bound),
            bias: uniform_fill(rng, n_out, bound),
        }
    }

    pub fn zeroed(&self) -> Self {
        Self { n_in: self.n_in, n_out: self.n_out, weight: vec![0.0; self.weight.len()], bias: vec![0.0; self.n_out] }
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("linear input", self.n_in, x.len())?;
        Ok(self
            .weight
            .chunks_exact(self.n_in)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>())
            .collect())
    }

    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Linear) -> Result<Vec<f64>> {
        check_len("linear input", self.n_in, x.len())?;
        check_len("linear output gradient", self.n_out, dy.len())?;
        let mut dx = vec![0.0; self.n_in];
        for (o, &g) in dy.iter().enumerate() {
            grad.bias[o] += g;
            let row = &self.weight[o * self.n_in..(o + 1) * self.n_in];
            let grow = &mut grad.weight[o * self.n_in..(o + 1) * self.n_in];
            for i in 0..self.n_in {
                grow[i] += g * x[i];
                dx[i] += g * row[i];
            }
        }
        Ok(dx)
    }
}

/// Shape-preserving 2-D cross-correlation over `[C, H, W]`; kernel 1 (no
/// padding) or 3 (zero padding 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    /// `[c_out, c_in, k, k]`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn new(c_in: usize, c_out: usize, kernel: usize, rng: &mut impl Rng) -> Result<Self> {
        if kernel != 1 && kernel != 3 {
            return Err(Error::invalid(format!("unsupported kernel size {kernel}")));
        }
        let bound = (1.0 / (c_in * kernel * kernel) as f64).sqrt();
        Ok(Self {
            c_in,
            c_out,
            kernel,
            weight: uniform_fill(rng, c_out * c_in * kernel * kernel, bound),
            bias: uniform_fill(rng, c_out, bound),
        })
    }

    pub fn zeroed(&self) -> Self {
        Self { weight: vec![0.0; self.weight.len()], bias: vec![0.0; self.bias.len()], ..*self }
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn dims(&self, x: &Tensor) -> Result<(usize, usize)> {
        match *x.shape() {
            [c, h, w] if c == self.c_in => Ok((h, w)),
            _ => Err(Error::shape(format!("conv expects [{}, H, W], got {:?}", self.c_in, x.shape()))),
        }
    }

    /// Calls `f(out_index, in_index, weight_index)` for every valid tap.
    fn for_each_tap(&self, h: usize, w: usize, mut f: impl FnMut(usize, usize, usize)) {
        let k = self.kernel;
        let pad = (k / 2) as isize;
        for co in 0..self.c_out {
            for ci in 0..self.c_in {
                for ky in 0..k {
                    for kx in 0..k {
                        let wi = ((co * self.c_in + ci) * k + ky) * k + kx;
                        for y in 0..h {
                            let sy = y as isize + ky as isize - pad;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            for xx in 0..w {
                                let sx = xx as isize + kx as isize - pad;
                                if sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                let out = (co * h + y) * w + xx;
                                let inp = (ci * h + sy as usize) * w + sx as usize;
                                f(out, inp, wi);
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (h, w) = self.dims(x)?;
        let mut out = vec![0.0; self.c_out * h * w];
        for (co, chunk) in out.chunks_exact_mut(h * w).enumerate() {
            chunk.fill(self.bias[co]);
        }
        let xd = x.data();
        self.for_each_tap(h, w, |o, i, wi| out[o] += self.weight[wi] * xd[i]);
        Tensor::new(vec![self.c_out, h, w], out)
    }

    pub fn backward(&self, x: &Tensor, dy: &Tensor, grad: &mut Conv2d) -> Result<Tensor> {
        let (h, w) = self.dims(x)?;
        if dy.shape() != [self.c_out, h, w] {
            return Err(Error::shape(format!("conv output gradient has shape {:?}", dy.shape())));
        }
        let (xd, dyd) = (x.data(), dy.data());
        for (co, chunk) in dyd.chunks_exact(h * w).enumerate() {
            grad.bias[co] += chunk.iter().sum::<f64>();
        }
        let mut dx = vec![0.0; x.len()];
        let gw = &mut grad.weight;
        self.for_each_tap(h, w, |o, i, wi| {
            gw[wi] += dyd[o] * xd[i];
            dx[i] += dyd[o] * self.weight[wi];
        });
        Tensor::new(x.shape().to_vec(), dx)
    }
}

/// Batch normalisation over `[N, C, ...]`, statistics per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub channels: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

/// What backward needs from a forward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    mode: Mode,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }

    /// Gradient holder: only `gamma` and `beta` are meaningful.
    pub fn zeroed(&self) -> Self {
        Self {
            channels: self.channels,
            gamma: vec![0.0; self.channels],
            beta: vec![0.0; self.channels],
            running_mean: vec![0.0; self.channels],
            running_var: vec![0.0; self.channels],
        }
    }

    pub fn num_params(&self) -> usize {
        2 * self.channels
    }

    fn dims(&self, x: &Tensor) -> Result<(usize, usize)> {
        let s = x.shape();
        if s.len() < 2 || s[1] != self.channels {
            return Err(Error::shape(format!("batch norm expects [N, {}, ...], got {s:?}", self.channels)));
        }
        Ok((s[0], s[2..].iter().product()))
    }

    /// Train mode normalises by batch statistics (biased variance) and
    /// updates the running estimates (unbiased variance); infer mode uses
    /// the running estimates only.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, BatchNormCache)> {
        let (n, s) = self.dims(x)?;
        let c = self.channels;
        let m = n * s;
        let xd = x.data();
        let at = |b: usize, ch: usize, i: usize| (b * c + ch) * s + i;
        let (mean, var) = match mode {
            Mode::Train => {
                if m < 2 {
                    return Err(Error::invalid("batch norm in train mode needs at least two values per channel"));
                }
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let vals = (0..n).flat_map(|b| (0..s).map(move |i| at(b, ch, i)));
                    let mu = vals.clone().map(|j| xd[j]).sum::<f64>() / m as f64;
                    let v = vals.map(|j| (xd[j] - mu).powi(2)).sum::<f64>() / m as f64;
                    mean[ch] = mu;
                    var[ch] = v;
                    self.running_mean[ch] = (1.0 - BN_MOMENTUM) * self.running_mean[ch] + BN_MOMENTUM * mu;
                    let unbiased = v * m as f64 / (m - 1) as f64;
                    self.running_var[ch] = (1.0 - BN_MOMENTUM) * self.running_var[ch] + BN_MOMENTUM * unbiased;
                }
                (mean, var)
            }
            Mode::Infer => (self.running_mean.clone(), self.running_var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = vec![0.0; xd.len()];
        let mut y = vec![0.0; xd.len()];
        for b in 0..n {
            for ch in 0..c {
                for i in 0..s {
                    let j = at(b, ch, i);
                    xhat[j] = (xd[j] - mean[ch]) * inv_std[ch];
                    y[j] = self.gamma[ch] * xhat[j] + self.beta[ch];
                }
            }
        }
        Ok((Tensor::new(x.shape().to_vec(), y)?, BatchNormCache { xhat, inv_std, mode }))
    }

    pub fn backward(&self, cache: &BatchNormCache, dy: &Tensor, grad: &mut BatchNorm) -> Result<Tensor> {
        let (n, s) = self.dims(dy)?;
        check_len("batch norm output gradient", cache.xhat.len(), dy.len())?;
        let c = self.channels;
        let m = (n * s) as f64;
        let dyd = dy.data();
        let at = |b: usize, ch: usize, i: usize| (b * c + ch) * s + i;
        let mut dx = vec![0.0; dyd.len()];
        for ch in 0..c {
            let idx = || (0..n).flat_map(move |b| (0..s).map(move |i| at(b, ch, i)));
            let sum_dy: f64 = idx().map(|j| dyd[j]).sum();
            let sum_dy_xhat: f64 = idx().map(|j| dyd[j] * cache.xhat[j]).sum();
            grad.beta[ch] += sum_dy;
            grad.gamma[ch] += sum_dy_xhat;
            let k = self.gamma[ch] * cache.inv_std[ch];
            for j in idx() {
                dx[j] = match cache.mode {
                    Mode::Train => k * (dyd[j] - sum_dy / m - cache.xhat[j] * sum_dy_xhat / m),
                    Mode::Infer => k * dyd[j],
                };
            }
        }
        Tensor::new(dy.shape().to_vec(), dx)
    }
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).collect()
}

/// Gradient through ReLU given its input.
pub fn relu_backward(x: &[f64], dy: &[f64]) -> Vec<f64> {
    x.iter().zip(dy).map(|(x, g)| if *x > 0.0 { *g } else { 0.0 }).collect()
}

/// Address of one dropout mask. Every field feeds the RNG seed, so masks do
/// not depend on evaluation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DropoutKey {
    pub seed: u64,
    pub step: u64,
    pub sample: u64,
    pub tensor: u64,
}

/// Inverted-dropout multipliers: 0 with probability `rate`, else
/// `1 / (1 - rate)`.
pub fn dropout_mask(rate: f64, len: usize, key: DropoutKey) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
    }
    if rate == 0.0 {
        return Ok(vec![1.0; len]);
    }
    let mut seed = [0u8; 32];
    for (chunk, v) in seed.chunks_exact_mut(8).zip([key.seed, key.step, key.sample, key.tensor]) {
        chunk.copy_from_slice(&v.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    let keep = 1.0 / (1.0 - rate);
    Ok((0..len).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }).collect())
}

/// Applies a dropout mask in train mode; identity in infer mode.
pub fn dropout(x: &[f64], rate: f64, mode: Mode, key: DropoutKey) -> Result<(Vec<f64>, Vec<f64>)> {
    let mask = match mode {
        Mode::Train => dropout_mask(rate, x.len(), key)?,
        Mode::Infer => vec![1.0; x.len()],
    };
    Ok((x.iter().zip(&mask).map(|(a, b)| a * b).collect(), mask))
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Softmax over all grid cells of a single-channel map.
pub fn spatial_softmax(logits: &[f64]) -> Vec<f64> {
    softmax(logits)
}

/// Gradient with respect to the logits given the softmax output `a`.
pub fn spatial_softmax_backward(a: &[f64], da: &[f64]) -> Vec<f64> {
    let dot: f64 = a.iter().zip(da).map(|(a, g)| a * g).sum();
    a.iter().zip(da).map(|(a, g)| a * (g - dot)).collect()
}

/// `(loss, dloss/dlogits)` for one sample.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::invalid(format!("label {label} out of range for {} classes", logits.len())));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    Ok((lse - logits[label], grad))
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub const DEFAULT_LR: f64 = 0.0005;

    pub fn new(num_params: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: vec![0.0; num_params], v: vec![0.0; num_params] }
    }

    pub fn num_params(&self) -> usize {
        self.m.len()
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        check_len("adam parameters", self.m.len(), params.len())?;
        check_len("adam gradients", self.m.len(), grads.len())?;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
        Ok(())
    }
}
