//! The hybrid classifier: per-band projection, band circuits, feature-map
//! aggregation, optional residual refinement, spatial attention and an MLP
//! head.
//!
//! Per-sample encoder work (projection and circuit evaluation) runs through
//! [`par`]; everything that touches batch statistics runs over the whole
//! batch. Gradients are reduced in sample order, then patch order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design::BandCircuit;
use crate::error::{Error, Result};
use crate::features::{extract_patches, Band, MultiBandImage, PatchGrid};
use crate::nn::{self, BatchNorm, BatchNormCache, Conv2d, DropoutKey, Linear, Mode, Tensor};
use crate::par::{self, Exec};
use crate::sim::evaluate_with_gradients;

pub const DEFAULT_HIDDEN: usize = 128;
pub const DEFAULT_DROPOUT: f64 = 0.3;
/// Variational angles start uniform in `+-QUANTUM_INIT`.
pub const QUANTUM_INIT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub patch_size: usize,
    /// One circuit per used band, in canonical band order.
    pub bands: Vec<BandCircuit>,
    pub residual: bool,
    /// `false` replaces every circuit by `tanh` of the projection.
    pub quantum: bool,
    pub num_classes: usize,
    pub hidden: usize,
    pub dropout: f64,
}

impl ModelConfig {
    pub fn new(patch_size: usize, bands: Vec<BandCircuit>, num_classes: usize) -> Self {
        Self {
            patch_size,
            bands,
            residual: false,
            quantum: true,
            num_classes,
            hidden: DEFAULT_HIDDEN,
            dropout: DEFAULT_DROPOUT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 {
            return Err(Error::invalid("patch size must be positive"));
        }
        if self.bands.is_empty() {
            return Err(Error::invalid("at least one band is required"));
        }
        if self.bands.windows(2).any(|w| w[0].band.index() >= w[1].band.index()) {
            return Err(Error::invalid("bands must be unique and in canonical order"));
        }
        for b in &self.bands {
            b.circuit.validate()?;
        }
        if self.num_classes < 2 {
            return Err(Error::invalid("at least two classes are required"));
        }
        if self.hidden == 0 {
            return Err(Error::invalid("hidden width must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout rate {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Feature-map channel count: the sum of circuit widths.
    pub fn channels(&self) -> usize {
        self.bands.iter().map(|b| b.circuit.num_qubits).sum()
    }

    fn offsets(&self) -> Vec<usize> {
        self.bands
            .iter()
            .scan(0, |acc, b| {
                let o = *acc;
                *acc += b.circuit.num_qubits;
                Some(o)
            })
            .collect()
    }

    /// Restricts the model to a subset of bands.
    pub fn with_bands(mut self, keep: &[Band]) -> Result<Self> {
        if keep.is_empty() {
            return Err(Error::invalid("band subset is empty"));
        }
        self.bands.retain(|b| keep.contains(&b.band));
        if self.bands.len() != keep.len() {
            return Err(Error::invalid("band subset names a band without a circuit"));
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub classical: usize,
    pub quantum: usize,
}

/// Closed-form trainable-parameter counts.
pub fn param_count(config: &ModelConfig) -> ParamCount {
    let p2 = config.patch_size * config.patch_size;
    let c = config.channels();
    let (h, k) = (config.hidden, config.num_classes);
    let proj: usize = config.bands.iter().map(|b| (p2 + 1) * b.circuit.num_encoding_features).sum();
    let residual = if config.residual { c * c * 9 + c + 2 * c } else { 0 };
    let head = (c + 1) + (c * h + h) + 2 * h + (h * k + k);
    let quantum = if config.quantum { config.bands.iter().map(|b| b.circuit.num_variational_params).sum() } else { 0 };
    ParamCount { classical: proj + residual + head, quantum }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub conv: Conv2d,
    pub bn: BatchNorm,
}

/// Every trainable tensor and batch-norm buffer. Also used as the gradient
/// holder, in which case buffers stay zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub proj: Vec<Linear>,
    pub theta: Vec<Vec<f64>>,
    pub residual: Option<Residual>,
    pub attn: Conv2d,
    pub fc1: Linear,
    pub bn: BatchNorm,
    pub fc2: Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKind {
    Classical,
    Quantum,
    Buffer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: GroupKind,
}

impl GroupSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn group(name: impl Into<String>, shape: Vec<usize>, kind: GroupKind) -> GroupSpec {
    GroupSpec { name: name.into(), shape, kind }
}

/// Names and shapes of all parameter groups and buffers, in storage order.
pub fn group_specs(config: &ModelConfig) -> Vec<GroupSpec> {
    use GroupKind::*;
    let p2 = config.patch_size * config.patch_size;
    let (c, h, k) = (config.channels(), config.hidden, config.num_classes);
    let mut g = Vec::new();
    for b in &config.bands {
        let f = b.circuit.num_encoding_features;
        g.push(group(format!("proj.{}.weight", b.band), vec![f, p2], Classical));
        g.push(group(format!("proj.{}.bias", b.band), vec![f], Classical));
    }
    if config.quantum {
        for b in &config.bands {
            g.push(group(format!("circuit.{}.theta", b.band), vec![b.circuit.num_variational_params], Quantum));
        }
    }
    if config.residual {
        g.push(group("residual.conv.weight", vec![c, c, 3, 3], Classical));
        g.push(group("residual.conv.bias", vec![c], Classical));
        g.push(group("residual.bn.gamma", vec![c], Classical));
        g.push(group("residual.bn.beta", vec![c], Classical));
    }
    g.push(group("attn.weight", vec![1, c, 1, 1], Classical));
    g.push(group("attn.bias", vec![1], Classical));
    g.push(group("mlp.fc1.weight", vec![h, c], Classical));
    g.push(group("mlp.fc1.bias", vec![h], Classical));
    g.push(group("mlp.bn.gamma", vec![h], Classical));
    g.push(group("mlp.bn.beta", vec![h], Classical));
    g.push(group("mlp.fc2.weight", vec![k, h], Classical));
    g.push(group("mlp.fc2.bias", vec![k], Classical));
    if config.residual {
        g.push(group("residual.bn.running_mean", vec![c], Buffer));
        g.push(group("residual.bn.running_var", vec![c], Buffer));
    }
    g.push(group("mlp.bn.running_mean", vec![h], Buffer));
    g.push(group("mlp.bn.running_var", vec![h], Buffer));
    g
}

impl Params {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p2 = config.patch_size * config.patch_size;
        let c = config.channels();
        let proj = config.bands.iter().map(|b| Linear::new(p2, b.circuit.num_encoding_features, &mut rng)).collect();
        let theta = config
            .bands
            .iter()
            .map(|b| {
                let n = if config.quantum { b.circuit.num_variational_params } else { 0 };
                (0..n).map(|_| rng.gen_range(-QUANTUM_INIT..=QUANTUM_INIT)).collect()
            })
            .collect();
        let residual = if config.residual {
            Some(Residual { conv: Conv2d::new(c, c, 3, &mut rng)?, bn: BatchNorm::new(c) })
        } else {
            None
        };
        Ok(Self {
            proj,
            theta,
            residual,
            attn: Conv2d::new(c, 1, 1, &mut rng)?,
            fc1: Linear::new(c, config.hidden, &mut rng),
            bn: BatchNorm::new(config.hidden),
            fc2: Linear::new(config.hidden, config.num_classes, &mut rng),
        })
    }

    pub fn zeroed(&self) -> Self {
        Self {
            proj: self.proj.iter().map(Linear::zeroed).collect(),
            theta: self.theta.iter().map(|t| vec![0.0; t.len()]).collect(),
            residual: self.residual.as_ref().map(|r| Residual { conv: r.conv.zeroed(), bn: r.bn.zeroed() }),
            attn: self.attn.zeroed(),
            fc1: self.fc1.zeroed(),
            bn: self.bn.zeroed(),
            fc2: self.fc2.zeroed(),
        }
    }

    /// Storage in the order of [`group_specs`]; quantum groups are skipped
    /// when the angle vectors are empty.
    fn slots(&self) -> Vec<&Vec<f64>> {
        let mut s = Vec::new();
        for l in &self.proj {
            s.push(&l.weight);
            s.push(&l.bias);
        }
        s.extend(self.theta.iter().filter(|t| !t.is_empty()));
        if let Some(r) = &self.residual {
            s.extend([&r.conv.weight, &r.conv.bias, &r.bn.gamma, &r.bn.beta]);
        }
        s.extend([&self.attn.weight, &self.attn.bias]);
        s.extend([&self.fc1.weight, &self.fc1.bias, &self.bn.gamma, &self.bn.beta, &self.fc2.weight, &self.fc2.bias]);
        if let Some(r) = &self.residual {
            s.extend([&r.bn.running_mean, &r.bn.running_var]);
        }
        s.extend([&self.bn.running_mean, &self.bn.running_var]);
        s
    }

    fn slots_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut s = Vec::new();
        for l in &mut self.proj {
            s.push(&mut l.weight);
            s.push(&mut l.bias);
        }
        s.extend(self.theta.iter_mut().filter(|t| !t.is_empty()));
        let mut buffers = Vec::new();
        if let Some(r) = &mut self.residual {
            s.extend([&mut r.conv.weight, &mut r.conv.bias, &mut r.bn.gamma, &mut r.bn.beta]);
            buffers.extend([&mut r.bn.running_mean, &mut r.bn.running_var]);
        }
        s.extend([&mut self.attn.weight, &mut self.attn.bias]);
        s.extend([
            &mut self.fc1.weight,
            &mut self.fc1.bias,
            &mut self.bn.gamma,
            &mut self.bn.beta,
            &mut self.fc2.weight,
            &mut self.fc2.bias,
        ]);
        s.extend(buffers);
        s.extend([&mut self.bn.running_mean, &mut self.bn.running_var]);
        s
    }

    fn num_buffer_slots(&self) -> usize {
        if self.residual.is_some() {
            4
        } else {
            2
        }
    }

    /// Trainable values, concatenated in group order.
    pub fn trainable(&self) -> Vec<f64> {
        let slots = self.slots();
        let n = slots.len() - self.num_buffer_slots();
        slots[..n].iter().flat_map(|v| v.iter().copied()).collect()
    }

    pub fn set_trainable(&mut self, values: &[f64]) -> Result<()> {
        let nb = self.num_buffer_slots();
        let mut slots = self.slots_mut();
        let n = slots.len() - nb;
        let total: usize = slots[..n].iter().map(|v| v.len()).sum();
        if total != values.len() {
            return Err(Error::LengthMismatch { what: "trainable parameters", expected: total, got: values.len() });
        }
        let mut rest = values;
        for slot in &mut slots[..n] {
            let (head, tail) = rest.split_at(slot.len());
            slot.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    /// All groups including buffers.
    pub fn all_values(&self) -> Vec<f64> {
        self.slots().iter().flat_map(|v| v.iter().copied()).collect()
    }

    pub fn set_all_values(&mut self, values: &[f64]) -> Result<()> {
        let mut slots = self.slots_mut();
        let total: usize = slots.iter().map(|v| v.len()).sum();
        if total != values.len() {
            return Err(Error::LengthMismatch { what: "parameter blob", expected: total, got: values.len() });
        }
        let mut rest = values;
        for slot in &mut slots {
            let (head, tail) = rest.split_at(slot.len());
            slot.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    fn add_scaled(&mut self, other: &Params, scale: f64) {
        for (a, b) in self.slots_mut().into_iter().zip(other.slots()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }
}

/// Identifies a training step for dropout masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepKey {
    pub seed: u64,
    pub step: u64,
}

/// One input to a batch pass. `id` addresses the sample's dropout mask.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub grid: &'a PatchGrid,
    pub label: usize,
    pub id: u64,
}

struct Encoded {
    /// `C x G`, channel-major.
    features: Vec<f64>,
    /// Per band, per patch: projection output and the circuit Jacobians
    /// (`None` at inference).
    locals: Vec<Vec<PatchLocal>>,
}

struct PatchLocal {
    angles: Vec<f64>,
    outputs: Vec<f64>,
    jac: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

struct HeadTrace {
    /// Encoder output per sample.
    enc: Vec<Vec<f64>>,
    residual: Option<(Vec<Tensor>, Tensor, BatchNormCache, Vec<f64>)>,
    /// Feature map fed to attention, per sample.
    fmap: Vec<Vec<f64>>,
    attn: Vec<Vec<f64>>,
    ctx: Vec<Vec<f64>>,
    bn_cache: BatchNormCache,
    bn_out: Vec<f64>,
    masks: Vec<Vec<f64>>,
    hidden: Vec<Vec<f64>>,
}

/// Loss, per-sample logits and trainable-parameter gradients of one batch.
#[derive(Debug, Clone)]
pub struct BatchGrad {
    pub loss: f64,
    pub logits: Vec<Vec<f64>>,
    pub grad: Params,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QmcNet {
    pub config: ModelConfig,
    pub params: Params,
    pub exec: Exec,
}

impl QmcNet {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = Params::init(&config, seed)?;
        Ok(Self { config, params, exec: Exec::default() })
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    /// Scales channels to `[0, 1]` and cuts patches.
    pub fn prepare(&self, image: &MultiBandImage) -> Result<PatchGrid> {
        extract_patches(&image.scaled_for_model(), self.config.patch_size)
    }

    fn check_grid(&self, grid: &PatchGrid) -> Result<()> {
        if grid.patch_size != self.config.patch_size {
            return Err(Error::shape(format!(
                "patch grid uses patch size {}, model expects {}",
                grid.patch_size, self.config.patch_size
            )));
        }
        if grid.patches.len() != Band::ALL.len() || grid.num_patches() == 0 {
            return Err(Error::shape("patch grid must carry all six bands".to_string()));
        }
        Ok(())
    }

    /// Per-qubit expectations for one patch of one band.
    pub fn encode_patch(&self, band: Band, patch: &[f64]) -> Result<Vec<f64>> {
        let i = self
            .config
            .bands
            .iter()
            .position(|b| b.band == band)
            .ok_or_else(|| Error::Unknown { kind: "band circuit", name: band.to_string() })?;
        Ok(self.encode_one(i, patch, false)?.outputs)
    }

    fn encode_one(&self, i: usize, patch: &[f64], with_jac: bool) -> Result<PatchLocal> {
        let angles = self.params.proj[i].forward(patch)?;
        if !self.config.quantum {
            let outputs = angles.iter().map(|a| a.tanh()).collect();
            return Ok(PatchLocal { angles, outputs, jac: None });
        }
        let circuit = &self.config.bands[i].circuit;
        let theta = &self.params.theta[i];
        if with_jac {
            let ev = evaluate_with_gradients(circuit, theta, &angles)?;
            Ok(PatchLocal { angles, outputs: ev.expectations, jac: Some((ev.d_params, ev.d_features)) })
        } else {
            let outputs = circuit.run(theta, &angles)?;
            Ok(PatchLocal { angles, outputs, jac: None })
        }
    }

    fn encode(&self, grid: &PatchGrid, with_jac: bool) -> Result<Encoded> {
        self.check_grid(grid)?;
        let g = grid.num_patches();
        let mut features = vec![0.0; self.config.channels() * g];
        let mut locals = Vec::with_capacity(self.config.bands.len());
        for ((i, bc), off) in self.config.bands.iter().enumerate().zip(self.config.offsets()) {
            let patches = &grid.patches[bc.band.index()];
            let band = par::try_map_range(self.exec, g, |k| self.encode_one(i, &patches[k], with_jac))?;
            for (k, pl) in band.iter().enumerate() {
                for (q, v) in pl.outputs.iter().enumerate() {
                    features[(off + q) * g + k] = *v;
                }
            }
            locals.push(band);
        }
        Ok(Encoded { features, locals })
    }

    /// Pre-residual feature map `[C, H', W']`; every entry lies in `[-1, 1]`.
    pub fn feature_map(&self, grid: &PatchGrid) -> Result<Tensor> {
        let enc = self.encode(grid, false)?;
        Tensor::new(vec![self.config.channels(), grid.grid_h, grid.grid_w], enc.features)
    }

    fn head_forward(
        &self,
        enc: Vec<Vec<f64>>,
        dims: (usize, usize),
        mode: Mode,
        key: StepKey,
        ids: &[u64],
        bn_state: (&mut BatchNorm, Option<&mut BatchNorm>),
    ) -> Result<(Vec<Vec<f64>>, HeadTrace)> {
        let (gh, gw) = dims;
        let (c, g, n) = (self.config.channels(), gh * gw, enc.len());
        let (mlp_bn, res_bn) = bn_state;

        let (fmap, residual) = match (&self.params.residual, res_bn) {
            (Some(r), Some(res_bn)) => {
                let inputs: Vec<Tensor> =
                    enc.iter().map(|e| Tensor::new(vec![c, gh, gw], e.clone())).collect::<Result<_>>()?;
                let conv_out = par::try_map_range(self.exec, n, |s| r.conv.forward(&inputs[s]))?;
                let stacked =
                    Tensor::new(vec![n, c, gh, gw], conv_out.iter().flat_map(|t| t.data().iter().copied()).collect())?;
                let (bn_out, cache) = res_bn.forward(&stacked, mode)?;
                let pre: Vec<f64> = bn_out
                    .data()
                    .iter()
                    .zip(enc.iter().flat_map(|e| e.iter()))
                    .map(|(a, b)| a + b)
                    .collect();
                let fmap = pre.chunks_exact(c * g).map(nn::relu).collect();
                (fmap, Some((inputs, stacked, cache, pre)))
            }
            _ => (enc.clone(), None),
        };

        let attn: Vec<Vec<f64>> = par::try_map_range(self.exec, n, |s| {
            let t = Tensor::new(vec![c, gh, gw], fmap[s].clone())?;
            Ok::<_, Error>(nn::spatial_softmax(self.params.attn.forward(&t)?.data()))
        })?;
        let ctx: Vec<Vec<f64>> = (0..n)
            .map(|s| (0..c).map(|ch| (0..g).map(|k| attn[s][k] * fmap[s][ch * g + k]).sum()).collect())
            .collect();

        let h = self.config.hidden;
        let pre_bn: Vec<f64> =
            ctx.iter().map(|x| self.params.fc1.forward(x)).collect::<Result<Vec<_>>>()?.concat();
        let (bn_out, bn_cache) = mlp_bn.forward(&Tensor::new(vec![n, h], pre_bn)?, mode)?;
        let bn_out = bn_out.into_data();
        let mut masks = Vec::with_capacity(n);
        let mut hidden = Vec::with_capacity(n);
        let mut logits = Vec::with_capacity(n);
        for (s, row) in bn_out.chunks_exact(h).enumerate() {
            let dkey = DropoutKey { seed: key.seed, step: key.step, sample: ids[s], tensor: 0 };
            let (dropped, mask) = nn::dropout(&nn::relu(row), self.config.dropout, mode, dkey)?;
            logits.push(self.params.fc2.forward(&dropped)?);
            masks.push(mask);
            hidden.push(dropped);
        }
        Ok((logits, HeadTrace { enc, residual, fmap, attn, ctx, bn_cache, bn_out, masks, hidden }))
    }

    /// Inference logits; batch-norm layers use their running statistics.
    pub fn predict(&self, grids: &[&PatchGrid]) -> Result<Vec<Vec<f64>>> {
        let Some(first) = grids.first() else { return Ok(Vec::new()) };
        let dims = (first.grid_h, first.grid_w);
        if grids.iter().any(|g| (g.grid_h, g.grid_w) != dims) {
            return Err(Error::shape("all inputs in a batch must share a patch grid".to_string()));
        }
        let enc = par::try_map_range(self.exec, grids.len(), |s| self.encode(grids[s], false).map(|e| e.features))?;
        let mut bn = self.params.bn.clone();
        let mut res_bn = self.params.residual.as_ref().map(|r| r.bn.clone());
        let ids = vec![0; grids.len()];
        let (logits, _) =
            self.head_forward(enc, dims, Mode::Infer, StepKey::default(), &ids, (&mut bn, res_bn.as_mut()))?;
        Ok(logits)
    }

    /// Mean train-mode cross-entropy without gradients or state updates.
    pub fn train_loss(&self, batch: &[Example], key: StepKey) -> Result<f64> {
        let Some(first) = batch.first() else { return Err(Error::invalid("empty batch")) };
        let dims = (first.grid.grid_h, first.grid.grid_w);
        let enc = par::try_map_range(self.exec, batch.len(), |s| self.encode(batch[s].grid, false).map(|e| e.features))?;
        let ids: Vec<u64> = batch.iter().map(|e| e.id).collect();
        let mut bn = self.params.bn.clone();
        let mut res_bn = self.params.residual.as_ref().map(|r| r.bn.clone());
        let (logits, _) = self.head_forward(enc, dims, Mode::Train, key, &ids, (&mut bn, res_bn.as_mut()))?;
        let mut loss = 0.0;
        for (l, e) in logits.iter().zip(batch) {
            loss += nn::cross_entropy(l, e.label)?.0;
        }
        Ok(loss / batch.len() as f64)
    }

    /// Mean cross-entropy and its gradient over a batch in train mode.
    /// Batch-norm running statistics are updated.
    pub fn train_batch(&mut self, batch: &[Example], key: StepKey) -> Result<BatchGrad> {
        let Some(first) = batch.first() else { return Err(Error::invalid("empty batch")) };
        let dims = (first.grid.grid_h, first.grid.grid_w);
        if batch.iter().any(|e| (e.grid.grid_h, e.grid.grid_w) != dims) {
            return Err(Error::shape("all inputs in a batch must share a patch grid".to_string()));
        }
        let n = batch.len();
        let (c, g) = (self.config.channels(), dims.0 * dims.1);
        let encoded = par::try_map_range(self.exec, n, |s| self.encode(batch[s].grid, true))?;
        let (enc, locals): (Vec<_>, Vec<_>) = encoded.into_iter().map(|e| (e.features, e.locals)).unzip();
        let ids: Vec<u64> = batch.iter().map(|e| e.id).collect();

        let mut mlp_bn = self.params.bn.clone();
        let mut res_bn = self.params.residual.as_ref().map(|r| r.bn.clone());
        let (logits, tr) = self.head_forward(enc, dims, Mode::Train, key, &ids, (&mut mlp_bn, res_bn.as_mut()))?;

        let mut grad = self.params.zeroed();
        let mut loss = 0.0;
        let scale = 1.0 / n as f64;
        let h = self.config.hidden;
        let mut d_bn_out = vec![0.0; n * h];
        for s in 0..n {
            let (l, dl) = nn::cross_entropy(&logits[s], batch[s].label)?;
            loss += l * scale;
            let dl: Vec<f64> = dl.iter().map(|v| v * scale).collect();
            let dhid = self.params.fc2.backward(&tr.hidden[s], &dl, &mut grad.fc2)?;
            let dmasked: Vec<f64> = dhid.iter().zip(&tr.masks[s]).map(|(a, m)| a * m).collect();
            let row = &tr.bn_out[s * h..(s + 1) * h];
            d_bn_out[s * h..(s + 1) * h].copy_from_slice(&nn::relu_backward(row, &dmasked));
        }
        let d_pre_bn = self.params.bn.backward(&tr.bn_cache, &Tensor::new(vec![n, h], d_bn_out)?, &mut grad.bn)?;

        let mut d_fmap = vec![vec![0.0; c * g]; n];
        for (s, d_fs) in d_fmap.iter_mut().enumerate() {
            let d_pre = &d_pre_bn.data()[s * h..(s + 1) * h];
            let d_ctx = self.params.fc1.backward(&tr.ctx[s], d_pre, &mut grad.fc1)?;
            let a = &tr.attn[s];
            let f = &tr.fmap[s];
            let mut da = vec![0.0; g];
            for ch in 0..c {
                for k in 0..g {
                    d_fs[ch * g + k] += a[k] * d_ctx[ch];
                    da[k] += f[ch * g + k] * d_ctx[ch];
                }
            }
            let dlog = nn::spatial_softmax_backward(a, &da);
            let x = Tensor::new(vec![c, dims.0, dims.1], f.clone())?;
            let dx = self.params.attn.backward(&x, &Tensor::new(vec![1, dims.0, dims.1], dlog)?, &mut grad.attn)?;
            for (d, v) in d_fs.iter_mut().zip(dx.data()) {
                *d += v;
            }
        }

        let d_enc: Vec<Vec<f64>> = match (&self.params.residual, &tr.residual, &mut grad.residual) {
            (Some(r), Some((inputs, _, cache, pre)), Some(gr)) => {
                let d_pre: Vec<f64> = nn::relu_backward(pre, &d_fmap.concat());
                let d_conv = r.bn.backward(cache, &Tensor::new(vec![n, c, dims.0, dims.1], d_pre.clone())?, &mut gr.bn)?;
                let mut out = Vec::with_capacity(n);
                for s in 0..n {
                    let dy = Tensor::new(vec![c, dims.0, dims.1], d_conv.data()[s * c * g..(s + 1) * c * g].to_vec())?;
                    let dx = r.conv.backward(&inputs[s], &dy, &mut gr.conv)?;
                    out.push(dx.data().iter().zip(&d_pre[s * c * g..(s + 1) * c * g]).map(|(a, b)| a + b).collect());
                }
                out
            }
            _ => d_fmap,
        };
        debug_assert_eq!(tr.enc.len(), n);

        let enc_grads = par::try_map_range(self.exec, n, |s| self.encoder_backward(batch[s].grid, &locals[s], &d_enc[s], g))?;
        for eg in &enc_grads {
            grad.add_scaled(eg, 1.0);
        }

        self.params.bn = mlp_bn;
        if let (Some(r), Some(bn)) = (&mut self.params.residual, res_bn) {
            r.bn = bn;
        }
        Ok(BatchGrad { loss, logits, grad })
    }

    /// Encoder gradient for one sample, returned in a full-size holder whose
    /// head entries stay zero.
    fn encoder_backward(&self, grid: &PatchGrid, locals: &[Vec<PatchLocal>], d_enc: &[f64], g: usize) -> Result<Params> {
        let mut grad = self.params.zeroed();
        for ((i, bc), off) in self.config.bands.iter().enumerate().zip(self.config.offsets()) {
            let patches = &grid.patches[bc.band.index()];
            for (k, pl) in locals[i].iter().enumerate() {
                let d_out: Vec<f64> = (0..bc.circuit.num_qubits).map(|q| d_enc[(off + q) * g + k]).collect();
                let d_angles: Vec<f64> = match &pl.jac {
                    Some((jt, jx)) => {
                        for (j, t) in grad.theta[i].iter_mut().enumerate() {
                            *t += (0..d_out.len()).map(|q| jt[(q, j)] * d_out[q]).sum::<f64>();
                        }
                        (0..jx.ncols()).map(|f| (0..d_out.len()).map(|q| jx[(q, f)] * d_out[q]).sum()).collect()
                    }
                    None => pl.outputs.iter().zip(&d_out).map(|(y, d)| (1.0 - y * y) * d).collect(),
                };
                debug_assert_eq!(d_angles.len(), pl.angles.len());
                self.params.proj[i].backward(&patches[k], &d_angles, &mut grad.proj[i])?;
            }
        }
        Ok(grad)
    }

    pub fn param_count(&self) -> ParamCount {
        param_count(&self.config)
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ModelConfig,
    pub groups: Vec<GroupSpec>,
    pub seed: u64,
    pub step: u64,
}

/// Writes `manifest.json` and `params.bin` (little-endian f64, manifest
/// order) into `dir`.
pub fn save_checkpoint(model: &QmcNet, seed: u64, step: u64, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = Manifest { config: model.config.clone(), groups: group_specs(&model.config), seed, step };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    let mut blob = Vec::new();
    for v in model.params.all_values() {
        blob.extend_from_slice(&v.to_le_bytes());
    }
    fs::File::create(dir.join(PARAMS_FILE))?.write_all(&blob)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(QmcNet, Manifest)> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    manifest.config.validate()?;
    if manifest.groups != group_specs(&manifest.config) {
        return Err(Error::Format { what: "checkpoint manifest", msg: "groups do not match config".into() });
    }
    let mut bytes = Vec::new();
    fs::File::open(dir.join(PARAMS_FILE))?.read_to_end(&mut bytes)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format { what: "parameter blob", msg: format!("{} bytes is not a multiple of 8", bytes.len()) });
    }
    let values: Vec<f64> =
        bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect();
    let mut model = QmcNet::new(manifest.config.clone(), 0)?;
    model.params.set_all_values(&values)?;
    Ok((model, manifest))
}
