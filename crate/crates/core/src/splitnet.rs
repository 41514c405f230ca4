//! Fully connected network with manual backprop, cut into a bottom and a top
//! submodel at a split layer.
//!
//! Parameters are flat `f64` vectors laid out layer by layer, each layer as a
//! row-major `out × in` weight block followed by `out` biases. Hidden layers
//! use the configured activation; the last layer emits logits scored with
//! softmax cross-entropy averaged over the batch.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::Sample;
use crate::rng::{self, tags};
use crate::{Error, Result};

/// Bytes per transmitted scalar in traffic accounting (single precision).
pub const WIRE_BYTES_PER_VALUE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    /// Identity; useful for tests.
    Linear,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Linear => 1.0,
        }
    }

    fn code(self) -> u32 {
        match self {
            Activation::Tanh => 0,
            Activation::Linear => 1,
        }
    }

    fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(Activation::Tanh),
            1 => Ok(Activation::Linear),
            other => Err(Error::Format(format!("unknown activation code {other}"))),
        }
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// A mini-batch of features with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn from_samples<'a, I>(samples: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Sample>,
    {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for s in samples {
            rows.push(s.features.clone());
            labels.push(s.label);
        }
        Ok(Self {
            features: Matrix::from_rows(&rows)?,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Split-layer activations sent from a bottom worker to its top worker,
/// together with the labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SmashedBatch {
    pub activations: Matrix,
    pub labels: Vec<usize>,
    pub byte_size: usize,
}

/// Layer widths, split point and hidden activation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    layer_dims: Vec<usize>,
    split_layer: usize,
    activation: Activation,
}

impl Architecture {
    /// `layer_dims[0]` is the input width and `layer_dims[L]` the number of
    /// classes; there are `L` weight layers and the bottom submodel holds the
    /// first `split_layer` of them.
    pub fn new(layer_dims: Vec<usize>, split_layer: usize, activation: Activation) -> Result<Self> {
        if layer_dims.len() < 3 {
            return Err(Error::Config(format!(
                "need at least two weight layers to split, got dims {layer_dims:?}"
            )));
        }
        if layer_dims.contains(&0) {
            return Err(Error::Config(format!("zero-width layer in {layer_dims:?}")));
        }
        let num_layers = layer_dims.len() - 1;
        if split_layer < 1 || split_layer > num_layers - 1 {
            return Err(Error::Config(format!(
                "split_layer must be in [1, {}], got {split_layer}",
                num_layers - 1
            )));
        }
        Ok(Self {
            layer_dims,
            split_layer,
            activation,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn split_layer(&self) -> usize {
        self.split_layer
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn num_classes(&self) -> usize {
        self.layer_dims[self.num_layers()]
    }

    pub fn smashed_width(&self) -> usize {
        self.layer_dims[self.split_layer]
    }

    fn layer_param_count(&self, layer: usize) -> usize {
        self.layer_dims[layer] * self.layer_dims[layer + 1] + self.layer_dims[layer + 1]
    }

    fn params_in(&self, layers: Range<usize>) -> usize {
        layers.map(|l| self.layer_param_count(l)).sum()
    }

    pub fn bottom_param_count(&self) -> usize {
        self.params_in(0..self.split_layer)
    }

    pub fn top_param_count(&self) -> usize {
        self.params_in(self.split_layer..self.num_layers())
    }

    pub fn total_param_count(&self) -> usize {
        self.params_in(0..self.num_layers())
    }

    /// Ratio of top to bottom per-sample compute. Dense-layer FLOPs are
    /// proportional to weight counts for forward and backward alike.
    pub fn top_to_bottom_compute_ratio(&self) -> f64 {
        let weights = |r: Range<usize>| -> usize {
            r.map(|l| self.layer_dims[l] * self.layer_dims[l + 1]).sum()
        };
        weights(self.split_layer..self.num_layers()) as f64
            / weights(0..self.split_layer) as f64
    }

    pub fn smashed_bytes(&self, batch_size: usize) -> usize {
        batch_size * self.smashed_width() * WIRE_BYTES_PER_VALUE
    }

    pub fn bottom_bytes(&self) -> usize {
        self.bottom_param_count() * WIRE_BYTES_PER_VALUE
    }

    pub fn full_model_bytes(&self) -> usize {
        self.total_param_count() * WIRE_BYTES_PER_VALUE
    }

    /// Uniform `[-a, a]` initialization with `a = 1/sqrt(fan_in)` for
    /// weights and biases.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = rng::stream(seed, tags::MODEL_INIT);
        let mut params = Vec::with_capacity(self.total_param_count());
        for l in 0..self.num_layers() {
            let a = 1.0 / (self.layer_dims[l] as f64).sqrt();
            for _ in 0..self.layer_param_count(l) {
                params.push(rng.random_range(-a..=a));
            }
        }
        params
    }

    pub fn init_model(&self, seed: u64) -> SplitModel {
        let full = self.init_params(seed);
        let (bottom, top) = self.split(&full).expect("length matches");
        SplitModel {
            arch: self.clone(),
            bottom,
            top,
        }
    }

    /// Concatenates bottom and top parameters into the full vector.
    pub fn splice(&self, bottom: &[f64], top: &[f64]) -> Result<Vec<f64>> {
        self.check_len("bottom", bottom.len(), self.bottom_param_count())?;
        self.check_len("top", top.len(), self.top_param_count())?;
        let mut full = Vec::with_capacity(bottom.len() + top.len());
        full.extend_from_slice(bottom);
        full.extend_from_slice(top);
        Ok(full)
    }

    /// Inverse of [`Architecture::splice`].
    pub fn split(&self, full: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_len("full", full.len(), self.total_param_count())?;
        let (b, t) = full.split_at(self.bottom_param_count());
        Ok((b.to_vec(), t.to_vec()))
    }

    fn check_len(&self, what: &str, got: usize, want: usize) -> Result<()> {
        if got != want {
            return Err(Error::Shape(format!(
                "{what} parameter vector has length {got}, architecture needs {want}"
            )));
        }
        Ok(())
    }

    fn bottom_layers(&self) -> Range<usize> {
        0..self.split_layer
    }

    fn top_layers(&self) -> Range<usize> {
        self.split_layer..self.num_layers()
    }

    fn check_features(&self, features: &Matrix) -> Result<()> {
        if features.cols != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch has {} features, input layer expects {}",
                features.cols,
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Activations at the split layer for `batch`.
    pub fn forward_bottom(&self, bottom: &[f64], batch: &Batch) -> Result<SmashedBatch> {
        Ok(self.bottom_pass(bottom, batch)?.smashed)
    }

    /// Bottom forward pass that keeps the intermediate activations needed for
    /// the later backward pass.
    pub fn bottom_pass(&self, bottom: &[f64], batch: &Batch) -> Result<BottomPass> {
        self.check_len("bottom", bottom.len(), self.bottom_param_count())?;
        self.check_features(&batch.features)?;
        if batch.features.rows != batch.labels.len() {
            return Err(Error::Shape("feature rows and labels differ in length".into()));
        }
        let trace = self.forward_segment(bottom, self.bottom_layers(), &batch.features);
        let activations = trace.output().clone();
        Ok(BottomPass {
            smashed: SmashedBatch {
                byte_size: self.smashed_bytes(activations.rows),
                activations,
                labels: batch.labels.clone(),
            },
            trace,
        })
    }

    /// One top-worker iteration over the smashed batches of `N_c` bottom
    /// workers: the top parameters move by `-(lr/N_c)·Σ_i g_i`, where `g_i`
    /// is the batch-mean loss gradient on worker `i`'s batch. Returns the loss
    /// gradient with respect to each worker's activations, evaluated at the
    /// pre-update top parameters.
    pub fn top_step(
        &self,
        top: &mut [f64],
        smashed: &[SmashedBatch],
        lr: f64,
    ) -> Result<TopStepOutput> {
        self.check_len("top", top.len(), self.top_param_count())?;
        if smashed.is_empty() {
            return Err(Error::Contract("top_step needs at least one bottom worker".into()));
        }
        let mut grad_sum = vec![0.0; top.len()];
        let mut activation_grads = Vec::with_capacity(smashed.len());
        let mut losses = Vec::with_capacity(smashed.len());
        for s in smashed {
            if s.activations.cols != self.smashed_width() {
                return Err(Error::Shape(format!(
                    "smashed width {} differs from split width {}",
                    s.activations.cols,
                    self.smashed_width()
                )));
            }
            if s.activations.rows != s.labels.len() || s.labels.is_empty() {
                return Err(Error::Shape("smashed rows and labels differ in length".into()));
            }
            let trace = self.forward_segment(top, self.top_layers(), &s.activations);
            let (loss, dlogits) = softmax_cross_entropy(trace.output(), &s.labels)?;
            let (g, dinput) = self.backward_segment(top, self.top_layers(), &trace, dlogits);
            for (acc, v) in grad_sum.iter_mut().zip(&g) {
                *acc += v;
            }
            activation_grads.push(dinput);
            losses.push(loss);
        }
        let scale = lr / smashed.len() as f64;
        for (p, g) in top.iter_mut().zip(&grad_sum) {
            *p -= scale * g;
        }
        Ok(TopStepOutput {
            activation_grads,
            losses,
        })
    }

    /// Back-propagates `activation_grad` through the bottom submodel and
    /// takes one SGD step of size `lr`.
    pub fn bottom_step(
        &self,
        bottom: &mut [f64],
        batch: &Batch,
        activation_grad: &Matrix,
        lr: f64,
    ) -> Result<()> {
        let pass = self.bottom_pass(bottom, batch)?;
        self.apply_bottom_gradient(bottom, &pass, activation_grad, lr)
    }

    /// Like [`Architecture::bottom_step`] but reuses a forward pass computed
    /// with the same bottom parameters.
    pub fn apply_bottom_gradient(
        &self,
        bottom: &mut [f64],
        pass: &BottomPass,
        activation_grad: &Matrix,
        lr: f64,
    ) -> Result<()> {
        self.check_len("bottom", bottom.len(), self.bottom_param_count())?;
        let out = pass.trace.output();
        if activation_grad.rows != out.rows || activation_grad.cols != out.cols {
            return Err(Error::Shape(format!(
                "activation gradient is {}x{}, split output is {}x{}",
                activation_grad.rows, activation_grad.cols, out.rows, out.cols
            )));
        }
        let (g, _) = self.backward_segment(
            bottom,
            self.bottom_layers(),
            &pass.trace,
            activation_grad.clone(),
        );
        for (p, gi) in bottom.iter_mut().zip(&g) {
            *p -= lr * gi;
        }
        Ok(())
    }

    /// Batch-mean loss and its gradient for the unsplit network.
    pub fn loss_and_gradient(&self, full: &[f64], batch: &Batch) -> Result<(f64, Vec<f64>)> {
        self.check_len("full", full.len(), self.total_param_count())?;
        self.check_features(&batch.features)?;
        let all = 0..self.num_layers();
        let trace = self.forward_segment(full, all.clone(), &batch.features);
        let (loss, dlogits) = softmax_cross_entropy(trace.output(), &batch.labels)?;
        let (g, _) = self.backward_segment(full, all, &trace, dlogits);
        Ok((loss, g))
    }

    pub fn loss(&self, full: &[f64], batch: &Batch) -> Result<f64> {
        self.check_len("full", full.len(), self.total_param_count())?;
        self.check_features(&batch.features)?;
        let trace = self.forward_segment(full, 0..self.num_layers(), &batch.features);
        Ok(softmax_cross_entropy(trace.output(), &batch.labels)?.0)
    }

    /// One SGD step on the unsplit network. Returns the pre-step loss.
    pub fn sgd_step(&self, full: &mut [f64], batch: &Batch, lr: f64) -> Result<f64> {
        let (loss, g) = self.loss_and_gradient(full, batch)?;
        for (p, gi) in full.iter_mut().zip(&g) {
            *p -= lr * gi;
        }
        Ok(loss)
    }

    pub fn logits(&self, full: &[f64], features: &Matrix) -> Result<Matrix> {
        self.check_len("full", full.len(), self.total_param_count())?;
        self.check_features(features)?;
        Ok(self
            .forward_segment(full, 0..self.num_layers(), features)
            .outputs
            .pop()
            .expect("at least one layer"))
    }

    /// Fraction of samples whose arg-max logit equals the label.
    pub fn accuracy(&self, full: &[f64], samples: &[Sample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::EmptyShard);
        }
        let mut correct = 0usize;
        for chunk in samples.chunks(256) {
            let batch = Batch::from_samples(chunk)?;
            let logits = self.logits(full, &batch.features)?;
            for (r, &label) in batch.labels.iter().enumerate() {
                let row = logits.row(r);
                let pred = (0..row.len())
                    .max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a)))
                    .expect("non-empty logits");
                if pred == label {
                    correct += 1;
                }
            }
        }
        Ok(correct as f64 / samples.len() as f64)
    }

    /// `params` holds exactly the layers in `layers`, back to back.
    fn forward_segment(&self, params: &[f64], layers: Range<usize>, input: &Matrix) -> Trace {
        let last = self.num_layers() - 1;
        let mut outputs: Vec<Matrix> = Vec::with_capacity(layers.len());
        let mut offset = 0;
        for l in layers.clone() {
            let (n_in, n_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let w = &params[offset..offset + n_in * n_out];
            let b = &params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let x = outputs.last().unwrap_or(input);
            let mut z = Matrix::zeros(x.rows, n_out);
            for r in 0..x.rows {
                let xr = x.row(r);
                let zr = &mut z.data[r * n_out..(r + 1) * n_out];
                for (o, zo) in zr.iter_mut().enumerate() {
                    let wo = &w[o * n_in..(o + 1) * n_in];
                    let mut acc = b[o];
                    for (wi, xi) in wo.iter().zip(xr) {
                        acc += wi * xi;
                    }
                    *zo = if l == last {
                        acc
                    } else {
                        self.activation.apply(acc)
                    };
                }
            }
            outputs.push(z);
        }
        Trace {
            input: input.clone(),
            outputs,
            layers,
        }
    }

    /// `grad_out` is the loss gradient w.r.t. the segment output (logits when
    /// the segment ends at the last layer, post-activation otherwise).
    /// Returns the parameter gradient laid out like `params` and the gradient
    /// w.r.t. the segment input.
    fn backward_segment(
        &self,
        params: &[f64],
        layers: Range<usize>,
        trace: &Trace,
        grad_out: Matrix,
    ) -> (Vec<f64>, Matrix) {
        let last = self.num_layers() - 1;
        let mut offsets = Vec::with_capacity(layers.len());
        let mut offset = 0;
        for l in layers.clone() {
            offsets.push(offset);
            offset += self.layer_param_count(l);
        }
        let mut grads = vec![0.0; offset];
        let mut g = grad_out;
        for (k, l) in layers.clone().enumerate().rev() {
            let (n_in, n_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let out = &trace.outputs[k];
            let x = if k == 0 { &trace.input } else { &trace.outputs[k - 1] };
            if l != last {
                for (gi, a) in g.data.iter_mut().zip(&out.data) {
                    *gi *= self.activation.derivative_from_output(*a);
                }
            }
            let base = offsets[k];
            let w = &params[base..base + n_in * n_out];
            let (gw, gb) = grads[base..base + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            let mut gx = Matrix::zeros(x.rows, n_in);
            for r in 0..x.rows {
                let xr = x.row(r);
                let dz = &g.data[r * n_out..(r + 1) * n_out];
                let gxr = &mut gx.data[r * n_in..(r + 1) * n_in];
                for (o, &d) in dz.iter().enumerate() {
                    gb[o] += d;
                    let gwo = &mut gw[o * n_in..(o + 1) * n_in];
                    let wo = &w[o * n_in..(o + 1) * n_in];
                    for i in 0..n_in {
                        gwo[i] += d * xr[i];
                        gxr[i] += d * wo[i];
                    }
                }
            }
            g = gx;
        }
        debug_assert_eq!(trace.layers, layers);
        (grads, g)
    }
}

/// Intermediate activations of a forward pass over a layer range.
#[derive(Debug, Clone)]
pub struct Trace {
    input: Matrix,
    outputs: Vec<Matrix>,
    layers: Range<usize>,
}

impl Trace {
    fn output(&self) -> &Matrix {
        self.outputs.last().unwrap_or(&self.input)
    }
}

#[derive(Debug, Clone)]
pub struct BottomPass {
    pub smashed: SmashedBatch,
    trace: Trace,
}

#[derive(Debug, Clone)]
pub struct TopStepOutput {
    /// One gradient per bottom worker, same order as the input batches.
    pub activation_grads: Vec<Matrix>,
    pub losses: Vec<f64>,
}

/// Mean softmax cross-entropy and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if logits.rows != labels.len() || labels.is_empty() {
        return Err(Error::Shape("logit rows and labels differ in length".into()));
    }
    let n = labels.len() as f64;
    let mut grad = Matrix::zeros(logits.rows, logits.cols);
    let mut loss = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        if label >= logits.cols {
            return Err(Error::Shape(format!(
                "label {label} outside {} classes",
                logits.cols
            )));
        }
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|z| (z - max).exp()).sum();
        let log_sum = sum.ln() + max;
        loss += log_sum - row[label];
        let gr = &mut grad.data[r * logits.cols..(r + 1) * logits.cols];
        for (c, g) in gr.iter_mut().enumerate() {
            let p = (row[c] - log_sum).exp();
            *g = (p - if c == label { 1.0 } else { 0.0 }) / n;
        }
    }
    Ok((loss / n, grad))
}

/// Bottom and top parameters of one model replica.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitModel {
    pub arch: Architecture,
    pub bottom: Vec<f64>,
    pub top: Vec<f64>,
}

impl SplitModel {
    pub fn zeros(arch: &Architecture) -> Self {
        Self {
            arch: arch.clone(),
            bottom: vec![0.0; arch.bottom_param_count()],
            top: vec![0.0; arch.top_param_count()],
        }
    }

    pub fn from_full(arch: &Architecture, full: &[f64]) -> Result<Self> {
        let (bottom, top) = arch.split(full)?;
        Ok(Self {
            arch: arch.clone(),
            bottom,
            top,
        })
    }

    pub fn full(&self) -> Vec<f64> {
        self.arch
            .splice(&self.bottom, &self.top)
            .expect("model lengths match architecture")
    }
}

const CHECKPOINT_MAGIC: [u8; 4] = *b"PSFL";
const CHECKPOINT_VERSION: u32 = 1;

/// Serializes a full parameter vector.
///
/// Layout, all little-endian: a 16-byte header (`b"PSFL"`, version `u32`,
/// weight-layer count `u32`, split layer `u32`), then `layer count + 1`
/// layer widths as `u32`, the activation code as `u32`, and finally the
/// parameters as `f64`.
pub fn encode_checkpoint(arch: &Architecture, full: &[f64]) -> Result<Vec<u8>> {
    arch.check_len("full", full.len(), arch.total_param_count())?;
    let mut out = Vec::with_capacity(16 + 4 * (arch.layer_dims.len() + 1) + 8 * full.len());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(arch.num_layers() as u32).to_le_bytes());
    out.extend_from_slice(&(arch.split_layer as u32).to_le_bytes());
    for &d in &arch.layer_dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&arch.activation.code().to_le_bytes());
    for p in full {
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(out)
}

struct ByteReader<'a> {
    rest: &'a [u8],
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.rest.len() < n {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let (head, rest) = self.rest.split_at(n);
        self.rest = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4-byte slice")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Architecture, Vec<f64>)> {
    let mut r = ByteReader { rest: bytes };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let num_layers = r.u32()? as usize;
    let split = r.u32()? as usize;
    if num_layers == 0 || num_layers > 1024 {
        return Err(Error::Format(format!("implausible layer count {num_layers}")));
    }
    let dims = (0..=num_layers)
        .map(|_| r.u32().map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let activation = Activation::from_code(r.u32()?)?;
    let arch = Architecture::new(dims, split, activation)
        .map_err(|e| Error::Format(format!("invalid architecture: {e}")))?;
    let body = r.take(8 * arch.total_param_count())?;
    if !r.rest.is_empty() {
        return Err(Error::Format("trailing bytes after parameters".into()));
    }
    let params = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((arch, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch(dims: &[usize], split: usize) -> Architecture {
        Architecture::new(dims.to_vec(), split, Activation::Tanh).unwrap()
    }

    fn batch(rows: usize, cols: usize, classes: usize, seed: u64) -> Batch {
        let mut rng = rng::stream(seed, 99);
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Batch {
            features: Matrix { rows, cols, data },
            labels: (0..rows).map(|r| r % classes).collect(),
        }
    }

    #[test]
    fn architecture_validation() {
        assert!(Architecture::new(vec![4, 3], 1, Activation::Tanh).is_err());
        assert!(Architecture::new(vec![4, 3, 2], 0, Activation::Tanh).is_err());
        assert!(Architecture::new(vec![4, 3, 2], 2, Activation::Tanh).is_err());
        assert!(Architecture::new(vec![4, 0, 2], 1, Activation::Tanh).is_err());
        let a = arch(&[4, 3, 2], 1);
        assert_eq!(a.bottom_param_count(), 15);
        assert_eq!(a.top_param_count(), 8);
        assert_eq!(a.total_param_count(), 23);
        assert_eq!(a.smashed_width(), 3);
        assert_eq!(a.smashed_bytes(64), 64 * 3 * 4);
    }

    #[test]
    fn zero_weights_give_zero_activations() {
        let a = arch(&[5, 4, 3, 2], 2);
        let b = batch(6, 5, 2, 1);
        let s = a.forward_bottom(&vec![0.0; a.bottom_param_count()], &b).unwrap();
        assert_eq!(s.activations.rows, 6);
        assert_eq!(s.activations.cols, 3);
        assert!(s.activations.data.iter().all(|&v| v == 0.0));
        assert_eq!(s.labels, b.labels);
        assert_eq!(s.byte_size, 6 * 3 * 4);
    }

    #[test]
    fn identity_bottom_passes_inputs_through() {
        let a = Architecture::new(vec![3, 3, 2], 1, Activation::Linear).unwrap();
        let mut bottom = vec![0.0; a.bottom_param_count()];
        for i in 0..3 {
            bottom[i * 3 + i] = 1.0;
        }
        let b = batch(4, 3, 2, 2);
        let s = a.forward_bottom(&bottom, &b).unwrap();
        assert_eq!(s.activations, b.features);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let a = arch(&[5, 4, 2], 1);
        let b = batch(3, 4, 2, 1);
        assert!(matches!(
            a.forward_bottom(&vec![0.0; a.bottom_param_count()], &b),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let a = arch(&[4, 5, 3], 1);
        let model = a.init_model(3);
        let b = batch(8, 4, 3, 4);
        let smashed = a.forward_bottom(&model.bottom, &b).unwrap();
        let mut top = model.top.clone();
        let out = a.top_step(&mut top, &[smashed], 0.0).unwrap();
        assert_eq!(top, model.top);
        assert_eq!(out.activation_grads.len(), 1);
        assert!(out.activation_grads[0].data.iter().any(|&g| g != 0.0));

        let mut bottom = model.bottom.clone();
        a.bottom_step(&mut bottom, &b, &out.activation_grads[0], 0.0).unwrap();
        assert_eq!(bottom, model.bottom);
    }

    #[test]
    fn top_step_single_worker_is_plain_sgd() {
        let a = arch(&[4, 5, 3], 1);
        let model = a.init_model(5);
        let b = batch(8, 4, 3, 6);
        let smashed = a.forward_bottom(&model.bottom, &b).unwrap();
        let mut top = model.top.clone();
        a.top_step(&mut top, std::slice::from_ref(&smashed), 0.1).unwrap();

        let mut full = model.full();
        a.sgd_step(&mut full, &b, 0.1).unwrap();
        let (_, expected_top) = a.split(&full).unwrap();
        assert_eq!(top, expected_top);
    }

    #[test]
    fn top_step_identical_batches_match_single() {
        let a = arch(&[4, 6, 3], 1);
        let model = a.init_model(7);
        let b = batch(5, 4, 3, 8);
        let smashed = a.forward_bottom(&model.bottom, &b).unwrap();
        let mut one = model.top.clone();
        let out1 = a.top_step(&mut one, std::slice::from_ref(&smashed), 0.05).unwrap();
        let mut two = model.top.clone();
        let out2 = a
            .top_step(&mut two, &[smashed.clone(), smashed], 0.05)
            .unwrap();
        for (x, y) in one.iter().zip(&two) {
            assert!((x - y).abs() < 1e-15);
        }
        assert_eq!(out1.activation_grads[0], out2.activation_grads[1]);
    }

    #[test]
    fn top_step_requires_workers() {
        let a = arch(&[4, 6, 3], 1);
        let mut top = vec![0.0; a.top_param_count()];
        assert!(matches!(a.top_step(&mut top, &[], 0.1), Err(Error::Contract(_))));
    }

    #[test]
    fn bottom_step_rejects_bad_gradient_shape() {
        let a = arch(&[4, 6, 3], 1);
        let mut bottom = vec![0.1; a.bottom_param_count()];
        let b = batch(5, 4, 3, 1);
        let g = Matrix::zeros(5, 5);
        assert!(matches!(
            a.bottom_step(&mut bottom, &b, &g, 0.1),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn splice_and_split() {
        let a = arch(&[2, 3, 1], 1);
        assert_eq!(a.bottom_param_count(), 9);
        assert_eq!(a.top_param_count(), 4);
        let b: Vec<f64> = (0..9).map(f64::from).collect();
        let t: Vec<f64> = (9..13).map(f64::from).collect();
        let full = a.splice(&b, &t).unwrap();
        assert_eq!(full.len(), 13);
        assert_eq!(a.split(&full).unwrap(), (b.clone(), t.clone()));
        assert!(a.splice(&[0.0; 9], &[0.0; 4]).unwrap().iter().all(|&x| x == 0.0));
        assert!(matches!(a.splice(&b, &t[..3]), Err(Error::Shape(_))));
    }

    #[test]
    fn splice_lengths_add() {
        let a = arch(&[1, 1, 4, 1], 2);
        assert_eq!(a.bottom_param_count(), 10);
        assert_eq!(a.top_param_count(), 5);
        let full = a.splice(&[1.0; 10], &[2.0; 5]).unwrap();
        assert_eq!(full.len(), 15);
    }

    #[test]
    fn checkpoint_round_trip_and_header() {
        let a = arch(&[3, 4, 2], 1);
        let params = a.init_params(1);
        let bytes = encode_checkpoint(&a, &params).unwrap();
        assert_eq!(&bytes[..4], b"PSFL");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 1);
        let (a2, p2) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(a2, a);
        assert_eq!(p2, params);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).is_err());
    }

    #[test]
    fn init_is_bounded_and_deterministic() {
        let a = arch(&[16, 8, 4], 1);
        let p = a.init_params(3);
        assert_eq!(p, a.init_params(3));
        assert!(p[..16 * 8 + 8].iter().all(|v| v.abs() <= 0.25));
        assert!(p[16 * 8 + 8..].iter().all(|v| v.abs() <= 1.0 / 8f64.sqrt()));
    }

    #[test]
    fn compute_ratio_counts_weights() {
        let a = arch(&[32, 64, 64, 10], 2);
        let r = a.top_to_bottom_compute_ratio();
        assert!((r - 640.0 / (32.0 * 64.0 + 64.0 * 64.0)).abs() < 1e-12);
    }
}
