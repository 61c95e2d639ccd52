//! A compact convolutional classifier with a dropout layer.
//!
//! Layout: `[conv3x3 -> ReLU -> maxpool2] x blocks -> dense -> ReLU ->
//! dropout -> dense -> softmax`. All parameters live in one flat `Vec<f64>`
//! so optimizers, checkpoints and gradient checks treat them uniformly.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image::ImageTensor;
use super::{ClassifierError, Predictor};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_channels: usize,
    pub input_side: usize,
    /// Output channels of each conv block (2 or 3 blocks).
    pub conv_channels: Vec<usize>,
    pub hidden: usize,
    pub classes: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            input_channels: 3,
            input_side: 64,
            conv_channels: vec![8, 16],
            hidden: 32,
            classes: 2,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        let bad = |msg: String| Err(ClassifierError::InvalidArchitecture(msg));
        if !(2..=3).contains(&self.conv_channels.len()) {
            return bad(format!(
                "expected 2 or 3 conv blocks, got {}",
                self.conv_channels.len()
            ));
        }
        if self.input_channels == 0 || self.hidden == 0 || self.conv_channels.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        let factor = 1 << self.conv_channels.len();
        if self.input_side == 0 || !self.input_side.is_multiple_of(factor) {
            return bad(format!(
                "input side {} must be a positive multiple of {factor}",
                self.input_side
            ));
        }
        Ok(())
    }

    fn flat_features(&self) -> usize {
        let side = self.input_side >> self.conv_channels.len();
        side * side * self.conv_channels.last().copied().unwrap_or(0)
    }

    pub fn input_len(&self) -> usize {
        self.input_channels * self.input_side * self.input_side
    }

    pub fn parameter_count(&self) -> usize {
        Layout::new(self).total
    }
}

#[derive(Debug, Clone)]
struct ConvSlot {
    weights: Range<usize>,
    bias: Range<usize>,
    c_in: usize,
    c_out: usize,
    side: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    convs: Vec<ConvSlot>,
    fc1_w: Range<usize>,
    fc1_b: Range<usize>,
    fc2_w: Range<usize>,
    fc2_b: Range<usize>,
    flat: usize,
    total: usize,
}

impl Layout {
    fn new(arch: &Architecture) -> Self {
        let mut next = 0;
        let mut take = |n: usize| {
            let r = next..next + n;
            next += n;
            r
        };
        let mut convs = Vec::new();
        let mut c_in = arch.input_channels;
        let mut side = arch.input_side;
        for &c_out in &arch.conv_channels {
            let weights = take(c_out * c_in * 9);
            let bias = take(c_out);
            convs.push(ConvSlot {
                weights,
                bias,
                c_in,
                c_out,
                side,
            });
            c_in = c_out;
            side /= 2;
        }
        let flat = arch.flat_features();
        let fc1_w = take(arch.hidden * flat);
        let fc1_b = take(arch.hidden);
        let fc2_w = take(arch.classes * arch.hidden);
        let fc2_b = take(arch.classes);
        Layout {
            convs,
            fc1_w,
            fc1_b,
            fc2_w,
            fc2_b,
            flat,
            total: next,
        }
    }
}

/// Per-unit keep indicators for the dropout layer, with inverted scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    keep: Vec<bool>,
    scale: f64,
}

impl DropoutMask {
    /// Each unit is kept with probability `1 - rate`.
    pub fn sample<R: Rng + ?Sized>(units: usize, rate: f64, rng: &mut R) -> Self {
        let keep = (0..units).map(|_| rng.random::<f64>() >= rate).collect();
        DropoutMask {
            keep,
            scale: 1.0 / (1.0 - rate),
        }
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn kept_fraction(&self) -> f64 {
        self.keep.iter().filter(|&&k| k).count() as f64 / self.keep.len().max(1) as f64
    }

    pub fn apply(&self, values: &mut [f64]) {
        for (v, &k) in values.iter_mut().zip(&self.keep) {
            *v = if k { *v * self.scale } else { 0.0 };
        }
    }
}

fn validate_rate(rate: f64) -> Result<(), ClassifierError> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(ClassifierError::InvalidDropout(rate))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    arch: Architecture,
    /// Dropout rate used during training.
    dropout: f64,
    params: Vec<f64>,
}

/// Intermediate values kept for backpropagation.
struct Trace {
    block_inputs: Vec<Vec<f64>>,
    relu_outputs: Vec<Vec<f64>>,
    pool_argmax: Vec<Vec<usize>>,
    flat: Vec<f64>,
    hidden: Vec<f64>,
    hidden_dropped: Vec<f64>,
    logits: Vec<f64>,
    probs: Vec<f64>,
}

impl Model {
    /// Seeded uniform fan-in initialization: weights in `±sqrt(6 / fan_in)`,
    /// biases zero.
    pub fn init(arch: Architecture, dropout: f64, seed: u64) -> Result<Self, ClassifierError> {
        arch.validate()?;
        validate_rate(dropout)?;
        let layout = Layout::new(&arch);
        let mut params = vec![0.0; layout.total];
        let mut rng = rng::derive(seed, &[b"init"]);
        let mut fill = |range: Range<usize>, fan_in: usize| {
            let bound = (6.0 / fan_in as f64).sqrt();
            for p in &mut params[range] {
                *p = rng.random_range(-bound..bound);
            }
        };
        for slot in &layout.convs {
            fill(slot.weights.clone(), slot.c_in * 9);
        }
        fill(layout.fc1_w.clone(), layout.flat);
        fill(layout.fc2_w.clone(), arch.hidden);
        Ok(Model {
            arch,
            dropout,
            params,
        })
    }

    pub fn from_parameters(
        arch: Architecture,
        dropout: f64,
        params: Vec<f64>,
    ) -> Result<Self, ClassifierError> {
        arch.validate()?;
        validate_rate(dropout)?;
        let expected = arch.parameter_count();
        if params.len() != expected {
            return Err(ClassifierError::ShapeMismatch {
                expected,
                actual: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(ClassifierError::NonFiniteParameters);
        }
        Ok(Model {
            arch,
            dropout,
            params,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn parameters(&self) -> &[f64] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_input(&self, input: &ImageTensor) -> Result<(), ClassifierError> {
        let expected = self.arch.input_len();
        if input.channels != self.arch.input_channels
            || input.side != self.arch.input_side
            || input.data.len() != expected
        {
            return Err(ClassifierError::ShapeMismatch {
                expected,
                actual: input.data.len(),
            });
        }
        Ok(())
    }

    fn check_label(&self, label: usize) -> Result<(), ClassifierError> {
        if label >= self.arch.classes {
            return Err(ClassifierError::LabelOutOfRange {
                label,
                classes: self.arch.classes,
            });
        }
        Ok(())
    }

    fn forward(&self, input: &[f64], mask: Option<&DropoutMask>) -> Trace {
        let layout = Layout::new(&self.arch);
        let p = &self.params;
        let mut block_inputs = Vec::with_capacity(layout.convs.len());
        let mut relu_outputs = Vec::with_capacity(layout.convs.len());
        let mut pool_argmax = Vec::with_capacity(layout.convs.len());
        let mut x = input.to_vec();
        for slot in &layout.convs {
            let mut out = vec![0.0; slot.c_out * slot.side * slot.side];
            conv3x3_forward(
                &x,
                slot.c_in,
                slot.side,
                &p[slot.weights.clone()],
                &p[slot.bias.clone()],
                slot.c_out,
                &mut out,
            );
            for v in &mut out {
                *v = v.max(0.0);
            }
            let (pooled, argmax) = maxpool2_forward(&out, slot.c_out, slot.side);
            block_inputs.push(std::mem::replace(&mut x, pooled));
            relu_outputs.push(out);
            pool_argmax.push(argmax);
        }
        let flat = x;

        let mut hidden = dense_forward(
            &flat,
            &p[layout.fc1_w.clone()],
            &p[layout.fc1_b.clone()],
            self.arch.hidden,
        );
        for v in &mut hidden {
            *v = v.max(0.0);
        }
        let mut hidden_dropped = hidden.clone();
        if let Some(mask) = mask {
            mask.apply(&mut hidden_dropped);
        }
        let logits = dense_forward(
            &hidden_dropped,
            &p[layout.fc2_w.clone()],
            &p[layout.fc2_b.clone()],
            self.arch.classes,
        );
        let probs = softmax(&logits);
        Trace {
            block_inputs,
            relu_outputs,
            pool_argmax,
            flat,
            hidden,
            hidden_dropped,
            logits,
            probs,
        }
    }

    /// Accumulates `d(-ln p[label]) / d(params)` into `grad`; returns the loss.
    fn backward(
        &self,
        trace: &Trace,
        mask: Option<&DropoutMask>,
        label: usize,
        grad: &mut [f64],
    ) -> f64 {
        let layout = Layout::new(&self.arch);
        let p = &self.params;
        let loss = cross_entropy(&trace.logits, label);

        let mut d_logits = trace.probs.clone();
        d_logits[label] -= 1.0;

        let mut d_hidden = vec![0.0; self.arch.hidden];
        dense_backward(
            &trace.hidden_dropped,
            &p[layout.fc2_w.clone()],
            &d_logits,
            &mut grad[layout.fc2_w.clone()],
            &mut d_hidden,
        );
        for (g, d) in grad[layout.fc2_b.clone()].iter_mut().zip(&d_logits) {
            *g += d;
        }
        if let Some(mask) = mask {
            mask.apply(&mut d_hidden);
        }
        for (d, &h) in d_hidden.iter_mut().zip(&trace.hidden) {
            if h <= 0.0 {
                *d = 0.0;
            }
        }

        let mut d_x = vec![0.0; layout.flat];
        dense_backward(
            &trace.flat,
            &p[layout.fc1_w.clone()],
            &d_hidden,
            &mut grad[layout.fc1_w.clone()],
            &mut d_x,
        );
        for (g, d) in grad[layout.fc1_b.clone()].iter_mut().zip(&d_hidden) {
            *g += d;
        }

        for (k, slot) in layout.convs.iter().enumerate().rev() {
            let relu_out = &trace.relu_outputs[k];
            let mut d_conv = vec![0.0; relu_out.len()];
            for (&src, &d) in trace.pool_argmax[k].iter().zip(&d_x) {
                d_conv[src] += d;
            }
            for (d, &r) in d_conv.iter_mut().zip(relu_out) {
                if r <= 0.0 {
                    *d = 0.0;
                }
            }
            let mut d_in = vec![0.0; slot.c_in * slot.side * slot.side];
            let (gw, gb) = split_ranges(grad, &slot.weights, &slot.bias);
            conv3x3_backward(
                &trace.block_inputs[k],
                slot.c_in,
                slot.side,
                &p[slot.weights.clone()],
                slot.c_out,
                &d_conv,
                gw,
                gb,
                if k > 0 { Some(&mut d_in) } else { None },
            );
            d_x = d_in;
        }
        loss
    }

    /// Mean cross-entropy and its gradient over `batch`, with dropout off.
    pub fn loss_and_gradient(
        &self,
        batch: &[(&ImageTensor, usize)],
    ) -> Result<(f64, Vec<f64>), ClassifierError> {
        self.batch_gradient(batch, &mut |_| None)
    }

    fn batch_gradient(
        &self,
        batch: &[(&ImageTensor, usize)],
        masks: &mut dyn FnMut(usize) -> Option<DropoutMask>,
    ) -> Result<(f64, Vec<f64>), ClassifierError> {
        let mut grad = vec![0.0; self.params.len()];
        let mut total = 0.0;
        for &(input, label) in batch {
            self.check_input(input)?;
            self.check_label(label)?;
            let mask = masks(self.arch.hidden);
            let trace = self.forward(&input.data, mask.as_ref());
            total += self.backward(&trace, mask.as_ref(), label, &mut grad);
        }
        let n = batch.len().max(1) as f64;
        for g in &mut grad {
            *g /= n;
        }
        Ok((total / n, grad))
    }

    /// Mean cross-entropy with dropout off.
    pub fn loss(&self, data: &[(&ImageTensor, usize)]) -> Result<f64, ClassifierError> {
        let mut total = 0.0;
        for &(input, label) in data {
            self.check_input(input)?;
            self.check_label(label)?;
            total += cross_entropy(&self.forward(&input.data, None).logits, label);
        }
        Ok(total / data.len().max(1) as f64)
    }

    /// Deterministic forward pass (dropout off).
    pub fn predict(&self, input: &ImageTensor) -> Result<Vec<f64>, ClassifierError> {
        self.check_input(input)?;
        Ok(self.forward(&input.data, None).probs)
    }

    /// Forward pass with a freshly sampled dropout mask at `rate`.
    pub fn predict_stochastic<R: Rng + ?Sized>(
        &self,
        input: &ImageTensor,
        rate: f64,
        rng: &mut R,
    ) -> Result<Vec<f64>, ClassifierError> {
        self.check_input(input)?;
        validate_rate(rate)?;
        let mask = DropoutMask::sample(self.arch.hidden, rate, rng);
        Ok(self.forward(&input.data, Some(&mask)).probs)
    }

    /// Hidden-layer activations before dropout; exposed for dropout tests.
    pub fn hidden_activations(&self, input: &ImageTensor) -> Result<Vec<f64>, ClassifierError> {
        self.check_input(input)?;
        Ok(self.forward(&input.data, None).hidden)
    }
}

impl Predictor for Model {
    fn classes(&self) -> usize {
        self.arch.classes
    }

    fn predict_probs(&self, input: &ImageTensor) -> Result<Vec<f64>, ClassifierError> {
        self.predict(input)
    }
}

fn split_ranges<'a>(
    grad: &'a mut [f64],
    w: &Range<usize>,
    b: &Range<usize>,
) -> (&'a mut [f64], &'a mut [f64]) {
    debug_assert_eq!(w.end, b.start);
    let (head, tail) = grad.split_at_mut(w.end);
    (&mut head[w.clone()], &mut tail[..b.len()])
}

/// `-ln softmax(logits)[label]`, via log-sum-exp.
fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn dense_forward(input: &[f64], weights: &[f64], bias: &[f64], outputs: usize) -> Vec<f64> {
    let n = input.len();
    (0..outputs)
        .map(|o| {
            bias[o]
                + weights[o * n..(o + 1) * n]
                    .iter()
                    .zip(input)
                    .map(|(w, x)| w * x)
                    .sum::<f64>()
        })
        .collect()
}

fn dense_backward(
    input: &[f64],
    weights: &[f64],
    d_out: &[f64],
    d_weights: &mut [f64],
    d_input: &mut [f64],
) {
    let n = input.len();
    for (o, &d) in d_out.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let row = o * n..(o + 1) * n;
        for (gw, &x) in d_weights[row.clone()].iter_mut().zip(input) {
            *gw += d * x;
        }
        for (gi, &w) in d_input.iter_mut().zip(&weights[row]) {
            *gi += d * w;
        }
    }
}

/// Valid output range along one axis for kernel offset `delta` in `-1..=1`.
#[inline]
fn tap_range(side: usize, delta: isize) -> Range<usize> {
    let lo = (-delta).max(0) as usize;
    let hi = (side as isize - delta).min(side as isize) as usize;
    lo..hi
}

fn conv3x3_forward(
    input: &[f64],
    c_in: usize,
    side: usize,
    w: &[f64],
    b: &[f64],
    c_out: usize,
    out: &mut [f64],
) {
    let plane = side * side;
    for co in 0..c_out {
        let o = &mut out[co * plane..(co + 1) * plane];
        o.fill(b[co]);
        for ci in 0..c_in {
            let inp = &input[ci * plane..(ci + 1) * plane];
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = w[((co * c_in + ci) * 3 + ky) * 3 + kx];
                    let (dy, dx) = (ky as isize - 1, kx as isize - 1);
                    let xs = tap_range(side, dx);
                    for y in tap_range(side, dy) {
                        let iy = (y as isize + dy) as usize;
                        let ix0 = (xs.start as isize + dx) as usize;
                        let orow = &mut o[y * side + xs.start..y * side + xs.end];
                        let irow = &inp[iy * side + ix0..iy * side + ix0 + xs.len()];
                        for (acc, &v) in orow.iter_mut().zip(irow) {
                            *acc += wv * v;
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv3x3_backward(
    input: &[f64],
    c_in: usize,
    side: usize,
    w: &[f64],
    c_out: usize,
    d_out: &[f64],
    d_w: &mut [f64],
    d_b: &mut [f64],
    mut d_input: Option<&mut Vec<f64>>,
) {
    let plane = side * side;
    for co in 0..c_out {
        let g = &d_out[co * plane..(co + 1) * plane];
        d_b[co] += g.iter().sum::<f64>();
        for ci in 0..c_in {
            let inp = &input[ci * plane..(ci + 1) * plane];
            for ky in 0..3 {
                for kx in 0..3 {
                    let widx = ((co * c_in + ci) * 3 + ky) * 3 + kx;
                    let wv = w[widx];
                    let (dy, dx) = (ky as isize - 1, kx as isize - 1);
                    let xs = tap_range(side, dx);
                    let mut acc = 0.0;
                    for y in tap_range(side, dy) {
                        let iy = (y as isize + dy) as usize;
                        let ix0 = (xs.start as isize + dx) as usize;
                        let grow = &g[y * side + xs.start..y * side + xs.end];
                        let irow = iy * side + ix0..iy * side + ix0 + xs.len();
                        acc += grow
                            .iter()
                            .zip(&inp[irow.clone()])
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                        if let Some(di) = d_input.as_deref_mut() {
                            let di = &mut di[ci * plane..(ci + 1) * plane];
                            for (d, &gv) in di[irow].iter_mut().zip(grow) {
                                *d += wv * gv;
                            }
                        }
                    }
                    d_w[widx] += acc;
                }
            }
        }
    }
}

/// 2x2 stride-2 max pooling; ties keep the first element in scan order.
fn maxpool2_forward(input: &[f64], channels: usize, side: usize) -> (Vec<f64>, Vec<usize>) {
    let half = side / 2;
    let mut out = Vec::with_capacity(channels * half * half);
    let mut argmax = Vec::with_capacity(channels * half * half);
    for c in 0..channels {
        let base = c * side * side;
        for y in 0..half {
            for x in 0..half {
                let mut best = base + 2 * y * side + 2 * x;
                for idx in [best + 1, best + side, best + side + 1] {
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out.push(input[best]);
                argmax.push(best);
            }
        }
    }
    (out, argmax)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Optimizer {
    #[default]
    Sgd,
    Adam,
}

impl std::str::FromStr for Optimizer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            other => Err(format!(
                "unknown optimizer '{other}' (expected sgd or adam)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 25,
            batch_size: 32,
            learning_rate: 0.001,
            optimizer: Optimizer::Sgd,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(ClassifierError::InvalidTrainConfig(
                "epochs and batch size must be positive".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(ClassifierError::InvalidTrainConfig(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Training-set loss (dropout off): index 0 at initialization, index `e`
    /// after epoch `e`.
    pub epoch_losses: Vec<f64>,
    pub final_accuracy: f64,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Mini-batch training on cross-entropy with inverted dropout.
pub fn train(
    model: &mut Model,
    data: &[(ImageTensor, usize)],
    cfg: &TrainConfig,
) -> Result<TrainReport, ClassifierError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(ClassifierError::EmptyDataset);
    }
    let refs: Vec<(&ImageTensor, usize)> = data.iter().map(|(t, l)| (t, *l)).collect();
    for &(t, l) in &refs {
        model.check_input(t)?;
        model.check_label(l)?;
    }

    let mut shuffle_rng = rng::derive(cfg.seed, &[b"shuffle"]);
    let mut dropout_rng = rng::derive(cfg.seed, &[b"dropout"]);
    let mut adam = Adam {
        m: vec![0.0; model.params.len()],
        v: vec![0.0; model.params.len()],
        step: 0,
    };
    let mut order: Vec<usize> = (0..refs.len()).collect();

    let mut epoch_losses = vec![finite_loss(model.loss(&refs)?, 0, None)?];
    let rate = model.dropout;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<(&ImageTensor, usize)> = chunk.iter().map(|&i| refs[i]).collect();
            let mut masks =
                |units| (rate > 0.0).then(|| DropoutMask::sample(units, rate, &mut dropout_rng));
            let (loss, grad) = model.batch_gradient(&batch, &mut masks)?;
            finite_loss(loss, epoch, Some(b))?;
            match cfg.optimizer {
                Optimizer::Sgd => {
                    for (p, g) in model.params.iter_mut().zip(&grad) {
                        *p -= cfg.learning_rate * g;
                    }
                }
                Optimizer::Adam => adam.update(&mut model.params, &grad, cfg.learning_rate),
            }
        }
        let loss = finite_loss(model.loss(&refs)?, epoch, None)?;
        log::info!("epoch {epoch}/{}: train loss {loss:.6}", cfg.epochs);
        epoch_losses.push(loss);
    }

    let correct = refs
        .iter()
        .filter(|(t, l)| model.predict(t).map(|p| argmax(&p) == *l).unwrap_or(false))
        .count();
    Ok(TrainReport {
        epoch_losses,
        final_accuracy: correct as f64 / refs.len() as f64,
    })
}

fn finite_loss(loss: f64, epoch: usize, batch: Option<usize>) -> Result<f64, ClassifierError> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(ClassifierError::Diverged { epoch, batch, loss })
    }
}

pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tiny_arch() -> Architecture {
        Architecture {
            input_channels: 3,
            input_side: 8,
            conv_channels: vec![2, 3],
            hidden: 5,
            classes: 2,
        }
    }

    fn random_input(arch: &Architecture, seed: u64) -> ImageTensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..arch.input_len()).map(|_| rng.random::<f64>()).collect();
        ImageTensor::new(arch.input_channels, arch.input_side, data).unwrap()
    }

    #[test]
    fn architecture_validation() {
        assert!(Architecture::default().validate().is_ok());
        assert!(Architecture {
            conv_channels: vec![4],
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(Architecture {
            input_side: 60,
            conv_channels: vec![4, 4, 4],
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(Architecture {
            classes: 1,
            ..Default::default()
        }
        .validate()
        .is_err());
        // 3*8*9+8 + 8*16*9+16 + 32*16*16*16+32 + 2*32+2
        assert_eq!(
            Architecture::default().parameter_count(),
            224 + 1168 + 131_104 + 66
        );
    }

    #[test]
    fn softmax_is_normalized_and_stable() {
        let p = softmax(&[1000.0, 1000.0]);
        assert_eq!(p, vec![0.5, 0.5]);
        let q = softmax(&[-3.0, 0.5, 2.0]);
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_weights_give_uniform_output() {
        for classes in [2, 8] {
            let arch = Architecture {
                classes,
                ..tiny_arch()
            };
            let model =
                Model::from_parameters(arch.clone(), 0.0, vec![0.0; arch.parameter_count()])
                    .unwrap();
            let p = model.predict(&random_input(&arch, 1)).unwrap();
            for v in p {
                assert!((v - 1.0 / classes as f64).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn deterministic_prediction_and_shape_errors() {
        let arch = tiny_arch();
        let model = Model::init(arch.clone(), 0.2, 5).unwrap();
        let x = random_input(&arch, 2);
        assert_eq!(model.predict(&x).unwrap(), model.predict(&x).unwrap());
        let wrong = ImageTensor::zeros(3, 16);
        assert!(matches!(
            model.predict(&wrong),
            Err(ClassifierError::ShapeMismatch { .. })
        ));
        assert_eq!(Model::init(arch.clone(), 0.2, 5).unwrap(), model);
        assert_ne!(Model::init(arch, 0.2, 6).unwrap(), model);
    }

    #[test]
    fn zero_rate_dropout_matches_deterministic_pass() {
        let arch = tiny_arch();
        let model = Model::init(arch.clone(), 0.2, 5).unwrap();
        let x = random_input(&arch, 3);
        let mut rng = rng::derive(1, &[]);
        assert_eq!(
            model.predict_stochastic(&x, 0.0, &mut rng).unwrap(),
            model.predict(&x).unwrap()
        );
        assert!(model.predict_stochastic(&x, 1.0, &mut rng).is_err());
    }

    #[test]
    fn mask_entries_and_keep_fraction() {
        let mut rng = rng::derive(11, &[]);
        let mask = DropoutMask::sample(100_000, 0.3, &mut rng);
        assert!((mask.kept_fraction() - 0.7).abs() < 0.01);
        let none = DropoutMask::sample(50, 0.0, &mut rng);
        assert!(none.keep().iter().all(|&k| k));
    }

    #[test]
    fn inverted_dropout_preserves_expected_activation() {
        let arch = tiny_arch();
        let model = Model::init(arch.clone(), 0.2, 8).unwrap();
        let x = random_input(&arch, 4);
        let hidden = model.hidden_activations(&x).unwrap();
        let mut rng = rng::derive(99, &[]);
        let draws = 20_000;
        let mut sums = vec![0.0; hidden.len()];
        for _ in 0..draws {
            let mask = DropoutMask::sample(hidden.len(), 0.2, &mut rng);
            let mut h = hidden.clone();
            mask.apply(&mut h);
            for (s, v) in sums.iter_mut().zip(&h) {
                *s += v;
            }
        }
        for (s, &h) in sums.iter().zip(&hidden) {
            let mean = s / draws as f64;
            if h > 0.0 {
                assert!((mean - h).abs() / h < 0.02, "mean {mean} vs {h}");
            } else {
                assert_eq!(mean, 0.0);
            }
        }
    }

    #[test]
    fn zero_learning_rate_leaves_model_unchanged() {
        let arch = tiny_arch();
        let mut model = Model::init(arch.clone(), 0.2, 1).unwrap();
        let before = model.clone();
        let data: Vec<_> = (0..6)
            .map(|i| (random_input(&arch, i), (i % 2) as usize))
            .collect();
        for optimizer in [Optimizer::Sgd, Optimizer::Adam] {
            let cfg = TrainConfig {
                epochs: 2,
                batch_size: 4,
                learning_rate: 0.0,
                optimizer,
                seed: 3,
            };
            let report = train(&mut model, &data, &cfg).unwrap();
            assert_eq!(model, before);
            assert!(report.epoch_losses.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn training_is_reproducible() {
        let arch = tiny_arch();
        let data: Vec<_> = (0..10)
            .map(|i| (random_input(&arch, i), (i % 2) as usize))
            .collect();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            learning_rate: 0.05,
            optimizer: Optimizer::Sgd,
            seed: 9,
        };
        let mut a = Model::init(arch.clone(), 0.3, 1).unwrap();
        let mut b = Model::init(arch, 0.3, 1).unwrap();
        train(&mut a, &data, &cfg).unwrap();
        train(&mut b, &data, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn training_errors() {
        let arch = tiny_arch();
        let mut model = Model::init(arch.clone(), 0.0, 1).unwrap();
        assert!(matches!(
            train(&mut model, &[], &TrainConfig::default()),
            Err(ClassifierError::EmptyDataset)
        ));
        let bad_label = vec![(random_input(&arch, 0), 2)];
        assert!(matches!(
            train(&mut model, &bad_label, &TrainConfig::default()),
            Err(ClassifierError::LabelOutOfRange {
                label: 2,
                classes: 2
            })
        ));
        let mut poisoned = random_input(&arch, 0);
        poisoned.data[0] = f64::INFINITY;
        let data = vec![(poisoned, 0), (random_input(&arch, 1), 1)];
        assert!(matches!(
            train(&mut model, &data, &TrainConfig::default()),
            Err(ClassifierError::Diverged {
                epoch: 0,
                batch: None,
                ..
            })
        ));
    }

    #[test]
    fn maxpool_picks_first_maximum() {
        let input = [1.0, 3.0, 3.0, 0.0];
        let (out, arg) = maxpool2_forward(&input, 1, 2);
        assert_eq!(out, vec![3.0]);
        assert_eq!(arg, vec![1]);
    }
}
