//! The 2-layer feedforward classifier: D inputs, 400 tanh hidden neurons,
//! 10 softmax outputs, trained with cross-entropy loss and Adam under a
//! stepped learning-rate schedule.
//!
//! Multi-rate networks fix D = 256; single-rate networks use D = m, their
//! trained measurement count. Training runs in f64 and models serialize as
//! f32.
//!
//! Reproducibility: all weight draws and epoch shuffles come from seeds
//! derived from the training seed. Batch gradients are reduced over a
//! fixed number of fixed-boundary chunks (chunks run in parallel, each
//! chunk accumulates its examples in order, chunks merge in index order),
//! so the result is independent of thread scheduling and worker count.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fingerprint::fnv1a64;
use crate::pipeline::MultiRateSet;
use crate::rng;
use crate::sensing::FORMAT_VERSION;

/// Hidden layer width used by every experiment network.
pub const HIDDEN_NEURONS: usize = 400;
/// Output classes of both datasets.
pub const NUM_CLASSES: usize = 10;
/// Magic bytes of the model file format.
pub const MODEL_MAGIC: &[u8; 4] = b"CSMM";

/// Fixed chunk count of the deterministic batch-gradient reduction.
const GRAD_CHUNKS: usize = 4;

/// Floor applied to the predicted probability inside the loss.
const PROB_FLOOR: f64 = 1e-30;

/// Weights and biases of the network. `w1` is hidden x d_in row-major,
/// `w2` is classes x hidden row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub d_in: usize,
    pub hidden: usize,
    pub classes: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl MlpParams {
    pub fn zeros(d_in: usize, hidden: usize, classes: usize) -> Self {
        MlpParams {
            d_in,
            hidden,
            classes,
            w1: vec![0.0; hidden * d_in],
            b1: vec![0.0; hidden],
            w2: vec![0.0; classes * hidden],
            b2: vec![0.0; classes],
        }
    }

    /// Glorot-uniform weights (bounds +/- sqrt(6 / (fan_in + fan_out))),
    /// zero biases. Draw order: w1 row-major, then w2 row-major.
    pub fn glorot(d_in: usize, hidden: usize, classes: usize, seed: u64) -> Self {
        let mut rng = rng::rng_from_seed(seed);
        let mut params = Self::zeros(d_in, hidden, classes);
        let bound1 = (6.0 / (d_in + hidden) as f64).sqrt();
        for w in &mut params.w1 {
            *w = rng::uniform_symmetric(&mut rng, bound1);
        }
        let bound2 = (6.0 / (hidden + classes) as f64).sqrt();
        for w in &mut params.w2 {
            *w = rng::uniform_symmetric(&mut rng, bound2);
        }
        params
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Serialize to the model file layout (see [`save_model`]).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.num_params() * 4);
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.d_in as u32).to_le_bytes());
        out.extend_from_slice(&(self.hidden as u32).to_le_bytes());
        out.extend_from_slice(&(self.classes as u32).to_le_bytes());
        for block in [&self.w1, &self.b1, &self.w2, &self.b2] {
            for &v in block.iter() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    /// Fingerprint of the serialized (f32) parameters.
    pub fn fingerprint(&self) -> u64 {
        fnv1a64(&self.to_bytes())
    }
}

/// Training hyperparameters. Defaults are the experiment values: lr 5e-5
/// dropping by 0.9 every 4 epochs, 100 epochs, batch size 128, Adam with
/// beta1 0.9, beta2 0.999, epsilon 1e-8, Glorot-uniform initialization.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub lr_drop_factor: f64,
    pub lr_drop_period_epochs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub init: InitScheme,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    GlorotUniform,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            initial_lr: 5e-5,
            lr_drop_factor: 0.9,
            lr_drop_period_epochs: 4,
            epochs: 100,
            batch_size: 128,
            seed: 0,
            init: InitScheme::GlorotUniform,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.initial_lr <= 0.0 {
            return Err(Error::invalid("initial_lr must be positive"));
        }
        if !(self.lr_drop_factor > 0.0 && self.lr_drop_factor <= 1.0) {
            return Err(Error::invalid("lr_drop_factor must be in (0, 1]"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if self.lr_drop_period_epochs == 0 {
            return Err(Error::invalid("lr_drop_period_epochs must be positive"));
        }
        Ok(())
    }
}

/// Learning rate for a 0-based epoch index:
/// `initial_lr * drop_factor^floor(epoch / drop_period)`.
pub fn lr_at(config: &TrainConfig, epoch: usize) -> f64 {
    config.initial_lr
        * config
            .lr_drop_factor
            .powi((epoch / config.lr_drop_period_epochs) as i32)
}

/// Gradient (or moment) buffers shaped like [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Gradients {
            w1: vec![0.0; params.w1.len()],
            b1: vec![0.0; params.b1.len()],
            w2: vec![0.0; params.w2.len()],
            b2: vec![0.0; params.b2.len()],
        }
    }

    fn zero(&mut self) {
        self.w1.fill(0.0);
        self.b1.fill(0.0);
        self.w2.fill(0.0);
        self.b2.fill(0.0);
    }

    fn add_assign(&mut self, other: &Gradients) {
        for (d, s) in self.w1.iter_mut().zip(&other.w1) {
            *d += s;
        }
        for (d, s) in self.b1.iter_mut().zip(&other.b1) {
            *d += s;
        }
        for (d, s) in self.w2.iter_mut().zip(&other.w2) {
            *d += s;
        }
        for (d, s) in self.b2.iter_mut().zip(&other.b2) {
            *d += s;
        }
    }

    fn scale(&mut self, factor: f64) {
        for block in [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2] {
            for v in block.iter_mut() {
                *v *= factor;
            }
        }
    }
}

/// Adam first/second moment accumulators and step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Gradients,
    pub v: Gradients,
    pub t: u64,
}

impl AdamState {
    pub fn zeros_like(params: &MlpParams) -> Self {
        AdamState {
            m: Gradients::zeros_like(params),
            v: Gradients::zeros_like(params),
            t: 0,
        }
    }
}

/// Dot product with four independent accumulation chains. The summation
/// order is fixed (lanes 0..3 over the 4-blocks, then the tail, combined as
/// (s0 + s2) + (s1 + s3) + tail), so results are reproducible.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s0 = 0.0;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    let mut s3 = 0.0;
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let ra = ca.remainder();
    let rb = cb.remainder();
    for (pa, pb) in ca.zip(cb) {
        s0 += pa[0] * pb[0];
        s1 += pa[1] * pb[1];
        s2 += pa[2] * pb[2];
        s3 += pa[3] * pb[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (s0 + s2) + (s1 + s3) + tail
}

#[inline]
fn axpy(dst: &mut [f64], src: &[f64], a: f64) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

/// Two axpy updates reading the same source in one pass.
#[inline]
fn axpy2(d0: &mut [f64], d1: &mut [f64], src: &[f64], a0: f64, a1: f64) {
    debug_assert_eq!(d0.len(), src.len());
    debug_assert_eq!(d1.len(), src.len());
    for i in 0..src.len() {
        let s = src[i];
        d0[i] += a0 * s;
        d1[i] += a1 * s;
    }
}

/// Retained activations of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub hidden: Vec<f64>,
    pub probs: Vec<f64>,
}

/// hidden = tanh(w1 x + b1); probs = softmax(w2 hidden + b2).
///
/// Probabilities are positive and sum to 1 within 1e-12.
pub fn forward(params: &MlpParams, x: &[f64]) -> Result<Forward> {
    if x.len() != params.d_in {
        return Err(Error::Dimension(format!(
            "input has length {}, expected {}",
            x.len(),
            params.d_in
        )));
    }
    let mut hidden = vec![0.0; params.hidden];
    let mut probs = vec![0.0; params.classes];
    forward_into(params, x, x.len(), &mut hidden, &mut probs);
    if hidden.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite value in hidden layer".into()));
    }
    if probs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite value in output layer".into()));
    }
    Ok(Forward { hidden, probs })
}

/// Shared forward kernel. Only the first `eff` input entries are read;
/// callers guarantee entries `eff..d_in` are zero.
fn forward_into(params: &MlpParams, x: &[f64], eff: usize, hidden: &mut [f64], probs: &mut [f64]) {
    let d = params.d_in;
    for h in 0..params.hidden {
        let row = &params.w1[h * d..h * d + eff];
        hidden[h] = (params.b1[h] + dot(row, &x[..eff])).tanh();
    }
    for c in 0..params.classes {
        let row = &params.w2[c * params.hidden..(c + 1) * params.hidden];
        probs[c] = params.b2[c] + dot(row, hidden);
    }
    // Stable softmax in place of the logits.
    let max_logit = probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for p in probs.iter_mut() {
        *p = (*p - max_logit).exp();
        sum += *p;
    }
    let inv = 1.0 / sum;
    for p in probs.iter_mut() {
        *p *= inv;
    }
}

/// Cross-entropy of a probability vector against a label:
/// `-ln(max(p[label], 1e-30))`.
pub fn loss(probs: &[f64], label: usize) -> Result<f64> {
    if label >= probs.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            probs.len()
        )));
    }
    Ok(-probs[label].max(PROB_FLOOR).ln())
}

/// Argmax class; ties break toward the lowest class index.
pub fn predict(params: &MlpParams, x: &[f64]) -> Result<usize> {
    if x.len() != params.d_in {
        return Err(Error::Dimension(format!(
            "input has length {}, expected {}",
            x.len(),
            params.d_in
        )));
    }
    Ok(predict_with_len(params, x, x.len()))
}

/// Argmax class reading only the first `eff` input entries (the rest must
/// be zero). Softmax is monotone, so the argmax is taken on logits.
pub fn predict_with_len(params: &MlpParams, x: &[f64], eff: usize) -> usize {
    let d = params.d_in;
    let mut hidden = vec![0.0; params.hidden];
    for h in 0..params.hidden {
        let row = &params.w1[h * d..h * d + eff];
        hidden[h] = (params.b1[h] + dot(row, &x[..eff])).tanh();
    }
    let mut best = 0;
    let mut best_logit = f64::NEG_INFINITY;
    for c in 0..params.classes {
        let row = &params.w2[c * params.hidden..(c + 1) * params.hidden];
        let logit = params.b2[c] + dot(row, &hidden);
        if logit > best_logit {
            best_logit = logit;
            best = c;
        }
    }
    best
}

/// Scratch buffers reused across examples by one gradient worker.
struct Scratch {
    x: Vec<f64>,
    hidden: Vec<f64>,
    probs: Vec<f64>,
    dhidden: Vec<f64>,
}

impl Scratch {
    fn new(params: &MlpParams) -> Self {
        Scratch {
            x: vec![0.0; params.d_in],
            hidden: vec![0.0; params.hidden],
            probs: vec![0.0; params.classes],
            dhidden: vec![0.0; params.hidden],
        }
    }
}

/// Fused forward/backward for one example; accumulates raw (unscaled)
/// gradients and returns (loss, correct).
fn example_pass(
    params: &MlpParams,
    eff: usize,
    label: usize,
    grads: &mut Gradients,
    scratch: &mut Scratch,
) -> (f64, bool) {
    let d = params.d_in;
    let x = &scratch.x;
    forward_into(params, x, eff, &mut scratch.hidden, &mut scratch.probs);

    let mut best = 0;
    let mut best_p = f64::NEG_INFINITY;
    for (c, &p) in scratch.probs.iter().enumerate() {
        if p > best_p {
            best_p = p;
            best = c;
        }
    }
    let loss = -scratch.probs[label].max(PROB_FLOOR).ln();

    // Output layer: residual = probs - onehot(label).
    scratch.dhidden.fill(0.0);
    for c in 0..params.classes {
        let r = scratch.probs[c] - if c == label { 1.0 } else { 0.0 };
        grads.b2[c] += r;
        let row = c * params.hidden..(c + 1) * params.hidden;
        axpy(&mut grads.w2[row.clone()], &scratch.hidden, r);
        axpy(&mut scratch.dhidden, &params.w2[row], r);
    }
    // Hidden layer: tanh' = 1 - h^2; input entries beyond eff are zero.
    for h in 0..params.hidden {
        let g = scratch.dhidden[h] * (1.0 - scratch.hidden[h] * scratch.hidden[h]);
        grads.b1[h] += g;
        axpy(&mut grads.w1[h * d..h * d + eff], &x[..eff], g);
    }
    (loss, best == label)
}

/// Mean cross-entropy gradient over a batch of (input, label) examples.
pub fn backward(params: &MlpParams, batch: &[(&[f64], usize)]) -> Result<Gradients> {
    if batch.is_empty() {
        return Err(Error::invalid("backward needs a nonempty batch"));
    }
    let mut grads = Gradients::zeros_like(params);
    let mut scratch = Scratch::new(params);
    for &(x, label) in batch {
        if x.len() != params.d_in {
            return Err(Error::Dimension(format!(
                "input has length {}, expected {}",
                x.len(),
                params.d_in
            )));
        }
        if label >= params.classes {
            return Err(Error::invalid(format!(
                "label {label} out of range for {} classes",
                params.classes
            )));
        }
        scratch.x.copy_from_slice(x);
        example_pass(params, params.d_in, label, &mut grads, &mut scratch);
    }
    grads.scale(1.0 / batch.len() as f64);
    for block in [&grads.w1, &grads.b1, &grads.w2, &grads.b2] {
        if block.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
    }
    Ok(grads)
}

#[inline]
fn adam_update_slice(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// One Adam update with bias correction; increments the step counter.
pub fn adam_step(
    params: &mut MlpParams,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
    config: &TrainConfig,
) {
    debug_assert_eq!(params.w1.len(), grads.w1.len());
    state.t += 1;
    let bc1 = 1.0 - config.adam_beta1.powi(state.t as i32);
    let bc2 = 1.0 - config.adam_beta2.powi(state.t as i32);
    adam_update_slice(
        &mut params.w1, &grads.w1, &mut state.m.w1, &mut state.v.w1,
        lr, config.adam_beta1, config.adam_beta2, config.adam_epsilon, bc1, bc2,
    );
    adam_update_slice(
        &mut params.b1, &grads.b1, &mut state.m.b1, &mut state.v.b1,
        lr, config.adam_beta1, config.adam_beta2, config.adam_epsilon, bc1, bc2,
    );
    adam_update_slice(
        &mut params.w2, &grads.w2, &mut state.m.w2, &mut state.v.w2,
        lr, config.adam_beta1, config.adam_beta2, config.adam_epsilon, bc1, bc2,
    );
    adam_update_slice(
        &mut params.b2, &grads.b2, &mut state.m.b2, &mut state.v.b2,
        lr, config.adam_beta1, config.adam_beta2, config.adam_epsilon, bc1, bc2,
    );
}

/// Per-epoch training statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Fraction of training examples classified correctly during the epoch
    /// (accumulated on the fly from each forward pass).
    pub accuracy: f64,
    pub lr: f64,
}

/// Per-chunk gradient worker with example-blocked buffers. Processing a
/// chunk of examples against one W1 row at a time keeps each row resident
/// while it serves the whole chunk, instead of streaming all of W1 once
/// per example.
struct ChunkWorker {
    grads: Gradients,
    /// Chunk inputs, one d_in-row per example; entries beyond `eff` are
    /// stale and never read.
    x: Vec<f64>,
    eff: Vec<usize>,
    labels: Vec<usize>,
    /// tanh activations, example-major.
    hidden: Vec<f64>,
    probs: Vec<f64>,
    /// Pre-activation gradients of the hidden layer, example-major.
    dg: Vec<f64>,
    /// Sum of `dg` over the chunk's examples, for the centering correction.
    dg_sum: Vec<f64>,
    dhidden: Vec<f64>,
    loss_sum: f64,
    correct: usize,
}

impl ChunkWorker {
    fn new(params: &MlpParams, capacity: usize) -> Self {
        ChunkWorker {
            grads: Gradients::zeros_like(params),
            x: vec![0.0; capacity * params.d_in],
            eff: vec![0; capacity],
            labels: vec![0; capacity],
            hidden: vec![0.0; capacity * params.hidden],
            probs: vec![0.0; params.classes],
            dg: vec![0.0; capacity * params.hidden],
            dg_sum: vec![0.0; params.hidden],
            dhidden: vec![0.0; params.hidden],
            loss_sum: 0.0,
            correct: 0,
        }
    }
}

/// Forward + backward over `count` staged examples, accumulating raw
/// gradients. Staged inputs are already scaled per coordinate; `shift`
/// completes the standardization. Example order is fixed within every
/// accumulation loop.
///
/// The shift is never materialized into the inputs: the forward pass
/// subtracts the precomputed `w1_dot_shift` from each pre-activation, and
/// the backward pass uses
/// `sum_e dg_e (x_e - shift) = sum_e dg_e x_e - (sum_e dg_e) shift`,
/// so the zero-padded tails of the inputs keep their fast path.
fn chunk_pass(
    params: &MlpParams,
    shift: &[f64],
    w1_dot_shift: &[f64],
    worker: &mut ChunkWorker,
    count: usize,
) {
    let ChunkWorker {
        grads,
        x,
        eff,
        labels,
        hidden,
        probs,
        dg,
        dg_sum,
        dhidden,
        loss_sum,
        correct,
        ..
    } = worker;
    let d = params.d_in;
    let hn = params.hidden;

    // Hidden layer: one weight row against every example of the chunk, so
    // the row stays resident while it serves all of them.
    for h in 0..hn {
        let row = &params.w1[h * d..(h + 1) * d];
        let bias = params.b1[h] - w1_dot_shift[h];
        for e in 0..count {
            let k = eff[e];
            let xe = &x[e * d..e * d + k];
            hidden[e * hn + h] = (bias + dot(&row[..k], xe)).tanh();
        }
    }

    // Output layer, loss, and hidden-layer error, per example.
    dg_sum.fill(0.0);
    for e in 0..count {
        let he = &hidden[e * hn..(e + 1) * hn];
        for c in 0..params.classes {
            let row = &params.w2[c * hn..(c + 1) * hn];
            probs[c] = params.b2[c] + dot(row, he);
        }
        let max_logit = probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for p in probs.iter_mut() {
            *p = (*p - max_logit).exp();
            sum += *p;
        }
        let inv = 1.0 / sum;
        let mut best = 0;
        let mut best_p = f64::NEG_INFINITY;
        for (c, p) in probs.iter_mut().enumerate() {
            *p *= inv;
            if *p > best_p {
                best_p = *p;
                best = c;
            }
        }
        let label = labels[e];
        *loss_sum += -probs[label].max(PROB_FLOOR).ln();
        *correct += (best == label) as usize;

        dhidden.fill(0.0);
        for c in 0..params.classes {
            let r = probs[c] - if c == label { 1.0 } else { 0.0 };
            grads.b2[c] += r;
            axpy(&mut grads.w2[c * hn..(c + 1) * hn], he, r);
            axpy(dhidden, &params.w2[c * hn..(c + 1) * hn], r);
        }
        for h in 0..hn {
            let g = dhidden[h] * (1.0 - he[h] * he[h]);
            grads.b1[h] += g;
            dg[e * hn + h] = g;
            dg_sum[h] += g;
        }
    }

    // Input-layer weight gradients: gradient-row pairs accumulate over the
    // whole chunk while they stay resident, then each row takes its
    // centering correction once.
    let mut rows = grads.w1.chunks_exact_mut(2 * d);
    let mut h = 0;
    for pair in rows.by_ref() {
        let (row0, row1) = pair.split_at_mut(d);
        for e in 0..count {
            let g0 = dg[e * hn + h];
            let g1 = dg[e * hn + h + 1];
            let k = eff[e];
            axpy2(&mut row0[..k], &mut row1[..k], &x[e * d..e * d + k], g0, g1);
        }
        axpy2(row0, row1, shift, -dg_sum[h], -dg_sum[h + 1]);
        h += 2;
    }
    if let [row] = rows.into_remainder().chunks_exact_mut(d).collect::<Vec<_>>().as_mut_slice() {
        for e in 0..count {
            let g = dg[e * hn + h];
            let k = eff[e];
            axpy(&mut row[..k], &x[e * d..e * d + k], g);
        }
        axpy(row, shift, -dg_sum[h]);
    }
}

/// Per-coordinate standardization of the training inputs, computed over
/// the padded vectors (schedule points shorter than a coordinate
/// contribute zeros). Returns `(shift, scale)` such that the standardized
/// input is `x[j] * scale[j] - shift[j]`; zero entries stay zero under the
/// scale factor, so padding keeps its fast path.
fn input_stats(set: &MultiRateSet, d_in: usize) -> (Vec<f64>, Vec<f64>) {
    let mut sum = vec![0.0f64; d_in];
    let mut sum_sq = vec![0.0f64; d_in];
    for i in 0..set.len() {
        let (y, m, _) = set.parts(i);
        let k = m.min(d_in);
        for j in 0..k {
            let v = y[j] as f64;
            sum[j] += v;
            sum_sq[j] += v * v;
        }
    }
    let inv_n = 1.0 / set.len() as f64;
    let mut shift = vec![0.0f64; d_in];
    let mut scale = vec![0.0f64; d_in];
    for j in 0..d_in {
        let mean = sum[j] * inv_n;
        let var = (sum_sq[j] * inv_n - mean * mean).max(0.0);
        let sigma = var.sqrt().max(1e-9);
        scale[j] = 1.0 / sigma;
        shift[j] = mean / sigma;
    }
    (shift, scale)
}

/// Train on a multi-rate set with mini-batch Adam.
///
/// `d_in` is the network input dimension: 256 for multi-rate networks, the
/// trained count `m` for single-rate networks (inputs are the first `d_in`
/// entries of the padded vectors). The set is reshuffled every epoch with a
/// seed derived from `config.seed`.
///
/// Optimization runs on standardized inputs (per-coordinate z-score over
/// the training set, the usual feature-input normalization); the
/// standardization is absorbed into the first-layer weights and biases of
/// the returned parameters, which therefore operate on raw padded vectors.
pub fn train(
    set: &MultiRateSet,
    d_in: usize,
    config: &TrainConfig,
) -> Result<(MlpParams, Vec<EpochStats>)> {
    train_with_progress(set, d_in, config, |_| {})
}

/// [`train`] with a per-epoch callback, for progress reporting.
pub fn train_with_progress(
    set: &MultiRateSet,
    d_in: usize,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(MlpParams, Vec<EpochStats>)> {
    config.validate()?;
    if set.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if d_in == 0 || d_in > crate::pipeline::M_MAX {
        return Err(Error::invalid(format!(
            "input dimension {d_in} out of range 1-{}",
            crate::pipeline::M_MAX
        )));
    }

    let mut params = MlpParams::glorot(
        d_in,
        HIDDEN_NEURONS,
        NUM_CLASSES,
        rng::derive_seed(config.seed, 0),
    );
    let mut adam = AdamState::zeros_like(&params);
    let (shift, scale) = input_stats(set, d_in);
    let mut w1_dot_shift = vec![0.0f64; params.hidden];
    let chunk_capacity = config.batch_size.div_ceil(GRAD_CHUNKS);
    let mut pool: Vec<ChunkWorker> = (0..GRAD_CHUNKS)
        .map(|_| ChunkWorker::new(&params, chunk_capacity))
        .collect();

    let mut indices: Vec<u32> = (0..set.len() as u32).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let lr = lr_at(config, epoch);
        let mut epoch_rng = rng::rng_from_seed(rng::derive_seed(config.seed, 1 + epoch as u64));
        rng::shuffle(&mut epoch_rng, &mut indices);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in indices.chunks(config.batch_size) {
            for h in 0..params.hidden {
                w1_dot_shift[h] = dot(&params.w1[h * d_in..(h + 1) * d_in], &shift);
            }
            let chunk_len = batch.len().div_ceil(GRAD_CHUNKS);
            let (params_ref, shift_ref, w1s_ref, scale_ref) =
                (&params, &shift, &w1_dot_shift, &scale);
            pool.par_iter_mut().enumerate().for_each(|(k, worker)| {
                worker.grads.zero();
                worker.loss_sum = 0.0;
                worker.correct = 0;
                let start = (k * chunk_len).min(batch.len());
                let end = ((k + 1) * chunk_len).min(batch.len());
                for (slot, &idx) in batch[start..end].iter().enumerate() {
                    let (y, m, label) = set.parts(idx as usize);
                    let eff = m.min(d_in);
                    let xrow = &mut worker.x[slot * d_in..slot * d_in + eff];
                    for ((dst, &src), &s) in xrow.iter_mut().zip(&y[..eff]).zip(&scale_ref[..eff])
                    {
                        *dst = src as f64 * s;
                    }
                    worker.eff[slot] = eff;
                    worker.labels[slot] = label as usize;
                }
                chunk_pass(params_ref, shift_ref, w1s_ref, worker, end - start);
            });
            // Deterministic merge in chunk order.
            let (head, tail) = pool.split_at_mut(1);
            for st in tail.iter() {
                head[0].grads.add_assign(&st.grads);
            }
            head[0].grads.scale(1.0 / batch.len() as f64);
            loss_sum += pool.iter().map(|st| st.loss_sum).sum::<f64>();
            correct += pool.iter().map(|st| st.correct).sum::<usize>();

            adam_step(&mut params, &pool[0].grads, &mut adam, lr, config);
        }

        let mean_loss = loss_sum / set.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Numeric(format!(
                "training diverged: mean loss {mean_loss} in epoch {epoch}"
            )));
        }
        let stats = EpochStats {
            epoch,
            mean_loss,
            accuracy: correct as f64 / set.len() as f64,
            lr,
        };
        on_epoch(&stats);
        history.push(stats);
    }

    // Absorb the standardization into the returned parameters so they act
    // on raw padded vectors:
    // tanh(W1 (x * scale - shift) + b1)
    //   = tanh((W1 * scale) x + (b1 - W1 shift)).
    for h in 0..params.hidden {
        params.b1[h] -= dot(&params.w1[h * d_in..(h + 1) * d_in], &shift);
        for (w, &s) in params.w1[h * d_in..(h + 1) * d_in].iter_mut().zip(&scale) {
            *w *= s;
        }
    }
    Ok((params, history))
}

/// Write a model file: magic "CSMM", u32 LE version, u32 LE D/H/C, then
/// w1, b1, w2, b2 row-major as f32 LE.
pub fn save_model(params: &MlpParams, path: &Path) -> Result<()> {
    fs::write(path, params.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Read a model file written by [`save_model`]. Values come back as the
/// stored f32s widened to f64, so save -> load -> save is byte-identical.
pub fn load_model(path: &Path) -> Result<MlpParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 20 {
        return Err(Error::format(path, bytes.len() as u64, "truncated header"));
    }
    if &bytes[0..4] != MODEL_MAGIC {
        return Err(Error::format(path, 0, "bad magic, expected CSMM"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::format(path, 4, format!("unsupported version {version}")));
    }
    let d_in = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let hidden = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let classes = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    let count = hidden * d_in + hidden + classes * hidden + classes;
    let expected = 20 + count * 4;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            bytes.len() as u64,
            format!("expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    let mut values = bytes[20..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
    let mut take = |n: usize| -> Vec<f64> { values.by_ref().take(n).collect() };
    Ok(MlpParams {
        d_in,
        hidden,
        classes,
        w1: take(hidden * d_in),
        b1: take(hidden),
        w2: take(classes * hidden),
        b2: take(classes),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{DatasetSplit, ImageRecord, SplitName};
    use crate::pipeline::{build_multirate, RateSchedule};
    use crate::sensing::build_pc;
    use crate::IMAGE_PIXELS;

    #[test]
    fn zero_params_give_uniform_probabilities() {
        let params = MlpParams::zeros(4, 3, 10);
        let out = forward(&params, &[0.3, -0.1, 0.5, 0.9]).unwrap();
        for &p in &out.probs {
            assert!((p - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let params = MlpParams::glorot(8, 5, 10, 42);
        let mut rng = rng::rng_from_seed(1);
        for _ in 0..50 {
            let x: Vec<f64> = (0..8)
                .map(|_| rng::uniform_symmetric(&mut rng, 3.0))
                .collect();
            let out = forward(&params, &x).unwrap();
            let sum: f64 = out.probs.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(out.probs.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn forward_matches_hand_computed_tiny_net() {
        // D = 2, H = 2, C = 2 with hand-set weights.
        let params = MlpParams {
            d_in: 2,
            hidden: 2,
            classes: 2,
            w1: vec![0.5, -0.25, 0.125, 1.0],
            b1: vec![0.1, -0.2],
            w2: vec![1.0, -1.0, 0.5, 0.25],
            b2: vec![0.0, 0.3],
        };
        let x = [0.8, -0.4];
        // Hand evaluation:
        // pre1_0 = 0.5*0.8 - 0.25*(-0.4) + 0.1 = 0.6; h0 = tanh(0.6)
        // pre1_1 = 0.125*0.8 + 1.0*(-0.4) - 0.2 = -0.5; h1 = tanh(-0.5)
        let h0 = 0.6f64.tanh();
        let h1 = (-0.5f64).tanh();
        let l0 = h0 - h1;
        let l1 = 0.5 * h0 + 0.25 * h1 + 0.3;
        let e0 = (l0 - l0.max(l1)).exp();
        let e1 = (l1 - l0.max(l1)).exp();
        let expected = [e0 / (e0 + e1), e1 / (e0 + e1)];

        let out = forward(&params, &x).unwrap();
        assert!((out.hidden[0] - h0).abs() < 1e-15);
        assert!((out.hidden[1] - h1).abs() < 1e-15);
        assert!((out.probs[0] - expected[0]).abs() < 1e-15);
        assert!((out.probs[1] - expected[1]).abs() < 1e-15);
    }

    #[test]
    fn loss_reference_values() {
        let uniform = vec![0.1; 10];
        for label in 0..10 {
            assert!((loss(&uniform, label).unwrap() - 10.0f64.ln()).abs() < 1e-12);
        }
        let mut sure = vec![0.0; 10];
        sure[4] = 1.0;
        assert_eq!(loss(&sure, 4).unwrap(), 0.0);
        let mut half = vec![0.5 / 9.0; 10];
        half[2] = 0.5;
        assert!((loss(&half, 2).unwrap() - 2.0f64.ln()).abs() < 1e-12);
        assert!(loss(&uniform, 10).is_err());
    }

    #[test]
    fn zero_params_output_bias_gradient_is_uniform_minus_onehot() {
        let params = MlpParams::zeros(3, 4, 10);
        let x = [0.2, 0.4, 0.6];
        let grads = backward(&params, &[(&x, 7)]).unwrap();
        for c in 0..10 {
            let expected = 0.1 - if c == 7 { 1.0 } else { 0.0 };
            assert!((grads.b2[c] - expected).abs() < 1e-15, "class {c}");
        }
    }

    #[test]
    fn batch_gradient_is_mean_of_example_gradients() {
        let params = MlpParams::glorot(5, 4, 10, 3);
        let x1: Vec<f64> = vec![0.1, -0.2, 0.3, 0.0, 0.5];
        let x2: Vec<f64> = vec![-0.4, 0.2, 0.9, -0.1, 0.0];
        let g1 = backward(&params, &[(&x1, 2)]).unwrap();
        let g2 = backward(&params, &[(&x2, 8)]).unwrap();
        let gb = backward(&params, &[(&x1, 2), (&x2, 8)]).unwrap();
        for i in 0..gb.w1.len() {
            let mean = (g1.w1[i] + g2.w1[i]) / 2.0;
            assert!((gb.w1[i] - mean).abs() < 1e-14);
        }
        for i in 0..gb.b2.len() {
            let mean = (g1.b2[i] + g2.b2[i]) / 2.0;
            assert!((gb.b2[i] - mean).abs() < 1e-14);
        }
    }

    fn numeric_gradient(
        params: &MlpParams,
        batch: &[(&[f64], usize)],
        block: usize,
        index: usize,
        step: f64,
    ) -> f64 {
        let mut plus = params.clone();
        let mut minus = params.clone();
        {
            let (p, m) = match block {
                0 => (&mut plus.w1, &mut minus.w1),
                1 => (&mut plus.b1, &mut minus.b1),
                2 => (&mut plus.w2, &mut minus.w2),
                _ => (&mut plus.b2, &mut minus.b2),
            };
            p[index] += step;
            m[index] -= step;
        }
        let eval = |pp: &MlpParams| -> f64 {
            batch
                .iter()
                .map(|&(x, label)| loss(&forward(pp, x).unwrap().probs, label).unwrap())
                .sum::<f64>()
                / batch.len() as f64
        };
        (eval(&plus) - eval(&minus)) / (2.0 * step)
    }

    #[test]
    fn analytic_gradients_match_central_differences() {
        let mut rng = rng::rng_from_seed(2024);
        let mut trials = 0;
        while trials < 100 {
            let d = 1 + rng::gen_index(&mut rng, 4);
            let h = 1 + rng::gen_index(&mut rng, 5);
            let c = 2 + rng::gen_index(&mut rng, 3);
            let params = MlpParams::glorot(d, h, c, rng::gen_index(&mut rng, 1 << 30) as u64);
            let x: Vec<f64> = (0..d)
                .map(|_| rng::uniform_symmetric(&mut rng, 1.5))
                .collect();
            let label = rng::gen_index(&mut rng, c);
            let batch = [(x.as_slice(), label)];
            let grads = backward(&params, &batch).unwrap();

            let blocks: [&[f64]; 4] = [&grads.w1, &grads.b1, &grads.w2, &grads.b2];
            for (bi, block) in blocks.iter().enumerate() {
                for (i, &analytic) in block.iter().enumerate() {
                    let numeric = numeric_gradient(&params, &batch, bi, i, 1e-5);
                    let denom = analytic.abs().max(numeric.abs());
                    if denom < 1e-6 {
                        assert!((analytic - numeric).abs() < 1e-6);
                    } else {
                        let rel = (analytic - numeric).abs() / denom;
                        assert!(
                            rel < 1e-4,
                            "trial {trials} block {bi} index {i}: analytic {analytic}, numeric {numeric}, rel {rel}"
                        );
                    }
                }
            }
            trials += 1;
        }
    }

    #[test]
    fn adam_first_step_magnitude_is_learning_rate() {
        let mut params = MlpParams::zeros(1, 1, 2);
        params.w1[0] = 1.0;
        let mut grads = Gradients::zeros_like(&params);
        grads.w1[0] = 0.5;
        let mut state = AdamState::zeros_like(&params);
        let config = TrainConfig::default();
        adam_step(&mut params, &grads, &mut state, 5e-5, &config);
        assert_eq!(state.t, 1);
        let update = params.w1[0] - 1.0;
        assert!(
            (update + 5e-5).abs() < 1e-9,
            "first-step update {update} should be about -5e-5"
        );
    }

    #[test]
    fn adam_zero_gradient_leaves_params_unchanged() {
        let mut params = MlpParams::glorot(3, 2, 10, 7);
        let before = params.clone();
        let grads = Gradients::zeros_like(&params);
        let mut state = AdamState::zeros_like(&params);
        // Seed the moments, then verify they decay under zero gradients.
        state.m.w1[0] = 1.0;
        state.v.w1[0] = 1.0;
        let config = TrainConfig::default();
        for _ in 0..5 {
            let m_before = state.m.w1[0];
            adam_step(&mut params, &grads, &mut state, 0.0, &config);
            assert!(state.m.w1[0].abs() < m_before.abs());
        }
        assert_eq!(params, before);

        // A zero gradient with zero moments moves nothing even at lr > 0.
        let mut params2 = before.clone();
        let mut state2 = AdamState::zeros_like(&params2);
        adam_step(&mut params2, &grads, &mut state2, 1e-3, &config);
        assert_eq!(params2, before);
    }

    #[test]
    fn lr_schedule_steps_down_every_period() {
        let config = TrainConfig::default();
        assert_eq!(lr_at(&config, 0), 5e-5);
        assert_eq!(lr_at(&config, 3), 5e-5);
        let e8 = lr_at(&config, 8);
        assert!((e8 - 4.05e-5).abs() / 4.05e-5 < 1e-12, "epoch 8 lr {e8}");
        for epoch in 1..100 {
            assert!(lr_at(&config, epoch) <= lr_at(&config, epoch - 1));
        }
    }

    /// A classifiable synthetic image: an 8x8 rectangle whose position is
    /// determined by the label (one anchor per class, plus small jitter)
    /// with random brightness. Classes differ by spatial pattern, the way
    /// digit classes do, so the class is a clean function of the
    /// measurements and a working optimizer must fit the sample perfectly.
    fn labeled_rectangle_image(rng: &mut rand_chacha::ChaCha8Rng) -> ImageRecord {
        let side = crate::IMAGE_SIDE;
        let label = rng::gen_index(rng, 10) as u8;
        let anchor_r = 2 + 9 * (label as usize / 4);
        let anchor_c = 2 + 7 * (label as usize % 4);
        let r0 = anchor_r + rng::gen_index(rng, 3);
        let c0 = anchor_c + rng::gen_index(rng, 3);
        let value = (0.3 + 0.7 * rng::uniform_unit(rng)) as f32;
        let mut pixels = vec![0.0f32; IMAGE_PIXELS];
        for r in r0..r0 + 8 {
            for c in c0..c0 + 8 {
                pixels[r * side + c] = value;
            }
        }
        ImageRecord { pixels, label }
    }

    fn synthetic_set(images: usize, seed: u64) -> MultiRateSet {
        let pc = build_pc(IMAGE_PIXELS).unwrap();
        let mut rng = rng::rng_from_seed(seed);
        let records: Vec<ImageRecord> = (0..images)
            .map(|_| labeled_rectangle_image(&mut rng))
            .collect();
        let split = DatasetSplit {
            name: SplitName::Train,
            records,
        };
        let schedule = RateSchedule::custom(vec![256]).unwrap();
        build_multirate(&split, &pc, &schedule, seed).unwrap()
    }

    #[test]
    fn overfits_100_examples_within_200_epochs() {
        let set = synthetic_set(100, 55);
        let config = TrainConfig {
            initial_lr: 1e-2,
            lr_drop_factor: 0.9,
            lr_drop_period_epochs: 20,
            epochs: 200,
            batch_size: 10,
            seed: 9,
            ..TrainConfig::default()
        };
        let (params, history) = train(&set, 256, &config).unwrap();
        assert!(history.last().unwrap().mean_loss < history[0].mean_loss);
        // Training accuracy of the final model over the whole set.
        let correct = (0..set.len())
            .filter(|&i| {
                let (_, _, label) = set.parts(i);
                let x: Vec<f64> = set.input_vec(i).iter().map(|&v| v as f64).collect();
                predict(&params, &x).unwrap() == label as usize
            })
            .count();
        assert_eq!(correct, set.len(), "final training accuracy {correct}/100");
    }

    #[test]
    fn chunked_training_step_matches_reference_backward() {
        // One full-batch epoch must equal init + backward on the centered
        // inputs + one Adam step + bias absorption, up to reduction-order
        // rounding.
        let set = synthetic_set(13, 99);
        let config = TrainConfig {
            epochs: 1,
            batch_size: 13,
            seed: 5,
            ..TrainConfig::default()
        };
        let (trained, _) = train(&set, 256, &config).unwrap();

        let mut expected =
            MlpParams::glorot(256, HIDDEN_NEURONS, NUM_CLASSES, rng::derive_seed(5, 0));
        // Reference z-score statistics over the padded training inputs.
        let mut mean = vec![0.0f64; 256];
        let mut mean_sq = vec![0.0f64; 256];
        for i in 0..set.len() {
            for (j, &v) in set.input_vec(i).iter().enumerate() {
                mean[j] += v as f64;
                mean_sq[j] += (v as f64) * (v as f64);
            }
        }
        let n = set.len() as f64;
        let mut scale = vec![0.0f64; 256];
        let mut shift = vec![0.0f64; 256];
        for j in 0..256 {
            mean[j] /= n;
            let sigma = ((mean_sq[j] / n - mean[j] * mean[j]).max(0.0))
                .sqrt()
                .max(1e-9);
            scale[j] = 1.0 / sigma;
            shift[j] = mean[j] / sigma;
        }
        let mut order: Vec<u32> = (0..13).collect();
        let mut erng = rng::rng_from_seed(rng::derive_seed(5, 1));
        rng::shuffle(&mut erng, &mut order);
        let inputs: Vec<Vec<f64>> = order
            .iter()
            .map(|&i| {
                set.input_vec(i as usize)
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| v as f64 * scale[j] - shift[j])
                    .collect()
            })
            .collect();
        let batch: Vec<(&[f64], usize)> = order
            .iter()
            .zip(&inputs)
            .map(|(&i, x)| (x.as_slice(), set.parts(i as usize).2 as usize))
            .collect();
        let grads = backward(&expected, &batch).unwrap();
        let mut state = AdamState::zeros_like(&expected);
        adam_step(&mut expected, &grads, &mut state, lr_at(&config, 0), &config);
        for h in 0..expected.hidden {
            let row = expected.w1[h * 256..(h + 1) * 256].to_vec();
            let correction: f64 = row.iter().zip(&shift).map(|(w, s)| w * s).sum();
            expected.b1[h] -= correction;
            for (w, &s) in expected.w1[h * 256..(h + 1) * 256].iter_mut().zip(&scale) {
                *w *= s;
            }
        }

        for (a, b) in trained.w1.iter().zip(&expected.w1) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        for (a, b) in trained.b1.iter().zip(&expected.b1) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        for (a, b) in trained.b2.iter().zip(&expected.b2) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn training_is_deterministic_for_equal_seeds() {
        let set = synthetic_set(40, 3);
        let config = TrainConfig {
            epochs: 3,
            batch_size: 16,
            initial_lr: 1e-3,
            seed: 21,
            ..TrainConfig::default()
        };
        let (p1, h1) = train(&set, 256, &config).unwrap();
        let (p2, h2) = train(&set, 256, &config).unwrap();
        assert_eq!(h1, h2);
        assert!(p1
            .w1
            .iter()
            .zip(&p2.w1)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(p1
            .b2
            .iter()
            .zip(&p2.b2)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn model_file_round_trip_and_size() {
        let dir = std::env::temp_dir().join(format!("csmm_test_{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.csmm");

        let params = MlpParams::glorot(17, 5, 10, 77);
        save_model(&params, &path).unwrap();
        let expected_size = 20 + (5 * 17 + 5 + 10 * 5 + 10) * 4;
        assert_eq!(fs::metadata(&path).unwrap().len(), expected_size as u64);

        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.d_in, 17);
        // Loaded values are exactly the stored f32s.
        for (orig, back) in params.w1.iter().zip(&loaded.w1) {
            assert_eq!(*orig as f32, *back as f32);
        }
        // Save -> load -> save is byte-identical.
        save_model(&loaded, &path).unwrap();
        assert_eq!(fs::read(&path).unwrap(), params.to_bytes());

        let mut bytes = params.to_bytes();
        bytes[0] = b'Z';
        fs::write(&path, &bytes).unwrap();
        assert!(load_model(&path).is_err());

        fs::remove_dir_all(&dir).unwrap();
    }
}
