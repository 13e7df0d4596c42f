//! Gradient strategies and the training loop.
//!
//! Three ways to obtain one bag's gradient step:
//!
//! - [`full_bag_grad`]: the conventional path. All instances are encoded on
//!   a single recording tape, so the retained activations grow with the bag.
//! - [`accum_grad`]: the memory-bounded path. Features for the whole bag are
//!   first computed without a tape and cached. The pooler gradient comes
//!   from one small tape over the cached features. The encoder gradient is
//!   accumulated chunk by chunk: each chunk is re-encoded on a fresh tape,
//!   spliced into the cache at its original rows (all other rows entering
//!   as constants), and backpropagated through the frozen pooler. With
//!   batch normalization disabled the accumulated gradient equals the
//!   full-bag gradient up to floating-point reassociation; the per-chunk
//!   tape footprint depends on the chunk size, not the bag size.
//! - [`sample_train_grad`]: a plain uniform-subsampling baseline that runs
//!   the full-bag path on a random sub-bag.

use std::time::{Duration, Instant};

use crate::data::{Bag, Dataset};
use crate::error::{Error, Result};
use crate::model::{
    self, attention_pool_taped, encode, encode_taped, forward_bag, Mode, ModelConfig, ParamSet,
};
use crate::rng::{substream, Rng};
use crate::tape::{GradMap, LeafKind, NodeId, Scope, Tape};
use crate::tensor::Tensor;

/// Gradient strategy selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    FullBag,
    Accumulate,
    SampleTrain,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::FullBag => "full_bag",
            Strategy::Accumulate => "accumulate",
            Strategy::SampleTrain => "sample_train",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full_bag" => Ok(Strategy::FullBag),
            "accumulate" => Ok(Strategy::Accumulate),
            "sample_train" => Ok(Strategy::SampleTrain),
            other => Err(Error::Config(format!(
                "unknown strategy '{other}' (expected full_bag, accumulate, or sample_train)"
            ))),
        }
    }
}

/// Hyperparameters for one training run.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Percent of the bag re-encoded together per accumulation chunk.
    pub alpha_percent: f64,
    /// Moving-average window (epochs) for model selection.
    pub selection_window: usize,
    pub seed: u64,
    pub bn_enabled: bool,
    pub strategy: Strategy,
    /// Subsample percent for the sampling baseline.
    pub sample_percent: f64,
    pub hidden: Vec<usize>,
    pub attention_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-5,
            weight_decay: 1e-3,
            epochs: 300,
            alpha_percent: 100.0,
            selection_window: 15,
            seed: 0,
            bn_enabled: false,
            strategy: Strategy::FullBag,
            sample_percent: 100.0,
            hidden: vec![64, 32],
            attention_dim: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_percent > 0.0 && self.alpha_percent <= 100.0) {
            return Err(Error::Config("alpha_percent must be in (0, 100]".into()));
        }
        if !(self.sample_percent > 0.0 && self.sample_percent <= 100.0) {
            return Err(Error::Config("sample_percent must be in (0, 100]".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.selection_window == 0 {
            return Err(Error::Config("selection_window must be at least 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.hidden.is_empty() {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        Ok(())
    }

    pub fn model_config(&self, input_dim: usize) -> ModelConfig {
        ModelConfig {
            input_dim,
            hidden: self.hidden.clone(),
            attention_dim: self.attention_dim,
            bn_enabled: self.bn_enabled,
        }
    }
}

/// `alpha`% of a bag, rounded, clamped to [1, n].
pub fn chunk_size_for(bag_size: usize, alpha_percent: f64) -> usize {
    let raw = (bag_size as f64 * alpha_percent / 100.0).round() as usize;
    raw.clamp(1, bag_size)
}

/// Gradients mirroring the trainable tensors of a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct GradSet {
    /// Encoder gradients, canonical order.
    pub theta: Vec<Tensor>,
    /// Pooler gradients: attn_v, attn_w, head_w, head_b.
    pub phi: Vec<Tensor>,
    /// Number of chunk contributions accumulated into `theta`.
    pub accum_count: usize,
}

impl GradSet {
    pub fn zeros_like(params: &ParamSet) -> Self {
        let enc = params.encoder_tensor_count();
        let tensors = params.tensors();
        GradSet {
            theta: tensors[..enc]
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect(),
            phi: tensors[enc..]
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect(),
            accum_count: 0,
        }
    }

    /// All gradient tensors, aligned with [`ParamSet::tensors`].
    pub fn all(&self) -> impl Iterator<Item = &Tensor> {
        self.theta.iter().chain(self.phi.iter())
    }
}

fn accumulate(dst: &mut [Tensor], map: &GradMap, leaves: &[NodeId]) {
    for (slot, leaf) in dst.iter_mut().zip(leaves) {
        let g = &map[leaf];
        for (a, &b) in slot.data_mut().iter_mut().zip(g.data()) {
            *a += b;
        }
    }
}

/// Instrumentation for one gradient step.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub loss: f64,
    /// Instances pushed through the encoder.
    pub encoder_forwards: usize,
    /// Peak simultaneously retained scalars (live tape plus, for the
    /// accumulation strategy, the persistent feature cache).
    pub peak_scalars: usize,
    /// Encoder-attributable part of the peak.
    pub encoder_peak_scalars: usize,
    pub wall: Duration,
}

// ── Full-bag gradient ───────────────────────────────────────────────

/// Conventional gradient: one tape over the entire bag.
pub fn full_bag_grad(params: &mut ParamSet, bag: &Bag) -> Result<(GradSet, StepReport)> {
    if bag.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let start = Instant::now();
    let mut tape = Tape::new();
    let (z, theta_leaves) = encode_taped(
        params,
        &bag.instances,
        Mode::Train,
        &mut tape,
        LeafKind::Parameter,
    )?;
    let pool = attention_pool_taped(&params.pooler, z, &mut tape, LeafKind::Parameter)?;
    let loss = tape.bce(pool.score, bag.label)?;
    let map = tape.backward(loss)?;

    let mut grads = GradSet::zeros_like(params);
    accumulate(&mut grads.theta, &map, &theta_leaves);
    accumulate(&mut grads.phi, &map, &pool.leaves);
    grads.accum_count = 1;

    let report = StepReport {
        loss: tape.value(loss).item(),
        encoder_forwards: bag.len(),
        peak_scalars: tape.peak_retained_scalars(),
        encoder_peak_scalars: tape.peak_retained_in(Scope::Encoder),
        wall: start.elapsed(),
    };
    Ok((grads, report))
}

// ── Accumulated gradient ────────────────────────────────────────────

/// Chunked gradient accumulation. See the module docs for the three
/// phases. Reported loss is the phase-B loss over the cached features.
pub fn accum_grad(
    params: &mut ParamSet,
    bag: &Bag,
    chunk_size: usize,
) -> Result<(GradSet, StepReport)> {
    let (grads, report, _) = accum_grad_detail(params, bag, chunk_size, None)?;
    Ok((grads, report))
}

/// As [`accum_grad`], also returning the per-chunk losses. `chunk_order`
/// permutes chunk processing for the reassociation tests; `None` processes
/// chunks in bag order.
pub(crate) fn accum_grad_detail(
    params: &mut ParamSet,
    bag: &Bag,
    chunk_size: usize,
    chunk_order: Option<&[usize]>,
) -> Result<(GradSet, StepReport, Vec<f64>)> {
    if bag.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = bag.len();
    if chunk_size < 1 || chunk_size > n {
        return Err(Error::BadChunkSize {
            chunk_size,
            bag_size: n,
        });
    }
    let start = Instant::now();
    let mut grads = GradSet::zeros_like(params);

    // Phase A: tape-free pass over every instance builds the feature cache.
    let z_cache = encode(params, &bag.instances, Mode::Infer)?;
    let cache_scalars = z_cache.numel();

    // Phase B: pooler gradient from one small tape over the cached features.
    let mut peak = 0usize;
    let mut encoder_peak = 0usize;
    let loss_value;
    {
        let mut tape = Tape::new();
        let z = tape.constant(z_cache.clone());
        let pool = attention_pool_taped(&params.pooler, z, &mut tape, LeafKind::Parameter)?;
        let loss = tape.bce(pool.score, bag.label)?;
        let map = tape.backward(loss)?;
        accumulate(&mut grads.phi, &map, &pool.leaves);
        loss_value = tape.value(loss).item();
        peak = peak.max(tape.peak_retained_scalars());
        encoder_peak = encoder_peak.max(tape.peak_retained_in(Scope::Encoder));
    }

    // Phase C: re-encode one chunk at a time with a live tape, splice it
    // into the cache, and accumulate the encoder gradient.
    let chunk_starts: Vec<usize> = (0..n).step_by(chunk_size).collect();
    let order: Vec<usize> = match chunk_order {
        Some(o) => o.to_vec(),
        None => (0..chunk_starts.len()).collect(),
    };
    let mut chunk_losses = Vec::with_capacity(order.len());
    for &ci in &order {
        let lo = chunk_starts[ci];
        let hi = (lo + chunk_size).min(n);
        let chunk_x = bag.instances.slice_rows(lo, hi);

        let mut tape = Tape::new();
        let (z_chunk, theta_leaves) = encode_taped(
            params,
            &chunk_x,
            Mode::Train,
            &mut tape,
            LeafKind::Parameter,
        )?;
        let mut parts = Vec::with_capacity(3);
        if lo > 0 {
            parts.push(tape.constant(z_cache.slice_rows(0, lo)));
        }
        parts.push(z_chunk);
        if hi < n {
            parts.push(tape.constant(z_cache.slice_rows(hi, n)));
        }
        let z_full = tape.concat_rows(&parts)?;
        let pool = attention_pool_taped(&params.pooler, z_full, &mut tape, LeafKind::Constant)?;
        let loss = tape.bce(pool.score, bag.label)?;
        let map = tape.backward(loss)?;
        accumulate(&mut grads.theta, &map, &theta_leaves);
        grads.accum_count += 1;
        chunk_losses.push(tape.value(loss).item());
        peak = peak.max(tape.peak_retained_scalars());
        encoder_peak = encoder_peak.max(tape.peak_retained_in(Scope::Encoder));
    }

    let report = StepReport {
        loss: loss_value,
        encoder_forwards: 2 * n,
        peak_scalars: cache_scalars + peak,
        encoder_peak_scalars: encoder_peak,
        wall: start.elapsed(),
    };
    Ok((grads, report, chunk_losses))
}

// ── Sampling baseline ───────────────────────────────────────────────

/// Uniform subsampling baseline: draws `ceil(n * percent / 100)` distinct
/// instances (keeping bag order) and runs the full-bag path on the
/// sub-bag under the original bag label.
pub fn sample_train_grad(
    params: &mut ParamSet,
    bag: &Bag,
    sample_percent: f64,
    rng: &mut Rng,
) -> Result<(GradSet, StepReport)> {
    if !(sample_percent > 0.0 && sample_percent <= 100.0) {
        return Err(Error::Config("sample_percent must be in (0, 100]".into()));
    }
    let n = bag.len();
    let m = ((n as f64 * sample_percent / 100.0).ceil() as usize).clamp(1, n);
    if m == n {
        return full_bag_grad(params, bag);
    }
    let mut picked = rand::seq::index::sample(rng, n, m).into_vec();
    picked.sort_unstable();

    let dim = bag.instances.cols();
    let mut data = Vec::with_capacity(m * dim);
    let mut labels = Vec::with_capacity(m);
    for &i in &picked {
        data.extend_from_slice(bag.instances.row(i));
        labels.push(bag.instance_labels[i]);
    }
    let sub = Bag {
        instances: Tensor::new(vec![m, dim], data)?,
        instance_labels: labels,
        label: bag.label,
        split: bag.split,
    };
    full_bag_grad(params, &sub)
}

// ── Optimizer ───────────────────────────────────────────────────────

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// First/second moment estimates, aligned with [`ParamSet::tensors`].
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Tensor> = params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update with decoupled weight decay (`p <- p - lr*wd*p` before
/// the Adam delta; beta1 0.9, beta2 0.999, eps 1e-8, bias correction).
pub fn adam_step(
    params: &mut ParamSet,
    grads: &GradSet,
    config: &TrainConfig,
    state: &mut AdamState,
) -> Result<()> {
    let names = params.tensor_names();
    for (g, name) in grads.all().zip(&names) {
        if g.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { name: name.clone() });
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - ADAM_BETA1.powi(t);
    let bias2 = 1.0 - ADAM_BETA2.powi(t);
    let lr = config.learning_rate;
    let wd = config.weight_decay;

    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.all())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut())
            .zip(v.data_mut().iter_mut())
        {
            *pv -= lr * wd * *pv;
            *mv = ADAM_BETA1 * *mv + (1.0 - ADAM_BETA1) * gv;
            *vv = ADAM_BETA2 * *vv + (1.0 - ADAM_BETA2) * gv * gv;
            let m_hat = *mv / bias1;
            let v_hat = *vv / bias2;
            *pv -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
        }
    }
    Ok(())
}

// ── Training loop ───────────────────────────────────────────────────

/// One epoch's history row.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Misclassification rate on the validation split at threshold 0.5.
    pub val_error: f64,
    pub wall_ms: u128,
    pub fwd_count: usize,
    pub peak_scalars: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: ParamSet,
    /// 1-based epoch the selected checkpoint came from.
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub steps: Vec<StepReport>,
}

/// Trains per the configured strategy: one gradient step per bag, bags in
/// seeded shuffled order, validation each epoch. The returned model is
/// selected by the lowest-mean-validation-error window (ties going to the
/// earliest window), then the lowest validation error inside that window
/// (ties to the earliest epoch).
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.train.is_empty() || dataset.val.is_empty() {
        return Err(Error::Config(
            "train and validation splits must be non-empty".into(),
        ));
    }

    let model_config = config.model_config(dataset.input_dim);
    let mut params = ParamSet::init(&model_config, &mut substream(config.seed, "init", 0));
    let mut adam = AdamState::new(&params);

    let mut history = Vec::with_capacity(config.epochs);
    let mut steps = Vec::new();
    let mut checkpoints: Vec<ParamSet> = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let epoch_start = Instant::now();
        let mut order: Vec<usize> = (0..dataset.train.len()).collect();
        {
            use rand::seq::SliceRandom;
            order.shuffle(&mut substream(config.seed, "shuffle", epoch as u64));
        }
        let mut sample_rng = substream(config.seed, "sampling", epoch as u64);

        let mut loss_sum = 0.0;
        let mut fwd_count = 0;
        let mut peak = 0;
        for &bi in &order {
            let bag = &dataset.train[bi];
            let (grads, report) = match config.strategy {
                Strategy::FullBag => full_bag_grad(&mut params, bag)?,
                Strategy::Accumulate => {
                    let chunk = chunk_size_for(bag.len(), config.alpha_percent);
                    accum_grad(&mut params, bag, chunk)?
                }
                Strategy::SampleTrain => {
                    sample_train_grad(&mut params, bag, config.sample_percent, &mut sample_rng)?
                }
            };
            adam_step(&mut params, &grads, config, &mut adam)?;
            loss_sum += report.loss;
            fwd_count += report.encoder_forwards;
            peak = peak.max(report.peak_scalars);
            steps.push(report);
        }

        let (val_loss, val_error) = validate(&params, &dataset.val)?;
        history.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / dataset.train.len() as f64,
            val_loss,
            val_error,
            wall_ms: epoch_start.elapsed().as_millis(),
            fwd_count,
            peak_scalars: peak,
        });
        checkpoints.push(params.clone());
    }

    let best_epoch = select_best_epoch(&history, config.selection_window);
    Ok(TrainOutcome {
        best: checkpoints[best_epoch].clone(),
        best_epoch: best_epoch + 1,
        history,
        steps,
    })
}

fn validate(params: &ParamSet, bags: &[Bag]) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut wrong = 0usize;
    for bag in bags {
        let fwd = forward_bag(params, &bag.instances)?;
        loss += model::bce_loss(fwd.bag_score, bag.label);
        let predicted = (fwd.bag_score >= 0.5) as u8;
        if predicted != bag.label {
            wrong += 1;
        }
    }
    Ok((loss / bags.len() as f64, wrong as f64 / bags.len() as f64))
}

/// Index (0-based) of the selected epoch: lowest moving-average validation
/// error window, then lowest error within it. Exact error ties (common on
/// small validation splits, where the error sits at 0 for long stretches)
/// fall back to validation loss, then to the earliest epoch, keeping the
/// choice deterministic without favoring an underfit early checkpoint.
/// The window shrinks to the run length when there are fewer epochs than
/// the configured window.
pub fn select_best_epoch(history: &[EpochRecord], window: usize) -> usize {
    let w = window.min(history.len()).max(1);
    let mut best_start = 0;
    let mut best_key = (f64::INFINITY, f64::INFINITY);
    for s in 0..=history.len() - w {
        let mean_err: f64 = history[s..s + w].iter().map(|r| r.val_error).sum::<f64>() / w as f64;
        let mean_loss: f64 = history[s..s + w].iter().map(|r| r.val_loss).sum::<f64>() / w as f64;
        if (mean_err, mean_loss) < best_key {
            best_key = (mean_err, mean_loss);
            best_start = s;
        }
    }
    let mut best_epoch = best_start;
    let mut epoch_key = (f64::INFINITY, f64::INFINITY);
    for (i, r) in history[best_start..best_start + w].iter().enumerate() {
        if (r.val_error, r.val_loss) < epoch_key {
            epoch_key = (r.val_error, r.val_loss);
            best_epoch = best_start + i;
        }
    }
    best_epoch
}

/// History rows as the CSV emitted next to checkpoints.
pub fn history_to_csv(history: &[EpochRecord]) -> String {
    let mut out =
        String::from("epoch,train_loss,val_loss,val_error,wall_ms,fwd_count,peak_scalars\n");
    for r in history {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.epoch, r.train_loss, r.val_loss, r.val_error, r.wall_ms, r.fwd_count, r.peak_scalars
        ));
    }
    out
}
