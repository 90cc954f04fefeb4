//! Mini-batch training against the loss ensemble with per-epoch validation of
//! every loss term, and best-epoch model selection.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::eval::snr_db;
use crate::loss::{loss_ensemble, loss_terms, LossTerms, LossWeights};
use crate::network::{backward, forward, infer_segments, stack, update_running_stats, FeatureMap, Mode, UNetConfig, UNetParams, Weights};
use crate::segment::{Pair, Segment};
use crate::signalgen::substream;

/// Stream offset separating shuffle randomness from other uses of the seed.
const SHUFFLE_STREAM: u64 = 1 << 32;

/// Samples per inference call during validation.
pub const EVAL_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    /// Adam with β = (0.9, 0.999), ε = 1e-8.
    Adam,
    /// Plain gradient descent.
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    /// Lowest validation ensemble loss.
    EnsembleLoss,
    /// Highest validation SNR.
    Snr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weights: LossWeights,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub shuffle: bool,
    pub selection: Selection,
}

impl TrainConfig {
    /// 150 epochs, batch 128, learning rate 0.01, all four loss terms.
    pub fn paper(seed: u64) -> Self {
        Self {
            epochs: 150,
            batch_size: 128,
            learning_rate: 0.01,
            weights: LossWeights::ENS,
            seed,
            optimizer: Optimizer::Adam,
            shuffle: true,
            selection: Selection::EnsembleLoss,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidTrainConfig("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidTrainConfig(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        self.weights.normalized().map(|_| ())
    }
}

/// Adam moments and step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Weights,
    pub v: Weights,
}

impl AdamState {
    pub fn new(config: &UNetConfig) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: Weights::zeros(config), v: Weights::zeros(config) }
    }
}

/// One Adam step on a flat tensor, `step` counted from 1.
#[allow(clippy::too_many_arguments)]
pub fn adam_step_slice(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    let bc1 = 1.0 - libm::pow(beta1, step as f64);
    let bc2 = 1.0 - libm::pow(beta2, step as f64);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (libm::sqrt(v_hat) + eps);
    }
}

/// Applies one optimizer update to every trainable tensor.
pub fn apply_update(
    weights: &mut Weights,
    grads: &Weights,
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    if weights.n_params() != grads.n_params() {
        return Err(Error::ShapeMismatch(format!(
            "{} gradients for {} parameters",
            grads.n_params(),
            weights.n_params()
        )));
    }
    match state {
        OptimizerState::Sgd => {
            for (p, g) in weights.tensors_mut().into_iter().zip(grads.tensors()) {
                p.iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g);
            }
        }
        OptimizerState::Adam(s) => {
            if s.m.n_params() != weights.n_params() {
                return Err(Error::ShapeMismatch("optimizer state does not match the parameters".into()));
            }
            s.step += 1;
            let (b1, b2, eps, step) = (s.beta1, s.beta2, s.eps, s.step);
            let moments = s.m.tensors_mut().into_iter().zip(s.v.tensors_mut());
            for ((p, g), (m, v)) in weights.tensors_mut().into_iter().zip(grads.tensors()).zip(moments) {
                adam_step_slice(p, g, m, v, step, lr, b1, b2, eps);
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState {
    Adam(AdamState),
    Sgd,
}

impl OptimizerState {
    pub fn new(kind: Optimizer, config: &UNetConfig) -> Self {
        match kind {
            Optimizer::Adam => OptimizerState::Adam(AdamState::new(config)),
            Optimizer::Sgd => OptimizerState::Sgd,
        }
    }
}

/// Mean validation metrics.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ValMetrics {
    pub terms: LossTerms,
    /// Ensemble under the run's loss weights.
    pub ensemble: f64,
    pub snr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val: ValMetrics,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingReport {
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were returned; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
}

impl TrainingReport {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.best_epoch.map(|e| &self.history[e - 1])
    }
}

/// Wall-clock source; the core has no clock of its own.
pub trait Clock {
    fn seconds(&self) -> f64;
}

/// Reports zero elapsed time.
pub struct NoClock;

impl Clock for NoClock {
    fn seconds(&self) -> f64 {
        0.0
    }
}

/// Mean of all four loss terms, the ensemble under `weights`, and mean SNR, in inference mode.
pub fn validate(
    params: &UNetParams,
    config: &UNetConfig,
    pairs: &[Pair],
    weights: &LossWeights,
) -> Result<ValMetrics> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut sum = [0.0; 4];
    let mut snr = 0.0;
    for chunk in pairs.chunks(EVAL_CHUNK) {
        let inputs: Vec<&Segment> = chunk.iter().map(|p| &p.noisy).collect();
        let outputs = infer_segments(params, config, &inputs, EVAL_CHUNK)?;
        for (y, p) in outputs.iter().zip(chunk) {
            let terms = loss_terms(y, &p.clean)?.as_array();
            sum.iter_mut().zip(terms).for_each(|(s, t)| *s += t);
            snr += snr_db(y, &p.clean)?;
        }
    }
    let n = pairs.len() as f64;
    let mean = sum.map(|s| s / n);
    let terms = LossTerms { amp: mean[0], vel: mean[1], acc: mean[2], freq: mean[3] };
    Ok(ValMetrics { terms, ensemble: terms.ensemble(weights)?, snr: snr / n })
}

/// One optimizer step on a batch; returns the summed per-sample ensemble loss.
pub fn train_step(
    params: &mut UNetParams,
    config: &UNetConfig,
    batch: &[&Pair],
    weights: &LossWeights,
    state: &mut OptimizerState,
    lr: f64,
) -> Result<f64> {
    let noisy: Vec<&Segment> = batch.iter().map(|p| &p.noisy).collect();
    let input = stack(&noisy)?;
    let (y, cache) = forward(params, config, &input, Mode::Train)?;
    let cache = cache.expect("train mode records a cache");
    let scale = 1.0 / batch.len() as f64;
    let mut grad = Vec::with_capacity(y.data.len());
    let mut total = 0.0;
    let fs = batch[0].clean.fs();
    for (b, pair) in batch.iter().enumerate() {
        let out = Segment::new(y.channels, y.len, fs, y.sample(b).to_vec())?;
        let loss = loss_ensemble(&out, &pair.clean, weights)?;
        total += loss.value;
        grad.extend(loss.grad.iter().map(|g| g * scale));
    }
    let grad = FeatureMap::new(y.batch, y.channels, y.len, grad)?;
    let grads = backward(params, config, &cache, &grad)?;
    update_running_stats(params, &cache, config.bn_momentum);
    apply_update(&mut params.weights, &grads, state, lr)?;
    Ok(total)
}

/// Epoch order of the training pairs.
pub fn epoch_order(n: usize, seed: u64, epoch: usize, shuffle: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        let mut rng = substream(seed, SHUFFLE_STREAM + epoch as u64);
        order.shuffle(&mut rng);
    }
    order
}

/// Trains from `init` and returns the parameters of the best validation epoch.
pub fn train(
    init: UNetParams,
    config: &UNetConfig,
    train_pairs: &[Pair],
    val_pairs: &[Pair],
    tc: &TrainConfig,
) -> Result<(UNetParams, TrainingReport)> {
    train_observed(init, config, train_pairs, val_pairs, tc, &NoClock, &mut |_| {})
}

/// [`train`] with a clock for per-epoch timing and a callback after every epoch.
pub fn train_observed(
    init: UNetParams,
    config: &UNetConfig,
    train_pairs: &[Pair],
    val_pairs: &[Pair],
    tc: &TrainConfig,
    clock: &dyn Clock,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(UNetParams, TrainingReport)> {
    tc.validate()?;
    config.validate()?;
    if tc.epochs == 0 {
        return Ok((init, TrainingReport::default()));
    }
    if train_pairs.is_empty() || val_pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for p in train_pairs.iter().chain(val_pairs) {
        config.check_input(p.noisy.channels(), p.noisy.len())?;
        p.noisy.same_shape(&p.clean)?;
    }
    let mut params = init;
    let mut state = OptimizerState::new(tc.optimizer, config);
    let mut report = TrainingReport::default();
    let mut best: Option<(f64, UNetParams)> = None;
    for epoch in 1..=tc.epochs {
        let start = clock.seconds();
        let order = epoch_order(train_pairs.len(), tc.seed, epoch, tc.shuffle);
        let mut total = 0.0;
        for idx in order.chunks(tc.batch_size) {
            let batch: Vec<&Pair> = idx.iter().map(|&i| &train_pairs[i]).collect();
            total += train_step(&mut params, config, &batch, &tc.weights, &mut state, tc.learning_rate)?;
        }
        let val = validate(&params, config, val_pairs, &tc.weights)?;
        let record = EpochRecord {
            epoch,
            train_loss: total / train_pairs.len() as f64,
            val,
            seconds: clock.seconds() - start,
        };
        let score = match tc.selection {
            Selection::EnsembleLoss => val.ensemble,
            Selection::Snr => -val.snr,
        };
        if best.as_ref().is_none_or(|(s, _)| score < *s) {
            best = Some((score, params.clone()));
            report.best_epoch = Some(epoch);
        }
        on_epoch(&record);
        report.history.push(record);
    }
    let (_, best_params) = best.expect("at least one epoch ran");
    Ok((best_params, report))
}

/// Trailing moving average with window `w` (shorter at the start).
pub fn moving_average(values: &[f64], w: usize) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for i in 0..values.len() {
        let lo = (i + 1).saturating_sub(w);
        out[i] = values[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64;
    }
    out
}
