//! Reconstruction metrics and the five-way loss ablation.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::loss::{loss_amp, per_bin_abs_error, LossWeights};
use crate::network::{infer_segments, init_params, UNetConfig, UNetParams};
use crate::segment::{Pair, Segment};
use crate::spectral::band_bins;
use crate::training::{train_observed, Clock, EpochRecord, TrainConfig, TrainingReport, EVAL_CHUNK};

/// SNR reported for a channel reconstructed exactly.
pub const SNR_CAP_DB: f64 = 100.0;

/// Channel mean of `10·log10(Σx² / Σ(y−x)²)`, each channel clamped to ±100 dB.
pub fn snr_db(y: &Segment, x: &Segment) -> Result<f64> {
    y.same_shape(x)?;
    let mut total = 0.0;
    for (yr, xr) in y.rows().zip(x.rows()) {
        let signal: f64 = xr.iter().map(|v| v * v).sum();
        let residual: f64 = yr.iter().zip(xr).map(|(a, b)| (a - b) * (a - b)).sum();
        total += if residual == 0.0 {
            SNR_CAP_DB
        } else if signal == 0.0 {
            -SNR_CAP_DB
        } else {
            (10.0 * libm::log10(signal / residual)).clamp(-SNR_CAP_DB, SNR_CAP_DB)
        };
    }
    Ok(total / y.channels() as f64)
}

/// Mean squared error; identical to the amplitude loss value.
pub fn mse(y: &Segment, x: &Segment) -> Result<f64> {
    Ok(loss_amp(y, x)?.value)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSummary {
    pub mse_mean: f64,
    pub mse_std: f64,
    pub snr_mean: f64,
    pub snr_std: f64,
    pub n: usize,
}

impl MetricSummary {
    /// Population mean/std over per-sample `(mse, snr)` values.
    pub fn from_samples(samples: &[(f64, f64)]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = samples.len() as f64;
        let stats = |f: fn(&(f64, f64)) -> f64| {
            let mean = samples.iter().map(f).sum::<f64>() / n;
            let var = samples.iter().map(|s| (f(s) - mean) * (f(s) - mean)).sum::<f64>() / n;
            (mean, libm::sqrt(var))
        };
        let (mse_mean, mse_std) = stats(|s| s.0);
        let (snr_mean, snr_std) = stats(|s| s.1);
        Ok(Self { mse_mean, mse_std, snr_mean, snr_std, n: samples.len() })
    }
}

/// Per-sample `(mse, snr)` of reconstructions against targets.
pub fn score_reconstructions(outputs: &[Segment], pairs: &[Pair]) -> Result<Vec<(f64, f64)>> {
    outputs
        .iter()
        .zip(pairs)
        .map(|(y, p)| Ok((mse(y, &p.clean)?, snr_db(y, &p.clean)?)))
        .collect()
}

fn reconstruct(params: &UNetParams, config: &UNetConfig, pairs: &[Pair]) -> Result<Vec<Segment>> {
    let inputs: Vec<&Segment> = pairs.iter().map(|p| &p.noisy).collect();
    infer_segments(params, config, &inputs, EVAL_CHUNK)
}

/// Runs the model on every noisy input and summarizes MSE/SNR against the targets.
pub fn summarize(params: &UNetParams, config: &UNetConfig, pairs: &[Pair]) -> Result<MetricSummary> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let outputs = reconstruct(params, config, pairs)?;
    MetricSummary::from_samples(&score_reconstructions(&outputs, pairs)?)
}

/// Mean over samples of the per-bin absolute spectral error of reconstructions.
pub fn bin_error_profile_of(outputs: &[Segment], pairs: &[Pair]) -> Result<Vec<f64>> {
    let first = pairs.first().ok_or(Error::EmptyDataset)?;
    let l = band_bins(first.clean.fs(), first.clean.len())?.count();
    let mut acc = vec![0.0; l];
    for (y, p) in outputs.iter().zip(pairs) {
        for (a, e) in acc.iter_mut().zip(per_bin_abs_error(y, &p.clean)?) {
            *a += e;
        }
    }
    let n = pairs.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

pub fn bin_error_profile(params: &UNetParams, config: &UNetConfig, pairs: &[Pair]) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    bin_error_profile_of(&reconstruct(params, config, pairs)?, pairs)
}

/// One trained configuration of the ablation.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub name: &'static str,
    pub weights: LossWeights,
    pub train: MetricSummary,
    pub val: MetricSummary,
    pub test: MetricSummary,
    pub report: TrainingReport,
    pub params: UNetParams,
}

impl AblationRow {
    pub fn best_epoch(&self) -> Option<usize> {
        self.report.best_epoch
    }
}

/// Train/validation/test pair sets.
#[derive(Debug, Clone, Copy)]
pub struct Splits<'a> {
    pub train: &'a [Pair],
    pub val: &'a [Pair],
    pub test: &'a [Pair],
}

/// Trains one ablation configuration from `init` and scores each split at the selected epoch.
#[allow(clippy::too_many_arguments)]
pub fn ablation_row(
    splits: Splits<'_>,
    config: &UNetConfig,
    tc: &TrainConfig,
    init: &UNetParams,
    name: &'static str,
    weights: LossWeights,
    clock: &dyn Clock,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<AblationRow> {
    let run_tc = TrainConfig { weights, ..tc.clone() };
    let (params, report) = train_observed(init.clone(), config, splits.train, splits.val, &run_tc, clock, on_epoch)?;
    Ok(AblationRow {
        name,
        weights,
        train: summarize(&params, config, splits.train)?,
        val: summarize(&params, config, splits.val)?,
        test: summarize(&params, config, splits.test)?,
        report,
        params,
    })
}

/// Trains one model per ablation weight setting from the same initialization
/// (`init_params(config, tc.seed)`), in [`LossWeights::ABLATION`] order.
pub fn ablation_run(
    splits: Splits<'_>,
    config: &UNetConfig,
    tc: &TrainConfig,
    clock: &dyn Clock,
    on_epoch: &mut dyn FnMut(&'static str, &EpochRecord),
) -> Result<Vec<AblationRow>> {
    let init = init_params(config, tc.seed)?;
    LossWeights::ABLATION
        .iter()
        .map(|&(name, weights)| {
            ablation_row(splits, config, tc, &init, name, weights, clock, &mut |r| on_epoch(name, r))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signalgen::{substream, synth_sinusoid_dataset, SynthSpec};
    use crate::training::NoClock;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn random(c: usize, t: usize, seed: u64) -> Segment {
        let mut rng = substream(seed, 0);
        Segment::new(c, t, 64.0, (0..c * t).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn snr_closed_forms() {
        let x = random(3, 64, 1);
        assert_eq!(snr_db(&x, &x).unwrap(), SNR_CAP_DB);
        // residual energy exactly 1/100 of the signal per channel: y = 1.1·x
        let y = x.with_data(x.data().iter().map(|v| v * 1.1).collect()).unwrap();
        assert_abs_diff_eq!(snr_db(&y, &x).unwrap(), 20.0, epsilon = 1e-9);
        let zero = Segment::zeros(1, 8, 1.0).unwrap();
        let one = zero.with_data(vec![1.0; 8]).unwrap();
        assert_eq!(snr_db(&one, &zero).unwrap(), -SNR_CAP_DB);
    }

    #[test]
    fn mse_values() {
        let x = random(2, 16, 2);
        assert_eq!(mse(&x, &x).unwrap(), 0.0);
        let y = x.with_data(x.data().iter().map(|v| v + 1.0).collect()).unwrap();
        assert_abs_diff_eq!(mse(&y, &x).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn summary_statistics() {
        let s = MetricSummary::from_samples(&[(1.0, 10.0)]).unwrap();
        assert_eq!((s.mse_std, s.snr_std, s.n), (0.0, 0.0, 1));
        let s = MetricSummary::from_samples(&[(1.0, 10.0), (3.0, 20.0)]).unwrap();
        assert_eq!((s.mse_mean, s.mse_std, s.snr_mean, s.snr_std), (2.0, 1.0, 15.0, 5.0));
        assert_eq!(MetricSummary::from_samples(&[]), Err(Error::EmptyDataset));
    }

    #[test]
    fn zero_epoch_ablation_rows_agree() {
        let spec = SynthSpec { n_samples: 6, channels: 2, length: 64, fs: 128.0, ..SynthSpec::paper_scale(4) };
        let pairs: Vec<Pair> = synth_sinusoid_dataset(&spec).unwrap().into_iter().map(Pair::identity).collect();
        let config = UNetConfig { base_filters: 2, depth: 2, ..UNetConfig::new(2) };
        let tc = TrainConfig { epochs: 0, ..TrainConfig::paper(9) };
        let splits = Splits { train: &pairs[..4], val: &pairs[4..5], test: &pairs[5..] };
        let rows = ablation_run(splits, &config, &tc, &NoClock, &mut |_, _| {}).unwrap();
        assert_eq!(rows.len(), 5);
        assert_eq!(rows.iter().map(|r| r.name).collect::<Vec<_>>(), ["L_amp", "L_vel", "L_acc", "L_freq", "L_ens"]);
        for r in &rows {
            assert_eq!(r.test, rows[0].test);
            assert_eq!(r.best_epoch(), None);
        }
    }
}
