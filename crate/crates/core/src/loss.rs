//! Reconstruction losses over amplitude, velocity, acceleration and spectrum,
//! and their weighted ensemble. Each returns its value and the gradient with
//! respect to the reconstruction `Y`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::segment::Segment;
use crate::spectral::{psd_scale, psd_zscored, segment_psd, FftPlan};

/// Ensemble coefficients `[amp, vel, acc, freq]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights([f64; 4]);

impl LossWeights {
    pub const AMP: LossWeights = LossWeights([1.0, 0.0, 0.0, 0.0]);
    pub const VEL: LossWeights = LossWeights([0.0, 1.0, 0.0, 0.0]);
    pub const ACC: LossWeights = LossWeights([0.0, 0.0, 1.0, 0.0]);
    pub const FREQ: LossWeights = LossWeights([0.0, 0.0, 0.0, 1.0]);
    pub const ENS: LossWeights = LossWeights([1.0, 1.0, 1.0, 1.0]);

    /// The five ablation settings, in table order.
    pub const ABLATION: [(&'static str, LossWeights); 5] = [
        ("L_amp", Self::AMP),
        ("L_vel", Self::VEL),
        ("L_acc", Self::ACC),
        ("L_freq", Self::FREQ),
        ("L_ens", Self::ENS),
    ];

    pub fn new(alphas: [f64; 4]) -> Result<Self> {
        if alphas.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::InvalidTrainConfig(format!(
                "loss weights {alphas:?} must be finite and nonnegative"
            )));
        }
        if alphas.iter().sum::<f64>() <= 0.0 {
            return Err(Error::ZeroWeights);
        }
        Ok(Self(alphas))
    }

    pub fn alphas(&self) -> [f64; 4] {
        self.0
    }

    /// Weights divided by their sum.
    pub fn normalized(&self) -> Result<[f64; 4]> {
        let sum: f64 = self.0.iter().sum();
        if sum <= 0.0 {
            return Err(Error::ZeroWeights);
        }
        Ok(self.0.map(|a| a / sum))
    }
}

/// Loss value and gradient with respect to `Y`, laid out like the segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Loss {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// All four terms for one `(Y, X)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub amp: f64,
    pub vel: f64,
    pub acc: f64,
    pub freq: f64,
}

impl LossTerms {
    pub fn as_array(&self) -> [f64; 4] {
        [self.amp, self.vel, self.acc, self.freq]
    }

    pub fn ensemble(&self, w: &LossWeights) -> Result<f64> {
        let w = w.normalized()?;
        Ok(combine(&w, &self.as_array()))
    }
}

fn combine(w: &[f64; 4], terms: &[f64; 4]) -> f64 {
    w.iter().zip(terms).fold(0.0, |acc, (w, v)| acc + w * v)
}

fn check_len(y: &Segment, x: &Segment, min: usize) -> Result<()> {
    y.same_shape(x)?;
    if y.len() < min {
        return Err(Error::ShapeMismatch(format!("need at least {min} samples, got {}", y.len())));
    }
    Ok(())
}

fn first_diff(x: &[f64]) -> impl Iterator<Item = f64> + '_ {
    x.windows(2).map(|w| w[1] - w[0])
}

fn second_diff(x: &[f64]) -> impl Iterator<Item = f64> + '_ {
    x.windows(3).map(|w| w[2] - 2.0 * w[1] + w[0])
}

/// `Σ (Y − X)² / (c·t)`.
pub fn loss_amp(y: &Segment, x: &Segment) -> Result<Loss> {
    y.same_shape(x)?;
    let n = y.data().len() as f64;
    let mut value = 0.0;
    let grad = y
        .data()
        .iter()
        .zip(x.data())
        .map(|(a, b)| {
            let r = a - b;
            value += r * r;
            2.0 * r / n
        })
        .collect();
    Ok(Loss { value: value / n, grad })
}

/// Mean squared difference of first forward differences, normalized by `c·(t−1)`.
pub fn loss_vel(y: &Segment, x: &Segment) -> Result<Loss> {
    check_len(y, x, 2)?;
    let t = y.len();
    let n = (y.channels() * (t - 1)) as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; y.data().len()];
    for ((yr, xr), g) in y.rows().zip(x.rows()).zip(grad.chunks_exact_mut(t)) {
        for (j, d) in first_diff(yr).zip(first_diff(xr)).map(|(a, b)| a - b).enumerate() {
            value += d * d;
            let s = 2.0 * d / n;
            g[j + 1] += s;
            g[j] -= s;
        }
    }
    Ok(Loss { value: value / n, grad })
}

/// Mean squared difference of second forward differences, normalized by `c·(t−2)`.
pub fn loss_acc(y: &Segment, x: &Segment) -> Result<Loss> {
    check_len(y, x, 3)?;
    let t = y.len();
    let n = (y.channels() * (t - 2)) as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; y.data().len()];
    for ((yr, xr), g) in y.rows().zip(x.rows()).zip(grad.chunks_exact_mut(t)) {
        for (j, d) in second_diff(yr).zip(second_diff(xr)).map(|(a, b)| a - b).enumerate() {
            value += d * d;
            let s = 2.0 * d / n;
            g[j + 2] += s;
            g[j + 1] -= 2.0 * s;
            g[j] += s;
        }
    }
    Ok(Loss { value: value / n, grad })
}

/// Mean squared difference of the z-scored 1–50 Hz power spectra.
pub fn loss_freq(y: &Segment, x: &Segment) -> Result<Loss> {
    y.same_shape(x)?;
    let (py, bins) = segment_psd(y)?;
    let fx = psd_zscored(x)?;
    let t = y.len();
    let l = fx.bins();
    let n = (y.channels() * l) as f64;
    let plan = FftPlan::new(t);
    let scale = psd_scale(y.fs(), t);
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(y.data().len());
    let mut buf = vec![Complex64::new(0.0, 0.0); t];
    for (i, ch) in py.iter().enumerate() {
        // dL/dz
        let dz: Vec<f64> = ch
            .z
            .iter()
            .zip(fx.channel(i))
            .map(|(a, b)| {
                let d = a - b;
                value += d * d;
                2.0 * d / n
            })
            .collect();
        // through the z-score: dP = (dz − mean(dz) − z·mean(dz·z)) / σ
        let mean_dz = dz.iter().sum::<f64>() / l as f64;
        let mean_dzz = dz.iter().zip(&ch.z).map(|(a, b)| a * b).sum::<f64>() / l as f64;
        buf.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
        for (b, k) in bins.clone().enumerate() {
            let dp = (dz[b] - mean_dz - ch.z[b] * mean_dzz) / ch.std;
            buf[k] = ch.coeffs[b] * dp;
        }
        // through |X_k|²·scale: dx_j = 2·scale·Re Σ_k dP_k X_k e^{+2πijk/t}
        plan.inverse_unscaled(&mut buf);
        grad.extend(buf.iter().map(|c| 2.0 * scale * c.re));
    }
    Ok(Loss { value: value / n, grad })
}

/// Value-only spectral loss.
pub fn loss_freq_value(y: &Segment, x: &Segment) -> Result<f64> {
    y.same_shape(x)?;
    let fy = psd_zscored(y)?;
    let fx = psd_zscored(x)?;
    let sum: f64 = fy.values.iter().zip(&fx.values).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / fy.values.len() as f64)
}

/// Every term's value; no gradients.
pub fn loss_terms(y: &Segment, x: &Segment) -> Result<LossTerms> {
    Ok(LossTerms {
        amp: loss_amp(y, x)?.value,
        vel: loss_vel(y, x)?.value,
        acc: loss_acc(y, x)?.value,
        freq: loss_freq_value(y, x)?,
    })
}

/// `Σ αᵢ·Lᵢ / Σ αᵢ`. Terms with zero weight are not evaluated.
pub fn loss_ensemble(y: &Segment, x: &Segment, w: &LossWeights) -> Result<Loss> {
    y.same_shape(x)?;
    let norm = w.normalized()?;
    let fns: [fn(&Segment, &Segment) -> Result<Loss>; 4] = [loss_amp, loss_vel, loss_acc, loss_freq];
    let mut value = 0.0;
    let mut grad = vec![0.0; y.data().len()];
    for (wi, f) in norm.iter().zip(fns) {
        if *wi == 0.0 {
            continue;
        }
        let term = f(y, x)?;
        value += wi * term.value;
        for (g, t) in grad.iter_mut().zip(&term.grad) {
            *g += wi * t;
        }
    }
    Ok(Loss { value, grad })
}

/// Per bin, the channel mean of `|F_Y − F_X|`.
pub fn per_bin_abs_error(y: &Segment, x: &Segment) -> Result<Vec<f64>> {
    y.same_shape(x)?;
    let fy = psd_zscored(y)?;
    let fx = psd_zscored(x)?;
    let l = fy.bins();
    let c = y.channels() as f64;
    let mut out = vec![0.0; l];
    for i in 0..y.channels() {
        for (o, (a, b)) in out.iter_mut().zip(fy.channel(i).iter().zip(fx.channel(i))) {
            *o += (a - b).abs();
        }
    }
    out.iter_mut().for_each(|v| *v /= c);
    Ok(out)
}
