//! Periodogram power spectra restricted to the 1–50 Hz band, z-scored per channel.

use alloc::vec::Vec;
use core::f64::consts::PI;
use core::ops::RangeInclusive;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::segment::Segment;

/// Inclusive analysis band in Hz.
pub const BAND_HZ: (f64, f64) = (1.0, 50.0);

/// Radix-2 FFT for power-of-two lengths; other lengths fall back to a direct DFT.
#[derive(Debug, Clone)]
pub struct FftPlan {
    n: usize,
    /// `exp(-2πik/n)` for `k < n`.
    twiddles: Vec<Complex64>,
}

impl FftPlan {
    pub fn new(n: usize) -> Self {
        let twiddles = (0..n)
            .map(|k| {
                let theta = -2.0 * PI * k as f64 / n as f64;
                Complex64::new(libm::cos(theta), libm::sin(theta))
            })
            .collect();
        Self { n, twiddles }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// `X_k = Σ_j x_j e^{-2πijk/n}`, in place.
    pub fn forward(&self, buf: &mut [Complex64]) {
        self.transform(buf, false);
    }

    /// `x_j = Σ_k X_k e^{+2πijk/n}` (no 1/n factor), in place.
    pub fn inverse_unscaled(&self, buf: &mut [Complex64]) {
        self.transform(buf, true);
    }

    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        let n = self.n;
        assert_eq!(buf.len(), n, "buffer length does not match the plan");
        if n <= 1 {
            return;
        }
        let tw = |k: usize| {
            let w = self.twiddles[k % n];
            if inverse { w.conj() } else { w }
        };
        if !n.is_power_of_two() {
            let input = buf.to_vec();
            for (k, out) in buf.iter_mut().enumerate() {
                *out = input
                    .iter()
                    .enumerate()
                    .map(|(j, &x)| x * tw((j * k) % n))
                    .sum();
            }
            return;
        }
        let bits = n.trailing_zeros();
        for i in 0..n {
            let j = i.reverse_bits() >> (usize::BITS - bits);
            if j > i {
                buf.swap(i, j);
            }
        }
        let mut size = 2;
        while size <= n {
            let half = size / 2;
            let stride = n / size;
            for start in (0..n).step_by(size) {
                for k in 0..half {
                    let w = tw(k * stride);
                    let a = buf[start + k];
                    let b = buf[start + k + half] * w;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            size *= 2;
        }
    }

    pub fn forward_real(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }
}

/// DFT bins `k` with `1 ≤ k·fs/t ≤ 50` (and at most Nyquist).
pub fn band_bins(fs: f64, len: usize) -> Result<RangeInclusive<usize>> {
    let hz = |k: usize| k as f64 * fs / len as f64;
    let tol = 1e-9;
    let mut ks = (0..=len / 2).filter(|&k| hz(k) >= BAND_HZ.0 - tol && hz(k) <= BAND_HZ.1 + tol);
    let lo = ks.next().ok_or(Error::NoBins { fs, len })?;
    let hi = ks.next_back().unwrap_or(lo);
    Ok(lo..=hi)
}

/// Z-scored band-limited PSD of every channel, `channels × bins` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub channels: usize,
    pub values: Vec<f64>,
    pub bin_freqs: Vec<f64>,
}

impl Spectrum {
    pub fn bins(&self) -> usize {
        self.bin_freqs.len()
    }

    pub fn channel(&self, i: usize) -> &[f64] {
        let l = self.bins();
        &self.values[i * l..(i + 1) * l]
    }
}

/// Intermediate values of one channel's spectral estimate, kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct ChannelPsd {
    /// DFT coefficients at the band bins.
    pub coeffs: Vec<Complex64>,
    pub std: f64,
    /// Z-scored PSD.
    pub z: Vec<f64>,
}

/// Periodogram scale `1/(fs·t)`.
pub(crate) fn psd_scale(fs: f64, len: usize) -> f64 {
    1.0 / (fs * len as f64)
}

pub(crate) fn channel_psd(
    x: &[f64],
    plan: &FftPlan,
    bins: &RangeInclusive<usize>,
    fs: f64,
    channel: usize,
) -> Result<ChannelPsd> {
    let full = plan.forward_real(x);
    let coeffs: Vec<Complex64> = full[bins.clone()].to_vec();
    let scale = psd_scale(fs, x.len());
    let power: Vec<f64> = coeffs.iter().map(|c| c.norm_sqr() * scale).collect();
    let l = power.len() as f64;
    let mean = power.iter().sum::<f64>() / l;
    let var = power.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / l;
    let std = libm::sqrt(var);
    if !(std > 1e-12 * mean.abs()) || std == 0.0 {
        return Err(Error::ConstantSpectrum { channel });
    }
    let z = power.iter().map(|p| (p - mean) / std).collect();
    Ok(ChannelPsd { coeffs, std, z })
}

pub(crate) fn segment_psd(seg: &Segment) -> Result<(Vec<ChannelPsd>, RangeInclusive<usize>)> {
    let bins = band_bins(seg.fs(), seg.len())?;
    let plan = FftPlan::new(seg.len());
    let psds = seg
        .rows()
        .enumerate()
        .map(|(i, row)| channel_psd(row, &plan, &bins, seg.fs(), i))
        .collect::<Result<Vec<_>>>()?;
    Ok((psds, bins))
}

/// Rectangular-window periodogram `|DFT|²/(fs·t)` over the band, z-scored across bins per channel.
pub fn psd_zscored(seg: &Segment) -> Result<Spectrum> {
    let (psds, bins) = segment_psd(seg)?;
    let bin_freqs = bins.map(|k| k as f64 * seg.fs() / seg.len() as f64).collect();
    let values = psds.into_iter().flat_map(|p| p.z).collect();
    Ok(Spectrum { channels: seg.channels(), values, bin_freqs })
}

/// Unscaled band power `|DFT|²/(fs·t)` of one channel, before z-scoring.
pub fn band_power(x: &[f64], fs: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let bins = band_bins(fs, x.len())?;
    let plan = FftPlan::new(x.len());
    let full = plan.forward_real(x);
    let scale = psd_scale(fs, x.len());
    let freqs = bins.clone().map(|k| k as f64 * fs / x.len() as f64).collect();
    let power = full[bins].iter().map(|c| c.norm_sqr() * scale).collect();
    Ok((freqs, power))
}
