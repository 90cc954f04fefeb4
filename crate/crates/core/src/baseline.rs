//! Linear-phase FIR band-pass baseline applied forward and backward.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::segment::Segment;

/// Default tap count at 256 Hz: about one second of impulse response.
pub const DEFAULT_TAPS: usize = 255;

fn hamming(n: usize, taps: usize) -> f64 {
    0.54 - 0.46 * libm::cos(2.0 * PI * n as f64 / (taps - 1) as f64)
}

/// Hamming-windowed sinc low-pass scaled to unit DC gain.
fn lowpass(fs: f64, cutoff: f64, taps: usize) -> Vec<f64> {
    let mid = (taps / 2) as f64;
    let fc = cutoff / fs;
    let mut h: Vec<f64> = (0..taps)
        .map(|n| {
            let x = n as f64 - mid;
            let sinc = if x == 0.0 { 2.0 * fc } else { libm::sin(2.0 * PI * fc * x) / (PI * x) };
            sinc * hamming(n, taps)
        })
        .collect();
    let dc: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= dc);
    h
}

/// Band-pass `[low, high]` Hz as the difference of two unit-DC low-passes, so the
/// taps sum to zero and are symmetric about the centre.
pub fn design_fir_bandpass(fs: f64, low: f64, high: f64, taps: usize) -> Result<Vec<f64>> {
    if !(low > 0.0 && low < high && high < fs / 2.0) {
        return Err(Error::InvalidBand(format!(
            "need 0 < low < high < fs/2, got low={low}, high={high}, fs={fs}"
        )));
    }
    if taps < 3 || taps.is_multiple_of(2) {
        return Err(Error::InvalidBand(format!("taps must be odd and at least 3, got {taps}")));
    }
    let hi = lowpass(fs, high, taps);
    let lo = lowpass(fs, low, taps);
    Ok(hi.iter().zip(&lo).map(|(a, b)| a - b).collect())
}

/// `|H(f)|` of an FIR filter.
pub fn magnitude_response(coeffs: &[f64], freq: f64, fs: f64) -> f64 {
    let w = -2.0 * PI * freq / fs;
    coeffs
        .iter()
        .enumerate()
        .map(|(n, &h)| Complex64::from_polar(h, w * n as f64))
        .sum::<Complex64>()
        .norm()
}

/// Causal FIR pass with zero initial state.
fn lfilter(coeffs: &[f64], x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|n| {
            let k_max = n.min(coeffs.len() - 1);
            (0..=k_max).map(|k| coeffs[k] * x[n - k]).sum()
        })
        .collect()
}

/// Zero-phase filtering of one channel: reflect-pad by `taps` samples at each end,
/// filter forward, filter the reversed result, reverse and crop.
pub fn filtfilt_channel(coeffs: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    let pad = coeffs.len();
    if x.len() <= 3 * pad {
        return Err(Error::TooShort { len: x.len(), min: 3 * pad });
    }
    let n = x.len();
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| x[i]));
    ext.extend_from_slice(x);
    ext.extend((n - 1 - pad..n - 1).rev().map(|i| x[i]));
    let mut y = lfilter(coeffs, &ext);
    y.reverse();
    let mut y = lfilter(coeffs, &y);
    y.reverse();
    Ok(y[pad..pad + n].to_vec())
}

/// [`filtfilt_channel`] on every channel.
pub fn filtfilt(seg: &Segment, coeffs: &[f64]) -> Result<Segment> {
    let mut data = Vec::with_capacity(seg.data().len());
    for row in seg.rows() {
        data.extend(filtfilt_channel(coeffs, row)?);
    }
    seg.with_data(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signalgen::{render_channel, Component};

    fn db(x: f64) -> f64 {
        20.0 * libm::log10(x)
    }

    fn central_rms(x: &[f64]) -> f64 {
        let n = x.len();
        let mid = &x[n / 4..3 * n / 4];
        libm::sqrt(mid.iter().map(|v| v * v).sum::<f64>() / mid.len() as f64)
    }

    #[test]
    fn design_properties() {
        let h = design_fir_bandpass(256.0, 1.0, 50.0, 255).unwrap();
        assert_eq!(h.len(), 255);
        for i in 0..h.len() {
            assert!((h[i] - h[h.len() - 1 - i]).abs() < 1e-15);
        }
        assert!(h.iter().sum::<f64>().abs() < 1e-3);
        assert!(db(magnitude_response(&h, 25.5, 256.0)).abs() < 0.5);
    }

    #[test]
    fn design_errors() {
        assert!(matches!(design_fir_bandpass(256.0, 50.0, 1.0, 255), Err(Error::InvalidBand(_))));
        assert!(design_fir_bandpass(256.0, 1.0, 200.0, 255).is_err());
        assert!(design_fir_bandpass(256.0, 1.0, 50.0, 254).is_err());
    }

    #[test]
    fn passband_and_stopband() {
        let h = design_fir_bandpass(256.0, 1.0, 50.0, 255).unwrap();
        let tone = |f| render_channel(&[Component { freq: f, amp: 1.0, phase: 0.4 }], 2048, 256.0);
        let x = tone(25.0);
        let y = filtfilt_channel(&h, &x).unwrap();
        assert!(db(central_rms(&y) / central_rms(&x)).abs() < 1.0);
        let x = tone(60.0);
        let y = filtfilt_channel(&h, &x).unwrap();
        assert!(db(central_rms(&y) / central_rms(&x)) < -40.0);
    }

    #[test]
    fn zero_in_zero_out_and_too_short() {
        let h = design_fir_bandpass(256.0, 1.0, 50.0, 255).unwrap();
        assert!(filtfilt_channel(&h, &[0.0; 1024]).unwrap().iter().all(|&v| v == 0.0));
        assert_eq!(filtfilt_channel(&h, &[0.0; 765]), Err(Error::TooShort { len: 765, min: 765 }));
    }
}
