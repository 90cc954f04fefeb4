//! Synthetic sinusoid datasets and the shared preprocessing steps
//! (per-channel z-scoring, non-overlapping windowing).
//!
//! Randomness comes from one ChaCha20 stream per dataset seed. Segment `k`
//! draws from substream `k` of that seed, so generation order does not
//! affect the output. Within a segment the draw order is channel-major,
//! then component, then `(frequency, amplitude, phase)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::segment::{Pair, Segment, MIN_LEN};

/// Population standard deviation below which a channel counts as constant.
pub const MIN_STD: f64 = 1e-12;

/// One sinusoid `amp · sin(2π·freq·j/fs + phase)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub freq: f64,
    pub amp: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_samples: usize,
    pub channels: usize,
    pub length: usize,
    pub fs: f64,
    pub n_components: usize,
    pub freq_range: (f64, f64),
    pub amp_range: (f64, f64),
    pub phase_range: (f64, f64),
    pub seed: u64,
}

impl SynthSpec {
    /// The simulation setting: 19 channels of 4 s at 256 Hz, six sinusoids per channel.
    pub fn paper_scale(seed: u64) -> Self {
        Self {
            n_samples: 10_240,
            channels: 19,
            length: 1024,
            fs: 256.0,
            n_components: 6,
            freq_range: (0.0, 50.0),
            amp_range: (0.0, 1.0),
            phase_range: (0.0, 2.0 * PI),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::InvalidSpec(msg));
        if self.channels == 0 {
            return bad("channels must be at least 1".into());
        }
        if self.length < MIN_LEN {
            return bad(format!("length must be at least {MIN_LEN}"));
        }
        if !(self.fs > 0.0 && self.fs.is_finite()) {
            return bad(format!("fs {} must be positive", self.fs));
        }
        if self.n_components == 0 {
            return bad("n_components must be at least 1".into());
        }
        for (name, (lo, hi)) in [
            ("freq_range", self.freq_range),
            ("amp_range", self.amp_range),
            ("phase_range", self.phase_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return bad(format!("{name} ({lo}, {hi}) is empty"));
            }
        }
        if self.freq_range.0 < 0.0 || self.freq_range.1 > self.fs / 2.0 {
            return bad(format!(
                "freq_range ({}, {}) leaves (0, {})",
                self.freq_range.0,
                self.freq_range.1,
                self.fs / 2.0
            ));
        }
        Ok(())
    }
}

/// Sum of sinusoids sampled at `j = 0..len`.
pub fn render_channel(components: &[Component], len: usize, fs: f64) -> Vec<f64> {
    (0..len)
        .map(|j| {
            let t = j as f64 / fs;
            components
                .iter()
                .map(|c| c.amp * libm::sin(2.0 * PI * c.freq * t + c.phase))
                .sum()
        })
        .collect()
}

/// The RNG for item `index` of a dataset keyed by `seed`.
pub fn substream(seed: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn draw_components<R: Rng>(spec: &SynthSpec, rng: &mut R) -> Vec<Component> {
    (0..spec.n_components)
        .map(|_| {
            let freq = rng.random_range(spec.freq_range.0..spec.freq_range.1);
            let amp = rng.random_range(spec.amp_range.0..spec.amp_range.1);
            let phase = rng.random_range(spec.phase_range.0..spec.phase_range.1);
            Component { freq, amp, phase }
        })
        .collect()
}

/// Raw (pre-normalization) sinusoid mixture for segment `index`.
pub fn synth_raw_segment(spec: &SynthSpec, index: usize) -> Result<Segment> {
    let mut rng = substream(spec.seed, index as u64);
    let mut data = Vec::with_capacity(spec.channels * spec.length);
    for _ in 0..spec.channels {
        let comps = draw_components(spec, &mut rng);
        data.extend(render_channel(&comps, spec.length, spec.fs));
    }
    Segment::new(spec.channels, spec.length, spec.fs, data)
}

/// `n_samples` z-scored sinusoid mixtures, each channel an independent draw.
pub fn synth_sinusoid_dataset(spec: &SynthSpec) -> Result<Vec<Segment>> {
    spec.validate()?;
    (0..spec.n_samples)
        .map(|k| zscore_normalize(&synth_raw_segment(spec, k)?))
        .collect()
}

/// Per-channel mean and population standard deviation.
pub fn channel_stats(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, libm::sqrt(var))
}

/// Rescales every channel to zero mean and unit population standard deviation.
pub fn zscore_normalize(seg: &Segment) -> Result<Segment> {
    let mut out = Vec::with_capacity(seg.data().len());
    for (i, row) in seg.rows().enumerate() {
        let (mean, std) = channel_stats(row);
        if std < MIN_STD {
            return Err(Error::ConstantChannel { channel: i });
        }
        out.extend(row.iter().map(|v| (v - mean) / std));
    }
    seg.with_data(out)
}

/// Consecutive non-overlapping windows; a trailing partial window is dropped.
pub fn segment_recording(recording: &Segment, window: usize) -> Result<Vec<Segment>> {
    if window < MIN_LEN {
        return Err(Error::InvalidSegment(format!("window {window} below {MIN_LEN}")));
    }
    (0..recording.len() / window)
        .map(|w| recording.slice(w * window, window))
        .collect()
}

/// Sizes of the (train, validation, test) splits: 10% each for validation and test.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let held_out = n / 10;
    (n - 2 * held_out, held_out, held_out)
}

/// Additive corruption used to build noisy inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Disturbance {
    /// Gaussian white noise.
    White,
    /// Slow sinusoidal baseline wander at `freq` Hz, random phase.
    Drift { freq: f64 },
    /// Hann-windowed bursts of sinusoids drawn from `[low, high]` Hz.
    Bursts { low: f64, high: f64 },
}

fn render_disturbance<R: Rng>(kind: Disturbance, len: usize, fs: f64, rng: &mut R) -> Vec<f64> {
    match kind {
        Disturbance::White => (0..len).map(|_| rng.sample(StandardNormal)).collect(),
        Disturbance::Drift { freq } => {
            let phase = rng.random_range(0.0..2.0 * PI);
            render_channel(&[Component { freq, amp: 1.0, phase }], len, fs)
        }
        Disturbance::Bursts { low, high } => {
            let mut out = vec![0.0; len];
            let n_bursts = rng.random_range(1..=3usize);
            for _ in 0..n_bursts {
                let burst_len = rng.random_range(len / 8..=len / 4).max(2);
                let start = rng.random_range(0..=len - burst_len);
                let comp = Component {
                    freq: rng.random_range(low..=high),
                    amp: rng.random_range(0.5..1.0),
                    phase: rng.random_range(0.0..2.0 * PI),
                };
                let tone = render_channel(&[comp], burst_len, fs);
                for (j, v) in tone.iter().enumerate() {
                    let w = 0.5 - 0.5 * libm::cos(2.0 * PI * j as f64 / (burst_len - 1) as f64);
                    out[start + j] += w * v;
                }
            }
            out
        }
    }
}

/// Adds the summed `kinds` to every channel of `clean`, scaled per channel so
/// that signal energy over disturbance energy equals `snr_db`.
pub fn disturb<R: Rng>(
    clean: &Segment,
    kinds: &[Disturbance],
    snr_db: f64,
    rng: &mut R,
) -> Result<Segment> {
    let len = clean.len();
    let mut out = Vec::with_capacity(clean.data().len());
    for row in clean.rows() {
        let mut noise = vec![0.0; len];
        for &kind in kinds {
            for (n, v) in noise.iter_mut().zip(render_disturbance(kind, len, clean.fs(), rng)) {
                *n += v;
            }
        }
        let signal_energy: f64 = row.iter().map(|v| v * v).sum();
        let noise_energy: f64 = noise.iter().map(|v| v * v).sum();
        let scale = if noise_energy > 0.0 {
            libm::sqrt(signal_energy / (noise_energy * libm::pow(10.0, snr_db / 10.0)))
        } else {
            0.0
        };
        out.extend(row.iter().zip(&noise).map(|(s, n)| s + scale * n));
    }
    clean.with_data(out)
}

/// First RNG stream used by [`disturbed_pairs`]; segment `k` draws from `DISTURB_STREAM + k`.
pub const DISTURB_STREAM: u64 = 2 << 32;

/// `(clean + disturbance, clean)` pairs at `snr_db` input SNR. Inputs are not re-normalized.
pub fn disturbed_pairs(clean: &[Segment], kinds: &[Disturbance], snr_db: f64, seed: u64) -> Result<Vec<Pair>> {
    clean
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let mut rng = substream(seed, DISTURB_STREAM + k as u64);
            Pair::new(disturb(c, kinds, snr_db, &mut rng)?, c.clone())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::{prop_assert, prop_assert_eq, proptest};

    fn small_spec(seed: u64) -> SynthSpec {
        SynthSpec { n_samples: 6, channels: 3, length: 256, ..SynthSpec::paper_scale(seed) }
    }

    #[test]
    fn analytic_sample_value() {
        let x = render_channel(&[Component { freq: 16.0, amp: 1.0, phase: 0.0 }], 8, 256.0);
        assert_abs_diff_eq!(x[4], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(x[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn dataset_shape_and_determinism() {
        let spec = small_spec(7);
        let a = synth_sinusoid_dataset(&spec).unwrap();
        let b = synth_sinusoid_dataset(&spec).unwrap();
        assert_eq!(a.len(), 6);
        assert!(a.iter().all(|s| s.shape() == (3, 256)));
        assert_eq!(a, b);
        let c = synth_sinusoid_dataset(&small_spec(8)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn dataset_is_zscored() {
        for seg in synth_sinusoid_dataset(&small_spec(1)).unwrap() {
            for row in seg.rows() {
                let (m, s) = channel_stats(row);
                assert!(m.abs() < 1e-10 && (s - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn segments_are_order_independent() {
        let spec = small_spec(3);
        let all = synth_sinusoid_dataset(&spec).unwrap();
        let fifth = zscore_normalize(&synth_raw_segment(&spec, 4).unwrap()).unwrap();
        assert_eq!(all[4], fifth);
    }

    #[test]
    fn invalid_specs() {
        let mut s = small_spec(0);
        s.freq_range = (0.0, 200.0);
        assert!(matches!(s.validate(), Err(Error::InvalidSpec(_))));
        let mut s = small_spec(0);
        s.amp_range = (1.0, 1.0);
        assert!(synth_sinusoid_dataset(&s).is_err());
        let mut s = small_spec(0);
        s.n_components = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn zscore_hand_values() {
        let seg = Segment::from_rows(&[vec![1.0, 2.0, 3.0, 4.0]], 1.0).unwrap();
        let z = zscore_normalize(&seg).unwrap();
        let expected = [-1.3416407864998738, -0.4472135954999579, 0.4472135954999579, 1.3416407864998738];
        for (a, b) in z.data().iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
        let again = zscore_normalize(&z).unwrap();
        for (a, b) in again.data().iter().zip(z.data()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn zscore_rejects_constant() {
        let seg = Segment::from_rows(&[vec![0.0, 1.0, 0.0, 1.0], vec![5.0; 4]], 1.0).unwrap();
        assert_eq!(zscore_normalize(&seg), Err(Error::ConstantChannel { channel: 1 }));
    }

    #[test]
    fn windowing_counts() {
        let rec = |t| Segment::zeros(2, t, 256.0).unwrap();
        assert_eq!(segment_recording(&rec(4096), 1024).unwrap().len(), 4);
        assert!(segment_recording(&rec(1023), 1024).unwrap().is_empty());
        assert_eq!(segment_recording(&rec(2500), 1024).unwrap().len(), 2);
    }

    #[test]
    fn split_proportions() {
        assert_eq!(split_sizes(10_240), (8192, 1024, 1024));
        assert_eq!(split_sizes(10), (8, 1, 1));
        assert_eq!(split_sizes(2560), (2048, 256, 256));
    }

    #[test]
    fn disturbance_hits_target_snr() {
        let clean = synth_sinusoid_dataset(&small_spec(2)).unwrap().remove(0);
        let mut rng = substream(9, 0);
        let kinds = [Disturbance::Drift { freq: 0.3 }, Disturbance::Bursts { low: 45.0, high: 50.0 }];
        let noisy = disturb(&clean, &kinds, 0.0, &mut rng).unwrap();
        for (c, n) in clean.rows().zip(noisy.rows()) {
            let es: f64 = c.iter().map(|v| v * v).sum();
            let en: f64 = c.iter().zip(n).map(|(a, b)| (a - b) * (a - b)).sum();
            assert_abs_diff_eq!(es / en, 1.0, epsilon = 1e-9);
        }
    }

    proptest! {
        #[test]
        fn windows_concatenate_to_prefix(t in 4usize..300, window in 4usize..64, seed in 0u64..1000) {
            let mut rng = substream(seed, 0);
            let data: Vec<f64> = (0..2 * t).map(|_| rng.random_range(-1.0..1.0)).collect();
            let rec = Segment::new(2, t, 100.0, data).unwrap();
            let wins = segment_recording(&rec, window).unwrap();
            prop_assert_eq!(wins.len(), t / window);
            for ch in 0..2 {
                let joined: Vec<f64> = wins.iter().flat_map(|w| w.channel(ch).to_vec()).collect();
                prop_assert_eq!(&joined[..], &rec.channel(ch)[..wins.len() * window]);
            }
        }

        #[test]
        fn zscore_moments(seed in 0u64..1000, scale in 0.01f64..100.0, shift in -50.0f64..50.0) {
            let mut rng = substream(seed, 1);
            let data: Vec<f64> = (0..64).map(|_| shift + scale * rng.random_range(-1.0..1.0)).collect();
            let z = zscore_normalize(&Segment::new(1, 64, 1.0, data).unwrap()).unwrap();
            let (m, s) = channel_stats(z.data());
            prop_assert!(m.abs() < 1e-10);
            prop_assert!((s - 1.0).abs() < 1e-10);
        }
    }
}
