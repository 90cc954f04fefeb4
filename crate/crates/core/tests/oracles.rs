use icunet_core::eval::{bin_error_profile, mse, snr_db, summarize};
use icunet_core::loss::{loss_amp, loss_terms, per_bin_abs_error, LossWeights};
use icunet_core::network::layers::{conv1d, conv1d_strided, conv_transpose1d};
use icunet_core::network::{forward, infer_segments, init_params, ConvWeights, FeatureMap, Mode, UNetConfig, UNetParams};
use icunet_core::oracle::{naive_conv, naive_conv_transpose, naive_dft, naive_forward, naive_losses, naive_psd_z, Tensor3};
use icunet_core::signalgen::{substream, synth_sinusoid_dataset, SynthSpec};
use icunet_core::spectral::{psd_zscored, FftPlan};
use icunet_core::training::validate;
use icunet_core::{Pair, Segment};
use num_complex::Complex64;
use rand::Rng;

fn uniform(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = substream(seed, 7);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn to_tensor(x: &FeatureMap) -> Tensor3 {
    (0..x.batch).map(|b| (0..x.channels).map(|c| x.row(b, c).to_vec()).collect()).collect()
}

fn max_abs_diff(a: &Tensor3, b: &Tensor3) -> f64 {
    a.iter()
        .flatten()
        .flatten()
        .zip(b.iter().flatten().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn random_params(config: &UNetConfig, seed: u64) -> UNetParams {
    let mut p = init_params(config, seed).unwrap();
    let n = p.weights.n_params();
    p.weights.assign_flat(&uniform(seed + 100, n)).unwrap();
    let mut rng = substream(seed, 9);
    for s in &mut p.stats {
        s.mean.iter_mut().for_each(|m| *m = rng.random_range(-0.5..0.5));
        s.var.iter_mut().for_each(|v| *v = rng.random_range(0.2..2.0));
    }
    p
}

#[test]
fn production_forward_matches_naive_reference() {
    for (depth, base, seed) in [(1, 4, 1), (2, 3, 2)] {
        let config = UNetConfig { base_filters: base, depth, ..UNetConfig::new(2) };
        let params = random_params(&config, seed);
        let input = FeatureMap::new(3, 2, 16, uniform(seed, 96)).unwrap();
        for (mode, train) in [(Mode::Train, true), (Mode::Infer, false)] {
            let (y, _) = forward(&params, &config, &input, mode).unwrap();
            let want = naive_forward(&params, &config, &to_tensor(&input), train);
            let err = max_abs_diff(&to_tensor(&y), &want);
            assert!(err < 1e-10, "depth {depth}, {mode:?}: {err:e}");
        }
    }
}

#[test]
fn naive_forward_zero_input_gives_zero_output() {
    let config = UNetConfig { base_filters: 4, depth: 1, ..UNetConfig::new(2) };
    let params = init_params(&config, 3).unwrap();
    let zero = vec![vec![vec![0.0; 16]; 2]];
    assert!(naive_forward(&params, &config, &zero, false).iter().flatten().flatten().all(|&v| v == 0.0));
}

#[test]
fn conv_layers_match_naive_loops() {
    let (b, i, o, k, t) = (2, 3, 4, 5, 11);
    let x = FeatureMap::new(b, i, t, uniform(1, b * i * t)).unwrap();
    let w = ConvWeights::new(o, i, k, uniform(2, o * i * k), uniform(3, o)).unwrap();
    let y = conv1d(&x, &w).unwrap();
    for n in 0..b {
        let rows: Vec<Vec<f64>> = (0..i).map(|c| x.row(n, c).to_vec()).collect();
        let want = naive_conv(&rows, &w.weight, &w.bias, k);
        for c in 0..o {
            for (a, e) in y.row(n, c).iter().zip(&want[c]) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }
    let s = 2;
    let wt = ConvWeights::new(o, i, s, uniform(4, o * i * s), uniform(5, o)).unwrap();
    let y = conv_transpose1d(&x, &wt, s).unwrap();
    for n in 0..b {
        let rows: Vec<Vec<f64>> = (0..i).map(|c| x.row(n, c).to_vec()).collect();
        let want = naive_conv_transpose(&rows, &wt.weight, &wt.bias, s);
        for c in 0..o {
            for (a, e) in y.row(n, c).iter().zip(&want[c]) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn transposed_conv_is_adjoint_of_strided_conv() {
    let (b, i, o, s, t) = (2, 3, 4, 2, 9);
    let w = ConvWeights::new(o, i, s, uniform(10, o * i * s), vec![0.0; o]).unwrap();
    let x = FeatureMap::new(b, o, t * s, uniform(11, b * o * t * s)).unwrap();
    let y = FeatureMap::new(b, i, t, uniform(12, b * i * t)).unwrap();
    let lhs: f64 = conv1d_strided(&x, &w, s).unwrap().data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
    let rhs: f64 = x.data.iter().zip(&conv_transpose1d(&y, &w, s).unwrap().data).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
}

#[test]
fn fft_matches_direct_dft() {
    let x: Vec<Complex64> = uniform(20, 2048).chunks(2).map(|c| Complex64::new(c[0], c[1])).collect();
    let want = naive_dft(&x);
    let mut got = x.clone();
    FftPlan::new(1024).forward(&mut got);
    let scale = want.iter().map(|v| v.norm()).fold(0.0, f64::max);
    for (a, e) in got.iter().zip(&want) {
        assert!((a - e).norm() < 1e-9 * scale);
    }
}

fn spec(seed: u64) -> SynthSpec {
    SynthSpec { n_samples: 4, channels: 3, length: 256, fs: 128.0, ..SynthSpec::paper_scale(seed) }
}

#[test]
fn spectra_and_losses_match_scalar_pipeline() {
    let ys = synth_sinusoid_dataset(&spec(1)).unwrap();
    let xs = synth_sinusoid_dataset(&spec(2)).unwrap();
    for (y, x) in ys.iter().zip(&xs) {
        let s = psd_zscored(y).unwrap();
        for c in 0..3 {
            for (a, e) in s.channel(c).iter().zip(naive_psd_z(y.channel(c), 128.0)) {
                assert!((a - e).abs() < 1e-10);
            }
        }
        let rows = |s: &Segment| s.rows().map(<[f64]>::to_vec).collect::<Vec<_>>();
        let want = naive_losses(&rows(y), &rows(x), 128.0);
        let got = loss_terms(y, x).unwrap().as_array();
        for k in 0..3 {
            assert!((got[k] - want[k]).abs() < 1e-12 * want[k].max(1.0));
        }
        assert!((got[3] - want[3]).abs() < 1e-10);
        assert!(got[3] > 0.0);
    }
}

#[test]
fn bin_centred_tones_loss_matches_oracle() {
    let tone = |f: f64| -> Vec<f64> { (0..256).map(|j| (2.0 * std::f64::consts::PI * f * j as f64 / 128.0).sin()).collect() };
    let y = Segment::new(1, 256, 128.0, tone(10.0)).unwrap();
    let x = Segment::new(1, 256, 128.0, tone(20.0)).unwrap();
    let want = naive_losses(&[tone(10.0)], &[tone(20.0)], 128.0)[3];
    assert!(want > 0.0);
    assert!((loss_terms(&y, &x).unwrap().freq - want).abs() < 1e-10);
}

#[test]
fn per_bin_error_matches_elementwise_oracle() {
    let ys = synth_sinusoid_dataset(&spec(3)).unwrap();
    let xs = synth_sinusoid_dataset(&spec(4)).unwrap();
    let got = per_bin_abs_error(&ys[0], &xs[0]).unwrap();
    let per_channel: Vec<Vec<f64>> = (0..3)
        .map(|c| {
            let a = naive_psd_z(ys[0].channel(c), 128.0);
            let b = naive_psd_z(xs[0].channel(c), 128.0);
            a.iter().zip(&b).map(|(p, q)| (p - q).abs()).collect()
        })
        .collect();
    for (k, g) in got.iter().enumerate() {
        let want = per_channel.iter().map(|r| r[k]).sum::<f64>() / 3.0;
        assert!((g - want).abs() < 1e-10);
    }
}

fn small_model() -> (UNetConfig, UNetParams, Vec<Pair>) {
    let config = UNetConfig { base_filters: 3, depth: 2, ..UNetConfig::new(3) };
    let params = random_params(&config, 6);
    let clean = synth_sinusoid_dataset(&spec(5)).unwrap();
    let noisy = synth_sinusoid_dataset(&spec(6)).unwrap();
    let pairs = noisy.into_iter().zip(clean).map(|(n, c)| Pair::new(n, c).unwrap()).collect();
    (config, params, pairs)
}

fn naive_outputs(params: &UNetParams, config: &UNetConfig, pairs: &[Pair]) -> Vec<Segment> {
    pairs
        .iter()
        .map(|p| {
            let input = vec![p.noisy.rows().map(<[f64]>::to_vec).collect::<Vec<_>>()];
            let out = naive_forward(params, config, &input, false);
            Segment::from_rows(&out[0], p.noisy.fs()).unwrap()
        })
        .collect()
}

#[test]
fn validation_and_summaries_match_per_sample_loops() {
    let (config, params, pairs) = small_model();
    let outs = naive_outputs(&params, &config, &pairs);
    let n = pairs.len() as f64;
    let mut terms = [0.0; 4];
    let mut snrs = Vec::new();
    let mut mses = Vec::new();
    for (y, p) in outs.iter().zip(&pairs) {
        let rows = |s: &Segment| s.rows().map(<[f64]>::to_vec).collect::<Vec<_>>();
        let l = naive_losses(&rows(y), &rows(&p.clean), 128.0);
        terms.iter_mut().zip(l).for_each(|(a, b)| *a += b / n);
        let snr: f64 = y
            .rows()
            .zip(p.clean.rows())
            .map(|(a, b)| {
                let s: f64 = b.iter().map(|v| v * v).sum();
                let r: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
                10.0 * (s / r).log10()
            })
            .sum::<f64>()
            / 3.0;
        snrs.push(snr);
        mses.push(l[0]);
    }
    let v = validate(&params, &config, &pairs, &LossWeights::ENS).unwrap();
    for (a, e) in v.terms.as_array().iter().zip(terms) {
        assert!((a - e).abs() < 1e-10 * e.max(1.0));
    }
    assert!((v.ensemble - terms.iter().sum::<f64>() / 4.0).abs() < 1e-10);
    assert!((v.snr - snrs.iter().sum::<f64>() / n).abs() < 1e-10);

    let s = summarize(&params, &config, &pairs).unwrap();
    let mean = mses.iter().sum::<f64>() / n;
    let std = (mses.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!((s.mse_mean - mean).abs() < 1e-10 && (s.mse_std - std).abs() < 1e-10);
    assert!((s.snr_mean - v.snr).abs() < 1e-10);
}

#[test]
fn bin_profile_matches_two_loop_oracle() {
    let (config, params, pairs) = small_model();
    let outs = naive_outputs(&params, &config, &pairs);
    let got = bin_error_profile(&params, &config, &pairs).unwrap();
    assert_eq!(got.len(), 99);
    for (k, g) in got.iter().enumerate() {
        let mut want = 0.0;
        for (y, p) in outs.iter().zip(&pairs) {
            for c in 0..3 {
                let a = naive_psd_z(y.channel(c), 128.0);
                let b = naive_psd_z(p.clean.channel(c), 128.0);
                want += (a[k] - b[k]).abs() / 3.0;
            }
        }
        want /= pairs.len() as f64;
        assert!(*g >= 0.0 && (g - want).abs() < 1e-10);
    }
}

#[test]
fn mse_is_loss_amp_bit_exactly() {
    let ys = synth_sinusoid_dataset(&spec(8)).unwrap();
    let xs = synth_sinusoid_dataset(&spec(9)).unwrap();
    for (y, x) in ys.iter().zip(&xs) {
        assert_eq!(mse(y, x).unwrap().to_bits(), loss_amp(y, x).unwrap().value.to_bits());
        assert!(snr_db(y, x).unwrap().is_finite());
    }
    let outs = infer_segments(&small_model().1, &small_model().0, &[&ys[0]], 4).unwrap();
    assert_eq!(outs.len(), 1);
}
