//! Finite-difference checks of every analytic gradient: layer primitives, loss
//! terms and the full network. Each check perturbs every input coordinate of a
//! small random instance and reports the worst relative error.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::loss::{loss_acc, loss_amp, loss_ensemble, loss_freq, loss_vel, Loss, LossWeights};
use crate::network::layers::{
    batchnorm_backward, batchnorm_train, concat_channels, conv1d, conv1d_backward, conv_transpose1d,
    conv_transpose1d_backward, maxpool1d, maxpool1d_backward, relu_backward_in_place, relu_in_place, split_channels,
};
use crate::network::{backward, forward, init_params, stack, ConvWeights, FeatureMap, Mode, UNetConfig, UNetParams};
use crate::oracle::fd_gradient;
use crate::segment::{Pair, Segment};
use crate::signalgen::substream;

/// Step for layer and network checks.
pub const H_NETWORK: f64 = 1e-5;
/// Step for loss checks.
pub const H_LOSS: f64 = 1e-6;
pub const TOL_NETWORK: f64 = 1e-4;
pub const TOL_LOSS: f64 = 1e-5;
pub const TOL_FREQ: f64 = 1e-4;

/// Result of one gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub coords: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

/// `max_i |a_i − n_i| / max(|a_i|, |n_i|, 1e-3·‖a‖∞)`. The floor keeps
/// coordinates whose true gradient is near zero from dividing rounding noise by ~0.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(f64::MIN_POSITIVE);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

fn normals(rng: &mut ChaCha20Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn split<'a>(p: &'a [f64], sizes: &[usize]) -> Vec<&'a [f64]> {
    let mut out = Vec::with_capacity(sizes.len());
    let mut rest = p;
    for &s in sizes {
        let (a, b) = rest.split_at(s);
        out.push(a);
        rest = b;
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn fm(b: usize, c: usize, t: usize, data: &[f64]) -> FeatureMap {
    FeatureMap::new(b, c, t, data.to_vec()).expect("sizes chosen to match")
}

fn check(
    name: &'static str,
    point: &[f64],
    analytic: &[f64],
    h: f64,
    tolerance: f64,
    f: &mut dyn FnMut(&[f64]) -> f64,
) -> Check {
    let numeric = fd_gradient(f, point, h);
    Check { name, coords: point.len(), max_rel_err: max_rel_err(analytic, &numeric), tolerance }
}

fn conv_check(rng: &mut ChaCha20Rng) -> Check {
    let (b, i, o, k, t) = (2, 3, 2, 3, 9);
    let sizes = [b * i * t, o * i * k, o];
    let point: Vec<f64> = normals(rng, sizes.iter().sum());
    let r = normals(rng, b * o * t);
    let unpack = |p: &[f64]| {
        let s = split(p, &sizes);
        (fm(b, i, t, s[0]), ConvWeights::new(o, i, k, s[1].to_vec(), s[2].to_vec()).expect("sizes"))
    };
    let (x, w) = unpack(&point);
    let (gx, gw) = conv1d_backward(&x, &w, &fm(b, o, t, &r), true);
    let analytic = [gx.expect("requested").data, gw.weight, gw.bias].concat();
    check("conv1d", &point, &analytic, H_NETWORK, TOL_NETWORK, &mut |p| {
        let (x, w) = unpack(p);
        dot(&conv1d(&x, &w).expect("shapes").data, &r)
    })
}

fn batchnorm_check(rng: &mut ChaCha20Rng) -> Check {
    let (b, c, t) = (3, 2, 5);
    let sizes = [b * c * t, c, c];
    let mut point = normals(rng, sizes.iter().sum());
    point[b * c * t..b * c * t + c].iter_mut().for_each(|g| *g += 1.5);
    let r = normals(rng, b * c * t);
    let (xs, gamma) = {
        let s = split(&point, &sizes);
        (fm(b, c, t, s[0]), s[1].to_vec())
    };
    let beta = point[b * c * t + c..].to_vec();
    let (_, cache) = batchnorm_train(&xs, &gamma, &beta, 1e-5).expect("shapes");
    let (gx, gg, gb) = batchnorm_backward(&fm(b, c, t, &r), &cache, &gamma);
    let analytic = [gx.data, gg, gb].concat();
    check("batchnorm_train", &point, &analytic, H_NETWORK, TOL_NETWORK, &mut |p| {
        let s = split(p, &sizes);
        dot(&batchnorm_train(&fm(b, c, t, s[0]), s[1], s[2], 1e-5).expect("shapes").0.data, &r)
    })
}

fn relu_check(rng: &mut ChaCha20Rng) -> Check {
    let (b, c, t) = (2, 2, 8);
    // Keep every entry at least 0.1 from the kink.
    let point: Vec<f64> = normals(rng, b * c * t).iter().map(|v| v + 0.1 * v.signum()).collect();
    let r = normals(rng, b * c * t);
    let mut y = fm(b, c, t, &point);
    relu_in_place(&mut y);
    let mut g = fm(b, c, t, &r);
    relu_backward_in_place(&mut g, &y);
    check("relu", &point, &g.data, H_NETWORK, TOL_NETWORK, &mut |p| {
        let mut y = fm(b, c, t, p);
        relu_in_place(&mut y);
        dot(&y.data, &r)
    })
}

fn maxpool_check(rng: &mut ChaCha20Rng) -> Check {
    let (b, c, t, pool) = (2, 2, 12, 3);
    let point = normals(rng, b * c * t);
    let r = normals(rng, b * c * t / pool);
    let (_, cache) = maxpool1d(&fm(b, c, t, &point), pool).expect("divisible");
    let g = maxpool1d_backward(&fm(b, c, t / pool, &r), &cache);
    check("maxpool1d", &point, &g.data, H_NETWORK, TOL_NETWORK, &mut |p| {
        dot(&maxpool1d(&fm(b, c, t, p), pool).expect("divisible").0.data, &r)
    })
}

fn conv_transpose_check(rng: &mut ChaCha20Rng) -> Check {
    let (b, i, o, s, t) = (2, 3, 2, 2, 5);
    let sizes = [b * i * t, o * i * s, o];
    let point = normals(rng, sizes.iter().sum());
    let r = normals(rng, b * o * t * s);
    let unpack = |p: &[f64]| {
        let v = split(p, &sizes);
        (fm(b, i, t, v[0]), ConvWeights::new(o, i, s, v[1].to_vec(), v[2].to_vec()).expect("sizes"))
    };
    let (x, w) = unpack(&point);
    let (gx, gw) = conv_transpose1d_backward(&x, &w, &fm(b, o, t * s, &r), s).expect("shapes");
    let analytic = [gx.data, gw.weight, gw.bias].concat();
    check("conv_transpose1d", &point, &analytic, H_NETWORK, TOL_NETWORK, &mut |p| {
        let (x, w) = unpack(p);
        dot(&conv_transpose1d(&x, &w, s).expect("shapes").data, &r)
    })
}

fn concat_check(rng: &mut ChaCha20Rng) -> Check {
    let (b, c1, c2, t) = (2, 2, 3, 4);
    let sizes = [b * c1 * t, b * c2 * t];
    let point = normals(rng, sizes.iter().sum());
    let r = normals(rng, b * (c1 + c2) * t);
    let (ga, gb) = split_channels(&fm(b, c1 + c2, t, &r), c1);
    let analytic = [ga.data, gb.data].concat();
    check("concat_channels", &point, &analytic, H_NETWORK, TOL_NETWORK, &mut |p| {
        let v = split(p, &sizes);
        dot(&concat_channels(&fm(b, c1, t, v[0]), &fm(b, c2, t, v[1])).expect("shapes").data, &r)
    })
}

/// Every layer primitive.
pub fn layer_checks(seed: u64) -> Vec<Check> {
    let mut rng = substream(seed, 0);
    vec![
        conv_check(&mut rng),
        batchnorm_check(&mut rng),
        relu_check(&mut rng),
        maxpool_check(&mut rng),
        conv_transpose_check(&mut rng),
        concat_check(&mut rng),
    ]
}

/// Random sinusoid-plus-noise segment whose band spectrum is far from flat.
fn spectral_segment(rng: &mut ChaCha20Rng, c: usize, t: usize, fs: f64) -> Segment {
    let mut data = Vec::with_capacity(c * t);
    for _ in 0..c {
        let f1 = rng.random_range(1.0..fs / 4.0);
        let f2 = rng.random_range(fs / 4.0..fs / 2.0);
        let ph: f64 = rng.random_range(0.0..6.0);
        for j in 0..t {
            let s = j as f64 / fs;
            let tone = libm::sin(2.0 * core::f64::consts::PI * f1 * s + ph)
                + 0.5 * libm::sin(2.0 * core::f64::consts::PI * f2 * s);
            data.push(tone + 0.3 * rng.sample::<f64, _>(StandardNormal));
        }
    }
    Segment::new(c, t, fs, data).expect("finite")
}

fn loss_check(
    name: &'static str,
    tolerance: f64,
    y: &Segment,
    x: &Segment,
    loss: &dyn Fn(&Segment, &Segment) -> Loss,
) -> Check {
    let analytic = loss(y, x).grad;
    check(name, y.data(), &analytic, H_LOSS, tolerance, &mut |p| {
        loss(&y.with_data(p.to_vec()).expect("finite"), x).value
    })
}

/// Every loss term and the ensemble. `loss_freq` and the ensemble (which
/// contains it) use the looser tolerance.
pub fn loss_checks(seed: u64) -> Vec<Check> {
    let mut rng = substream(seed, 1);
    let (c, t, fs) = (3, 64, 128.0);
    let y = spectral_segment(&mut rng, c, t, fs);
    let x = spectral_segment(&mut rng, c, t, fs);
    let ens = LossWeights::new([0.4, 1.0, 2.0, 0.7]).expect("positive");
    vec![
        loss_check("loss_amp", TOL_LOSS, &y, &x, &|a, b| loss_amp(a, b).expect("valid")),
        loss_check("loss_vel", TOL_LOSS, &y, &x, &|a, b| loss_vel(a, b).expect("valid")),
        loss_check("loss_acc", TOL_LOSS, &y, &x, &|a, b| loss_acc(a, b).expect("valid")),
        loss_check("loss_freq", TOL_FREQ, &y, &x, &|a, b| loss_freq(a, b).expect("valid")),
        loss_check("loss_ensemble", TOL_FREQ, &y, &x, &|a, b| loss_ensemble(a, b, &ens).expect("valid")),
    ]
}

/// Tiny network used by the composite check.
pub fn tiny_config() -> UNetConfig {
    UNetConfig { base_filters: 2, depth: 2, kernel_size: 3, ..UNetConfig::new(2) }
}

/// Initial parameters with batch-norm affine terms moved off their defaults.
pub fn perturbed_params(config: &UNetConfig, seed: u64) -> UNetParams {
    let mut params = init_params(config, seed).expect("valid config");
    let mut rng = substream(seed, 2);
    for blk in &mut params.weights.blocks {
        blk.gamma.iter_mut().for_each(|g| *g = 1.0 + 0.3 * rng.sample::<f64, _>(StandardNormal));
        blk.beta.iter_mut().for_each(|b| *b = 0.3 * rng.sample::<f64, _>(StandardNormal));
        blk.conv.bias.iter_mut().for_each(|b| *b = 0.1 * rng.sample::<f64, _>(StandardNormal));
    }
    params
}

/// Mean per-sample ensemble loss of a train-mode forward pass, the training objective.
fn batch_objective(params: &UNetParams, config: &UNetConfig, pairs: &[Pair], w: &LossWeights) -> (f64, FeatureMap) {
    let noisy: Vec<&Segment> = pairs.iter().map(|p| &p.noisy).collect();
    let (y, _) = forward(params, config, &stack(&noisy).expect("shapes"), Mode::Train).expect("shapes");
    let fs = pairs[0].clean.fs();
    let scale = 1.0 / pairs.len() as f64;
    let mut grad = Vec::with_capacity(y.data.len());
    let mut total = 0.0;
    for (b, p) in pairs.iter().enumerate() {
        let out = Segment::new(y.channels, y.len, fs, y.sample(b).to_vec()).expect("finite");
        let l = loss_ensemble(&out, &p.clean, w).expect("valid");
        total += l.value * scale;
        grad.extend(l.grad.iter().map(|g| g * scale));
    }
    (total, FeatureMap::new(y.batch, y.channels, y.len, grad).expect("shapes"))
}

/// Full U-Net plus the four-term ensemble loss, differentiated with respect to
/// every trainable parameter.
pub fn composite_check(seed: u64) -> Check {
    let config = tiny_config();
    let params = perturbed_params(&config, seed);
    let mut rng = substream(seed, 3);
    let (t, fs) = (16, 16.0);
    let pairs: Vec<Pair> = (0..3)
        .map(|_| {
            let noisy = spectral_segment(&mut rng, 2, t, fs);
            let clean = spectral_segment(&mut rng, 2, t, fs);
            Pair::new(noisy, clean).expect("same shape")
        })
        .collect();
    let w = LossWeights::ENS;
    let noisy: Vec<&Segment> = pairs.iter().map(|p| &p.noisy).collect();
    let (_, cache) = forward(&params, &config, &stack(&noisy).expect("shapes"), Mode::Train).expect("shapes");
    let (_, grad_out) = batch_objective(&params, &config, &pairs, &w);
    let grads = backward(&params, &config, &cache.expect("train mode"), &grad_out).expect("fresh cache");
    let point = params.weights.flatten();
    let mut probe = params.clone();
    check("unet_composite", &point, &grads.flatten(), H_NETWORK, TOL_NETWORK, &mut |p| {
        probe.weights.assign_flat(p).expect("same size");
        batch_objective(&probe, &config, &pairs, &w).0
    })
}

/// Layers, losses and the composite network.
pub fn full_suite(seed: u64) -> Vec<Check> {
    let mut out = layer_checks(seed);
    out.extend(loss_checks(seed));
    out.push(composite_check(seed));
    out
}
