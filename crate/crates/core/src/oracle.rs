//! Brute-force reference implementations for tests. Nothing here calls the
//! production layers, losses or transforms; the only shared items are the
//! data containers and the seeded RNG streams.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::mixture::{Decomposition, Matrix};
use crate::network::{UNetConfig, UNetParams};
use crate::segment::Segment;
use crate::signalgen::substream;

/// `[batch][channel][time]`.
pub type Tensor3 = Vec<Vec<Vec<f64>>>;

/// Central differences `(f(p + h·eᵢ) − f(p − h·eᵢ)) / 2h` for every coordinate.
pub fn fd_gradient(f: &mut dyn FnMut(&[f64]) -> f64, point: &[f64], h: f64) -> Vec<f64> {
    let mut p = point.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Direct `O(n²)` DFT.
pub fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(j, &v)| {
                    let theta = -2.0 * PI * ((j * k) % n) as f64 / n as f64;
                    v * Complex64::new(libm::cos(theta), libm::sin(theta))
                })
                .sum()
        })
        .collect()
}

/// Z-scored band PSD of one channel via the direct DFT.
pub fn naive_psd_z(x: &[f64], fs: f64) -> Vec<f64> {
    let n = x.len();
    let spec = naive_dft(&x.iter().map(|&v| Complex64::new(v, 0.0)).collect::<Vec<_>>());
    let p: Vec<f64> = (0..=n / 2)
        .filter(|&k| {
            let f = k as f64 * fs / n as f64;
            (1.0 - 1e-9..=50.0 + 1e-9).contains(&f)
        })
        .map(|k| spec[k].norm_sqr() / (fs * n as f64))
        .collect();
    let mean = p.iter().sum::<f64>() / p.len() as f64;
    let std = libm::sqrt(p.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / p.len() as f64);
    p.iter().map(|v| (v - mean) / std).collect()
}

/// Scalar loops for the four loss terms of one `c×t` pair, given as rows.
pub fn naive_losses(y: &[Vec<f64>], x: &[Vec<f64>], fs: f64) -> [f64; 4] {
    let c = y.len() as f64;
    let t = y[0].len();
    let (mut amp, mut vel, mut acc, mut freq) = (0.0, 0.0, 0.0, 0.0);
    let mut l = 0;
    for i in 0..y.len() {
        for j in 0..t {
            amp += (y[i][j] - x[i][j]) * (y[i][j] - x[i][j]);
        }
        for j in 0..t - 1 {
            let d = (y[i][j + 1] - y[i][j]) - (x[i][j + 1] - x[i][j]);
            vel += d * d;
        }
        for j in 0..t - 2 {
            let d = (y[i][j + 2] - 2.0 * y[i][j + 1] + y[i][j]) - (x[i][j + 2] - 2.0 * x[i][j + 1] + x[i][j]);
            acc += d * d;
        }
        let fy = naive_psd_z(&y[i], fs);
        let fx = naive_psd_z(&x[i], fs);
        l = fy.len();
        for k in 0..l {
            freq += (fy[k] - fx[k]) * (fy[k] - fx[k]);
        }
    }
    [
        amp / (c * t as f64),
        vel / (c * (t - 1) as f64),
        acc / (c * (t - 2) as f64),
        freq / (c * l as f64),
    ]
}

/// Dense `A·S` with the columns outside `keep` zeroed.
pub fn dense_masked_product(a: &[Vec<f64>], s: &[Vec<f64>], keep: &[bool]) -> Vec<Vec<f64>> {
    let c = a.len();
    let t = s[0].len();
    let mut out = vec![vec![0.0; t]; c];
    for i in 0..c {
        for j in 0..t {
            for k in 0..s.len() {
                if keep[k] {
                    out[i][j] += a[i][k] * s[k][j];
                }
            }
        }
    }
    out
}

/// Same-padded stride-1 cross-correlation, weights `[o][i][k]`.
pub fn naive_conv(x: &[Vec<f64>], w: &[f64], bias: &[f64], k: usize) -> Vec<Vec<f64>> {
    let in_ch = x.len();
    let t = x[0].len();
    let pad = (k / 2) as isize;
    (0..bias.len())
        .map(|o| {
            (0..t)
                .map(|n| {
                    let mut s = bias[o];
                    for i in 0..in_ch {
                        for j in 0..k {
                            let idx = n as isize + j as isize - pad;
                            if idx >= 0 && (idx as usize) < t {
                                s += w[(o * in_ch + i) * k + j] * x[i][idx as usize];
                            }
                        }
                    }
                    s
                })
                .collect()
        })
        .collect()
}

/// Transposed convolution by explicit scatter, weights `[o][i][j]`, kernel = stride.
pub fn naive_conv_transpose(x: &[Vec<f64>], w: &[f64], bias: &[f64], stride: usize) -> Vec<Vec<f64>> {
    let in_ch = x.len();
    let t = x[0].len();
    let mut out: Vec<Vec<f64>> = bias.iter().map(|&b| vec![b; t * stride]).collect();
    for (o, row) in out.iter_mut().enumerate() {
        for i in 0..in_ch {
            for n in 0..t {
                for j in 0..stride {
                    row[n * stride + j] += w[(o * in_ch + i) * stride + j] * x[i][n];
                }
            }
        }
    }
    out
}

/// Batch normalization over `[batch][time]` per channel, then ReLU.
fn naive_bn_relu(
    x: &Tensor3,
    gamma: &[f64],
    beta: &[f64],
    stats: Option<(&[f64], &[f64])>,
    eps: f64,
) -> Tensor3 {
    let b = x.len();
    let c = x[0].len();
    let t = x[0][0].len();
    let mut out = x.clone();
    for ch in 0..c {
        let (mean, var) = match stats {
            Some((m, v)) => (m[ch], v[ch]),
            None => {
                let mut s = 0.0;
                for n in 0..b {
                    for j in 0..t {
                        s += x[n][ch][j];
                    }
                }
                let mean = s / (b * t) as f64;
                let mut v = 0.0;
                for n in 0..b {
                    for j in 0..t {
                        v += (x[n][ch][j] - mean) * (x[n][ch][j] - mean);
                    }
                }
                (mean, v / (b * t) as f64)
            }
        };
        for n in 0..b {
            for j in 0..t {
                let y = gamma[ch] * (x[n][ch][j] - mean) / libm::sqrt(var + eps) + beta[ch];
                out[n][ch][j] = if y > 0.0 { y } else { 0.0 };
            }
        }
    }
    out
}

fn naive_pool(x: &[Vec<f64>], p: usize) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| {
            (0..row.len() / p)
                .map(|n| {
                    let mut m = f64::NEG_INFINITY;
                    for j in 0..p {
                        if row[n * p + j] > m {
                            m = row[n * p + j];
                        }
                    }
                    m
                })
                .collect()
        })
        .collect()
}

/// Reference U-Net forward pass. `train` selects batch statistics over running ones.
pub fn naive_forward(params: &UNetParams, config: &UNetConfig, input: &Tensor3, train: bool) -> Tensor3 {
    let w = &params.weights;
    let d = config.depth;
    let eps = config.bn_eps;
    let cbr = |k: usize, x: &Tensor3| -> Tensor3 {
        let blk = &w.blocks[k];
        let conv: Tensor3 = x
            .iter()
            .map(|s| naive_conv(s, &blk.conv.weight, &blk.conv.bias, blk.conv.kernel))
            .collect();
        let stats = (!train).then(|| (&params.stats[k].mean[..], &params.stats[k].var[..]));
        naive_bn_relu(&conv, &blk.gamma, &blk.beta, stats, eps)
    };
    let mut x = input.clone();
    let mut skips = Vec::new();
    for level in 0..d {
        x = cbr(2 * level, &x);
        x = cbr(2 * level + 1, &x);
        skips.push(x.clone());
        x = x.iter().map(|s| naive_pool(s, config.pool_size)).collect();
    }
    x = cbr(2 * d, &x);
    x = cbr(2 * d + 1, &x);
    for level in (0..d).rev() {
        let up = &w.ups[level];
        x = x
            .iter()
            .zip(&skips[level])
            .map(|(s, skip)| {
                let mut u = naive_conv_transpose(s, &up.weight, &up.bias, config.pool_size);
                u.extend(skip.iter().cloned());
                u
            })
            .collect();
        let k = 2 * d + 2 + 2 * (d - 1 - level);
        x = cbr(k, &x);
        x = cbr(k + 1, &x);
    }
    x.iter().map(|s| naive_conv(s, &w.head.weight, &w.head.bias, 1)).collect()
}

/// Random decomposition with `c` ICs of length `t`. Class rows are random points
/// on the simplex; about a third of the ICs put more than 0.8 on Brain.
pub fn random_decomposition(seed: u64, c: usize, t: usize, fs: f64) -> Decomposition {
    let mut rng = substream(seed, 0);
    let sources = Segment::new(c, t, fs, (0..c * t).map(|_| rng.sample(StandardNormal)).collect())
        .expect("finite");
    let mixing = Matrix::new(c, c, (0..c * c).map(|_| rng.sample(StandardNormal)).collect()).expect("square");
    let mut probs = Vec::with_capacity(c * 7);
    for _ in 0..c {
        let mut row: Vec<f64> = (0..7).map(|_| rng.random_range(0.01..1.0)).collect();
        if rng.random_range(0.0..1.0) < 1.0 / 3.0 {
            row[0] = 40.0;
        }
        let sum: f64 = row.iter().sum();
        probs.extend(row.iter().map(|p| p / sum));
    }
    let class_probs = Matrix::new(c, 7, probs).expect("c x 7");
    Decomposition::new(sources, mixing, class_probs).expect("valid by construction")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_of_square() {
        let g = fd_gradient(&mut |p| p[0] * p[0], &[3.0], 1e-5);
        assert!((g[0] - 6.0).abs() < 1e-9);
        let g = fd_gradient(&mut |p| 2.0 * p[0] - 5.0 * p[1], &[0.3, -1.0], 1e-5);
        assert!((g[0] - 2.0).abs() < 1e-9 && (g[1] + 5.0).abs() < 1e-9);
    }

    #[test]
    fn dft_of_impulse_and_constant() {
        let mut x = vec![Complex64::new(0.0, 0.0); 8];
        x[0] = Complex64::new(1.0, 0.0);
        assert!(naive_dft(&x).iter().all(|v| (v - Complex64::new(1.0, 0.0)).norm() < 1e-12));
        let c = vec![Complex64::new(2.0, 0.0); 8];
        let s = naive_dft(&c);
        assert!((s[0].re - 16.0).abs() < 1e-12);
        assert!(s[1..].iter().all(|v| v.norm() < 1e-12));
    }
}
