//! Batched 1D layer primitives and their backward passes.
//!
//! Reductions over the batch always run in ascending sample order, so
//! gradients are bit-reproducible.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// A batch of multichannel sequences, `batch × channels × len`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub batch: usize,
    pub channels: usize,
    pub len: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(batch: usize, channels: usize, len: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != batch * channels * len {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {batch}x{channels}x{len} feature map",
                data.len()
            )));
        }
        Ok(Self { batch, channels, len, data })
    }

    pub fn zeros(batch: usize, channels: usize, len: usize) -> Self {
        Self { batch, channels, len, data: vec![0.0; batch * channels * len] }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.batch, self.channels, self.len)
    }

    pub fn sample(&self, b: usize) -> &[f64] {
        let n = self.channels * self.len;
        &self.data[b * n..(b + 1) * n]
    }

    pub fn row(&self, b: usize, c: usize) -> &[f64] {
        let start = (b * self.channels + c) * self.len;
        &self.data[start..start + self.len]
    }

    pub fn row_mut(&mut self, b: usize, c: usize) -> &mut [f64] {
        let start = (b * self.channels + c) * self.len;
        &mut self.data[start..start + self.len]
    }
}

/// Convolution weights `[out][in][kernel]` plus one bias per output channel.
///
/// Transposed convolutions use the same layout: `weight[o][i][j]` carries
/// input channel `i` to output channel `o` at kernel tap `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    pub out_ch: usize,
    pub in_ch: usize,
    pub kernel: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvWeights {
    pub fn zeros(out_ch: usize, in_ch: usize, kernel: usize) -> Self {
        Self {
            out_ch,
            in_ch,
            kernel,
            weight: vec![0.0; out_ch * in_ch * kernel],
            bias: vec![0.0; out_ch],
        }
    }

    pub fn new(out_ch: usize, in_ch: usize, kernel: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weight.len() != out_ch * in_ch * kernel || bias.len() != out_ch {
            return Err(Error::ShapeMismatch(format!(
                "conv weights {} / bias {} do not fit {out_ch}x{in_ch}x{kernel}",
                weight.len(),
                bias.len()
            )));
        }
        Ok(Self { out_ch, in_ch, kernel, weight, bias })
    }
}

/// Strided matrix view: element `(r, c)` lives at `offset + r·rs + c·cs`.
#[derive(Clone, Copy)]
struct View {
    rows: usize,
    cols: usize,
    offset: usize,
    rs: usize,
    cs: usize,
}

impl View {
    fn dense(rows: usize, cols: usize) -> Self {
        Self { rows, cols, offset: 0, rs: cols, cs: 1 }
    }

    fn transposed(self) -> Self {
        Self { rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs, ..self }
    }

    /// One past the largest index the view touches.
    fn extent(self) -> usize {
        self.offset + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs + 1
    }
}

/// `C ← A·B + beta·C`, single-threaded with a fixed blocking, so results are
/// reproducible run to run on a given machine.
fn gemm(a: &[f64], av: View, b: &[f64], bv: View, beta: f64, c: &mut [f64], cv: View) {
    assert!(av.cols == bv.rows && av.rows == cv.rows && bv.cols == cv.cols, "gemm dimension mismatch");
    if cv.rows == 0 || cv.cols == 0 {
        return;
    }
    if av.cols == 0 {
        for r in 0..cv.rows {
            for q in 0..cv.cols {
                c[cv.offset + r * cv.rs + q * cv.cs] *= beta;
            }
        }
        return;
    }
    assert!(av.extent() <= a.len() && bv.extent() <= b.len() && cv.extent() <= c.len(), "gemm view out of bounds");
    // SAFETY: every index reachable through the three views was bounds-checked
    // above, and `c` is a unique borrow so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            cv.rows,
            av.cols,
            cv.cols,
            1.0,
            a.as_ptr().add(av.offset),
            av.rs as isize,
            av.cs as isize,
            b.as_ptr().add(bv.offset),
            bv.rs as isize,
            bv.cs as isize,
            beta,
            c.as_mut_ptr().add(cv.offset),
            cv.rs as isize,
            cv.cs as isize,
        );
    }
}

/// `(in·kernel) × len` patch matrix of one sample: row `i·kernel + j` holds
/// channel `i` shifted by `j − kernel/2`, zero-padded.
fn im2col(sample: &[f64], channels: usize, len: usize, kernel: usize, col: &mut [f64]) {
    let pad = kernel / 2;
    for i in 0..channels {
        let src = &sample[i * len..(i + 1) * len];
        for j in 0..kernel {
            let dst = &mut col[(i * kernel + j) * len..(i * kernel + j + 1) * len];
            if j >= pad {
                let off = j - pad;
                dst[..len - off].copy_from_slice(&src[off..]);
                dst[len - off..].iter_mut().for_each(|v| *v = 0.0);
            } else {
                let off = pad - j;
                dst[..off].iter_mut().for_each(|v| *v = 0.0);
                dst[off..].copy_from_slice(&src[..len - off]);
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch rows back onto the sample.
fn col2im_add(col: &[f64], channels: usize, len: usize, kernel: usize, sample: &mut [f64]) {
    let pad = kernel / 2;
    for i in 0..channels {
        let dst = &mut sample[i * len..(i + 1) * len];
        for j in 0..kernel {
            let src = &col[(i * kernel + j) * len..(i * kernel + j + 1) * len];
            if j >= pad {
                let off = j - pad;
                dst[off..].iter_mut().zip(&src[..len - off]).for_each(|(d, s)| *d += s);
            } else {
                let off = pad - j;
                dst[..len - off].iter_mut().zip(&src[off..]).for_each(|(d, s)| *d += s);
            }
        }
    }
}

/// Stride-1 cross-correlation with zero "same" padding; the kernel must be odd.
pub fn conv1d(input: &FeatureMap, w: &ConvWeights) -> Result<FeatureMap> {
    if input.channels != w.in_ch {
        return Err(Error::ShapeMismatch(format!(
            "conv expects {} input channels, got {}",
            w.in_ch, input.channels
        )));
    }
    if w.kernel.is_multiple_of(2) {
        return Err(Error::ShapeMismatch(format!("same-padded conv needs an odd kernel, got {}", w.kernel)));
    }
    let (len, patch) = (input.len, w.in_ch * w.kernel);
    let mut out = FeatureMap::zeros(input.batch, w.out_ch, len);
    let mut col = vec![0.0; patch * len];
    for b in 0..input.batch {
        im2col(input.sample(b), w.in_ch, len, w.kernel, &mut col);
        let dst = &mut out.data[b * w.out_ch * len..(b + 1) * w.out_ch * len];
        for (row, &bias) in dst.chunks_exact_mut(len).zip(&w.bias) {
            row.iter_mut().for_each(|v| *v = bias);
        }
        gemm(&w.weight, View::dense(w.out_ch, patch), &col, View::dense(patch, len), 1.0, dst, View::dense(w.out_ch, len));
    }
    Ok(out)
}

/// Gradients of [`conv1d`]. `grad_input` is skipped when `need_input` is false.
pub fn conv1d_backward(
    input: &FeatureMap,
    w: &ConvWeights,
    grad_out: &FeatureMap,
    need_input: bool,
) -> (Option<FeatureMap>, ConvWeights) {
    let (len, patch) = (input.len, w.in_ch * w.kernel);
    let mut grads = ConvWeights::zeros(w.out_ch, w.in_ch, w.kernel);
    let mut grad_in = need_input.then(|| FeatureMap::zeros(input.batch, input.channels, input.len));
    let mut col = vec![0.0; patch * len];
    let mut dcol = vec![0.0; if need_input { patch * len } else { 0 }];
    let g_view = View::dense(w.out_ch, len);
    for b in 0..input.batch {
        let g = grad_out.sample(b);
        for (gb, row) in grads.bias.iter_mut().zip(g.chunks_exact(len)) {
            *gb += row.iter().sum::<f64>();
        }
        im2col(input.sample(b), w.in_ch, len, w.kernel, &mut col);
        gemm(g, g_view, &col, View::dense(patch, len).transposed(), 1.0, &mut grads.weight, View::dense(w.out_ch, patch));
        if let Some(gi) = grad_in.as_mut() {
            gemm(&w.weight, View::dense(w.out_ch, patch).transposed(), g, g_view, 0.0, &mut dcol, View::dense(patch, len));
            let dst = &mut gi.data[b * w.in_ch * len..(b + 1) * w.in_ch * len];
            col2im_add(&dcol, w.in_ch, len, w.kernel, dst);
        }
    }
    (grad_in, grads)
}

/// Per-channel batch normalization state saved for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormCache {
    pub normalized: FeatureMap,
    pub inv_std: Vec<f64>,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

/// Training-mode batch normalization over `(batch, time)` with biased variance.
pub fn batchnorm_train(
    input: &FeatureMap,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> Result<(FeatureMap, BatchNormCache)> {
    let count = input.batch * input.len;
    if count < 2 {
        return Err(Error::DegenerateBatch(format!(
            "{} values per feature; need at least 2",
            count
        )));
    }
    if gamma.len() != input.channels || beta.len() != input.channels {
        return Err(Error::ShapeMismatch("batchnorm parameter count".into()));
    }
    let n = count as f64;
    let mut normalized = FeatureMap::zeros(input.batch, input.channels, input.len);
    let mut out = FeatureMap::zeros(input.batch, input.channels, input.len);
    let mut inv_stds = Vec::with_capacity(input.channels);
    let mut means = Vec::with_capacity(input.channels);
    let mut vars = Vec::with_capacity(input.channels);
    for c in 0..input.channels {
        let mean = (0..input.batch).map(|b| input.row(b, c).iter().sum::<f64>()).sum::<f64>() / n;
        let var = (0..input.batch)
            .map(|b| input.row(b, c).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>())
            .sum::<f64>()
            / n;
        let inv_std = 1.0 / libm::sqrt(var + eps);
        for b in 0..input.batch {
            let src = input.row(b, c);
            let xh = normalized.row_mut(b, c);
            for (h, v) in xh.iter_mut().zip(src) {
                *h = (v - mean) * inv_std;
            }
            let start = (b * input.channels + c) * input.len;
            for (o, h) in out.data[start..start + input.len].iter_mut().zip(normalized.row(b, c)) {
                *o = gamma[c] * h + beta[c];
            }
        }
        inv_stds.push(inv_std);
        means.push(mean);
        vars.push(var);
    }
    Ok((out, BatchNormCache { normalized, inv_std: inv_stds, batch_mean: means, batch_var: vars }))
}

/// Inference-mode batch normalization with running statistics.
pub fn batchnorm_infer(
    input: &FeatureMap,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
) -> FeatureMap {
    let mut out = input.clone();
    for b in 0..input.batch {
        for c in 0..input.channels {
            let scale = gamma[c] / libm::sqrt(running_var[c] + eps);
            let shift = beta[c] - running_mean[c] * scale;
            out.row_mut(b, c).iter_mut().for_each(|v| *v = *v * scale + shift);
        }
    }
    out
}

/// Returns `(grad_input, grad_gamma, grad_beta)`.
pub fn batchnorm_backward(
    grad_out: &FeatureMap,
    cache: &BatchNormCache,
    gamma: &[f64],
) -> (FeatureMap, Vec<f64>, Vec<f64>) {
    let (batch, channels, len) = grad_out.shape();
    let n = (batch * len) as f64;
    let mut grad_in = FeatureMap::zeros(batch, channels, len);
    let mut dgamma = vec![0.0; channels];
    let mut dbeta = vec![0.0; channels];
    for c in 0..channels {
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for b in 0..batch {
            let g = grad_out.row(b, c);
            sum_g += g.iter().sum::<f64>();
            sum_gx += g.iter().zip(cache.normalized.row(b, c)).map(|(g, h)| g * h).sum::<f64>();
        }
        dgamma[c] = sum_gx;
        dbeta[c] = sum_g;
        let k = gamma[c] * cache.inv_std[c];
        let mean_g = sum_g / n;
        let mean_gx = sum_gx / n;
        for b in 0..batch {
            let g = grad_out.row(b, c);
            let h = cache.normalized.row(b, c);
            let start = (b * channels + c) * len;
            for ((d, g), h) in grad_in.data[start..start + len].iter_mut().zip(g).zip(h) {
                *d = k * (g - mean_g - h * mean_gx);
            }
        }
    }
    (grad_in, dgamma, dbeta)
}

pub fn relu_in_place(x: &mut FeatureMap) {
    x.data.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Zeroes gradient entries where the ReLU output was not positive.
pub fn relu_backward_in_place(grad: &mut FeatureMap, output: &FeatureMap) {
    for (g, y) in grad.data.iter_mut().zip(&output.data) {
        if *y <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Non-overlapping max pooling; `argmax` holds the winning input index per output.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolCache {
    pub input_len: usize,
    pub argmax: Vec<u32>,
}

pub fn maxpool1d(input: &FeatureMap, pool: usize) -> Result<(FeatureMap, PoolCache)> {
    if pool == 0 || !input.len.is_multiple_of(pool) {
        return Err(Error::ShapeMismatch(format!(
            "length {} is not divisible by pool size {pool}",
            input.len
        )));
    }
    let out_len = input.len / pool;
    let mut out = FeatureMap::zeros(input.batch, input.channels, out_len);
    let mut argmax = Vec::with_capacity(out.data.len());
    for (src, dst) in input.data.chunks_exact(input.len).zip(out.data.chunks_exact_mut(out_len)) {
        for (x, d) in dst.iter_mut().enumerate() {
            let window = &src[x * pool..(x + 1) * pool];
            let mut best = 0;
            for (k, v) in window.iter().enumerate().skip(1) {
                // strict: ties keep the first index
                if *v > window[best] {
                    best = k;
                }
            }
            *d = window[best];
            argmax.push((x * pool + best) as u32);
        }
    }
    Ok((out, PoolCache { input_len: input.len, argmax }))
}

pub fn maxpool1d_backward(grad_out: &FeatureMap, cache: &PoolCache) -> FeatureMap {
    let mut grad_in = FeatureMap::zeros(grad_out.batch, grad_out.channels, cache.input_len);
    let rows = grad_in.data.chunks_exact_mut(cache.input_len);
    for ((dst, g), idx) in rows
        .zip(grad_out.data.chunks_exact(grad_out.len))
        .zip(cache.argmax.chunks_exact(grad_out.len))
    {
        for (g, &i) in g.iter().zip(idx) {
            dst[i as usize] += g;
        }
    }
    grad_in
}

fn check_transposed(input_channels: usize, w: &ConvWeights, stride: usize) -> Result<()> {
    if input_channels != w.in_ch {
        return Err(Error::ShapeMismatch(format!(
            "transposed conv expects {} input channels, got {input_channels}",
            w.in_ch
        )));
    }
    if w.kernel != stride || stride == 0 {
        return Err(Error::ShapeMismatch(format!(
            "transposed conv needs kernel == stride, got {} and {stride}",
            w.kernel
        )));
    }
    Ok(())
}

/// Tap `j` of a kernel-equals-stride weight tensor as an `out × in` matrix.
fn tap_view(w: &ConvWeights, j: usize) -> View {
    View { rows: w.out_ch, cols: w.in_ch, offset: j, rs: w.in_ch * w.kernel, cs: w.kernel }
}

/// Phase `j` of a `channels × (len·stride)` sample: columns `x·stride + j`.
fn phase_view(channels: usize, len: usize, stride: usize, j: usize) -> View {
    View { rows: channels, cols: len, offset: j, rs: len * stride, cs: stride }
}

/// Transposed convolution with kernel size equal to `stride`; output length `len·stride`:
/// `out[o][x·stride + j] = bias[o] + Σ_i w[o][i][j] · input[i][x]`.
pub fn conv_transpose1d(input: &FeatureMap, w: &ConvWeights, stride: usize) -> Result<FeatureMap> {
    check_transposed(input.channels, w, stride)?;
    let (len, out_len) = (input.len, input.len * stride);
    let mut out = FeatureMap::zeros(input.batch, w.out_ch, out_len);
    for b in 0..input.batch {
        let dst = &mut out.data[b * w.out_ch * out_len..(b + 1) * w.out_ch * out_len];
        for (row, &bias) in dst.chunks_exact_mut(out_len).zip(&w.bias) {
            row.iter_mut().for_each(|v| *v = bias);
        }
        for j in 0..stride {
            let x = input.sample(b);
            gemm(&w.weight, tap_view(w, j), x, View::dense(w.in_ch, len), 1.0, dst, phase_view(w.out_ch, len, stride, j));
        }
    }
    Ok(out)
}

/// Strided convolution without padding or bias, the adjoint of [`conv_transpose1d`]:
/// `out[i][x] = Σ_o Σ_j w[o][i][j] · input[o][x·stride + j]`.
pub fn conv1d_strided(input: &FeatureMap, w: &ConvWeights, stride: usize) -> Result<FeatureMap> {
    if input.channels != w.out_ch {
        return Err(Error::ShapeMismatch(format!(
            "strided conv expects {} channels, got {}",
            w.out_ch, input.channels
        )));
    }
    if w.kernel != stride || stride == 0 || !input.len.is_multiple_of(stride) {
        return Err(Error::ShapeMismatch("strided conv needs kernel == stride dividing the length".into()));
    }
    let out_len = input.len / stride;
    let mut out = FeatureMap::zeros(input.batch, w.in_ch, out_len);
    for b in 0..input.batch {
        let dst = &mut out.data[b * w.in_ch * out_len..(b + 1) * w.in_ch * out_len];
        for j in 0..stride {
            let a = tap_view(w, j).transposed();
            gemm(&w.weight, a, input.sample(b), phase_view(w.out_ch, out_len, stride, j), 1.0, dst, View::dense(w.in_ch, out_len));
        }
    }
    Ok(out)
}

/// Gradients of [`conv_transpose1d`]: `(grad_input, weight/bias grads)`.
pub fn conv_transpose1d_backward(
    input: &FeatureMap,
    w: &ConvWeights,
    grad_out: &FeatureMap,
    stride: usize,
) -> Result<(FeatureMap, ConvWeights)> {
    let grad_in = conv1d_strided(grad_out, w, stride)?;
    let mut grads = ConvWeights::zeros(w.out_ch, w.in_ch, w.kernel);
    let len = input.len;
    for b in 0..input.batch {
        let g = grad_out.sample(b);
        for (gb, row) in grads.bias.iter_mut().zip(g.chunks_exact(len * stride)) {
            *gb += row.iter().sum::<f64>();
        }
        for j in 0..stride {
            let xt = View::dense(w.in_ch, len).transposed();
            gemm(g, phase_view(w.out_ch, len, stride, j), input.sample(b), xt, 1.0, &mut grads.weight, tap_view(w, j));
        }
    }
    Ok((grad_in, grads))
}

/// Stacks `a` then `b` along the channel axis.
pub fn concat_channels(a: &FeatureMap, b: &FeatureMap) -> Result<FeatureMap> {
    if a.batch != b.batch || a.len != b.len {
        return Err(Error::ShapeMismatch(format!(
            "cannot concatenate {:?} with {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    for n in 0..a.batch {
        data.extend_from_slice(a.sample(n));
        data.extend_from_slice(b.sample(n));
    }
    FeatureMap::new(a.batch, a.channels + b.channels, a.len, data)
}

/// Inverse of [`concat_channels`] for gradients.
pub fn split_channels(x: &FeatureMap, first: usize) -> (FeatureMap, FeatureMap) {
    let second = x.channels - first;
    let mut a = Vec::with_capacity(x.batch * first * x.len);
    let mut b = Vec::with_capacity(x.batch * second * x.len);
    for n in 0..x.batch {
        let s = x.sample(n);
        a.extend_from_slice(&s[..first * x.len]);
        b.extend_from_slice(&s[first * x.len..]);
    }
    (
        FeatureMap { batch: x.batch, channels: first, len: x.len, data: a },
        FeatureMap { batch: x.batch, channels: second, len: x.len, data: b },
    )
}
