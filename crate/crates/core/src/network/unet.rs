use alloc::format;
use alloc::vec::Vec;

use super::layers::{
    batchnorm_backward, batchnorm_infer, batchnorm_train, concat_channels, conv1d, conv1d_backward,
    conv_transpose1d, conv_transpose1d_backward, maxpool1d, maxpool1d_backward, relu_backward_in_place,
    relu_in_place, split_channels, BatchNormCache, FeatureMap, PoolCache,
};
use super::params::{BnStats, CbrWeights, UNetConfig, UNetParams, Weights};
use crate::error::{Error, Result};
use crate::segment::Segment;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; records an activation cache.
    Train,
    /// Running statistics; no cache.
    Infer,
}

#[derive(Debug, Clone)]
struct CbrCache {
    input: FeatureMap,
    bn: BatchNormCache,
    output: FeatureMap,
}

/// Activations recorded by a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    blocks: Vec<Option<CbrCache>>,
    pools: Vec<PoolCache>,
    up_inputs: Vec<Option<FeatureMap>>,
    head_input: FeatureMap,
    output_shape: (usize, usize, usize),
}

impl ForwardCache {
    /// Per-block batch `(mean, var)` from the forward pass.
    pub fn batch_stats(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        self.blocks.iter().map(|b| {
            let bn = &b.as_ref().expect("all blocks cached").bn;
            (&bn.batch_mean[..], &bn.batch_var[..])
        })
    }
}

fn cbr_forward(
    x: FeatureMap,
    w: &CbrWeights,
    stats: &BnStats,
    config: &UNetConfig,
    mode: Mode,
) -> Result<(FeatureMap, Option<CbrCache>)> {
    let z = conv1d(&x, &w.conv)?;
    match mode {
        Mode::Train => {
            let (mut y, bn) = batchnorm_train(&z, &w.gamma, &w.beta, config.bn_eps)?;
            relu_in_place(&mut y);
            let cache = CbrCache { input: x, bn, output: y.clone() };
            Ok((y, Some(cache)))
        }
        Mode::Infer => {
            let mut y = batchnorm_infer(&z, &w.gamma, &w.beta, &stats.mean, &stats.var, config.bn_eps);
            relu_in_place(&mut y);
            Ok((y, None))
        }
    }
}

fn cbr_backward(
    cache: &CbrCache,
    w: &CbrWeights,
    mut grad: FeatureMap,
    need_input: bool,
) -> (Option<FeatureMap>, CbrWeights) {
    relu_backward_in_place(&mut grad, &cache.output);
    let (g_conv, gamma, beta) = batchnorm_backward(&grad, &cache.bn, &w.gamma);
    let (g_in, conv) = conv1d_backward(&cache.input, &w.conv, &g_conv, need_input);
    (g_in, CbrWeights { conv, gamma, beta })
}

/// Runs the U-Net on a `batch × in_channels × t` input.
///
/// Encoder levels apply two conv–BN–ReLU blocks then max pooling, doubling the
/// filter count per level. The bottleneck applies two more blocks. Each decoder
/// level upsamples with a transposed convolution that halves the filters,
/// concatenates `[upsampled, encoder skip]` along channels and applies two
/// blocks. A 1×1 convolution maps back to `in_channels`; there is no output
/// activation.
pub fn forward(
    params: &UNetParams,
    config: &UNetConfig,
    input: &FeatureMap,
    mode: Mode,
) -> Result<(FeatureMap, Option<ForwardCache>)> {
    config.check_input(input.channels, input.len)?;
    let d = config.depth;
    let w = &params.weights;
    if w.blocks.len() != config.n_blocks() || params.stats.len() != config.n_blocks() || w.ups.len() != d {
        return Err(Error::ShapeMismatch("parameters do not match the config".into()));
    }
    let train = mode == Mode::Train;
    let mut block_caches: Vec<Option<CbrCache>> = (0..config.n_blocks()).map(|_| None).collect();
    let mut run = |k: usize, x: FeatureMap| -> Result<FeatureMap> {
        let (y, cache) = cbr_forward(x, &w.blocks[k], &params.stats[k], config, mode)?;
        block_caches[k] = cache;
        Ok(y)
    };

    let mut x = input.clone();
    let mut skips = Vec::with_capacity(d);
    let mut pools = Vec::with_capacity(d);
    for level in 0..d {
        x = run(2 * level, x)?;
        x = run(2 * level + 1, x)?;
        let (pooled, pc) = maxpool1d(&x, config.pool_size)?;
        skips.push(x);
        if train {
            pools.push(pc);
        }
        x = pooled;
    }
    x = run(2 * d, x)?;
    x = run(2 * d + 1, x)?;

    let mut up_inputs: Vec<Option<FeatureMap>> = (0..d).map(|_| None).collect();
    for level in (0..d).rev() {
        let up = conv_transpose1d(&x, &w.ups[level], config.pool_size)?;
        if train {
            up_inputs[level] = Some(x);
        }
        x = concat_channels(&up, &skips[level])?;
        let k = decoder_block(config, level);
        x = run(k, x)?;
        x = run(k + 1, x)?;
    }
    let y = conv1d(&x, &w.head)?;
    let cache = train.then(|| ForwardCache {
        blocks: block_caches,
        pools,
        up_inputs,
        head_input: x,
        output_shape: y.shape(),
    });
    Ok((y, cache))
}

fn decoder_block(config: &UNetConfig, level: usize) -> usize {
    let d = config.depth;
    2 * d + 2 + 2 * (d - 1 - level)
}

/// Exact gradients of every trainable tensor given `dLoss/dOutput`.
pub fn backward(
    params: &UNetParams,
    config: &UNetConfig,
    cache: &ForwardCache,
    grad_out: &FeatureMap,
) -> Result<Weights> {
    if grad_out.shape() != cache.output_shape {
        return Err(Error::StaleCache(format!(
            "gradient shape {:?} vs cached output {:?}",
            grad_out.shape(),
            cache.output_shape
        )));
    }
    if cache.blocks.len() != config.n_blocks() || cache.pools.len() != config.depth {
        return Err(Error::StaleCache("cache was recorded for a different architecture".into()));
    }
    let d = config.depth;
    let w = &params.weights;
    let mut grads = Weights::zeros(config);
    let block = |k: usize| cache.blocks[k].as_ref().ok_or_else(|| Error::StaleCache("missing block activations".into()));

    let (g, head) = conv1d_backward(&cache.head_input, &w.head, grad_out, true);
    grads.head = head;
    let mut g = g.expect("requested");
    let mut skip_grads: Vec<Option<FeatureMap>> = (0..d).map(|_| None).collect();
    for level in 0..d {
        let k = decoder_block(config, level);
        for kk in [k + 1, k] {
            let (gi, gw) = cbr_backward(block(kk)?, &w.blocks[kk], g, true);
            grads.blocks[kk] = gw;
            g = gi.expect("requested");
        }
        let (g_up, g_skip) = split_channels(&g, config.filters(level));
        skip_grads[level] = Some(g_skip);
        let up_in = cache.up_inputs[level]
            .as_ref()
            .ok_or_else(|| Error::StaleCache("missing upsampling input".into()))?;
        let (gi, gw) = conv_transpose1d_backward(up_in, &w.ups[level], &g_up, config.pool_size)?;
        grads.ups[level] = gw;
        g = gi;
    }
    for kk in [2 * d + 1, 2 * d] {
        let (gi, gw) = cbr_backward(block(kk)?, &w.blocks[kk], g, true);
        grads.blocks[kk] = gw;
        g = gi.expect("requested");
    }
    for level in (0..d).rev() {
        g = maxpool1d_backward(&g, &cache.pools[level]);
        let skip = skip_grads[level].take().expect("set above");
        g.data.iter_mut().zip(&skip.data).for_each(|(a, b)| *a += b);
        let (gi, gw) = cbr_backward(block(2 * level + 1)?, &w.blocks[2 * level + 1], g, true);
        grads.blocks[2 * level + 1] = gw;
        let (gi, gw) = cbr_backward(block(2 * level)?, &w.blocks[2 * level], gi.expect("requested"), level > 0);
        grads.blocks[2 * level] = gw;
        g = match gi {
            Some(gi) => gi,
            None => break,
        };
    }
    Ok(grads)
}

/// Folds a training pass's batch statistics into the running statistics:
/// `running ← (1 − momentum)·running + momentum·batch`, variance biased.
pub fn update_running_stats(params: &mut UNetParams, cache: &ForwardCache, momentum: f64) {
    for (stats, (mean, var)) in params.stats.iter_mut().zip(cache.batch_stats()) {
        for (r, b) in stats.mean.iter_mut().zip(mean) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
        for (r, b) in stats.var.iter_mut().zip(var) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
    }
}

/// Stacks equally shaped segments into one batch.
pub fn stack(segments: &[&Segment]) -> Result<FeatureMap> {
    let first = segments.first().ok_or(Error::EmptyDataset)?;
    let (c, t) = first.shape();
    let mut data = Vec::with_capacity(segments.len() * c * t);
    for s in segments {
        first.same_shape(s)?;
        data.extend_from_slice(s.data());
    }
    FeatureMap::new(segments.len(), c, t, data)
}

/// Splits a batch back into segments at sampling rate `fs`.
pub fn unstack(batch: &FeatureMap, fs: f64) -> Result<Vec<Segment>> {
    (0..batch.batch)
        .map(|b| Segment::new(batch.channels, batch.len, fs, batch.sample(b).to_vec()))
        .collect()
}

/// Inference on a list of segments, `chunk` at a time. Inference treats samples
/// independently, so the chunk size does not change the result.
pub fn infer_segments(
    params: &UNetParams,
    config: &UNetConfig,
    segments: &[&Segment],
    chunk: usize,
) -> Result<Vec<Segment>> {
    let mut out = Vec::with_capacity(segments.len());
    for part in segments.chunks(chunk.max(1)) {
        let (y, _) = forward(params, config, &stack(part)?, Mode::Infer)?;
        out.extend(unstack(&y, part[0].fs())?);
    }
    Ok(out)
}

/// Reconstructs a single segment.
pub fn denoise(params: &UNetParams, config: &UNetConfig, seg: &Segment) -> Result<Segment> {
    Ok(infer_segments(params, config, &[seg], 1)?.remove(0))
}
