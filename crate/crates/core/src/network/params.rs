use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use super::layers::ConvWeights;
use crate::error::{Error, Result};
use crate::signalgen::substream;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub base_filters: usize,
    pub depth: usize,
    pub kernel_size: usize,
    pub pool_size: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl UNetConfig {
    /// Four levels, 64 base filters, kernel 3, pooling by 2.
    pub fn new(in_channels: usize) -> Self {
        Self {
            in_channels,
            base_filters: 64,
            depth: 4,
            kernel_size: 3,
            pool_size: 2,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: alloc::string::String| Err(Error::InvalidConfig(m));
        if self.in_channels == 0 || self.base_filters == 0 {
            return bad("channel and filter counts must be positive".into());
        }
        if self.depth == 0 {
            return bad("depth must be at least 1".into());
        }
        if self.kernel_size.is_multiple_of(2) {
            return bad(format!("kernel_size {} must be odd", self.kernel_size));
        }
        if self.pool_size < 2 {
            return bad(format!("pool_size {} must be at least 2", self.pool_size));
        }
        if !(self.bn_eps > 0.0) || !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) {
            return bad("bn_eps must be positive and bn_momentum in (0, 1)".into());
        }
        Ok(())
    }

    /// Filter count at encoder level `level`; `level == depth` is the bottleneck.
    pub fn filters(&self, level: usize) -> usize {
        self.base_filters << level
    }

    /// Input lengths must be divisible by `pool_size^depth`.
    pub fn length_multiple(&self) -> usize {
        self.pool_size.pow(self.depth as u32)
    }

    pub fn check_input(&self, channels: usize, len: usize) -> Result<()> {
        if channels != self.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "network built for {} channels, got {channels}",
                self.in_channels
            )));
        }
        if len == 0 || !len.is_multiple_of(self.length_multiple()) {
            return Err(Error::ShapeMismatch(format!(
                "length {len} is not a multiple of {}",
                self.length_multiple()
            )));
        }
        Ok(())
    }

    pub fn n_blocks(&self) -> usize {
        4 * self.depth + 2
    }

    /// `(in, out)` channels of conv–BN–ReLU block `k`: encoder levels, bottleneck, then
    /// decoder levels from deepest to shallowest, two blocks each.
    pub fn block_channels(&self, k: usize) -> (usize, usize) {
        let d = self.depth;
        let level = k / 2;
        let first = k.is_multiple_of(2);
        if level <= d {
            let out = self.filters(level);
            let input = match (first, level) {
                (false, _) => out,
                (true, 0) => self.in_channels,
                (true, l) => self.filters(l - 1),
            };
            (input, out)
        } else {
            let l = 2 * d - level;
            let out = self.filters(l);
            (if first { 2 * out } else { out }, out)
        }
    }

    /// `(in, out)` channels of the upsampling step into decoder level `level`.
    pub fn up_channels(&self, level: usize) -> (usize, usize) {
        (self.filters(level + 1), self.filters(level))
    }
}

/// Trainable conv–BN–ReLU weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CbrWeights {
    pub conv: ConvWeights,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Every trainable tensor. Also the type of gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    /// Indexed as in [`UNetConfig::block_channels`].
    pub blocks: Vec<CbrWeights>,
    /// `ups[l]` upsamples into decoder level `l`.
    pub ups: Vec<ConvWeights>,
    /// 1×1 projection back to the input channels.
    pub head: ConvWeights,
}

impl Weights {
    pub fn zeros(config: &UNetConfig) -> Self {
        let blocks = (0..config.n_blocks())
            .map(|k| {
                let (i, o) = config.block_channels(k);
                CbrWeights {
                    conv: ConvWeights::zeros(o, i, config.kernel_size),
                    gamma: vec![0.0; o],
                    beta: vec![0.0; o],
                }
            })
            .collect();
        let ups = (0..config.depth)
            .map(|l| {
                let (i, o) = config.up_channels(l);
                ConvWeights::zeros(o, i, config.pool_size)
            })
            .collect();
        let head = ConvWeights::zeros(config.in_channels, config.filters(0), 1);
        Self { blocks, ups, head }
    }

    /// Canonical tensor order: per block `weight, bias, gamma, beta`; per up `weight, bias`;
    /// then head `weight, bias`.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for b in &self.blocks {
            out.extend([&b.conv.weight[..], &b.conv.bias, &b.gamma, &b.beta]);
        }
        for u in &self.ups {
            out.extend([&u.weight[..], &u.bias]);
        }
        out.extend([&self.head.weight[..], &self.head.bias]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for b in &mut self.blocks {
            out.extend([&mut b.conv.weight[..], &mut b.conv.bias, &mut b.gamma, &mut b.beta]);
        }
        for u in &mut self.ups {
            out.extend([&mut u.weight[..], &mut u.bias]);
        }
        out.extend([&mut self.head.weight[..], &mut self.head.bias]);
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// All values concatenated in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    /// Overwrites values from a flat vector in canonical order.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} parameters",
                flat.len(),
                self.n_params()
            )));
        }
        let mut rest = flat;
        for t in self.tensors_mut() {
            let (head, tail) = rest.split_at(t.len());
            t.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }
}

/// Batch-norm running statistics of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Trainable weights plus the running statistics used at inference.
#[derive(Debug, Clone, PartialEq)]
pub struct UNetParams {
    pub weights: Weights,
    pub stats: Vec<BnStats>,
}

impl UNetParams {
    /// Shape of each checkpoint tensor, padded to four dims, in checkpoint order:
    /// per block `weight, bias, gamma, beta, running_mean, running_var`; per up
    /// `weight, bias`; head `weight, bias`.
    pub fn checkpoint_tensors(&self) -> Vec<([u32; 4], &[f64])> {
        let conv_shape = |c: &ConvWeights| [c.out_ch as u32, c.in_ch as u32, c.kernel as u32, 1];
        let vec_shape = |n: usize| [n as u32, 1, 1, 1];
        let mut out = Vec::new();
        for (b, s) in self.weights.blocks.iter().zip(&self.stats) {
            out.push((conv_shape(&b.conv), &b.conv.weight[..]));
            for t in [&b.conv.bias, &b.gamma, &b.beta, &s.mean, &s.var] {
                out.push((vec_shape(t.len()), &t[..]));
            }
        }
        for c in self.weights.ups.iter().chain(core::iter::once(&self.weights.head)) {
            out.push((conv_shape(c), &c.weight[..]));
            out.push((vec_shape(c.bias.len()), &c.bias[..]));
        }
        out
    }

    pub fn checkpoint_tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        let Weights { blocks, ups, head } = &mut self.weights;
        for (b, s) in blocks.iter_mut().zip(self.stats.iter_mut()) {
            out.push(&mut b.conv.weight);
            out.push(&mut b.conv.bias);
            out.push(&mut b.gamma);
            out.push(&mut b.beta);
            out.push(&mut s.mean);
            out.push(&mut s.var);
        }
        for c in ups.iter_mut().chain(core::iter::once(head)) {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        out
    }
}

/// He-normal kernels (variance `2/fan_in`, `fan_in = in_ch·kernel`), zero biases and
/// shifts, unit scales, running mean 0 and variance 1. Tensors are drawn in canonical order.
pub fn init_params(config: &UNetConfig, seed: u64) -> Result<UNetParams> {
    config.validate()?;
    let mut rng = substream(seed, 0);
    let mut weights = Weights::zeros(config);
    let mut fill = |c: &mut ConvWeights| {
        let std = libm::sqrt(2.0 / (c.in_ch * c.kernel) as f64);
        for w in c.weight.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *w = std * z;
        }
    };
    for b in weights.blocks.iter_mut() {
        fill(&mut b.conv);
        b.gamma.iter_mut().for_each(|g| *g = 1.0);
    }
    for u in weights.ups.iter_mut() {
        fill(u);
    }
    fill(&mut weights.head);
    let stats = weights
        .blocks
        .iter()
        .map(|b| BnStats { mean: vec![0.0; b.gamma.len()], var: vec![1.0; b.gamma.len()] })
        .collect();
    Ok(UNetParams { weights, stats })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filter_ladder() {
        let c = UNetConfig { base_filters: 4, depth: 3, ..UNetConfig::new(8) };
        let channels: Vec<_> = (0..c.n_blocks()).map(|k| c.block_channels(k)).collect();
        assert_eq!(
            channels,
            vec![(8, 4), (4, 4), (4, 8), (8, 8), (8, 16), (16, 16), (16, 32), (32, 32), (32, 16), (16, 16), (16, 8), (8, 8), (8, 4), (4, 4)]
        );
        assert_eq!(c.up_channels(2), (32, 16));
        assert_eq!(c.up_channels(0), (8, 4));
        assert_eq!(c.length_multiple(), 8);
    }

    #[test]
    fn config_validation() {
        assert!(UNetConfig::new(19).validate().is_ok());
        assert!(UNetConfig { kernel_size: 4, ..UNetConfig::new(2) }.validate().is_err());
        assert!(UNetConfig { depth: 0, ..UNetConfig::new(2) }.validate().is_err());
        assert!(UNetConfig { bn_momentum: 1.0, ..UNetConfig::new(2) }.validate().is_err());
    }

    #[test]
    fn init_defaults_and_determinism() {
        let c = UNetConfig { base_filters: 4, depth: 2, ..UNetConfig::new(3) };
        let p = init_params(&c, 11).unwrap();
        assert_eq!(p, init_params(&c, 11).unwrap());
        assert_ne!(p, init_params(&c, 12).unwrap());
        for b in &p.weights.blocks {
            assert!(b.gamma.iter().all(|&g| g == 1.0));
            assert!(b.beta.iter().all(|&g| g == 0.0));
            assert!(b.conv.bias.iter().all(|&g| g == 0.0));
        }
        assert!(p.stats.iter().all(|s| s.mean.iter().all(|&m| m == 0.0) && s.var.iter().all(|&v| v == 1.0)));
    }

    #[test]
    fn init_variance_matches_fan_in() {
        // 64 in × 3 taps × 64 out = 12288 draws in the first bottleneck-side block.
        let c = UNetConfig { base_filters: 32, depth: 1, ..UNetConfig::new(2) };
        let p = init_params(&c, 5).unwrap();
        let conv = &p.weights.blocks[3].conv;
        assert!(conv.weight.len() >= 10_000);
        let n = conv.weight.len() as f64;
        let mean = conv.weight.iter().sum::<f64>() / n;
        let var = conv.weight.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / n;
        let target = 2.0 / (conv.in_ch * conv.kernel) as f64;
        assert!((var / target - 1.0).abs() < 0.2, "{var} vs {target}");
    }

    #[test]
    fn flat_round_trip() {
        let c = UNetConfig { base_filters: 2, depth: 1, ..UNetConfig::new(2) };
        let p = init_params(&c, 1).unwrap();
        let mut w = Weights::zeros(&c);
        w.assign_flat(&p.weights.flatten()).unwrap();
        assert_eq!(w, p.weights);
        assert!(w.assign_flat(&[0.0]).is_err());
    }
}
