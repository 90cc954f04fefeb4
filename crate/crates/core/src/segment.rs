use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Smallest segment length: the second difference must be defined.
pub const MIN_LEN: usize = 4;

/// A `channels × len` block of samples recorded at `fs` Hz, row-major by channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    channels: usize,
    len: usize,
    fs: f64,
    data: Vec<f64>,
}

impl Segment {
    pub fn new(channels: usize, len: usize, fs: f64, data: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidSegment("zero channels".into()));
        }
        if len < MIN_LEN {
            return Err(Error::InvalidSegment(format!(
                "length {len} is below the minimum of {MIN_LEN}"
            )));
        }
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(Error::InvalidSegment(format!("sampling rate {fs} must be positive")));
        }
        if data.len() != channels * len {
            return Err(Error::InvalidSegment(format!(
                "{} values do not fill {channels}x{len}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSegment(format!(
                "non-finite value at channel {}, sample {}",
                pos / len,
                pos % len
            )));
        }
        Ok(Self { channels, len, fs, data })
    }

    /// Builds a segment from equal-length channel rows.
    pub fn from_rows(rows: &[Vec<f64>], fs: f64) -> Result<Self> {
        let len = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != len) {
            return Err(Error::InvalidSegment("rows have unequal lengths".into()));
        }
        Self::new(rows.len(), len, fs, rows.concat())
    }

    pub fn zeros(channels: usize, len: usize, fs: f64) -> Result<Self> {
        Self::new(channels, len, fs, vec![0.0; channels * len])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.len
    }

    /// Always false; segments hold at least `MIN_LEN` samples.
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.channels, self.len)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, i: usize) -> &[f64] {
        &self.data[i * self.len..(i + 1) * self.len]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.len)
    }

    /// Replaces the samples, keeping the shape. Values must stay finite.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Self::new(self.channels, self.len, self.fs, data)
    }

    pub fn same_shape(&self, other: &Segment) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} vs {}x{}",
                self.channels, self.len, other.channels, other.len
            )));
        }
        Ok(())
    }

    /// Samples `[start, start + len)` of every channel.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.len {
            return Err(Error::ShapeMismatch(format!(
                "window [{start}, {}) exceeds length {}",
                start + len,
                self.len
            )));
        }
        let mut data = Vec::with_capacity(self.channels * len);
        for row in self.rows() {
            data.extend_from_slice(&row[start..start + len]);
        }
        Self::new(self.channels, len, self.fs, data)
    }
}

/// A training example: network input and reconstruction target of equal shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub noisy: Segment,
    pub clean: Segment,
}

impl Pair {
    pub fn new(noisy: Segment, clean: Segment) -> Result<Self> {
        noisy.same_shape(&clean)?;
        Ok(Self { noisy, clean })
    }

    /// Self-reconstruction pair: input and target are the same segment.
    pub fn identity(seg: Segment) -> Self {
        Self { noisy: seg.clone(), clean: seg }
    }
}
