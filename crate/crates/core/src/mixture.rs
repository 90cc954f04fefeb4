//! Clean/noisy training pairs synthesized from precomputed independent
//! component decompositions.
//!
//! The clean target backprojects only the components whose Brain
//! probability exceeds a threshold; every other mixing column is zeroed.
//! A noisy input adds back the components of exactly one artifact class.
//! Components failing the Brain threshold belong to the non-brain class
//! with the highest probability (first class on ties).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::segment::{Pair, Segment};
use crate::signalgen::{segment_recording, zscore_normalize};

/// Default Brain threshold; selection is strict (`p > threshold`).
pub const BRAIN_THRESHOLD: f64 = 0.80;

/// Tolerance on each class-probability row summing to one.
pub const PROB_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum IcClass {
    Brain,
    Muscle,
    Eye,
    Heart,
    LineNoise,
    ChannelNoise,
    Other,
}

impl IcClass {
    /// Column order of the class-probability table.
    pub const ALL: [IcClass; 7] = [
        IcClass::Brain,
        IcClass::Muscle,
        IcClass::Eye,
        IcClass::Heart,
        IcClass::LineNoise,
        IcClass::ChannelNoise,
        IcClass::Other,
    ];

    /// Artifact classes in the order the category table lists them.
    pub const ARTIFACTS: [IcClass; 6] = [
        IcClass::Eye,
        IcClass::Muscle,
        IcClass::Heart,
        IcClass::ChannelNoise,
        IcClass::LineNoise,
        IcClass::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            IcClass::Brain => "Brain",
            IcClass::Muscle => "Muscle",
            IcClass::Eye => "Eye",
            IcClass::Heart => "Heart",
            IcClass::LineNoise => "Line Noise",
            IcClass::ChannelNoise => "Channel Noise",
            IcClass::Other => "Other",
        }
    }

    /// Accepts the display name or a compact form (`line-noise`, `LineNoise`, `eye`).
    pub fn parse(s: &str) -> Option<IcClass> {
        let key: alloc::string::String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        IcClass::ALL.into_iter().find(|c| {
            let name: alloc::string::String = c
                .name()
                .chars()
                .filter(|c| c.is_ascii_alphanumeric())
                .map(|c| c.to_ascii_lowercase())
                .collect();
            name == key
        })
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self { rows: n, cols: n, data }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// IC activations `S` (c×t), mixing matrix `A` (c×c) and per-IC class probabilities (c×7).
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    sources: Segment,
    mixing: Matrix,
    class_probs: Matrix,
}

impl Decomposition {
    pub fn new(sources: Segment, mixing: Matrix, class_probs: Matrix) -> Result<Self> {
        let c = sources.channels();
        if mixing.rows != c || mixing.cols != c {
            return Err(Error::InvalidDecomposition(format!(
                "mixing matrix is {}x{}, expected {c}x{c}",
                mixing.rows, mixing.cols
            )));
        }
        if class_probs.rows != c || class_probs.cols != IcClass::ALL.len() {
            return Err(Error::InvalidDecomposition(format!(
                "class table is {}x{}, expected {c}x7",
                class_probs.rows, class_probs.cols
            )));
        }
        if mixing.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDecomposition("non-finite mixing weight".into()));
        }
        for i in 0..c {
            let row = class_probs.row(i);
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::InvalidDecomposition(format!(
                    "IC {i} has a probability outside [0, 1]"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > PROB_SUM_TOL {
                return Err(Error::InvalidDecomposition(format!(
                    "IC {i} probabilities sum to {sum}"
                )));
            }
        }
        Ok(Self { sources, mixing, class_probs })
    }

    pub fn sources(&self) -> &Segment {
        &self.sources
    }

    pub fn mixing(&self) -> &Matrix {
        &self.mixing
    }

    pub fn class_probs(&self) -> &Matrix {
        &self.class_probs
    }

    pub fn n_ics(&self) -> usize {
        self.sources.channels()
    }

    pub fn prob(&self, ic: usize, class: IcClass) -> f64 {
        self.class_probs.get(ic, class.index())
    }
}

/// ICs with `p(class) > threshold`, ascending.
pub fn select_ics(d: &Decomposition, class: IcClass, threshold: f64) -> Vec<usize> {
    (0..d.n_ics()).filter(|&i| d.prob(i, class) > threshold).collect()
}

/// Category of every IC: `Brain` when selected, otherwise its most probable artifact class.
pub fn assign_classes(d: &Decomposition, threshold: f64) -> Vec<IcClass> {
    (0..d.n_ics())
        .map(|i| {
            if d.prob(i, IcClass::Brain) > threshold {
                return IcClass::Brain;
            }
            let mut best = IcClass::ALL[1];
            for &class in &IcClass::ALL[2..] {
                if d.prob(i, class) > d.prob(i, best) {
                    best = class;
                }
            }
            best
        })
        .collect()
}

/// ICs assigned to `class` under [`assign_classes`].
pub fn class_members(d: &Decomposition, class: IcClass, threshold: f64) -> Vec<usize> {
    assign_classes(d, threshold)
        .into_iter()
        .enumerate()
        .filter_map(|(i, c)| (c == class).then_some(i))
        .collect()
}

/// `Σ_{i ∈ ics} A[:, i] · S[i, :]`.
pub fn backproject(d: &Decomposition, ics: &[usize]) -> Segment {
    let (c, t) = d.sources.shape();
    let mut out = vec![0.0; c * t];
    for &ic in ics {
        let src = d.sources.channel(ic);
        for ch in 0..c {
            let w = d.mixing.get(ch, ic);
            if w == 0.0 {
                continue;
            }
            for (o, s) in out[ch * t..(ch + 1) * t].iter_mut().zip(src) {
                *o += w * s;
            }
        }
    }
    d.sources.with_data(out).expect("backprojection of finite data stays finite")
}

/// Clean target: Brain-selected ICs backprojected to the sensors.
pub fn synth_mix_b(d: &Decomposition, threshold: f64) -> Segment {
    backproject(d, &select_ics(d, IcClass::Brain, threshold))
}

/// Noisy input: the clean target plus the backprojection of the ICs assigned to `artifact`.
pub fn synth_mix_bnb(d: &Decomposition, artifact: IcClass, threshold: f64) -> Result<Segment> {
    if artifact == IcClass::Brain {
        return Err(Error::InvalidDecomposition("Brain is not an artifact class".into()));
    }
    let members = class_members(d, artifact, threshold);
    if members.is_empty() {
        return Err(Error::NoArtifactIcs(artifact.name()));
    }
    let clean = synth_mix_b(d, threshold);
    let art = backproject(d, &members);
    let sum = clean.data().iter().zip(art.data()).map(|(a, b)| a + b).collect();
    clean.with_data(sum)
}

/// One row of the category table.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryCount {
    /// `None` for the pure-Brain row.
    pub artifact: Option<IcClass>,
    pub count: usize,
    /// Whether any decomposition had ICs of this category.
    pub present: bool,
}

impl CategoryCount {
    pub fn label(&self) -> alloc::string::String {
        match self.artifact {
            None => "Brain".into(),
            Some(a) => format!("Brain + {}", a.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedPairs {
    pub pairs: Vec<Pair>,
    /// Pure Brain first, then artifacts in [`IcClass::ARTIFACTS`] order.
    pub counts: Vec<CategoryCount>,
    /// Windows dropped because a channel was constant and could not be z-scored.
    pub skipped: usize,
}

/// Windows and z-scores each decomposition's mixtures into `(noisy, clean)` pairs:
/// `(mixB, mixB)` for the Brain category, then `(mixBnB, mixB)` per artifact class present.
pub fn make_pairs(decomps: &[Decomposition], window: usize, threshold: f64) -> Result<MixedPairs> {
    let mut counts: Vec<CategoryCount> = core::iter::once(None)
        .chain(IcClass::ARTIFACTS.into_iter().map(Some))
        .map(|artifact| CategoryCount { artifact, count: 0, present: false })
        .collect();
    let mut pairs = Vec::new();
    let mut skipped = 0;
    for d in decomps {
        if d.sources.len() < window {
            return Err(Error::TooShort { len: d.sources.len(), min: window - 1 });
        }
        let clean_windows = segment_recording(&synth_mix_b(d, threshold), window)?;
        let clean_z: Vec<Option<Segment>> =
            clean_windows.iter().map(|w| zscore_normalize(w).ok()).collect();
        let classes = assign_classes(d, threshold);
        for entry in counts.iter_mut() {
            let noisy_windows = match entry.artifact {
                None => {
                    entry.present |= classes.contains(&IcClass::Brain);
                    None
                }
                Some(a) => {
                    if !classes.contains(&a) {
                        continue;
                    }
                    entry.present = true;
                    Some(segment_recording(&synth_mix_bnb(d, a, threshold)?, window)?)
                }
            };
            for (k, clean) in clean_z.iter().enumerate() {
                let noisy = match &noisy_windows {
                    None => clean.clone(),
                    Some(ws) => zscore_normalize(&ws[k]).ok(),
                };
                match (noisy, clean) {
                    (Some(noisy), Some(clean)) => {
                        pairs.push(Pair { noisy, clean: clean.clone() });
                        entry.count += 1;
                    }
                    _ => skipped += 1,
                }
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(MixedPairs { pairs, counts, skipped })
}
