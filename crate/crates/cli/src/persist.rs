//! On-disk formats: datasets, decompositions and checkpoints.
//!
//! All sample data is stored as little-endian `f32`. Values read back are the
//! exact `f64` widenings of the stored floats, so `save(load(dir))` reproduces the
//! files byte for byte, and `load(save(x)) == x` whenever `x` is `f32`-representable.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use icunet_core::mixture::{Decomposition, IcClass, Matrix};
use icunet_core::network::{init_params, UNetConfig, UNetParams};
use icunet_core::{Pair, Segment};
use serde::{Deserialize, Serialize};

pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE: &str = "f32le";
pub const MANIFEST: &str = "manifest.json";
pub const DATA: &str = "data.bin";
pub const DECOMP: &str = "decomp.json";
pub const ARCH: &str = "arch.json";
pub const PARAMS: &str = "params.bin";

/// Upper bound on any single header-declared allocation, in values.
const MAX_VALUES: u64 = 1 << 34;

#[derive(Debug, thiserror::Error)]
pub enum PersistError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {reason}")]
    Load { path: PathBuf, reason: String },
    #[error("segments have different shapes or sampling rates")]
    HeterogeneousShapes,
}

impl PersistError {
    fn load(path: &Path, reason: impl Into<String>) -> Self {
        PersistError::Load { path: path.to_path_buf(), reason: reason.into() }
    }
}

pub type Result<T, E = PersistError> = std::result::Result<T, E>;

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| PersistError::Io { path: path.to_path_buf(), source })
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| PersistError::Io { path: dir.to_path_buf(), source })?;
    }
    fs::write(path, bytes).map_err(|source| PersistError::Io { path: path.to_path_buf(), source })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("plain data serializes");
    text.push('\n');
    write(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| PersistError::load(path, format!("malformed JSON: {e}")))
}

fn push_f32(out: &mut Vec<u8>, values: &[f64]) {
    out.extend(values.iter().flat_map(|&v| (v as f32).to_le_bytes()));
}

fn f32_values(bytes: &[u8]) -> impl Iterator<Item = f64> + '_ {
    bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
}

/// Rounds every value to the nearest `f32`, the precision of every file format.
pub fn quantize(values: &mut [f64]) {
    values.iter_mut().for_each(|v| *v = *v as f32 as f64);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Clean,
    Noisy,
    Pairs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub fs_hz: f64,
    pub channels: usize,
    pub window: usize,
    pub dtype: String,
    pub count: usize,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_layout: Option<String>,
}

impl DatasetManifest {
    /// Bytes `data.bin` must hold.
    pub fn data_bytes(&self) -> Option<u64> {
        let per_role = if self.role == Role::Pairs { 2 } else { 1 };
        (self.count as u64)
            .checked_mul(self.channels as u64)?
            .checked_mul(self.window as u64)?
            .checked_mul(4 * per_role)
    }

    fn validate(&self, path: &Path) -> Result<()> {
        if self.version != FORMAT_VERSION {
            return Err(PersistError::load(path, format!("unsupported version {}", self.version)));
        }
        if self.dtype != DTYPE {
            return Err(PersistError::load(path, format!("unsupported dtype {:?}", self.dtype)));
        }
        match (self.role, self.pair_layout.as_deref()) {
            (Role::Pairs, Some("interleaved")) | (Role::Clean | Role::Noisy, None) => {}
            (_, layout) => {
                return Err(PersistError::load(path, format!("pair_layout {layout:?} invalid for role {:?}", self.role)))
            }
        }
        if self.channels == 0 || self.window < icunet_core::segment::MIN_LEN || !(self.fs_hz > 0.0) {
            return Err(PersistError::load(path, "channels, window or fs_hz out of range"));
        }
        match self.data_bytes() {
            Some(b) if b / 4 <= MAX_VALUES => Ok(()),
            _ => Err(PersistError::load(path, "declared size too large")),
        }
    }
}

/// Contents of a dataset directory.
#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Segments { role: Role, segments: Vec<Segment> },
    Pairs(Vec<Pair>),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Segments { segments, .. } => segments.len(),
            Dataset::Pairs(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pairs as stored, or `(x, x)` for a segment dataset.
    pub fn into_pairs(self) -> Vec<Pair> {
        match self {
            Dataset::Pairs(p) => p,
            Dataset::Segments { segments, .. } => segments.into_iter().map(Pair::identity).collect(),
        }
    }

    /// Network inputs: the noisy half of pairs, otherwise the segments themselves.
    pub fn into_inputs(self) -> Vec<Segment> {
        match self {
            Dataset::Pairs(p) => p.into_iter().map(|p| p.noisy).collect(),
            Dataset::Segments { segments, .. } => segments,
        }
    }
}

fn common_shape<'a>(mut segs: impl Iterator<Item = &'a Segment>) -> Result<Option<(usize, usize, f64)>> {
    let Some(first) = segs.next() else { return Ok(None) };
    let shape = (first.channels(), first.len(), first.fs());
    if segs.any(|s| (s.channels(), s.len(), s.fs()) != shape) {
        return Err(PersistError::HeterogeneousShapes);
    }
    Ok(Some(shape))
}

fn save_raw(dir: &Path, role: Role, count: usize, shape: Option<(usize, usize, f64)>, payload: Vec<u8>) -> Result<DatasetManifest> {
    // An empty dataset still records a valid geometry.
    let (channels, window, fs_hz) = shape.unwrap_or((1, icunet_core::segment::MIN_LEN, 1.0));
    let manifest = DatasetManifest {
        version: FORMAT_VERSION,
        fs_hz,
        channels,
        window,
        dtype: DTYPE.into(),
        count,
        role,
        pair_layout: (role == Role::Pairs).then(|| "interleaved".into()),
    };
    write(&dir.join(DATA), &payload)?;
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

/// Writes `manifest.json` and `data.bin`, sample-major `[count][channels][time]`.
pub fn save_segments(dir: &Path, role: Role, segments: &[Segment]) -> Result<DatasetManifest> {
    assert!(role != Role::Pairs, "use save_pairs");
    let shape = common_shape(segments.iter())?;
    let mut payload = Vec::new();
    segments.iter().for_each(|s| push_f32(&mut payload, s.data()));
    save_raw(dir, role, segments.len(), shape, payload)
}

/// Pairs interleaved noisy-then-clean.
pub fn save_pairs(dir: &Path, pairs: &[Pair]) -> Result<DatasetManifest> {
    let shape = common_shape(pairs.iter().flat_map(|p| [&p.noisy, &p.clean]))?;
    let mut payload = Vec::new();
    for p in pairs {
        push_f32(&mut payload, p.noisy.data());
        push_f32(&mut payload, p.clean.data());
    }
    save_raw(dir, Role::Pairs, pairs.len(), shape, payload)
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST);
    let m: DatasetManifest = read_json(&path)?;
    m.validate(&path)?;
    Ok(m)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let m = load_manifest(dir)?;
    let path = dir.join(DATA);
    let bytes = read(&path)?;
    let want = m.data_bytes().expect("validated");
    if bytes.len() as u64 != want {
        return Err(PersistError::load(&path, format!("{} bytes, manifest implies {want}", bytes.len())));
    }
    let n = m.channels * m.window;
    let mut values = f32_values(&bytes);
    let mut next = || -> Result<Segment> {
        let data: Vec<f64> = values.by_ref().take(n).collect();
        Segment::new(m.channels, m.window, m.fs_hz, data).map_err(|e| PersistError::load(&path, e.to_string()))
    };
    Ok(match m.role {
        Role::Pairs => Dataset::Pairs(
            (0..m.count)
                .map(|_| {
                    let noisy = next()?;
                    let clean = next()?;
                    Ok(Pair { noisy, clean })
                })
                .collect::<Result<_>>()?,
        ),
        role => Dataset::Segments { role, segments: (0..m.count).map(|_| next()).collect::<Result<_>>()? },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompManifest {
    pub version: u32,
    pub fs_hz: f64,
    /// Sensors, equal to the number of ICs.
    pub channels: usize,
    pub length: usize,
    pub dtype: String,
    /// Column labels of `class_probs`.
    pub classes: Vec<String>,
    /// One row of seven probabilities per IC.
    pub class_probs: Vec<Vec<f64>>,
}

pub const SOURCES: &str = "S.bin";
pub const MIXING: &str = "A.bin";

/// `decomp.json` (geometry and class probabilities), `S.bin` (ICs × time) and
/// `A.bin` (channels × ICs, row-major), both `f32le`.
pub fn save_decomposition(dir: &Path, d: &Decomposition) -> Result<()> {
    let s = d.sources();
    let mut sources = Vec::new();
    push_f32(&mut sources, s.data());
    let mut mixing = Vec::new();
    push_f32(&mut mixing, &d.mixing().data);
    write(&dir.join(SOURCES), &sources)?;
    write(&dir.join(MIXING), &mixing)?;
    let probs = d.class_probs();
    write_json(
        &dir.join(DECOMP),
        &DecompManifest {
            version: FORMAT_VERSION,
            fs_hz: s.fs(),
            channels: s.channels(),
            length: s.len(),
            dtype: DTYPE.into(),
            classes: IcClass::ALL.iter().map(|c| c.name().into()).collect(),
            class_probs: (0..probs.rows).map(|r| probs.row(r).to_vec()).collect(),
        },
    )
}

pub fn load_decomposition(dir: &Path) -> Result<Decomposition> {
    let path = dir.join(DECOMP);
    let m: DecompManifest = read_json(&path)?;
    if m.version != FORMAT_VERSION || m.dtype != DTYPE {
        return Err(PersistError::load(&path, format!("unsupported version {} or dtype {:?}", m.version, m.dtype)));
    }
    let want: Vec<String> = IcClass::ALL.iter().map(|c| c.name().into()).collect();
    if m.classes != want {
        return Err(PersistError::load(&path, format!("class columns must be {want:?}")));
    }
    let (c, t) = (m.channels, m.length);
    if c == 0 || (c as u64).saturating_mul(t as u64) > MAX_VALUES || m.class_probs.len() != c {
        return Err(PersistError::load(&path, "channel count, length or probability rows out of range"));
    }
    let load_f32 = |name: &str, n: usize| -> Result<Vec<f64>> {
        let p = dir.join(name);
        let bytes = read(&p)?;
        if bytes.len() != 4 * n {
            return Err(PersistError::load(&p, format!("{} bytes, expected {}", bytes.len(), 4 * n)));
        }
        Ok(f32_values(&bytes).collect())
    };
    let bad = |e: icunet_core::Error| PersistError::load(&path, e.to_string());
    let sources = Segment::new(c, t, m.fs_hz, load_f32(SOURCES, c * t)?).map_err(bad)?;
    let mixing = Matrix::new(c, c, load_f32(MIXING, c * c)?).map_err(bad)?;
    if m.class_probs.iter().any(|r| r.len() != IcClass::ALL.len()) {
        return Err(PersistError::load(&path, "every probability row needs seven entries"));
    }
    let probs = Matrix::new(c, IcClass::ALL.len(), m.class_probs.concat()).map_err(bad)?;
    Decomposition::new(sources, mixing, probs).map_err(bad)
}

/// `arch.json`: the full network config plus format version and tensor order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchManifest {
    pub version: u32,
    pub dtype: String,
    pub in_channels: usize,
    pub base_filters: usize,
    pub depth: usize,
    pub kernel_size: usize,
    pub pool_size: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub tensor_order: String,
}

const TENSOR_ORDER: &str = "per block k in 0..4*depth+2 (encoder levels, bottleneck, decoder levels deepest first): \
conv weight [out,in,k,1], conv bias, gamma, beta, running_mean, running_var; \
per up level l in 0..depth: weight [out,in,pool,1], bias; head: weight [c,base,1,1], bias";

impl ArchManifest {
    pub fn from_config(c: &UNetConfig) -> Self {
        Self {
            version: FORMAT_VERSION,
            dtype: DTYPE.into(),
            in_channels: c.in_channels,
            base_filters: c.base_filters,
            depth: c.depth,
            kernel_size: c.kernel_size,
            pool_size: c.pool_size,
            bn_eps: c.bn_eps,
            bn_momentum: c.bn_momentum,
            tensor_order: TENSOR_ORDER.into(),
        }
    }

    pub fn config(&self) -> UNetConfig {
        UNetConfig {
            in_channels: self.in_channels,
            base_filters: self.base_filters,
            depth: self.depth,
            kernel_size: self.kernel_size,
            pool_size: self.pool_size,
            bn_eps: self.bn_eps,
            bn_momentum: self.bn_momentum,
        }
    }
}

/// Each tensor as a `[u32; 4]` shape header followed by its `f32le` values.
pub fn save_checkpoint(dir: &Path, params: &UNetParams, config: &UNetConfig) -> Result<()> {
    let mut out = Vec::new();
    for (shape, values) in params.checkpoint_tensors() {
        out.extend(shape.iter().flat_map(|d| d.to_le_bytes()));
        push_f32(&mut out, values);
    }
    write(&dir.join(PARAMS), &out)?;
    write_json(&dir.join(ARCH), &ArchManifest::from_config(config))
}

pub fn load_checkpoint(dir: &Path) -> Result<(UNetParams, UNetConfig)> {
    let arch_path = dir.join(ARCH);
    let arch: ArchManifest = read_json(&arch_path)?;
    if arch.version != FORMAT_VERSION || arch.dtype != DTYPE {
        return Err(PersistError::load(&arch_path, format!("unsupported version {} or dtype {:?}", arch.version, arch.dtype)));
    }
    let config = arch.config();
    config.validate().map_err(|e| PersistError::load(&arch_path, e.to_string()))?;
    if (config.filters(config.depth) as u64).saturating_mul(config.filters(config.depth) as u64) > MAX_VALUES {
        return Err(PersistError::load(&arch_path, "architecture too large"));
    }
    // Shapes come from the config, never from the file.
    let mut params = init_params(&config, 0).expect("validated");
    let shapes: Vec<[u32; 4]> = params.checkpoint_tensors().iter().map(|(s, _)| *s).collect();
    let path = dir.join(PARAMS);
    let bytes = read(&path)?;
    let mut pos = 0usize;
    for (i, (tensor, want)) in params.checkpoint_tensors_mut().into_iter().zip(&shapes).enumerate() {
        let header = bytes.get(pos..pos + 16).ok_or_else(|| PersistError::load(&path, format!("truncated at tensor {i}")))?;
        let shape: Vec<u32> = header.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        if shape != want {
            return Err(PersistError::load(&path, format!("tensor {i} has shape {shape:?}, architecture expects {want:?}")));
        }
        pos += 16;
        let n = tensor.len();
        let body = bytes.get(pos..pos + 4 * n).ok_or_else(|| PersistError::load(&path, format!("truncated in tensor {i}")))?;
        tensor.iter_mut().zip(f32_values(body)).for_each(|(t, v)| *t = v);
        pos += 4 * n;
    }
    if pos != bytes.len() {
        return Err(PersistError::load(&path, format!("{} trailing bytes", bytes.len() - pos)));
    }
    if params.checkpoint_tensors().iter().any(|(_, v)| v.iter().any(|x| !x.is_finite())) {
        return Err(PersistError::load(&path, "non-finite parameter"));
    }
    Ok((params, config))
}
