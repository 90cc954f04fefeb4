use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid synthesis spec: {0}")]
    InvalidSpec(String),
    #[error("invalid segment: {0}")]
    InvalidSegment(String),
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("channel {channel} is constant; cannot z-score")]
    ConstantChannel { channel: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("batch statistics undefined: {0}")]
    DegenerateBatch(String),
    #[error("activation cache does not match the gradient: {0}")]
    StaleCache(String),
    #[error("no frequency bins in the 1-50 Hz band for fs={fs} Hz, t={len}")]
    NoBins { fs: f64, len: usize },
    #[error("power spectrum of channel {channel} is flat across bins")]
    ConstantSpectrum { channel: usize },
    #[error("loss weights sum to zero")]
    ZeroWeights,
    #[error("no independent components assigned to class {0}")]
    NoArtifactIcs(&'static str),
    #[error("invalid decomposition: {0}")]
    InvalidDecomposition(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid band: {0}")]
    InvalidBand(String),
    #[error("signal too short: {len} samples, need more than {min}")]
    TooShort { len: usize, min: usize },
    #[error("invalid training config: {0}")]
    InvalidTrainConfig(String),
}
