use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("invalid shape for {op}: {detail}")]
    InvalidShape { op: &'static str, detail: String },
    #[error("invalid axis {axis} for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("{op}: empty output extent ({detail})")]
    EmptyOutput { op: &'static str, detail: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("clip too short: {len} samples, need at least {min}")]
    ClipTooShort { len: usize, min: usize },
    #[error("silent clip (peak {peak:e})")]
    SilentClip { peak: f64 },
    #[error("window/hop pair violates overlap-add (normalizer {0:e})")]
    ColaViolation(f64),
    #[error("negative magnitude {0}")]
    NegativeMagnitude(f64),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("sample rate mismatch: {0} vs {1}")]
    SampleRateMismatch(u32, u32),
    #[error("all frames of the reference are silent")]
    AllFramesSilent,
    #[error("empty prune scope `{0}`")]
    EmptyScope(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParameter(String),
    #[error("empty evaluation set")]
    EmptySet,
    #[error("wav: {0}")]
    Wav(String),
    #[error("checkpoint magic mismatch: found {0:?}")]
    MagicMismatch([u8; 4]),
    #[error("checkpoint version {found} is not supported (reader is v{supported})")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("checkpoint truncated: {0}")]
    Truncated(String),
    #[error("checkpoint checksum mismatch: stored {stored:016x}, computed {computed:016x}")]
    Checksum { stored: u64, computed: u64 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
