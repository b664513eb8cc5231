use thiserror::Error;

/// Unified error type for the whole laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("backward: loss must be a scalar tensor")]
    LossNotScalar,

    #[error("backward: node {0} is not a leaf of this graph")]
    NotALeaf(usize),

    #[error("malformed header token: {0}")]
    MalformedHeader(String),

    #[error("unsupported pixel format: {0}")]
    UnsupportedPixelFormat(String),

    #[error("truncated frame {0}")]
    TruncatedFrame(usize),

    #[error("frame index {index} out of range ({count} frames)")]
    FrameIndex { index: usize, count: usize },

    #[error("model mismatch: bitstream checksum {stream:#018x} != model checksum {model:#018x}")]
    ModelMismatch { stream: u64, model: u64 },

    #[error("model is frozen")]
    ModelFrozen,

    #[error("model is not frozen")]
    ModelNotFrozen,

    #[error("pretraining diverged (non-finite loss) at step {0}")]
    Diverged(usize),

    #[error("corrupt stream: {0}")]
    CorruptStream(String),

    #[error("no quality overlap between RD curves")]
    NoQualityOverlap,

    #[error("RD curve needs at least {need} points, got {got}")]
    CurveTooSmall { need: usize, got: usize },

    #[error("bad model file: {0}")]
    BadModelFile(String),

    #[error("bad bitstream: {0}")]
    BadBitstream(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("bad job file: {0}")]
    Job(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code the CLI maps this error to.
    /// 2 is a data error (bad inputs), 3 an internal invariant violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite { .. }
            | Error::Internal(_)
            | Error::LossNotScalar
            | Error::NotALeaf(_)
            | Error::Diverged(_) => 3,
            _ => 2,
        }
    }
}
