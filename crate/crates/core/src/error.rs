use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("index {index} out of range for {len} classes")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("input is not a probability vector: {0}")]
    NotProbability(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("input of length {len} is shorter than kernel size {kernel}")]
    InputTooShort { len: usize, kernel: usize },

    #[error("optimizer state missing for parameter `{0}`")]
    UninitializedState(String),

    #[error("invalid confusion design: {0}")]
    InvalidConfusion(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("bad magic: expected \"C2AF\", found {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("unexpected record type {found} (expected {expected})")]
    RecordType { found: u32, expected: u32 },

    #[error("truncated payload: needed {needed} more bytes at offset {offset}")]
    TruncatedPayload { offset: usize, needed: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: u32, classes: u32 },

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
