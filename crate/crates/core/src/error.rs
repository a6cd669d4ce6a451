use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unknown axis `{0}`")]
    UnknownAxis(String),

    #[error("axis `{0}` appears more than once")]
    DuplicateAxis(String),

    #[error("axis `{0}` has size zero")]
    EmptyAxis(String),

    #[error("invalid joint table: {0}")]
    InvalidTable(String),

    #[error("symbol {symbol} outside alphabet of axis `{axis}` (size {size})")]
    SymbolOutOfRange {
        axis: String,
        symbol: usize,
        size: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("alphabet too large for exhaustive enumeration: {0}")]
    AlphabetTooLarge(String),

    #[error("all symbol weights are zero")]
    ZeroWeights,

    #[error("codeword length {0} exceeds the 64-bit limit")]
    CodeTooLong(usize),

    #[error("symbol {symbol} outside code range {size}")]
    SymbolOutsideCode { symbol: usize, size: usize },

    #[error("truncated bitstream: {0}")]
    Truncated(&'static str),

    #[error("invalid codeword in {0} payload")]
    InvalidCodeword(&'static str),

    #[error("malformed bitstream: {0}")]
    Malformed(String),

    #[error("non-finite parameter in {0}")]
    NonFinite(String),

    #[error("training stage order violated: {0}")]
    StageOrder(&'static str),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;
