use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the library. The CLI maps each variant onto an exit
/// class via [`Error::class`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("reaction index {index} out of range (network has {count} reactions)")]
    ReactionIndex { index: usize, count: usize },

    #[error("unknown preset `{0}` (expected one of: sir, oregonator, lv4)")]
    UnknownPreset(String),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("network config: {0}")]
    Parse(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "skeleton horizon exceeded on channel {channel}: internal time {requested:.3} > {available:.3}; \
         regenerate skeletons with at least {hint_cells} cells"
    )]
    HorizonExceeded {
        channel: usize,
        requested: f64,
        available: f64,
        hint_cells: usize,
    },

    #[error("regeneration sequence exhausted after {0} uniforms; configure a larger sequence")]
    RegenExhausted(usize),

    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),

    #[error("numerical degeneracy: {0}")]
    Degenerate(String),

    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error("mesh mismatch: {0}")]
    MeshMismatch(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("divergent bound: gamma = {0} gives alpha >= 1")]
    DivergentBound(f64),

    #[error("exact assignment refused for {0} samples (limit 512)")]
    TooManySamples(usize),

    #[error("generator is reducible on the transient class")]
    Reducible,

    #[error("skeleton cache: {0}")]
    CacheFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse error classes, stable across releases; the CLI exit code is
/// derived from these.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Horizon,
    Numeric,
    Io,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::HorizonExceeded { .. } => ErrorClass::Horizon,
            Error::Io(_) | Error::CacheFormat(_) => ErrorClass::Io,
            Error::InvalidCovariance(_) | Error::Degenerate(_) | Error::NoConvergence(_) | Error::DivergentBound(_) => {
                ErrorClass::Numeric
            }
            _ => ErrorClass::Config,
        }
    }
}
