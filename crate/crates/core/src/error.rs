use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: not a {kind} file (bad magic)")]
    BadMagic { path: PathBuf, kind: &'static str },

    #[error("{path}: truncated payload, expected {expected} values, found {found}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("non-finite value at row {row}, col {col}")]
    NonFinite { row: usize, col: usize },

    #[error("duplicate token sequences at indices {first} and {second}")]
    DuplicateSequence { first: usize, second: usize },

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("layer {layer}: {detail}")]
    LayerMismatch { layer: usize, detail: String },

    #[error("{path}: invalid json: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sequence length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("need at least two points, got {n}")]
    TooFewPoints { n: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("percentile {0} outside (0, 100)")]
    PercentOutOfRange(f64),

    #[error("no pairs satisfy d_min = {d_min}")]
    NoValidPairs { d_min: u32 },

    #[error("pair ({i}, {j}) has hamming distance 0")]
    ZeroHamming { i: usize, j: usize },

    #[error("degenerate cloud: zero mean norm")]
    ZeroMeanNorm,

    #[error("degenerate range: layer is identically zero")]
    DegenerateRange,

    #[error("coordinate ({row}, {col}) = {value} outside quantizer range [-{range}, {range}]")]
    OutOfRange {
        row: usize,
        col: usize,
        value: f64,
        range: f64,
    },

    #[error("no safe bitwidth: exact duplicates present")]
    NoSafeBitwidth,

    #[error("not injective: r_inj undefined (margin is zero)")]
    NotInjective,

    #[error("exact sweep over {pairs} pairs exceeds budget of {budget}; use sampled mode")]
    OverBudget { pairs: u64, budget: u64 },

    #[error("sampled sweep requires a pair sample")]
    MissingSample,

    #[error("{n} distinct sequences requested but only {capacity} exist")]
    Capacity { n: usize, capacity: u128 },

    #[error("sweep needs ≥ 2 points")]
    SweepTooShort,

    #[error("layer {layer}: {source}")]
    Layer {
        layer: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_layer(self, layer: usize) -> Self {
        match self {
            e @ (Error::Layer { .. } | Error::LayerMismatch { .. }) => e,
            e => Error::Layer {
                layer,
                source: Box::new(e),
            },
        }
    }

    /// Input, file and configuration problems, as opposed to failures of a
    /// computation on otherwise valid inputs.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Layer { source, .. } => source.is_validation(),
            Error::Io { .. }
            | Error::BadMagic { .. }
            | Error::Truncated { .. }
            | Error::Format { .. }
            | Error::NonFinite { .. }
            | Error::DuplicateSequence { .. }
            | Error::Manifest(_)
            | Error::LayerMismatch { .. }
            | Error::Json { .. }
            | Error::InvalidArgument(_)
            | Error::LengthMismatch { .. }
            | Error::PercentOutOfRange(_)
            | Error::Capacity { .. }
            | Error::SweepTooShort => true,
            _ => false,
        }
    }
}
