use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("value {value} exceeds fixed-point bound 2^{bound_bits} at scale 2^{frac_bits}")]
    OverflowBound {
        value: f64,
        frac_bits: u32,
        bound_bits: u32,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backend mismatch: {0:?} vs {1:?}")]
    BackendMismatch(crate::ring::Backend, crate::ring::Backend),
    #[error("fixed-point scale mismatch: 2^-{0} vs 2^-{1}")]
    ScaleMismatch(u32, u32),
    #[error("missing offline material for node {0}")]
    MissingTriple(u32),
    #[error("truncation mode {0} is not supported on backend {1:?}")]
    ModeUnsupported(&'static str, crate::ring::Backend),
    #[error("unresolved shape for node {0}")]
    UnresolvedShape(u32),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("channel to {0} closed")]
    ChannelClosed(String),
    #[error("could not connect to {addr}: {reason}")]
    ConnectFailed { addr: String, reason: String },
    #[error("timed out waiting for {0}")]
    Timeout(String),
    #[error("protocol desync: {0}")]
    ProtocolDesync(String),
    #[error("malformed frame: {0}")]
    Frame(String),
    #[error("polynomial degree {0} too low, need at least 2")]
    DegreeTooLow(usize),
    #[error("missing weights: {0}")]
    MissingWeights(String),
    #[error("negative variance at index {0}")]
    NegativeVariance(usize),
    #[error("bad IDX magic {0:#010x}")]
    BadMagic(u32),
    #[error("truncated file: {0}")]
    TruncatedFile(String),
    #[error("weights container: {0}")]
    Weights(String),
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("simulation overflow: {0}")]
    SimOverflow(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::ShapeMismatch(msg.into())
}
