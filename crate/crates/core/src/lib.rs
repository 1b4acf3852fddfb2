//! Secure two-server inference with a third server producing correlated
//! randomness offline.
//!
//! Values are additively shared between S0 and S1 over either `Z_2^64` or a
//! CRT ring of about 124 bits. Products consume masks and generalized triples
//! from S2, so the online phase needs one round per masking and one per
//! interactive truncation.

pub mod api;
pub mod app;
pub mod bench;
pub mod config;
pub mod data;
pub mod error;
pub mod nn;
pub mod offline;
pub mod params;
pub mod ring;
pub mod runtime;
pub mod sharing;
pub mod tensor;

pub use error::{Error, Result};
pub use params::ProtocolParams;
pub use ring::{Backend, FixedPointConfig, RingTensor};
pub use sharing::TruncMode;
pub use tensor::RealTensor;
