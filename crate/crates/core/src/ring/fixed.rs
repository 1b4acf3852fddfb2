use serde::{Deserialize, Serialize};

use super::{crt, Backend, RingTensor};
use crate::error::{Error, Result};
use crate::tensor::RealTensor;

/// Fixed-point parameters: values are scaled by `2^frac_bits`, every encoded
/// or pre-truncation magnitude stays below `2^bound_bits`, and truncation
/// masks add `stat_sec` bits of statistical hiding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FixedPointConfig {
    pub frac_bits: u32,
    pub bound_bits: u32,
    pub stat_sec: u32,
}

impl FixedPointConfig {
    pub const INT64: FixedPointConfig = FixedPointConfig {
        frac_bits: 16,
        bound_bits: 40,
        stat_sec: 23,
    };

    pub const CRT: FixedPointConfig = FixedPointConfig {
        frac_bits: 32,
        bound_bits: 80,
        stat_sec: 40,
    };

    pub fn default_for(backend: Backend) -> Self {
        match backend {
            Backend::Int64 => Self::INT64,
            Backend::Crt => Self::CRT,
        }
    }

    pub fn validate(&self, backend: Backend) -> Result<()> {
        if self.bound_bits + self.stat_sec + 1 > backend.ring_bits() {
            return Err(Error::Config(format!(
                "bound {} + statistical security {} + 1 exceeds {} ring bits of {backend}",
                self.bound_bits,
                self.stat_sec,
                backend.ring_bits()
            )));
        }
        if 2 * self.frac_bits > self.bound_bits {
            return Err(Error::Config(format!(
                "2 * fractional bits {} exceeds bound {}",
                self.frac_bits, self.bound_bits
            )));
        }
        Ok(())
    }
}

/// `round(value * 2^scale_bits)`, ties away from zero.
pub fn quantize(value: f64, scale_bits: u32) -> i128 {
    (value * (scale_bits as f64).exp2()).round() as i128
}

pub fn encode(values: &RealTensor, cfg: &FixedPointConfig, backend: Backend) -> Result<RingTensor> {
    encode_at(values, cfg.frac_bits, cfg, backend)
}

/// Encodes at an explicit scale; `|v| < 2^(bound_bits - scale_bits)` is required.
pub fn encode_at(
    values: &RealTensor,
    scale_bits: u32,
    cfg: &FixedPointConfig,
    backend: Backend,
) -> Result<RingTensor> {
    let limit = (cfg.bound_bits as f64 - scale_bits as f64).exp2();
    let mut ints = Vec::with_capacity(values.data.len());
    for &v in &values.data {
        if !(v.abs() < limit) {
            return Err(Error::OverflowBound {
                value: v,
                frac_bits: scale_bits,
                bound_bits: cfg.bound_bits,
            });
        }
        ints.push(quantize(v, scale_bits));
    }
    RingTensor::from_i128s(backend, &values.shape, &ints)
}

/// Inverse of [`encode`]. Elements outside the bound decode to unspecified reals.
pub fn decode(t: &RingTensor, cfg: &FixedPointConfig) -> RealTensor {
    decode_at(t, cfg.frac_bits)
}

pub fn decode_at(t: &RingTensor, scale_bits: u32) -> RealTensor {
    let scale = (scale_bits as f64).exp2();
    let data = match t.backend() {
        Backend::Int64 => t.words().iter().map(|&w| w as i64 as f64 / scale).collect(),
        Backend::Crt => {
            let params = crt();
            t.words()
                .chunks_exact(params.moduli().len())
                .map(|r| params.lift_signed(r) as f64 / scale)
                .collect()
        }
    };
    RealTensor {
        shape: t.shape().to_vec(),
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const F16: FixedPointConfig = FixedPointConfig {
        frac_bits: 16,
        bound_bits: 40,
        stat_sec: 23,
    };

    #[test]
    fn defaults_validate() {
        FixedPointConfig::INT64.validate(Backend::Int64).unwrap();
        FixedPointConfig::CRT.validate(Backend::Crt).unwrap();
        assert!(FixedPointConfig::CRT.validate(Backend::Int64).is_err());
    }

    #[test]
    fn encode_known_values() {
        let t = encode(&RealTensor::scalar(0.5), &F16, Backend::Int64).unwrap();
        assert_eq!(t.words(), &[32768]);
        let t = encode(&RealTensor::scalar(-1.0), &F16, Backend::Int64).unwrap();
        assert_eq!(t.words(), &[0u64.wrapping_sub(65536)]);
    }

    #[test]
    fn decode_known_values() {
        let t = RingTensor::new(Backend::Int64, vec![], vec![32768]).unwrap();
        assert_eq!(decode(&t, &F16).data, vec![0.5]);
        for backend in [Backend::Int64, Backend::Crt] {
            let t = encode(&RealTensor::scalar(-3.25), &F16, backend).unwrap();
            assert_eq!(decode(&t, &F16).data, vec![-3.25]);
        }
    }

    #[test]
    fn overflow_bound() {
        let err = encode(&RealTensor::scalar(16777216.0), &F16, Backend::Int64).unwrap_err();
        assert!(matches!(err, Error::OverflowBound { .. }));
        assert!(encode(&RealTensor::scalar(f64::NAN), &F16, Backend::Int64).is_err());
    }
}
