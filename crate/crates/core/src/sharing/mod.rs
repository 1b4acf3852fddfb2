//! Additive sharing between servers S0 and S1, masked tensors, and the
//! secure tensor operations built on them.
//!
//! The types here hold both servers' views at once. That is how tests and
//! the in-process dealer exercise the protocol; the networked executor runs
//! the same [`party`] kernels with each server holding only its own half.

pub mod party;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ring::{sample_uniform, Backend, ConvGeometry, FixedPointConfig, RingTensor, RngStream};

/// A value split as `x = share0 + share1 (mod m)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrivateTensor {
    pub share0: RingTensor,
    pub share1: RingTensor,
    /// Fractional bits of the encoding (f, or 2f after a product).
    pub scale: u32,
}

/// A private value with an explicit mask: S2 holds `a`, S0/S1 hold `a0`/`a1`,
/// and both S0 and S1 hold `alpha = x - a`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskedTensor {
    pub a: RingTensor,
    pub a0: RingTensor,
    pub a1: RingTensor,
    pub alpha: RingTensor,
    pub scale: u32,
}

impl PrivateTensor {
    pub fn shape(&self) -> &[usize] {
        self.share0.shape()
    }

    pub fn backend(&self) -> Backend {
        self.share0.backend()
    }

    pub fn share(&self, party: usize) -> &RingTensor {
        if party == 0 {
            &self.share0
        } else {
            &self.share1
        }
    }
}

impl MaskedTensor {
    pub fn shape(&self) -> &[usize] {
        self.alpha.shape()
    }

    pub fn mask_share(&self, party: usize) -> &RingTensor {
        if party == 0 {
            &self.a0
        } else {
            &self.a1
        }
    }

    /// Back to a private tensor: `x_i = i*alpha + a_i`, no interaction.
    pub fn unmask(&self) -> Result<PrivateTensor> {
        Ok(PrivateTensor {
            share0: self.a0.clone(),
            share1: self.alpha.add(&self.a1)?,
            scale: self.scale,
        })
    }
}

/// The bilinear kernels that have dedicated triples.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Bilinear {
    Mul,
    MatMul,
    Conv2d(ConvGeometry),
}

impl Bilinear {
    pub fn apply(&self, x: &RingTensor, y: &RingTensor) -> Result<RingTensor> {
        match self {
            Bilinear::Mul => x.mul(y),
            Bilinear::MatMul => x.matmul(y),
            Bilinear::Conv2d(g) => x.conv2d(y, g),
        }
    }

    pub fn output_shape(&self, x: &[usize], y: &[usize]) -> Result<Vec<usize>> {
        match self {
            Bilinear::Mul if x == y => Ok(x.to_vec()),
            Bilinear::Mul => Err(Error::ShapeMismatch(format!("mul of {x:?} and {y:?}"))),
            Bilinear::MatMul if x.len() == 2 && y.len() == 2 && x[1] == y[0] => Ok(vec![x[0], y[1]]),
            Bilinear::MatMul => Err(Error::ShapeMismatch(format!("matmul of {x:?} and {y:?}"))),
            Bilinear::Conv2d(g) => g.output_shape(x, y),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TruncMode {
    /// One opening of a statistically masked value; error at most one unit.
    Interactive,
    /// Local share shifting on Z_2^64; fails with probability <= 2^(b+1-64).
    #[serde(rename = "local")]
    LocalOptimistic,
}

impl TruncMode {
    pub fn name(self) -> &'static str {
        match self {
            TruncMode::Interactive => "interactive",
            TruncMode::LocalOptimistic => "local",
        }
    }
}

impl std::str::FromStr for TruncMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "interactive" => Ok(TruncMode::Interactive),
            "local" | "localoptimistic" | "local-optimistic" => Ok(TruncMode::LocalOptimistic),
            other => Err(Error::Config(format!("unknown truncation mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TruncationConfig {
    pub mode: TruncMode,
    pub frac_bits: u32,
    pub bound_bits: u32,
    pub stat_sec: u32,
}

impl TruncationConfig {
    pub fn new(mode: TruncMode, fixed: &FixedPointConfig) -> Self {
        TruncationConfig {
            mode,
            frac_bits: fixed.frac_bits,
            bound_bits: fixed.bound_bits,
            stat_sec: fixed.stat_sec,
        }
    }

    pub fn validate(&self, backend: Backend) -> Result<()> {
        match self.mode {
            TruncMode::LocalOptimistic if backend != Backend::Int64 => {
                Err(Error::ModeUnsupported(self.mode.name(), backend))
            }
            TruncMode::Interactive if self.bound_bits + self.stat_sec + 1 > backend.ring_bits() => {
                Err(Error::Config(format!(
                    "interactive truncation needs b + kappa + 1 <= {} on {backend}",
                    backend.ring_bits()
                )))
            }
            _ if self.frac_bits > self.bound_bits => Err(Error::Config(format!(
                "fractional bits {} exceed bound {}",
                self.frac_bits, self.bound_bits
            ))),
            _ => Ok(()),
        }
    }

    /// Bits of the truncation mask `r`.
    pub fn mask_bits(&self) -> u32 {
        self.bound_bits + self.stat_sec
    }
}

/// Mask material for one tensor: `a` and its two shares.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskMaterial {
    pub a: RingTensor,
    pub a0: RingTensor,
    pub a1: RingTensor,
}

/// Shares of `r` and of `r' = floor(r / 2^f)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TruncationMaterial {
    pub r0: RingTensor,
    pub r1: RingTensor,
    pub r_high0: RingTensor,
    pub r_high1: RingTensor,
}

/// Source of correlated randomness for the in-process API.
pub trait TripleSource {
    fn mask_material(&mut self, shape: &[usize], backend: Backend) -> MaskMaterial;
    /// Shares of `B(a^x, a^y)`.
    fn product_material(
        &mut self,
        kind: &Bilinear,
        ax: &RingTensor,
        ay: &RingTensor,
    ) -> Result<(RingTensor, RingTensor)>;
    fn truncation_material(
        &mut self,
        shape: &[usize],
        backend: Backend,
        cfg: &TruncationConfig,
    ) -> TruncationMaterial;
}

/// Splits `x` as `share0` uniform, `share1 = x - share0`.
pub fn share(x: &RingTensor, scale: u32, rng: &mut RngStream) -> PrivateTensor {
    let share0 = sample_uniform(x.shape(), x.backend(), rng);
    let share1 = x.sub(&share0).expect("same shape and backend");
    PrivateTensor {
        share0,
        share1,
        scale,
    }
}

pub fn reconstruct(p: &PrivateTensor) -> Result<RingTensor> {
    if p.share0.shape() != p.share1.shape() {
        return Err(Error::ShapeMismatch(format!(
            "shares of shape {:?} and {:?}",
            p.share0.shape(),
            p.share1.shape()
        )));
    }
    p.share0.add(&p.share1)
}

fn same_scale(p: &PrivateTensor, q: &PrivateTensor) -> Result<u32> {
    if p.scale != q.scale {
        return Err(Error::ScaleMismatch(p.scale, q.scale));
    }
    Ok(p.scale)
}

pub fn add(p: &PrivateTensor, q: &PrivateTensor) -> Result<PrivateTensor> {
    let scale = same_scale(p, q)?;
    Ok(PrivateTensor {
        share0: p.share0.add(&q.share0)?,
        share1: p.share1.add(&q.share1)?,
        scale,
    })
}

pub fn sub(p: &PrivateTensor, q: &PrivateTensor) -> Result<PrivateTensor> {
    let scale = same_scale(p, q)?;
    Ok(PrivateTensor {
        share0: p.share0.sub(&q.share0)?,
        share1: p.share1.sub(&q.share1)?,
        scale,
    })
}

pub fn neg(p: &PrivateTensor) -> PrivateTensor {
    PrivateTensor {
        share0: p.share0.neg(),
        share1: p.share1.neg(),
        scale: p.scale,
    }
}

/// Adds a public constant already encoded at `p.scale`.
pub fn add_plain(p: &PrivateTensor, constant: &RingTensor) -> Result<PrivateTensor> {
    Ok(PrivateTensor {
        share0: party::add_public(0, &p.share0, constant)?,
        share1: party::add_public(1, &p.share1, constant)?,
        scale: p.scale,
    })
}

/// Multiplies by a public constant encoded with `constant_scale` fractional bits.
pub fn mul_plain(p: &PrivateTensor, constant: &RingTensor, constant_scale: u32) -> Result<PrivateTensor> {
    Ok(PrivateTensor {
        share0: p.share0.mul(constant)?,
        share1: p.share1.mul(constant)?,
        scale: p.scale + constant_scale,
    })
}

/// Private to masked. Online, each server sends `x_i - a_i` to the other.
pub fn mask(p: &PrivateTensor, source: &mut impl TripleSource) -> Result<MaskedTensor> {
    let MaskMaterial { a, a0, a1 } = source.mask_material(p.shape(), p.backend());
    let d0 = party::mask_difference(&p.share0, &a0)?;
    let d1 = party::mask_difference(&p.share1, &a1)?;
    let alpha = party::combine_differences(&d0, &d1)?;
    Ok(MaskedTensor {
        a,
        a0,
        a1,
        alpha,
        scale: p.scale,
    })
}

/// Elementwise product of masked tensors; the result has `scale_x + scale_y`.
pub fn mul(x: &MaskedTensor, y: &MaskedTensor, source: &mut impl TripleSource) -> Result<PrivateTensor> {
    bilinear(&Bilinear::Mul, x, y, source)
}

pub fn bilinear(
    kind: &Bilinear,
    x: &MaskedTensor,
    y: &MaskedTensor,
    source: &mut impl TripleSource,
) -> Result<PrivateTensor> {
    kind.output_shape(x.shape(), y.shape())?;
    let (c0, c1) = source.product_material(kind, &x.a, &y.a)?;
    let share0 = party::bilinear_share(kind, 0, &x.alpha, &y.alpha, &x.a0, &y.a0, &c0)?;
    let share1 = party::bilinear_share(kind, 1, &x.alpha, &y.alpha, &x.a1, &y.a1, &c1)?;
    Ok(PrivateTensor {
        share0,
        share1,
        scale: x.scale + y.scale,
    })
}

/// Divides by `2^f`, taking the scale from `2f` back to `f`.
pub fn truncate(
    p: &PrivateTensor,
    cfg: &TruncationConfig,
    source: &mut impl TripleSource,
) -> Result<PrivateTensor> {
    cfg.validate(p.backend())?;
    if p.scale != 2 * cfg.frac_bits {
        return Err(Error::ScaleMismatch(p.scale, 2 * cfg.frac_bits));
    }
    let (share0, share1) = match cfg.mode {
        TruncMode::LocalOptimistic => (
            party::trunc_local(0, &p.share0, cfg.frac_bits)?,
            party::trunc_local(1, &p.share1, cfg.frac_bits)?,
        ),
        TruncMode::Interactive => {
            let m = source.truncation_material(p.shape(), p.backend(), cfg);
            let c0 = party::trunc_open_share(0, &p.share0, &m.r0, cfg)?;
            let c1 = party::trunc_open_share(1, &p.share1, &m.r1, cfg)?;
            let opened = c0.add(&c1)?;
            (
                party::trunc_finish(0, &opened, &m.r_high0, cfg)?,
                party::trunc_finish(1, &opened, &m.r_high1, cfg)?,
            )
        }
    };
    Ok(PrivateTensor {
        share0,
        share1,
        scale: p.scale - cfg.frac_bits,
    })
}

/// Structural operations that every party applies to its own tensors.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LocalOp {
    Transpose(Vec<usize>),
    Reshape(Vec<usize>),
    Stack { axis: usize },
    Concat { axis: usize },
    ReduceSum { axis: usize },
}

impl LocalOp {
    pub fn apply(&self, inputs: &[&RingTensor]) -> Result<RingTensor> {
        let single = || {
            if inputs.len() == 1 {
                Ok(inputs[0])
            } else {
                Err(Error::ShapeMismatch(format!("{self:?} takes one input, got {}", inputs.len())))
            }
        };
        match self {
            LocalOp::Transpose(perm) => single()?.transpose(perm),
            LocalOp::Reshape(shape) => single()?.reshape(shape),
            LocalOp::ReduceSum { axis } => single()?.reduce_sum(*axis),
            LocalOp::Stack { axis } => RingTensor::stack(inputs, *axis),
            LocalOp::Concat { axis } => RingTensor::concat(inputs, *axis),
        }
    }

    pub fn output_shape(&self, inputs: &[&[usize]]) -> Result<Vec<usize>> {
        // zero-width tensors carry the shape logic without any arithmetic
        let probes: Vec<RingTensor> = inputs.iter().map(|s| RingTensor::zeros(Backend::Int64, s)).collect();
        let refs: Vec<&RingTensor> = probes.iter().collect();
        Ok(self.apply(&refs)?.shape().to_vec())
    }
}

fn common_scale<'a>(scales: impl Iterator<Item = u32>) -> Result<u32> {
    let mut scales = scales;
    let first = scales.next().ok_or_else(|| Error::ShapeMismatch("no inputs".into()))?;
    for s in scales {
        if s != first {
            return Err(Error::ScaleMismatch(first, s));
        }
    }
    Ok(first)
}

pub fn local_private(op: &LocalOp, inputs: &[&PrivateTensor]) -> Result<PrivateTensor> {
    let scale = common_scale(inputs.iter().map(|p| p.scale))?;
    let s0: Vec<&RingTensor> = inputs.iter().map(|p| &p.share0).collect();
    let s1: Vec<&RingTensor> = inputs.iter().map(|p| &p.share1).collect();
    Ok(PrivateTensor {
        share0: op.apply(&s0)?,
        share1: op.apply(&s1)?,
        scale,
    })
}

pub fn local_masked(op: &LocalOp, inputs: &[&MaskedTensor]) -> Result<MaskedTensor> {
    let scale = common_scale(inputs.iter().map(|m| m.scale))?;
    let pick = |f: fn(&MaskedTensor) -> &RingTensor| -> Result<RingTensor> {
        let parts: Vec<&RingTensor> = inputs.iter().map(|m| f(m)).collect();
        op.apply(&parts)
    };
    Ok(MaskedTensor {
        a: pick(|m| &m.a)?,
        a0: pick(|m| &m.a0)?,
        a1: pick(|m| &m.a1)?,
        alpha: pick(|m| &m.alpha)?,
        scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::offline::Dealer;
    use crate::ring::{decode_at, encode, FixedPointConfig};
    use crate::tensor::RealTensor;

    fn ring(backend: Backend, shape: &[usize], seed: u64) -> RingTensor {
        sample_uniform(shape, backend, &mut RngStream::new(seed, "test-values"))
    }

    #[test]
    fn share_reconstruct_both_backends() {
        for backend in [Backend::Int64, Backend::Crt] {
            let x = ring(backend, &[3, 4], 1);
            let p = share(&x, 0, &mut RngStream::new(2, "share"));
            assert_ne!(p.share0, x);
            assert_eq!(reconstruct(&p).unwrap(), x);
        }
    }

    #[test]
    fn linear_ops_match_plain_ring() {
        let mut rng = RngStream::new(3, "share");
        let x = ring(Backend::Crt, &[5], 4);
        let y = ring(Backend::Crt, &[5], 5);
        let (px, py) = (share(&x, 0, &mut rng), share(&y, 0, &mut rng));
        assert_eq!(reconstruct(&add(&px, &py).unwrap()).unwrap(), x.add(&y).unwrap());
        assert_eq!(reconstruct(&sub(&px, &py).unwrap()).unwrap(), x.sub(&y).unwrap());
        assert_eq!(reconstruct(&neg(&px)).unwrap(), x.neg());
        assert_eq!(reconstruct(&add_plain(&px, &y).unwrap()).unwrap(), x.add(&y).unwrap());
    }

    #[test]
    fn scale_mismatch_is_rejected() {
        let mut rng = RngStream::new(3, "share");
        let x = ring(Backend::Int64, &[2], 4);
        let (p, q) = (share(&x, 16, &mut rng), share(&x, 32, &mut rng));
        assert!(matches!(add(&p, &q), Err(Error::ScaleMismatch(16, 32))));
    }

    #[test]
    fn masked_matmul_is_exact() {
        let mut dealer = Dealer::new(7);
        let mut rng = RngStream::new(8, "share");
        for backend in [Backend::Int64, Backend::Crt] {
            let x = ring(backend, &[3, 4], 9);
            let y = ring(backend, &[4, 2], 10);
            let mx = mask(&share(&x, 0, &mut rng), &mut dealer).unwrap();
            let my = mask(&share(&y, 0, &mut rng), &mut dealer).unwrap();
            let z = bilinear(&Bilinear::MatMul, &mx, &my, &mut dealer).unwrap();
            assert_eq!(reconstruct(&z).unwrap(), x.matmul(&y).unwrap());
            // a masked tensor can be reused for a second product
            let w = mul(&mx, &mx, &mut dealer).unwrap();
            assert_eq!(reconstruct(&w).unwrap(), x.mul(&x).unwrap());
        }
    }

    #[test]
    fn truncation_error_within_one_unit() {
        let mut dealer = Dealer::new(11);
        let mut rng = RngStream::new(12, "share");
        for backend in [Backend::Int64, Backend::Crt] {
            let fixed = FixedPointConfig::default_for(backend);
            let cfg = TruncationConfig::new(TruncMode::Interactive, &fixed);
            let f = fixed.frac_bits;
            let values = RealTensor::new(vec![6], vec![-3.0, -1.2345, 0.0, 0.5, 2.75, 7.1]).unwrap();
            let x = crate::ring::encode_at(&values, 2 * f, &fixed, backend).unwrap();
            let t = truncate(&share(&x, 2 * f, &mut rng), &cfg, &mut dealer).unwrap();
            let got = reconstruct(&t).unwrap().to_signed();
            let want = encode(&values, &fixed, backend).unwrap().to_signed();
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() <= 1, "{g} vs {w}");
            }
        }
    }

    #[test]
    fn local_truncation_int64_only() {
        let mut dealer = Dealer::new(1);
        let mut rng = RngStream::new(2, "share");
        let fixed = FixedPointConfig::default_for(Backend::Int64);
        let cfg = TruncationConfig::new(TruncMode::LocalOptimistic, &fixed);
        let v = RealTensor::new(vec![3], vec![-2.5, 0.25, 1.0]).unwrap();
        let x = crate::ring::encode_at(&v, 32, &fixed, Backend::Int64).unwrap();
        let t = truncate(&share(&x, 32, &mut rng), &cfg, &mut dealer).unwrap();
        let out = decode_at(&reconstruct(&t).unwrap(), 16);
        for (o, w) in out.data.iter().zip(&v.data) {
            assert!((o - w).abs() <= 2.0 / 65536.0);
        }
        let crt_fixed = FixedPointConfig::default_for(Backend::Crt);
        let crt_cfg = TruncationConfig::new(TruncMode::LocalOptimistic, &crt_fixed);
        assert!(matches!(crt_cfg.validate(Backend::Crt), Err(Error::ModeUnsupported(..))));
    }

    #[test]
    fn truncate_requires_double_scale() {
        let mut dealer = Dealer::new(1);
        let fixed = FixedPointConfig::default_for(Backend::Int64);
        let cfg = TruncationConfig::new(TruncMode::Interactive, &fixed);
        let x = ring(Backend::Int64, &[2], 1);
        let p = share(&x, 16, &mut RngStream::new(1, "s"));
        assert!(matches!(truncate(&p, &cfg, &mut dealer), Err(Error::ScaleMismatch(16, 32))));
    }

    #[test]
    fn local_ops_on_masked_tensors() {
        let mut dealer = Dealer::new(5);
        let mut rng = RngStream::new(6, "share");
        let x = ring(Backend::Int64, &[2, 3], 1);
        let m = mask(&share(&x, 0, &mut rng), &mut dealer).unwrap();
        let t = local_masked(&LocalOp::Transpose(vec![1, 0]), &[&m]).unwrap();
        assert_eq!(reconstruct(&t.unmask().unwrap()).unwrap(), x.transpose(&[1, 0]).unwrap());
        let s = local_masked(&LocalOp::Stack { axis: 0 }, &[&m, &m]).unwrap();
        assert_eq!(s.shape(), &[2, 2, 3]);
    }
}
