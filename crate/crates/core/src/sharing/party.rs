//! What one server computes locally, given only its own view.
//!
//! `party` is the server index `i` in `{0, 1}`. These kernels are shared by
//! the in-process two-share API and the networked executor.

use super::{Bilinear, TruncMode, TruncationConfig};
use crate::error::{Error, Result};
use crate::ring::{Backend, RingTensor};

/// `x_i - a_i`, sent to the other server when masking.
pub fn mask_difference(x_share: &RingTensor, a_share: &RingTensor) -> Result<RingTensor> {
    x_share.sub(a_share)
}

/// `alpha = (x_0 - a_0) + (x_1 - a_1)`.
pub fn combine_differences(d0: &RingTensor, d1: &RingTensor) -> Result<RingTensor> {
    d0.add(d1)
}

/// `z_i = i*B(ax, ay) + B(ax, a_i^y) + B(a_i^x, ay) + c_i`.
///
/// Server 1 folds its public term into one evaluation:
/// `B(ax, ay + a_1^y)`, so each server evaluates the kernel twice.
pub fn bilinear_share(
    kind: &Bilinear,
    party: usize,
    alpha_x: &RingTensor,
    alpha_y: &RingTensor,
    ax_share: &RingTensor,
    ay_share: &RingTensor,
    product_share: &RingTensor,
) -> Result<RingTensor> {
    let right = if party == 1 {
        alpha_y.add(ay_share)?
    } else {
        ay_share.clone()
    };
    let z = kind.apply(alpha_x, &right)?;
    let z = z.add(&kind.apply(ax_share, alpha_y)?)?;
    let z = z.add(product_share)?;
    if z.shape() != product_share.shape() {
        return Err(Error::ShapeMismatch(format!(
            "product material {:?} does not match output {:?}",
            product_share.shape(),
            z.shape()
        )));
    }
    Ok(z)
}

/// Public constants are added by server 0 only.
pub fn add_public(party: usize, x_share: &RingTensor, constant: &RingTensor) -> Result<RingTensor> {
    if party == 0 {
        x_share.add(constant)
    } else if constant.is_scalar() || constant.shape() == x_share.shape() {
        Ok(x_share.clone())
    } else {
        Err(Error::ShapeMismatch(format!(
            "public constant {:?} vs share {:?}",
            constant.shape(),
            x_share.shape()
        )))
    }
}

/// Share of `c = x + 2^b + r`, opened in the interactive truncation round.
pub fn trunc_open_share(
    party: usize,
    x_share: &RingTensor,
    r_share: &RingTensor,
    cfg: &TruncationConfig,
) -> Result<RingTensor> {
    let c = x_share.add(r_share)?;
    if party == 1 {
        c.add(&RingTensor::scalar_i128(c.backend(), 1i128 << cfg.bound_bits))
    } else {
        Ok(c)
    }
}

/// `z_i = i*(floor(c/2^f) - 2^(b-f)) - r'_i` with `c` lifted to the integers.
pub fn trunc_finish(
    party: usize,
    opened: &RingTensor,
    r_high_share: &RingTensor,
    cfg: &TruncationConfig,
) -> Result<RingTensor> {
    let neg = r_high_share.neg();
    if party == 0 {
        return Ok(neg);
    }
    let offset = 1i128 << (cfg.bound_bits - cfg.frac_bits);
    let shifted: Vec<i128> = opened
        .to_unsigned()
        .into_iter()
        .map(|c| (c >> cfg.frac_bits) as i128 - offset)
        .collect();
    let public = RingTensor::from_i128s(opened.backend(), opened.shape(), &shifted)?;
    public.add(&neg)
}

/// Non-interactive truncation on Z_2^64: server 0 shifts its share, server 1
/// shifts the negation of its share.
pub fn trunc_local(party: usize, x_share: &RingTensor, frac_bits: u32) -> Result<RingTensor> {
    if x_share.backend() != Backend::Int64 {
        return Err(Error::ModeUnsupported(TruncMode::LocalOptimistic.name(), x_share.backend()));
    }
    let data = x_share
        .words()
        .iter()
        .map(|&w| {
            if party == 0 {
                w >> frac_bits
            } else {
                (w.wrapping_neg() >> frac_bits).wrapping_neg()
            }
        })
        .collect();
    RingTensor::new(Backend::Int64, x_share.shape().to_vec(), data)
}
