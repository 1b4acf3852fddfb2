//! KL divergence between output distributions.

use crate::tensor::RealTensor;

/// Added to both sides so empty bins do not blow up the logarithm.
pub const KL_SMOOTHING: f64 = 1e-9;

/// `sum_i p_i ln((p_i + e) / (q_i + e))` with `e = KL_SMOOTHING`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| pi * ((pi + KL_SMOOTHING) / (qi + KL_SMOOTHING)).ln())
        .sum()
}

/// Mean over rows of `KL(reference_row || other_row)`.
pub fn mean_kl(reference: &RealTensor, other: &RealTensor) -> f64 {
    let rows = reference.rows().count();
    if rows == 0 {
        return 0.0;
    }
    reference.rows().zip(other.rows()).map(|(p, q)| kl_divergence(p, q)).sum::<f64>() / rows as f64
}
