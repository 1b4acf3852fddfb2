//! Least-squares polynomial stand-ins for ReLU.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_DEGREE: usize = 4;
pub const DEFAULT_INTERVAL: (f64, f64) = (-3.0, 3.0);
const FIT_POINTS: usize = 1001;
const CHECK_POINTS: usize = 100_001;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReluFit {
    /// Lowest degree first.
    pub coeffs: Vec<f64>,
    pub interval: (f64, f64),
    /// Largest `|p(t) - max(0, t)|` over a dense grid of the interval.
    pub max_error: f64,
}

pub fn eval_poly(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
}

/// Fits `max(0, t)` on `interval` with a polynomial of `degree`.
pub fn poly_relu_fit(degree: usize, interval: (f64, f64)) -> Result<ReluFit> {
    if degree < 2 {
        return Err(Error::DegreeTooLow(degree));
    }
    let (lo, hi) = interval;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Config(format!("bad fit interval [{lo}, {hi}]")));
    }
    // fit in u in [-1, 1] for conditioning, then substitute back
    let mid = (lo + hi) / 2.0;
    let half = (hi - lo) / 2.0;
    let grid = |n: usize| (0..n).map(move |i| lo + (hi - lo) * i as f64 / (n - 1) as f64);
    let design = DMatrix::from_fn(FIT_POINTS, degree + 1, |r, c| {
        let t = lo + (hi - lo) * r as f64 / (FIT_POINTS - 1) as f64;
        ((t - mid) / half).powi(c as i32)
    });
    let target = DVector::from_iterator(FIT_POINTS, grid(FIT_POINTS).map(|t| t.max(0.0)));
    let solution = design
        .svd(true, true)
        .solve(&target, 1e-14)
        .map_err(|e| Error::Config(format!("relu fit failed: {e}")))?;
    let coeffs = expand_affine(solution.as_slice(), mid, half);
    let max_error = grid(CHECK_POINTS)
        .map(|t| (eval_poly(&coeffs, t) - t.max(0.0)).abs())
        .fold(0.0, f64::max);
    Ok(ReluFit {
        coeffs,
        interval,
        max_error,
    })
}

/// Coefficients in `t` of `sum_k a_k ((t - mid) / half)^k`.
fn expand_affine(a: &[f64], mid: f64, half: f64) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    // power holds the coefficients of ((t - mid)/half)^k
    let mut power = vec![1.0];
    for &ak in a {
        for (o, p) in out.iter_mut().zip(&power) {
            *o += ak * p;
        }
        let mut next = vec![0.0; power.len() + 1];
        for (i, &p) in power.iter().enumerate() {
            next[i + 1] += p / half;
            next[i] -= p * mid / half;
        }
        power = next;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degree_four_fit_properties() {
        let fit = poly_relu_fit(4, DEFAULT_INTERVAL).unwrap();
        assert_eq!(fit.coeffs.len(), 5);
        let eps = fit.max_error;
        assert!(eps > 0.0 && eps < 0.3, "{eps}");
        assert!((eval_poly(&fit.coeffs, 3.0) - 3.0).abs() <= eps);
        for i in 0..=600 {
            let t = -3.0 + i as f64 * 0.01;
            assert!(eval_poly(&fit.coeffs, t) >= -eps - 1e-12);
            let odd = eval_poly(&fit.coeffs, t) - eval_poly(&fit.coeffs, -t);
            assert!((odd - t).abs() <= 2.0 * eps + 1e-12);
        }
    }

    #[test]
    fn higher_degree_fits_better() {
        let e2 = poly_relu_fit(2, DEFAULT_INTERVAL).unwrap().max_error;
        let e4 = poly_relu_fit(4, DEFAULT_INTERVAL).unwrap().max_error;
        assert!(e2 > e4);
    }

    #[test]
    fn degree_too_low() {
        assert!(matches!(poly_relu_fit(1, DEFAULT_INTERVAL), Err(Error::DegreeTooLow(1))));
    }

    #[test]
    fn affine_expansion() {
        // (t - 1)/2 squared = t^2/4 - t/2 + 1/4
        let c = expand_affine(&[0.0, 0.0, 1.0], 1.0, 2.0);
        assert!((c[0] - 0.25).abs() < 1e-15 && (c[1] + 0.5).abs() < 1e-15 && (c[2] - 0.25).abs() < 1e-15);
    }
}
