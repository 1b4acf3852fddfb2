//! Residue-number parameters for the composite "int100" ring.

use std::sync::LazyLock;

/// Four primes below 2^31; their product is just under 2^124.
///
/// Residue products fit in a `u64` and the composite fits in a `u128`, so
/// lifting back to an integer never needs arbitrary precision.
pub const CRT_MODULI: [u64; 4] = [2147483647, 2147483629, 2147483587, 2147483579];

pub const CRT_WIDTH: usize = CRT_MODULI.len();

#[derive(Debug)]
pub struct CrtParams {
    moduli: [u64; CRT_WIDTH],
    product: u128,
    /// `inverse[j][i] = m_j^{-1} mod m_i` for `j < i`.
    inverse: [[u64; CRT_WIDTH]; CRT_WIDTH],
}

static PARAMS: LazyLock<CrtParams> = LazyLock::new(|| CrtParams::new(CRT_MODULI));

pub fn crt() -> &'static CrtParams {
    &PARAMS
}

fn pow_mod(mut base: u64, mut exp: u64, m: u64) -> u64 {
    let mut acc = 1u64;
    base %= m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = (acc as u128 * base as u128 % m as u128) as u64;
        }
        base = (base as u128 * base as u128 % m as u128) as u64;
        exp >>= 1;
    }
    acc
}

/// `(hi * 2^64 + lo) mod m` for `m < 2^31`.
#[inline]
fn reduce_wide(hi: u64, lo: u64, m: u64) -> u64 {
    let shift = (u64::MAX % m + 1) % m;
    ((hi % m) * shift + lo % m) % m
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl CrtParams {
    fn new(moduli: [u64; CRT_WIDTH]) -> Self {
        let mut product = 1u128;
        for (i, &m) in moduli.iter().enumerate() {
            assert!(m < 1 << 31, "modulus {m} too large for 64-bit residue products");
            for &other in &moduli[..i] {
                assert_eq!(gcd(m, other), 1, "moduli must be pairwise coprime");
            }
            product = product.checked_mul(m as u128).expect("modulus product overflows u128");
        }
        let mut inverse = [[0u64; CRT_WIDTH]; CRT_WIDTH];
        for i in 0..CRT_WIDTH {
            for j in 0..i {
                // moduli are prime, so Fermat gives the inverse
                inverse[j][i] = pow_mod(moduli[j] % moduli[i], moduli[i] - 2, moduli[i]);
            }
        }
        CrtParams {
            moduli,
            product,
            inverse,
        }
    }

    pub fn moduli(&self) -> &[u64; CRT_WIDTH] {
        &self.moduli
    }

    /// The composite modulus M.
    pub fn product(&self) -> u128 {
        self.product
    }

    /// floor(log2 M).
    pub fn bits(&self) -> u32 {
        127 - self.product.leading_zeros()
    }

    /// Garner reconstruction into `[0, M)`.
    pub fn lift(&self, residues: &[u64]) -> u128 {
        debug_assert_eq!(residues.len(), CRT_WIDTH);
        let mut digits = [0u64; CRT_WIDTH];
        for i in 0..CRT_WIDTH {
            let m = CRT_MODULI[i];
            let mut t = residues[i] % m;
            for j in 0..i {
                t = (t + m - digits[j] % m) % m;
                t = t * self.inverse[j][i] % m;
            }
            digits[i] = t;
        }
        let mut value = 0u128;
        let mut radix = 1u128;
        for i in 0..CRT_WIDTH {
            value += digits[i] as u128 * radix;
            if i + 1 < CRT_WIDTH {
                radix *= self.moduli[i] as u128;
            }
        }
        value
    }

    /// Lifts to the centered representative in `(-M/2, M/2]`.
    pub fn lift_signed(&self, residues: &[u64]) -> i128 {
        let v = self.lift(residues);
        if v > self.product / 2 {
            -((self.product - v) as i128)
        } else {
            v as i128
        }
    }

    pub fn residues_of(&self, value: i128, out: &mut [u64]) {
        let magnitude = value.unsigned_abs();
        let (hi, lo) = ((magnitude >> 64) as u64, magnitude as u64);
        for (j, slot) in out.iter_mut().enumerate().take(CRT_WIDTH) {
            let m = CRT_MODULI[j];
            let r = reduce_wide(hi, lo, m);
            *slot = if value < 0 && r != 0 { m - r } else { r };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_covers_100_bits() {
        let p = crt();
        assert_eq!(p.bits(), 123);
        assert!(p.product() >= 1u128 << 100);
    }

    #[test]
    fn lift_round_trips_edges() {
        let p = crt();
        let mut r = [0u64; CRT_WIDTH];
        for v in [0i128, 1, -1, (1 << 100) + 12345, -(1 << 110), (p.product() / 2) as i128] {
            p.residues_of(v, &mut r);
            assert_eq!(p.lift_signed(&r), v);
        }
        p.residues_of(-1, &mut r);
        assert_eq!(p.lift(&r), p.product() - 1);
    }
}
