use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use super::{Backend, RingTensor};

/// A labelled ChaCha20 stream.
///
/// Streams are derived from `(seed, label)` so every party and purpose gets
/// independent, reproducible randomness from one session seed.
#[derive(Clone, Debug)]
pub struct RngStream {
    inner: ChaCha20Rng,
}

impl RngStream {
    pub fn new(seed: u64, label: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update(label.as_bytes());
        let digest: [u8; 32] = hasher.finalize().into();
        RngStream {
            inner: ChaCha20Rng::from_seed(digest),
        }
    }

    pub fn from_entropy() -> Self {
        RngStream {
            inner: ChaCha20Rng::from_os_rng(),
        }
    }

    /// Uniform in `[0, bound)`.
    pub fn below(&mut self, bound: u64) -> u64 {
        self.inner.random_range(0..bound)
    }

    /// Uniform in `[0, 2^bits)`, `bits <= 128`.
    pub fn bits(&mut self, bits: u32) -> u128 {
        let v = ((self.inner.next_u64() as u128) << 64) | self.inner.next_u64() as u128;
        if bits >= 128 {
            v
        } else {
            v & ((1u128 << bits) - 1)
        }
    }

    pub fn unit_f64(&mut self) -> f64 {
        self.inner.random::<f64>()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Uniform ring tensor; each CRT residue is uniform in its own modulus.
pub fn sample_uniform(shape: &[usize], backend: Backend, rng: &mut RngStream) -> RingTensor {
    let n: usize = shape.iter().product();
    let data = match backend {
        Backend::Int64 => (0..n).map(|_| rng.next_u64()).collect(),
        Backend::Crt => {
            let moduli = super::crt().moduli();
            let mut data = Vec::with_capacity(n * moduli.len());
            for _ in 0..n {
                for &m in moduli {
                    data.push(rng.below(m));
                }
            }
            data
        }
    };
    RingTensor::from_parts_unchecked(backend, shape.to_vec(), data)
}
