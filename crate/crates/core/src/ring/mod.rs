//! Tensors over Z_2^64 and over the CRT composite ring, plus fixed-point
//! encoding between reals and ring elements.

mod crt;
mod fixed;
pub mod layout;
mod rng;

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

pub use self::crt::{crt, CrtParams, CRT_MODULI, CRT_WIDTH};
pub use self::fixed::{decode, decode_at, encode, encode_at, quantize, FixedPointConfig};
pub use self::layout::ConvGeometry;
pub use self::rng::{sample_uniform, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    /// Native 64-bit words, arithmetic mod 2^64.
    Int64,
    /// Residues modulo `CRT_MODULI`, the "int100" type.
    #[serde(rename = "int100")]
    Crt,
}

impl Backend {
    /// Words per element.
    pub fn width(self) -> usize {
        match self {
            Backend::Int64 => 1,
            Backend::Crt => CRT_WIDTH,
        }
    }

    /// floor(log2 m) for the ring modulus.
    pub fn ring_bits(self) -> u32 {
        match self {
            Backend::Int64 => 64,
            Backend::Crt => crt().bits(),
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Backend::Int64 => 0,
            Backend::Crt => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Backend> {
        match tag {
            0 => Some(Backend::Int64),
            1 => Some(Backend::Crt),
            _ => None,
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Int64 => "int64",
            Backend::Crt => "int100",
        })
    }
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "int64" => Ok(Backend::Int64),
            "int100" | "crt" => Ok(Backend::Crt),
            other => Err(Error::Config(format!("unknown backend {other:?}"))),
        }
    }
}

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
}

impl BinOp {
    #[inline]
    fn wrapping(self, a: u64, b: u64) -> u64 {
        match self {
            BinOp::Add => a.wrapping_add(b),
            BinOp::Sub => a.wrapping_sub(b),
            BinOp::Mul => a.wrapping_mul(b),
        }
    }

    #[inline]
    fn modular(self, a: u64, b: u64, m: u64) -> u64 {
        match self {
            BinOp::Add => add_mod(a, b, m),
            BinOp::Sub => add_mod(a, m - b, m),
            BinOp::Mul => a * b % m,
        }
    }
}

/// Splits interleaved residues into one contiguous plane per modulus.
fn planes(data: &[u64], w: usize) -> Vec<Vec<u64>> {
    (0..w).map(|j| data.iter().skip(j).step_by(w).copied().collect()).collect()
}

#[inline]
fn add_mod(a: u64, b: u64, m: u64) -> u64 {
    let s = a + b;
    if s >= m {
        s - m
    } else {
        s
    }
}

/// An n-dimensional tensor of ring elements, row-major.
///
/// For the CRT backend each element is `CRT_WIDTH` contiguous residues.
#[derive(Clone, PartialEq, Eq)]
pub struct RingTensor {
    backend: Backend,
    shape: Vec<usize>,
    data: Vec<u64>,
}

impl fmt::Debug for RingTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<_> = self.data.iter().take(8).collect();
        f.debug_struct("RingTensor")
            .field("backend", &self.backend)
            .field("shape", &self.shape)
            .field("data", &preview)
            .finish()
    }
}

impl RingTensor {
    pub fn new(backend: Backend, shape: Vec<usize>, data: Vec<u64>) -> Result<Self> {
        let expected = layout::numel(&shape) * backend.width();
        if data.len() != expected {
            return Err(shape_err(format!(
                "{} words for shape {shape:?} on {backend}, expected {expected}",
                data.len()
            )));
        }
        if backend == Backend::Crt {
            let moduli = crt().moduli();
            if let Some(i) = data.iter().enumerate().position(|(i, &r)| r >= moduli[i % CRT_WIDTH]) {
                return Err(shape_err(format!("residue {} at word {i} out of range", data[i])));
            }
        }
        Ok(RingTensor {
            backend,
            shape,
            data,
        })
    }

    pub(crate) fn from_parts_unchecked(backend: Backend, shape: Vec<usize>, data: Vec<u64>) -> Self {
        debug_assert_eq!(data.len(), layout::numel(&shape) * backend.width());
        RingTensor {
            backend,
            shape,
            data,
        }
    }

    pub fn zeros(backend: Backend, shape: &[usize]) -> Self {
        let n = layout::numel(shape) * backend.width();
        RingTensor::from_parts_unchecked(backend, shape.to_vec(), vec![0; n])
    }

    /// Embeds signed integers (reduced mod the ring modulus).
    pub fn from_i128s(backend: Backend, shape: &[usize], values: &[i128]) -> Result<Self> {
        if values.len() != layout::numel(shape) {
            return Err(shape_err(format!("{} values for shape {shape:?}", values.len())));
        }
        let data = match backend {
            Backend::Int64 => values.iter().map(|&v| v as u64).collect(),
            Backend::Crt => {
                let params = crt();
                let mut data = vec![0u64; values.len() * CRT_WIDTH];
                for (chunk, &v) in data.chunks_exact_mut(CRT_WIDTH).zip(values) {
                    params.residues_of(v, chunk);
                }
                data
            }
        };
        Ok(RingTensor::from_parts_unchecked(backend, shape.to_vec(), data))
    }

    pub fn scalar_i128(backend: Backend, value: i128) -> Self {
        RingTensor::from_i128s(backend, &[], &[value]).expect("scalar shape")
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        layout::numel(&self.shape)
    }

    /// Raw words; residues of one element are contiguous.
    pub fn words(&self) -> &[u64] {
        &self.data
    }

    pub fn into_words(self) -> Vec<u64> {
        self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    /// Each element as an unsigned integer in `[0, m)`.
    pub fn to_unsigned(&self) -> Vec<u128> {
        match self.backend {
            Backend::Int64 => self.data.iter().map(|&w| w as u128).collect(),
            Backend::Crt => {
                let params = crt();
                self.data.chunks_exact(CRT_WIDTH).map(|r| params.lift(r)).collect()
            }
        }
    }

    /// Each element as its centered signed representative.
    pub fn to_signed(&self) -> Vec<i128> {
        match self.backend {
            Backend::Int64 => self.data.iter().map(|&w| w as i64 as i128).collect(),
            Backend::Crt => {
                let params = crt();
                self.data.chunks_exact(CRT_WIDTH).map(|r| params.lift_signed(r)).collect()
            }
        }
    }

    fn same_backend(&self, other: &RingTensor) -> Result<()> {
        if self.backend != other.backend {
            return Err(Error::BackendMismatch(self.backend, other.backend));
        }
        Ok(())
    }

    fn binary(&self, rhs: &RingTensor, op: BinOp) -> Result<RingTensor> {
        self.same_backend(rhs)?;
        let w = self.backend.width();
        let (shape, data) = if self.shape == rhs.shape {
            let data = match self.backend {
                Backend::Int64 => self.data.iter().zip(&rhs.data).map(|(&a, &b)| op.wrapping(a, b)).collect(),
                Backend::Crt => {
                    let mut data = vec![0u64; self.data.len()];
                    for ((o, a), b) in data
                        .chunks_exact_mut(CRT_WIDTH)
                        .zip(self.data.chunks_exact(CRT_WIDTH))
                        .zip(rhs.data.chunks_exact(CRT_WIDTH))
                    {
                        for j in 0..CRT_WIDTH {
                            o[j] = op.modular(a[j], b[j], CRT_MODULI[j]);
                        }
                    }
                    data
                }
            };
            (self.shape.clone(), data)
        } else if rhs.is_scalar() || self.is_scalar() {
            let (tensor, scalar, scalar_left) = if rhs.is_scalar() {
                (self, rhs, false)
            } else {
                (rhs, self, true)
            };
            let mut data = tensor.data.clone();
            for chunk in data.chunks_exact_mut(w) {
                for (j, t) in chunk.iter_mut().enumerate() {
                    let s = scalar.data[j];
                    let (a, b) = if scalar_left { (s, *t) } else { (*t, s) };
                    *t = match self.backend {
                        Backend::Int64 => op.wrapping(a, b),
                        Backend::Crt => op.modular(a, b, CRT_MODULI[j]),
                    };
                }
            }
            (tensor.shape.clone(), data)
        } else {
            return Err(shape_err(format!(
                "elementwise op on {:?} and {:?}",
                self.shape, rhs.shape
            )));
        };
        Ok(RingTensor::from_parts_unchecked(self.backend, shape, data))
    }

    pub fn add(&self, rhs: &RingTensor) -> Result<RingTensor> {
        self.binary(rhs, BinOp::Add)
    }

    pub fn sub(&self, rhs: &RingTensor) -> Result<RingTensor> {
        self.binary(rhs, BinOp::Sub)
    }

    pub fn mul(&self, rhs: &RingTensor) -> Result<RingTensor> {
        self.binary(rhs, BinOp::Mul)
    }

    pub fn neg(&self) -> RingTensor {
        let data = match self.backend {
            Backend::Int64 => self.data.iter().map(|w| w.wrapping_neg()).collect(),
            Backend::Crt => {
                let moduli = crt().moduli();
                self.data
                    .iter()
                    .enumerate()
                    .map(|(i, &r)| if r == 0 { 0 } else { moduli[i % CRT_WIDTH] - r })
                    .collect()
            }
        };
        RingTensor::from_parts_unchecked(self.backend, self.shape.clone(), data)
    }

    /// `[r, s] x [s, t] -> [r, t]`.
    pub fn matmul(&self, rhs: &RingTensor) -> Result<RingTensor> {
        self.same_backend(rhs)?;
        if self.shape.len() != 2 || rhs.shape.len() != 2 || self.shape[1] != rhs.shape[0] {
            return Err(shape_err(format!("matmul of {:?} and {:?}", self.shape, rhs.shape)));
        }
        let (rows, inner, cols) = (self.shape[0], self.shape[1], rhs.shape[1]);
        let w = self.backend.width();
        let mut out = vec![0u64; rows * cols * w];
        if rows > 0 && cols > 0 {
            match self.backend {
                Backend::Int64 => out.par_chunks_mut(cols).enumerate().for_each(|(r, row)| {
                    let lhs = &self.data[r * inner..(r + 1) * inner];
                    for (k, &a) in lhs.iter().enumerate() {
                        if a == 0 {
                            continue;
                        }
                        let rhs_row = &rhs.data[k * cols..(k + 1) * cols];
                        for (o, &b) in row.iter_mut().zip(rhs_row) {
                            *o = o.wrapping_add(a.wrapping_mul(b));
                        }
                    }
                }),
                Backend::Crt => {
                    let lhs = planes(&self.data, w);
                    let rhs = planes(&rhs.data, w);
                    let moduli = crt().moduli();
                    let mut out_planes = vec![0u64; rows * cols * w];
                    out_planes.par_chunks_mut(cols).enumerate().for_each(|(idx, row)| {
                        let (j, r) = (idx / rows, idx % rows);
                        let m = moduli[j];
                        // residues are below 2^31, so three products and a
                        // folded accumulator stay below 2^64; folding uses
                        // 2^32 = fold (mod m) and only needs 32-bit multiplies
                        let fold = (1u64 << 32) % m;
                        let lhs = &lhs[j][r * inner..(r + 1) * inner];
                        let rhs = &rhs[j];
                        for k0 in (0..inner).step_by(3) {
                            let k1 = (k0 + 3).min(inner);
                            for k in k0..k1 {
                                let a = lhs[k] as u32 as u64;
                                for (o, &b) in row.iter_mut().zip(&rhs[k * cols..(k + 1) * cols]) {
                                    *o += a * (b as u32 as u64);
                                }
                            }
                            for o in row.iter_mut() {
                                *o = (*o & 0xffff_ffff) + (*o >> 32) * fold;
                            }
                        }
                        for o in row.iter_mut() {
                            *o %= m;
                        }
                    });
                    let plane = rows * cols;
                    for (i, o) in out.chunks_exact_mut(w).enumerate() {
                        for (j, v) in o.iter_mut().enumerate() {
                            *v = out_planes[j * plane + i];
                        }
                    }
                }
            }
        }
        Ok(RingTensor::from_parts_unchecked(self.backend, vec![rows, cols], out))
    }

    /// NHWC input `[B, H, W, C]` convolved with kernel `[F, F, C, O]`.
    pub fn conv2d(&self, kernel: &RingTensor, geometry: &ConvGeometry) -> Result<RingTensor> {
        self.same_backend(kernel)?;
        let out_shape = geometry.output_shape(&self.shape, &kernel.shape)?;
        let patches = self.im2col(geometry)?;
        let flat_kernel = kernel.reshape(&[kernel.shape[0] * kernel.shape[1] * kernel.shape[2], kernel.shape[3]])?;
        patches.matmul(&flat_kernel)?.reshape(&out_shape)
    }

    pub fn im2col(&self, geometry: &ConvGeometry) -> Result<RingTensor> {
        let (data, shape) = layout::im2col(&self.data, self.backend.width(), &self.shape, geometry)?;
        Ok(RingTensor::from_parts_unchecked(self.backend, shape, data))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<RingTensor> {
        if layout::numel(shape) != self.numel() {
            return Err(shape_err(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        Ok(RingTensor::from_parts_unchecked(self.backend, shape.to_vec(), self.data.clone()))
    }

    pub fn transpose(&self, perm: &[usize]) -> Result<RingTensor> {
        let (data, shape) = layout::transpose(&self.data, self.backend.width(), &self.shape, perm)?;
        Ok(RingTensor::from_parts_unchecked(self.backend, shape, data))
    }

    fn check_all_backend(parts: &[&RingTensor]) -> Result<Backend> {
        let backend = parts.first().ok_or_else(|| shape_err("empty tensor list"))?.backend;
        for p in parts {
            if p.backend != backend {
                return Err(Error::BackendMismatch(backend, p.backend));
            }
        }
        Ok(backend)
    }

    pub fn stack(parts: &[&RingTensor], axis: usize) -> Result<RingTensor> {
        let backend = Self::check_all_backend(parts)?;
        let views: Vec<(&[u64], &[usize])> = parts.iter().map(|p| (p.data.as_slice(), p.shape.as_slice())).collect();
        let (data, shape) = layout::stack(&views, backend.width(), axis)?;
        Ok(RingTensor::from_parts_unchecked(backend, shape, data))
    }

    pub fn concat(parts: &[&RingTensor], axis: usize) -> Result<RingTensor> {
        let backend = Self::check_all_backend(parts)?;
        let views: Vec<(&[u64], &[usize])> = parts.iter().map(|p| (p.data.as_slice(), p.shape.as_slice())).collect();
        let (data, shape) = layout::concat(&views, backend.width(), axis)?;
        Ok(RingTensor::from_parts_unchecked(backend, shape, data))
    }

    pub fn index_axis(&self, axis: usize, index: usize) -> Result<RingTensor> {
        let (data, shape) = layout::index_axis(&self.data, self.backend.width(), &self.shape, axis, index)?;
        Ok(RingTensor::from_parts_unchecked(self.backend, shape, data))
    }

    pub fn reduce_sum(&self, axis: usize) -> Result<RingTensor> {
        let w = self.backend.width();
        let (data, shape) = match self.backend {
            Backend::Int64 => layout::reduce_axis(&self.data, w, &self.shape, axis, |acc, x| {
                acc[0] = acc[0].wrapping_add(x[0])
            })?,
            Backend::Crt => {
                let moduli = crt().moduli();
                layout::reduce_axis(&self.data, w, &self.shape, axis, |acc, x| {
                    for j in 0..w {
                        acc[j] = add_mod(acc[j], x[j], moduli[j]);
                    }
                })?
            }
        };
        Ok(RingTensor::from_parts_unchecked(self.backend, shape, data))
    }

    /// Little-endian serialization of the words (no header).
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * 8);
        for w in &self.data {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_le_bytes(backend: Backend, shape: &[usize], bytes: &[u8]) -> Result<RingTensor> {
        if bytes.len() % 8 != 0 {
            return Err(shape_err(format!("{} payload bytes is not a whole number of words", bytes.len())));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        RingTensor::new(backend, shape.to_vec(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn int64(shape: &[usize], values: &[i128]) -> RingTensor {
        RingTensor::from_i128s(Backend::Int64, shape, values).unwrap()
    }

    #[test]
    fn int64_wraparound() {
        let max = RingTensor::new(Backend::Int64, vec![1], vec![u64::MAX]).unwrap();
        let one = int64(&[1], &[1]);
        assert_eq!(max.add(&one).unwrap().words(), &[0]);
    }

    #[test]
    fn add_neg_is_zero() {
        for backend in [Backend::Int64, Backend::Crt] {
            let x = RingTensor::from_i128s(backend, &[3], &[5, -7, 1 << 90]).unwrap();
            assert_eq!(x.add(&x.neg()).unwrap(), RingTensor::zeros(backend, &[3]));
        }
    }

    #[test]
    fn scalar_broadcast_only() {
        let x = int64(&[2, 2], &[1, 2, 3, 4]);
        let s = RingTensor::scalar_i128(Backend::Int64, 10);
        assert_eq!(x.mul(&s).unwrap().to_signed(), vec![10, 20, 30, 40]);
        assert_eq!(s.sub(&x).unwrap().to_signed(), vec![9, 8, 7, 6]);
        let row = int64(&[2], &[1, 1]);
        assert!(matches!(x.add(&row), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn backend_mismatch() {
        let a = RingTensor::zeros(Backend::Int64, &[1]);
        let b = RingTensor::zeros(Backend::Crt, &[1]);
        assert!(matches!(a.add(&b), Err(Error::BackendMismatch(..))));
    }

    #[test]
    fn identity_matmul() {
        for backend in [Backend::Int64, Backend::Crt] {
            let eye = RingTensor::from_i128s(backend, &[3, 3], &[1, 0, 0, 0, 1, 0, 0, 0, 1]).unwrap();
            let a = RingTensor::from_i128s(backend, &[3, 2], &[1, -2, 3, -4, 5, 1 << 70]).unwrap();
            assert_eq!(eye.matmul(&a).unwrap(), a);
        }
    }

    #[test]
    fn one_by_one_matmul_is_elementwise() {
        for backend in [Backend::Int64, Backend::Crt] {
            let a = RingTensor::from_i128s(backend, &[1, 1], &[-123456789]).unwrap();
            let b = RingTensor::from_i128s(backend, &[1, 1], &[987654321987]).unwrap();
            assert_eq!(a.matmul(&b).unwrap(), a.mul(&b).unwrap());
        }
    }

    #[test]
    fn matmul_shape_error() {
        let a = RingTensor::zeros(Backend::Int64, &[2, 3]);
        assert!(matches!(a.matmul(&a), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn conv_one_hot_kernel_shifts() {
        // 3x3 kernel with a single 1 at (2, 1): output(y, x) = input(y + 2, x + 1)
        let input: Vec<i128> = (0..25).collect();
        let x = int64(&[1, 5, 5, 1], &input);
        let mut k = vec![0i128; 9];
        k[2 * 3 + 1] = 1;
        let kernel = int64(&[3, 3, 1, 1], &k);
        let out = x.conv2d(&kernel, &ConvGeometry::new(3, 1, 0)).unwrap();
        assert_eq!(out.shape(), &[1, 3, 3, 1]);
        let expected: Vec<i128> = (0..3).flat_map(|y| (0..3).map(move |x| ((y + 2) * 5 + x + 1) as i128)).collect();
        assert_eq!(out.to_signed(), expected);
    }

    #[test]
    fn crt_residue_range_checked() {
        assert!(RingTensor::new(Backend::Crt, vec![1], vec![CRT_MODULI[0], 0, 0, 0]).is_err());
        assert!(RingTensor::new(Backend::Crt, vec![1], vec![0; 3]).is_err());
    }

    #[test]
    fn bytes_round_trip() {
        let x = RingTensor::from_i128s(Backend::Crt, &[2], &[-1, 77]).unwrap();
        let y = RingTensor::from_le_bytes(Backend::Crt, &[2], &x.to_le_bytes()).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn reduce_sum_crt() {
        let x = RingTensor::from_i128s(Backend::Crt, &[2, 2], &[-5, 1 << 100, 5, 1 << 100]).unwrap();
        assert_eq!(x.reduce_sum(0).unwrap().to_signed(), vec![0, 1 << 101]);
    }
}
