//! Big-integer reference arithmetic for checking ring results.

#![allow(dead_code)]

use maskmpc::ring::{crt, ConvGeometry, RingTensor};
use maskmpc::Backend;
use num_bigint::{BigInt, BigUint};
use num_traits::{One, Zero};

pub fn modulus(backend: Backend) -> BigUint {
    match backend {
        Backend::Int64 => BigUint::one() << 64u32,
        Backend::Crt => BigUint::from(crt().product()),
    }
}

pub fn big_values(t: &RingTensor) -> Vec<BigUint> {
    t.to_unsigned().into_iter().map(BigUint::from).collect()
}

/// Reduces signed big integers into `[0, m)`.
pub fn reduce(values: &[BigInt], backend: Backend) -> Vec<BigUint> {
    let m = BigInt::from(modulus(backend));
    values
        .iter()
        .map(|v| {
            let r = ((v % &m) + &m) % &m;
            r.to_biguint().expect("non-negative after reduction")
        })
        .collect()
}

pub fn elementwise(x: &RingTensor, y: &RingTensor, f: impl Fn(&BigUint, &BigUint, &BigUint) -> BigUint) -> Vec<BigUint> {
    let m = modulus(x.backend());
    big_values(x).iter().zip(big_values(y).iter()).map(|(a, b)| f(a, b, &m) % &m).collect()
}

pub fn add(x: &RingTensor, y: &RingTensor) -> Vec<BigUint> {
    elementwise(x, y, |a, b, _| a + b)
}

pub fn sub(x: &RingTensor, y: &RingTensor) -> Vec<BigUint> {
    elementwise(x, y, |a, b, m| a + m - b)
}

pub fn mul(x: &RingTensor, y: &RingTensor) -> Vec<BigUint> {
    elementwise(x, y, |a, b, _| a * b)
}

pub fn neg(x: &RingTensor) -> Vec<BigUint> {
    let m = modulus(x.backend());
    big_values(x).iter().map(|a| (&m - a) % &m).collect()
}

pub fn matmul(x: &RingTensor, y: &RingTensor) -> Vec<BigUint> {
    let (r, s, t) = (x.shape()[0], x.shape()[1], y.shape()[1]);
    let (a, b, m) = (big_values(x), big_values(y), modulus(x.backend()));
    let mut out = Vec::with_capacity(r * t);
    for i in 0..r {
        for j in 0..t {
            let mut acc = BigUint::zero();
            for k in 0..s {
                acc += &a[i * s + k] * &b[k * t + j];
            }
            out.push(acc % &m);
        }
    }
    out
}

/// Direct NHWC convolution with zero padding.
pub fn conv2d(x: &RingTensor, k: &RingTensor, g: &ConvGeometry) -> Vec<BigUint> {
    let (batch, h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (f, o) = (k.shape()[0], k.shape()[3]);
    let oh = (h + 2 * g.padding - f) / g.stride + 1;
    let ow = (w + 2 * g.padding - f) / g.stride + 1;
    let (a, b, m) = (big_values(x), big_values(k), modulus(x.backend()));
    let mut out = Vec::with_capacity(batch * oh * ow * o);
    for n in 0..batch {
        for oy in 0..oh {
            for ox in 0..ow {
                for oc in 0..o {
                    let mut acc = BigUint::zero();
                    for fy in 0..f {
                        for fx in 0..f {
                            let iy = (oy * g.stride + fy) as isize - g.padding as isize;
                            let ix = (ox * g.stride + fx) as isize - g.padding as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            for ic in 0..c {
                                let xi = ((n * h + iy as usize) * w + ix as usize) * c + ic;
                                let ki = ((fy * f + fx) * c + ic) * o + oc;
                                acc += &a[xi] * &b[ki];
                            }
                        }
                    }
                    out.push(acc % &m);
                }
            }
        }
    }
    out
}

/// Floor division of a signed value by `2^bits`.
pub fn floor_shift(v: i128, bits: u32) -> i128 {
    v >> bits
}
