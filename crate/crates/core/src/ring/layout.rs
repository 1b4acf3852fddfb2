//! Row-major index plumbing shared by every element type.
//!
//! Each helper works on a flat slice where one logical element occupies
//! `width` consecutive items (one `u64` for Z_2^64, one residue per modulus
//! for the CRT ring, one `i128` for the plaintext simulator).

use crate::error::{shape_err, Result};

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    strides
}

pub fn transpose<T: Copy>(
    data: &[T],
    width: usize,
    shape: &[usize],
    perm: &[usize],
) -> Result<(Vec<T>, Vec<usize>)> {
    let rank = shape.len();
    let mut seen = vec![false; rank];
    if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
        return Err(shape_err(format!("invalid permutation {perm:?} for rank {rank}")));
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = strides(shape);
    // stride in the input for each output axis
    let walk: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = numel(shape);
    let mut out = Vec::with_capacity(n * width);
    let mut index = vec![0usize; rank];
    for _ in 0..n {
        let offset: usize = index.iter().zip(&walk).map(|(i, s)| i * s).sum();
        out.extend_from_slice(&data[offset * width..(offset + 1) * width]);
        for d in (0..rank).rev() {
            index[d] += 1;
            if index[d] < out_shape[d] {
                break;
            }
            index[d] = 0;
        }
    }
    Ok((out, out_shape))
}

/// Concatenates along an existing axis.
pub fn concat<T: Copy>(
    parts: &[(&[T], &[usize])],
    width: usize,
    axis: usize,
) -> Result<(Vec<T>, Vec<usize>)> {
    let (_, first) = parts
        .first()
        .ok_or_else(|| shape_err("concat of zero tensors"))?;
    if axis >= first.len() {
        return Err(shape_err(format!("concat axis {axis} out of range for rank {}", first.len())));
    }
    for (_, shape) in parts {
        let compatible = shape.len() == first.len()
            && shape.iter().zip(first.iter()).enumerate().all(|(d, (a, b))| d == axis || a == b);
        if !compatible {
            return Err(shape_err(format!("cannot concat {shape:?} with {first:?} on axis {axis}")));
        }
    }
    let outer: usize = first[..axis].iter().product();
    let inner: usize = first[axis + 1..].iter().product::<usize>() * width;
    let mut out_shape = first.to_vec();
    out_shape[axis] = parts.iter().map(|(_, s)| s[axis]).sum();
    let mut out = Vec::with_capacity(numel(&out_shape) * width);
    for o in 0..outer {
        for (data, shape) in parts {
            let block = shape[axis] * inner;
            out.extend_from_slice(&data[o * block..(o + 1) * block]);
        }
    }
    Ok((out, out_shape))
}

/// Stacks equally-shaped tensors along a new axis.
pub fn stack<T: Copy>(
    parts: &[(&[T], &[usize])],
    width: usize,
    axis: usize,
) -> Result<(Vec<T>, Vec<usize>)> {
    let (_, first) = parts
        .first()
        .ok_or_else(|| shape_err("stack of zero tensors"))?;
    if axis > first.len() {
        return Err(shape_err(format!("stack axis {axis} out of range for rank {}", first.len())));
    }
    if let Some((_, bad)) = parts.iter().find(|(_, s)| s != first) {
        return Err(shape_err(format!("cannot stack {bad:?} with {first:?}")));
    }
    let mut expanded = first.to_vec();
    expanded.insert(axis, 1);
    let views: Vec<(&[T], &[usize])> = parts.iter().map(|(d, _)| (*d, expanded.as_slice())).collect();
    concat(&views, width, axis)
}

/// Selects position `index` along `axis`, dropping the axis.
pub fn index_axis<T: Copy>(
    data: &[T],
    width: usize,
    shape: &[usize],
    axis: usize,
    index: usize,
) -> Result<(Vec<T>, Vec<usize>)> {
    if axis >= shape.len() || index >= shape[axis] {
        return Err(shape_err(format!("index {index} on axis {axis} out of range for {shape:?}")));
    }
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product::<usize>() * width;
    let mut out = Vec::with_capacity(outer * inner);
    for o in 0..outer {
        let start = (o * shape[axis] + index) * inner;
        out.extend_from_slice(&data[start..start + inner]);
    }
    let mut out_shape = shape.to_vec();
    out_shape.remove(axis);
    Ok((out, out_shape))
}

/// Folds `axis` away, combining elements with `accumulate(acc, element)`.
pub fn reduce_axis<T: Copy + Default>(
    data: &[T],
    width: usize,
    shape: &[usize],
    axis: usize,
    mut accumulate: impl FnMut(&mut [T], &[T]),
) -> Result<(Vec<T>, Vec<usize>)> {
    if axis >= shape.len() {
        return Err(shape_err(format!("reduce axis {axis} out of range for {shape:?}")));
    }
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = vec![T::default(); outer * inner * width];
    for o in 0..outer {
        for a in 0..shape[axis] {
            for i in 0..inner {
                let src = ((o * shape[axis] + a) * inner + i) * width;
                let dst = (o * inner + i) * width;
                accumulate(&mut out[dst..dst + width], &data[src..src + width]);
            }
        }
    }
    let mut out_shape = shape.to_vec();
    out_shape.remove(axis);
    Ok((out, out_shape))
}

/// Convolution window geometry for NHWC inputs and `[field, field, in, out]` kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct ConvGeometry {
    pub field: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(field: usize, stride: usize, padding: usize) -> Self {
        ConvGeometry {
            field,
            stride,
            padding,
        }
    }

    pub fn output_hw(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let span_h = height + 2 * self.padding;
        let span_w = width + 2 * self.padding;
        if self.field == 0 || self.stride == 0 || span_h < self.field || span_w < self.field {
            return Err(shape_err(format!(
                "convolution field {} stride {} does not fit {height}x{width} with padding {}",
                self.field, self.stride, self.padding
            )));
        }
        Ok((
            (span_h - self.field) / self.stride + 1,
            (span_w - self.field) / self.stride + 1,
        ))
    }

    /// Output shape for an NHWC input and a `[field, field, in, out]` kernel.
    pub fn output_shape(&self, input: &[usize], kernel: &[usize]) -> Result<Vec<usize>> {
        if input.len() != 4 || kernel.len() != 4 {
            return Err(shape_err(format!(
                "conv2d needs rank-4 input and kernel, got {input:?} and {kernel:?}"
            )));
        }
        if kernel[0] != self.field || kernel[1] != self.field || kernel[2] != input[3] {
            return Err(shape_err(format!(
                "kernel {kernel:?} incompatible with input {input:?} and field {}",
                self.field
            )));
        }
        let (oh, ow) = self.output_hw(input[1], input[2])?;
        Ok(vec![input[0], oh, ow, kernel[3]])
    }
}

/// Lays out every convolution window as one row: `[B*OH*OW, field*field*C]`,
/// columns ordered (row, col, channel) to match a flattened kernel.
pub fn im2col<T: Copy + Default>(
    data: &[T],
    width: usize,
    shape: &[usize],
    geometry: &ConvGeometry,
) -> Result<(Vec<T>, Vec<usize>)> {
    if shape.len() != 4 {
        return Err(shape_err(format!("im2col expects NHWC input, got {shape:?}")));
    }
    let (batch, height, wide, channels) = (shape[0], shape[1], shape[2], shape[3]);
    let (oh, ow) = geometry.output_hw(height, wide)?;
    let f = geometry.field;
    let cols = f * f * channels;
    let zero = vec![T::default(); width];
    let mut out = Vec::with_capacity(batch * oh * ow * cols * width);
    let pad = geometry.padding as isize;
    for b in 0..batch {
        for oy in 0..oh {
            for ox in 0..ow {
                for fy in 0..f {
                    let y = (oy * geometry.stride + fy) as isize - pad;
                    for fx in 0..f {
                        let x = (ox * geometry.stride + fx) as isize - pad;
                        if y < 0 || x < 0 || y >= height as isize || x >= wide as isize {
                            for _ in 0..channels {
                                out.extend_from_slice(&zero);
                            }
                        } else {
                            let start = ((b * height + y as usize) * wide + x as usize) * channels * width;
                            out.extend_from_slice(&data[start..start + channels * width]);
                        }
                    }
                }
            }
        }
    }
    Ok((out, vec![batch * oh * ow, cols]))
}
