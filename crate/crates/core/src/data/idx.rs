//! The big-endian IDX container used by MNIST.
//!
//! `u32` magic (`0x0000_0803` for rank-3 unsigned-byte images, `0x0000_0801`
//! for rank-1 labels), one `u32` per dimension, then the bytes row-major.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::RealTensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq)]
pub enum IdxData {
    /// `[n, rows, cols]`, pixels scaled to `[0, 1]`.
    Images(RealTensor),
    Labels(Vec<u8>),
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("four bytes")))
        .ok_or_else(|| Error::TruncatedFile(format!("{what}: header ends at byte {at}")))
}

pub fn parse_idx(bytes: &[u8], what: &str) -> Result<IdxData> {
    let magic = be_u32(bytes, 0, what)?;
    let rank = match magic {
        IMAGES_MAGIC => 3,
        LABELS_MAGIC => 1,
        other => return Err(Error::BadMagic(other)),
    };
    let dims = (0..rank)
        .map(|i| be_u32(bytes, 4 + 4 * i, what).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let start = 4 + 4 * rank;
    let count: usize = dims.iter().product();
    let body = bytes
        .get(start..start + count)
        .ok_or_else(|| Error::TruncatedFile(format!("{what}: need {count} data bytes, have {}", bytes.len() - start)))?;
    Ok(match rank {
        3 => IdxData::Images(RealTensor::new(dims, body.iter().map(|&p| p as f64 / 255.0).collect())?),
        _ => IdxData::Labels(body.to_vec()),
    })
}

pub fn load_idx(path: &Path) -> Result<IdxData> {
    let bytes = fs::read(path)?;
    parse_idx(&bytes, &path.display().to_string())
}

/// Images as `[n, rows, cols, 1]`, ready for the models.
pub fn load_images(path: &Path) -> Result<RealTensor> {
    match load_idx(path)? {
        IdxData::Images(t) => {
            let mut shape = t.shape.clone();
            shape.push(1);
            t.reshape(&shape)
        }
        IdxData::Labels(_) => Err(Error::BadMagic(LABELS_MAGIC)),
    }
}

pub fn load_labels(path: &Path) -> Result<Vec<u8>> {
    match load_idx(path)? {
        IdxData::Labels(l) => Ok(l),
        IdxData::Images(_) => Err(Error::BadMagic(IMAGES_MAGIC)),
    }
}

pub fn encode_images(pixels: &[u8], n: usize, rows: usize, cols: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len());
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for d in [n, rows, cols] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Quantizes `[n, rows, cols(, 1)]` images in `[0, 1]` back to bytes.
pub fn image_bytes(images: &RealTensor) -> Vec<u8> {
    images.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_image_round_trip() {
        let pixels: Vec<u8> = (0..2 * 3 * 4).map(|i| (i * 10) as u8).collect();
        let IdxData::Images(t) = parse_idx(&encode_images(&pixels, 2, 3, 4), "t").unwrap() else {
            panic!("expected images");
        };
        assert_eq!(t.shape, vec![2, 3, 4]);
        assert_eq!(image_bytes(&t), pixels);
        assert_eq!(parse_idx(&encode_labels(&[3, 7]), "l").unwrap(), IdxData::Labels(vec![3, 7]));
    }

    #[test]
    fn bad_magic_and_truncation() {
        let mut bytes = encode_labels(&[1, 2, 3]);
        assert!(matches!(parse_idx(&bytes[..6], "l"), Err(Error::TruncatedFile(_))));
        bytes.truncate(10);
        assert!(matches!(parse_idx(&bytes, "l"), Err(Error::TruncatedFile(_))));
        bytes[3] = 0x02;
        assert!(matches!(parse_idx(&bytes, "l"), Err(Error::BadMagic(0x0802))));
    }

    #[test]
    fn mnist_sized_header() {
        let bytes = encode_images(&vec![0u8; 10000 * 28 * 28], 10000, 28, 28);
        let IdxData::Images(t) = parse_idx(&bytes, "mnist").unwrap() else {
            panic!("expected images");
        };
        assert_eq!(t.shape, vec![10000, 28, 28]);
    }
}
