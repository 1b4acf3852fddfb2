//! Binary container for named weight tensors.
//!
//! ```text
//! u32 LE   manifest length N in bytes
//! N bytes  UTF-8 manifest, one line per tensor:
//!          <name> <dtype> <shape> <offset>
//!          dtype is f64 or f32; shape is comma-separated dims, or `scalar`;
//!          offset is the tensor's first byte within the blob
//! blob     little-endian element data, row-major
//! ```
//! Tensors may appear in any order but must not overlap, and the blob must
//! end exactly where the last tensor does.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::ModelWeights;
use crate::tensor::RealTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Dtype {
    F64,
    F32,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::F32 => 4,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightsContainer {
    pub tensors: ModelWeights,
}

fn shape_text(shape: &[usize]) -> String {
    if shape.is_empty() {
        "scalar".into()
    } else {
        shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
    }
}

impl WeightsContainer {
    pub fn new(tensors: ModelWeights) -> Self {
        WeightsContainer { tensors }
    }

    /// Always writes f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut manifest = String::new();
        let mut offset = 0usize;
        for (name, t) in &self.tensors {
            let _ = writeln!(manifest, "{name} f64 {} {offset}", shape_text(&t.shape));
            offset += t.data.len() * 8;
        }
        let mut out = Vec::with_capacity(4 + manifest.len() + offset);
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(manifest.as_bytes());
        for t in self.tensors.values() {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let len = bytes
            .get(..4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("four bytes")) as usize)
            .ok_or_else(|| Error::TruncatedFile("weights header".into()))?;
        let manifest = bytes
            .get(4..4 + len)
            .ok_or_else(|| Error::TruncatedFile(format!("weights manifest of {len} bytes")))?;
        let manifest = std::str::from_utf8(manifest).map_err(|e| Error::Weights(format!("manifest is not UTF-8: {e}")))?;
        let blob = &bytes[4 + len..];
        let mut spans: Vec<(usize, usize, String)> = Vec::new();
        let mut tensors = ModelWeights::new();
        for (i, line) in manifest.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = |msg: String| Error::Weights(format!("manifest line {}: {msg}", i + 1));
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [name, dtype, shape, offset] = fields[..] else {
                return Err(bad(format!("expected 4 fields, got {}", fields.len())));
            };
            let dtype = match dtype {
                "f64" => Dtype::F64,
                "f32" => Dtype::F32,
                other => return Err(bad(format!("unsupported dtype {other}"))),
            };
            let shape: Vec<usize> = if shape == "scalar" {
                vec![]
            } else {
                shape
                    .split(',')
                    .map(|d| d.parse().map_err(|_| bad(format!("bad dimension {d:?}"))))
                    .collect::<Result<_>>()?
            };
            let offset: usize = offset.parse().map_err(|_| bad(format!("bad offset {offset:?}")))?;
            let count: usize = shape.iter().product();
            let end = offset + count * dtype.size();
            let raw = blob
                .get(offset..end)
                .ok_or_else(|| Error::TruncatedFile(format!("tensor {name} needs blob bytes {offset}..{end}")))?;
            let data = match dtype {
                Dtype::F64 => raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8"))).collect(),
                Dtype::F32 => raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4")) as f64)
                    .collect(),
            };
            if tensors.insert(name.to_string(), RealTensor::new(shape, data)?).is_some() {
                return Err(bad(format!("duplicate tensor {name}")));
            }
            spans.push((offset, end, name.to_string()));
        }
        spans.sort();
        for pair in spans.windows(2) {
            if pair[1].0 < pair[0].1 {
                return Err(Error::Weights(format!("tensors {} and {} overlap", pair[0].2, pair[1].2)));
            }
        }
        let used = spans.last().map(|s| s.1).unwrap_or(0);
        if used != blob.len() {
            return Err(Error::Weights(format!("blob has {} bytes, manifest covers {used}", blob.len())));
        }
        Ok(WeightsContainer { tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> WeightsContainer {
        let mut t = ModelWeights::new();
        t.insert("fc.weight".into(), RealTensor::new(vec![2, 3], vec![1.0, -2.5, 3.0, 0.0, 1e-9, -7.0]).unwrap());
        t.insert("fc.bias".into(), RealTensor::new(vec![3], vec![0.5, 0.25, -0.125]).unwrap());
        t.insert("s".into(), RealTensor::scalar(4.0));
        WeightsContainer::new(t)
    }

    #[test]
    fn byte_layout() {
        let bytes = sample().to_bytes();
        let manifest = "fc.bias f64 3 0\nfc.weight f64 2,3 24\ns f64 scalar 72\n";
        assert_eq!(&bytes[..4], &(manifest.len() as u32).to_le_bytes());
        assert_eq!(&bytes[4..4 + manifest.len()], manifest.as_bytes());
        assert_eq!(bytes.len(), 4 + manifest.len() + 80);
        assert_eq!(&bytes[4 + manifest.len()..4 + manifest.len() + 8], &0.5f64.to_le_bytes());
    }

    #[test]
    fn round_trip_and_file() {
        let c = sample();
        assert_eq!(WeightsContainer::from_bytes(&c.to_bytes()).unwrap(), c);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        c.save(&path).unwrap();
        assert_eq!(WeightsContainer::load(&path).unwrap(), c);
    }

    #[test]
    fn f32_payload() {
        let manifest = "x f32 2 0\n";
        let mut bytes = (manifest.len() as u32).to_le_bytes().to_vec();
        bytes.extend_from_slice(manifest.as_bytes());
        bytes.extend_from_slice(&1.5f32.to_le_bytes());
        bytes.extend_from_slice(&(-2.0f32).to_le_bytes());
        let c = WeightsContainer::from_bytes(&bytes).unwrap();
        assert_eq!(c.tensors["x"].data, vec![1.5, -2.0]);
    }

    #[test]
    fn rejects_overlap_truncation_and_slack() {
        let build = |manifest: &str, blob: usize| {
            let mut b = (manifest.len() as u32).to_le_bytes().to_vec();
            b.extend_from_slice(manifest.as_bytes());
            b.extend(std::iter::repeat(0u8).take(blob));
            b
        };
        assert!(matches!(
            WeightsContainer::from_bytes(&build("a f64 2 0\nb f64 1 8\n", 16)),
            Err(Error::Weights(_))
        ));
        assert!(matches!(WeightsContainer::from_bytes(&build("a f64 2 0\n", 8)), Err(Error::TruncatedFile(_))));
        assert!(matches!(WeightsContainer::from_bytes(&build("a f64 1 0\n", 16)), Err(Error::Weights(_))));
        assert!(matches!(WeightsContainer::from_bytes(&[1, 0]), Err(Error::TruncatedFile(_))));
    }
}
