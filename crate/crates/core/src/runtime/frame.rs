//! Length-prefixed binary frames shared by every transport.
//!
//! ```text
//! u32  length of everything that follows
//! u64  session id
//! u64  plan id
//! u32  node id
//! u8   slot (several tensors for one node and recipient)
//! u8   phase (0 offline, 1 online)
//! u8   sender role, u8 name length, name bytes
//! u8   receiver role, u8 name length, name bytes
//! u8   backend (0 int64, 1 int100)
//! u8   dtype (0 ring words)
//! u8   rank, then rank x u64 dims
//! u64  payload words (residues of one element contiguous)
//! ```
//! All integers little-endian.

use serde::{Deserialize, Serialize};

use super::PartyId;
use crate::error::{Error, Result};
use crate::ring::{Backend, RingTensor};

pub const DTYPE_RING: u8 = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Offline,
    Online,
}

impl Phase {
    fn tag(self) -> u8 {
        match self {
            Phase::Offline => 0,
            Phase::Online => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameHeader {
    pub session: u64,
    pub plan: u64,
    pub node: u32,
    pub slot: u8,
    pub phase: Phase,
    pub sender: PartyId,
    pub receiver: PartyId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub header: FrameHeader,
    pub tensor: RingTensor,
}

fn party_len(p: &PartyId) -> usize {
    2 + p.name().len()
}

fn put_party(out: &mut Vec<u8>, p: &PartyId) {
    out.push(p.role_tag());
    out.push(p.name().len() as u8);
    out.extend_from_slice(p.name().as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Frame(format!("need {n} bytes at offset {}", self.at)))?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn party(&mut self) -> Result<PartyId> {
        let tag = self.u8()?;
        let len = self.u8()? as usize;
        let name = String::from_utf8(self.take(len)?.to_vec()).map_err(|e| Error::Frame(e.to_string()))?;
        PartyId::from_parts(tag, name).ok_or_else(|| Error::Frame(format!("unknown role tag {tag}")))
    }
}

impl Frame {
    pub fn new(header: FrameHeader, tensor: RingTensor) -> Self {
        Frame { header, tensor }
    }

    /// Total bytes on the wire, including the length prefix.
    pub fn wire_len(sender: &PartyId, receiver: &PartyId, backend: Backend, shape: &[usize]) -> usize {
        let words = shape.iter().product::<usize>() * backend.width();
        4 + 8 + 8 + 4 + 1 + 1 + party_len(sender) + party_len(receiver) + 3 + 8 * shape.len() + 8 * words
    }

    pub fn payload_len(&self) -> usize {
        self.tensor.words().len() * 8
    }

    pub fn encode(&self) -> Vec<u8> {
        let h = &self.header;
        let t = &self.tensor;
        let total = Frame::wire_len(&h.sender, &h.receiver, t.backend(), t.shape());
        let mut out = Vec::with_capacity(total);
        out.extend_from_slice(&((total - 4) as u32).to_le_bytes());
        out.extend_from_slice(&h.session.to_le_bytes());
        out.extend_from_slice(&h.plan.to_le_bytes());
        out.extend_from_slice(&h.node.to_le_bytes());
        out.push(h.slot);
        out.push(h.phase.tag());
        put_party(&mut out, &h.sender);
        put_party(&mut out, &h.receiver);
        out.push(t.backend().tag());
        out.push(DTYPE_RING);
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &w in t.words() {
            out.extend_from_slice(&w.to_le_bytes());
        }
        debug_assert_eq!(out.len(), total);
        out
    }

    /// Decodes one frame including its length prefix.
    pub fn decode(bytes: &[u8]) -> Result<Frame> {
        let mut r = Reader { bytes, at: 0 };
        let len = r.u32()? as usize;
        if len + 4 != bytes.len() {
            return Err(Error::Frame(format!("length prefix {len} but {} bytes follow", bytes.len() - 4)));
        }
        let session = r.u64()?;
        let plan = r.u64()?;
        let node = r.u32()?;
        let slot = r.u8()?;
        let phase = match r.u8()? {
            0 => Phase::Offline,
            1 => Phase::Online,
            other => return Err(Error::Frame(format!("unknown phase {other}"))),
        };
        let sender = r.party()?;
        let receiver = r.party()?;
        let backend_tag = r.u8()?;
        let backend = Backend::from_tag(backend_tag).ok_or_else(|| Error::Frame(format!("unknown backend {backend_tag}")))?;
        let dtype = r.u8()?;
        if dtype != DTYPE_RING {
            return Err(Error::Frame(format!("unknown dtype {dtype}")));
        }
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let rest = &bytes[r.at..];
        let tensor = RingTensor::from_le_bytes(backend, &shape, rest).map_err(|e| Error::Frame(e.to_string()))?;
        Ok(Frame {
            header: FrameHeader {
                session,
                plan,
                node,
                slot,
                phase,
                sender,
                receiver,
            },
            tensor,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(backend: Backend) -> Frame {
        Frame::new(
            FrameHeader {
                session: 7,
                plan: 0xdead_beef,
                node: 42,
                slot: 1,
                phase: Phase::Online,
                sender: PartyId::InputProvider("alice".into()),
                receiver: PartyId::Server1,
            },
            RingTensor::from_i128s(backend, &[2, 3], &[1, -2, 3, -4, 5, 1 << 62]).unwrap(),
        )
    }

    #[test]
    fn known_layout() {
        let f = Frame::new(
            FrameHeader {
                session: 1,
                plan: 2,
                node: 3,
                slot: 0,
                phase: Phase::Offline,
                sender: PartyId::Server2,
                receiver: PartyId::Server0,
            },
            RingTensor::from_i128s(Backend::Int64, &[1], &[5]).unwrap(),
        );
        let bytes = f.encode();
        let mut expected = vec![];
        expected.extend_from_slice(&45u32.to_le_bytes());
        expected.extend_from_slice(&1u64.to_le_bytes());
        expected.extend_from_slice(&2u64.to_le_bytes());
        expected.extend_from_slice(&3u32.to_le_bytes());
        expected.extend_from_slice(&[0, 0, 2, 0, 0, 0, 0, 0, 1]);
        expected.extend_from_slice(&1u64.to_le_bytes());
        expected.extend_from_slice(&5u64.to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn decode_inverts_encode() {
        for backend in [Backend::Int64, Backend::Crt] {
            let f = frame(backend);
            let bytes = f.encode();
            assert_eq!(bytes.len(), Frame::wire_len(&f.header.sender, &f.header.receiver, backend, &[2, 3]));
            assert_eq!(Frame::decode(&bytes).unwrap(), f);
        }
    }

    #[test]
    fn rejects_garbage() {
        let mut bytes = frame(Backend::Int64).encode();
        bytes.pop();
        assert!(Frame::decode(&bytes).is_err());
        let mut bytes = frame(Backend::Int64).encode();
        bytes[25] = 9; // phase byte
        assert!(Frame::decode(&bytes).is_err());
    }
}
