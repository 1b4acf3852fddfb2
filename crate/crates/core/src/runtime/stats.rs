use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::frame::{Frame, Phase};
use super::plan::{ComputationPlan, Op};
use super::PartyId;
use crate::params::ProtocolParams;
use crate::sharing::TruncMode;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkStats {
    pub messages: u64,
    /// Tensor words only.
    pub payload_bytes: u64,
    /// Whole frames including header and length prefix.
    pub wire_bytes: u64,
}

impl LinkStats {
    fn add(&mut self, other: &LinkStats) {
        self.messages += other.messages;
        self.payload_bytes += other.payload_bytes;
        self.wire_bytes += other.wire_bytes;
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LinkKey {
    pub sender: PartyId,
    pub receiver: PartyId,
    pub phase: Phase,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkRecord {
    #[serde(flatten)]
    pub key: LinkKey,
    #[serde(flatten)]
    pub stats: LinkStats,
}

/// Message and byte counters per (sender, receiver, phase).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<LinkRecord>", into = "Vec<LinkRecord>")]
pub struct ChannelStats {
    links: BTreeMap<LinkKey, LinkStats>,
}

impl From<Vec<LinkRecord>> for ChannelStats {
    fn from(records: Vec<LinkRecord>) -> Self {
        let mut stats = ChannelStats::default();
        for r in records {
            stats.links.entry(r.key).or_default().add(&r.stats);
        }
        stats
    }
}

impl From<ChannelStats> for Vec<LinkRecord> {
    fn from(stats: ChannelStats) -> Self {
        stats.records()
    }
}

impl ChannelStats {
    pub fn record(&mut self, frame: &Frame, wire_bytes: usize) {
        let key = LinkKey {
            sender: frame.header.sender.clone(),
            receiver: frame.header.receiver.clone(),
            phase: frame.header.phase,
        };
        self.links.entry(key).or_default().add(&LinkStats {
            messages: 1,
            payload_bytes: frame.payload_len() as u64,
            wire_bytes: wire_bytes as u64,
        });
    }

    pub fn merge(&mut self, other: &ChannelStats) {
        for (k, v) in &other.links {
            self.links.entry(k.clone()).or_default().add(v);
        }
    }

    pub fn link(&self, sender: &PartyId, receiver: &PartyId, phase: Phase) -> LinkStats {
        let key = LinkKey {
            sender: sender.clone(),
            receiver: receiver.clone(),
            phase,
        };
        self.links.get(&key).copied().unwrap_or_default()
    }

    pub fn total(&self, phase: Phase) -> LinkStats {
        self.sum(|k| k.phase == phase)
    }

    pub fn received_by(&self, party: &PartyId, phase: Phase) -> LinkStats {
        self.sum(|k| &k.receiver == party && k.phase == phase)
    }

    pub fn sent_by(&self, party: &PartyId, phase: Phase) -> LinkStats {
        self.sum(|k| &k.sender == party && k.phase == phase)
    }

    fn sum(&self, keep: impl Fn(&LinkKey) -> bool) -> LinkStats {
        let mut out = LinkStats::default();
        for (k, v) in &self.links {
            if keep(k) {
                out.add(v);
            }
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn records(&self) -> Vec<LinkRecord> {
        self.links
            .iter()
            .map(|(k, v)| LinkRecord {
                key: k.clone(),
                stats: *v,
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("phase,sender,receiver,messages,payload_bytes,wire_bytes\n");
        for (k, v) in &self.links {
            let phase = match k.phase {
                Phase::Offline => "offline",
                Phase::Online => "online",
            };
            let _ = writeln!(
                out,
                "{phase},{},{},{},{},{}",
                k.sender, k.receiver, v.messages, v.payload_bytes, v.wire_bytes
            );
        }
        out
    }

    /// Human-readable table with per-phase totals.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<8} {:<20} {:<20} {:>10} {:>14} {:>14}\n",
            "phase", "sender", "receiver", "messages", "payload_bytes", "wire_bytes"
        );
        for phase in [Phase::Offline, Phase::Online] {
            let name = if phase == Phase::Offline { "offline" } else { "online" };
            for (k, v) in self.links.iter().filter(|(k, _)| k.phase == phase) {
                let _ = writeln!(
                    out,
                    "{name:<8} {:<20} {:<20} {:>10} {:>14} {:>14}",
                    k.sender.to_string(),
                    k.receiver.to_string(),
                    v.messages,
                    v.payload_bytes,
                    v.wire_bytes
                );
            }
            let t = self.total(phase);
            let _ = writeln!(
                out,
                "{name:<8} {:<20} {:<20} {:>10} {:>14} {:>14}",
                "total", "", t.messages, t.payload_bytes, t.wire_bytes
            );
        }
        out
    }
}

/// Traffic implied by a plan, computed without running it.
pub fn predict_traffic(plan: &ComputationPlan, params: &ProtocolParams) -> ChannelStats {
    let backend = params.backend;
    let mut stats = ChannelStats::default();
    let mut add = |sender: PartyId, receiver: PartyId, phase: Phase, shape: &[usize]| {
        let wire = Frame::wire_len(&sender, &receiver, backend, shape);
        let payload = shape.iter().product::<usize>() * backend.width() * 8;
        let key = LinkKey {
            sender,
            receiver,
            phase,
        };
        stats.links.entry(key).or_default().add(&LinkStats {
            messages: 1,
            payload_bytes: payload as u64,
            wire_bytes: wire as u64,
        });
    };
    let servers = [PartyId::Server0, PartyId::Server1];
    for node in plan.nodes() {
        let shape = node.shape.as_slice();
        match &node.op {
            Op::Input { provider, .. } => {
                for s in &servers {
                    add(PartyId::InputProvider(provider.clone()), s.clone(), Phase::Online, shape);
                }
            }
            Op::Mask(_) => {
                for s in &servers {
                    add(PartyId::Server2, s.clone(), Phase::Offline, shape);
                }
                add(PartyId::Server0, PartyId::Server1, Phase::Online, shape);
                add(PartyId::Server1, PartyId::Server0, Phase::Online, shape);
            }
            Op::Bilinear(..) => {
                for s in &servers {
                    add(PartyId::Server2, s.clone(), Phase::Offline, shape);
                }
            }
            Op::Truncate(_) if params.trunc_mode == TruncMode::Interactive => {
                for s in &servers {
                    add(PartyId::Server2, s.clone(), Phase::Offline, shape);
                    add(PartyId::Server2, s.clone(), Phase::Offline, shape);
                }
                add(PartyId::Server0, PartyId::Server1, Phase::Online, shape);
                add(PartyId::Server1, PartyId::Server0, Phase::Online, shape);
            }
            Op::Reveal { receiver, .. } => {
                for s in &servers {
                    add(s.clone(), PartyId::OutputReceiver(receiver.clone()), Phase::Online, shape);
                }
            }
            _ => {}
        }
    }
    stats
}
