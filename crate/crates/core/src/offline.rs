//! The crypto producer S2: masks, generalized triples and truncation pairs.
//!
//! Material for a plan is generated from the static plan alone. Each node
//! draws from its own labelled stream, so any single value can be
//! re-derived from `(seed, session, plan, node)`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::ProtocolParams;
use crate::ring::{sample_uniform, Backend, RingTensor, RngStream};
use crate::runtime::frame::{Frame, FrameHeader, Phase};
use crate::runtime::plan::{ComputationPlan, NodeId, Op, PlanId, Sharing};
use crate::runtime::{Endpoint, PartyId};
use crate::sharing::{Bilinear, MaskMaterial, TripleSource, TruncMode, TruncationConfig, TruncationMaterial};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Material {
    Mask(MaskMaterial),
    /// Shares of `B(a^x, a^y)`.
    Product(RingTensor, RingTensor),
    Truncation(TruncationMaterial),
}

/// What one of S0/S1 receives for a node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ServerMaterial {
    Mask(RingTensor),
    Product(RingTensor),
    Truncation { r: RingTensor, r_high: RingTensor },
}

impl Material {
    pub fn for_server(&self, party: usize) -> ServerMaterial {
        let pick = |a: &RingTensor, b: &RingTensor| if party == 0 { a.clone() } else { b.clone() };
        match self {
            Material::Mask(m) => ServerMaterial::Mask(pick(&m.a0, &m.a1)),
            Material::Product(c0, c1) => ServerMaterial::Product(pick(c0, c1)),
            Material::Truncation(t) => ServerMaterial::Truncation {
                r: pick(&t.r0, &t.r1),
                r_high: pick(&t.r_high0, &t.r_high1),
            },
        }
    }
}

impl ServerMaterial {
    /// Frames in slot order.
    pub fn tensors(&self) -> Vec<&RingTensor> {
        match self {
            ServerMaterial::Mask(t) | ServerMaterial::Product(t) => vec![t],
            ServerMaterial::Truncation { r, r_high } => vec![r, r_high],
        }
    }
}

/// All offline material for one execution of a plan.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OfflineBundle {
    pub plan_id: PlanId,
    pub session: u64,
    pub entries: BTreeMap<NodeId, Material>,
}

impl OfflineBundle {
    pub fn server_view(&self, party: usize) -> BTreeMap<NodeId, ServerMaterial> {
        self.entries.iter().map(|(&id, m)| (id, m.for_server(party))).collect()
    }
}

/// Randomness for offline material: labelled per node when seeded.
#[derive(Clone, Copy, Debug)]
pub struct OfflineSeed {
    pub seed: Option<u64>,
    pub session: u64,
}

impl OfflineSeed {
    pub fn stream(&self, plan: PlanId, node: NodeId, purpose: &str) -> RngStream {
        match self.seed {
            Some(seed) => RngStream::new(seed, &format!("offline/{}/{}/{}/{purpose}", self.session, plan.0, node.0)),
            None => RngStream::from_entropy(),
        }
    }
}

/// Splits `value` into a uniform share and its complement.
fn split(value: &RingTensor, rng: &mut RngStream) -> (RingTensor, RingTensor) {
    let s0 = sample_uniform(value.shape(), value.backend(), rng);
    let s1 = value.sub(&s0).expect("same shape and backend");
    (s0, s1)
}

fn mask_material(shape: &[usize], backend: Backend, rng: &mut RngStream) -> MaskMaterial {
    let a = sample_uniform(shape, backend, rng);
    let (a0, a1) = split(&a, rng);
    MaskMaterial { a, a0, a1 }
}

/// Truncation masks `r`, uniform in `[0, 2^(b + kappa))`.
pub fn truncation_masks(numel: usize, cfg: &TruncationConfig, rng: &mut RngStream) -> Vec<u128> {
    (0..numel).map(|_| rng.bits(cfg.mask_bits())).collect()
}

fn truncation_material(
    masks: &[u128],
    shape: &[usize],
    backend: Backend,
    cfg: &TruncationConfig,
    rng: &mut RngStream,
) -> TruncationMaterial {
    let r: Vec<i128> = masks.iter().map(|&v| v as i128).collect();
    let r_high: Vec<i128> = masks.iter().map(|&v| (v >> cfg.frac_bits) as i128).collect();
    let r = RingTensor::from_i128s(backend, shape, &r).expect("mask count matches shape");
    let r_high = RingTensor::from_i128s(backend, shape, &r_high).expect("mask count matches shape");
    let (r0, r1) = split(&r, rng);
    let (r_high0, r_high1) = split(&r_high, rng);
    TruncationMaterial {
        r0,
        r1,
        r_high0,
        r_high1,
    }
}

/// The truncation masks S2 uses for `node`. Lets a plaintext simulator
/// reproduce the protocol's rounding exactly.
pub fn derive_truncation_masks(
    seed: u64,
    session: u64,
    plan: PlanId,
    node: NodeId,
    numel: usize,
    cfg: &TruncationConfig,
) -> Vec<u128> {
    let source = OfflineSeed {
        seed: Some(seed),
        session,
    };
    truncation_masks(numel, cfg, &mut source.stream(plan, node, "trunc"))
}

/// Produces material for every mask, product and interactive truncation node.
pub fn generate_offline(plan: &ComputationPlan, params: &ProtocolParams, seed: OfflineSeed) -> Result<OfflineBundle> {
    params.validate()?;
    let plan_id = plan.id();
    let backend = params.backend;
    let trunc = params.truncation();
    let mut masks: BTreeMap<NodeId, RingTensor> = BTreeMap::new();
    let mut entries = BTreeMap::new();
    for id in plan.execution_order()? {
        let node = plan.node(id)?;
        if node.shape.is_empty() && matches!(node.op, Op::Mask(_) | Op::Bilinear(..) | Op::Truncate(_)) {
            return Err(Error::UnresolvedShape(id.0));
        }
        match &node.op {
            Op::Mask(_) => {
                let m = mask_material(&node.shape, backend, &mut seed.stream(plan_id, id, "mask"));
                masks.insert(id, m.a.clone());
                entries.insert(id, Material::Mask(m));
            }
            Op::Local(op, inputs) if node.sharing == Sharing::Masked => {
                let parts = inputs
                    .iter()
                    .map(|i| masks.get(i).ok_or(Error::MissingTriple(i.0)))
                    .collect::<Result<Vec<_>>>()?;
                masks.insert(id, op.apply(&parts)?);
            }
            Op::Bilinear(kind, x, y) => {
                let ax = masks.get(x).ok_or(Error::MissingTriple(x.0))?;
                let ay = masks.get(y).ok_or(Error::MissingTriple(y.0))?;
                let product = kind.apply(ax, ay)?;
                let (c0, c1) = split(&product, &mut seed.stream(plan_id, id, "product"));
                entries.insert(id, Material::Product(c0, c1));
            }
            Op::Truncate(_) if params.trunc_mode == TruncMode::Interactive => {
                let numel = node.shape.iter().product();
                let r = truncation_masks(numel, &trunc, &mut seed.stream(plan_id, id, "trunc"));
                let m = truncation_material(&r, &node.shape, backend, &trunc, &mut seed.stream(plan_id, id, "trunc-share"));
                entries.insert(id, Material::Truncation(m));
            }
            _ => {}
        }
    }
    Ok(OfflineBundle {
        plan_id,
        session: seed.session,
        entries,
    })
}

/// Sends each server exactly its half of every entry, tagged offline.
pub fn distribute(bundle: &OfflineBundle, endpoint: &mut Endpoint) -> Result<()> {
    for (&node, material) in &bundle.entries {
        for (party, receiver) in [(0, PartyId::Server0), (1, PartyId::Server1)] {
            let view = material.for_server(party);
            for (slot, tensor) in view.tensors().into_iter().enumerate() {
                let header = FrameHeader {
                    session: bundle.session,
                    plan: bundle.plan_id.0,
                    node: node.0,
                    slot: slot as u8,
                    phase: Phase::Offline,
                    sender: PartyId::Server2,
                    receiver: receiver.clone(),
                };
                endpoint.send(Frame::new(header, tensor.clone()))?;
            }
        }
    }
    Ok(())
}

/// Which material a server should expect for each node, and how many frames.
pub fn expected_material(plan: &ComputationPlan, params: &ProtocolParams) -> Vec<(NodeId, usize)> {
    plan.nodes()
        .iter()
        .filter_map(|n| match n.op {
            Op::Mask(_) | Op::Bilinear(..) => Some((n.id, 1)),
            Op::Truncate(_) if params.trunc_mode == TruncMode::Interactive => Some((n.id, 2)),
            _ => None,
        })
        .collect()
}

/// On-demand dealer for the in-process two-share API.
#[derive(Debug)]
pub struct Dealer {
    rng: RngStream,
}

impl Dealer {
    pub fn new(seed: u64) -> Self {
        Dealer {
            rng: RngStream::new(seed, "dealer"),
        }
    }
}

impl TripleSource for Dealer {
    fn mask_material(&mut self, shape: &[usize], backend: Backend) -> MaskMaterial {
        mask_material(shape, backend, &mut self.rng)
    }

    fn product_material(
        &mut self,
        kind: &Bilinear,
        ax: &RingTensor,
        ay: &RingTensor,
    ) -> Result<(RingTensor, RingTensor)> {
        let product = kind.apply(ax, ay)?;
        Ok(split(&product, &mut self.rng))
    }

    fn truncation_material(
        &mut self,
        shape: &[usize],
        backend: Backend,
        cfg: &TruncationConfig,
    ) -> TruncationMaterial {
        let masks = truncation_masks(shape.iter().product(), cfg, &mut self.rng);
        truncation_material(&masks, shape, backend, cfg, &mut self.rng)
    }
}
