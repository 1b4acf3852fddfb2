//! Runs one party's part of a lowered plan over an [`Endpoint`].

use std::collections::{BTreeMap, HashMap};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tracing::debug;

use super::frame::{Frame, FrameHeader, Phase};
use super::plan::{ComputationPlan, NodeId, Op, PlanId, Sharing};
use super::transport::Endpoint;
use super::PartyId;
use crate::error::{Error, Result};
use crate::offline::{self, expected_material, OfflineSeed, ServerMaterial};
use crate::params::ProtocolParams;
use crate::ring::{decode_at, encode_at, RingTensor, RngStream};
use crate::sharing::party as kernel;
use crate::sharing::{share, TruncMode};
use crate::tensor::RealTensor;

/// Parameters every party of one execution agrees on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionContext {
    pub session: u64,
    pub params: ProtocolParams,
    /// Seeds all protocol randomness when set; otherwise OS entropy is used.
    pub seed: Option<u64>,
}

impl SessionContext {
    fn offline_seed(&self) -> OfflineSeed {
        OfflineSeed {
            seed: self.seed,
            session: self.session,
        }
    }

    fn check(&self, plan: &ComputationPlan) -> Result<()> {
        self.params.validate()?;
        if plan.frac_bits() != self.params.fixed.frac_bits {
            return Err(Error::Config(format!(
                "plan lowered at {} fractional bits, session uses {}",
                plan.frac_bits(),
                self.params.fixed.frac_bits
            )));
        }
        Ok(())
    }
}

/// Named plaintext inputs held by one input provider.
pub type InputSet = HashMap<String, RealTensor>;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PartyOutcome {
    /// Revealed and post-processed outputs, keyed by label (receivers only).
    pub outputs: BTreeMap<String, RealTensor>,
    pub offline_time: Duration,
    pub online_time: Duration,
}

/// Dispatches on `role`. `inputs` is only read by input providers.
pub fn execute_plan(
    plan: &ComputationPlan,
    ctx: &SessionContext,
    role: &PartyId,
    inputs: &InputSet,
    endpoint: &mut Endpoint,
) -> Result<PartyOutcome> {
    ctx.check(plan)?;
    if endpoint.party() != role {
        return Err(Error::Config(format!("endpoint belongs to {}, not {role}", endpoint.party())));
    }
    match role {
        PartyId::Server2 => run_offline(plan, ctx, endpoint),
        PartyId::Server0 | PartyId::Server1 => run_online(plan, ctx, endpoint),
        PartyId::InputProvider(name) => {
            let start = Instant::now();
            provide_inputs(plan, ctx, name, inputs, endpoint)?;
            Ok(PartyOutcome {
                online_time: start.elapsed(),
                ..Default::default()
            })
        }
        PartyId::OutputReceiver(name) => {
            let start = Instant::now();
            let outputs = receive_outputs(plan, ctx, name, endpoint)?;
            Ok(PartyOutcome {
                outputs,
                online_time: start.elapsed(),
                ..Default::default()
            })
        }
    }
}

/// S2: generate material for the whole plan and ship it.
pub fn run_offline(plan: &ComputationPlan, ctx: &SessionContext, endpoint: &mut Endpoint) -> Result<PartyOutcome> {
    let start = Instant::now();
    let bundle = offline::generate_offline(plan, &ctx.params, ctx.offline_seed())?;
    offline::distribute(&bundle, endpoint)?;
    Ok(PartyOutcome {
        offline_time: start.elapsed(),
        ..Default::default()
    })
}

fn provide_inputs(
    plan: &ComputationPlan,
    ctx: &SessionContext,
    name: &str,
    inputs: &InputSet,
    endpoint: &mut Endpoint,
) -> Result<()> {
    let plan_id = plan.id();
    let backend = ctx.params.backend;
    for node in plan.inputs_of(name) {
        let Op::Input { name: input, .. } = &node.op else { unreachable!() };
        let values = inputs.get(input).ok_or_else(|| Error::MissingInput(format!("{name}/{input}")))?;
        if values.shape != node.shape {
            return Err(Error::ShapeMismatch(format!(
                "input {input} has shape {:?}, plan expects {:?}",
                values.shape, node.shape
            )));
        }
        let encoded = encode_at(values, node.scale, &ctx.params.fixed, backend)?;
        let mut rng = match ctx.seed {
            Some(seed) => RngStream::new(seed, &format!("input/{}/{}/{name}/{}", ctx.session, plan_id.0, node.id.0)),
            None => RngStream::from_entropy(),
        };
        let shares = share(&encoded, node.scale, &mut rng);
        for (i, tensor) in [shares.share0, shares.share1].into_iter().enumerate() {
            let header = header(ctx, plan_id, node.id, 0, Phase::Online, endpoint.party(), &PartyId::server(i));
            endpoint.send(Frame::new(header, tensor))?;
        }
    }
    Ok(())
}

fn receive_outputs(
    plan: &ComputationPlan,
    ctx: &SessionContext,
    name: &str,
    endpoint: &mut Endpoint,
) -> Result<BTreeMap<String, RealTensor>> {
    let plan_id = plan.id();
    let mut revealed: HashMap<NodeId, RealTensor> = HashMap::new();
    let mut outputs = BTreeMap::new();
    for id in plan.execution_order()? {
        let node = plan.node(id)?;
        match &node.op {
            Op::Reveal { receiver, label, .. } if receiver == name => {
                let mut sum: Option<RingTensor> = None;
                for i in 0..2 {
                    let t = recv_checked(endpoint, ctx, plan_id, &PartyId::server(i), Phase::Online, node, 0)?;
                    sum = Some(match sum {
                        None => t,
                        Some(s) => s.add(&t)?,
                    });
                }
                let value = decode_at(&sum.expect("two shares"), node.scale);
                outputs.insert(label.clone(), value.clone());
                revealed.insert(id, value);
            }
            Op::Plaintext { input, func, label } => {
                if let Some(x) = revealed.get(input) {
                    let value = func.apply(x);
                    outputs.insert(label.clone(), value.clone());
                    revealed.insert(id, value);
                }
            }
            _ => {}
        }
    }
    Ok(outputs)
}

#[derive(Clone, Debug)]
enum Value {
    Share(RingTensor),
    Masked { mask: RingTensor, alpha: RingTensor },
    Public(RealTensor),
}

struct Server<'a> {
    party: usize,
    plan: &'a ComputationPlan,
    plan_id: PlanId,
    ctx: &'a SessionContext,
    values: HashMap<NodeId, Value>,
    material: HashMap<NodeId, ServerMaterial>,
}

/// S0 or S1: collect offline material, then evaluate the plan.
pub fn run_online(plan: &ComputationPlan, ctx: &SessionContext, endpoint: &mut Endpoint) -> Result<PartyOutcome> {
    let party = endpoint
        .party()
        .compute_index()
        .ok_or_else(|| Error::Config(format!("{} is not a computing server", endpoint.party())))?;
    let mut server = Server {
        party,
        plan,
        plan_id: plan.id(),
        ctx,
        values: HashMap::new(),
        material: HashMap::new(),
    };
    let start = Instant::now();
    server.collect_material(endpoint)?;
    let offline_time = start.elapsed();
    let order = plan.execution_order()?;
    let mut last_use: HashMap<NodeId, usize> = HashMap::new();
    for (step, id) in order.iter().enumerate() {
        for input in plan.node(*id)?.op.inputs() {
            last_use.insert(input, step);
        }
    }
    let start = Instant::now();
    for (step, &id) in order.iter().enumerate() {
        server.step(id, endpoint)?;
        server.material.remove(&id);
        for input in plan.node(id)?.op.inputs() {
            if last_use.get(&input) == Some(&step) {
                server.values.remove(&input);
            }
        }
    }
    Ok(PartyOutcome {
        outputs: BTreeMap::new(),
        offline_time,
        online_time: start.elapsed(),
    })
}

impl Server<'_> {
    fn other(&self) -> PartyId {
        PartyId::server(1 - self.party)
    }

    fn collect_material(&mut self, endpoint: &mut Endpoint) -> Result<()> {
        for (id, frames) in expected_material(self.plan, &self.ctx.params) {
            let node = self.plan.node(id)?;
            let mut tensors = Vec::with_capacity(frames);
            for slot in 0..frames {
                let t = recv_tensor(endpoint, self.ctx, self.plan_id, &PartyId::Server2, Phase::Offline, id, slot as u8)?;
                tensors.push(t);
            }
            let mut it = tensors.into_iter();
            let m = match &node.op {
                Op::Mask(_) => ServerMaterial::Mask(it.next().expect("one frame")),
                Op::Bilinear(..) => ServerMaterial::Product(it.next().expect("one frame")),
                _ => ServerMaterial::Truncation {
                    r: it.next().expect("two frames"),
                    r_high: it.next().expect("two frames"),
                },
            };
            for t in m.tensors() {
                if t.shape() != node.shape.as_slice() {
                    return Err(Error::ProtocolDesync(format!(
                        "material for {id} has shape {:?}, expected {:?}",
                        t.shape(),
                        node.shape
                    )));
                }
            }
            self.material.insert(id, m);
        }
        debug!(party = self.party, nodes = self.material.len(), "offline material received");
        Ok(())
    }

    fn share(&self, id: NodeId) -> Result<&RingTensor> {
        match self.values.get(&id) {
            Some(Value::Share(t)) => Ok(t),
            _ => Err(Error::InvalidPlan(format!("{id} is not a private value"))),
        }
    }

    fn masked(&self, id: NodeId) -> Result<(&RingTensor, &RingTensor)> {
        match self.values.get(&id) {
            Some(Value::Masked { mask, alpha }) => Ok((mask, alpha)),
            _ => Err(Error::InvalidPlan(format!("{id} is not a masked value"))),
        }
    }

    fn public(&self, id: NodeId) -> Result<&RealTensor> {
        match self.values.get(&id) {
            Some(Value::Public(t)) => Ok(t),
            _ => Err(Error::InvalidPlan(format!("{id} is not a public value"))),
        }
    }

    fn material(&self, id: NodeId) -> Result<&ServerMaterial> {
        self.material.get(&id).ok_or(Error::MissingTriple(id.0))
    }

    /// Sends our share of `node` to the other server and returns the sum.
    fn open(&self, endpoint: &mut Endpoint, id: NodeId, mine: RingTensor) -> Result<RingTensor> {
        let node = self.plan.node(id)?;
        let me = endpoint.party().clone();
        let other = self.other();
        let h = header(self.ctx, self.plan_id, id, 0, Phase::Online, &me, &other);
        endpoint.send(Frame::new(h, mine.clone()))?;
        let theirs = recv_checked(endpoint, self.ctx, self.plan_id, &other, Phase::Online, node, 0)?;
        mine.add(&theirs)
    }

    fn step(&mut self, id: NodeId, endpoint: &mut Endpoint) -> Result<()> {
        let node = self.plan.node(id)?;
        let party = self.party;
        let params = &self.ctx.params;
        let value = match &node.op {
            Op::Input { provider, .. } => {
                let from = PartyId::InputProvider(provider.clone());
                Value::Share(recv_checked(endpoint, self.ctx, self.plan_id, &from, Phase::Online, node, 0)?)
            }
            Op::Constant { values } => Value::Public(RealTensor::new(node.shape.clone(), values.clone())?),
            Op::Add(a, b) => Value::Share(self.share(*a)?.add(self.share(*b)?)?),
            Op::Sub(a, b) => Value::Share(self.share(*a)?.sub(self.share(*b)?)?),
            Op::Neg(a) => Value::Share(self.share(*a)?.neg()),
            Op::AddPublic(a, c) => {
                let x = self.share(*a)?;
                let k = self.public(*c)?.broadcast_to(&node.shape)?;
                let k = encode_at(&k, node.scale, &params.fixed, params.backend)?;
                Value::Share(kernel::add_public(party, x, &k)?)
            }
            Op::MulPublic(a, c) => {
                let x = self.share(*a)?;
                let k = self.public(*c)?.broadcast_to(&node.shape)?;
                let k = encode_at(&k, self.plan.frac_bits(), &params.fixed, params.backend)?;
                Value::Share(x.mul(&k)?)
            }
            Op::Mask(a) => {
                let ServerMaterial::Mask(mask) = self.material(id)? else {
                    return Err(Error::MissingTriple(id.0));
                };
                let mask = mask.clone();
                let diff = kernel::mask_difference(self.share(*a)?, &mask)?;
                let alpha = self.open(endpoint, id, diff)?;
                Value::Masked { mask, alpha }
            }
            Op::Bilinear(kind, x, y) => {
                let ServerMaterial::Product(c) = self.material(id)? else {
                    return Err(Error::MissingTriple(id.0));
                };
                let (ax, alpha_x) = self.masked(*x)?;
                let (ay, alpha_y) = self.masked(*y)?;
                Value::Share(kernel::bilinear_share(kind, party, alpha_x, alpha_y, ax, ay, c)?)
            }
            Op::Truncate(a) => {
                let x = self.share(*a)?;
                let cfg = params.truncation();
                match params.trunc_mode {
                    TruncMode::LocalOptimistic => Value::Share(kernel::trunc_local(party, x, cfg.frac_bits)?),
                    TruncMode::Interactive => {
                        let ServerMaterial::Truncation { r, r_high } = self.material(id)? else {
                            return Err(Error::MissingTriple(id.0));
                        };
                        let r_high = r_high.clone();
                        let mine = kernel::trunc_open_share(party, x, r, &cfg)?;
                        let opened = self.open(endpoint, id, mine)?;
                        Value::Share(kernel::trunc_finish(party, &opened, &r_high, &cfg)?)
                    }
                }
            }
            Op::Local(op, inputs) => {
                if node.sharing == Sharing::Masked {
                    let parts = inputs.iter().map(|&i| self.masked(i)).collect::<Result<Vec<_>>>()?;
                    let masks: Vec<&RingTensor> = parts.iter().map(|p| p.0).collect();
                    let alphas: Vec<&RingTensor> = parts.iter().map(|p| p.1).collect();
                    Value::Masked {
                        mask: op.apply(&masks)?,
                        alpha: op.apply(&alphas)?,
                    }
                } else {
                    let parts = inputs.iter().map(|&i| self.share(i)).collect::<Result<Vec<_>>>()?;
                    Value::Share(op.apply(&parts)?)
                }
            }
            Op::Reveal { input, receiver, .. } => {
                let to = PartyId::OutputReceiver(receiver.clone());
                let me = endpoint.party().clone();
                let h = header(self.ctx, self.plan_id, id, 0, Phase::Online, &me, &to);
                endpoint.send(Frame::new(h, self.share(*input)?.clone()))?;
                return Ok(());
            }
            Op::Plaintext { .. } => return Ok(()),
        };
        self.values.insert(id, value);
        Ok(())
    }
}

fn header(
    ctx: &SessionContext,
    plan: PlanId,
    node: NodeId,
    slot: u8,
    phase: Phase,
    sender: &PartyId,
    receiver: &PartyId,
) -> FrameHeader {
    FrameHeader {
        session: ctx.session,
        plan: plan.0,
        node: node.0,
        slot,
        phase,
        sender: sender.clone(),
        receiver: receiver.clone(),
    }
}

fn recv_tensor(
    endpoint: &mut Endpoint,
    ctx: &SessionContext,
    plan: PlanId,
    from: &PartyId,
    phase: Phase,
    node: NodeId,
    slot: u8,
) -> Result<RingTensor> {
    let frame = endpoint.recv(from, ctx.session, phase, node.0, slot)?;
    if frame.header.plan != plan.0 {
        return Err(Error::ProtocolDesync(format!(
            "{from} is running plan {:016x}, expected {:016x}",
            frame.header.plan, plan.0
        )));
    }
    if frame.tensor.backend() != ctx.params.backend {
        return Err(Error::BackendMismatch(frame.tensor.backend(), ctx.params.backend));
    }
    Ok(frame.tensor)
}

fn recv_checked(
    endpoint: &mut Endpoint,
    ctx: &SessionContext,
    plan: PlanId,
    from: &PartyId,
    phase: Phase,
    node: &super::plan::Node,
    slot: u8,
) -> Result<RingTensor> {
    let t = recv_tensor(endpoint, ctx, plan, from, phase, node.id, slot)?;
    if t.shape() != node.shape.as_slice() {
        return Err(Error::ProtocolDesync(format!(
            "{} from {from} has shape {:?}, expected {:?}",
            node.id,
            t.shape(),
            node.shape
        )));
    }
    Ok(t)
}
