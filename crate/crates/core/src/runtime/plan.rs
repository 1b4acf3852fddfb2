//! Static computation plans.
//!
//! A plan lists every tensor operation up front, with shapes and fixed-point
//! scales resolved. Because nothing is data dependent, S2 can produce all
//! masks and triples before any input exists.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ring::ConvGeometry;
use crate::sharing::{Bilinear, LocalOp};
use crate::tensor::RealTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PlanId(pub u64);

/// Plaintext post-processing run by an output receiver.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlainFn {
    Softmax,
    Sigmoid,
    Argmax,
}

impl PlainFn {
    /// Applied along the last axis.
    pub fn apply(&self, x: &RealTensor) -> RealTensor {
        match self {
            PlainFn::Sigmoid => RealTensor {
                shape: x.shape.clone(),
                data: x.data.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect(),
            },
            PlainFn::Softmax => RealTensor {
                shape: x.shape.clone(),
                data: x.rows().flat_map(softmax).collect(),
            },
            PlainFn::Argmax => {
                let mut shape = x.shape.clone();
                shape.pop();
                RealTensor {
                    shape,
                    data: x.rows().map(|r| argmax(r) as f64).collect(),
                }
            }
        }
    }
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// First index of the maximum.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Op {
    /// Plaintext input secret shared by a named provider.
    Input { provider: String, name: String },
    /// Public constant known to S0 and S1, encoded at the node's scale.
    Constant { values: Vec<f64> },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Neg(NodeId),
    AddPublic(NodeId, NodeId),
    MulPublic(NodeId, NodeId),
    Mask(NodeId),
    Bilinear(Bilinear, NodeId, NodeId),
    Truncate(NodeId),
    Local(LocalOp, Vec<NodeId>),
    /// Both servers send their shares to `receiver`.
    Reveal { input: NodeId, receiver: String, label: String },
    /// Post-processing on a revealed value, placed at that value's receiver.
    Plaintext { input: NodeId, func: PlainFn, label: String },
}

impl Op {
    pub fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Input { .. } | Op::Constant { .. } => vec![],
            Op::Neg(a) | Op::Mask(a) | Op::Truncate(a) => vec![*a],
            Op::Add(a, b) | Op::Sub(a, b) | Op::AddPublic(a, b) | Op::MulPublic(a, b) | Op::Bilinear(_, a, b) => {
                vec![*a, *b]
            }
            Op::Local(_, inputs) => inputs.clone(),
            Op::Reveal { input, .. } | Op::Plaintext { input, .. } => vec![*input],
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Op::Input { .. } => "input",
            Op::Constant { .. } => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Neg(..) => "neg",
            Op::AddPublic(..) => "add_public",
            Op::MulPublic(..) => "mul_public",
            Op::Mask(..) => "mask",
            Op::Bilinear(Bilinear::Mul, ..) => "mul",
            Op::Bilinear(Bilinear::MatMul, ..) => "matmul",
            Op::Bilinear(Bilinear::Conv2d(_), ..) => "conv2d",
            Op::Truncate(..) => "truncate",
            Op::Local(..) => "local",
            Op::Reveal { .. } => "reveal",
            Op::Plaintext { .. } => "plaintext",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sharing {
    Private,
    Masked,
    Public,
    /// Plaintext at an output receiver.
    Revealed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub op: Op,
    pub shape: Vec<usize>,
    /// Fractional bits of the node's encoding.
    pub scale: u32,
    pub sharing: Sharing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComputationPlan {
    frac_bits: u32,
    nodes: Vec<Node>,
}

impl ComputationPlan {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Result<&Node> {
        self.nodes
            .get(id.0 as usize)
            .filter(|n| n.id == id)
            .ok_or_else(|| Error::InvalidPlan(format!("unknown node {id}")))
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    /// Stable identifier derived from the plan contents.
    pub fn id(&self) -> PlanId {
        let mut hasher = Sha256::new();
        hasher.update(self.frac_bits.to_le_bytes());
        for node in &self.nodes {
            hasher.update(format!("{:?}|{:?}|{}|{:?};", node.op, node.shape, node.scale, node.sharing).as_bytes());
        }
        let digest: [u8; 32] = hasher.finalize().into();
        PlanId(u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")))
    }

    /// Kahn order over the dependency graph, ties broken by node id.
    pub fn execution_order(&self) -> Result<Vec<NodeId>> {
        let mut indegree: BTreeMap<NodeId, usize> = BTreeMap::new();
        let mut users: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
        for node in &self.nodes {
            let inputs = node.op.inputs();
            indegree.insert(node.id, inputs.len());
            for input in inputs {
                users.entry(input).or_default().push(node.id);
            }
        }
        let mut ready: VecDeque<NodeId> = indegree.iter().filter(|(_, &d)| d == 0).map(|(&id, _)| id).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(id) = ready.pop_front() {
            order.push(id);
            for user in users.get(&id).map(Vec::as_slice).unwrap_or_default() {
                let d = indegree.get_mut(user).expect("known node");
                *d -= 1;
                if *d == 0 {
                    ready.push_back(*user);
                }
            }
        }
        if order.len() != self.nodes.len() {
            return Err(Error::InvalidPlan("dependency cycle".into()));
        }
        Ok(order)
    }

    pub fn count(&self, kind: &str) -> usize {
        self.nodes.iter().filter(|n| n.op.kind() == kind).count()
    }

    pub fn inputs_of<'a>(&'a self, provider: &'a str) -> impl Iterator<Item = &'a Node> + 'a {
        self.nodes
            .iter()
            .filter(move |n| matches!(&n.op, Op::Input { provider: p, .. } if p == provider))
    }

    pub fn providers(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::Input { provider, .. } => Some(provider.clone()),
                _ => None,
            })
            .collect();
        names.sort();
        names.dedup();
        names
    }

    pub fn receivers(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::Reveal { receiver, .. } => Some(receiver.clone()),
                _ => None,
            })
            .collect();
        names.sort();
        names.dedup();
        names
    }

    /// The receiver that a revealed or post-processed node lives at.
    pub fn receiver_of(&self, id: NodeId) -> Result<&str> {
        match &self.node(id)?.op {
            Op::Reveal { receiver, .. } => Ok(receiver),
            Op::Plaintext { input, .. } => self.receiver_of(*input),
            _ => Err(Error::InvalidPlan(format!("{id} is not revealed"))),
        }
    }

    /// Re-checks every structural invariant; plans from the builder always pass.
    pub fn validate(&self) -> Result<()> {
        let mut rebuilt = PlanBuilder::new(self.frac_bits);
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id.0 as usize != i {
                return Err(Error::InvalidPlan(format!("node {} stored at position {i}", node.id)));
            }
            rebuilt.push_op(node.op.clone(), Some(&node.shape))?;
        }
        let rebuilt = rebuilt.nodes;
        for (a, b) in rebuilt.iter().zip(&self.nodes) {
            if a.shape != b.shape || a.scale != b.scale || a.sharing != b.sharing {
                return Err(Error::InvalidPlan(format!("node {} metadata inconsistent", a.id)));
            }
        }
        Ok(())
    }
}

/// Appends nodes in dependency order, resolving shapes and scales and
/// enforcing the sharing discipline.
#[derive(Debug)]
pub struct PlanBuilder {
    frac_bits: u32,
    nodes: Vec<Node>,
    masks: HashMap<NodeId, NodeId>,
}

impl PlanBuilder {
    pub fn new(frac_bits: u32) -> Self {
        PlanBuilder {
            frac_bits,
            nodes: Vec::new(),
            masks: HashMap::new(),
        }
    }

    pub fn node(&self, id: NodeId) -> Result<&Node> {
        self.nodes
            .get(id.0 as usize)
            .ok_or_else(|| Error::InvalidPlan(format!("unknown node {id}")))
    }

    pub fn shape(&self, id: NodeId) -> Result<Vec<usize>> {
        Ok(self.node(id)?.shape.clone())
    }

    fn expect(&self, id: NodeId, sharing: Sharing) -> Result<&Node> {
        let node = self.node(id)?;
        if node.sharing != sharing {
            let msg = if sharing == Sharing::Masked && node.sharing == Sharing::Private {
                format!("{id} is not masked; mask it before a product")
            } else {
                format!("{id} is {:?}, expected {sharing:?}", node.sharing)
            };
            return Err(Error::InvalidPlan(msg));
        }
        Ok(node)
    }

    fn push_op(&mut self, op: Op, declared_shape: Option<&[usize]>) -> Result<NodeId> {
        let f = self.frac_bits;
        let (shape, scale, sharing) = match &op {
            Op::Input { .. } => {
                let shape = declared_shape.ok_or_else(|| Error::UnresolvedShape(self.nodes.len() as u32))?;
                (shape.to_vec(), f, Sharing::Private)
            }
            Op::Constant { values } => {
                let shape = declared_shape.ok_or_else(|| Error::UnresolvedShape(self.nodes.len() as u32))?;
                if values.len() != shape.iter().product::<usize>() {
                    return Err(Error::ShapeMismatch(format!("{} constants for shape {shape:?}", values.len())));
                }
                // constants default to scale f; add_public re-encodes at the operand's scale
                (shape.to_vec(), f, Sharing::Public)
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let (x, y) = (self.expect(*a, Sharing::Private)?, self.expect(*b, Sharing::Private)?);
                if x.shape != y.shape {
                    return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", x.shape, y.shape)));
                }
                if x.scale != y.scale {
                    return Err(Error::ScaleMismatch(x.scale, y.scale));
                }
                (x.shape.clone(), x.scale, Sharing::Private)
            }
            Op::Neg(a) => {
                let x = self.expect(*a, Sharing::Private)?;
                (x.shape.clone(), x.scale, Sharing::Private)
            }
            Op::AddPublic(a, c) | Op::MulPublic(a, c) => {
                let x = self.expect(*a, Sharing::Private)?;
                let k = self.expect(*c, Sharing::Public)?;
                if !x.shape.ends_with(&k.shape) {
                    return Err(Error::ShapeMismatch(format!("public {:?} vs {:?}", k.shape, x.shape)));
                }
                let scale = if matches!(op, Op::MulPublic(..)) { x.scale + f } else { x.scale };
                (x.shape.clone(), scale, Sharing::Private)
            }
            Op::Mask(a) => {
                let x = self.expect(*a, Sharing::Private)?;
                if self.masks.contains_key(a) {
                    return Err(Error::InvalidPlan(format!("{a} is already masked")));
                }
                (x.shape.clone(), x.scale, Sharing::Masked)
            }
            Op::Bilinear(kind, a, b) => {
                let (x, y) = (self.expect(*a, Sharing::Masked)?, self.expect(*b, Sharing::Masked)?);
                if x.scale != f || y.scale != f {
                    return Err(Error::ScaleMismatch(x.scale.max(y.scale), f));
                }
                (kind.output_shape(&x.shape, &y.shape)?, x.scale + y.scale, Sharing::Private)
            }
            Op::Truncate(a) => {
                let x = self.expect(*a, Sharing::Private)?;
                if x.scale != 2 * f {
                    return Err(Error::ScaleMismatch(x.scale, 2 * f));
                }
                (x.shape.clone(), f, Sharing::Private)
            }
            Op::Local(local, inputs) => {
                let nodes = inputs.iter().map(|&i| self.node(i)).collect::<Result<Vec<_>>>()?;
                let first = nodes.first().ok_or_else(|| Error::InvalidPlan("local op without inputs".into()))?;
                if !matches!(first.sharing, Sharing::Private | Sharing::Masked)
                    || nodes.iter().any(|n| n.sharing != first.sharing)
                {
                    return Err(Error::InvalidPlan("local op inputs must be all private or all masked".into()));
                }
                if let Some(n) = nodes.iter().find(|n| n.scale != first.scale) {
                    return Err(Error::ScaleMismatch(first.scale, n.scale));
                }
                let shapes: Vec<&[usize]> = nodes.iter().map(|n| n.shape.as_slice()).collect();
                (local.output_shape(&shapes)?, first.scale, first.sharing)
            }
            Op::Reveal { input, .. } => {
                let x = self.expect(*input, Sharing::Private)?;
                (x.shape.clone(), x.scale, Sharing::Revealed)
            }
            Op::Plaintext { input, func, .. } => {
                let x = self.expect(*input, Sharing::Revealed)?;
                let shape = match func {
                    PlainFn::Argmax => x.shape[..x.shape.len().saturating_sub(1)].to_vec(),
                    _ => x.shape.clone(),
                };
                (shape, x.scale, Sharing::Revealed)
            }
        };
        let id = NodeId(self.nodes.len() as u32);
        if let Op::Mask(a) = &op {
            self.masks.insert(*a, id);
        }
        self.nodes.push(Node {
            id,
            op,
            shape,
            scale,
            sharing,
        });
        Ok(id)
    }

    pub fn input(&mut self, provider: &str, name: &str, shape: &[usize]) -> Result<NodeId> {
        self.push_op(
            Op::Input {
                provider: provider.into(),
                name: name.into(),
            },
            Some(shape),
        )
    }

    pub fn constant(&mut self, values: &RealTensor) -> Result<NodeId> {
        self.push_op(
            Op::Constant {
                values: values.data.clone(),
            },
            Some(&values.shape),
        )
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push_op(Op::Add(a, b), None)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push_op(Op::Sub(a, b), None)
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        self.push_op(Op::Neg(a), None)
    }

    /// Adds a public constant (scalar or same shape).
    pub fn add_public(&mut self, a: NodeId, values: &RealTensor) -> Result<NodeId> {
        let c = self.constant(values)?;
        self.push_op(Op::AddPublic(a, c), None)
    }

    /// Multiplies by a public constant; the result scale grows by f.
    pub fn mul_public(&mut self, a: NodeId, values: &RealTensor) -> Result<NodeId> {
        let c = self.constant(values)?;
        self.push_op(Op::MulPublic(a, c), None)
    }

    /// Masks a private tensor. Masking the same tensor twice is rejected.
    pub fn mask(&mut self, a: NodeId) -> Result<NodeId> {
        self.push_op(Op::Mask(a), None)
    }

    /// The mask node for `a`, inserting one the first time.
    pub fn masked(&mut self, a: NodeId) -> Result<NodeId> {
        if self.node(a)?.sharing == Sharing::Masked {
            return Ok(a);
        }
        match self.masks.get(&a) {
            Some(&m) => Ok(m),
            None => self.mask(a),
        }
    }

    pub fn bilinear(&mut self, kind: Bilinear, x: NodeId, y: NodeId) -> Result<NodeId> {
        self.push_op(Op::Bilinear(kind, x, y), None)
    }

    pub fn mul(&mut self, x: NodeId, y: NodeId) -> Result<NodeId> {
        self.bilinear(Bilinear::Mul, x, y)
    }

    pub fn matmul(&mut self, x: NodeId, y: NodeId) -> Result<NodeId> {
        self.bilinear(Bilinear::MatMul, x, y)
    }

    pub fn conv2d(&mut self, x: NodeId, kernel: NodeId, geometry: ConvGeometry) -> Result<NodeId> {
        self.bilinear(Bilinear::Conv2d(geometry), x, kernel)
    }

    pub fn truncate(&mut self, a: NodeId) -> Result<NodeId> {
        self.push_op(Op::Truncate(a), None)
    }

    pub fn local(&mut self, op: LocalOp, inputs: &[NodeId]) -> Result<NodeId> {
        self.push_op(Op::Local(op, inputs.to_vec()), None)
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.local(LocalOp::Reshape(shape.to_vec()), &[a])
    }

    pub fn reveal(&mut self, a: NodeId, receiver: &str, label: &str) -> Result<NodeId> {
        self.push_op(
            Op::Reveal {
                input: a,
                receiver: receiver.into(),
                label: label.into(),
            },
            None,
        )
    }

    pub fn plaintext(&mut self, revealed: NodeId, func: PlainFn, label: &str) -> Result<NodeId> {
        self.push_op(
            Op::Plaintext {
                input: revealed,
                func,
                label: label.into(),
            },
            None,
        )
    }

    pub fn build(self) -> ComputationPlan {
        ComputationPlan {
            frac_bits: self.frac_bits,
            nodes: self.nodes,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn products_need_masked_operands() {
        let mut b = PlanBuilder::new(16);
        let x = b.input("alice", "x", &[2, 2]).unwrap();
        let y = b.input("alice", "y", &[2, 2]).unwrap();
        let err = b.mul(x, y).unwrap_err();
        assert!(matches!(err, Error::InvalidPlan(_)));
    }

    #[test]
    fn double_mask_rejected_and_masked_reuses() {
        let mut b = PlanBuilder::new(16);
        let x = b.input("alice", "x", &[3]).unwrap();
        let m = b.mask(x).unwrap();
        assert!(b.mask(x).is_err());
        assert_eq!(b.masked(x).unwrap(), m);
        assert_eq!(b.masked(m).unwrap(), m);
    }

    #[test]
    fn scale_discipline() {
        let mut b = PlanBuilder::new(16);
        let x = b.input("alice", "x", &[3]).unwrap();
        let xm = b.masked(x).unwrap();
        let p = b.mul(xm, xm).unwrap();
        assert_eq!(b.node(p).unwrap().scale, 32);
        // adding mismatched scales
        assert!(matches!(b.add(p, x), Err(Error::ScaleMismatch(32, 16))));
        // untruncated product cannot be multiplied again
        let pm = b.mask(p).unwrap();
        assert!(matches!(b.mul(pm, xm), Err(Error::ScaleMismatch(..))));
        let t = b.truncate(p).unwrap();
        assert_eq!(b.node(t).unwrap().scale, 16);
        assert!(b.truncate(t).is_err());
    }

    #[test]
    fn order_and_validation() {
        let mut b = PlanBuilder::new(8);
        let x = b.input("alice", "x", &[2, 3]).unwrap();
        let w = b.input("bob", "w", &[3, 4]).unwrap();
        let (xm, wm) = (b.masked(x).unwrap(), b.masked(w).unwrap());
        let z = b.matmul(xm, wm).unwrap();
        let z = b.truncate(z).unwrap();
        let r = b.reveal(z, "carol", "z").unwrap();
        b.plaintext(r, PlainFn::Argmax, "class").unwrap();
        let plan = b.build();
        plan.validate().unwrap();
        let order = plan.execution_order().unwrap();
        assert_eq!(order.len(), plan.nodes().len());
        assert_eq!(plan.providers(), vec!["alice".to_string(), "bob".to_string()]);
        assert_eq!(plan.receiver_of(NodeId(7)).unwrap(), "carol");
        assert_eq!(plan.nodes()[7].shape, vec![2]);
    }

    #[test]
    fn plan_id_depends_on_content() {
        let build = |n| {
            let mut b = PlanBuilder::new(16);
            b.input("p", "x", &[n]).unwrap();
            b.build()
        };
        assert_eq!(build(3).id(), build(3).id());
        assert_ne!(build(3).id(), build(4).id());
    }

    #[test]
    fn softmax_and_argmax() {
        let x = RealTensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 0.0, 0.0, 0.0]).unwrap();
        let s = PlainFn::Softmax.apply(&x);
        assert!((s.data[..3].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((s.data[3] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(PlainFn::Argmax.apply(&x).data, vec![2.0, 0.0]);
    }
}
