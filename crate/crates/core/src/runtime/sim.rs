//! Single-machine evaluation of a lowered plan in exact integer arithmetic.
//!
//! Every node holds the integer its shares would reconstruct to. On `Z_2^64`
//! arithmetic wraps exactly as the ring does; on the CRT ring values are kept
//! as centered representatives and any `i128` overflow is reported rather
//! than silently diverging. Interactive truncation replays the masks S2 draws
//! for the same seed, so decoded outputs match a secure run bit for bit.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;

use super::exec::InputSet;
use super::plan::{ComputationPlan, NodeId, Op};
use crate::error::{Error, Result};
use crate::offline::derive_truncation_masks;
use crate::params::ProtocolParams;
use crate::ring::{crt, decode_at, encode_at, layout, Backend, RingTensor};
use crate::sharing::{Bilinear, TruncMode};
use crate::tensor::RealTensor;

/// How the simulator rounds at truncation nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SimTruncation {
    /// Replays S2's masks for this seed and session.
    Seeded { seed: u64, session: u64 },
    /// Plain floor division; within one unit of any secure run.
    Floor,
}

#[derive(Clone, Debug)]
enum SimValue {
    Int { shape: Vec<usize>, data: Vec<i128> },
    Plain(RealTensor),
}

/// Outputs keyed by receiver, then label, as a secure session returns them.
pub type SimOutputs = BTreeMap<String, BTreeMap<String, RealTensor>>;

struct Sim<'a> {
    backend: Backend,
    params: &'a ProtocolParams,
    modulus: i128,
}

impl Sim<'_> {
    fn reduce(&self, v: i128) -> i128 {
        match self.backend {
            Backend::Int64 => v as i64 as i128,
            Backend::Crt => {
                let r = v.rem_euclid(self.modulus);
                if r > self.modulus / 2 {
                    r - self.modulus
                } else {
                    r
                }
            }
        }
    }

    fn mul(&self, a: i128, b: i128) -> Result<i128> {
        match self.backend {
            Backend::Int64 => Ok((a as i64).wrapping_mul(b as i64) as i128),
            Backend::Crt => a
                .checked_mul(b)
                .map(|v| self.reduce(v))
                .ok_or_else(|| Error::SimOverflow(format!("{a} * {b}"))),
        }
    }

    fn zip(&self, a: &[i128], b: &[i128], f: impl Fn(i128, i128) -> i128) -> Vec<i128> {
        a.iter().zip(b).map(|(&x, &y)| self.reduce(f(x, y))).collect()
    }

    fn elementwise_mul(&self, a: &[i128], b: &[i128]) -> Result<Vec<i128>> {
        a.iter().zip(b).map(|(&x, &y)| self.mul(x, y)).collect()
    }

    fn matmul(&self, a: &[i128], b: &[i128], n: usize, k: usize, m: usize) -> Result<Vec<i128>> {
        let mut out = vec![0i128; n * m];
        match self.backend {
            Backend::Int64 => {
                let a: Vec<i64> = a.iter().map(|&v| v as i64).collect();
                let b: Vec<i64> = b.iter().map(|&v| v as i64).collect();
                out.par_chunks_mut(m.max(1)).enumerate().for_each(|(i, row)| {
                    let mut acc = vec![0i64; m];
                    for (kk, &x) in a[i * k..(i + 1) * k].iter().enumerate() {
                        for (slot, &y) in acc.iter_mut().zip(&b[kk * m..(kk + 1) * m]) {
                            *slot = slot.wrapping_add(x.wrapping_mul(y));
                        }
                    }
                    for (o, v) in row.iter_mut().zip(acc) {
                        *o = v as i128;
                    }
                });
                Ok(out)
            }
            Backend::Crt => {
                let failed = out
                    .par_chunks_mut(m.max(1))
                    .enumerate()
                    .map(|(i, row)| {
                        for (j, o) in row.iter_mut().enumerate() {
                            let mut acc = 0i128;
                            for kk in 0..k {
                                let Some(p) = a[i * k + kk].checked_mul(b[kk * m + j]) else {
                                    return true;
                                };
                                let Some(s) = acc.checked_add(p) else {
                                    return true;
                                };
                                acc = s;
                            }
                            *o = self.reduce(acc);
                        }
                        false
                    })
                    .reduce(|| false, |x, y| x || y);
                if failed {
                    return Err(Error::SimOverflow(format!("matmul {n}x{k}x{m}")));
                }
                Ok(out)
            }
        }
    }

    fn bilinear(&self, kind: &Bilinear, x: (&[usize], &[i128]), y: (&[usize], &[i128])) -> Result<Vec<i128>> {
        match kind {
            Bilinear::Mul => self.elementwise_mul(x.1, y.1),
            Bilinear::MatMul => self.matmul(x.1, y.1, x.0[0], x.0[1], y.0[1]),
            Bilinear::Conv2d(geometry) => {
                let (cols, cols_shape) = layout::im2col(x.1, 1, x.0, geometry)?;
                let out_channels = y.0[3];
                self.matmul(&cols, y.1, cols_shape[0], cols_shape[1], out_channels)
            }
        }
    }

    fn encode(&self, values: &RealTensor, scale: u32) -> Result<Vec<i128>> {
        Ok(encode_at(values, scale, &self.params.fixed, self.backend)?.to_signed())
    }

    fn truncate(&self, data: &[i128], masks: Option<Vec<u128>>) -> Vec<i128> {
        let cfg = self.params.truncation();
        let (f, b) = (cfg.frac_bits, cfg.bound_bits);
        let Some(masks) = masks else {
            return data.iter().map(|&x| self.reduce(x >> f)).collect();
        };
        let offset = 1i128 << (b - f);
        data.iter()
            .zip(masks)
            .map(|(&x, r)| {
                let opened: u128 = match self.backend {
                    Backend::Int64 => (x as i64 as u64).wrapping_add(1u64 << b).wrapping_add(r as u64) as u128,
                    Backend::Crt => (x + (1i128 << b) + r as i128).rem_euclid(self.modulus) as u128,
                };
                self.reduce((opened >> f) as i128 - offset - (r >> f) as i128)
            })
            .collect()
    }
}

/// Runs `plan` on plaintext inputs, mirroring the protocol's arithmetic.
pub fn simulate_plan(
    plan: &ComputationPlan,
    params: &ProtocolParams,
    inputs: &HashMap<String, InputSet>,
    truncation: SimTruncation,
) -> Result<SimOutputs> {
    params.validate()?;
    let sim = Sim {
        backend: params.backend,
        params,
        modulus: crt().product() as i128,
    };
    let plan_id = plan.id();
    let cfg = params.truncation();
    let mut values: HashMap<NodeId, SimValue> = HashMap::new();
    let mut outputs = SimOutputs::new();
    let int = |values: &HashMap<NodeId, SimValue>, id: NodeId| -> Result<(Vec<usize>, Vec<i128>)> {
        match values.get(&id) {
            Some(SimValue::Int { shape, data }) => Ok((shape.clone(), data.clone())),
            _ => Err(Error::InvalidPlan(format!("{id} has no integer value"))),
        }
    };
    let plain = |values: &HashMap<NodeId, SimValue>, id: NodeId| -> Result<RealTensor> {
        match values.get(&id) {
            Some(SimValue::Plain(t)) => Ok(t.clone()),
            _ => Err(Error::InvalidPlan(format!("{id} has no plaintext value"))),
        }
    };
    for id in plan.execution_order()? {
        let node = plan.node(id)?;
        let shape = node.shape.clone();
        let value = match &node.op {
            Op::Input { provider, name } => {
                let t = inputs
                    .get(provider)
                    .and_then(|set| set.get(name))
                    .ok_or_else(|| Error::MissingInput(format!("{provider}/{name}")))?;
                if t.shape != shape {
                    return Err(Error::ShapeMismatch(format!("input {name}: {:?} vs {shape:?}", t.shape)));
                }
                SimValue::Int {
                    data: sim.encode(t, node.scale)?,
                    shape,
                }
            }
            Op::Constant { values: v } => SimValue::Plain(RealTensor::new(shape, v.clone())?),
            Op::Add(a, b) | Op::Sub(a, b) => {
                let ((_, x), (_, y)) = (int(&values, *a)?, int(&values, *b)?);
                let data = if matches!(node.op, Op::Add(..)) {
                    sim.zip(&x, &y, |p, q| p + q)
                } else {
                    sim.zip(&x, &y, |p, q| p - q)
                };
                SimValue::Int { shape, data }
            }
            Op::Neg(a) => SimValue::Int {
                data: int(&values, *a)?.1.iter().map(|&v| sim.reduce(-v)).collect(),
                shape,
            },
            Op::AddPublic(a, c) => {
                let (_, x) = int(&values, *a)?;
                let k = sim.encode(&plain(&values, *c)?.broadcast_to(&shape)?, node.scale)?;
                SimValue::Int {
                    data: sim.zip(&x, &k, |p, q| p + q),
                    shape,
                }
            }
            Op::MulPublic(a, c) => {
                let (_, x) = int(&values, *a)?;
                let k = sim.encode(&plain(&values, *c)?.broadcast_to(&shape)?, plan.frac_bits())?;
                SimValue::Int {
                    data: sim.elementwise_mul(&x, &k)?,
                    shape,
                }
            }
            Op::Mask(a) => values.get(a).cloned().ok_or(Error::InvalidPlan(format!("{a} unset")))?,
            Op::Bilinear(kind, a, b) => {
                let (xs, x) = int(&values, *a)?;
                let (ys, y) = int(&values, *b)?;
                SimValue::Int {
                    data: sim.bilinear(kind, (&xs, &x), (&ys, &y))?,
                    shape,
                }
            }
            Op::Truncate(a) => {
                let (_, x) = int(&values, *a)?;
                let masks = match (params.trunc_mode, truncation) {
                    (TruncMode::Interactive, SimTruncation::Seeded { seed, session }) => {
                        Some(derive_truncation_masks(seed, session, plan_id, id, x.len(), &cfg))
                    }
                    _ => None,
                };
                SimValue::Int {
                    data: sim.truncate(&x, masks),
                    shape,
                }
            }
            Op::Local(op, ids) => {
                let parts = ids
                    .iter()
                    .map(|&i| {
                        let (s, d) = int(&values, i)?;
                        RingTensor::from_i128s(sim.backend, &s, &d)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let refs: Vec<&RingTensor> = parts.iter().collect();
                SimValue::Int {
                    data: op.apply(&refs)?.to_signed(),
                    shape,
                }
            }
            Op::Reveal { input, receiver, label } => {
                let (s, d) = int(&values, *input)?;
                let t = decode_at(&RingTensor::from_i128s(sim.backend, &s, &d)?, node.scale);
                outputs.entry(receiver.clone()).or_default().insert(label.clone(), t.clone());
                SimValue::Plain(t)
            }
            Op::Plaintext { input, func, label } => {
                let t = func.apply(&plain(&values, *input)?);
                let receiver = plan.receiver_of(*input)?.to_string();
                outputs.entry(receiver).or_default().insert(label.clone(), t.clone());
                SimValue::Plain(t)
            }
        };
        values.insert(id, value);
    }
    Ok(outputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::exec::SessionContext;
    use crate::runtime::plan::{PlainFn, PlanBuilder};
    use crate::runtime::session::run_session;
    use crate::runtime::transport::TransportKind;

    fn plan(frac_bits: u32) -> ComputationPlan {
        let mut b = PlanBuilder::new(frac_bits);
        let x = b.input("p", "x", &[3, 2]).unwrap();
        let xm = b.mask(x).unwrap();
        let sq = b.mul(xm, xm).unwrap();
        let sq = b.truncate(sq).unwrap();
        let sq = b.add_public(sq, &RealTensor::new(vec![2], vec![0.5, -0.25]).unwrap()).unwrap();
        let r = b.reveal(sq, "p", "y").unwrap();
        b.plaintext(r, PlainFn::Argmax, "k").unwrap();
        b.build()
    }

    #[test]
    fn seeded_sim_matches_secure_run_exactly() {
        for backend in [Backend::Int64, Backend::Crt] {
            let params = ProtocolParams::new(backend, TruncMode::Interactive);
            let plan = plan(params.fixed.frac_bits);
            let x = RealTensor::new(vec![3, 2], vec![0.1, -1.7, 2.9, 0.333, -0.01, 1.0]).unwrap();
            let inputs = HashMap::from([("p".to_string(), InputSet::from([("x".to_string(), x)]))]);
            let ctx = SessionContext {
                session: 5,
                params,
                seed: Some(99),
            };
            let secure = run_session(&plan, &ctx, &inputs, TransportKind::InMemory).unwrap();
            let sim = simulate_plan(&plan, &params, &inputs, SimTruncation::Seeded { seed: 99, session: 5 }).unwrap();
            assert_eq!(secure.outputs, sim);
        }
    }

    #[test]
    fn floor_sim_within_one_unit() {
        let params = ProtocolParams::new(Backend::Int64, TruncMode::LocalOptimistic);
        let plan = plan(params.fixed.frac_bits);
        let x = RealTensor::new(vec![3, 2], vec![0.5, -1.5, 2.0, 0.75, -0.125, 1.25]).unwrap();
        let inputs = HashMap::from([("p".to_string(), InputSet::from([("x".to_string(), x.clone())]))]);
        let sim = simulate_plan(&plan, &params, &inputs, SimTruncation::Floor).unwrap();
        let y = &sim["p"]["y"];
        let bias = [0.5, -0.25];
        for (i, v) in x.data.iter().enumerate() {
            assert!((y.data[i] - (v * v + bias[i % 2])).abs() <= 1.0 / 65536.0);
        }
    }
}
