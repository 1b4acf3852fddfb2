//! All parties of one execution inside a single process, one thread each.

use std::collections::{BTreeMap, HashMap};
use std::net::{SocketAddr, TcpListener};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::exec::{execute_plan, InputSet, PartyOutcome, SessionContext};
use super::plan::ComputationPlan;
use super::stats::ChannelStats;
use super::transport::{self, Endpoint, TransportKind, DEFAULT_TIMEOUT};
use super::PartyId;
use crate::error::{Error, Result};
use crate::tensor::RealTensor;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionOutcome {
    /// Receiver name, then output label.
    pub outputs: BTreeMap<String, BTreeMap<String, RealTensor>>,
    /// Every frame sent by any party.
    pub stats: ChannelStats,
    pub offline_time: Duration,
    /// Slowest computing server's online phase.
    pub online_time: Duration,
}

impl SessionOutcome {
    pub fn output(&self, receiver: &str, label: &str) -> Result<&RealTensor> {
        self.outputs
            .get(receiver)
            .and_then(|o| o.get(label))
            .ok_or_else(|| Error::MissingInput(format!("no output {label} for {receiver}")))
    }
}

/// Every party the plan involves.
pub fn participants(plan: &ComputationPlan) -> Vec<PartyId> {
    let mut parties = vec![PartyId::Server0, PartyId::Server1, PartyId::Server2];
    parties.extend(plan.providers().into_iter().map(PartyId::InputProvider));
    parties.extend(plan.receivers().into_iter().map(PartyId::OutputReceiver));
    parties
}

fn endpoints(parties: &[PartyId], kind: TransportKind, timeout: Duration) -> Result<Vec<Endpoint>> {
    match kind {
        TransportKind::InMemory => Ok(transport::in_memory(parties, timeout)),
        TransportKind::Tcp => {
            let mut listeners = Vec::new();
            let mut addrs: HashMap<PartyId, SocketAddr> = HashMap::new();
            for p in parties {
                let l = TcpListener::bind("127.0.0.1:0")?;
                addrs.insert(p.clone(), l.local_addr()?);
                listeners.push(l);
            }
            parties
                .iter()
                .zip(listeners)
                .map(|(p, l)| transport::tcp(p.clone(), Some(l), addrs.clone(), timeout))
                .collect()
        }
    }
}

/// Runs the plan with every party in this process. `inputs` maps provider
/// names to their input sets.
pub fn run_session(
    plan: &ComputationPlan,
    ctx: &SessionContext,
    inputs: &HashMap<String, InputSet>,
    kind: TransportKind,
) -> Result<SessionOutcome> {
    run_session_with_timeout(plan, ctx, inputs, kind, DEFAULT_TIMEOUT)
}

pub fn run_session_with_timeout(
    plan: &ComputationPlan,
    ctx: &SessionContext,
    inputs: &HashMap<String, InputSet>,
    kind: TransportKind,
    timeout: Duration,
) -> Result<SessionOutcome> {
    plan.validate()?;
    let parties = participants(plan);
    let eps = endpoints(&parties, kind, timeout)?;
    let empty = InputSet::new();
    let results: Vec<(PartyId, Result<PartyOutcome>, ChannelStats)> = thread::scope(|scope| {
        let handles: Vec<_> = eps
            .into_iter()
            .map(|mut ep| {
                let role = ep.party().clone();
                let own = match &role {
                    PartyId::InputProvider(name) => inputs.get(name).unwrap_or(&empty),
                    _ => &empty,
                };
                thread::Builder::new()
                    .name(format!("party-{role}"))
                    .spawn_scoped(scope, move || {
                        let out = execute_plan(plan, ctx, &role, own, &mut ep);
                        let sent = ep.sent_stats().clone();
                        (role, out, sent)
                    })
                    .expect("spawn party thread")
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("party thread panicked")).collect()
    });

    let mut outcome = SessionOutcome::default();
    let mut first_err: Option<Error> = None;
    for (role, result, sent) in results {
        outcome.stats.merge(&sent);
        match result {
            Ok(o) => {
                match &role {
                    PartyId::Server2 => outcome.offline_time = o.offline_time,
                    PartyId::Server0 | PartyId::Server1 => {
                        outcome.online_time = outcome.online_time.max(o.online_time)
                    }
                    PartyId::OutputReceiver(name) => {
                        outcome.outputs.insert(name.clone(), o.outputs);
                    }
                    PartyId::InputProvider(_) => {}
                }
            }
            // a closed channel is usually the echo of a failure elsewhere
            Err(e) => match (&first_err, &e) {
                (None, _) | (Some(Error::ChannelClosed(_) | Error::Timeout(_)), _) => first_err = Some(e),
                _ => {}
            },
        }
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(outcome),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ProtocolParams;
    use crate::runtime::frame::Phase;
    use crate::runtime::plan::{PlainFn, PlanBuilder};
    use crate::runtime::stats::predict_traffic;
    use crate::ring::Backend;
    use crate::sharing::TruncMode;

    fn tiny_plan(frac_bits: u32) -> ComputationPlan {
        let mut b = PlanBuilder::new(frac_bits);
        let x = b.input("client", "x", &[2, 4]).unwrap();
        let w = b.input("owner", "w", &[4, 3]).unwrap();
        let xm = b.mask(x).unwrap();
        let wm = b.mask(w).unwrap();
        let z = b.matmul(xm, wm).unwrap();
        let z = b.truncate(z).unwrap();
        let r = b.reveal(z, "client", "logits").unwrap();
        b.plaintext(r, PlainFn::Softmax, "probs").unwrap();
        b.build()
    }

    fn tiny_inputs() -> HashMap<String, InputSet> {
        let x = RealTensor::new(vec![2, 4], vec![0.5, -1.0, 0.25, 2.0, 1.5, 0.0, -0.75, 0.125]).unwrap();
        let w = RealTensor::new(vec![4, 3], (0..12).map(|i| (i as f64 - 6.0) / 8.0).collect()).unwrap();
        HashMap::from([
            ("client".to_string(), InputSet::from([("x".to_string(), x)])),
            ("owner".to_string(), InputSet::from([("w".to_string(), w)])),
        ])
    }

    #[test]
    fn in_memory_session_computes_product() {
        for backend in [Backend::Int64, Backend::Crt] {
            let params = ProtocolParams::new(backend, TruncMode::Interactive);
            let plan = tiny_plan(params.fixed.frac_bits);
            let ctx = SessionContext {
                session: 1,
                params,
                seed: Some(42),
            };
            let inputs = tiny_inputs();
            let out = run_session(&plan, &ctx, &inputs, TransportKind::InMemory).unwrap();
            let logits = out.output("client", "logits").unwrap();
            let (x, w) = (&inputs["client"]["x"], &inputs["owner"]["w"]);
            for i in 0..2 {
                for j in 0..3 {
                    let want: f64 = (0..4).map(|k| x.data[i * 4 + k] * w.data[k * 3 + j]).sum();
                    assert!((logits.data[i * 3 + j] - want).abs() < 1e-4);
                }
            }
            let probs = out.output("client", "probs").unwrap();
            assert!((probs.data[..3].iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(out.stats, predict_traffic(&plan, &params));
            assert_eq!(out.stats.received_by(&PartyId::Server2, Phase::Online).messages, 0);
        }
    }

    #[test]
    fn tcp_matches_in_memory() {
        let params = ProtocolParams::new(Backend::Int64, TruncMode::Interactive);
        let plan = tiny_plan(params.fixed.frac_bits);
        let ctx = SessionContext {
            session: 9,
            params,
            seed: Some(3),
        };
        let inputs = tiny_inputs();
        let mem = run_session(&plan, &ctx, &inputs, TransportKind::InMemory).unwrap();
        let tcp = run_session(&plan, &ctx, &inputs, TransportKind::Tcp).unwrap();
        assert_eq!(mem.outputs, tcp.outputs);
        assert_eq!(mem.stats, tcp.stats);
    }

    #[test]
    fn missing_input_fails_without_hanging() {
        let params = ProtocolParams::new(Backend::Int64, TruncMode::LocalOptimistic);
        let plan = tiny_plan(params.fixed.frac_bits);
        let ctx = SessionContext {
            session: 2,
            params,
            seed: None,
        };
        let mut inputs = tiny_inputs();
        inputs.remove("owner");
        let err = run_session_with_timeout(&plan, &ctx, &inputs, TransportKind::InMemory, Duration::from_secs(5));
        assert!(matches!(err, Err(Error::MissingInput(_))), "{err:?}");
    }
}
