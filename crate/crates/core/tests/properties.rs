mod common;

use std::collections::{BTreeSet, HashMap};
use std::thread;
use std::time::Duration;

use maskmpc::bench::{run_bench, BenchConfig, BenchData};
use maskmpc::data::synthetic_digits;
use maskmpc::nn::{random_weights, Network};
use maskmpc::offline::Dealer;
use maskmpc::ring::{decode, encode, sample_uniform, RingTensor, RngStream};
use maskmpc::runtime::frame::Phase;
use maskmpc::runtime::plan::Op;
use maskmpc::runtime::session::{participants, run_session_with_timeout};
use maskmpc::runtime::transport::in_memory;
use maskmpc::runtime::{
    execute_plan, ComputationPlan, InputSet, PartyId, PlanBuilder, SessionContext, TransportKind,
};
use maskmpc::sharing::{self, Bilinear};
use maskmpc::{Backend, ProtocolParams, RealTensor, TruncMode};
use num_bigint::BigUint;
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

const TIMEOUT: Duration = Duration::from_secs(120);

fn backend() -> impl Strategy<Value = Backend> {
    prop_oneof![Just(Backend::Int64), Just(Backend::Crt)]
}

fn uniform(backend: Backend, n: usize, seed: u64, label: &str) -> RingTensor {
    sample_uniform(&[n], backend, &mut RngStream::new(seed, label))
}

fn real(shape: &[usize], values: &[f64]) -> RealTensor {
    RealTensor::new(shape.to_vec(), values.to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ring_axioms(backend in backend(), n in 1usize..24, seed in any::<u64>()) {
        let x = uniform(backend, n, seed, "x");
        let y = uniform(backend, n, seed, "y");
        let z = uniform(backend, n, seed, "z");
        let zero = RingTensor::zeros(backend, &[n]);
        prop_assert_eq!(x.add(&y).unwrap(), y.add(&x).unwrap());
        prop_assert_eq!(x.mul(&y).unwrap(), y.mul(&x).unwrap());
        prop_assert_eq!(x.add(&y).unwrap().add(&z).unwrap(), x.add(&y.add(&z).unwrap()).unwrap());
        prop_assert_eq!(x.mul(&y).unwrap().mul(&z).unwrap(), x.mul(&y.mul(&z).unwrap()).unwrap());
        prop_assert_eq!(
            x.mul(&y.add(&z).unwrap()).unwrap(),
            x.mul(&y).unwrap().add(&x.mul(&z).unwrap()).unwrap()
        );
        prop_assert_eq!(x.add(&x.neg()).unwrap(), zero.clone());
        prop_assert_eq!(x.sub(&y).unwrap(), x.add(&y.neg()).unwrap());
        prop_assert_eq!(x.add(&zero).unwrap(), x);
    }

    #[test]
    fn ops_agree_with_bigint(backend in backend(), n in 1usize..24, seed in any::<u64>()) {
        let x = uniform(backend, n, seed, "x");
        let y = uniform(backend, n, seed, "y");
        prop_assert_eq!(common::big_values(&x.add(&y).unwrap()), common::add(&x, &y));
        prop_assert_eq!(common::big_values(&x.sub(&y).unwrap()), common::sub(&x, &y));
        prop_assert_eq!(common::big_values(&x.mul(&y).unwrap()), common::mul(&x, &y));
        prop_assert_eq!(common::big_values(&x.neg()), common::neg(&x));
        let m = common::modulus(backend);
        prop_assert!(common::big_values(&x).iter().all(|v| v < &m));
    }

    #[test]
    fn matmul_agrees_with_bigint(
        backend in backend(),
        (r, k, t) in (1usize..6, 1usize..40, 1usize..6),
        seed in any::<u64>(),
    ) {
        let mut rng = RngStream::new(seed, "matmul");
        let x = sample_uniform(&[r, k], backend, &mut rng);
        let y = sample_uniform(&[k, t], backend, &mut rng);
        prop_assert_eq!(common::big_values(&x.matmul(&y).unwrap()), common::matmul(&x, &y));
    }

    #[test]
    fn crt_round_trips_integers(v in any::<i64>(), w in any::<i32>()) {
        let values = [v as i128, w as i128, (v as i128) * (w as i128)];
        let t = RingTensor::from_i128s(Backend::Crt, &[3], &values).unwrap();
        prop_assert_eq!(t.to_signed(), values.to_vec());
        let (a, b) = (v as u64, w as i64 as u64);
        let want = BigUint::from(a) * BigUint::from(b) % common::modulus(Backend::Crt);
        let x = RingTensor::from_i128s(Backend::Crt, &[1], &[a as i128]).unwrap();
        let y = RingTensor::from_i128s(Backend::Crt, &[1], &[b as i128]).unwrap();
        prop_assert_eq!(common::big_values(&x.mul(&y).unwrap()), vec![want]);
    }

    #[test]
    fn encode_decode_round_trip(backend in backend(), values in prop::collection::vec(-1.0e6f64..1.0e6, 1..16)) {
        let params = ProtocolParams::new(backend, TruncMode::Interactive);
        let t = real(&[values.len()], &values);
        let back = decode(&encode(&t, &params.fixed, backend).unwrap(), &params.fixed);
        let tolerance = (-(params.fixed.frac_bits as f64) - 1.0).exp2();
        for (a, b) in values.iter().zip(&back.data) {
            prop_assert!((a - b).abs() <= tolerance, "{} decoded as {}", a, b);
        }
    }

    #[test]
    fn shares_reconstruct(backend in backend(), n in 1usize..16, seed in any::<u64>()) {
        let x = uniform(backend, n, seed, "x");
        let y = uniform(backend, n, seed, "y");
        let mut rng = RngStream::new(seed, "share");
        let (px, py) = (sharing::share(&x, 0, &mut rng), sharing::share(&y, 0, &mut rng));
        prop_assert_eq!(&sharing::reconstruct(&px).unwrap(), &x);
        let sum = sharing::reconstruct(&sharing::add(&px, &py).unwrap()).unwrap();
        prop_assert_eq!(common::big_values(&sum), common::add(&x, &y));
        let diff = sharing::reconstruct(&sharing::sub(&px, &py).unwrap()).unwrap();
        prop_assert_eq!(common::big_values(&diff), common::sub(&x, &y));
        let neg = sharing::reconstruct(&sharing::neg(&px)).unwrap();
        prop_assert_eq!(common::big_values(&neg), common::neg(&x));
    }

    #[test]
    fn masked_products_are_exact(
        backend in backend(),
        (r, k, t) in (1usize..5, 1usize..12, 1usize..5),
        seed in any::<u64>(),
    ) {
        let mut rng = RngStream::new(seed, "bilinear");
        let mut dealer = Dealer::new(seed);
        let x = sample_uniform(&[r, k], backend, &mut rng);
        let y = sample_uniform(&[k, t], backend, &mut rng);
        let w = sample_uniform(&[r, k], backend, &mut rng);
        let mx = sharing::mask(&sharing::share(&x, 0, &mut rng), &mut dealer).unwrap();
        let my = sharing::mask(&sharing::share(&y, 0, &mut rng), &mut dealer).unwrap();
        let mw = sharing::mask(&sharing::share(&w, 0, &mut rng), &mut dealer).unwrap();
        let z = sharing::bilinear(&Bilinear::MatMul, &mx, &my, &mut dealer).unwrap();
        prop_assert_eq!(common::big_values(&sharing::reconstruct(&z).unwrap()), common::matmul(&x, &y));
        let e = sharing::mul(&mx, &mw, &mut dealer).unwrap();
        prop_assert_eq!(common::big_values(&sharing::reconstruct(&e).unwrap()), common::mul(&x, &w));
    }

    #[test]
    fn interactive_truncation_is_off_by_at_most_one(
        backend in backend(),
        raw in prop::collection::vec(any::<i64>(), 1..32),
        seed in any::<u64>(),
    ) {
        let cfg = ProtocolParams::new(backend, TruncMode::Interactive).truncation();
        let limit = 1i128 << cfg.bound_bits;
        let values: Vec<i128> = raw.iter().map(|v| (*v as i128 * 7919) % limit).collect();
        let x = RingTensor::from_i128s(backend, &[values.len()], &values).unwrap();
        let mut rng = RngStream::new(seed, "trunc");
        let mut dealer = Dealer::new(seed);
        let p = sharing::share(&x, 2 * cfg.frac_bits, &mut rng);
        let z = sharing::truncate(&p, &cfg, &mut dealer).unwrap();
        prop_assert_eq!(z.scale, cfg.frac_bits);
        let got = sharing::reconstruct(&z).unwrap().to_signed();
        for (g, v) in got.iter().zip(&values) {
            let err = g - common::floor_shift(*v, cfg.frac_bits);
            prop_assert!((-1..=1).contains(&err), "value {} error {}", v, err);
        }
    }

    #[test]
    fn each_tensor_is_masked_once(
        inputs in 2usize..6,
        pairs in prop::collection::vec((0usize..6, 0usize..6), 1..10),
    ) {
        let mut b = PlanBuilder::new(16);
        let ids: Vec<_> = (0..inputs).map(|i| b.input("owner", &format!("x{i}"), &[2, 2]).unwrap()).collect();
        let mut used = BTreeSet::new();
        let mut last = None;
        for (i, j) in pairs {
            let (i, j) = (i % inputs, j % inputs);
            used.insert(i);
            used.insert(j);
            let (mi, mj) = (b.masked(ids[i]).unwrap(), b.masked(ids[j]).unwrap());
            last = Some(b.mul(mi, mj).unwrap());
        }
        let out = b.truncate(last.unwrap()).unwrap();
        b.reveal(out, "client", "y").unwrap();
        let plan = b.build();
        prop_assert_eq!(plan.count("mask"), used.len());
        for &i in &used {
            let masks = plan.nodes().iter().filter(|n| matches!(n.op, Op::Mask(a) if a == ids[i])).count();
            prop_assert_eq!(masks, 1);
        }
    }
}

/// Bucket counts of the top four bits (int64) or of the first residue
/// (int100) of share0 for a fixed secret must look uniform.
#[test]
fn shares_look_uniform() {
    const SAMPLES: usize = 32_000;
    const BUCKETS: usize = 16;
    for backend in [Backend::Int64, Backend::Crt] {
        let x = RingTensor::from_i128s(backend, &[SAMPLES], &vec![12345; SAMPLES]).unwrap();
        let shares = sharing::share(&x, 0, &mut RngStream::new(77, "uniform"));
        let mut counts = [0usize; BUCKETS];
        let width = backend.width();
        for chunk in shares.share0.words().chunks(width) {
            let bucket = match backend {
                Backend::Int64 => (chunk[0] >> 60) as usize,
                Backend::Crt => {
                    let m = maskmpc::ring::CRT_MODULI[0];
                    (chunk[0] as u128 * BUCKETS as u128 / m as u128) as usize
                }
            };
            counts[bucket] += 1;
        }
        let expected = SAMPLES as f64 / BUCKETS as f64;
        let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let p = 1.0 - ChiSquared::new((BUCKETS - 1) as f64).unwrap().cdf(stat);
        assert!(p > 1e-4, "{backend}: chi-square {stat:.1}, p = {p:.2e}, counts {counts:?}");
    }
}

fn product_plan(frac_bits: u32) -> ComputationPlan {
    let mut b = PlanBuilder::new(frac_bits);
    let x = b.input("client", "x", &[2, 3]).unwrap();
    let w = b.input("owner", "w", &[3, 2]).unwrap();
    let v = b.input("owner", "v", &[2, 2]).unwrap();
    let (xm, wm) = (b.masked(x).unwrap(), b.masked(w).unwrap());
    let y = b.matmul(xm, wm).unwrap();
    let y = b.truncate(y).unwrap();
    let ym = b.masked(y).unwrap();
    let vm = b.masked(v).unwrap();
    let z = b.mul(ym, vm).unwrap();
    let z = b.truncate(z).unwrap();
    b.reveal(z, "client", "z").unwrap();
    b.build()
}

fn product_inputs() -> HashMap<String, InputSet> {
    HashMap::from([
        ("client".to_string(), InputSet::from([("x".to_string(), real(&[2, 3], &[0.5, -1.0, 0.25, 1.5, 0.0, -0.75]))])),
        (
            "owner".to_string(),
            InputSet::from([
                ("w".to_string(), real(&[3, 2], &[1.0, -0.5, 0.25, 2.0, -1.0, 0.5])),
                ("v".to_string(), real(&[2, 2], &[0.5, 1.0, -2.0, 0.125])),
            ]),
        ),
    ])
}

fn expected_product() -> Vec<f64> {
    let inputs = product_inputs();
    let (x, w, v) = (&inputs["client"]["x"], &inputs["owner"]["w"], &inputs["owner"]["v"]);
    (0..4)
        .map(|idx| {
            let (i, j) = (idx / 2, idx % 2);
            let y: f64 = (0..3).map(|k| x.data[i * 3 + k] * w.data[k * 2 + j]).sum();
            y * v.data[idx]
        })
        .collect()
}

#[test]
fn seeded_sessions_are_deterministic() {
    for backend in [Backend::Int64, Backend::Crt] {
        let params = ProtocolParams::new(backend, TruncMode::Interactive);
        let plan = product_plan(params.fixed.frac_bits);
        let ctx = SessionContext {
            session: 11,
            params,
            seed: Some(99),
        };
        let a = run_session_with_timeout(&plan, &ctx, &product_inputs(), TransportKind::InMemory, TIMEOUT).unwrap();
        let b = run_session_with_timeout(&plan, &ctx, &product_inputs(), TransportKind::InMemory, TIMEOUT).unwrap();
        assert_eq!(a.outputs, b.outputs);
        assert_eq!(a.stats, b.stats);
        let unseeded = SessionContext { seed: None, ..ctx };
        let c = run_session_with_timeout(&plan, &unseeded, &product_inputs(), TransportKind::InMemory, TIMEOUT).unwrap();
        assert_eq!(c.stats, a.stats);
        let got = &c.output("client", "z").unwrap().data;
        for (g, w) in got.iter().zip(expected_product()) {
            assert!((g - w).abs() < 1e-3, "{backend}: {g} vs {w}");
        }
    }
}

/// Online messages reaching a server come only from the other server
/// (one per mask and truncation) or from input providers.
#[test]
fn servers_see_only_masked_differences_online() {
    let params = ProtocolParams::new(Backend::Int64, TruncMode::Interactive);
    let plan = product_plan(params.fixed.frac_bits);
    let ctx = SessionContext {
        session: 12,
        params,
        seed: Some(1),
    };
    let out = run_session_with_timeout(&plan, &ctx, &product_inputs(), TransportKind::InMemory, TIMEOUT).unwrap();
    let rounds = (plan.count("mask") + plan.count("truncate")) as u64;
    for (me, peer) in [(PartyId::Server0, PartyId::Server1), (PartyId::Server1, PartyId::Server0)] {
        assert_eq!(out.stats.link(&peer, &me, Phase::Online).messages, rounds);
        assert_eq!(out.stats.link(&PartyId::Server2, &me, Phase::Online).messages, 0);
        let from_providers: u64 = ["client", "owner"]
            .iter()
            .map(|p| out.stats.link(&PartyId::InputProvider(p.to_string()), &me, Phase::Online).messages)
            .sum();
        assert_eq!(out.stats.received_by(&me, Phase::Online).messages, rounds + from_providers);
    }
    assert_eq!(out.stats.received_by(&PartyId::Server2, Phase::Online).messages, 0);
    assert_eq!(out.stats.sent_by(&PartyId::Server2, Phase::Online).messages, 0);
}

/// S2 runs alone, distributes and drops its endpoint before anyone else
/// starts; the online phase must still complete.
#[test]
fn online_phase_survives_without_s2() {
    let params = ProtocolParams::new(Backend::Crt, TruncMode::Interactive);
    let plan = product_plan(params.fixed.frac_bits);
    let ctx = SessionContext {
        session: 13,
        params,
        seed: Some(5),
    };
    let inputs = product_inputs();
    let parties = participants(&plan);
    let mut endpoints = in_memory(&parties, TIMEOUT);
    let s2 = endpoints.iter().position(|e| e.party() == &PartyId::Server2).unwrap();
    let mut s2_endpoint = endpoints.remove(s2);
    execute_plan(&plan, &ctx, &PartyId::Server2, &InputSet::new(), &mut s2_endpoint).unwrap();
    drop(s2_endpoint);

    let empty = InputSet::new();
    let outcomes: Vec<_> = thread::scope(|scope| {
        let handles: Vec<_> = endpoints
            .into_iter()
            .map(|mut ep| {
                let (plan, ctx, inputs, empty) = (&plan, &ctx, &inputs, &empty);
                scope.spawn(move || {
                    let role = ep.party().clone();
                    let own = match &role {
                        PartyId::InputProvider(name) => &inputs[name],
                        _ => empty,
                    };
                    (role.clone(), execute_plan(plan, ctx, &role, own, &mut ep))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    for (role, outcome) in outcomes {
        let outcome = outcome.unwrap_or_else(|e| panic!("{role}: {e}"));
        if role == PartyId::OutputReceiver("client".into()) {
            for (g, w) in outcome.outputs["z"].data.iter().zip(expected_product()) {
                assert!((g - w).abs() < 1e-6, "{g} vs {w}");
            }
        }
    }
}

#[test]
fn bench_reports_repeat_with_fixed_seed() {
    let (images, labels) = synthetic_digits(8, 21);
    let model = maskmpc::nn::build_network(Network::LogReg);
    let weights = random_weights(&model, 3, &images).unwrap();
    let data = BenchData {
        images,
        labels: Some(labels),
        weights: [(Network::LogReg, weights)].into(),
    };
    let config = BenchConfig {
        networks: vec![Network::LogReg],
        batch_sizes: vec![2],
        runs: 3,
        seed: Some(4),
        ..BenchConfig::default()
    };
    let a = run_bench(&config, &data).unwrap();
    let b = run_bench(&config, &data).unwrap();
    assert_eq!(a.rows.len(), 2);
    for (x, y) in a.rows.iter().zip(&b.rows) {
        assert_eq!(x.accuracy, y.accuracy);
        assert_eq!(x.mean_kl, y.mean_kl);
        assert_eq!(x.samples, y.samples);
    }
}
