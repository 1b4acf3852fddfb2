//! Runtime, accuracy and divergence measurements over repeated secure runs.

pub mod kl;
pub mod report;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use kl::{kl_divergence, mean_kl, KL_SMOOTHING};
pub use report::{BatchRow, BenchReport};

use crate::data::train::accuracy;
use crate::error::{shape_err, Error, Result};
use crate::nn::lower::{lower_model, public_weights, ModelWeights, Roles, LOGITS, PROBABILITIES};
use crate::nn::{build_network, plaintext_eval, EvalMode, Network};
use crate::params::ProtocolParams;
use crate::ring::Backend;
use crate::runtime::plan::softmax;
use crate::runtime::session::run_session_with_timeout;
use crate::runtime::transport::DEFAULT_TIMEOUT;
use crate::runtime::{ChannelStats, SessionContext, TransportKind};
use crate::sharing::TruncMode;
use crate::tensor::RealTensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub networks: Vec<Network>,
    pub backends: Vec<Backend>,
    pub trunc: TruncMode,
    pub batch_sizes: Vec<usize>,
    pub runs: usize,
    pub seed: Option<u64>,
    pub transport: TransportKind,
    /// Per-receive timeout; large batches on few cores need more than the default.
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    DEFAULT_TIMEOUT.as_secs()
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            networks: vec![Network::A, Network::B, Network::C],
            backends: vec![Backend::Int64, Backend::Crt],
            trunc: TruncMode::Interactive,
            batch_sizes: vec![1],
            runs: 10,
            seed: Some(0),
            transport: TransportKind::InMemory,
            timeout_secs: default_timeout_secs(),
        }
    }
}

/// Images, optional labels, and per-network weights.
#[derive(Clone, Debug)]
pub struct BenchData {
    pub images: RealTensor,
    pub labels: Option<Vec<u8>>,
    pub weights: BTreeMap<Network, ModelWeights>,
}

fn stddev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

/// Samples a run consumes: `batch` images starting at `run * batch`, wrapping.
fn run_slice(images: &RealTensor, labels: Option<&[u8]>, run: usize, batch: usize) -> Result<(RealTensor, Option<Vec<u8>>)> {
    let n = images.shape[0];
    if n < batch {
        return Err(shape_err(format!("{n} images cannot fill a batch of {batch}")));
    }
    let start = (run * batch) % (n - batch + 1);
    let labels = labels.map(|l| l[start..start + batch].to_vec());
    Ok((images.slice_batch(start, batch)?, labels))
}

/// One batch size on one backend, `runs` times.
pub fn bench_case(
    network: Network,
    backend: Backend,
    batch: usize,
    config: &BenchConfig,
    data: &BenchData,
) -> Result<(BatchRow, ChannelStats)> {
    let model = build_network(network);
    let weights = data
        .weights
        .get(&network)
        .ok_or_else(|| Error::MissingWeights(format!("no weights for network {network}")))?;
    let params = ProtocolParams::new(backend, config.trunc);
    params.validate()?;
    let roles = Roles::default();
    let lowered = lower_model(&model, batch, &public_weights(&model, weights)?, &roles, params.fixed.frac_bits)?;
    let mut totals = Vec::with_capacity(config.runs);
    let mut online = Vec::with_capacity(config.runs);
    let mut secure_rows = Vec::new();
    let mut float_rows = Vec::new();
    let mut all_labels = Vec::new();
    let mut stats = ChannelStats::default();
    for run in 0..config.runs.max(1) {
        let (images, labels) = run_slice(&data.images, data.labels.as_deref(), run, batch)?;
        let ctx = SessionContext {
            session: ((batch as u64) << 32) | run as u64,
            params,
            seed: config.seed,
        };
        let inputs = lowered.all_inputs(&images, weights)?;
        let start = Instant::now();
        let timeout = Duration::from_secs(config.timeout_secs);
        let outcome = run_session_with_timeout(&lowered.plan, &ctx, &inputs, config.transport, timeout)?;
        totals.push(start.elapsed().as_secs_f64() * 1e3);
        online.push(outcome.online_time.as_secs_f64() * 1e3);
        if run == 0 {
            stats = outcome.stats.clone();
        }
        let secure = outcome.output(&roles.output_receiver, LOGITS)?;
        let probs = outcome.output(&roles.output_receiver, PROBABILITIES)?;
        let float = plaintext_eval(&model, weights, &images, EvalMode::Float)?;
        secure_rows.extend_from_slice(&secure.data);
        for (row, p) in float.rows().zip(probs.rows()) {
            float_rows.push((softmax(row), p.to_vec()));
        }
        if let Some(l) = labels {
            all_labels.extend(l);
        }
    }
    let classes = float_rows.first().map(|r| r.0.len()).unwrap_or(0);
    let samples = float_rows.len();
    let secure = RealTensor::new(vec![samples, classes], secure_rows)?;
    let kl = float_rows.iter().map(|(p, q)| kl_divergence(p, q)).sum::<f64>() / samples.max(1) as f64;
    let per_inference: Vec<f64> = totals.iter().map(|t| t / batch as f64).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let row = BatchRow {
        network,
        backend,
        trunc: config.trunc,
        batch,
        runs: totals.len(),
        batch_ms_mean: mean(&totals),
        batch_ms_std: stddev(&totals),
        inference_ms_mean: mean(&per_inference),
        inference_ms_std: stddev(&per_inference),
        online_ms_mean: mean(&online),
        accuracy: (!all_labels.is_empty()).then(|| 100.0 * accuracy(&secure, &all_labels)),
        mean_kl: kl,
        samples,
    };
    Ok((row, stats))
}

/// Every requested network, backend and batch size.
pub fn run_bench(config: &BenchConfig, data: &BenchData) -> Result<BenchReport> {
    let mut rows = Vec::new();
    for &network in &config.networks {
        for &backend in &config.backends {
            for &batch in &config.batch_sizes {
                rows.push(bench_case(network, backend, batch, config, data)?.0);
            }
        }
    }
    Ok(BenchReport { rows })
}
