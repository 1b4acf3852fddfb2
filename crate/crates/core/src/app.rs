//! Whole workflows shared by the HTTP service and the command line.

use std::collections::{BTreeMap, HashMap};
use std::net::TcpListener;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::api::{
    BenchRequest, BenchResponse, NetworkInfo, PredictRequest, PredictResponse, TrainRequest, TrainResponse,
};
use crate::bench::{run_bench, BenchData};
use crate::config::SessionConfig;
use crate::data::{
    accuracy, load_images, load_labels, synthetic_digits, train_logreg_plaintext, TrainConfig, WeightsContainer,
};
use crate::error::{Error, Result};
use crate::nn::lower::{lower_model, public_weights, ModelWeights, Roles, LABELS, LOGITS, PROBABILITIES};
use crate::nn::{build_network, plaintext_eval, random_weights, EvalMode, ModelSpec, Network, WeightRole};
use crate::params::ProtocolParams;
use crate::runtime::transport;
use crate::runtime::session::run_session_with_timeout;
use crate::runtime::{execute_plan, ChannelStats, InputSet, PartyId, SessionContext, SessionOutcome};
use crate::tensor::RealTensor;

/// Calibration inputs for random weights; fixed so every party that derives
/// weights from the same seed gets the same ones.
fn calibration_batch(seed: u64) -> RealTensor {
    synthetic_digits(64, seed ^ 0x5eed).0
}

/// Loads a weights container, or draws random in-range weights from `seed`.
pub fn model_weights(model: &ModelSpec, path: Option<&Path>, seed: u64) -> Result<ModelWeights> {
    match path {
        Some(p) => Ok(WeightsContainer::load(p)?.tensors),
        None => random_weights(model, seed, &calibration_batch(seed)),
    }
}

/// Images from an IDX file, or synthetic ones.
pub fn images_or_synthetic(path: Option<&Path>, count: usize, seed: u64) -> Result<RealTensor> {
    match path {
        Some(p) => load_images(p),
        None => Ok(synthetic_digits(count, seed).0),
    }
}

pub fn network_info(network: Network) -> Result<NetworkInfo> {
    let model = build_network(network);
    Ok(NetworkInfo {
        network,
        manifest: model.to_manifest(),
        parameter_count: model.parameter_count()?,
        shapes: model.shapes()?,
    })
}

/// A prediction with every party in this process.
pub fn predict(req: &PredictRequest) -> Result<(PredictResponse, SessionOutcome)> {
    let model = build_network(req.network);
    let seed = req.seed.unwrap_or(0);
    let weights = model_weights(&model, req.weights_path.as_deref().map(Path::new), seed)?;
    let images = match &req.images {
        Some(t) => t.clone(),
        None => synthetic_digits(req.synthetic.max(1), seed.wrapping_add(1)).0,
    };
    let params = req.params()?;
    let roles = Roles::default();
    let lowered = lower_model(&model, images.shape[0], &public_weights(&model, &weights)?, &roles, params.fixed.frac_bits)?;
    let session = req.session.unwrap_or_else(rand::random);
    let ctx = SessionContext {
        session,
        params,
        seed: req.seed,
    };
    let inputs = lowered.all_inputs(&images, &weights)?;
    let start = Instant::now();
    let timeout = Duration::from_secs(req.timeout_secs);
    let outcome = run_session_with_timeout(&lowered.plan, &ctx, &inputs, req.transport, timeout)?;
    let elapsed = start.elapsed();
    let float = plaintext_eval(&model, &weights, &images, EvalMode::Float)?;
    let out = |label: &str| outcome.output(&roles.output_receiver, label).cloned();
    let labels = out(LABELS)?.data.iter().map(|&v| v as usize).collect();
    let response = PredictResponse {
        session,
        logits: out(LOGITS)?,
        probabilities: out(PROBABILITIES)?,
        labels,
        float_logits: float,
        total_ms: elapsed.as_secs_f64() * 1e3,
        offline_ms: outcome.offline_time.as_secs_f64() * 1e3,
        online_ms: outcome.online_time.as_secs_f64() * 1e3,
        stats: outcome.stats.clone(),
    };
    Ok((response, outcome))
}

pub fn bench(req: &BenchRequest) -> Result<BenchResponse> {
    let seed = req.config.seed.unwrap_or(0);
    let (images, labels) = match (&req.images_path, &req.labels_path) {
        (Some(i), l) => (
            load_images(Path::new(i))?,
            l.as_ref().map(|l| load_labels(Path::new(l))).transpose()?,
        ),
        (None, _) => {
            let (x, y) = synthetic_digits(req.samples.max(1), seed.wrapping_add(1));
            (x, Some(y))
        }
    };
    let mut weights = BTreeMap::new();
    for &network in &req.config.networks {
        let path = req.weights_paths.get(&network).map(Path::new);
        weights.insert(network, model_weights(&build_network(network), path, seed)?);
    }
    let data = BenchData { images, labels, weights };
    let report = run_bench(&req.config, &data)?;
    Ok(BenchResponse {
        text: report.to_text(),
        csv: report.to_csv(),
        report,
    })
}

pub fn train(req: &TrainRequest) -> Result<TrainResponse> {
    let (images, labels) = match (&req.images_path, &req.labels_path) {
        (Some(i), Some(l)) => (load_images(Path::new(i))?, load_labels(Path::new(l))?),
        (None, None) => synthetic_digits(req.samples.max(2), req.seed),
        _ => return Err(Error::Config("training needs both images and labels, or neither".into())),
    };
    let n = labels.len();
    let test = ((n as f64 * req.test_fraction).round() as usize).min(n.saturating_sub(1));
    let train_n = n - test;
    let train_x = images.slice_batch(0, train_n)?;
    let cfg = TrainConfig {
        epochs: req.epochs,
        learning_rate: req.learning_rate,
        batch_size: req.batch_size,
        seed: req.seed,
    };
    let outcome = train_logreg_plaintext(&train_x, &labels[..train_n], &cfg)?;
    let model = build_network(Network::LogReg);
    let eval = |x: &RealTensor, y: &[u8]| -> Result<f64> {
        Ok(accuracy(&plaintext_eval(&model, &outcome.weights, x, EvalMode::Float)?, y))
    };
    let train_accuracy = eval(&train_x, &labels[..train_n])?;
    let test_accuracy = if test > 0 {
        Some(eval(&images.slice_batch(train_n, test)?, &labels[train_n..])?)
    } else {
        None
    };
    if let Some(path) = &req.output_path {
        WeightsContainer::new(outcome.weights.clone()).save(Path::new(path))?;
    }
    Ok(TrainResponse {
        epoch_losses: outcome.epoch_losses,
        train_accuracy,
        test_accuracy,
        weights_path: req.output_path.clone(),
    })
}

/// What one networked party saw.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PartyReport {
    /// Receiver outputs per run, by label.
    pub outputs: Vec<BTreeMap<String, RealTensor>>,
    pub sent: ChannelStats,
    pub received: ChannelStats,
    pub offline: Duration,
    pub online: Duration,
}

/// Joins a TCP session as `role` and runs `cfg.runs` executions.
pub fn run_party(cfg: &SessionConfig, role: &PartyId) -> Result<PartyReport> {
    let model = build_network(cfg.network);
    let seed = cfg.seed.unwrap_or(0);
    let public = match (&cfg.public_weights, &cfg.weights) {
        (Some(p), _) => public_weights(&model, &WeightsContainer::load(p)?.tensors)?,
        (None, Some(w)) if is_owner(cfg, role) => public_weights(&model, &WeightsContainer::load(w)?.tensors)?,
        (None, Some(_)) if has_public_weights(&model) => {
            return Err(Error::Config(format!(
                "{} has public parameters; give every party `public_weights`",
                model.name
            )))
        }
        _ => public_weights(&model, &model_weights(&model, None, seed)?)?,
    };
    let lowered = lower_model(&model, cfg.batch, &public, &cfg.roles, cfg.params.fixed.frac_bits)?;

    let mut inputs = InputSet::new();
    let mut images = None;
    if let PartyId::InputProvider(name) = role {
        if name == &cfg.roles.model_owner {
            let weights = model_weights(&model, cfg.weights.as_deref(), seed)?;
            inputs.extend(lowered.owner_inputs(&weights)?);
        }
        if name == &cfg.roles.input_provider {
            let needed = cfg.image_offset + cfg.batch * cfg.runs;
            images = Some(images_or_synthetic(cfg.images.as_deref(), needed, seed.wrapping_add(1))?);
        }
        if inputs.is_empty() && images.is_none() {
            return Err(Error::Config(format!("{role} provides nothing in this session")));
        }
    }

    let listener = match cfg.addresses.get(role) {
        Some(addr) => Some(TcpListener::bind(addr).map_err(|e| Error::ConnectFailed {
            addr: addr.to_string(),
            reason: format!("cannot listen: {e}"),
        })?),
        None => None,
    };
    let mut endpoint = transport::tcp(role.clone(), listener, cfg.addresses.clone(), cfg.timeout)?;
    let mut report = PartyReport::default();
    for run in 0..cfg.runs {
        let mut run_inputs = inputs.clone();
        if let Some(all) = &images {
            let start = cfg.image_offset + run * cfg.batch;
            run_inputs.extend(lowered.client_inputs(&all.slice_batch(start, cfg.batch)?));
        }
        let ctx = SessionContext {
            session: cfg.session.wrapping_add(run as u64),
            params: cfg.params,
            seed: cfg.seed,
        };
        let outcome = execute_plan(&lowered.plan, &ctx, role, &run_inputs, &mut endpoint)?;
        report.offline += outcome.offline_time;
        report.online += outcome.online_time;
        if matches!(role, PartyId::OutputReceiver(_)) {
            report.outputs.push(outcome.outputs);
        }
    }
    report.sent = endpoint.sent_stats().clone();
    report.received = endpoint.received_stats().clone();
    Ok(report)
}

fn has_public_weights(model: &ModelSpec) -> bool {
    model.weight_specs().map(|s| s.iter().any(|w| w.role == WeightRole::Public)).unwrap_or(false)
}

fn is_owner(cfg: &SessionConfig, role: &PartyId) -> bool {
    matches!(role, PartyId::InputProvider(n) if n == &cfg.roles.model_owner)
}

/// Every role of a config inside this process, over in-memory channels.
pub fn run_config_in_memory(cfg: &SessionConfig) -> Result<Vec<SessionOutcome>> {
    let model = build_network(cfg.network);
    let seed = cfg.seed.unwrap_or(0);
    let weights = model_weights(&model, cfg.weights.as_deref(), seed)?;
    let public = match &cfg.public_weights {
        Some(p) => public_weights(&model, &WeightsContainer::load(p)?.tensors)?,
        None => public_weights(&model, &weights)?,
    };
    let lowered = lower_model(&model, cfg.batch, &public, &cfg.roles, cfg.params.fixed.frac_bits)?;
    let images = images_or_synthetic(
        cfg.images.as_deref(),
        cfg.image_offset + cfg.batch * cfg.runs,
        seed.wrapping_add(1),
    )?;
    let mut outcomes = Vec::with_capacity(cfg.runs);
    for run in 0..cfg.runs {
        let batch = images.slice_batch(cfg.image_offset + run * cfg.batch, cfg.batch)?;
        let inputs: HashMap<String, InputSet> = lowered.all_inputs(&batch, &weights)?;
        let ctx = SessionContext {
            session: cfg.session.wrapping_add(run as u64),
            params: cfg.params,
            seed: cfg.seed,
        };
        outcomes.push(run_session_with_timeout(
            &lowered.plan,
            &ctx,
            &inputs,
            transport::TransportKind::InMemory,
            cfg.timeout,
        )?);
    }
    Ok(outcomes)
}

impl PredictRequest {
    pub fn params(&self) -> Result<ProtocolParams> {
        let params = ProtocolParams::new(self.backend, self.trunc);
        params.validate()?;
        Ok(params)
    }
}
