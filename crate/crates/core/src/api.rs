//! Request and response bodies of the HTTP service.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bench::{BenchConfig, BenchReport};
use crate::nn::Network;
use crate::ring::Backend;
use crate::runtime::{ChannelStats, TransportKind};
use crate::sharing::TruncMode;
use crate::tensor::RealTensor;

fn default_backend() -> Backend {
    Backend::Int64
}

fn default_trunc() -> TruncMode {
    TruncMode::Interactive
}

fn default_transport() -> TransportKind {
    TransportKind::InMemory
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub network: Network,
    #[serde(default = "default_backend")]
    pub backend: Backend,
    #[serde(default = "default_trunc")]
    pub trunc: TruncMode,
    /// `[batch, 28, 28, 1]` in `[0, 1]`; synthetic digits are used when absent.
    #[serde(default)]
    pub images: Option<RealTensor>,
    /// How many synthetic images to use when `images` is absent.
    #[serde(default = "one")]
    pub synthetic: usize,
    /// Seeds weights, images and protocol randomness.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub session: Option<u64>,
    /// A weights container on the service's filesystem.
    #[serde(default)]
    pub weights_path: Option<String>,
    #[serde(default = "default_transport")]
    pub transport: TransportKind,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    crate::runtime::transport::DEFAULT_TIMEOUT.as_secs()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub session: u64,
    pub logits: RealTensor,
    pub probabilities: RealTensor,
    pub labels: Vec<usize>,
    /// The same images evaluated in plaintext floating point.
    pub float_logits: RealTensor,
    pub total_ms: f64,
    pub offline_ms: f64,
    pub online_ms: f64,
    pub stats: ChannelStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRequest {
    pub config: BenchConfig,
    /// Synthetic samples generated when no images are given.
    #[serde(default = "one")]
    pub samples: usize,
    #[serde(default)]
    pub images_path: Option<String>,
    #[serde(default)]
    pub labels_path: Option<String>,
    #[serde(default)]
    pub weights_paths: BTreeMap<Network, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchResponse {
    pub report: BenchReport,
    pub text: String,
    pub csv: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReluRequest {
    pub degree: usize,
    #[serde(default = "default_interval")]
    pub interval: (f64, f64),
}

fn default_interval() -> (f64, f64) {
    crate::nn::relu::DEFAULT_INTERVAL
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRequest {
    #[serde(default)]
    pub images_path: Option<String>,
    #[serde(default)]
    pub labels_path: Option<String>,
    /// Synthetic samples when no files are given.
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Share of the samples held out for the test accuracy.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Where to write the weights container.
    #[serde(default)]
    pub output_path: Option<String>,
}

fn default_samples() -> usize {
    6000
}

fn default_epochs() -> usize {
    5
}

fn default_lr() -> f64 {
    0.1
}

fn default_batch() -> usize {
    32
}

fn default_test_fraction() -> f64 {
    1.0 / 6.0
}

impl Default for TrainRequest {
    fn default() -> Self {
        TrainRequest {
            images_path: None,
            labels_path: None,
            samples: default_samples(),
            epochs: default_epochs(),
            learning_rate: default_lr(),
            batch_size: default_batch(),
            seed: 0,
            test_fraction: default_test_fraction(),
            output_path: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainResponse {
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub weights_path: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkInfo {
    pub network: Network,
    pub manifest: String,
    pub parameter_count: usize,
    /// Per-sample shapes: input, then after each layer.
    pub shapes: Vec<Vec<usize>>,
}
