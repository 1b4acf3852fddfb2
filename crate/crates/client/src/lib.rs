//! Blocking client for the inference service.

use std::time::Duration;

use maskmpc::api::{
    BenchRequest, BenchResponse, ErrorBody, FitReluRequest, Health, NetworkInfo, PredictRequest, PredictResponse,
    TrainRequest, TrainResponse,
};
use maskmpc::nn::{Network, ReluFit};
use maskmpc::runtime::ChannelStats;
use reqwest::blocking::{Client as Http, RequestBuilder};
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("server returned {status}: {message}")]
    Server { status: u16, message: String },
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Clone, Debug)]
pub struct Client {
    base: String,
    http: Http,
}

impl Client {
    /// `base` is the server root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: &str) -> Result<Self> {
        // sessions with large batches can run for minutes
        let http = Http::builder().timeout(Duration::from_secs(3600)).build()?;
        Ok(Client {
            base: base.trim_end_matches('/').to_string(),
            http,
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn send<T: DeserializeOwned>(&self, req: RequestBuilder) -> Result<T> {
        let resp = req.send()?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json()?);
        }
        let text = resp.text().unwrap_or_default();
        let message = serde_json::from_str::<ErrorBody>(&text).map(|b| b.error).unwrap_or(text);
        Err(ClientError::Server {
            status: status.as_u16(),
            message,
        })
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        self.send(self.http.post(self.url(path)).json(body))
    }

    pub fn health(&self) -> Result<Health> {
        self.send(self.http.get(self.url("/health")))
    }

    pub fn network(&self, network: Network) -> Result<NetworkInfo> {
        self.send(self.http.get(self.url(&format!("/v1/networks/{}", network.name()))))
    }

    pub fn predict(&self, req: &PredictRequest) -> Result<PredictResponse> {
        self.post("/v1/predict", req)
    }

    pub fn bench(&self, req: &BenchRequest) -> Result<BenchResponse> {
        self.post("/v1/bench", req)
    }

    pub fn fit_relu(&self, req: &FitReluRequest) -> Result<ReluFit> {
        self.post("/v1/fit-relu", req)
    }

    pub fn train(&self, req: &TrainRequest) -> Result<TrainResponse> {
        self.post("/v1/train", req)
    }

    pub fn session_stats(&self, session: u64) -> Result<ChannelStats> {
        self.send(self.http.get(self.url(&format!("/v1/sessions/{session}/stats"))))
    }

    pub fn session_stats_csv(&self, session: u64) -> Result<String> {
        let resp = self
            .http
            .get(self.url(&format!("/v1/sessions/{session}/stats?format=csv")))
            .send()?;
        let status = resp.status();
        let text = resp.text()?;
        if status.is_success() {
            Ok(text)
        } else {
            Err(ClientError::Server {
                status: status.as_u16(),
                message: text,
            })
        }
    }
}
