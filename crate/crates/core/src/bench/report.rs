//! Benchmark results as a text table or CSV.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::nn::Network;
use crate::ring::Backend;
use crate::sharing::TruncMode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchRow {
    pub network: Network,
    pub backend: Backend,
    pub trunc: TruncMode,
    pub batch: usize,
    pub runs: usize,
    /// Wall clock of a whole run (offline and online), milliseconds.
    pub batch_ms_mean: f64,
    pub batch_ms_std: f64,
    /// The same divided by the batch size.
    pub inference_ms_mean: f64,
    pub inference_ms_std: f64,
    /// Slowest computing server's online phase per run.
    pub online_ms_mean: f64,
    /// Percent of secure predictions matching the labels, when labels exist.
    pub accuracy: Option<f64>,
    /// Mean over samples of KL(float softmax || secure softmax).
    pub mean_kl: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BatchRow>,
}

const HEADER: &str = "\
# runtime: wall clock per run covering offline and online phases; per-inference
#   figures divide each run by its batch size, deviation is the sample stddev
#   of those per-inference times over runs
# kl: KL(P_float || P_secure) of softmax outputs, smoothing 1e-9 on both sides,
#   averaged over every evaluated sample
";

fn accuracy_text(a: Option<f64>) -> String {
    a.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into())
}

impl BenchReport {
    fn find(&self, network: Network, backend: Backend, batch: usize) -> Option<&BatchRow> {
        self.rows
            .iter()
            .find(|r| r.network == network && r.backend == backend && r.batch == batch)
    }

    fn networks(&self) -> Vec<Network> {
        let mut out: Vec<Network> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.network) {
                out.push(r.network);
            }
        }
        out
    }

    /// One line per network with a column pair per backend, at the smallest batch.
    pub fn to_text(&self) -> String {
        let mut out = String::from(HEADER);
        let backends = [Backend::Int64, Backend::Crt];
        let _ = writeln!(out);
        let _ = write!(out, "{:<8}", "network");
        for b in backends {
            let _ = write!(out, " {:>14} {:>10}", format!("{b} avg ms"), "dev ms");
        }
        let _ = writeln!(out, " {:>9} {:>12}", "acc %", "mean KL");
        for network in self.networks() {
            let batch = self
                .rows
                .iter()
                .filter(|r| r.network == network)
                .map(|r| r.batch)
                .min()
                .unwrap_or(1);
            let _ = write!(out, "{:<8}", network.name());
            let mut acc = None;
            let mut kl = None;
            for b in backends {
                match self.find(network, b, batch) {
                    Some(r) => {
                        let _ = write!(out, " {:>14.2} {:>10.2}", r.inference_ms_mean, r.inference_ms_std);
                        acc = acc.or(r.accuracy);
                        kl = kl.or(Some(r.mean_kl));
                    }
                    None => {
                        let _ = write!(out, " {:>14} {:>10}", "-", "-");
                    }
                }
            }
            let kl = kl.map(|k| format!("{k:.3e}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(out, " {:>9} {:>12}", accuracy_text(acc), kl);
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<8} {:<7} {:>6} {:>5} {:>12} {:>10} {:>12} {:>10} {:>10} {:>9} {:>12}",
            "network", "backend", "batch", "runs", "batch ms", "dev ms", "per-inf ms", "dev ms", "online ms", "acc %", "mean KL"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<8} {:<7} {:>6} {:>5} {:>12.2} {:>10.2} {:>12.3} {:>10.3} {:>10.2} {:>9} {:>12.3e}",
                r.network.name(),
                r.backend.to_string(),
                r.batch,
                r.runs,
                r.batch_ms_mean,
                r.batch_ms_std,
                r.inference_ms_mean,
                r.inference_ms_std,
                r.online_ms_mean,
                accuracy_text(r.accuracy),
                r.mean_kl
            );
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "network,backend,trunc,batch,runs,batch_ms_mean,batch_ms_std,inference_ms_mean,inference_ms_std,online_ms_mean,accuracy_pct,mean_kl,samples\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{},{:e},{}",
                r.network.name(),
                r.backend,
                r.trunc.name(),
                r.batch,
                r.runs,
                r.batch_ms_mean,
                r.batch_ms_std,
                r.inference_ms_mean,
                r.inference_ms_std,
                r.online_ms_mean,
                r.accuracy.map(|a| format!("{a:.4}")).unwrap_or_default(),
                r.mean_kl,
                r.samples
            );
        }
        out
    }
}
