use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use maskmpc::api::{BenchRequest, FitReluRequest, PredictRequest, TrainRequest};
use maskmpc::app;
use maskmpc::bench::BenchConfig;
use maskmpc::config::SessionConfig;
use maskmpc::data::{load_images, write_fixture, WeightsContainer};
use maskmpc::nn::lower::{public_weights, LABELS, LOGITS, PROBABILITIES};
use maskmpc::nn::{build_network, Network};
use maskmpc::runtime::{ChannelStats, PartyId, TransportKind};
use maskmpc::{Backend, ProtocolParams, TruncMode};
use maskmpc_client::Client;

/// Exit code for configuration and usage errors.
const CONFIG_ERROR: u8 = 2;

#[derive(Parser)]
#[command(name = "maskmpc", version, about = "Three-server secure inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one party of a networked session described by a config file.
    Party(PartyArgs),
    /// Start the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
    },
    /// Secure prediction on a batch of images.
    Predict(PredictArgs),
    /// Runtime, accuracy and KL report over repeated secure runs.
    Bench(BenchArgs),
    /// Train the logistic regression model in plaintext.
    Train(TrainArgs),
    /// Least-squares polynomial fit of ReLU.
    FitRelu {
        #[arg(long, default_value_t = 4)]
        degree: usize,
        #[arg(long, num_args = 2, value_names = ["LOW", "HIGH"], allow_negative_numbers = true)]
        interval: Option<Vec<f64>>,
        #[arg(long)]
        server: Option<String>,
    },
    /// Traffic counters of a session the service ran.
    Stats {
        #[arg(long)]
        server: String,
        #[arg(long)]
        session: u64,
        #[arg(long)]
        csv: bool,
    },
    /// Write synthetic digit images and labels as IDX files.
    Fixture {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write random in-range weights for a network.
    Weights {
        #[arg(long)]
        network: Network,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the public part (folded batch norm) for the other parties.
        #[arg(long)]
        public_out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct PartyArgs {
    /// s0, s1, s2, provider:NAME or receiver:NAME.
    #[arg(long)]
    role: Option<PartyId>,
    #[arg(long)]
    config: PathBuf,
    /// `inmemory` runs every role of the config inside this process.
    #[arg(long, default_value = "tcp")]
    transport: TransportKind,
    #[arg(long)]
    backend: Option<Backend>,
    #[arg(long)]
    trunc: Option<TruncMode>,
    #[arg(long)]
    network: Option<Network>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write this party's traffic counters as CSV.
    #[arg(long)]
    stats_out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long, default_value = "logreg")]
    network: Network,
    #[arg(long, default_value = "int64")]
    backend: Backend,
    #[arg(long, default_value = "interactive")]
    trunc: TruncMode,
    #[arg(long, default_value_t = 1)]
    batch: usize,
    /// IDX images; synthetic digits otherwise.
    #[arg(long)]
    images: Option<PathBuf>,
    /// Weights container; random in-range weights otherwise.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "inmemory")]
    transport: TransportKind,
    #[arg(long)]
    stats_out: Option<PathBuf>,
    /// Service URL; runs in this process when absent.
    #[arg(long)]
    server: Option<String>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "A,B,C")]
    network: Vec<Network>,
    #[arg(long, value_delimiter = ',', default_value = "int64,int100")]
    backend: Vec<Backend>,
    #[arg(long, default_value = "interactive")]
    trunc: TruncMode,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    batch: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    runs: usize,
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    /// `NETWORK=PATH` weights containers; random weights otherwise.
    #[arg(long, value_parser = parse_weights_arg)]
    weights: Vec<(Network, String)>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "inmemory")]
    transport: TransportKind,
    /// Synthetic samples when no images are given.
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 30)]
    timeout_secs: u64,
    /// Also write the report as CSV.
    #[arg(long)]
    csv_out: Option<PathBuf>,
    #[arg(long)]
    server: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value_t = 6000)]
    samples: usize,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    server: Option<String>,
}

fn parse_weights_arg(s: &str) -> Result<(Network, String), String> {
    let (net, path) = s.split_once('=').ok_or("expected NETWORK=PATH")?;
    Ok((net.parse().map_err(|e: maskmpc::Error| e.to_string())?, path.to_string()))
}

fn absolute(path: &Path) -> anyhow::Result<String> {
    Ok(fs::canonicalize(path)
        .with_context(|| format!("cannot open {}", path.display()))?
        .display()
        .to_string())
}

fn write_stats(path: &Path, stats: &ChannelStats) -> anyhow::Result<()> {
    fs::write(path, stats.to_csv()).with_context(|| format!("cannot write {}", path.display()))
}

fn print_json(value: &impl serde::Serialize) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn load_party_config(args: &PartyArgs) -> maskmpc::Result<SessionConfig> {
    let mut cfg = SessionConfig::load(&args.config)?;
    if args.backend.is_some() || args.trunc.is_some() {
        let backend = args.backend.unwrap_or(cfg.params.backend);
        let trunc = args.trunc.unwrap_or(cfg.params.trunc_mode);
        cfg.params = ProtocolParams::new(backend, trunc);
        cfg.params.validate()?;
    }
    if let Some(n) = args.network {
        cfg.network = n;
    }
    if let Some(b) = args.batch {
        cfg.batch = b;
    }
    if let Some(r) = args.runs {
        cfg.runs = r;
    }
    if let Some(w) = &args.weights {
        cfg.weights = Some(w.clone());
    }
    if let Some(i) = &args.images {
        cfg.images = Some(i.clone());
    }
    if args.seed.is_some() {
        cfg.seed = args.seed;
    }
    if cfg.batch == 0 || cfg.runs == 0 {
        return Err(maskmpc::Error::Config("batch and runs must be positive".into()));
    }
    Ok(cfg)
}

fn print_outputs(run: usize, outputs: &std::collections::BTreeMap<String, maskmpc::RealTensor>) {
    if let Some(labels) = outputs.get(LABELS) {
        let labels: Vec<String> = labels.data.iter().map(|v| format!("{v}")).collect();
        println!("run {run} labels {}", labels.join(" "));
    }
    for key in [PROBABILITIES, LOGITS] {
        if let Some(t) = outputs.get(key) {
            for (i, row) in t.rows().enumerate() {
                let row: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
                println!("run {run} {key} {i} {}", row.join(" "));
            }
        }
    }
}

fn party(args: PartyArgs) -> anyhow::Result<ExitCode> {
    let cfg = match load_party_config(&args) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(CONFIG_ERROR));
        }
    };
    match args.transport {
        TransportKind::InMemory => {
            let outcomes = app::run_config_in_memory(&cfg)?;
            let mut stats = ChannelStats::default();
            for (run, outcome) in outcomes.iter().enumerate() {
                if let Some(out) = outcome.outputs.get(&cfg.roles.output_receiver) {
                    print_outputs(run, out);
                }
                stats.merge(&outcome.stats);
            }
            eprint!("{}", stats.to_table());
            if let Some(path) = &args.stats_out {
                write_stats(path, &stats)?;
            }
        }
        TransportKind::Tcp => {
            let Some(role) = args.role else {
                eprintln!("error: --role is required for tcp sessions");
                return Ok(ExitCode::from(CONFIG_ERROR));
            };
            if !cfg.parties().contains(&role) {
                eprintln!("error: {role} does not take part in this session");
                return Ok(ExitCode::from(CONFIG_ERROR));
            }
            let report = match app::run_party(&cfg, &role) {
                Err(maskmpc::Error::Config(msg)) => {
                    eprintln!("error: {msg}");
                    return Ok(ExitCode::from(CONFIG_ERROR));
                }
                other => other?,
            };
            for (run, outputs) in report.outputs.iter().enumerate() {
                print_outputs(run, outputs);
            }
            let mut stats = report.sent.clone();
            stats.merge(&report.received);
            eprintln!(
                "{role}: offline {:.1} ms, online {:.1} ms",
                report.offline.as_secs_f64() * 1e3,
                report.online.as_secs_f64() * 1e3
            );
            if let Some(path) = &args.stats_out {
                write_stats(path, &report.sent)?;
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn predict(args: PredictArgs) -> anyhow::Result<()> {
    let images = match &args.images {
        Some(path) => Some(load_images(path)?.slice_batch(0, args.batch)?),
        None => None,
    };
    let req = PredictRequest {
        network: args.network,
        backend: args.backend,
        trunc: args.trunc,
        images,
        synthetic: args.batch,
        seed: args.seed,
        session: None,
        weights_path: args.weights.as_deref().map(absolute).transpose()?,
        transport: args.transport,
        timeout_secs: 600,
    };
    let resp = match &args.server {
        Some(url) => Client::new(url)?.predict(&req)?,
        None => app::predict(&req)?.0,
    };
    println!("session {}", resp.session);
    let labels: Vec<String> = resp.labels.iter().map(|l| l.to_string()).collect();
    println!("labels {}", labels.join(" "));
    for (i, row) in resp.probabilities.rows().enumerate() {
        let row: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        println!("probs {i} {}", row.join(" "));
    }
    println!(
        "total {:.1} ms, offline {:.1} ms, online {:.1} ms",
        resp.total_ms, resp.offline_ms, resp.online_ms
    );
    eprint!("{}", resp.stats.to_table());
    if let Some(path) = &args.stats_out {
        write_stats(path, &resp.stats)?;
    }
    Ok(())
}

fn bench(args: BenchArgs) -> anyhow::Result<()> {
    if args.labels.is_some() && args.images.is_none() {
        bail!("--labels needs --images");
    }
    let req = BenchRequest {
        config: BenchConfig {
            networks: args.network,
            backends: args.backend,
            trunc: args.trunc,
            batch_sizes: args.batch,
            runs: args.runs,
            seed: Some(args.seed),
            transport: args.transport,
            timeout_secs: args.timeout_secs,
        },
        samples: args.samples,
        images_path: args.images.as_deref().map(absolute).transpose()?,
        labels_path: args.labels.as_deref().map(absolute).transpose()?,
        weights_paths: args
            .weights
            .iter()
            .map(|(n, p)| Ok((*n, absolute(Path::new(p))?)))
            .collect::<anyhow::Result<_>>()?,
    };
    let resp = match &args.server {
        Some(url) => Client::new(url)?.bench(&req)?,
        None => app::bench(&req)?,
    };
    print!("{}", resp.text);
    if let Some(path) = &args.csv_out {
        fs::write(path, &resp.csv).with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(())
}

fn train(args: TrainArgs) -> anyhow::Result<()> {
    let req = TrainRequest {
        images_path: args.images.as_deref().map(absolute).transpose()?,
        labels_path: args.labels.as_deref().map(absolute).transpose()?,
        samples: args.samples,
        epochs: args.epochs,
        learning_rate: args.lr,
        batch_size: args.batch_size,
        seed: args.seed,
        output_path: args.out.as_ref().map(|p| {
            std::path::absolute(p).map(|p| p.display().to_string()).unwrap_or_else(|_| p.display().to_string())
        }),
        ..TrainRequest::default()
    };
    let resp = match &args.server {
        Some(url) => Client::new(url)?.train(&req)?,
        None => app::train(&req)?,
    };
    print_json(&resp)
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Party(args) => return party(args),
        Command::Serve { listen } => maskmpc_service::run(listen)?,
        Command::Predict(args) => predict(args)?,
        Command::Bench(args) => bench(args)?,
        Command::Train(args) => train(args)?,
        Command::FitRelu {
            degree,
            interval,
            server,
        } => {
            let interval = interval.map(|v| (v[0], v[1])).unwrap_or(maskmpc::nn::relu::DEFAULT_INTERVAL);
            let req = FitReluRequest { degree, interval };
            let fit = match server {
                Some(url) => Client::new(&url)?.fit_relu(&req)?,
                None => maskmpc::nn::poly_relu_fit(degree, interval)?,
            };
            print_json(&fit)?;
        }
        Command::Stats { server, session, csv } => {
            let client = Client::new(&server)?;
            if csv {
                print!("{}", client.session_stats_csv(session)?);
            } else {
                print!("{}", client.session_stats(session)?.to_table());
            }
        }
        Command::Fixture { dir, count, seed } => {
            fs::create_dir_all(&dir)?;
            let (images, labels) = write_fixture(&dir, count, seed)?;
            println!("{}\n{}", images.display(), labels.display());
        }
        Command::Weights {
            network,
            seed,
            out,
            public_out,
        } => {
            let model = build_network(network);
            let weights = app::model_weights(&model, None, seed)?;
            WeightsContainer::new(weights.clone()).save(&out)?;
            if let Some(path) = public_out {
                WeightsContainer::new(public_weights(&model, &weights)?).save(&path)?;
            }
            println!("{}", out.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
