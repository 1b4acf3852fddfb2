//! Text key-value configuration for a networked session.
//!
//! One `key = value` per line; `#` starts a comment. Every party of a
//! session reads the same file.
//!
//! ```text
//! session = 7
//! seed = 42                  # omit for OS randomness
//! backend = int64            # or int100
//! trunc = interactive        # or local (int64 only)
//! network = logreg           # A, B, C or logreg
//! batch = 1
//! runs = 1
//! s0 = 127.0.0.1:7100
//! s1 = 127.0.0.1:7101
//! s2 = 127.0.0.1:7102
//! receiver.client = 127.0.0.1:7103
//! input_provider = client
//! model_owner = owner
//! output_receiver = client
//! weights = logreg.weights    # read by the model owner
//! images = images.idx         # read by the input provider
//! ```
//! Optional keys: `frac_bits`, `bound_bits`, `stat_sec`, `public_weights`,
//! `image_offset`, `timeout_secs`, `provider.NAME`. Relative paths are
//! resolved against the file's directory.

use std::collections::HashMap;
use std::fs;
use std::net::{SocketAddr, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::error::{Error, Result};
use crate::nn::{Network, Roles};
use crate::params::ProtocolParams;
use crate::ring::Backend;
use crate::runtime::PartyId;
use crate::sharing::TruncMode;

#[derive(Clone, Debug, PartialEq)]
pub struct SessionConfig {
    pub session: u64,
    pub seed: Option<u64>,
    pub params: ProtocolParams,
    pub network: Network,
    pub batch: usize,
    pub runs: usize,
    pub addresses: HashMap<PartyId, SocketAddr>,
    pub roles: Roles,
    pub weights: Option<PathBuf>,
    pub public_weights: Option<PathBuf>,
    pub images: Option<PathBuf>,
    pub image_offset: usize,
    pub timeout: Duration,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn resolve(addr: &str) -> Result<SocketAddr> {
    addr.to_socket_addrs()
        .map_err(|e| config_err(format!("bad address {addr:?}: {e}")))?
        .next()
        .ok_or_else(|| config_err(format!("address {addr:?} resolves to nothing")))
}

impl SessionConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut kv: Vec<(usize, String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| config_err(format!("line {}: expected key = value", i + 1)))?;
            kv.push((i + 1, k.trim().to_string(), v.trim().to_string()));
        }
        let mut backend = Backend::Int64;
        let mut trunc = TruncMode::Interactive;
        let mut overrides: [Option<u32>; 3] = [None; 3];
        let mut cfg = SessionConfig {
            session: 0,
            seed: None,
            params: ProtocolParams::new(Backend::Int64, TruncMode::Interactive),
            network: Network::LogReg,
            batch: 1,
            runs: 1,
            addresses: HashMap::new(),
            roles: Roles::default(),
            weights: None,
            public_weights: None,
            images: None,
            image_offset: 0,
            timeout: Duration::from_secs(30),
        };
        for (line, key, value) in kv {
            let bad = |what: &str| config_err(format!("line {line}: invalid {what} {value:?}"));
            let int = |what: &str| value.parse::<u64>().map_err(|_| bad(what));
            let path = || Some(base.join(&value));
            match key.as_str() {
                "session" => cfg.session = int("session")?,
                "seed" => cfg.seed = Some(int("seed")?),
                "backend" => backend = value.parse().map_err(|_| bad("backend"))?,
                "trunc" => trunc = value.parse().map_err(|_| bad("trunc"))?,
                "frac_bits" => overrides[0] = Some(int("frac_bits")? as u32),
                "bound_bits" => overrides[1] = Some(int("bound_bits")? as u32),
                "stat_sec" => overrides[2] = Some(int("stat_sec")? as u32),
                "network" => cfg.network = value.parse()?,
                "batch" => cfg.batch = int("batch")? as usize,
                "runs" => cfg.runs = int("runs")? as usize,
                "weights" => cfg.weights = path(),
                "public_weights" => cfg.public_weights = path(),
                "images" => cfg.images = path(),
                "image_offset" => cfg.image_offset = int("image_offset")? as usize,
                "timeout_secs" => cfg.timeout = Duration::from_secs(int("timeout_secs")?),
                "input_provider" => cfg.roles.input_provider = value.clone(),
                "model_owner" => cfg.roles.model_owner = value.clone(),
                "output_receiver" => cfg.roles.output_receiver = value.clone(),
                "s0" | "s1" | "s2" => {
                    cfg.addresses.insert(key.parse()?, resolve(&value)?);
                }
                k if k.starts_with("provider.") || k.starts_with("receiver.") => {
                    let (kind, name) = k.split_once('.').expect("prefix checked");
                    let party = if kind == "provider" {
                        PartyId::InputProvider(name.to_string())
                    } else {
                        PartyId::OutputReceiver(name.to_string())
                    };
                    cfg.addresses.insert(party, resolve(&value)?);
                }
                other => return Err(config_err(format!("line {line}: unknown key {other:?}"))),
            }
        }
        cfg.params = ProtocolParams::new(backend, trunc);
        if let Some(f) = overrides[0] {
            cfg.params.fixed.frac_bits = f;
        }
        if let Some(b) = overrides[1] {
            cfg.params.fixed.bound_bits = b;
        }
        if let Some(k) = overrides[2] {
            cfg.params.fixed.stat_sec = k;
        }
        cfg.params.validate()?;
        if cfg.batch == 0 || cfg.runs == 0 {
            return Err(config_err("batch and runs must be positive"));
        }
        let receiver = PartyId::OutputReceiver(cfg.roles.output_receiver.clone());
        for party in [PartyId::Server0, PartyId::Server1, PartyId::Server2, receiver] {
            if !cfg.addresses.contains_key(&party) {
                return Err(config_err(format!("no address for {party}")));
            }
        }
        Ok(cfg)
    }

    /// Everyone taking part, servers first.
    pub fn parties(&self) -> Vec<PartyId> {
        let mut parties = vec![PartyId::Server0, PartyId::Server1, PartyId::Server2];
        parties.push(PartyId::InputProvider(self.roles.input_provider.clone()));
        if self.roles.model_owner != self.roles.input_provider {
            parties.push(PartyId::InputProvider(self.roles.model_owner.clone()));
        }
        parties.push(PartyId::OutputReceiver(self.roles.output_receiver.clone()));
        parties
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "
        # demo
        session = 3
        seed = 9
        backend = int100
        network = b
        batch = 2
        s0 = 127.0.0.1:7000
        s1 = 127.0.0.1:7001
        s2 = 127.0.0.1:7002   # producer
        receiver.alice = 127.0.0.1:7003
        output_receiver = alice
        input_provider = alice
        weights = w.bin
    ";

    #[test]
    fn parses_sample() {
        let cfg = SessionConfig::parse(SAMPLE, Path::new("/tmp/x")).unwrap();
        assert_eq!(cfg.session, 3);
        assert_eq!(cfg.seed, Some(9));
        assert_eq!(cfg.params.backend, Backend::Crt);
        assert_eq!(cfg.network, Network::B);
        assert_eq!(cfg.weights, Some(PathBuf::from("/tmp/x/w.bin")));
        assert_eq!(cfg.addresses[&PartyId::Server2].port(), 7002);
        assert_eq!(cfg.parties().len(), 6);
    }

    #[test]
    fn rejects_bad_input() {
        let base = Path::new(".");
        assert!(matches!(SessionConfig::parse("backend = int32", base), Err(Error::Config(_))));
        assert!(matches!(SessionConfig::parse("colour = red", base), Err(Error::Config(_))));
        assert!(matches!(SessionConfig::parse("session 4", base), Err(Error::Config(_))));
        // missing addresses
        assert!(matches!(SessionConfig::parse("session = 4", base), Err(Error::Config(_))));
        let local_crt = SAMPLE.replace("backend = int100", "backend = int100\ntrunc = local");
        assert!(matches!(SessionConfig::parse(&local_crt, base), Err(Error::ModeUnsupported(..))));
    }
}
