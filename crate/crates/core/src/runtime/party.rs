use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// A participant in a session.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PartyId {
    Server0,
    Server1,
    /// Crypto producer; offline only.
    Server2,
    InputProvider(String),
    OutputReceiver(String),
}

impl PartyId {
    pub fn server(index: usize) -> PartyId {
        match index {
            0 => PartyId::Server0,
            1 => PartyId::Server1,
            _ => PartyId::Server2,
        }
    }

    /// `Some(i)` for S0 and S1.
    pub fn compute_index(&self) -> Option<usize> {
        match self {
            PartyId::Server0 => Some(0),
            PartyId::Server1 => Some(1),
            _ => None,
        }
    }

    pub(crate) fn role_tag(&self) -> u8 {
        match self {
            PartyId::Server0 => 0,
            PartyId::Server1 => 1,
            PartyId::Server2 => 2,
            PartyId::InputProvider(_) => 3,
            PartyId::OutputReceiver(_) => 4,
        }
    }

    pub(crate) fn name(&self) -> &str {
        match self {
            PartyId::InputProvider(n) | PartyId::OutputReceiver(n) => n,
            _ => "",
        }
    }

    pub(crate) fn from_parts(tag: u8, name: String) -> Option<PartyId> {
        Some(match tag {
            0 => PartyId::Server0,
            1 => PartyId::Server1,
            2 => PartyId::Server2,
            3 => PartyId::InputProvider(name),
            4 => PartyId::OutputReceiver(name),
            _ => return None,
        })
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PartyId::Server0 => f.write_str("s0"),
            PartyId::Server1 => f.write_str("s1"),
            PartyId::Server2 => f.write_str("s2"),
            PartyId::InputProvider(n) => write!(f, "provider:{n}"),
            PartyId::OutputReceiver(n) => write!(f, "receiver:{n}"),
        }
    }
}

impl FromStr for PartyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let bad = || Error::Config(format!("unknown party {s:?}; expected s0, s1, s2, provider:NAME or receiver:NAME"));
        match s {
            "s0" => Ok(PartyId::Server0),
            "s1" => Ok(PartyId::Server1),
            "s2" => Ok(PartyId::Server2),
            _ => {
                let (role, name) = s.split_once(':').ok_or_else(bad)?;
                if name.is_empty() || name.len() > 255 {
                    return Err(bad());
                }
                match role {
                    "provider" => Ok(PartyId::InputProvider(name.into())),
                    "receiver" => Ok(PartyId::OutputReceiver(name.into())),
                    _ => Err(bad()),
                }
            }
        }
    }
}

impl TryFrom<String> for PartyId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self, Error> {
        s.parse()
    }
}

impl From<PartyId> for String {
    fn from(p: PartyId) -> String {
        p.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trip() {
        for s in ["s0", "s1", "s2", "provider:alice", "receiver:bob"] {
            assert_eq!(s.parse::<PartyId>().unwrap().to_string(), s);
        }
        assert!("s3".parse::<PartyId>().is_err());
        assert!("provider:".parse::<PartyId>().is_err());
    }
}
