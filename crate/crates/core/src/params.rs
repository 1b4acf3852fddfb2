use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::ring::{Backend, FixedPointConfig};
use crate::sharing::{TruncMode, TruncationConfig};

/// Everything the parties must agree on besides the plan itself.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub backend: Backend,
    pub fixed: FixedPointConfig,
    pub trunc_mode: TruncMode,
}

impl ProtocolParams {
    /// Backend defaults for the fixed-point encoding.
    pub fn new(backend: Backend, trunc_mode: TruncMode) -> Self {
        ProtocolParams {
            backend,
            fixed: FixedPointConfig::default_for(backend),
            trunc_mode,
        }
    }

    pub fn truncation(&self) -> TruncationConfig {
        TruncationConfig::new(self.trunc_mode, &self.fixed)
    }

    pub fn validate(&self) -> Result<()> {
        self.fixed.validate(self.backend)?;
        self.truncation().validate(self.backend)
    }
}
