use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Model variants compared in the ablation suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Gated mixture with the dynamic enquirer, trained on both tasks.
    Full,
    /// Enquirer uses only the message matching score, fixed over time.
    Static,
    /// Same network as `Full`, trained on the knowledge task alone.
    Single,
    /// Attention seq2seq: no retrieval, gate always closed.
    S2sa,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::Static, Variant::Single, Variant::S2sa];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Static => "static",
            Variant::Single => "single",
            Variant::S2sa => "s2sa",
        }
    }

    pub fn uses_candidates(self) -> bool {
        self != Variant::S2sa
    }

    /// Whether the entity and type update scores take part in `p_e`.
    pub fn dynamic_enquirer(self) -> bool {
        matches!(self, Variant::Full | Variant::Single)
    }

    /// Whether the type-substituted auxiliary task is trained.
    pub fn uses_task2(self) -> bool {
        matches!(self, Variant::Full | Variant::Static)
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Variant::Full => 0,
            Variant::Static => 1,
            Variant::Single => 2,
            Variant::S2sa => 3,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        Variant::ALL.into_iter().find(|v| v.code() == c)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "full" | "gends" => Ok(Variant::Full),
            "static" => Ok(Variant::Static),
            "single" => Ok(Variant::Single),
            "s2sa" => Ok(Variant::S2sa),
            other => Err(Error::Config(format!(
                "unknown variant {other:?} (expected full, static, single or s2sa)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_emb: usize,
    pub d_h: usize,
    pub variant: Variant,
    /// Parameters are drawn uniformly from `[-init_scale, init_scale]`.
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_emb: 160,
            d_h: 160,
            variant: Variant::Full,
            init_scale: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn with_dims(d: usize, variant: Variant) -> Self {
        Self {
            d_emb: d,
            d_h: d,
            variant,
            ..Self::default()
        }
    }
}
