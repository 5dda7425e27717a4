use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriterionKind {
    L2Norm,
    GradNorm,
    PlainAct,
    Fisher,
    Grasp,
    Snip,
    Nwot,
    Jacov,
    Epenas,
}

impl CriterionKind {
    pub const ALL: [CriterionKind; 9] = [
        Self::L2Norm,
        Self::GradNorm,
        Self::PlainAct,
        Self::Fisher,
        Self::Grasp,
        Self::Snip,
        Self::Nwot,
        Self::Jacov,
        Self::Epenas,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::L2Norm => "l2norm",
            Self::GradNorm => "gradnorm",
            Self::PlainAct => "plainact",
            Self::Fisher => "fisher",
            Self::Grasp => "grasp",
            Self::Snip => "snip",
            Self::Nwot => "nwot",
            Self::Jacov => "jacov",
            Self::Epenas => "epenas",
        }
    }

    /// Whether a per-input score exists. Jacov and epenas compare
    /// gradients across a batch and are aggregate-only.
    pub fn is_contextual(self) -> bool {
        !matches!(self, Self::Jacov | Self::Epenas)
    }

    pub fn needs_gradients(self) -> bool {
        !matches!(self, Self::L2Norm | Self::Nwot)
    }

    /// Rejects contextual use of an aggregate-only criterion.
    pub fn require_contextual(self) -> Result<()> {
        if self.is_contextual() {
            Ok(())
        } else {
            Err(Error::ContextualUnsupported(self.name().to_string()))
        }
    }
}

impl FromStr for CriterionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("criterion: unknown kind {s:?}")))
    }
}

impl fmt::Display for CriterionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
