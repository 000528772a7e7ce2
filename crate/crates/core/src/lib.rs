//! Explicit-knowledge in-context learning for dementia screening.
//!
//! The pipeline turns CHAT picture-description transcripts into a prediction
//! through four stages:
//!
//! - a small trained assessor ([`assessor`]) that scores token contributions
//!   and produces a confidence score per transcript,
//! - a parsing decomposer ([`annotator`], [`decomposer`]) that folds token
//!   contributions into six category weights and a feature score,
//! - a rank-based demonstration search ([`retrieval`]),
//! - an ensemble of prompted learners ([`prompting`], [`gateway`],
//!   [`ensemble`]) whose votes are aggregated by majority.
//!
//! [`harness`] drives ablations, baselines and label-word sweeps on top.

pub mod annotator;
pub mod assessor;
pub mod chat;
pub mod decomposer;
pub mod embedding;
pub mod ensemble;
pub mod error;
pub mod fixture;
pub mod gateway;
pub mod harness;
pub mod prompting;
pub mod retrieval;

pub use error::{Error, Result};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Binary diagnosis class. AD is the positive class everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Class {
    #[serde(rename = "AD")]
    Ad,
    #[serde(rename = "HC")]
    Hc,
}

impl Class {
    pub fn as_str(self) -> &'static str {
        match self {
            Class::Ad => "AD",
            Class::Hc => "HC",
        }
    }

    /// Target value for binary cross-entropy (AD = 1).
    pub fn target(self) -> f64 {
        match self {
            Class::Ad => 1.0,
            Class::Hc => 0.0,
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Class {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "AD" => Ok(Class::Ad),
            "HC" => Ok(Class::Hc),
            other => Err(Error::Data(format!("unknown label {other:?} (expected AD or HC)"))),
        }
    }
}

/// Sub-seed for a named stream: the first eight bytes (little endian) of
/// SHA-256(`seed` as 8 little-endian bytes ‖ `label`).
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}
