//! Parameter checkpoints.
//!
//! A checkpoint is a JSON object holding the architecture descriptor and the
//! flat parameter vector θ as base64-encoded little-endian 64-bit floats,
//! plus free-form string metadata. θ round-trips bit-exactly, which is what
//! makes transfer learning across lattice sizes reproducible.

use std::collections::BTreeMap;
use std::path::Path;

use base64::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cnn::{Architecture, CnnNdo};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub architecture: Architecture,
    /// base64 of θ as little-endian f64 bytes.
    pub theta: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng_state: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn from_model(model: &CnnNdo, metadata: BTreeMap<String, String>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            architecture: model.arch().clone(),
            theta: encode_theta(model.params()),
            rng_state: None,
            metadata,
        }
    }

    pub fn to_model(&self) -> Result<CnnNdo> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let theta = decode_theta(&self.theta)?;
        CnnNdo::new(self.architecture.clone(), theta)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Checkpoint(format!("serialize: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("parse {}: {e}", path.display())))
    }
}

pub fn encode_theta(theta: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(theta.len() * 8);
    for v in theta {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    BASE64_STANDARD.encode(bytes)
}

pub fn decode_theta(encoded: &str) -> Result<Vec<f64>> {
    let bytes = BASE64_STANDARD
        .decode(encoded)
        .map_err(|e| Error::Checkpoint(format!("theta is not valid base64: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Checkpoint(format!(
            "theta byte length {} is not a multiple of 8",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}
