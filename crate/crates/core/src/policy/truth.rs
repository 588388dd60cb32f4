//! Ground-truth export of a policy's full parameterization.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PolicySpec;
use crate::digest::digest_of;
use crate::error::{Error, Result};

pub const FORMAT: &str = "dmkit-policy/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub format: String,
    pub policy: PolicySpec,
    /// SHA-256 of the canonical JSON of `policy`.
    pub digest: String,
}

impl GroundTruth {
    /// Recompute the digest after a deliberate edit of `policy`.
    pub fn reseal(&mut self) -> Result<()> {
        self.digest = digest_of(&self.policy)?;
        Ok(())
    }

    pub fn verify(&self) -> Result<()> {
        if self.format != FORMAT {
            return Err(Error::Config(format!("unsupported ground-truth format '{}'", self.format)));
        }
        let actual = digest_of(&self.policy)?;
        if actual != self.digest {
            return Err(Error::Integrity(format!(
                "ground-truth digest mismatch: file says {}, content hashes to {actual}",
                self.digest
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Read and verify; no validation of the policy itself beyond its digest.
    pub fn load(path: &Path) -> Result<Self> {
        let g: GroundTruth = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        g.verify()?;
        Ok(g)
    }
}

pub fn export_ground_truth(p: &PolicySpec) -> Result<GroundTruth> {
    Ok(GroundTruth {
        format: FORMAT.to_string(),
        policy: p.clone(),
        digest: digest_of(p)?,
    })
}

pub fn load_ground_truth(g: &GroundTruth) -> Result<PolicySpec> {
    g.verify()?;
    g.policy.validate()?;
    Ok(g.policy.clone())
}

/// Read either a ground-truth export (digest verified) or a bare policy spec.
pub fn load_policy_file(path: &Path) -> Result<PolicySpec> {
    let raw: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let spec = if raw.get("digest").is_some() {
        let g: GroundTruth = serde_json::from_value(raw)?;
        load_ground_truth(&g)?
    } else {
        serde_json::from_value(raw)?
    };
    spec.validate()?;
    Ok(spec)
}
