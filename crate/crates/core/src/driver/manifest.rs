//! Per-cycle training manifests.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::fsutil::{sha256_file, write_atomic};
use super::{DriverError, Result};
use crate::curation::CurationSummary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    Source,
    TargetRefined,
    TargetSelected,
    /// Rejected by selection but kept with its teacher label.
    TargetFallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub case_id: String,
    pub origin: Origin,
    /// Relative to the output directory.
    pub image: String,
    pub image_sha256: String,
    pub label: String,
    pub label_sha256: String,
}

/// Slice-level totals of a refinement cycle.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineTotals {
    pub cases: usize,
    pub prompted_slices: usize,
    pub replaced_slices: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CycleManifest {
    /// 0 for the phase I manifest.
    pub cycle: u32,
    pub entries: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refine: Option<RefineTotals>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<CurationSummary>,
    /// Other checksummed outputs, relative path to sha256.
    #[serde(default)]
    pub files: BTreeMap<String, String>,
}

impl CycleManifest {
    fn err(path: &Path, message: impl Into<String>) -> DriverError {
        DriverError::Manifest {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        let text = self.to_json();
        write_atomic(path, text.as_bytes())?;
        Ok(super::fsutil::sha256_hex(text.as_bytes()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DriverError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Self::err(path, e.to_string()))
    }

    /// Origin tags must agree with the cycle: refined labels only at t = 1,
    /// selected ones only at t >= 2, nothing but sources at t = 0.
    pub fn check_origins(&self) -> std::result::Result<(), String> {
        for e in &self.entries {
            let ok = match e.origin {
                Origin::Source => true,
                Origin::TargetRefined => self.cycle == 1,
                Origin::TargetSelected | Origin::TargetFallback => self.cycle >= 2,
            };
            if !ok {
                return Err(format!(
                    "case {} has origin {:?} in cycle {}",
                    e.case_id, e.origin, self.cycle
                ));
            }
        }
        Ok(())
    }

    /// Every referenced file exists under `base` and matches its checksum.
    pub fn verify(&self, base: &Path, manifest_path: &Path) -> Result<()> {
        self.check_origins().map_err(|m| Self::err(manifest_path, m))?;
        let check = |rel: &str, want: &str| -> Result<()> {
            let p = base.join(rel);
            if !p.is_file() {
                return Err(Self::err(manifest_path, format!("{rel} is missing")));
            }
            let got = sha256_file(&p)?;
            if got != want {
                return Err(Self::err(manifest_path, format!("{rel} changed since it was recorded")));
            }
            Ok(())
        };
        for e in &self.entries {
            check(&e.image, &e.image_sha256)?;
            check(&e.label, &e.label_sha256)?;
        }
        for (rel, sum) in &self.files {
            check(rel, sum)?;
        }
        Ok(())
    }

    pub fn count(&self, origin: Origin) -> usize {
        self.entries.iter().filter(|e| e.origin == origin).count()
    }
}
