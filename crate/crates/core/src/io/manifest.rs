use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::FormatError;
use crate::rng::RngStream;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Instance directory relative to the manifest.
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    /// SHA-256 of every member file, keyed by path relative to the manifest.
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    /// Snapshot of the configuration the dataset was generated from.
    pub config: serde_json::Value,
    pub instances: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn count(&self, split: Split) -> usize {
        self.instances
            .iter()
            .filter(|e| e.split == Some(split))
            .count()
    }
}

pub fn sha256_file(path: &Path) -> Result<String, FormatError> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

pub fn write_manifest(root: &Path, manifest: &DatasetManifest) -> Result<(), FormatError> {
    fs::write(
        root.join(MANIFEST_FILE),
        serde_json::to_vec_pretty(manifest)?,
    )?;
    Ok(())
}

/// Reads `manifest.json` under `root` and checks that every listed file
/// exists and, if `verify_hashes`, still has its recorded hash.
pub fn read_manifest(root: &Path, verify_hashes: bool) -> Result<DatasetManifest, FormatError> {
    let p = root.join(MANIFEST_FILE);
    if !p.is_file() {
        return Err(FormatError::MissingMember {
            member: MANIFEST_FILE.to_string(),
        });
    }
    let m: DatasetManifest = serde_json::from_slice(&fs::read(p)?)?;
    if m.format_version != MANIFEST_VERSION {
        return Err(FormatError::Schema(format!(
            "manifest version {}",
            m.format_version
        )));
    }
    for e in &m.instances {
        if !root.join(&e.path).is_dir() {
            return Err(FormatError::MissingMember {
                member: e.path.clone(),
            });
        }
        for (file, hash) in &e.files {
            let fp = root.join(file);
            if !fp.is_file() {
                return Err(FormatError::MissingMember {
                    member: file.clone(),
                });
            }
            if verify_hashes && sha256_file(&fp)? != *hash {
                return Err(FormatError::FileHashMismatch { path: file.clone() });
            }
        }
    }
    Ok(m)
}

/// Tags a seeded shuffle of the instances: the first
/// `clamp(round(n·train_fraction), 1, n - 1)` become train, the rest val.
pub fn split_manifest(
    manifest: &DatasetManifest,
    train_fraction: f64,
    seed: u64,
) -> Result<DatasetManifest, FormatError> {
    let n = manifest.instances.len();
    if n < 2 {
        return Err(FormatError::Schema(format!(
            "a split needs at least 2 instances, got {n}"
        )));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(FormatError::Schema(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut RngStream::new(seed, 0));
    let mut out = manifest.clone();
    for (rank, &i) in order.iter().enumerate() {
        out.instances[i].split = Some(if rank < n_train {
            Split::Train
        } else {
            Split::Val
        });
    }
    Ok(out)
}
