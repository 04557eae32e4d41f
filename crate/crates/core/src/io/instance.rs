use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::manifest::sha256_file;
use super::tensor::{read_tensor, write_tensor, Tensor};
use super::FormatError;
use crate::emccd::CameraSpec;
use crate::grid::Image2D;
use crate::psf::PsfParams;
use crate::scatter::TissueOptics;

pub const MEASUREMENTS_FILE: &str = "measurements.tns";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.tns";
pub const META_FILE: &str = "meta.json";

/// Physics and provenance of one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub seed: u64,
    pub index: usize,
    pub recipe: String,
    /// Focal-plane depth in scattering lengths.
    pub depth_sl: f64,
    pub optics: TissueOptics,
    pub na: f64,
    pub n_medium: f64,
    pub ex_psf: PsfParams,
    pub em_psf: PsfParams,
    pub camera: CameraSpec,
    /// Pattern tensor path relative to the instance directory.
    pub pattern_file: String,
    /// Lowercase hex SHA-256 of the pattern file bytes.
    pub pattern_set_hash: String,
    pub photon_scale: f64,
}

impl InstanceMeta {
    fn validate(&self) -> Result<(), FormatError> {
        let bad = |m: &str| Err(FormatError::Schema(m.to_string()));
        if !self.depth_sl.is_finite() {
            return bad("depth_sl must be finite");
        }
        if !(self.photon_scale.is_finite() && self.photon_scale > 0.0) {
            return bad("photon_scale must be positive");
        }
        if self.optics.validate().is_err() || self.camera.validate().is_err() {
            return bad("optics or camera parameters out of range");
        }
        if self.pattern_set_hash.len() != 64
            || !self.pattern_set_hash.bytes().all(|b| b.is_ascii_hexdigit())
        {
            return bad("pattern_set_hash must be 64 hex digits");
        }
        Ok(())
    }
}

/// `t` detected images, the ground truth and their metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceRecord {
    /// f32, shape `[t, H, W]`.
    pub measurements: Tensor,
    /// f32, shape `[H, W]`.
    pub ground_truth: Tensor,
    pub meta: InstanceMeta,
}

impl InstanceRecord {
    pub fn from_images(
        images: &[Image2D],
        ground_truth: &Image2D,
        meta: InstanceMeta,
    ) -> Result<Self, FormatError> {
        let first = images.first().ok_or_else(|| {
            FormatError::InvalidShape("an instance needs at least one measurement".into())
        })?;
        if images.iter().any(|i| !i.same_shape(ground_truth)) || !first.same_shape(ground_truth) {
            return Err(FormatError::InvalidShape(
                "measurements and ground truth differ in size".into(),
            ));
        }
        let (h, w) = (ground_truth.ny() as u64, ground_truth.nx() as u64);
        let stack: Vec<f32> = images
            .iter()
            .flat_map(|i| i.values().iter().map(|&v| v as f32))
            .collect();
        let gt: Vec<f32> = ground_truth.values().iter().map(|&v| v as f32).collect();
        let r = Self {
            measurements: Tensor::from_f32(vec![images.len() as u64, h, w], stack)?,
            ground_truth: Tensor::from_f32(vec![h, w], gt)?,
            meta,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn t(&self) -> usize {
        self.measurements.shape()[0] as usize
    }

    pub fn validate(&self) -> Result<(), FormatError> {
        let m = self.measurements.shape();
        let g = self.ground_truth.shape();
        if m.len() != 3 || g.len() != 2 || m[0] == 0 || m[1..] != *g {
            return Err(FormatError::InvalidShape(format!(
                "measurements {m:?} vs ground truth {g:?}"
            )));
        }
        if self.measurements.as_f32().is_none() || self.ground_truth.as_f32().is_none() {
            return Err(FormatError::Schema("instance tensors must be f32".into()));
        }
        self.meta.validate()
    }
}

pub fn write_instance(dir: &Path, record: &InstanceRecord) -> Result<(), FormatError> {
    record.validate()?;
    fs::create_dir_all(dir)?;
    write_tensor(&dir.join(MEASUREMENTS_FILE), &record.measurements)?;
    write_tensor(&dir.join(GROUND_TRUTH_FILE), &record.ground_truth)?;
    fs::write(
        dir.join(META_FILE),
        serde_json::to_vec_pretty(&record.meta)?,
    )?;
    Ok(())
}

fn member(dir: &Path, name: &str) -> Result<std::path::PathBuf, FormatError> {
    let p = dir.join(name);
    if p.is_file() {
        Ok(p)
    } else {
        Err(FormatError::MissingMember {
            member: name.to_string(),
        })
    }
}

/// Reads an instance directory and checks the referenced pattern file
/// against the stored hash.
pub fn read_instance(dir: &Path) -> Result<InstanceRecord, FormatError> {
    let meta_path = member(dir, META_FILE)?;
    let measurements = read_tensor(&member(dir, MEASUREMENTS_FILE)?)?;
    let ground_truth = read_tensor(&member(dir, GROUND_TRUTH_FILE)?)?;
    let meta: InstanceMeta = serde_json::from_slice(&fs::read(meta_path)?)?;
    let record = InstanceRecord {
        measurements,
        ground_truth,
        meta,
    };
    record.validate()?;
    let found = sha256_file(&member(dir, &record.meta.pattern_file)?)?;
    if found != record.meta.pattern_set_hash {
        return Err(FormatError::PatternHashMismatch {
            expected: record.meta.pattern_set_hash.clone(),
            found,
        });
    }
    Ok(record)
}
