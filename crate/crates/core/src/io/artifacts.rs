use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::tensor::{read_tensor, write_tensor, Tensor};
use super::FormatError;
use crate::emccd::{CameraSpec, GainTable, QUANTILES};
use crate::forward::PatternSet;
use crate::grid::Image2D;
use crate::scatter::{Spsf, SpsfStack, StackProvenance};

/// Largest integer every smaller integer of which is exact in f32.
const F32_EXACT_INT: u32 = 1 << 24;

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn schema(e: impl std::fmt::Display) -> FormatError {
    FormatError::Schema(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainTableMeta {
    pub camera: CameraSpec,
    pub samples_per_k: usize,
    pub seed: u64,
    pub stream_id: u64,
    pub quantiles: usize,
    pub k_max: u64,
}

/// Writes the quantiles as an f32 `[k_max + 1, 1024]` tensor at `path` and
/// the camera parameters to the `.json` sidecar.
pub fn write_gain_table(path: &Path, table: &GainTable) -> Result<(), FormatError> {
    if table.quantiles().iter().any(|&q| q > F32_EXACT_INT) {
        return Err(FormatError::Schema(
            "gain table values exceed the exact f32 integer range".into(),
        ));
    }
    let rows = table.k_max() + 1;
    let data = table.quantiles().iter().map(|&q| q as f32).collect();
    write_tensor(path, &Tensor::from_f32(vec![rows, QUANTILES as u64], data)?)?;
    let meta = GainTableMeta {
        camera: *table.spec(),
        samples_per_k: table.samples_per_k(),
        seed: table.seed(),
        stream_id: table.stream_id(),
        quantiles: QUANTILES,
        k_max: table.k_max(),
    };
    fs::write(sidecar(path), serde_json::to_vec_pretty(&meta)?)?;
    Ok(())
}

pub fn read_gain_table(path: &Path) -> Result<GainTable, FormatError> {
    let t = read_tensor(path)?;
    let meta: GainTableMeta = serde_json::from_slice(&fs::read(sidecar(path))?)?;
    let data = t.as_f32().ok_or_else(|| schema("gain table must be f32"))?;
    if t.shape() != [meta.k_max + 1, QUANTILES as u64] || meta.quantiles != QUANTILES {
        return Err(FormatError::InvalidShape(format!(
            "gain table shape {:?}",
            t.shape()
        )));
    }
    if data
        .iter()
        .any(|&v| !(v >= 0.0 && v <= F32_EXACT_INT as f32 && v.fract() == 0.0))
    {
        return Err(schema("gain table values must be nonnegative integers"));
    }
    let q = data.iter().map(|&v| v as u32).collect();
    GainTable::from_parts(
        meta.camera,
        meta.samples_per_k,
        meta.seed,
        meta.stream_id,
        q,
    )
    .map_err(schema)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpsfStackMeta {
    pub depths_um: Vec<f64>,
    pub depths_sl: Vec<f64>,
    pub kernel_px: usize,
    pub pitch_um: f64,
    pub launched: Vec<u64>,
    pub accepted: Vec<u64>,
    pub in_window: Vec<u64>,
    pub outside_aperture: Vec<u64>,
    pub discarded: Vec<u64>,
    pub capture_fraction: Vec<f64>,
    pub provenance: Option<StackProvenance>,
}

impl SpsfStackMeta {
    pub fn of(stack: &SpsfStack) -> Self {
        let k = stack.kernels();
        Self {
            depths_um: stack.depths_um().to_vec(),
            depths_sl: k.iter().map(|s| s.depth_sl).collect(),
            kernel_px: stack.kernel_px(),
            pitch_um: k[0].pitch(),
            launched: k.iter().map(|s| s.launched).collect(),
            accepted: k.iter().map(|s| s.accepted).collect(),
            in_window: k.iter().map(|s| s.in_window).collect(),
            outside_aperture: k.iter().map(|s| s.outside_aperture).collect(),
            discarded: k.iter().map(|s| s.discarded).collect(),
            capture_fraction: k.iter().map(|s| s.capture_fraction).collect(),
            provenance: stack.provenance().cloned(),
        }
    }
}

/// Writes kernels as an f32 `[depths, kernel_px, kernel_px]` tensor with a
/// `.json` sidecar of depths and photon accounting.
pub fn write_spsf_stack(path: &Path, stack: &SpsfStack) -> Result<(), FormatError> {
    let n = stack.kernel_px() as u64;
    let data = stack
        .kernels()
        .iter()
        .flat_map(|k| k.kernel.values().iter().map(|&v| v as f32))
        .collect();
    write_tensor(
        path,
        &Tensor::from_f32(vec![stack.len() as u64, n, n], data)?,
    )?;
    fs::write(
        sidecar(path),
        serde_json::to_vec_pretty(&SpsfStackMeta::of(stack))?,
    )?;
    Ok(())
}

pub fn read_spsf_stack(path: &Path) -> Result<SpsfStack, FormatError> {
    let t = read_tensor(path)?;
    let m: SpsfStackMeta = serde_json::from_slice(&fs::read(sidecar(path))?)?;
    let d = m.depths_um.len();
    let n = m.kernel_px;
    let lists = [
        m.depths_sl.len(),
        m.launched.len(),
        m.accepted.len(),
        m.in_window.len(),
    ];
    if t.shape() != [d as u64, n as u64, n as u64]
        || lists.iter().any(|&l| l != d)
        || m.outside_aperture.len() != d
        || m.discarded.len() != d
        || m.capture_fraction.len() != d
    {
        return Err(FormatError::InvalidShape(format!(
            "sPSF stack shape {:?} vs metadata",
            t.shape()
        )));
    }
    let data = t.as_f32().ok_or_else(|| schema("sPSF stack must be f32"))?;
    let kernels = (0..d)
        .map(|i| {
            let v = data[i * n * n..(i + 1) * n * n]
                .iter()
                .map(|&x| x as f64)
                .collect();
            Ok(Spsf {
                kernel: Image2D::new(n, n, m.pitch_um, v).map_err(schema)?,
                depth_sl: m.depths_sl[i],
                launched: m.launched[i],
                accepted: m.accepted[i],
                in_window: m.in_window[i],
                outside_aperture: m.outside_aperture[i],
                discarded: m.discarded[i],
                capture_fraction: m.capture_fraction[i],
            })
        })
        .collect::<Result<Vec<_>, FormatError>>()?;
    let mut stack = SpsfStack::new(m.depths_um, kernels).map_err(schema)?;
    if let Some(p) = m.provenance {
        stack = stack.with_provenance(p);
    }
    Ok(stack)
}

#[derive(Serialize, Deserialize)]
struct PatternMeta {
    seed: u64,
}

/// Writes binary masks as a u8 `[t, H, W]` tensor plus a `.json` sidecar
/// holding the seed.
pub fn write_patterns(path: &Path, patterns: &PatternSet) -> Result<(), FormatError> {
    if !patterns.is_binary() {
        return Err(schema("only binary masks can be stored as u8"));
    }
    let data = patterns
        .masks()
        .iter()
        .flat_map(|m| m.values().iter().map(|&v| v as u8))
        .collect();
    let shape = vec![
        patterns.t() as u64,
        patterns.ny() as u64,
        patterns.nx() as u64,
    ];
    write_tensor(path, &Tensor::from_u8(shape, data)?)?;
    fs::write(
        sidecar(path),
        serde_json::to_vec_pretty(&PatternMeta {
            seed: patterns.seed(),
        })?,
    )?;
    Ok(())
}

pub fn read_patterns(path: &Path) -> Result<PatternSet, FormatError> {
    let t = read_tensor(path)?;
    let meta: PatternMeta = serde_json::from_slice(&fs::read(sidecar(path))?)?;
    let data = t.as_u8().ok_or_else(|| schema("patterns must be u8"))?;
    let &[nt, ny, nx] = t.shape() else {
        return Err(FormatError::InvalidShape(format!(
            "patterns need rank 3, got {:?}",
            t.shape()
        )));
    };
    let (nt, ny, nx) = (nt as usize, ny as usize, nx as usize);
    if data.iter().any(|&v| v > 1) {
        return Err(schema("pattern values must be 0 or 1"));
    }
    let masks = (0..nt)
        .map(|i| {
            let v = data[i * nx * ny..(i + 1) * nx * ny]
                .iter()
                .map(|&b| b as f64)
                .collect();
            Image2D::new(nx, ny, 1.0, v).map_err(schema)
        })
        .collect::<Result<Vec<_>, _>>()?;
    PatternSet::new(masks, meta.seed).map_err(schema)
}
