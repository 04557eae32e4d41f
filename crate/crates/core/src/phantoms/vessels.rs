use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Volume3D, VolumeGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VesselPreprocessConfig {
    /// Voxels strictly below this are zeroed.
    pub intensity_threshold: f64,
    pub rescale_factor: f64,
    /// Output `(nx, ny, nz)`; the rescaled volume is center-cropped or
    /// zero-padded to it. `None` keeps the rescaled shape.
    pub output_shape: Option<(usize, usize, usize)>,
}

impl Default for VesselPreprocessConfig {
    fn default() -> Self {
        Self {
            intensity_threshold: 190.0,
            rescale_factor: 1.09,
            output_shape: None,
        }
    }
}

pub fn rescaled_len(n: usize, factor: f64) -> usize {
    ((n as f64 * factor).round() as usize).max(1)
}

fn trilinear(v: &Volume3D, out: VolumeGrid, factor: f64) -> Volume3D {
    let g = v.grid();
    let axis = |n_out: usize, n_in: usize| -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|i| {
                let s = ((i as f64 + 0.5) / factor - 0.5).clamp(0.0, (n_in - 1) as f64);
                let a = s.floor() as usize;
                let b = (a + 1).min(n_in - 1);
                (a, b, s - a as f64)
            })
            .collect()
    };
    let ax = axis(out.nx(), g.nx());
    let ay = axis(out.ny(), g.ny());
    let az = axis(out.nz(), g.nz());
    Volume3D::from_fn(out, |x, y, z| {
        let (x0, x1, fx) = ax[x];
        let (y0, y1, fy) = ay[y];
        let (z0, z1, fz) = az[z];
        let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
        let plane = |z: usize| {
            lerp(
                lerp(v.get(x0, y0, z), v.get(x1, y0, z), fx),
                lerp(v.get(x0, y1, z), v.get(x1, y1, z), fx),
                fy,
            )
        };
        lerp(plane(z0), plane(z1), fz)
    })
    .expect("interpolation of finite values")
}

fn center_fit(v: &Volume3D, shape: (usize, usize, usize)) -> Result<Volume3D> {
    let g = v.grid();
    let out = VolumeGrid::new(shape.0, shape.1, shape.2, g.dx(), g.dy(), g.dz())?;
    // signed offset of the output origin inside the source
    let off = |n_in: usize, n_out: usize| (n_in as i64 - n_out as i64) / 2;
    let (ox, oy, oz) = (
        off(g.nx(), shape.0),
        off(g.ny(), shape.1),
        off(g.nz(), shape.2),
    );
    Volume3D::from_fn(out, |x, y, z| {
        let (sx, sy, sz) = (x as i64 + ox, y as i64 + oy, z as i64 + oz);
        if sx < 0
            || sy < 0
            || sz < 0
            || sx >= g.nx() as i64
            || sy >= g.ny() as i64
            || sz >= g.nz() as i64
        {
            0.0
        } else {
            v.get(sx as usize, sy as usize, sz as usize)
        }
    })
}

/// Thresholds, rescales, normalizes to unit maximum and fits the volume to
/// the output shape.
pub fn preprocess_vessels(volume: &Volume3D, config: &VesselPreprocessConfig) -> Result<Volume3D> {
    if !(config.rescale_factor.is_finite() && config.rescale_factor > 0.0) {
        return Err(Error::invalid("rescale_factor", "must be positive"));
    }
    if let Some(i) = volume.values().iter().position(|&v| v < 0.0) {
        return Err(Error::invalid(
            "volume",
            format!("negative intensity at index {i}"),
        ));
    }
    let t = config.intensity_threshold;
    let g = *volume.grid();
    let kept: Vec<f64> = volume
        .values()
        .iter()
        .map(|&v| if v < t { 0.0 } else { v })
        .collect();
    if kept.iter().all(|&v| v == 0.0) {
        return Err(Error::EmptyAfterThreshold { threshold: t });
    }
    let f = config.rescale_factor;
    let out = VolumeGrid::new(
        rescaled_len(g.nx(), f),
        rescaled_len(g.ny(), f),
        rescaled_len(g.nz(), f),
        g.dx(),
        g.dy(),
        g.dz(),
    )?;
    let mut scaled = trilinear(&Volume3D::new(g, kept)?, out, f);
    let max = scaled.max();
    scaled.values_mut().iter_mut().for_each(|v| *v /= max);
    match config.output_shape {
        Some(shape) => center_fit(&scaled, shape),
        None => Ok(scaled),
    }
}
