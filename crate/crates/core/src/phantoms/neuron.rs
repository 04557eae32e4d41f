use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Volume3D, VolumeGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeuronPreprocessConfig {
    /// Values above this are set to it.
    pub clip_threshold: f64,
    /// z stride between candidate windows.
    pub plane_spacing: usize,
    /// Window depth in planes; matches the exPSF grid depth.
    pub subvolume_depth: usize,
    /// Lateral window size. `None` keeps the full plane.
    pub tile_px: Option<usize>,
}

impl Default for NeuronPreprocessConfig {
    fn default() -> Self {
        Self {
            clip_threshold: 20.0,
            plane_spacing: 5,
            subvolume_depth: 41,
            tile_px: Some(326),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subvolume {
    /// Voxel offset of the window in the source stack.
    pub origin: (usize, usize, usize),
    pub volume: Volume3D,
}

fn starts(n: usize, size: usize, stride: usize) -> Vec<usize> {
    let mut s: Vec<usize> = (0..=n - size).step_by(stride).collect();
    if *s.last().expect("n ≥ size") != n - size {
        s.push(n - size);
    }
    s
}

/// Candidate window origins before the mean gate.
///
/// z origins step by `plane_spacing` and stop at the last full window.
/// Lateral tiles step by the tile size; a final tile is snapped to the far
/// edge when the plane is not an exact multiple.
pub fn neuron_window_origins(
    grid: &VolumeGrid,
    config: &NeuronPreprocessConfig,
) -> Result<Vec<(usize, usize, usize)>> {
    if !(config.clip_threshold > 0.0) {
        return Err(Error::invalid("clip_threshold", "must be positive"));
    }
    if config.plane_spacing == 0 || config.subvolume_depth == 0 {
        return Err(Error::invalid(
            "plane_spacing",
            "spacing and depth must be at least 1",
        ));
    }
    if grid.nz() < config.subvolume_depth {
        return Err(Error::invalid(
            "subvolume_depth",
            format!(
                "stack has {} planes, windows need {}",
                grid.nz(),
                config.subvolume_depth
            ),
        ));
    }
    let (tx, ty) = match config.tile_px {
        Some(t) if t == 0 || t > grid.nx() || t > grid.ny() => {
            return Err(Error::invalid(
                "tile_px",
                format!("{t} does not fit a {}x{} plane", grid.nx(), grid.ny()),
            ))
        }
        Some(t) => (t, t),
        None => (grid.nx(), grid.ny()),
    };
    let zs = (0..=grid.nz() - config.subvolume_depth).step_by(config.plane_spacing);
    let ys = starts(grid.ny(), ty, ty);
    let xs = starts(grid.nx(), tx, tx);
    let mut out = Vec::new();
    for z in zs {
        for &y in &ys {
            for &x in &xs {
                out.push((x, y, z));
            }
        }
    }
    Ok(out)
}

/// Clips every voxel to `threshold` in place.
pub fn clip_stack(mut stack: Volume3D, threshold: f64) -> Volume3D {
    stack
        .values_mut()
        .iter_mut()
        .for_each(|v| *v = v.min(threshold));
    stack
}

fn window_dims(g: &VolumeGrid, config: &NeuronPreprocessConfig) -> (usize, usize, usize) {
    match config.tile_px {
        Some(t) => (t, t, config.subvolume_depth),
        None => (g.nx(), g.ny(), config.subvolume_depth),
    }
}

/// Origins of the windows of an already clipped stack whose mean exceeds
/// the mean of the whole stack.
pub fn gated_window_origins(
    clipped: &Volume3D,
    config: &NeuronPreprocessConfig,
) -> Result<Vec<(usize, usize, usize)>> {
    let g = *clipped.grid();
    let origins = neuron_window_origins(&g, config)?;
    let stack_mean = clipped.mean();
    let (tx, ty, tz) = window_dims(&g, config);
    let n = (tx * ty * tz) as f64;
    Ok(origins
        .into_iter()
        .filter(|&(x0, y0, z0)| {
            let mut sum = 0.0;
            for z in z0..z0 + tz {
                for y in y0..y0 + ty {
                    let start = g.index(x0, y, z);
                    sum += clipped.values()[start..start + tx].iter().sum::<f64>();
                }
            }
            sum / n > stack_mean
        })
        .collect())
}

/// Copies the window at `origin` out of `clipped`.
pub fn extract_window(
    clipped: &Volume3D,
    origin: (usize, usize, usize),
    config: &NeuronPreprocessConfig,
) -> Result<Subvolume> {
    let g = *clipped.grid();
    let (tx, ty, tz) = window_dims(&g, config);
    let (x0, y0, z0) = origin;
    if x0 + tx > g.nx() || y0 + ty > g.ny() || z0 + tz > g.nz() {
        return Err(Error::ShapeMismatch(format!(
            "window at {origin:?} leaves the stack"
        )));
    }
    let sub = VolumeGrid::new(tx, ty, tz, g.dx(), g.dy(), g.dz())?;
    let mut values = Vec::with_capacity(sub.len());
    for z in z0..z0 + tz {
        for y in y0..y0 + ty {
            let start = g.index(x0, y, z);
            values.extend_from_slice(&clipped.values()[start..start + tx]);
        }
    }
    Ok(Subvolume {
        origin,
        volume: Volume3D::new(sub, values)?,
    })
}

/// Clips the stack and returns the windows whose mean exceeds the mean of
/// the whole clipped stack.
pub fn preprocess_neuron_stack(
    stack: &Volume3D,
    config: &NeuronPreprocessConfig,
) -> Result<Vec<Subvolume>> {
    let clipped = clip_stack(stack.clone(), config.clip_threshold);
    gated_window_origins(&clipped, config)?
        .into_iter()
        .map(|o| extract_window(&clipped, o, config))
        .collect()
}
