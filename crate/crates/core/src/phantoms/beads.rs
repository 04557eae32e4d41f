use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Volume3D, VolumeGrid};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeadSpec {
    pub small_radius_um: f64,
    pub large_radius_um: f64,
    /// Probability that a bead is small.
    pub small_fraction: f64,
    pub intensity_mean: f64,
    pub intensity_sd: f64,
    /// Intensity multiplier applied to small beads.
    pub small_bead_boost: f64,
    /// Inclusive range the per-volume bead count is drawn from.
    pub beads_per_volume: (usize, usize),
    pub grid: VolumeGrid,
}

impl BeadSpec {
    pub fn new(grid: VolumeGrid) -> Self {
        Self {
            small_radius_um: 1.5,
            large_radius_um: 6.0,
            small_fraction: 0.5,
            intensity_mean: 1.0,
            intensity_sd: 0.1,
            small_bead_boost: 5.0,
            beads_per_volume: (10, 60),
            grid,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.small_radius_um > 0.0 && self.large_radius_um > 0.0) {
            return Err(Error::invalid("bead radius", "radii must be positive"));
        }
        if !(0.0..=1.0).contains(&self.small_fraction) {
            return Err(Error::invalid(
                "small_fraction",
                format!("must lie in [0, 1], got {}", self.small_fraction),
            ));
        }
        if !(self.intensity_sd.is_finite() && self.intensity_sd >= 0.0) {
            return Err(Error::invalid("intensity_sd", "must be nonnegative"));
        }
        if !(self.small_bead_boost > 0.0) {
            return Err(Error::invalid("small_bead_boost", "must be positive"));
        }
        if self.beads_per_volume.0 > self.beads_per_volume.1 {
            return Err(Error::invalid("beads_per_volume", "range is empty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bead {
    /// Center in µm from the volume corner.
    pub center: [f64; 3],
    pub radius: f64,
    pub small: bool,
    /// The Normal(mean, sd) draw before the small-bead boost.
    pub base_intensity: f64,
    pub intensity: f64,
}

/// A bead volume together with the bead list and which bead owns each voxel.
#[derive(Debug, Clone)]
pub struct BeadPhantom {
    pub volume: Volume3D,
    pub beads: Vec<Bead>,
    /// Index into `beads` of the bead setting each voxel, if any.
    pub owner: Vec<Option<u32>>,
}

impl BeadPhantom {
    /// Sum and count of voxel values owned by small and by large beads.
    pub fn class_totals(&self) -> ((f64, usize), (f64, usize)) {
        let mut small = (0.0, 0);
        let mut large = (0.0, 0);
        for (v, o) in self.volume.values().iter().zip(&self.owner) {
            if let Some(i) = o {
                let t = if self.beads[*i as usize].small {
                    &mut small
                } else {
                    &mut large
                };
                t.0 += v;
                t.1 += 1;
            }
        }
        (small, large)
    }
}

/// Drops spheres at uniform random centers; overlapping voxels keep the
/// brightest bead.
pub fn gen_beads(spec: &BeadSpec, rng: &mut RngStream) -> Result<BeadPhantom> {
    spec.validate()?;
    let g = spec.grid;
    let (lo, hi) = spec.beads_per_volume;
    let count = lo + ((rng.uniform() * (hi - lo + 1) as f64) as usize).min(hi - lo);
    let normal = Normal::new(spec.intensity_mean, spec.intensity_sd)
        .map_err(|e| Error::invalid("intensity", e.to_string()))?;
    let mut beads = Vec::with_capacity(count);
    for _ in 0..count {
        let small = rng.uniform() < spec.small_fraction;
        let center = [
            rng.uniform() * g.extent(crate::Axis::X),
            rng.uniform() * g.extent(crate::Axis::Y),
            rng.uniform() * g.extent(crate::Axis::Z),
        ];
        let base_intensity = normal.sample(rng).max(0.0);
        beads.push(Bead {
            center,
            radius: if small {
                spec.small_radius_um
            } else {
                spec.large_radius_um
            },
            small,
            base_intensity,
            intensity: if small {
                base_intensity * spec.small_bead_boost
            } else {
                base_intensity
            },
        });
    }

    let mut volume = Volume3D::zeros(g);
    let mut owner = vec![None; g.len()];
    let span = |c: f64, r: f64, d: f64, n: usize| {
        let a = ((c - r) / d - 0.5).floor().max(0.0) as usize;
        let b = (((c + r) / d - 0.5).ceil().max(0.0) as usize).min(n - 1);
        a..=b
    };
    for (i, b) in beads.iter().enumerate() {
        let r2 = b.radius * b.radius;
        for z in span(b.center[2], b.radius, g.dz(), g.nz()) {
            let dz = (z as f64 + 0.5) * g.dz() - b.center[2];
            for y in span(b.center[1], b.radius, g.dy(), g.ny()) {
                let dy = (y as f64 + 0.5) * g.dy() - b.center[1];
                for x in span(b.center[0], b.radius, g.dx(), g.nx()) {
                    let dx = (x as f64 + 0.5) * g.dx() - b.center[0];
                    if dx * dx + dy * dy + dz * dz <= r2 {
                        let idx = g.index(x, y, z);
                        if owner[idx].is_none() || b.intensity > volume.values()[idx] {
                            volume.values_mut()[idx] = b.intensity;
                            owner[idx] = Some(i as u32);
                        }
                    }
                }
            }
        }
    }
    Ok(BeadPhantom {
        volume,
        beads,
        owner,
    })
}
