//! Single-photon random walk from an embedded source to the surface.

use serde::{Deserialize, Serialize};

use super::sampling::{sample_azimuth, sample_deflection_cos, sample_free_path, spin_direction};
use super::TissueOptics;
use crate::error::{Error, Result};
use crate::rng::RngStream;

pub const DEFAULT_MAX_SCATTER_EVENTS: u32 = 10_000;
pub const DEFAULT_PHOTON_BUDGET: u64 = 1_000_000;

/// Parameters of one sPSF simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpsfRequest {
    pub source_depth_sl: f64,
    pub optics: TissueOptics,
    pub na: f64,
    pub n_medium: f64,
    pub kernel_px: usize,
    /// Kernel pixel pitch in µm.
    pub pitch: f64,
    pub photon_budget: u64,
    #[serde(default = "default_max_events")]
    pub max_scatter_events: u32,
}

fn default_max_events() -> u32 {
    DEFAULT_MAX_SCATTER_EVENTS
}

impl SpsfRequest {
    /// Request with the default photon budget and event cap.
    pub fn new(
        source_depth_sl: f64,
        optics: TissueOptics,
        na: f64,
        n_medium: f64,
        kernel_px: usize,
        pitch: f64,
    ) -> Self {
        Self {
            source_depth_sl,
            optics,
            na,
            n_medium,
            kernel_px,
            pitch,
            photon_budget: DEFAULT_PHOTON_BUDGET,
            max_scatter_events: DEFAULT_MAX_SCATTER_EVENTS,
        }
    }

    pub fn with_depth(&self, source_depth_sl: f64) -> Self {
        Self {
            source_depth_sl,
            ..self.clone()
        }
    }

    /// Source depth below the surface in µm.
    pub fn z0(&self) -> f64 {
        self.optics.sl_to_um(self.source_depth_sl)
    }

    /// Largest accepted sine of the exit angle.
    pub fn sin_max(&self) -> f64 {
        self.na / self.n_medium
    }

    pub fn validate(&self) -> Result<()> {
        self.optics.validate()?;
        if !(self.source_depth_sl.is_finite() && self.source_depth_sl > 0.0) {
            return Err(Error::invalid(
                "source_depth_sl",
                format!("must be positive, got {}", self.source_depth_sl),
            ));
        }
        if !(self.n_medium.is_finite() && self.n_medium > 0.0) {
            return Err(Error::invalid(
                "n_medium",
                format!("must be positive, got {}", self.n_medium),
            ));
        }
        if !(self.na > 0.0 && self.na <= self.n_medium) {
            return Err(Error::invalid(
                "na",
                format!(
                    "must lie in (0, n_medium = {}], got {}",
                    self.n_medium, self.na
                ),
            ));
        }
        if self.kernel_px == 0 || self.kernel_px % 2 == 0 {
            return Err(Error::invalid(
                "kernel_px",
                format!("must be odd, got {}", self.kernel_px),
            ));
        }
        if !(self.pitch.is_finite() && self.pitch > 0.0) {
            return Err(Error::invalid(
                "pitch",
                format!("must be positive, got {}", self.pitch),
            ));
        }
        if self.photon_budget == 0 {
            return Err(Error::invalid("photon_budget", "must be at least 1"));
        }
        if self.max_scatter_events == 0 {
            return Err(Error::invalid("max_scatter_events", "must be at least 1"));
        }
        Ok(())
    }
}

/// Position, direction and scatter count of a photon in flight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotonState {
    pub position: [f64; 3],
    pub direction: [f64; 3],
    pub n_scatters: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhotonFate {
    /// Exited inside the NA cone; `(x, y)` is where the exit ray crosses the
    /// source plane.
    Accepted {
        x: f64,
        y: f64,
        n_scatters: u32,
    },
    OutsideAperture,
    /// Exceeded the scatter event cap.
    Discarded,
}

/// Uniform direction over the full sphere.
pub fn sample_isotropic_direction(rng: &mut RngStream) -> [f64; 3] {
    let uz = 2.0 * rng.uniform() - 1.0;
    let phi = sample_azimuth(rng.uniform());
    let s = (1.0 - uz * uz).max(0.0).sqrt();
    [s * phi.cos(), s * phi.sin(), uz]
}

/// Launches one photon at `(0, 0, -z0)` in a uniformly random direction and
/// walks it to the surface.
///
/// Assumes `req` has been validated.
pub fn trace_photon(req: &SpsfRequest, rng: &mut RngStream) -> PhotonFate {
    let dir = sample_isotropic_direction(rng);
    trace_photon_from(req, dir, rng)
}

/// Like [`trace_photon`] with a fixed initial direction.
pub fn trace_photon_from(req: &SpsfRequest, dir: [f64; 3], rng: &mut RngStream) -> PhotonFate {
    let z0 = req.z0();
    let mu_s = req.optics.mu_s;
    let g = req.optics.g;
    let sin_max = req.sin_max();
    let mut p = PhotonState {
        position: [0.0, 0.0, -z0],
        direction: dir,
        n_scatters: 0,
    };
    loop {
        let s = sample_free_path(mu_s, rng.uniform());
        let [x, y, z] = p.position;
        let [ux, uy, uz] = p.direction;
        if uz > 0.0 && z + s * uz >= 0.0 {
            let t = -z / uz;
            let (xe, ye) = (x + t * ux, y + t * uy);
            let sin_exit = ux.hypot(uy);
            if sin_exit > sin_max {
                return PhotonFate::OutsideAperture;
            }
            let back = z0 / uz;
            return PhotonFate::Accepted {
                x: xe - ux * back,
                y: ye - uy * back,
                n_scatters: p.n_scatters,
            };
        }
        p.position = [x + s * ux, y + s * uy, z + s * uz];
        if p.n_scatters >= req.max_scatter_events {
            return PhotonFate::Discarded;
        }
        p.n_scatters += 1;
        let cos_t = sample_deflection_cos(g, rng.uniform());
        let psi = sample_azimuth(rng.uniform());
        p.direction = spin_direction(p.direction, cos_t, psi);
    }
}
