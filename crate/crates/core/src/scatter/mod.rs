//! Monte Carlo photon transport and scattering kernels (sPSFs).
//!
//! A photon is launched at `(0, 0, -z0)` in a uniformly random direction,
//! hops with exponential free paths and deflects by Henyey–Greenstein angles
//! until it crosses the surface `z = 0`. Photons exiting within the NA cone
//! are traced back along the exit ray to the source plane; the histogram of
//! those landing points is the sPSF. There is no absorption and no
//! refraction at the surface.

mod photon;
mod sampling;
mod spsf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use photon::{
    sample_isotropic_direction, trace_photon, trace_photon_from, PhotonFate, PhotonState,
    SpsfRequest, DEFAULT_MAX_SCATTER_EVENTS, DEFAULT_PHOTON_BUDGET,
};
pub use sampling::{
    sample_azimuth, sample_deflection_cos, sample_free_path, spin_direction, G_ISO_EPS,
};
pub use spsf::{
    generate_spsf, generate_spsf_stack, Spsf, SpsfStack, StackProvenance, PHOTON_CHUNK,
};

pub const DEFAULT_N_MEDIUM: f64 = 1.33;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TissueOptics {
    /// Scattering coefficient in 1/µm.
    pub mu_s: f64,
    /// Henyey–Greenstein anisotropy.
    pub g: f64,
}

impl Default for TissueOptics {
    /// Brain-tissue-like optics: 50 µm scattering length, forward-peaked.
    fn default() -> Self {
        Self { mu_s: 0.02, g: 0.9 }
    }
}

impl TissueOptics {
    pub fn new(mu_s: f64, g: f64) -> Result<Self> {
        let o = Self { mu_s, g };
        o.validate()?;
        Ok(o)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu_s.is_finite() && self.mu_s > 0.0) {
            return Err(Error::invalid(
                "mu_s",
                format!("must be positive, got {}", self.mu_s),
            ));
        }
        if !(-1.0..=1.0).contains(&self.g) {
            return Err(Error::invalid(
                "g",
                format!("must lie in [-1, 1], got {}", self.g),
            ));
        }
        Ok(())
    }

    /// Scattering length `1 / mu_s` in µm.
    pub fn scattering_length(&self) -> f64 {
        1.0 / self.mu_s
    }

    pub fn sl_to_um(&self, sl: f64) -> f64 {
        sl / self.mu_s
    }

    pub fn um_to_sl(&self, um: f64) -> f64 {
        um * self.mu_s
    }
}
