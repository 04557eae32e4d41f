//! Parametric excitation and emission PSFs.
//!
//! Both are separable Gaussians: lateral `σ = 0.21·λ/NA` on the field
//! amplitude-squared (intensity), axial width given directly as a FWHM. The
//! excitation PSF is two-photon, so its intensity profile is squared before
//! normalization; `axial_fwhm` always describes the final profile.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Axis, Volume3D, VolumeGrid};

/// `2·sqrt(2·ln 2)`, the FWHM of a unit-σ Gaussian.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PsfKind {
    Excitation,
    Emission,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsfParams {
    /// Wavelength in µm.
    pub wavelength: f64,
    pub na: f64,
    pub n_medium: f64,
    /// Axial FWHM of the final PSF in µm.
    pub axial_fwhm: f64,
    pub kind: PsfKind,
}

impl PsfParams {
    pub fn default_excitation() -> Self {
        Self {
            wavelength: 1.035,
            na: 1.0,
            n_medium: 1.33,
            axial_fwhm: 3.0,
            kind: PsfKind::Excitation,
        }
    }

    pub fn default_emission() -> Self {
        Self {
            wavelength: 0.59,
            na: 1.0,
            n_medium: 1.33,
            axial_fwhm: 3.0,
            kind: PsfKind::Emission,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.wavelength.is_finite() && self.wavelength > 0.0) {
            return Err(Error::invalid(
                "wavelength",
                format!("must be positive, got {}", self.wavelength),
            ));
        }
        if !(self.n_medium.is_finite() && self.na > 0.0 && self.na < self.n_medium) {
            return Err(Error::invalid(
                "na",
                format!(
                    "must lie in (0, n_medium = {}), got {}",
                    self.n_medium, self.na
                ),
            ));
        }
        if !(self.axial_fwhm.is_finite() && self.axial_fwhm > 0.0) {
            return Err(Error::invalid(
                "axial_fwhm",
                format!("must be positive, got {}", self.axial_fwhm),
            ));
        }
        Ok(())
    }

    /// Lateral σ of the one-photon intensity profile in µm.
    pub fn sigma_xy(&self) -> f64 {
        0.21 * self.wavelength / self.na
    }

    /// Lateral FWHM of the final PSF in µm.
    pub fn lateral_fwhm(&self) -> f64 {
        match self.kind {
            PsfKind::Excitation => self.sigma_xy() * FWHM_PER_SIGMA / 2f64.sqrt(),
            PsfKind::Emission => self.sigma_xy() * FWHM_PER_SIGMA,
        }
    }
}

/// Samples the PSF on `grid`, centered on the center voxel, with unit sum.
pub fn make_psf(params: &PsfParams, grid: &VolumeGrid) -> Result<Volume3D> {
    params.validate()?;
    for axis in [Axis::X, Axis::Y, Axis::Z] {
        if grid.count(axis) % 2 == 0 {
            return Err(Error::invalid(
                "grid",
                format!(
                    "PSF grids need an odd voxel count along {axis}, got {}",
                    grid.count(axis)
                ),
            ));
        }
        let width = match axis {
            Axis::Z => params.axial_fwhm,
            _ => params.lateral_fwhm(),
        };
        let required = 4.0 * width;
        if grid.extent(axis) < required {
            return Err(Error::GridTooSmall {
                axis,
                extent_um: grid.extent(axis),
                required_um: required,
            });
        }
    }

    let squared = params.kind == PsfKind::Excitation;
    let s_xy = params.sigma_xy();
    let mut s_z = params.axial_fwhm / FWHM_PER_SIGMA;
    if squared {
        s_z *= 2f64.sqrt();
    }
    let profile = |n: usize, d: f64, s: f64| -> Vec<f64> {
        let c = (n / 2) as i64;
        (0..n)
            .map(|i| {
                let r = (i as i64 - c) as f64 * d;
                let v = (-r * r / (2.0 * s * s)).exp();
                if squared {
                    v * v
                } else {
                    v
                }
            })
            .collect()
    };
    let px = profile(grid.nx(), grid.dx(), s_xy);
    let py = profile(grid.ny(), grid.dy(), s_xy);
    let pz = profile(grid.nz(), grid.dz(), s_z);
    let total: f64 = px.iter().sum::<f64>() * py.iter().sum::<f64>() * pz.iter().sum::<f64>();
    Volume3D::from_fn(*grid, |x, y, z| px[x] * py[y] * pz[z] / total)
}

/// Linear-interpolated FWHM in µm of the profile along `axis` through the
/// first maximal voxel.
pub fn measure_fwhm(psf: &Volume3D, axis: Axis) -> Result<f64> {
    let (x0, y0, z0) = psf.argmax();
    let g = psf.grid();
    let n = g.count(axis);
    let at = |i: usize| match axis {
        Axis::X => psf.get(i, y0, z0),
        Axis::Y => psf.get(x0, i, z0),
        Axis::Z => psf.get(x0, y0, i),
    };
    let c = match axis {
        Axis::X => x0,
        Axis::Y => y0,
        Axis::Z => z0,
    };
    let half = at(c) / 2.0;
    if !(half > 0.0) {
        return Err(Error::FwhmUndefined { axis });
    }
    let right = (c + 1..n)
        .find(|&i| at(i) < half)
        .map(|i| (i - 1) as f64 + (at(i - 1) - half) / (at(i - 1) - at(i)));
    let left = (0..c)
        .rev()
        .find(|&i| at(i) < half)
        .map(|i| (i + 1) as f64 - (at(i + 1) - half) / (at(i + 1) - at(i)));
    match (left, right) {
        (Some(l), Some(r)) => Ok((r - l) * g.pitch(axis)),
        _ => Err(Error::FwhmUndefined { axis }),
    }
}
