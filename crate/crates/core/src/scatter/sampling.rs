//! Elementary samplers of a single scattering step.

use std::f64::consts::TAU;

/// Below this |g| the Henyey–Greenstein inversion is replaced by its
/// isotropic limit.
pub const G_ISO_EPS: f64 = 1e-6;

/// Below this lateral direction norm the photon is treated as travelling
/// along ±z and the rotation uses the axis-aligned form.
const AXIAL_EPS: f64 = 1e-12;

/// Exponential free path `-ln(1 - rnd) / mu_s` in µm.
#[inline]
pub fn sample_free_path(mu_s: f64, rnd: f64) -> f64 {
    -(-rnd).ln_1p() / mu_s
}

/// Henyey–Greenstein deflection cosine for a uniform `rnd` in `[0, 1]`.
#[inline]
pub fn sample_deflection_cos(g: f64, rnd: f64) -> f64 {
    if g.abs() <= G_ISO_EPS {
        return (2.0 * rnd - 1.0).clamp(-1.0, 1.0);
    }
    if g.abs() == 1.0 {
        return g;
    }
    // the inversion maps the endpoints to ∓1 analytically; rounding does not
    if rnd <= 0.0 {
        return -1.0;
    }
    if rnd >= 1.0 {
        return 1.0;
    }
    let g2 = g * g;
    let frac = (1.0 - g2) / (1.0 - g + 2.0 * g * rnd);
    ((1.0 + g2 - frac * frac) / (2.0 * g)).clamp(-1.0, 1.0)
}

#[inline]
pub fn sample_azimuth(rnd: f64) -> f64 {
    TAU * rnd
}

/// Rotates the unit vector `dir` by polar angle `acos(cos_theta)` about
/// itself, at azimuth `psi` in the local frame.
pub fn spin_direction(dir: [f64; 3], cos_theta: f64, psi: f64) -> [f64; 3] {
    let [ux, uy, uz] = dir;
    let cos_t = cos_theta.clamp(-1.0, 1.0);
    let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
    let (sin_p, cos_p) = psi.sin_cos();
    let temp = ux.hypot(uy);
    let out = if temp < AXIAL_EPS {
        let sign = if uz >= 0.0 { 1.0 } else { -1.0 };
        [sin_t * cos_p, sin_t * sin_p, sign * cos_t]
    } else {
        [
            sin_t * (ux * uz * cos_p - uy * sin_p) / temp + ux * cos_t,
            sin_t * (uy * uz * cos_p + ux * sin_p) / temp + uy * cos_t,
            -sin_t * cos_p * temp + uz * cos_t,
        ]
    };
    normalize(out)
}

#[inline]
pub(crate) fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}
