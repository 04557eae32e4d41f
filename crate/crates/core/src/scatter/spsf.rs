//! Histogramming of accepted landing points into scattering kernels.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::photon::{trace_photon, PhotonFate, SpsfRequest};
use crate::error::{Error, Result};
use crate::grid::Image2D;
use crate::rng::RngStream;

/// Photons per work unit. Unit `i` of a run draws from `rng.split(i)`, so the
/// kernel depends on this constant but not on the worker count.
pub const PHOTON_CHUNK: u64 = 8192;

/// Fraction of accepted photons that may land outside the kernel window
/// before a warning is logged.
const TAIL_WARN_FRACTION: f64 = 0.01;

/// A normalized scattering kernel with its photon accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct Spsf {
    pub kernel: Image2D,
    pub depth_sl: f64,
    pub launched: u64,
    /// Photons that exited inside the NA cone, in or out of the window.
    pub accepted: u64,
    pub in_window: u64,
    pub outside_aperture: u64,
    pub discarded: u64,
    /// `in_window / launched`.
    pub capture_fraction: f64,
}

impl Spsf {
    /// Unit impulse at the kernel center, used for planes that need no
    /// scattering.
    pub fn delta(kernel_px: usize, pitch: f64, depth_sl: f64) -> Result<Self> {
        if kernel_px % 2 == 0 {
            return Err(Error::invalid(
                "kernel_px",
                format!("must be odd, got {kernel_px}"),
            ));
        }
        let mut kernel = Image2D::zeros(kernel_px, kernel_px, pitch)?;
        kernel.set(kernel_px / 2, kernel_px / 2, 1.0);
        Ok(Self {
            kernel,
            depth_sl,
            launched: 0,
            accepted: 0,
            in_window: 0,
            outside_aperture: 0,
            discarded: 0,
            capture_fraction: 1.0,
        })
    }

    /// Wraps an arbitrary nonnegative kernel, normalized to unit sum.
    pub fn from_kernel(kernel: Image2D, depth_sl: f64) -> Result<Self> {
        if kernel.nx() != kernel.ny() || kernel.nx() % 2 == 0 {
            return Err(Error::invalid(
                "kernel",
                format!(
                    "must be square with odd size, got {}x{}",
                    kernel.nx(),
                    kernel.ny()
                ),
            ));
        }
        if kernel.values().iter().any(|&v| v < 0.0) {
            return Err(Error::invalid("kernel", "values must be nonnegative"));
        }
        let sum = kernel.sum();
        if sum <= 0.0 {
            return Err(Error::invalid("kernel", "sum must be positive"));
        }
        let mut kernel = kernel;
        kernel.values_mut().iter_mut().for_each(|v| *v /= sum);
        Ok(Self {
            kernel,
            depth_sl,
            launched: 0,
            accepted: 0,
            in_window: 0,
            outside_aperture: 0,
            discarded: 0,
            capture_fraction: 1.0,
        })
    }

    pub fn kernel_px(&self) -> usize {
        self.kernel.nx()
    }

    pub fn pitch(&self) -> f64 {
        self.kernel.pitch()
    }

    /// Mean kernel value in rings of one pixel width around the center.
    ///
    /// Ring `r` holds pixels whose distance from the center rounds to `r`;
    /// rings stop at the inscribed radius.
    pub fn radial_profile(&self) -> Vec<f64> {
        let n = self.kernel_px();
        let c = (n / 2) as f64;
        let rings = n / 2 + 1;
        let mut sum = vec![0.0; rings];
        let mut count = vec![0usize; rings];
        for y in 0..n {
            for x in 0..n {
                let r = (x as f64 - c).hypot(y as f64 - c).round() as usize;
                if r < rings {
                    sum[r] += self.kernel.get(x, y);
                    count[r] += 1;
                }
            }
        }
        sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect()
    }

    /// Full width at half maximum of the radial profile, in µm.
    ///
    /// Half maximum is taken relative to the center ring and the crossing is
    /// linearly interpolated; an impulse measures one pitch.
    pub fn fwhm(&self) -> Result<f64> {
        let p = self.radial_profile();
        let half = p[0] / 2.0;
        for i in 1..p.len() {
            if p[i] < half {
                let r = (i - 1) as f64 + (p[i - 1] - half) / (p[i - 1] - p[i]);
                return Ok(2.0 * r * self.pitch());
            }
        }
        Err(Error::FwhmUndefined {
            axis: crate::grid::Axis::X,
        })
    }

    /// Second lateral moment `Σ K·(x² + y²)` of the kernel in µm².
    pub fn lateral_variance(&self) -> f64 {
        let n = self.kernel_px();
        let c = (n / 2) as f64;
        let p2 = self.pitch() * self.pitch();
        let mut m = 0.0;
        for y in 0..n {
            for x in 0..n {
                let (dx, dy) = (x as f64 - c, y as f64 - c);
                m += self.kernel.get(x, y) * (dx * dx + dy * dy);
            }
        }
        m * p2
    }
}

#[derive(Debug, Clone)]
struct Tally {
    hist: Vec<u64>,
    launched: u64,
    accepted: u64,
    in_window: u64,
    outside_aperture: u64,
    discarded: u64,
}

impl Tally {
    fn empty(cells: usize) -> Self {
        Self {
            hist: vec![0; cells],
            launched: 0,
            accepted: 0,
            in_window: 0,
            outside_aperture: 0,
            discarded: 0,
        }
    }

    fn merge(mut self, other: Tally) -> Tally {
        for (a, b) in self.hist.iter_mut().zip(&other.hist) {
            *a += b;
        }
        self.launched += other.launched;
        self.accepted += other.accepted;
        self.in_window += other.in_window;
        self.outside_aperture += other.outside_aperture;
        self.discarded += other.discarded;
        self
    }
}

fn run_chunk(req: &SpsfRequest, mut rng: RngStream, photons: u64) -> Tally {
    let n = req.kernel_px;
    let half = (n / 2) as f64;
    let mut t = Tally::empty(n * n);
    for _ in 0..photons {
        t.launched += 1;
        match trace_photon(req, &mut rng) {
            PhotonFate::Accepted { x, y, .. } => {
                t.accepted += 1;
                let ix = (x / req.pitch).round() + half;
                let iy = (y / req.pitch).round() + half;
                if ix >= 0.0 && iy >= 0.0 && ix < n as f64 && iy < n as f64 {
                    t.hist[iy as usize * n + ix as usize] += 1;
                    t.in_window += 1;
                }
            }
            PhotonFate::OutsideAperture => t.outside_aperture += 1,
            PhotonFate::Discarded => t.discarded += 1,
        }
    }
    t
}

/// Simulates `req.photon_budget` photons and histograms the accepted landing
/// points on a `kernel_px`² grid centered on the source axis.
pub fn generate_spsf(req: &SpsfRequest, rng: &RngStream) -> Result<Spsf> {
    req.validate()?;
    let n = req.kernel_px;
    let chunks = req.photon_budget.div_ceil(PHOTON_CHUNK);
    let tally = (0..chunks)
        .into_par_iter()
        .map(|i| {
            let photons = PHOTON_CHUNK.min(req.photon_budget - i * PHOTON_CHUNK);
            run_chunk(req, rng.split(i), photons)
        })
        .reduce(|| Tally::empty(n * n), Tally::merge);

    if tally.in_window == 0 {
        return Err(Error::NoPhotonsAccepted {
            depth_sl: req.source_depth_sl,
            na: req.na,
            budget: req.photon_budget,
        });
    }
    let excluded = tally.accepted - tally.in_window;
    if excluded as f64 > TAIL_WARN_FRACTION * tally.accepted as f64 {
        log::warn!(
            "sPSF at {} SL: {:.2}% of accepted photons land outside the {}x{} window; widen kernel_px or pitch",
            req.source_depth_sl,
            100.0 * excluded as f64 / tally.accepted as f64,
            n,
            n
        );
    }
    if tally.discarded > 0 {
        log::debug!(
            "sPSF at {} SL: {} photons hit the scatter cap",
            req.source_depth_sl,
            tally.discarded
        );
    }
    let total = tally.in_window as f64;
    let values = tally.hist.iter().map(|&c| c as f64 / total).collect();
    Ok(Spsf {
        kernel: Image2D::new(n, n, req.pitch, values)?,
        depth_sl: req.source_depth_sl,
        launched: tally.launched,
        accepted: tally.accepted,
        in_window: tally.in_window,
        outside_aperture: tally.outside_aperture,
        discarded: tally.discarded,
        capture_fraction: tally.in_window as f64 / tally.launched as f64,
    })
}

/// Settings a stack was simulated with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackProvenance {
    pub base_request: SpsfRequest,
    pub seed: u64,
    pub stream_id: u64,
    /// Human-readable description of how photons map to random streams.
    pub partition: String,
}

/// Scattering kernels for a list of depths below the surface.
#[derive(Debug, Clone, PartialEq)]
pub struct SpsfStack {
    depths_um: Vec<f64>,
    kernels: Vec<Spsf>,
    provenance: Option<StackProvenance>,
}

impl SpsfStack {
    pub fn new(depths_um: Vec<f64>, kernels: Vec<Spsf>) -> Result<Self> {
        if depths_um.is_empty() || depths_um.len() != kernels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} depths for {} kernels",
                depths_um.len(),
                kernels.len()
            )));
        }
        if depths_um.iter().any(|d| !d.is_finite()) || depths_um.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(
                "depths",
                "must be finite and strictly increasing",
            ));
        }
        let n = kernels[0].kernel_px();
        if kernels
            .iter()
            .any(|k| k.kernel.nx() != n || k.kernel.ny() != n)
        {
            return Err(Error::ShapeMismatch("stack kernels differ in size".into()));
        }
        Ok(Self {
            depths_um,
            kernels,
            provenance: None,
        })
    }

    /// A single impulse kernel, i.e. no scattering at any depth.
    pub fn delta(kernel_px: usize, pitch: f64) -> Result<Self> {
        Self::new(vec![0.0], vec![Spsf::delta(kernel_px, pitch, 0.0)?])
    }

    pub fn depths_um(&self) -> &[f64] {
        &self.depths_um
    }

    pub fn kernels(&self) -> &[Spsf] {
        &self.kernels
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn kernel_px(&self) -> usize {
        self.kernels[0].kernel_px()
    }

    pub fn provenance(&self) -> Option<&StackProvenance> {
        self.provenance.as_ref()
    }

    pub fn with_provenance(mut self, provenance: StackProvenance) -> Self {
        self.provenance = Some(provenance);
        self
    }
}

/// Simulates one kernel per depth; depth `j` draws from `rng.split(j)`.
///
/// Depths at or above the surface get an impulse kernel.
pub fn generate_spsf_stack(
    depths_sl: &[f64],
    base: &SpsfRequest,
    rng: &RngStream,
) -> Result<SpsfStack> {
    if depths_sl.is_empty() {
        return Err(Error::invalid("depths_sl", "must not be empty"));
    }
    if depths_sl.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("depths_sl", "must be strictly increasing"));
    }
    let mut kernels = Vec::with_capacity(depths_sl.len());
    for (j, &d) in depths_sl.iter().enumerate() {
        let spsf = if d <= 0.0 {
            Spsf::delta(base.kernel_px, base.pitch, d)
        } else {
            generate_spsf(&base.with_depth(d), &rng.split(j as u64))
        };
        kernels.push(spsf.map_err(|e| Error::AtDepth {
            depth_sl: d,
            source: Box::new(e),
        })?);
    }
    let depths_um = depths_sl.iter().map(|&d| base.optics.sl_to_um(d)).collect();
    Ok(SpsfStack::new(depths_um, kernels)?.with_provenance(StackProvenance {
        base_request: base.clone(),
        seed: rng.seed(),
        stream_id: rng.stream_id(),
        partition: format!(
            "depth j uses split(j) of the stack stream; photons in chunks of {PHOTON_CHUNK}, chunk i uses split(i) of the depth stream"
        ),
    }))
}
