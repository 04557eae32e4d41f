//! Patterned imaging pipeline.
//!
//! For pattern `H_t` the clean focal-plane image is
//!
//! ```text
//! Y_t = [ (((exPSF ⊛3 H_t) ∘ X0) ⊛2 sPSF_z) ⊛3 emPSF ](z_focal) · photon_scale
//! ```
//!
//! where `H_t` is embedded as a single plane at `z_focal` of a volume shaped
//! like `X0`, `⊛2` convolves each plane with the kernel assigned to its depth,
//! and every convolution is cropped back to its input shape with the kernel
//! center aligned. The ground truth is `(exPSF ⊛3 X0)(z_focal) · photon_scale`.
//!
//! [`simulate_clean`] evaluates exactly that composition. With FFT
//! convolution and zero padding it works plane by plane in the Fourier domain
//! and never materializes the 3D intermediates; any other configuration runs
//! the literal sequence of [`conv3d`] and [`conv2d_per_plane`] calls.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{fast_len, fft3, mul, mul_into, Fft2};
use crate::grid::{Image2D, Volume3D, VolumeGrid};
use crate::rng::RngStream;
use crate::scatter::SpsfStack;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvMode {
    #[default]
    Fft,
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PadMode {
    #[default]
    Zero,
    /// Mirror about the edge, repeating the edge sample (`… b a | a b …`).
    Reflect,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForwardConfig {
    /// Index of the focal plane in the object volume.
    pub z_focal: usize,
    #[serde(default)]
    pub conv_mode: ConvMode,
    #[serde(default)]
    pub pad_mode: PadMode,
    /// Depth of the focal plane below the surface in µm. Plane `z` sits at
    /// `focal_depth_um + (z - z_focal)·dz`.
    #[serde(default)]
    pub focal_depth_um: f64,
}

impl ForwardConfig {
    pub fn new(z_focal: usize) -> Self {
        Self {
            z_focal,
            conv_mode: ConvMode::Fft,
            pad_mode: PadMode::Zero,
            focal_depth_um: 0.0,
        }
    }

    pub fn plane_depth_um(&self, z: usize, dz: f64) -> f64 {
        self.focal_depth_um + (z as f64 - self.z_focal as f64) * dz
    }
}

/// Binary excitation masks on the object's lateral grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternSet {
    masks: Vec<Image2D>,
    seed: u64,
}

impl PatternSet {
    pub fn new(masks: Vec<Image2D>, seed: u64) -> Result<Self> {
        let first = masks
            .first()
            .ok_or_else(|| Error::invalid("patterns", "need at least one mask"))?;
        if masks.iter().any(|m| !m.same_shape(first)) {
            return Err(Error::ShapeMismatch("pattern masks differ in size".into()));
        }
        Ok(Self { masks, seed })
    }

    pub fn masks(&self) -> &[Image2D] {
        &self.masks
    }

    pub fn t(&self) -> usize {
        self.masks.len()
    }

    pub fn nx(&self) -> usize {
        self.masks[0].nx()
    }

    pub fn ny(&self) -> usize {
        self.masks[0].ny()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_binary(&self) -> bool {
        self.masks
            .iter()
            .all(|m| m.values().iter().all(|&v| v == 0.0 || v == 1.0))
    }

    /// Fraction of pixels whose value varies across the masks.
    pub fn modulated_fraction(&self) -> f64 {
        let n = self.nx() * self.ny();
        let varying = (0..n)
            .filter(|&i| {
                let v0 = self.masks[0].values()[i];
                self.masks.iter().any(|m| m.values()[i] != v0)
            })
            .count();
        varying as f64 / n as f64
    }

    /// Checks that masks are binary and that at least 99% of pixels are
    /// modulated. Needs `t ≥ 2`.
    pub fn check_modulation(&self) -> Result<()> {
        if !self.is_binary() {
            return Err(Error::invalid("patterns", "mask values must be 0 or 1"));
        }
        if self.t() < 2 {
            return Err(Error::invalid(
                "patterns",
                "modulation needs at least two masks",
            ));
        }
        let f = self.modulated_fraction();
        if f < 0.99 {
            return Err(Error::invalid(
                "patterns",
                format!("only {:.2}% of pixels are modulated", 100.0 * f),
            ));
        }
        Ok(())
    }
}

/// `t` i.i.d. Bernoulli(`fill`) masks of `ny × nx`; mask `i` draws from
/// `split(i)` of the stream `(seed, 0)`.
pub fn make_patterns(t: usize, nx: usize, ny: usize, fill: f64, seed: u64) -> Result<PatternSet> {
    if t == 0 {
        return Err(Error::invalid("t", "need at least one pattern"));
    }
    if !(fill > 0.0 && fill < 1.0) {
        return Err(Error::invalid(
            "fill",
            format!("must lie in (0, 1), got {fill}"),
        ));
    }
    let base = RngStream::new(seed, 0);
    let masks = (0..t)
        .into_par_iter()
        .map(|i| {
            let mut rng = base.split(i as u64);
            let v = (0..nx * ny)
                .map(|_| if rng.uniform() < fill { 1.0 } else { 0.0 })
                .collect();
            Image2D::new(nx, ny, 1.0, v)
        })
        .collect::<Result<Vec<_>>>()?;
    PatternSet::new(masks, seed)
}

/// Pre-detection images and the matching ground truth, in expected photons.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanStack {
    pub images: Vec<Image2D>,
    pub ground_truth: Image2D,
}

fn pad_index(p: i64, n: usize, mode: PadMode) -> Option<usize> {
    let n = n as i64;
    if (0..n).contains(&p) {
        return Some(p as usize);
    }
    match mode {
        PadMode::Zero => None,
        PadMode::Reflect => {
            let q = p.rem_euclid(2 * n);
            Some(if q >= n { 2 * n - 1 - q } else { q } as usize)
        }
    }
}

fn check_kernel_fits(volume: &VolumeGrid, kernel: &VolumeGrid) -> Result<()> {
    let (vx, vy, vz) = volume.dims();
    let (kx, ky, kz) = kernel.dims();
    if kx > vx || ky > vy || kz > vz {
        return Err(Error::ShapeMismatch(format!(
            "kernel {kx}x{ky}x{kz} exceeds volume {vx}x{vy}x{vz}"
        )));
    }
    Ok(())
}

/// Linear 3D convolution cropped to the volume shape, kernel center
/// (`m / 2` per axis) aligned with the output voxel.
pub fn conv3d(volume: &Volume3D, kernel: &Volume3D, config: &ForwardConfig) -> Result<Volume3D> {
    check_kernel_fits(volume.grid(), kernel.grid())?;
    match config.conv_mode {
        ConvMode::Direct => Ok(conv3d_direct(volume, kernel, config.pad_mode)),
        ConvMode::Fft => Ok(conv3d_fft(volume, kernel, config.pad_mode)),
    }
}

fn conv3d_direct(volume: &Volume3D, kernel: &Volume3D, pad: PadMode) -> Volume3D {
    let g = *volume.grid();
    let (nx, ny, nz) = g.dims();
    let (mx, my, mz) = kernel.grid().dims();
    let (cx, cy, cz) = ((mx / 2) as i64, (my / 2) as i64, (mz / 2) as i64);
    let taps: Vec<(i64, i64, i64, f64)> = (0..kernel.values().len())
        .filter_map(|i| {
            let k = kernel.values()[i];
            let (x, y, z) = kernel.grid().coords(i);
            (k != 0.0).then_some((x as i64 - cx, y as i64 - cy, z as i64 - cz, k))
        })
        .collect();
    let out: Vec<f64> = (0..g.len())
        .into_par_iter()
        .map(|i| {
            let (x, y, z) = g.coords(i);
            let mut acc = 0.0;
            for &(dx, dy, dz, k) in &taps {
                let sx = pad_index(x as i64 - dx, nx, pad);
                let sy = pad_index(y as i64 - dy, ny, pad);
                let sz = pad_index(z as i64 - dz, nz, pad);
                if let (Some(sx), Some(sy), Some(sz)) = (sx, sy, sz) {
                    acc += k * volume.get(sx, sy, sz);
                }
            }
            acc
        })
        .collect();
    Volume3D::new(g, out).expect("finite inputs give finite sums")
}

fn conv3d_fft(volume: &Volume3D, kernel: &Volume3D, pad: PadMode) -> Volume3D {
    let g = *volume.grid();
    let (nx, ny, nz) = g.dims();
    let (mx, my, mz) = kernel.grid().dims();
    // the padded volume spans n + m - 1 samples, starting m - 1 - c before 0
    let ex = (nx + mx - 1, ny + my - 1, nz + mz - 1);
    let off = (
        (mx - 1 - mx / 2) as i64,
        (my - 1 - my / 2) as i64,
        (mz - 1 - mz / 2) as i64,
    );
    let l = (fast_len(ex.0), fast_len(ex.1), fast_len(ex.2));
    let len = l.0 * l.1 * l.2;
    let at = |x: usize, y: usize, z: usize| (z * l.1 + y) * l.0 + x;

    let mut a = vec![Complex64::default(); len];
    for z in 0..ex.2 {
        let Some(sz) = pad_index(z as i64 - off.2, nz, pad) else {
            continue;
        };
        for y in 0..ex.1 {
            let Some(sy) = pad_index(y as i64 - off.1, ny, pad) else {
                continue;
            };
            for x in 0..ex.0 {
                if let Some(sx) = pad_index(x as i64 - off.0, nx, pad) {
                    a[at(x, y, z)].re = volume.get(sx, sy, sz);
                }
            }
        }
    }
    let mut b = vec![Complex64::default(); len];
    for z in 0..mz {
        for y in 0..my {
            for x in 0..mx {
                b[at(x, y, z)].re = kernel.get(x, y, z);
            }
        }
    }
    fft3(&mut a, l, false);
    fft3(&mut b, l, false);
    a.iter_mut().zip(&b).for_each(|(p, q)| *p *= q);
    fft3(&mut a, l, true);
    let scale = 1.0 / len as f64;
    Volume3D::from_fn(g, |x, y, z| {
        a[at(x + mx - 1, y + my - 1, z + mz - 1)].re * scale
    })
    .expect("finite inputs give finite sums")
}

/// Index of the stack kernel assigned to each plane of a volume.
///
/// Each plane takes the nearest stack depth. A plane further than
/// `max(largest stack spacing, dz) / 2` from every stack depth is uncovered.
/// A single-kernel stack is depth invariant and covers every plane.
pub fn assign_kernels(
    grid: &VolumeGrid,
    stack: &SpsfStack,
    config: &ForwardConfig,
) -> Result<Vec<usize>> {
    let depths = stack.depths_um();
    if depths.len() == 1 {
        return Ok(vec![0; grid.nz()]);
    }
    let spacing = depths.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    let tolerance = spacing.max(grid.dz()) / 2.0;
    // absorbs rounding of depths that sit exactly half a spacing away
    let slack = 1e-9 * (1.0 + tolerance);
    (0..grid.nz())
        .map(|z| {
            let d = config.plane_depth_um(z, grid.dz());
            let (best, dist) = depths
                .iter()
                .enumerate()
                .map(|(i, &s)| (i, (s - d).abs()))
                .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
            if dist > tolerance + slack {
                Err(Error::MissingDepthCoverage {
                    plane: z,
                    depth_um: d,
                    tolerance_um: tolerance,
                })
            } else {
                Ok(best)
            }
        })
        .collect()
}

fn check_stack_fits(grid: &VolumeGrid, stack: &SpsfStack) -> Result<()> {
    let m = stack.kernel_px();
    if m > grid.nx() || m > grid.ny() {
        return Err(Error::ShapeMismatch(format!(
            "sPSF kernel {m}x{m} exceeds plane {}x{}",
            grid.nx(),
            grid.ny()
        )));
    }
    Ok(())
}

/// Convolves each plane with its assigned sPSF, cropped to the plane shape.
pub fn conv2d_per_plane(
    volume: &Volume3D,
    stack: &SpsfStack,
    config: &ForwardConfig,
) -> Result<Volume3D> {
    let g = *volume.grid();
    check_stack_fits(&g, stack)?;
    let assign = assign_kernels(&g, stack, config)?;
    let kernels: Vec<Volume3D> = stack
        .kernels()
        .iter()
        .map(|k| k.kernel.to_volume(g.dz()))
        .collect::<Result<_>>()?;
    let mut out = Volume3D::zeros(g);
    for (z, &k) in assign.iter().enumerate() {
        let plane = volume.plane_image(z).to_volume(g.dz())?;
        let conv = conv3d(&plane, &kernels[k], config)?;
        out.plane_mut(z).copy_from_slice(conv.values());
    }
    Ok(out)
}

fn pattern_volume(mask: &Image2D, grid: &VolumeGrid, z_focal: usize) -> Result<Volume3D> {
    let mut v = Volume3D::zeros(*grid);
    v.plane_mut(z_focal).copy_from_slice(mask.values());
    Ok(v)
}

fn focal_image(v: &Volume3D, z: usize, scale: f64) -> Image2D {
    let mut img = v.plane_image(z);
    img.values_mut().iter_mut().for_each(|p| *p *= scale);
    img
}

fn validate_inputs(
    object: &Volume3D,
    patterns: &PatternSet,
    ex_psf: &Volume3D,
    em_psf: &Volume3D,
    stack: &SpsfStack,
    config: &ForwardConfig,
    photon_scale: f64,
) -> Result<Vec<usize>> {
    let g = object.grid();
    if config.z_focal >= g.nz() {
        return Err(Error::invalid(
            "z_focal",
            format!(
                "plane {} outside a volume of {} planes",
                config.z_focal,
                g.nz()
            ),
        ));
    }
    if patterns.nx() != g.nx() || patterns.ny() != g.ny() {
        return Err(Error::ShapeMismatch(format!(
            "patterns are {}x{}, object planes {}x{}",
            patterns.nx(),
            patterns.ny(),
            g.nx(),
            g.ny()
        )));
    }
    if !(photon_scale.is_finite() && photon_scale > 0.0) {
        return Err(Error::invalid(
            "photon_scale",
            format!("must be positive, got {photon_scale}"),
        ));
    }
    check_kernel_fits(g, ex_psf.grid())?;
    check_kernel_fits(g, em_psf.grid())?;
    check_stack_fits(g, stack)?;
    assign_kernels(g, stack, config)
}

/// Runs the full pipeline for every pattern and synthesizes the ground truth.
pub fn simulate_clean(
    object: &Volume3D,
    patterns: &PatternSet,
    ex_psf: &Volume3D,
    em_psf: &Volume3D,
    stack: &SpsfStack,
    config: &ForwardConfig,
    photon_scale: f64,
) -> Result<CleanStack> {
    let assign = validate_inputs(
        object,
        patterns,
        ex_psf,
        em_psf,
        stack,
        config,
        photon_scale,
    )?;
    if config.conv_mode == ConvMode::Fft && config.pad_mode == PadMode::Zero {
        let engine = PlaneEngine::new(object, ex_psf, em_psf, stack, &assign, config.z_focal);
        let images = (0..patterns.t())
            .into_par_iter()
            .map(|t| engine.pattern_image(&patterns.masks()[t], photon_scale))
            .collect();
        return Ok(CleanStack {
            images,
            ground_truth: engine.ground_truth(photon_scale),
        });
    }

    let zf = config.z_focal;
    let images = (0..patterns.t())
        .into_par_iter()
        .map(|t| {
            let run = || -> Result<Image2D> {
                let h = pattern_volume(&patterns.masks()[t], object.grid(), zf)?;
                let mut a = conv3d(&h, ex_psf, config)?;
                a.values_mut()
                    .iter_mut()
                    .zip(object.values())
                    .for_each(|(p, o)| *p *= o);
                let s = conv2d_per_plane(&a, stack, config)?;
                let y = conv3d(&s, em_psf, config)?;
                Ok(focal_image(&y, zf, photon_scale))
            };
            run().map_err(|e| Error::AtPattern {
                index: t,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let gt = conv3d(object, ex_psf, config)?;
    Ok(CleanStack {
        images,
        ground_truth: focal_image(&gt, zf, photon_scale),
    })
}

/// Photon scale at which a unit voxel on the focal plane, far from the
/// edges, yields `photons` expected photons under an all-ones pattern with
/// no scattering.
pub fn calibrate_photon_scale(ex_psf: &Volume3D, em_psf: &Volume3D, photons: f64) -> Result<f64> {
    let (_, _, cz) = ex_psf.grid().center();
    let w: f64 = ex_psf.plane(cz).iter().sum();
    let (ex, ey, ez) = em_psf.grid().center();
    let e = em_psf.get(ex, ey, ez);
    let scale = photons / (w * e);
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::invalid(
            "psf",
            "center planes must carry positive weight",
        ));
    }
    Ok(scale)
}

/// Fourier-domain evaluation of the pipeline for zero padding.
///
/// All spectra share one padded grid large enough for the widest kernel, so
/// each stage is an exact linear convolution followed by the same crop the
/// literal composition applies.
struct PlaneEngine<'a> {
    fft: Fft2,
    object: &'a Volume3D,
    nx: usize,
    ny: usize,
    nz: usize,
    z_focal: usize,
    ex_c: (usize, usize, usize),
    em_c: (usize, usize, usize),
    sp_c: usize,
    ex_spec: Vec<Vec<Complex64>>,
    em_spec: Vec<Vec<Complex64>>,
    sp_spec: Vec<Option<Vec<Complex64>>>,
    assign: Vec<usize>,
}

impl<'a> PlaneEngine<'a> {
    fn new(
        object: &'a Volume3D,
        ex_psf: &Volume3D,
        em_psf: &Volume3D,
        stack: &SpsfStack,
        assign: &[usize],
        z_focal: usize,
    ) -> Self {
        let (nx, ny, nz) = object.grid().dims();
        let (exx, exy, exz) = ex_psf.grid().dims();
        let (emx, emy, emz) = em_psf.grid().dims();
        let sp = stack.kernel_px();
        let mx = exx.max(emx).max(sp);
        let my = exy.max(emy).max(sp);
        let fft = Fft2::new(fast_len(nx + mx - 1), fast_len(ny + my - 1));
        let ex_spec = (0..exz)
            .map(|z| fft.forward(ex_psf.plane(z), exx, exy))
            .collect();
        let em_spec = (0..emz)
            .map(|z| fft.forward(em_psf.plane(z), emx, emy))
            .collect();
        let mut sp_spec = vec![None; stack.len()];
        for &k in assign {
            if sp_spec[k].is_none() {
                sp_spec[k] = Some(fft.forward(stack.kernels()[k].kernel.values(), sp, sp));
            }
        }
        Self {
            fft,
            object,
            nx,
            ny,
            nz,
            z_focal,
            ex_c: (exx / 2, exy / 2, exz / 2),
            em_c: (emx / 2, emy / 2, emz / 2),
            sp_c: sp / 2,
            ex_spec,
            em_spec,
            sp_spec,
            assign: assign.to_vec(),
        }
    }

    /// Kernel plane of a PSF with `m` planes and center `c` linking object
    /// plane `z` to the focal plane.
    fn link(&self, z: usize, m: usize, c: usize) -> Option<usize> {
        let k = z as i64 - self.z_focal as i64 + c as i64;
        (0..m as i64).contains(&k).then_some(k as usize)
    }

    fn link_back(&self, z: usize, m: usize, c: usize) -> Option<usize> {
        let k = self.z_focal as i64 - z as i64 + c as i64;
        (0..m as i64).contains(&k).then_some(k as usize)
    }

    fn conv_crop(&self, spec: Vec<Complex64>, cx: usize, cy: usize) -> Vec<f64> {
        let full = self.fft.inverse(spec);
        self.fft.crop(&full, cx, cy, self.nx, self.ny)
    }

    fn pattern_image(&self, mask: &Image2D, scale: f64) -> Image2D {
        let h = self.fft.forward(mask.values(), self.nx, self.ny);
        let mut acc = vec![Complex64::default(); self.fft.spectrum_len()];
        let mut any = false;
        for z in 0..self.nz {
            // excitation reaching plane z from the pattern at the focal plane
            let Some(kx) = self.link(z, self.ex_spec.len(), self.ex_c.2) else {
                continue;
            };
            // emission from plane z reaching the focal plane
            let Some(km) = self.link_back(z, self.em_spec.len(), self.em_c.2) else {
                continue;
            };
            let obj = self.object.plane(z);
            if obj.iter().all(|&v| v == 0.0) {
                continue;
            }
            let ex = self.conv_crop(mul(&h, &self.ex_spec[kx]), self.ex_c.0, self.ex_c.1);
            let a: Vec<f64> = ex.iter().zip(obj).map(|(e, o)| e * o).collect();
            let sp = self.sp_spec[self.assign[z]]
                .as_ref()
                .expect("assigned kernels are transformed");
            let s = self.conv_crop(
                mul(&self.fft.forward(&a, self.nx, self.ny), sp),
                self.sp_c,
                self.sp_c,
            );
            mul_into(
                &mut acc,
                &self.fft.forward(&s, self.nx, self.ny),
                &self.em_spec[km],
            );
            any = true;
        }
        let mut values = if any {
            self.conv_crop(acc, self.em_c.0, self.em_c.1)
        } else {
            vec![0.0; self.nx * self.ny]
        };
        values.iter_mut().for_each(|v| *v *= scale);
        Image2D::new(self.nx, self.ny, self.object.grid().dx(), values).expect("finite spectra")
    }

    fn ground_truth(&self, scale: f64) -> Image2D {
        let mut acc = vec![Complex64::default(); self.fft.spectrum_len()];
        for z in 0..self.nz {
            let Some(kx) = self.link_back(z, self.ex_spec.len(), self.ex_c.2) else {
                continue;
            };
            let obj = self.object.plane(z);
            mul_into(
                &mut acc,
                &self.fft.forward(obj, self.nx, self.ny),
                &self.ex_spec[kx],
            );
        }
        let mut values = self.conv_crop(acc, self.ex_c.0, self.ex_c.1);
        values.iter_mut().for_each(|v| *v *= scale);
        Image2D::new(self.nx, self.ny, self.object.grid().dx(), values).expect("finite spectra")
    }
}
