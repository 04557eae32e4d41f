//! FFT helpers shared by the convolution code.

use std::sync::Arc;

use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Smallest `2^a·3^b·5^c` that is at least `n`.
pub(crate) fn fast_len(n: usize) -> usize {
    let mut best = n.next_power_of_two();
    let mut p5 = 1;
    while p5 < best {
        let mut p35 = p5;
        while p35 < best {
            let mut v = p35;
            while v < n {
                v *= 2;
            }
            best = best.min(v);
            p35 *= 3;
        }
        p5 *= 5;
    }
    best.max(1)
}

/// In-place complex 3D transform of a row-major `(z, y, x)` buffer.
/// The inverse is unnormalized.
pub(crate) fn fft3(data: &mut [Complex64], dims: (usize, usize, usize), inverse: bool) {
    let (nx, ny, nz) = dims;
    let mut planner = FftPlanner::<f64>::new();
    let plan = |p: &mut FftPlanner<f64>, n: usize| {
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    };
    let fx = plan(&mut planner, nx);
    for row in data.chunks_exact_mut(nx) {
        fx.process(row);
    }
    let fy = plan(&mut planner, ny);
    let mut buf = vec![Complex64::default(); ny];
    for z in 0..nz {
        let base = z * nx * ny;
        for x in 0..nx {
            for y in 0..ny {
                buf[y] = data[base + y * nx + x];
            }
            fy.process(&mut buf);
            for y in 0..ny {
                data[base + y * nx + x] = buf[y];
            }
        }
    }
    let fz = plan(&mut planner, nz);
    let mut buf = vec![Complex64::default(); nz];
    let plane = nx * ny;
    for i in 0..plane {
        for z in 0..nz {
            buf[z] = data[z * plane + i];
        }
        fz.process(&mut buf);
        for z in 0..nz {
            data[z * plane + i] = buf[z];
        }
    }
}

/// Real 2D transforms on a fixed `ly × lx` padded grid.
///
/// Spectra are row-major `ly × (lx/2 + 1)`.
pub(crate) struct Fft2 {
    lx: usize,
    ly: usize,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub(crate) fn new(lx: usize, ly: usize) -> Self {
        let mut rp = RealFftPlanner::<f64>::new();
        let mut cp = FftPlanner::<f64>::new();
        Self {
            lx,
            ly,
            r2c: rp.plan_fft_forward(lx),
            c2r: rp.plan_fft_inverse(lx),
            col_fwd: cp.plan_fft_forward(ly),
            col_inv: cp.plan_fft_inverse(ly),
        }
    }

    pub(crate) fn spectrum_len(&self) -> usize {
        self.ly * (self.lx / 2 + 1)
    }

    /// Transforms an `ny × nx` image placed at the origin of the padded grid.
    pub(crate) fn forward(&self, img: &[f64], nx: usize, ny: usize) -> Vec<Complex64> {
        debug_assert!(nx <= self.lx && ny <= self.ly && img.len() == nx * ny);
        let hx = self.lx / 2 + 1;
        let mut spec = vec![Complex64::default(); self.spectrum_len()];
        let mut row = vec![0.0; self.lx];
        for y in 0..ny {
            row[..nx].copy_from_slice(&img[y * nx..(y + 1) * nx]);
            row[nx..].fill(0.0);
            self.r2c
                .process(&mut row, &mut spec[y * hx..(y + 1) * hx])
                .expect("row lengths match the plan");
        }
        self.columns(&mut spec, false);
        spec
    }

    /// Inverse transform, normalized, returning the `ly × lx` real grid.
    /// Consumes `spec` as scratch.
    pub(crate) fn inverse(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        let hx = self.lx / 2 + 1;
        self.columns(&mut spec, true);
        let scale = 1.0 / (self.lx * self.ly) as f64;
        let mut out = vec![0.0; self.lx * self.ly];
        for y in 0..self.ly {
            let s = &mut spec[y * hx..(y + 1) * hx];
            // the real transform requires exactly real DC and Nyquist terms
            s[0].im = 0.0;
            if self.lx % 2 == 0 {
                s[hx - 1].im = 0.0;
            }
            self.c2r
                .process(s, &mut out[y * self.lx..(y + 1) * self.lx])
                .expect("row lengths match the plan");
        }
        out.iter_mut().for_each(|v| *v *= scale);
        out
    }

    /// Copies the `ny × nx` window starting at `(ox, oy)` out of a padded grid.
    pub(crate) fn crop(
        &self,
        full: &[f64],
        ox: usize,
        oy: usize,
        nx: usize,
        ny: usize,
    ) -> Vec<f64> {
        let mut out = Vec::with_capacity(nx * ny);
        for y in 0..ny {
            let start = (y + oy) * self.lx + ox;
            out.extend_from_slice(&full[start..start + nx]);
        }
        out
    }

    fn columns(&self, spec: &mut [Complex64], inverse: bool) {
        let hx = self.lx / 2 + 1;
        let plan = if inverse {
            &self.col_inv
        } else {
            &self.col_fwd
        };
        let mut buf = vec![Complex64::default(); self.ly];
        for x in 0..hx {
            for y in 0..self.ly {
                buf[y] = spec[y * hx + x];
            }
            plan.process(&mut buf);
            for y in 0..self.ly {
                spec[y * hx + x] = buf[y];
            }
        }
    }
}

pub(crate) fn mul_into(acc: &mut [Complex64], a: &[Complex64], b: &[Complex64]) {
    for ((o, x), y) in acc.iter_mut().zip(a).zip(b) {
        *o += x * y;
    }
}

pub(crate) fn mul(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}
