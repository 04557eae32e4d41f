//! Row-major image and volume containers with physical voxel pitch.
//!
//! Lengths are micrometers throughout. Volumes are stored `(z, y, x)` with
//! `x` fastest, images `(y, x)`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        })
    }
}

/// Voxel counts and pitches of a 3D sampling grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid")]
pub struct VolumeGrid {
    nx: usize,
    ny: usize,
    nz: usize,
    dx: f64,
    dy: f64,
    dz: f64,
}

#[derive(Deserialize)]
struct RawGrid {
    nx: usize,
    ny: usize,
    nz: usize,
    dx: f64,
    dy: f64,
    dz: f64,
}

impl TryFrom<RawGrid> for VolumeGrid {
    type Error = Error;

    fn try_from(r: RawGrid) -> Result<Self> {
        VolumeGrid::new(r.nx, r.ny, r.nz, r.dx, r.dy, r.dz)
    }
}

impl VolumeGrid {
    pub fn new(nx: usize, ny: usize, nz: usize, dx: f64, dy: f64, dz: f64) -> Result<Self> {
        for (name, n) in [("nx", nx), ("ny", ny), ("nz", nz)] {
            if n == 0 {
                return Err(Error::invalid("grid", format!("{name} must be at least 1")));
            }
        }
        for (name, d) in [("dx", dx), ("dy", dy), ("dz", dz)] {
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::invalid(
                    "grid",
                    format!("{name} must be positive, got {d}"),
                ));
            }
        }
        nx.checked_mul(ny)
            .and_then(|v| v.checked_mul(nz))
            .ok_or_else(|| Error::invalid("grid", "voxel count overflows"))?;
        Ok(Self {
            nx,
            ny,
            nz,
            dx,
            dy,
            dz,
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn nz(&self) -> usize {
        self.nz
    }
    pub fn dx(&self) -> f64 {
        self.dx
    }
    pub fn dy(&self) -> f64 {
        self.dy
    }
    pub fn dz(&self) -> f64 {
        self.dz
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.nx, self.ny, self.nz)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn count(&self, axis: Axis) -> usize {
        match axis {
            Axis::X => self.nx,
            Axis::Y => self.ny,
            Axis::Z => self.nz,
        }
    }

    pub fn pitch(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.dx,
            Axis::Y => self.dy,
            Axis::Z => self.dz,
        }
    }

    /// Physical extent `n·d` along an axis.
    pub fn extent(&self, axis: Axis) -> f64 {
        self.count(axis) as f64 * self.pitch(axis)
    }

    /// Voxel index of the grid center (`n / 2` on each axis).
    pub fn center(&self) -> (usize, usize, usize) {
        (self.nx / 2, self.ny / 2, self.nz / 2)
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.nx && y < self.ny && z < self.nz);
        (z * self.ny + y) * self.nx + x
    }

    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize, usize) {
        let x = index % self.nx;
        let y = (index / self.nx) % self.ny;
        let z = index / (self.nx * self.ny);
        (x, y, z)
    }

    pub fn with_nz(&self, nz: usize) -> Result<Self> {
        Self::new(self.nx, self.ny, nz, self.dx, self.dy, self.dz)
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

/// Real-valued intensities on a [`VolumeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    grid: VolumeGrid,
    values: Vec<f64>,
}

impl Volume3D {
    pub fn new(grid: VolumeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {}x{}x{} grid",
                values.len(),
                grid.nx,
                grid.ny,
                grid.nz
            )));
        }
        check_finite(&values)?;
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: VolumeGrid) -> Self {
        Self {
            values: vec![0.0; grid.len()],
            grid,
        }
    }

    /// Builds a volume by evaluating `f(x, y, z)` at every voxel index.
    pub fn from_fn(
        grid: VolumeGrid,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.len());
        for z in 0..grid.nz {
            for y in 0..grid.ny {
                for x in 0..grid.nx {
                    values.push(f(x, y, z));
                }
            }
        }
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &VolumeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.values[self.grid.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: f64) {
        let i = self.grid.index(x, y, z);
        self.values[i] = v;
    }

    pub fn plane(&self, z: usize) -> &[f64] {
        let n = self.grid.nx * self.grid.ny;
        &self.values[z * n..(z + 1) * n]
    }

    pub fn plane_mut(&mut self, z: usize) -> &mut [f64] {
        let n = self.grid.nx * self.grid.ny;
        &mut self.values[z * n..(z + 1) * n]
    }

    /// Copies plane `z` into an image with the lateral pitch `dx`.
    pub fn plane_image(&self, z: usize) -> Image2D {
        Image2D {
            nx: self.grid.nx,
            ny: self.grid.ny,
            pitch: self.grid.dx,
            values: self.plane(z).to_vec(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.values.len() as f64
    }

    /// Index of the first maximal voxel.
    pub fn argmax(&self) -> (usize, usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        self.grid.coords(best)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }
}

/// Real-valued 2D image with a square pixel pitch.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    nx: usize,
    ny: usize,
    pitch: f64,
    values: Vec<f64>,
}

impl Image2D {
    pub fn new(nx: usize, ny: usize, pitch: f64, values: Vec<f64>) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::invalid("image", "dimensions must be at least 1"));
        }
        if !(pitch.is_finite() && pitch > 0.0) {
            return Err(Error::invalid(
                "image",
                format!("pitch must be positive, got {pitch}"),
            ));
        }
        if values.len() != nx * ny {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {nx}x{ny} image",
                values.len()
            )));
        }
        check_finite(&values)?;
        Ok(Self {
            nx,
            ny,
            pitch,
            values,
        })
    }

    pub fn zeros(nx: usize, ny: usize, pitch: f64) -> Result<Self> {
        Self::new(nx, ny, pitch, vec![0.0; nx * ny])
    }

    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn pitch(&self) -> f64 {
        self.pitch
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn same_shape(&self, other: &Image2D) -> bool {
        self.nx == other.nx && self.ny == other.ny
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.nx + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.values[y * self.nx + x] = v;
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.values.len() as f64
    }

    /// Wraps the image as a single-plane volume with the given axial pitch.
    pub fn to_volume(&self, dz: f64) -> Result<Volume3D> {
        let grid = VolumeGrid::new(self.nx, self.ny, 1, self.pitch, self.pitch, dz)?;
        Volume3D::new(grid, self.values.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_plane_grid() {
        let g = VolumeGrid::new(256, 256, 1, 0.5, 0.5, 1.0).unwrap();
        assert_eq!(g.len(), 65536);
        assert_eq!(g.extent(Axis::X), 128.0);
    }

    #[test]
    fn neuron_instance_grid() {
        let g = VolumeGrid::new(326, 326, 41, 0.25, 0.25, 1.0).unwrap();
        assert_eq!(g.dims(), (326, 326, 41));
        assert_eq!(g.center(), (163, 163, 20));
    }

    #[test]
    fn rejects_zero_counts_and_bad_pitch() {
        assert!(VolumeGrid::new(0, 1, 1, 1.0, 1.0, 1.0).is_err());
        assert!(VolumeGrid::new(1, 1, 1, 0.0, 1.0, 1.0).is_err());
        assert!(VolumeGrid::new(1, 1, 1, 1.0, -1.0, 1.0).is_err());
        assert!(VolumeGrid::new(1, 1, 1, 1.0, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn grid_deserialization_validates() {
        let bad = r#"{"nx":0,"ny":1,"nz":1,"dx":1.0,"dy":1.0,"dz":1.0}"#;
        assert!(serde_json::from_str::<VolumeGrid>(bad).is_err());
        let good = r#"{"nx":2,"ny":3,"nz":4,"dx":1.0,"dy":1.0,"dz":1.0}"#;
        assert_eq!(serde_json::from_str::<VolumeGrid>(good).unwrap().len(), 24);
    }

    #[test]
    fn volume_rejects_wrong_length_and_nan() {
        let g = VolumeGrid::new(2, 2, 2, 1.0, 1.0, 1.0).unwrap();
        assert!(matches!(
            Volume3D::new(g, vec![0.0; 7]),
            Err(Error::ShapeMismatch(_))
        ));
        let mut v = vec![0.0; 8];
        v[5] = f64::INFINITY;
        assert!(matches!(
            Volume3D::new(g, v),
            Err(Error::NonFinite { index: 5 })
        ));
    }

    #[test]
    fn argmax_and_planes() {
        let g = VolumeGrid::new(3, 2, 2, 1.0, 1.0, 1.0).unwrap();
        let v = Volume3D::from_fn(g, |x, y, z| (x + 10 * y + 100 * z) as f64).unwrap();
        assert_eq!(v.argmax(), (2, 1, 1));
        assert_eq!(v.plane(1)[0], 100.0);
        assert_eq!(v.plane_image(0).get(2, 1), 12.0);
    }

    proptest! {
        #[test]
        fn index_coords_round_trip(nx in 1usize..20, ny in 1usize..20, nz in 1usize..20, seed in any::<u64>()) {
            let g = VolumeGrid::new(nx, ny, nz, 1.0, 1.0, 1.0).unwrap();
            let x = (seed as usize) % nx;
            let y = (seed as usize / 7) % ny;
            let z = (seed as usize / 131) % nz;
            let i = g.index(x, y, z);
            prop_assert!(i < g.len());
            prop_assert_eq!(g.coords(i), (x, y, z));
        }
    }
}
