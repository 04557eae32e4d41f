//! Forward-model simulation engine for patterned two-photon de-scattering
//! microscopy.
//!
//! The crate produces paired training data: stacks of patterned, scattered,
//! EMCCD-detected measurements together with a clean point-scanning-like
//! ground truth. The pipeline is
//!
//! ```text
//! object ──► (exPSF ⊛ pattern) ∘ object ──► per-plane sPSF ⊛ ──► emPSF ⊛ ──► focal plane ──► EMCCD
//! ```
//!
//! where the depth-dependent scattering kernels (sPSFs) come from a Monte
//! Carlo photon transport simulation ([`scatter`]).
//!
//! Modules:
//! - [`grid`], [`rng`]: numeric containers and reproducible random streams
//! - [`scatter`]: Monte Carlo photon transport and sPSF generation
//! - [`psf`]: parametric excitation/emission PSFs
//! - [`forward`]: the patterned imaging pipeline and ground-truth synthesis
//! - [`emccd`]: shot/dark/read noise and electron multiplication
//! - [`phantoms`]: bead phantoms and preprocessing of external stacks
//! - [`io`]: tensor files, instance records and dataset manifests
//! - [`dataset`]: end-to-end dataset synthesis

pub mod dataset;
pub mod emccd;
pub mod error;
mod fft;
pub mod forward;
pub mod grid;
pub mod io;
pub mod phantoms;
pub mod psf;
pub mod rng;
pub mod scatter;

pub use error::{Error, Result};
pub use grid::{Axis, Image2D, Volume3D, VolumeGrid};
pub use rng::RngStream;
