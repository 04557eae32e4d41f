use thiserror::Error;

use crate::grid::Axis;
use crate::io::FormatError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("grid extent along {axis} is {extent_um:.4} µm, needs at least {required_um:.4} µm")]
    GridTooSmall {
        axis: Axis,
        extent_um: f64,
        required_um: f64,
    },

    #[error("profile along {axis} never falls below half maximum inside the grid")]
    FwhmUndefined { axis: Axis },

    #[error("no photons accepted (depth {depth_sl} SL, NA {na}, budget {budget})")]
    NoPhotonsAccepted { depth_sl: f64, na: f64, budget: u64 },

    #[error("sPSF at depth {depth_sl} SL: {source}")]
    AtDepth {
        depth_sl: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("plane {plane} (depth {depth_um:.3} µm) has no sPSF within {tolerance_um:.3} µm")]
    MissingDepthCoverage {
        plane: usize,
        depth_um: f64,
        tolerance_um: f64,
    },

    #[error("pattern {index}: {source}")]
    AtPattern {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("instance {index}: {source}")]
    AtInstance {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("input count {k} exceeds gain table maximum {k_max}")]
    GainTableExceeded { k: u64, k_max: u64 },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("threshold {threshold} removes every voxel")]
    EmptyAfterThreshold { threshold: f64 },

    #[error("tiff: {0}")]
    Tiff(#[from] tiff::TiffError),

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
