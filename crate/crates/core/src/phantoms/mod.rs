//! Object volumes: synthetic bead mixtures and preprocessing of external
//! neuron and vasculature stacks.

mod beads;
mod neuron;
mod tiff;
mod vessels;

pub use self::tiff::{read_tiff_stack, write_tiff_stack_u16};
pub use beads::{gen_beads, Bead, BeadPhantom, BeadSpec};
pub use neuron::{
    clip_stack, extract_window, gated_window_origins, neuron_window_origins,
    preprocess_neuron_stack, NeuronPreprocessConfig, Subvolume,
};
pub use vessels::{preprocess_vessels, rescaled_len, VesselPreprocessConfig};
