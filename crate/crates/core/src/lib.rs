//! Simulator for beam-splitter / cross-Kerr symmetry detectors acting on
//! twin-beam multiphoton states.

pub mod circuits;
pub mod cli;
pub mod error;
pub mod fock;
pub mod homodyne;
pub mod optics;
pub mod spdc;

pub use error::{Error, Result};
pub use fock::{fidelity, FockState, Mode, Occupation};
pub use homodyne::HybridState;
