//! Quantum first-passage-time distributions (QFPTDs) of a heated harmonic
//! oscillator probed by stroboscopic step-pulse measurements.
//!
//! The crate is organised bottom-up:
//!
//! - [`fock`]: truncated number basis, ladder operators, blue-sideband couplings.
//! - [`heating`]: the high-temperature amplitude reservoir as a master equation,
//!   as a quantum-jump unraveling, and as an absorbing-boundary solver.
//! - [`step_gate`] and [`pulse_table`]: the composite-phase step pulse, its
//!   Kraus pair and beam-pointing noise.
//! - [`designer`]: bounded least-squares synthesis of step pulses.
//! - [`fpt`]: ideal and hardware-realistic QFPTD pipelines and their analysis.
//! - [`classical`]: the noise-driven classical oscillator used as an oracle.
//! - [`estimators`]: multinomial statistics for trial data.
//!
//! All dynamics use dimensionless time `t = ṅ·t'`, so the heating rate is 1.

pub mod classical;
pub mod designer;
pub mod error;
pub mod estimators;
pub mod fock;
pub mod fpt;
pub mod heating;
pub mod lsq;
pub mod pulse_table;
pub mod seeds;
pub mod step_gate;

pub use error::{Error, Result};
