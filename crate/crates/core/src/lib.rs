//! Loss analysis for superconducting coplanar-waveguide resonators and
//! transmon qubits.
//!
//! * [`resonator`]: notch-type S21 fitting with diameter correction.
//! * [`tls`]: photon-number calibration and the power-dependent TLS loss model.
//! * [`qubit`]: T₁ extraction, Purcell decay and qubit loss budgets.
//! * [`participation`]: 2D electrostatic energy participation of thin
//!   interfacial dielectrics in a CPW cross-section.

pub mod io;
pub mod lsq;
pub mod participation;
pub mod qubit;
pub mod tls;
pub mod resonator;
pub mod types;
pub mod units;

pub use types::*;
