//! Statevector simulation kit for the three benchmark routines: the quantum
//! Fourier transform, quantum volume circuits and QAOA Max-Cut on a ring.
//!
//! Qubit ordering is little-endian throughout: qubit `q` is bit `q` of the
//! amplitude index.

pub mod circuit;
pub mod directive;
mod error;
pub mod gate;
pub mod haar;
pub mod memory;
pub mod scaling;
pub mod statevector;

pub use circuit::{build_qaoa_maxcut_ring, build_qaoa_with_angles, build_qft, build_qv, Circuit};
pub use directive::{format_sim_seconds, parse_sim_seconds, Directive, Routine, SIM_SECONDS_PREFIX};
pub use error::{SimError, SimResult};
pub use gate::{Gate, GateKind, Matrix4};
pub use haar::sample_su4;
pub use memory::{memory_estimate, MemoryEstimate, Precision};
pub use scaling::{paper_gate_scaling, ScalingParams};
pub use statevector::{run_statevector, StateVector};

pub use num_complex::Complex64;
