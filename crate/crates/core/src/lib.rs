//! Simulation, tomography and entanglement certification for two photons
//! sharing a four-dimensional path-entangled state carried by a pair of
//! multi-core fibers.
//!
//! The pipeline runs source amplitudes through a parametric fiber channel
//! ([`channel`]), projects both photons with programmable superposition
//! analyzers ([`measurement`]), reconstructs the density matrix from
//! coincidence counts ([`tomography`]) and evaluates concurrences and the
//! CGLMP Bell parameter ([`bell`]). [`pipeline`] ties it together behind a
//! config file and a deterministic report.

pub mod bell;
pub mod channel;
pub mod error;
pub mod linalg;
pub mod measurement;
pub mod pipeline;
pub mod qstate;
pub mod tomography;

pub use error::{Error, Result};
pub use qstate::{DensityMatrix, PureState};
