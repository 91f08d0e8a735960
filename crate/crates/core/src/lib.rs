//! Simulation and analysis toolkit for a dual-rail atomic-frequency-comb
//! memory storing polarization qubits encoded in weak coherent pulses.
//!
//! * [`polarization`]: Jones calculus, qubit states, analyzer projectors
//! * [`benchmark`]: classical measure-and-prepare fidelity bound for Poissonian input
//! * [`memory`]: parametric storage channel and spectral comb filter
//! * [`detection`]: click statistics, dark counts, time histograms
//! * [`tomography`]: linear and maximum-likelihood reconstruction, bootstrap errors, fringe fits
//! * [`pipeline`]: run configuration and the command implementations

pub mod benchmark;
pub mod detection;
pub mod error;
pub mod exec;
pub mod memory;
pub mod pipeline;
pub mod plot;
pub mod polarization;
pub mod rng;
pub mod table;
pub mod tomography;

pub use error::{Error, Result};
