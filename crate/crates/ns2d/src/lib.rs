//! Pseudospectral simulation and verification suite for the damped,
//! white-forced 2D Navier-Stokes system on a large periodic box.
//!
//! The crate provides the spectral solver, the space-time weight machinery
//! with its Muckenhoupt A2 oracles, reproducible noise generation, energy
//! ledgers with stopping times, the coupled-pair engine built on stepwise
//! maximal coupling with a Girsanov drift, and batch experiment drivers.

pub mod basis;
pub mod coupling;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod field;
pub mod grid;
pub mod io;
pub mod ledger;
pub mod noise;
pub mod poincare;
pub mod rng;
pub mod spectral;
pub mod stats;
pub mod weights;

pub use error::{Error, Result};
pub use field::{ScalarField, SpectralField};
pub use grid::Grid;
