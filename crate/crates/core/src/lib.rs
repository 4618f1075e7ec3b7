//! Simulation of entanglement distribution between two NV centers through
//! chains and ladders of dark impurity spins, with Markovian σˣ noise.
//!
//! Two backends integrate the same master equation: [`dense`] propagates the
//! full density matrix for small systems, [`tebd`] evolves a matrix product
//! operator in a Hermitian operator basis for larger ones. [`experiments`]
//! builds the channel-length, missing-spin and disorder studies on top.



pub mod basis;
pub mod config;
pub mod dense;
pub mod error;
pub mod experiments;

pub mod model;
pub mod mpo;

pub mod observables;
pub mod run;
pub mod tebd;



pub use error::{Error, Result};
