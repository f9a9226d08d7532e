//! Simulator and analysis toolkit for entanglement-induced collective
//! multi-photon interference in disjoint beam-splitter networks.
//!
//! The crate evolves multi-photon states with polarisation internal degrees of
//! freedom through block-disjoint interferometers, computes correlators and
//! threshold-detector coincidence statistics with SPDC source models, and
//! drives the full phase-scan / background-subtraction / fitting / calibration
//! pipeline behind the `colliphase` command-line tool.

pub mod cli;
pub mod error;
pub mod experiment;
pub mod fock;
pub mod network;
pub mod observables;
pub mod optim;
pub mod sources;

pub use error::{Error, Result};
