//! Spin-system Gibbs distributions, Markov-chain dynamics and exact
//! desk-scale mixing analysis.

pub mod error;
pub mod graphs;
pub mod poset;
pub mod spin;
pub mod dynamics;
pub mod exact;
pub mod experiment;
pub mod spectral;
pub mod couplings;
pub mod report;
pub mod acceptance;

pub use error::{Error, Result};
