//! Multi-layer solutions of the periodic vector Allen-Cahn equation built from
//! heteroclinic connections, their reduced (layer) dynamics, and the tools to
//! compare the reduction against full simulations.

pub mod chain;
pub mod error;
pub mod grid;
pub mod heteroclinic;
pub mod layer_ode;
pub mod linalg;
pub mod pde;
pub mod potential;
pub mod reduction;
pub mod tracking;

pub use error::{Error, Result};
