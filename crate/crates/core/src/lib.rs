//! Simple random walk ranges on the discrete torus `(Z/NZ)^d`: sampling,
//! lazy-walk mixing times, conductance profiles, multiscale good/bad
//! classification and random interlacements.

pub mod chain;
pub mod error;
pub mod harness;
pub mod interlacements;
pub mod isoperimetry;
pub mod lattice;
pub mod renorm;
pub mod rng;
pub mod stats;
pub mod walk;

pub use error::{Error, Result};
pub use lattice::{CellSet, Geometry, LatticeBox, OccupancyGrid, TorusConfig};
pub use rng::RngSeed;
