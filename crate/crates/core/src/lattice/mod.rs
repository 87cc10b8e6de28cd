//! Torus geometry, occupancy grids, induced subgraphs, edge boundaries and
//! connectivity.

mod geometry;
mod grid;
pub mod io;

pub use geometry::{Geometry, LatticeBox, TorusConfig};
pub use grid::{
    connected_components, edge_boundary, is_connected, periodic_window_of, restrict, CellSet, EdgeBoundary,
    OccupancyGrid,
};

use crate::error::Result;

/// The `2d` periodic nearest neighbors of `cell`, as a multiset: for
/// `N = 2` each neighbor appears twice since `+1` and `-1` coincide.
pub fn neighbors(cell: usize, geom: &Geometry) -> Result<Vec<usize>> {
    geom.check_index(cell)?;
    let mut out = Vec::with_capacity(2 * geom.dim());
    geom.for_each_neighbor(cell, |j| out.push(j));
    Ok(out)
}
