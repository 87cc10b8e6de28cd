//! Fixtures shared by the benchmarks.

use rangemix_core::walk::sample_range;
use rangemix_core::{OccupancyGrid, RngSeed, TorusConfig};

/// Range of the walk at `u = 1` on the 3-torus of side `n`.
pub fn range(n: usize, seed: u64) -> OccupancyGrid {
    let cfg = TorusConfig::new(3, n, 1.0).expect("valid torus");
    sample_range(&cfg, RngSeed::new(seed, 0), false).expect("range").0
}
