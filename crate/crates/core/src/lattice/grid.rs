use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::geometry::{Geometry, LatticeBox};
use crate::error::{Error, Result};

/// Strictly increasing list of cell indices of some grid.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CellSet(Vec<usize>);

impl CellSet {
    pub fn new() -> Self {
        CellSet(Vec::new())
    }

    /// Sorts and deduplicates.
    pub fn from_unsorted(mut cells: Vec<usize>) -> Self {
        cells.sort_unstable();
        cells.dedup();
        CellSet(cells)
    }

    /// Accepts an already strictly increasing list.
    pub fn from_sorted(cells: Vec<usize>) -> Result<Self> {
        if cells.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("cell list is not strictly increasing".into()));
        }
        Ok(CellSet(cells))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, cell: usize) -> bool {
        self.0.binary_search(&cell).is_ok()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }
}

impl FromIterator<usize> for CellSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        CellSet::from_unsorted(iter.into_iter().collect())
    }
}

/// Bit-per-cell indicator of a subset `S` of a torus or window, with a
/// cached popcount.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OccupancyGrid {
    geom: Geometry,
    bits: Vec<u64>,
    popcount: usize,
}

impl OccupancyGrid {
    pub fn empty(geom: Geometry) -> Self {
        let words = geom.cells().div_ceil(64);
        OccupancyGrid { geom, bits: vec![0; words], popcount: 0 }
    }

    pub fn full(geom: Geometry) -> Self {
        let mut g = Self::empty(geom);
        let cells = g.geom.cells();
        for w in g.bits.iter_mut() {
            *w = u64::MAX;
        }
        let tail = cells % 64;
        if tail != 0 {
            *g.bits.last_mut().unwrap() = (1u64 << tail) - 1;
        }
        g.popcount = cells;
        g
    }

    pub fn from_cells(geom: Geometry, cells: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut g = Self::empty(geom);
        for c in cells {
            g.geom.check_index(c)?;
            g.insert(c);
        }
        Ok(g)
    }

    /// Rebuilds from raw words; bits past the last cell must be clear.
    pub(crate) fn from_words(geom: Geometry, bits: Vec<u64>) -> Result<Self> {
        if bits.len() != geom.cells().div_ceil(64) {
            return Err(Error::Format("bit payload has the wrong length".into()));
        }
        let tail = geom.cells() % 64;
        if tail != 0 && bits.last().is_some_and(|w| w >> tail != 0) {
            return Err(Error::Format("padding bits past the last cell are set".into()));
        }
        let popcount = bits.iter().map(|w| w.count_ones() as usize).sum();
        Ok(OccupancyGrid { geom, bits, popcount })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    pub fn popcount(&self) -> usize {
        self.popcount
    }

    pub fn words(&self) -> &[u64] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, cell: usize) -> bool {
        (self.bits[cell >> 6] >> (cell & 63)) & 1 == 1
    }

    /// Marks `cell`; returns whether it was newly set.
    #[inline]
    pub fn insert(&mut self, cell: usize) -> bool {
        let w = &mut self.bits[cell >> 6];
        let mask = 1u64 << (cell & 63);
        if *w & mask == 0 {
            *w |= mask;
            self.popcount += 1;
            true
        } else {
            false
        }
    }

    pub fn remove(&mut self, cell: usize) -> bool {
        let w = &mut self.bits[cell >> 6];
        let mask = 1u64 << (cell & 63);
        if *w & mask != 0 {
            *w &= !mask;
            self.popcount -= 1;
            true
        } else {
            false
        }
    }

    /// Occupancy at a point of `Z^d` (periodic on the torus, `false`
    /// outside a window).
    pub fn get_point(&self, z: &[i64]) -> bool {
        self.geom.index_of_point(z).is_some_and(|i| self.get(i))
    }

    pub fn occupied(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().flat_map(|(wi, &w)| {
            let mut word = w;
            std::iter::from_fn(move || {
                if word == 0 {
                    None
                } else {
                    let b = word.trailing_zeros() as usize;
                    word &= word - 1;
                    Some(wi * 64 + b)
                }
            })
        })
    }

    pub fn cell_set(&self) -> CellSet {
        CellSet(self.occupied().collect())
    }

    /// Number of distinct occupied neighbors: the degree `d_x` in the
    /// induced subgraph.
    pub fn degree(&self, cell: usize) -> usize {
        self.geom.distinct_neighbors(cell).into_iter().filter(|&j| self.get(j)).count()
    }

    /// Number of undirected edges of the induced subgraph.
    pub fn edge_count(&self) -> usize {
        self.occupied().map(|c| self.degree(c)).sum::<usize>() / 2
    }

    pub fn complement_within(&self, a: &CellSet) -> CellSet {
        CellSet(self.occupied().filter(|&c| !a.contains(c)).collect())
    }
}

/// Unordered adjacent pairs `{x, y}` with `x` in `A` and `y` in `S \ A`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeBoundary {
    pub count: usize,
    /// Pairs `(x, y)` with `x` in `A`.
    pub edges: Vec<(usize, usize)>,
}

/// Edge boundary of `a` inside the occupied set of `s`.
pub fn edge_boundary(a: &CellSet, s: &OccupancyGrid) -> Result<EdgeBoundary> {
    let geom = s.geometry();
    let mut edges = Vec::new();
    for x in a.iter() {
        geom.check_index(x)?;
        if !s.get(x) {
            return Err(Error::NotSubset(x));
        }
        for y in geom.distinct_neighbors(x) {
            if s.get(y) && !a.contains(y) {
                edges.push((x, y));
            }
        }
    }
    Ok(EdgeBoundary { count: edges.len(), edges })
}

/// Maximal connected parts of the occupied set, each sorted, ordered by
/// smallest cell.
pub fn connected_components(s: &OccupancyGrid) -> Vec<CellSet> {
    let geom = s.geometry();
    let mut seen = OccupancyGrid::empty(geom.clone());
    let mut parts = Vec::new();
    let mut queue = VecDeque::new();
    for start in s.occupied() {
        if seen.get(start) {
            continue;
        }
        seen.insert(start);
        queue.push_back(start);
        let mut part = Vec::new();
        while let Some(x) = queue.pop_front() {
            part.push(x);
            geom.for_each_neighbor(x, |y| {
                if s.get(y) && seen.insert(y) {
                    queue.push_back(y);
                }
            });
        }
        parts.push(CellSet::from_unsorted(part));
    }
    parts
}

pub fn is_connected(s: &OccupancyGrid) -> bool {
    s.popcount() > 0 && connected_components(s).len() == 1
}

/// Cells of `s` inside `bx`, as a window grid anchored at the box corner.
///
/// A box equal to the whole torus (`wrap`, anchor `0`, side `N`) returns
/// the grid unchanged.
pub fn restrict(s: &OccupancyGrid, bx: &LatticeBox) -> Result<OccupancyGrid> {
    let geom = s.geometry();
    let d = geom.dim();
    if bx.anchor.len() != d {
        return Err(Error::MalformedBox(format!("anchor has {} coordinates, grid has dimension {d}", bx.anchor.len())));
    }
    if bx.side == 0 {
        return Err(Error::MalformedBox("side must be at least 1".into()));
    }
    let n = geom.side() as i64;
    if bx.wrap {
        if !geom.is_periodic() {
            return Err(Error::MalformedBox("wrapping box on a non-periodic grid".into()));
        }
        if bx.side as i64 > n {
            return Err(Error::MalformedBox(format!("wrapping box side {} exceeds N = {n}", bx.side)));
        }
        if bx.side as i64 == n && bx.anchor.iter().all(|a| a.rem_euclid(n) == 0) {
            return Ok(s.clone());
        }
    } else {
        let lo = geom.anchor();
        for i in 0..d {
            if bx.anchor[i] < lo[i] || bx.anchor[i] + bx.side as i64 > lo[i] + n {
                return Err(Error::MalformedBox(format!(
                    "box {:?}+[0,{}) leaves the embedding window on axis {i}",
                    bx.anchor, bx.side
                )));
            }
        }
    }
    let out_geom = Geometry::window(bx.anchor.clone(), bx.side)?;
    Ok(periodic_window_of(s, &out_geom))
}

/// Copies `s` into `window`, reading `s` through its own geometry (periodic
/// extension for a torus).
pub fn periodic_window_of(s: &OccupancyGrid, window: &Geometry) -> OccupancyGrid {
    let mut out = OccupancyGrid::empty(window.clone());
    for i in 0..window.cells() {
        if s.get_point(&window.point(i)) {
            out.insert(i);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::TorusConfig;

    fn torus(d: usize, n: usize) -> Geometry {
        Geometry::torus(d, n).unwrap()
    }

    #[test]
    fn neighbors_of_origin_d3() {
        let cfg = TorusConfig::new(3, 5, 1.0).unwrap();
        let g = cfg.geometry();
        let mut got = Vec::new();
        g.for_each_neighbor(0, |j| got.push(g.coords(j)));
        got.sort();
        let mut want = vec![vec![1, 0, 0], vec![4, 0, 0], vec![0, 1, 0], vec![0, 4, 0], vec![0, 0, 1], vec![0, 0, 4]];
        want.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn neighbors_wrap_at_n2() {
        let g = torus(3, 2);
        let got = crate::lattice::neighbors(0, &g).unwrap();
        assert_eq!(got.len(), 6);
        let mut coords: Vec<_> = got.iter().map(|&j| g.coords(j)).collect();
        coords.sort();
        assert_eq!(
            coords,
            vec![vec![0, 0, 1], vec![0, 0, 1], vec![0, 1, 0], vec![0, 1, 0], vec![1, 0, 0], vec![1, 0, 0]]
        );
        assert_eq!(g.distinct_neighbors(0).len(), 3);
    }

    #[test]
    fn neighbors_d4_distinct() {
        let g = torus(4, 10);
        for cell in [0, 1234, 9999, 5050] {
            let nb = crate::lattice::neighbors(cell, &g).unwrap();
            assert_eq!(nb.len(), 8);
            assert_eq!(g.distinct_neighbors(cell).len(), 8);
        }
        assert!(crate::lattice::neighbors(10_000, &g).is_err());
    }

    #[test]
    fn boundary_of_singleton_in_full_torus() {
        let full = OccupancyGrid::full(torus(3, 5));
        let b = edge_boundary(&CellSet::from_unsorted(vec![17]), &full).unwrap();
        assert_eq!(b.count, 6);
        assert_eq!(edge_boundary(&full.cell_set(), &full).unwrap().count, 0);
    }

    #[test]
    fn boundary_rejects_non_subset() {
        let s = OccupancyGrid::from_cells(torus(3, 4), [0, 1]).unwrap();
        let err = edge_boundary(&CellSet::from_unsorted(vec![0, 5]), &s).unwrap_err();
        assert!(matches!(err, Error::NotSubset(5)));
    }

    #[test]
    fn components_basic() {
        let g = torus(3, 5);
        assert!(connected_components(&OccupancyGrid::empty(g.clone())).is_empty());
        let full = connected_components(&OccupancyGrid::full(g.clone()));
        assert_eq!(full.len(), 1);
        assert_eq!(full[0].len(), 125);
        // (0,0,0) and (0,1,1) are at l1-distance 2
        let s = OccupancyGrid::from_cells(g.clone(), [0, g.index(&[0, 1, 1])]).unwrap();
        let parts = connected_components(&s);
        assert_eq!(parts.len(), 2);
        assert!(parts.iter().all(|p| p.len() == 1));
    }

    #[test]
    fn restrict_whole_torus_is_identity() {
        let g = torus(3, 4);
        let s = OccupancyGrid::from_cells(g, [0, 3, 17, 40]).unwrap();
        let r = restrict(&s, &LatticeBox::new(vec![0, 0, 0], 4, true)).unwrap();
        assert_eq!(r, s);
    }

    #[test]
    fn restrict_positive_box_misses_origin() {
        let g = torus(3, 6);
        let s = OccupancyGrid::from_cells(g, [0]).unwrap();
        let r = restrict(&s, &LatticeBox::new(vec![1, 1, 1], 4, false)).unwrap();
        assert_eq!(r.popcount(), 0);
        // a wrapping box straddling the seam sees exactly one copy
        let r = restrict(&s, &LatticeBox::new(vec![-2, -2, -2], 4, true)).unwrap();
        assert_eq!(r.popcount(), 1);
    }

    #[test]
    fn restrict_rejects_malformed() {
        let s = OccupancyGrid::full(torus(3, 6));
        assert!(restrict(&s, &LatticeBox::new(vec![0, 0], 2, false)).is_err());
        assert!(restrict(&s, &LatticeBox::new(vec![0, 0, 0], 0, false)).is_err());
        assert!(restrict(&s, &LatticeBox::new(vec![3, 0, 0], 4, false)).is_err());
        assert!(restrict(&s, &LatticeBox::new(vec![0, 0, 0], 7, true)).is_err());
    }

    #[test]
    fn full_grid_padding() {
        let g = OccupancyGrid::full(torus(3, 5));
        assert_eq!(g.popcount(), 125);
        assert_eq!(g.occupied().count(), 125);
        assert_eq!(g.edge_count(), 3 * 125);
    }
}
