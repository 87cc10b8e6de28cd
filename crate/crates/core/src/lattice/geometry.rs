use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of a cubic cell array: either the periodic torus `(Z/NZ)^d` or a
/// finite window `anchor + [0, side)^d` of `Z^d`.
///
/// Cells are indexed row-major over `(x_1, ..., x_d)`: the last coordinate
/// varies fastest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GeometrySpec", into = "GeometrySpec")]
pub struct Geometry {
    dim: usize,
    side: usize,
    periodic: bool,
    anchor: Vec<i64>,
    cells: usize,
    strides: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct GeometrySpec {
    dim: usize,
    side: usize,
    periodic: bool,
    anchor: Vec<i64>,
}

impl TryFrom<GeometrySpec> for Geometry {
    type Error = Error;
    fn try_from(s: GeometrySpec) -> Result<Self> {
        if s.periodic {
            Geometry::torus(s.dim, s.side)
        } else {
            Geometry::window(s.anchor, s.side)
        }
    }
}

impl From<Geometry> for GeometrySpec {
    fn from(g: Geometry) -> Self {
        GeometrySpec { dim: g.dim, side: g.side, periodic: g.periodic, anchor: g.anchor }
    }
}

fn cell_count(dim: usize, side: usize) -> Result<usize> {
    let mut cells: usize = 1;
    for _ in 0..dim {
        cells = cells
            .checked_mul(side)
            .ok_or_else(|| Error::Overflow(format!("{side}^{dim} cells do not fit in usize")))?;
    }
    Ok(cells)
}

impl Geometry {
    pub fn torus(dim: usize, side: usize) -> Result<Self> {
        Self::build(dim, side, true, vec![0; dim])
    }

    pub fn window(anchor: Vec<i64>, side: usize) -> Result<Self> {
        let dim = anchor.len();
        Self::build(dim, side, false, anchor)
    }

    fn build(dim: usize, side: usize, periodic: bool, anchor: Vec<i64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("dimension must be positive".into()));
        }
        if side == 0 {
            return Err(Error::InvalidConfig("side must be positive".into()));
        }
        let cells = cell_count(dim, side)?;
        let mut strides = vec![1usize; dim];
        for i in (0..dim.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * side;
        }
        Ok(Geometry { dim, side, periodic, anchor, cells, strides })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    pub fn anchor(&self) -> &[i64] {
        &self.anchor
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn check_index(&self, index: usize) -> Result<()> {
        if index < self.cells {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange { index, cells: self.cells })
        }
    }

    /// Local coordinates in `[0, side)^d`.
    pub fn coords(&self, index: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim];
        self.coords_into(index, &mut out);
        out
    }

    pub fn coords_into(&self, mut index: usize, out: &mut [usize]) {
        for (c, &s) in out.iter_mut().zip(&self.strides) {
            *c = index / s;
            index %= s;
        }
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        coords.iter().zip(&self.strides).map(|(c, s)| c * s).sum()
    }

    /// Position in `Z^d` (window anchor added; the torus uses `[0, N)^d`).
    pub fn point(&self, index: usize) -> Vec<i64> {
        let mut out = vec![0i64; self.dim];
        let mut rem = index;
        for i in 0..self.dim {
            out[i] = self.anchor[i] + (rem / self.strides[i]) as i64;
            rem %= self.strides[i];
        }
        out
    }

    /// Cell holding the point `z` of `Z^d`. The torus reduces coordinates
    /// modulo `N` (periodic embedding); a window returns `None` outside.
    pub fn index_of_point(&self, z: &[i64]) -> Option<usize> {
        let side = self.side as i64;
        let mut idx = 0usize;
        for i in 0..self.dim {
            let local = z[i] - self.anchor[i];
            let local = if self.periodic {
                local.rem_euclid(side)
            } else if (0..side).contains(&local) {
                local
            } else {
                return None;
            };
            idx += local as usize * self.strides[i];
        }
        Some(idx)
    }

    /// Neighbor along `axis` in direction `+1` (`up`) or `-1`. Always
    /// defined on the torus; `None` across a window edge.
    #[inline]
    pub fn step(&self, index: usize, axis: usize, up: bool) -> Option<usize> {
        let s = self.strides[axis];
        let c = (index / s) % self.side;
        if up {
            if c + 1 < self.side {
                Some(index + s)
            } else if self.periodic {
                Some(index + s - self.side * s)
            } else {
                None
            }
        } else if c > 0 {
            Some(index - s)
        } else if self.periodic {
            Some(index + (self.side - 1) * s)
        } else {
            None
        }
    }

    /// Visits each adjacent cell once per direction: `2d` calls on the torus
    /// (repeats when `N = 2`), fewer at window edges.
    #[inline]
    pub fn for_each_neighbor(&self, index: usize, mut f: impl FnMut(usize)) {
        for axis in 0..self.dim {
            if let Some(j) = self.step(index, axis, true) {
                f(j);
            }
            if let Some(j) = self.step(index, axis, false) {
                f(j);
            }
        }
    }

    /// Distinct adjacent cells, excluding `index` itself (relevant for `N = 1`).
    pub fn distinct_neighbors(&self, index: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(2 * self.dim);
        self.for_each_neighbor(index, |j| {
            if j != index && !out.contains(&j) {
                out.push(j);
            }
        });
        out
    }

    /// Per-axis displacement `b - a`, reduced to the shortest periodic
    /// representative on the torus.
    pub fn displacement(&self, a: usize, b: usize) -> Vec<i64> {
        let side = self.side as i64;
        let mut rem_a = a;
        let mut rem_b = b;
        let mut out = vec![0; self.dim];
        for i in 0..self.dim {
            let s = self.strides[i];
            let ca = (rem_a / s) as i64;
            let cb = (rem_b / s) as i64;
            rem_a %= s;
            rem_b %= s;
            let mut diff = cb - ca;
            if self.periodic {
                diff = diff.rem_euclid(side);
                if diff > side / 2 {
                    diff -= side;
                }
            }
            out[i] = diff;
        }
        out
    }

    /// `l^inf` distance (torus metric when periodic).
    pub fn linf_distance(&self, a: usize, b: usize) -> u64 {
        self.displacement(a, b).iter().map(|x| x.unsigned_abs()).max().unwrap_or(0)
    }

    pub fn l1_distance(&self, a: usize, b: usize) -> u64 {
        self.displacement(a, b).iter().map(|x| x.unsigned_abs()).sum()
    }
}

/// Parameters of the torus `(Z/NZ)^d` and walk-time density `u`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorusConfig {
    pub d: usize,
    pub n: usize,
    pub u: f64,
}

impl TorusConfig {
    pub fn new(d: usize, n: usize, u: f64) -> Result<Self> {
        let cfg = TorusConfig { d, n, u };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 3 {
            return Err(Error::InvalidConfig(format!("dimension d = {} must be at least 3", self.d)));
        }
        if self.n < 2 {
            return Err(Error::InvalidConfig(format!("side N = {} must be at least 2", self.n)));
        }
        if !(self.u.is_finite() && self.u > 0.0) {
            return Err(Error::InvalidConfig(format!("u = {} must be positive and finite", self.u)));
        }
        let cells = cell_count(self.d, self.n)?;
        if cells > u32::MAX as usize {
            return Err(Error::InvalidConfig(format!("N^d = {cells} cells exceed the 32-bit index space")));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn geometry(&self) -> Geometry {
        Geometry::torus(self.d, self.n).expect("validated torus geometry")
    }

    /// Walk length `floor(u N^d)`.
    pub fn walk_steps(&self) -> Result<u64> {
        let steps = (self.u * self.cells() as f64).floor();
        if !(steps.is_finite() && steps < 9.0e18) {
            return Err(Error::Overflow(format!("walk length u N^d = {steps} does not fit in u64")));
        }
        Ok(steps as u64)
    }
}

/// Axis-aligned cube `anchor + [0, side)^d`.
///
/// With `wrap` the box lives on the torus and its coordinates are read
/// modulo `N`; otherwise it must sit inside the embedding window `[0, N)^d`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeBox {
    pub anchor: Vec<i64>,
    pub side: usize,
    pub wrap: bool,
}

impl LatticeBox {
    pub fn new(anchor: Vec<i64>, side: usize, wrap: bool) -> Self {
        LatticeBox { anchor, side, wrap }
    }

    pub fn contains(&self, z: &[i64]) -> bool {
        self.anchor.iter().zip(z).all(|(&a, &x)| x >= a && x < a + self.side as i64)
    }
}
