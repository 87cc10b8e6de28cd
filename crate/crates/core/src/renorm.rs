//! Multiscale good/bad classification of a set embedded in a window of
//! `Z^d`, the window arithmetic `(s, K)`, the executable assumptions
//! (a)-(c), and the enlarged cluster.
//!
//! Grids passed here must use a window geometry. A range on the torus is
//! embedded first with [`crate::lattice::restrict`] or
//! [`crate::lattice::periodic_window_of`].

use std::collections::{HashMap, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{restrict, CellSet, Geometry, LatticeBox, OccupancyGrid, TorusConfig};
use crate::rng::RngSeed;
use crate::walk::{sample_range, GreenEstimate};

// ---------------------------------------------------------------------------
// Scale ladder

/// `l_n = lambda^2 4^{n^2}`, `r_n = lambda 2^{n^2}`, `L_{n+1} = l_n L_n`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleLadder {
    pub lambda: u64,
    pub l0: u64,
    /// `l_n` for `n < levels`.
    pub l: Vec<u128>,
    /// `r_n` for `n < levels`.
    pub r: Vec<u128>,
    /// `L_n` for `n <= levels`.
    pub big_l: Vec<u128>,
    /// Some `l_n = 1`, so `L_{n+1} = L_n`.
    pub degenerate: bool,
}

fn level_terms(lambda: u64, n: usize) -> Option<(u128, u128)> {
    let lam = lambda as u128;
    let sq = u32::try_from(n.checked_mul(n)?).ok()?;
    let l = lam.checked_mul(lam)?.checked_mul(4u128.checked_pow(sq)?)?;
    let r = lam.checked_mul(2u128.checked_pow(sq)?)?;
    Some((l, r))
}

pub fn build_ladder(lambda: u64, l0: u64, levels: usize) -> Result<ScaleLadder> {
    if lambda == 0 || l0 == 0 {
        return Err(Error::InvalidConfig("lambda and L0 must be at least 1".into()));
    }
    let mut ladder =
        ScaleLadder { lambda, l0, l: Vec::new(), r: Vec::new(), big_l: vec![l0 as u128], degenerate: false };
    for n in 0..levels {
        let (l, r) =
            level_terms(lambda, n).ok_or_else(|| Error::Overflow(format!("l_{n} does not fit in 128 bits")))?;
        let next = ladder.big_l[n]
            .checked_mul(l)
            .ok_or_else(|| Error::Overflow(format!("L_{} does not fit in 128 bits", n + 1)))?;
        ladder.degenerate |= l == 1;
        ladder.l.push(l);
        ladder.r.push(r);
        ladder.big_l.push(next);
    }
    Ok(ladder)
}

impl ScaleLadder {
    pub fn levels(&self) -> usize {
        self.l.len()
    }

    pub fn scale(&self, n: usize) -> Option<u128> {
        self.big_l.get(n).copied()
    }

    /// `sum_{j >= 0} r_j / l_j = sum_j 2^{-j^2} / lambda`.
    pub fn sum_r_over_l(&self) -> f64 {
        (0..12).map(|j| 2f64.powi(-(j * j))).sum::<f64>() / self.lambda as f64
    }

    fn scale_i64(&self, n: usize) -> Result<i64> {
        let v = self.scale(n).ok_or_else(|| Error::Precondition(format!("ladder has no level {n}")))?;
        i64::try_from(v).map_err(|_| Error::Overflow(format!("L_{n} exceeds the coordinate range")))
    }
}

// ---------------------------------------------------------------------------
// Density thresholds

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityParams {
    pub u: f64,
    pub epsilon: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub g00: f64,
    pub g00_err: f64,
}

/// Candidate sprinkling parameters, tried from the largest down.
pub const EPSILON_LADDER: [f64; 3] = [0.2, 0.1, 0.05];

/// `eta(v) = 1 - exp(-v / g)`.
pub fn eta(v: f64, g00: f64) -> f64 {
    1.0 - (-v / g00).exp()
}

impl DensityParams {
    /// `eta1 = 3/4 eta(u(1 - eps))`, `eta2 = 5/4 eta(u(1 + eps))`.
    pub fn new(u: f64, epsilon: f64, g00: f64, g00_err: f64) -> Result<Self> {
        if !(u > 0.0 && u.is_finite()) || !(epsilon > 0.0 && epsilon < 1.0) || !(g00 > 1.0 && g00.is_finite()) {
            return Err(Error::InvalidConfig(format!("invalid density parameters u={u} eps={epsilon} g={g00}")));
        }
        let p = DensityParams {
            u,
            epsilon,
            eta1: 0.75 * eta(u * (1.0 - epsilon), g00),
            eta2: 1.25 * eta(u * (1.0 + epsilon), g00),
            g00,
            g00_err,
        };
        if !p.satisfies_eta_condition() {
            return Err(Error::InvalidConfig(format!(
                "eta1 = {:.6}, eta2 = {:.6} violate eta1 <= eta2 < 2 eta1",
                p.eta1, p.eta2
            )));
        }
        Ok(p)
    }

    /// Largest epsilon in [`EPSILON_LADDER`] giving admissible thresholds.
    pub fn calibrate(u: f64, green: &GreenEstimate) -> Result<Self> {
        EPSILON_LADDER
            .iter()
            .find_map(|&e| DensityParams::new(u, e, green.value, green.std_err).ok())
            .ok_or_else(|| Error::InvalidConfig(format!("no epsilon in {EPSILON_LADDER:?} is admissible at u = {u}")))
    }

    /// Thresholds set directly; the eta condition is not enforced.
    pub fn explicit(eta1: f64, eta2: f64) -> Result<Self> {
        if !(eta1 >= 0.0 && eta1.is_finite() && eta2.is_finite()) {
            return Err(Error::InvalidConfig("thresholds must be finite".into()));
        }
        Ok(DensityParams { u: f64::NAN, epsilon: f64::NAN, eta1, eta2, g00: f64::NAN, g00_err: f64::NAN })
    }

    pub fn satisfies_eta_condition(&self) -> bool {
        self.eta1 > 0.0 && self.eta1 < 1.0 && self.eta1 <= self.eta2 && self.eta2 < 2.0 * self.eta1
    }

    /// Smallest admissible component size `ceil(eta1 L0^d)`.
    pub fn min_component(&self, l0: u64, d: usize) -> u64 {
        (self.eta1 * (l0 as f64).powi(d as i32)).ceil().max(0.0) as u64
    }

    /// Largest admissible box count `floor(eta2 L0^d)`.
    pub fn max_count(&self, l0: u64, d: usize) -> u64 {
        (self.eta2 * (l0 as f64).powi(d as i32)).floor().max(0.0) as u64
    }
}

// ---------------------------------------------------------------------------
// Level maps

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Good,
    Bad,
    Unknown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VertexStatus {
    pub a: Status,
    pub b: Status,
}

impl VertexStatus {
    /// `n`-good iff both `(na)` and `(nb)` good.
    pub fn combined(&self) -> Status {
        match (self.a, self.b) {
            (Status::Good, Status::Good) => Status::Good,
            (Status::Bad, _) | (_, Status::Bad) => Status::Bad,
            _ => Status::Unknown,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BadKind {
    A,
    B,
}

/// Status of the vertices `L_n k`, `k in lo + [0, extent)`, of `G_n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelMap {
    pub level: usize,
    pub spacing: i64,
    pub lo: Vec<i64>,
    pub extent: Vec<usize>,
    pub status: Vec<VertexStatus>,
}

impl LevelMap {
    fn slot(&self, k: &[i64]) -> Option<usize> {
        let mut idx = 0usize;
        for i in 0..k.len() {
            let off = k[i] - self.lo[i];
            if off < 0 || off >= self.extent[i] as i64 {
                return None;
            }
            idx = idx * self.extent[i] + off as usize;
        }
        Some(idx)
    }

    fn lattice_index(&self, mut slot: usize) -> Vec<i64> {
        let d = self.lo.len();
        let mut k = vec![0; d];
        for i in (0..d).rev() {
            k[i] = self.lo[i] + (slot % self.extent[i]) as i64;
            slot /= self.extent[i];
        }
        k
    }

    /// Status at the lattice point `x` (a multiple of the spacing).
    pub fn get(&self, x: &[i64]) -> Option<VertexStatus> {
        if x.iter().any(|c| c.rem_euclid(self.spacing) != 0) {
            return None;
        }
        let k: Vec<i64> = x.iter().map(|c| c.div_euclid(self.spacing)).collect();
        self.slot(&k).map(|s| self.status[s])
    }

    /// All vertices as `(point, status)`.
    pub fn vertices(&self) -> impl Iterator<Item = (Vec<i64>, VertexStatus)> + '_ {
        (0..self.status.len()).map(|s| {
            let p = self.lattice_index(s).into_iter().map(|k| k * self.spacing).collect();
            (p, self.status[s])
        })
    }

    pub fn bad_points(&self, kind: BadKind) -> Vec<Vec<i64>> {
        self.vertices()
            .filter(|(_, st)| match kind {
                BadKind::A => st.a == Status::Bad,
                BadKind::B => st.b == Status::Bad,
            })
            .map(|(p, _)| p)
            .collect()
    }

    pub fn count(&self, pred: impl Fn(&VertexStatus) -> bool) -> usize {
        self.status.iter().filter(|s| pred(s)).count()
    }
}

/// Level maps `0..=s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoodBadMap {
    pub levels: Vec<LevelMap>,
}

fn require_window(s: &OccupancyGrid) -> Result<()> {
    if s.geometry().is_periodic() {
        return Err(Error::Precondition("grid must be embedded in a window of Z^d".into()));
    }
    Ok(())
}

fn box_inside(g: &Geometry, lo: &[i64], side: i64) -> bool {
    let a = g.anchor();
    let n = g.side() as i64;
    (0..lo.len()).all(|i| lo[i] >= a[i] && lo[i] + side <= a[i] + n)
}

fn in_box(p: &[i64], lo: &[i64], side: i64) -> bool {
    p.iter().zip(lo).all(|(&x, &l)| x >= l && x < l + side)
}

fn box_cells(g: &Geometry, lo: &[i64], side: i64) -> Vec<usize> {
    let d = lo.len();
    let total = (side as usize).pow(d as u32);
    let mut out = Vec::with_capacity(total);
    let mut off = vec![0i64; d];
    for mut t in 0..total {
        for i in (0..d).rev() {
            off[i] = (t % side as usize) as i64;
            t /= side as usize;
        }
        let p: Vec<i64> = lo.iter().zip(&off).map(|(a, b)| a + b).collect();
        if let Some(c) = g.index_of_point(&p) {
            out.push(c);
        }
    }
    out
}

/// Component labels of `s` restricted to the union of boxes, keyed by cell.
fn region_labels(s: &OccupancyGrid, boxes: &[&[i64]], side: i64) -> HashMap<usize, u32> {
    let g = s.geometry();
    let mut label: HashMap<usize, u32> = HashMap::new();
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for lo in boxes {
        for c in box_cells(g, lo, side) {
            if !s.get(c) || label.contains_key(&c) {
                continue;
            }
            label.insert(c, next);
            queue.push_back(c);
            while let Some(x) = queue.pop_front() {
                for y in g.distinct_neighbors(x) {
                    if s.get(y) && !label.contains_key(&y) {
                        let p = g.point(y);
                        if boxes.iter().any(|b| in_box(&p, b, side)) {
                            label.insert(y, next);
                            queue.push_back(y);
                        }
                    }
                }
            }
            next += 1;
        }
    }
    label
}

/// Large components of one box: representative cells.
fn large_components(s: &OccupancyGrid, lo: &[i64], side: i64, min_size: u64) -> Vec<usize> {
    let labels = region_labels(s, &[lo], side);
    let mut sizes: HashMap<u32, (u64, usize)> = HashMap::new();
    for (&c, &l) in &labels {
        let e = sizes.entry(l).or_insert((0, c));
        e.0 += 1;
        e.1 = e.1.min(c);
    }
    let mut reps: Vec<usize> = sizes.values().filter(|(n, _)| *n >= min_size.max(1)).map(|&(_, c)| c).collect();
    reps.sort_unstable();
    reps
}

fn floor_div(a: i64, b: i64) -> i64 {
    a.div_euclid(b)
}

/// Level-0 classification of every `x in G_0` whose box meets the window.
/// `(0a)` needs the boxes of `x` and its `2d` lattice neighbours inside
/// the window, `(0b)` only the box of `x`; otherwise the status is unknown.
pub fn classify_level0(s: &OccupancyGrid, ladder: &ScaleLadder, params: &DensityParams) -> Result<LevelMap> {
    require_window(s)?;
    let g = s.geometry();
    let d = g.dim();
    let l0 = ladder.scale_i64(0)?;
    let w = g.side() as i64;
    let lo: Vec<i64> = g.anchor().iter().map(|&a| floor_div(a, l0)).collect();
    let extent: Vec<usize> =
        g.anchor().iter().zip(&lo).map(|(&a, &k)| (floor_div(a + w - 1, l0) - k + 1) as usize).collect();
    let total: usize = extent.iter().product();
    let min_size = params.min_component(ladder.l0, d);
    let max_count = params.max_count(ladder.l0, d);
    let mut map = LevelMap { level: 0, spacing: l0, lo, extent, status: Vec::new() };
    map.status = (0..total)
        .into_par_iter()
        .map(|slot| {
            let x: Vec<i64> = map.lattice_index(slot).into_iter().map(|k| k * l0).collect();
            let b = if box_inside(g, &x, l0) {
                let count = box_cells(g, &x, l0).into_iter().filter(|&c| s.get(c)).count() as u64;
                if count <= max_count {
                    Status::Good
                } else {
                    Status::Bad
                }
            } else {
                Status::Unknown
            };
            let a = classify_0a(s, &x, l0, min_size);
            VertexStatus { a, b }
        })
        .collect();
    if map.status.iter().all(|v| v.a == Status::Unknown && v.b == Status::Unknown) {
        return Err(Error::Precondition(format!("window of side {w} holds no complete L0 = {l0} box")));
    }
    Ok(map)
}

fn lattice_neighbours(x: &[i64], l0: i64) -> Vec<Vec<i64>> {
    let mut out = Vec::with_capacity(2 * x.len());
    for i in 0..x.len() {
        for sgn in [-1, 1] {
            let mut y = x.to_vec();
            y[i] += sgn * l0;
            out.push(y);
        }
    }
    out
}

fn classify_0a(s: &OccupancyGrid, x: &[i64], l0: i64, min_size: u64) -> Status {
    let g = s.geometry();
    let nbrs = lattice_neighbours(x, l0);
    if !box_inside(g, x, l0) || nbrs.iter().any(|y| !box_inside(g, y, l0)) {
        return Status::Unknown;
    }
    let cx = large_components(s, x, l0, min_size);
    if cx.is_empty() {
        return Status::Bad;
    }
    let mut alive = vec![true; cx.len()];
    for y in &nbrs {
        let cy = large_components(s, y, l0, min_size);
        if cy.is_empty() {
            return Status::Bad;
        }
        let labels = region_labels(s, &[x, y], l0);
        for (k, rep) in cx.iter().enumerate() {
            if alive[k] {
                let lx = labels[rep];
                alive[k] = cy.iter().any(|r| labels[r] == lx);
            }
        }
        if !alive.iter().any(|&a| a) {
            return Status::Bad;
        }
    }
    Status::Good
}

fn pair_status(points: &[(Vec<i64>, Status)], r: i64) -> Status {
    let spread = |include_unknown: bool| {
        let mut lo: Option<Vec<i64>> = None;
        let mut hi: Option<Vec<i64>> = None;
        for (k, st) in points {
            if *st == Status::Bad || (include_unknown && *st == Status::Unknown) {
                lo = Some(lo.map_or(k.clone(), |l| l.iter().zip(k).map(|(a, b)| *a.min(b)).collect()));
                hi = Some(hi.map_or(k.clone(), |h| h.iter().zip(k).map(|(a, b)| *a.max(b)).collect()));
            }
        }
        match (lo, hi) {
            (Some(l), Some(h)) => l.iter().zip(&h).map(|(a, b)| b - a).max().unwrap_or(0),
            _ => -1,
        }
    };
    // the largest l^inf distance within a set is the widest axis extent
    if spread(false) >= r {
        Status::Bad
    } else if spread(true) >= r {
        Status::Unknown
    } else {
        Status::Good
    }
}

/// Levels `1..=s` from level 0 by the pair rule: `x in G_n` is bad of a
/// type if its box holds two bad vertices of `G_{n-1}` of that type at
/// `l^inf` distance at least `r_{n-1} L_{n-1}`. Sub-vertices outside the
/// previous map count as unknown.
pub fn propagate_badness(level0: &LevelMap, ladder: &ScaleLadder, s: usize) -> Result<GoodBadMap> {
    if level0.level != 0 {
        return Err(Error::Precondition("propagation starts from a level-0 map".into()));
    }
    if s > ladder.levels() {
        return Err(Error::Precondition(format!("ladder has {} levels, {s} requested", ladder.levels())));
    }
    let d = level0.lo.len();
    let mut levels = vec![level0.clone()];
    for n in 1..=s {
        let prev = &levels[n - 1];
        let big = ladder.scale_i64(n)?;
        let small = prev.spacing;
        let ln = i64::try_from(ladder.l[n - 1]).map_err(|_| Error::Overflow(format!("l_{}", n - 1)))?;
        let rn = i64::try_from(ladder.r[n - 1]).unwrap_or(i64::MAX);
        let lo: Vec<i64> = prev.lo.iter().map(|&k| floor_div(k * small, big)).collect();
        let extent: Vec<usize> = (0..d)
            .map(|i| {
                let last = (prev.lo[i] + prev.extent[i] as i64) * small - 1;
                (floor_div(last, big) - lo[i] + 1) as usize
            })
            .collect();
        let total: usize = extent.iter().product();
        let sub_total = usize::try_from(ln)
            .ok()
            .and_then(|l| l.checked_pow(d as u32))
            .ok_or_else(|| Error::Overflow(format!("l_{}^d sub-vertices per box", n - 1)))?;
        let mut map = LevelMap { level: n, spacing: big, lo, extent, status: Vec::new() };
        map.status = (0..total)
            .into_par_iter()
            .map(|slot| {
                let base: Vec<i64> = map.lattice_index(slot).into_iter().map(|k| k * ln).collect();
                let mut subs_a = Vec::with_capacity(sub_total);
                let mut subs_b = Vec::with_capacity(sub_total);
                for mut t in 0..sub_total {
                    let mut k = vec![0i64; d];
                    for i in (0..d).rev() {
                        k[i] = base[i] + (t % ln as usize) as i64;
                        t /= ln as usize;
                    }
                    let st = prev.slot(&k).map(|s| prev.status[s]);
                    let st = st.unwrap_or(VertexStatus { a: Status::Unknown, b: Status::Unknown });
                    subs_a.push((k.clone(), st.a));
                    subs_b.push((k, st.b));
                }
                VertexStatus { a: pair_status(&subs_a, rn), b: pair_status(&subs_b, rn) }
            })
            .collect();
        levels.push(map);
    }
    Ok(GoodBadMap { levels })
}

pub fn classify(s: &OccupancyGrid, ladder: &ScaleLadder, params: &DensityParams, levels: usize) -> Result<GoodBadMap> {
    propagate_badness(&classify_level0(s, ladder, params)?, ladder, levels)
}

// ---------------------------------------------------------------------------
// Window arithmetic

/// Level `s`, multiplicity `K` and anchor of the analysis box
/// `anchor + [0, K L_s)^d`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenormWindow {
    pub s: usize,
    pub k: u128,
    pub scale: u128,
    pub anchor: Vec<i64>,
}

impl RenormWindow {
    /// A window chosen freely (`s` and `K` not tied to `N`), as used at
    /// desk scale.
    pub fn shallow(ladder: &ScaleLadder, s: usize, k: u128, anchor: Vec<i64>) -> Result<Self> {
        let scale = ladder.scale(s).ok_or_else(|| Error::Precondition(format!("ladder has no level {s}")))?;
        if k == 0 {
            return Err(Error::InvalidConfig("K must be at least 1".into()));
        }
        Ok(RenormWindow { s, k, scale, anchor })
    }

    pub fn core_side(&self) -> Result<i64> {
        self.k
            .checked_mul(self.scale)
            .and_then(|v| i64::try_from(v).ok())
            .ok_or_else(|| Error::Overflow("K L_s exceeds the coordinate range".into()))
    }

    fn scale_i64(&self) -> Result<i64> {
        i64::try_from(self.scale).map_err(|_| Error::Overflow("L_s".into()))
    }
}

fn scale_power(l: u128, e: u32) -> Option<u128> {
    l.checked_pow(e)
}

/// `s = max { s' : L_{s'}^{d^3+1} <= N/7 }`, `K = min { K' : K' L_s >= N/7 }`,
/// extending the ladder as far as needed.
pub fn select_window(d: usize, n: u128, ladder: &ScaleLadder) -> Result<RenormWindow> {
    let e = u32::try_from(d * d * d + 1).map_err(|_| Error::Overflow("d^3 + 1".into()))?;
    let fits = |l: u128| scale_power(l, e).and_then(|p| p.checked_mul(7)).is_some_and(|p| p <= n);
    let mut scale = ladder.l0 as u128;
    if !fits(scale) {
        return Err(Error::Precondition(format!("N = {n} is below 7 L0^{e}")));
    }
    let mut s = 0usize;
    loop {
        let next = level_terms(ladder.lambda, s).and_then(|(l, _)| scale.checked_mul(l));
        match next {
            Some(nx) if fits(nx) => {
                scale = nx;
                s += 1;
                // a fixed point cannot keep growing past l_0 = 1
                if s > 64 {
                    break;
                }
            }
            _ => break,
        }
    }
    let k = n.div_ceil(7 * scale);
    let w = RenormWindow { s, k, scale, anchor: vec![0; d] };
    let lower = scale_power(scale, e - 1).ok_or_else(|| Error::Overflow("L_s^{d^3}".into()))?;
    if k < lower {
        return Err(Error::Numerical(format!("K = {k} < L_s^{} = {lower}", e - 1)));
    }
    if (k + 4) * scale * 7 > 6 * n {
        return Err(Error::Numerical(format!("(K + 4) L_s = {} exceeds 6N/7", (k + 4) * scale)));
    }
    Ok(w)
}

/// Arithmetic behind the small-set case: with `|A| <= L_s^{d(d+1)}`,
/// `|A|^{1-1/d+1/d^2} ((K+4) L_s)^{-1/d} <= 1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmallSetCheck {
    /// `d(d+1)(1 - 1/d + 1/d^2)` as a reduced fraction.
    pub exponent: (u64, u64),
    /// The exponent equals `(d^3 + 1)/d`.
    pub exponent_identity: bool,
    /// `L_s^{d^3+1}`.
    pub lhs: u128,
    /// `(K + 4) L_s`.
    pub rhs: u128,
    pub holds: bool,
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub fn small_set_check(d: usize, w: &RenormWindow) -> Result<SmallSetCheck> {
    let d64 = d as u64;
    // d(d+1) (d^2 - d + 1) / d^2
    let num = d64 * (d64 + 1) * (d64 * d64 - d64 + 1);
    let den = d64 * d64;
    let gg = gcd(num, den);
    let exponent = (num / gg, den / gg);
    let (tn, td) = (d64 * d64 * d64 + 1, d64);
    let exponent_identity = exponent.0 * td == tn * exponent.1;
    let e = u32::try_from(d * d * d + 1).map_err(|_| Error::Overflow("d^3 + 1".into()))?;
    let lhs = w.scale.checked_pow(e).ok_or_else(|| Error::Overflow("L_s^{d^3+1}".into()))?;
    let rhs = (w.k + 4).checked_mul(w.scale).ok_or_else(|| Error::Overflow("(K+4) L_s".into()))?;
    // |A|^{(d^3+1)/d^2}... raised to the d-th power: L_s^{d^3+1} <= (K+4) L_s
    Ok(SmallSetCheck { exponent, exponent_identity, lhs, rhs, holds: exponent_identity && lhs <= rhs })
}

// ---------------------------------------------------------------------------
// Assumptions (a)-(c)

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionA {
    pub holds: bool,
    pub bad: Vec<Vec<i64>>,
    pub unknown: Vec<Vec<i64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionB {
    pub holds: bool,
    pub violation: Option<(Vec<i64>, Vec<i64>)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionC {
    pub holds: bool,
    pub empty_box: Option<Vec<i64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub a: AssumptionA,
    pub b: AssumptionB,
    pub c: AssumptionC,
    /// `|S ∩ core|`.
    pub core_count: u64,
    /// `|S ∩ core| / (K L_s)^d`, the empirical analogue of beta.
    pub core_density: f64,
}

fn core_points(w: &RenormWindow, d: usize) -> Result<Vec<Vec<i64>>> {
    let side = w.core_side()?;
    let total = usize::try_from(side)
        .ok()
        .and_then(|s| s.checked_pow(d as u32))
        .ok_or_else(|| Error::Overflow("core box volume".into()))?;
    Ok((0..total)
        .map(|mut t| {
            let mut p = vec![0i64; d];
            for i in (0..d).rev() {
                p[i] = w.anchor[i] + (t % side as usize) as i64;
                t /= side as usize;
            }
            p
        })
        .collect())
}

/// Occupied cells of the core box.
fn core_cells(s: &OccupancyGrid, w: &RenormWindow) -> Result<Vec<usize>> {
    let g = s.geometry();
    Ok(core_points(w, g.dim())?.into_iter().filter_map(|p| g.index_of_point(&p)).filter(|&c| s.get(c)).collect())
}

/// Cells reachable from `start` inside `S ∩ B(start, radius)`.
fn local_reach(s: &OccupancyGrid, start: usize, radius: i64) -> Vec<usize> {
    let g = s.geometry();
    let centre = g.point(start);
    let mut seen = vec![start];
    let mut mark: HashMap<usize, ()> = HashMap::from([(start, ())]);
    let mut queue = VecDeque::from([start]);
    while let Some(x) = queue.pop_front() {
        for y in g.distinct_neighbors(x) {
            if s.get(y) && !mark.contains_key(&y) {
                let p = g.point(y);
                if p.iter().zip(&centre).all(|(a, b)| (a - b).abs() <= radius) {
                    mark.insert(y, ());
                    seen.push(y);
                    queue.push_back(y);
                }
            }
        }
    }
    seen
}

pub fn check_assumptions(
    s: &OccupancyGrid,
    w: &RenormWindow,
    ladder: &ScaleLadder,
    params: &DensityParams,
) -> Result<AssumptionReport> {
    require_window(s)?;
    let g = s.geometry();
    let d = g.dim();
    if w.anchor.len() != d {
        return Err(Error::InvalidConfig("window anchor dimension mismatch".into()));
    }
    let ls = w.scale_i64()?;
    let side = w.core_side()?;

    // (a)
    let map = classify(s, ladder, params, w.s)?;
    let top = &map.levels[w.s];
    let k_lo: Vec<i64> = w.anchor.iter().map(|&a| -floor_div(2 * ls - a, ls)).collect();
    let k_hi: Vec<i64> = w.anchor.iter().map(|&a| (a + side + 2 * ls - 1).div_euclid(ls)).collect();
    let mut bad = Vec::new();
    let mut unknown = Vec::new();
    let ext: Vec<usize> = (0..d).map(|i| (k_hi[i] - k_lo[i] + 1).max(0) as usize).collect();
    let total: usize = ext.iter().product();
    for mut t in 0..total {
        let mut p = vec![0i64; d];
        for i in (0..d).rev() {
            p[i] = (k_lo[i] + (t % ext[i]) as i64) * ls;
            t /= ext[i];
        }
        match top.get(&p).map(|v| v.combined()) {
            Some(Status::Good) => {}
            Some(Status::Bad) => bad.push(p),
            _ => unknown.push(p),
        }
    }
    let a = AssumptionA { holds: bad.is_empty() && unknown.is_empty(), bad, unknown };

    // (b)
    let core = core_cells(s, w)?;
    let core_set: HashMap<usize, ()> = core.iter().map(|&c| (c, ())).collect();
    let violation = core.par_iter().find_map_first(|&x| {
        let reach: HashMap<usize, ()> = local_reach(s, x, 2 * ls).into_iter().map(|c| (c, ())).collect();
        let px = g.point(x);
        core.iter()
            .find(|&&y| {
                !reach.contains_key(&y) && {
                    let py = g.point(y);
                    px.iter().zip(&py).all(|(a, b)| (a - b).abs() <= ls)
                }
            })
            .map(|&y| (px.clone(), g.point(y)))
    });
    let b = AssumptionB { holds: violation.is_none(), violation };

    // (c): sliding L_s boxes via a d-dimensional prefix sum over the core
    let empty_box = empty_subbox(s, w, ls)?;
    let c = AssumptionC { holds: empty_box.is_none(), empty_box };

    let core_count = core_set.len() as u64;
    let core_density = core_count as f64 / (side as f64).powi(d as i32);
    Ok(AssumptionReport { a, b, c, core_count, core_density })
}

fn empty_subbox(s: &OccupancyGrid, w: &RenormWindow, ls: i64) -> Result<Option<Vec<i64>>> {
    let g = s.geometry();
    let d = g.dim();
    let side = w.core_side()? as usize;
    if (ls as usize) > side {
        return Ok(None);
    }
    // prefix[i] over the (side+1)^d lattice
    let m = side + 1;
    let vol = m.pow(d as u32);
    let mut pre = vec![0u32; vol];
    let unravel = |mut t: usize| {
        let mut c = vec![0usize; d];
        for i in (0..d).rev() {
            c[i] = t % m;
            t /= m;
        }
        c
    };
    let ravel = |c: &[usize]| c.iter().fold(0usize, |acc, &x| acc * m + x);
    for t in 0..vol {
        let c = unravel(t);
        if c.contains(&0) {
            continue;
        }
        let p: Vec<i64> = (0..d).map(|i| w.anchor[i] + c[i] as i64 - 1).collect();
        let mut v = g.index_of_point(&p).is_some_and(|x| s.get(x)) as i64;
        // inclusion-exclusion over the 2^d - 1 lower corners
        for mask in 1u32..(1 << d) {
            let mut q = c.clone();
            for (i, qi) in q.iter_mut().enumerate() {
                if mask >> i & 1 == 1 {
                    *qi -= 1;
                }
            }
            let sign = if mask.count_ones() % 2 == 1 { 1 } else { -1 };
            v += sign * pre[ravel(&q)] as i64;
        }
        pre[t] = v as u32;
    }
    let span = side - ls as usize + 1;
    let ls = ls as usize;
    for t in 0..span.pow(d as u32) {
        let mut c = vec![0usize; d];
        let mut r = t;
        for i in (0..d).rev() {
            c[i] = r % span;
            r /= span;
        }
        let mut total = 0i64;
        for mask in 0u32..(1 << d) {
            let q: Vec<usize> = (0..d).map(|i| if mask >> i & 1 == 1 { c[i] } else { c[i] + ls }).collect();
            let sign = if mask.count_ones() % 2 == 0 { 1 } else { -1 };
            total += sign * pre[ravel(&q)] as i64;
        }
        if total == 0 {
            return Ok(Some((0..d).map(|i| w.anchor[i] + c[i] as i64).collect()));
        }
    }
    Ok(None)
}

// ---------------------------------------------------------------------------
// Enlarged cluster

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnlargedCluster {
    /// Cells of the window geometry.
    pub cells: CellSet,
    pub window: RenormWindow,
    pub core_count: usize,
    pub connected: bool,
}

/// Every occupied cell joined to some `y in S ∩ core` by a path in
/// `S ∩ B(y, 2 L_s)`.
pub fn enlarged_cluster(s: &OccupancyGrid, w: &RenormWindow) -> Result<EnlargedCluster> {
    require_window(s)?;
    let ls = w.scale_i64()?;
    let core = core_cells(s, w)?;
    let reached: Vec<Vec<usize>> = core.par_iter().map(|&y| local_reach(s, y, 2 * ls)).collect();
    let cells = CellSet::from_unsorted(reached.into_iter().flatten().collect());
    let connected = if cells.is_empty() {
        true
    } else {
        let sub = OccupancyGrid::from_cells(s.geometry().clone(), cells.iter())?;
        crate::lattice::is_connected(&sub)
    };
    Ok(EnlargedCluster { cells, window: w.clone(), core_count: core.len(), connected })
}

// ---------------------------------------------------------------------------
// Bad-vertex frequency at the origin

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelFrequency {
    pub level: usize,
    pub bad: u64,
    pub bad_a: u64,
    pub bad_b: u64,
    pub unknown: u64,
    pub trials: u64,
    pub frequency: f64,
    pub std_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BadDensityReport {
    pub levels: Vec<LevelFrequency>,
    /// `2 * 2^{-2^s}`.
    pub bound: f64,
}

pub fn lemma_bound(s: usize) -> f64 {
    2.0 * 2f64.powf(-(2f64.powi(s as i32)))
}

/// Frequency, over independent ranges, with which the origin of `G_n`
/// (`n <= s`) is bad. Each trial embeds the torus around the origin in the
/// window `[-L0, L_s + L0)^d`.
pub fn bad_density_experiment(
    cfg: &TorusConfig,
    ladder: &ScaleLadder,
    params: &DensityParams,
    s: usize,
    trials: u64,
    seed: RngSeed,
) -> Result<BadDensityReport> {
    cfg.validate()?;
    let ls = ladder.scale_i64(s)?;
    let l0 = ladder.scale_i64(0)?;
    let span = ls + 2 * l0;
    if 7 * span > 6 * cfg.n as i64 {
        return Err(Error::Precondition(format!("L_s + 2 L0 = {span} exceeds 6N/7 at N = {}", cfg.n)));
    }
    let origin = vec![0i64; cfg.d];
    let outcomes: Vec<Vec<VertexStatus>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let (range, _) = sample_range(cfg, seed.trial(t), false)?;
            let window = restrict(&range, &LatticeBox::new(vec![-l0; cfg.d], span as usize, true))?;
            let map = classify(&window, ladder, params, s)?;
            Ok(map.levels.iter().map(|m| m.get(&origin).expect("origin covered")).collect())
        })
        .collect::<Result<_>>()?;
    let levels = (0..=s)
        .map(|n| {
            let st = outcomes.iter().map(|o| o[n]);
            let bad = st.clone().filter(|v| v.combined() == Status::Bad).count() as u64;
            let bad_a = st.clone().filter(|v| v.a == Status::Bad).count() as u64;
            let bad_b = st.clone().filter(|v| v.b == Status::Bad).count() as u64;
            let unknown = st.filter(|v| v.combined() == Status::Unknown).count() as u64;
            let f = if trials == 0 { 0.0 } else { bad as f64 / trials as f64 };
            LevelFrequency {
                level: n,
                bad,
                bad_a,
                bad_b,
                unknown,
                trials,
                frequency: f,
                std_err: if trials == 0 { 0.0 } else { (f * (1.0 - f) / trials as f64).sqrt() },
            }
        })
        .collect();
    Ok(BadDensityReport { levels, bound: lemma_bound(s) })
}
