//! Conductance profiles of the range subgraph, the isoperimetric ratio
//! check, and the Morris-Peres integral bound.
//!
//! A profile keeps, for every candidate size `s`, the smallest edge
//! boundary seen among candidate sets of that size. The conductance
//! profile is then `phi(r) = min { b_s / s : s <= min(r, cap) }` with
//! `cap = floor((1 - 1/(4d)) |R|)`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{build_chain, slow_modes, LazyChain, EXACT_CAP};
use crate::error::{Error, Result};
use crate::lattice::{CellSet, OccupancyGrid, TorusConfig};
use crate::rng::RngSeed;

/// Largest set size the exhaustive enumeration accepts.
pub const ENUMERATION_CAP: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileMethod {
    Exhaustive,
    Sweep,
    Ball,
}

/// A candidate set, stored compactly and materialized on demand.
#[derive(Clone, Debug, PartialEq)]
pub enum Witness {
    Cells(CellSet),
    /// The first `len` cells of a sweep order.
    SweepPrefix {
        order: Arc<Vec<usize>>,
        len: usize,
    },
    /// Occupied cells within `l^inf` distance `radius` of `center`.
    Ball {
        center: usize,
        radius: u64,
    },
    Complement(Box<Witness>),
}

impl Witness {
    pub fn materialize(&self, s: &OccupancyGrid) -> CellSet {
        match self {
            Witness::Cells(c) => c.clone(),
            Witness::SweepPrefix { order, len } => CellSet::from_unsorted(order[..*len].to_vec()),
            Witness::Ball { center, radius } => {
                let g = s.geometry();
                s.occupied().filter(|&c| g.linf_distance(*center, c) <= *radius).collect()
            }
            Witness::Complement(inner) => s.complement_within(&inner.materialize(s)),
        }
    }

    fn complement(self) -> Witness {
        match self {
            Witness::Complement(inner) => *inner,
            w => Witness::Complement(Box::new(w)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CutRecord {
    pub size: usize,
    pub boundary: u64,
    pub method: ProfileMethod,
    pub witness: Witness,
}

impl CutRecord {
    pub fn ratio(&self) -> f64 {
        self.boundary as f64 / self.size as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Breakpoint {
    pub r: usize,
    pub phi: f64,
    pub boundary: u64,
    pub size: usize,
}

#[derive(Clone, Debug)]
pub struct ConductanceProfile {
    pub methods: Vec<ProfileMethod>,
    pub vertices: usize,
    pub dim: usize,
    /// Best record per size, `records[s - 1]` for `1 <= s < vertices`.
    records: Vec<Option<CutRecord>>,
}

impl ConductanceProfile {
    fn empty(method: ProfileMethod, vertices: usize, dim: usize) -> Self {
        ConductanceProfile { methods: vec![method], vertices, dim, records: vec![None; vertices.saturating_sub(1)] }
    }

    /// `floor((1 - 1/(4d)) |R|)`.
    pub fn size_cap(&self) -> usize {
        let d = self.dim;
        (self.vertices * (4 * d - 1)) / (4 * d)
    }

    fn offer(&mut self, size: usize, boundary: u64, method: ProfileMethod, witness: impl FnOnce() -> Witness) {
        if size == 0 || size >= self.vertices {
            return;
        }
        let slot = &mut self.records[size - 1];
        if slot.as_ref().is_none_or(|r| boundary < r.boundary) {
            *slot = Some(CutRecord { size, boundary, method, witness: witness() });
        }
    }

    fn absorb(&mut self, other: ConductanceProfile) {
        for r in other.records.into_iter().flatten() {
            let CutRecord { size, boundary, method, witness } = r;
            self.offer(size, boundary, method, || witness);
        }
        for m in other.methods {
            if !self.methods.contains(&m) {
                self.methods.push(m);
            }
        }
        self.methods.sort();
    }

    /// Pointwise lower envelope of several profiles over the same graph.
    pub fn merge(profiles: impl IntoIterator<Item = ConductanceProfile>) -> Result<ConductanceProfile> {
        let mut it = profiles.into_iter();
        let mut acc = it.next().ok_or(Error::Empty)?;
        for p in it {
            if p.vertices != acc.vertices || p.dim != acc.dim {
                return Err(Error::Precondition("profiles of different graphs".into()));
            }
            acc.absorb(p);
        }
        Ok(acc)
    }

    /// All per-size records, ascending in size.
    pub fn records(&self) -> impl Iterator<Item = &CutRecord> {
        self.records.iter().flatten()
    }

    pub fn record(&self, size: usize) -> Option<&CutRecord> {
        self.records.get(size.checked_sub(1)?)?.as_ref()
    }

    /// Sizes at which the running minimum of `b_s / s` strictly drops.
    pub fn breakpoints(&self) -> Vec<Breakpoint> {
        let mut out: Vec<Breakpoint> = Vec::new();
        for r in self.records().take_while(|r| r.size <= self.size_cap()) {
            if out.last().is_none_or(|b| r.ratio() < b.phi) {
                out.push(Breakpoint { r: r.size, phi: r.ratio(), boundary: r.boundary, size: r.size });
            }
        }
        out
    }

    /// `phi(r)`, or `None` below the first recorded size.
    pub fn phi(&self, r: f64) -> Option<f64> {
        self.breakpoints().iter().take_while(|b| b.r as f64 <= r).last().map(|b| b.phi)
    }

    /// Witness attaining the profile value at breakpoint size `size`.
    pub fn witness(&self, size: usize) -> Option<&Witness> {
        self.record(size).map(|r| &r.witness)
    }

    pub fn summary(&self, s: &OccupancyGrid) -> ProfileSummary {
        ProfileSummary {
            methods: self.methods.clone(),
            vertices: self.vertices,
            size_cap: self.size_cap(),
            breakpoints: self
                .breakpoints()
                .into_iter()
                .map(|b| BreakpointSummary {
                    r: b.r,
                    phi: b.phi,
                    boundary: b.boundary,
                    witness: self.witness(b.size).expect("breakpoint record").materialize(s).into_vec(),
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BreakpointSummary {
    pub r: usize,
    pub phi: f64,
    pub boundary: u64,
    pub witness: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileSummary {
    pub methods: Vec<ProfileMethod>,
    pub vertices: usize,
    pub size_cap: usize,
    pub breakpoints: Vec<BreakpointSummary>,
}

fn connected_chain(s: &OccupancyGrid) -> Result<LazyChain> {
    Ok(build_chain(s)?.0)
}

// ---------------------------------------------------------------------------
// Exhaustive enumeration

struct Esu<'a> {
    chain: &'a LazyChain,
    kmax: usize,
    /// Number of members of the current set adjacent to or equal to each vertex.
    touch: Vec<u8>,
    in_set: Vec<bool>,
    set: Vec<usize>,
    best: Vec<Option<(u64, Vec<usize>)>>,
}

impl Esu<'_> {
    fn add(&mut self, v: usize) {
        self.in_set[v] = true;
        self.set.push(v);
        self.touch[v] += 1;
        for &w in self.chain.neighbors(v) {
            self.touch[w as usize] += 1;
        }
    }

    fn remove(&mut self, v: usize) {
        self.in_set[v] = false;
        self.set.pop();
        self.touch[v] -= 1;
        for &w in self.chain.neighbors(v) {
            self.touch[w as usize] -= 1;
        }
    }

    fn record(&mut self, boundary: u64) {
        let k = self.set.len();
        if self.best[k - 1].as_ref().is_none_or(|(b, _)| boundary < *b) {
            self.best[k - 1] = Some((boundary, self.set.clone()));
        }
    }

    /// Wernicke's ESU: every connected set whose least vertex is `root`
    /// is visited exactly once.
    fn extend(&mut self, root: usize, mut ext: Vec<usize>, boundary: u64) {
        self.record(boundary);
        if self.set.len() == self.kmax {
            return;
        }
        while let Some(w) = ext.pop() {
            let mut next = ext.clone();
            // exclusive neighbours of w: not in N[set]
            for &u in self.chain.neighbors(w) {
                let u = u as usize;
                if u > root && self.touch[u] == 0 && !next.contains(&u) {
                    next.push(u);
                }
            }
            let inside = self.chain.neighbors(w).iter().filter(|&&u| self.in_set[u as usize]).count() as u64;
            let nb = boundary + self.chain.degree(w) as u64 - 2 * inside;
            self.add(w);
            self.extend(root, next, nb);
            self.remove(w);
        }
    }
}

/// Exact `phi(r)` for `r <= rmax` by enumerating every connected subset of
/// at most `rmax` vertices. Complements of the enumerated sets are offered
/// as candidates too.
pub fn profile_exhaustive(s: &OccupancyGrid, rmax: usize) -> Result<ConductanceProfile> {
    profile_exhaustive_capped(s, rmax, ENUMERATION_CAP)
}

pub fn profile_exhaustive_capped(s: &OccupancyGrid, rmax: usize, cap: usize) -> Result<ConductanceProfile> {
    if rmax > cap {
        return Err(Error::CapExceeded { vertices: rmax, cap });
    }
    if rmax == 0 {
        return Err(Error::InvalidConfig("rmax must be at least 1".into()));
    }
    let chain = connected_chain(s)?;
    let v = chain.len();
    let kmax = rmax.min(v);
    let best = (0..v)
        .into_par_iter()
        .fold(
            || None::<Esu>,
            |state, root| {
                let mut esu = state.unwrap_or_else(|| Esu {
                    chain: &chain,
                    kmax,
                    touch: vec![0; v],
                    in_set: vec![false; v],
                    set: Vec::with_capacity(kmax),
                    best: vec![None; kmax],
                });
                esu.add(root);
                let ext: Vec<usize> = chain.neighbors(root).iter().map(|&u| u as usize).filter(|&u| u > root).collect();
                esu.extend(root, ext, chain.degree(root) as u64);
                esu.remove(root);
                Some(esu)
            },
        )
        .map(|e| e.map(|e| e.best).unwrap_or_default())
        .reduce(Vec::new, |a, b| {
            if a.is_empty() {
                return b;
            }
            a.into_iter()
                .zip(b)
                .map(|(x, y)| match (x, y) {
                    (Some(x), Some(y)) => Some(if y.0 < x.0 || (y.0 == x.0 && y.1 < x.1) { y } else { x }),
                    (x, y) => x.or(y),
                })
                .collect()
        });
    let mut profile = ConductanceProfile::empty(ProfileMethod::Exhaustive, v, s.geometry().dim());
    for (boundary, set) in best.into_iter().flatten() {
        let cells = CellSet::from_unsorted(set.iter().map(|&x| chain.cell(x)).collect());
        let size = cells.len();
        let witness = Witness::Cells(cells);
        profile.offer(v - size, boundary, ProfileMethod::Exhaustive, || witness.clone().complement());
        profile.offer(size, boundary, ProfileMethod::Exhaustive, || witness);
    }
    Ok(profile)
}

// ---------------------------------------------------------------------------
// Spectral sweeps

/// Sweep cuts along the `k` slowest non-trivial eigenvectors of the lazy
/// kernel. Vertices are ordered by the right eigenvector `v_k / sqrt(pi)`
/// and every prefix in both directions is a candidate.
pub fn profile_sweep(s: &OccupancyGrid, k: usize, seed: RngSeed) -> Result<ConductanceProfile> {
    let chain = connected_chain(s)?;
    let v = chain.len();
    let mut profile = ConductanceProfile::empty(ProfileMethod::Sweep, v, s.geometry().dim());
    if v < 2 {
        return Ok(profile);
    }
    let pi = chain.stationary().pi;
    let dense_cap = 1200.min(EXACT_CAP);
    let (vals, vecs) = slow_modes(&chain, k, dense_cap, seed)?;
    if vals.iter().any(|l| !l.is_finite()) {
        return Err(Error::Numerical("eigensolver returned non-finite values".into()));
    }
    let sweeps: Vec<ConductanceProfile> = (0..vecs.ncols())
        .into_par_iter()
        .flat_map_iter(|j| {
            let score: Vec<f64> = (0..v).map(|x| vecs[(x, j)] / pi[x].sqrt()).collect();
            let mut order: Vec<usize> = (0..v).collect();
            order.sort_by(|&a, &b| score[a].total_cmp(&score[b]).then(a.cmp(&b)));
            let forward = order.clone();
            order.reverse();
            [forward, order].into_iter().map(|ord| sweep_one(&chain, ord))
        })
        .collect();
    for p in sweeps {
        profile.absorb(p);
    }
    Ok(profile)
}

fn sweep_one(chain: &LazyChain, order: Vec<usize>) -> ConductanceProfile {
    let v = chain.len();
    let cells: Arc<Vec<usize>> = Arc::new(order.iter().map(|&x| chain.cell(x)).collect());
    let mut profile = ConductanceProfile::empty(ProfileMethod::Sweep, v, chain.geometry().dim());
    let mut inside = vec![false; v];
    let mut boundary = 0u64;
    for (i, &x) in order.iter().enumerate().take(v - 1) {
        let adj = chain.neighbors(x).iter().filter(|&&y| inside[y as usize]).count() as u64;
        boundary = boundary + chain.degree(x) as u64 - 2 * adj;
        inside[x] = true;
        let len = i + 1;
        profile.offer(len, boundary, ProfileMethod::Sweep, || Witness::SweepPrefix { order: cells.clone(), len });
    }
    profile
}

// ---------------------------------------------------------------------------
// Balls

/// Candidates `S ∩ B(x, rho)` for every occupied `x` and every radius up
/// to the torus half-width, plus their complements.
pub fn profile_balls(s: &OccupancyGrid) -> Result<ConductanceProfile> {
    let chain = connected_chain(s)?;
    let v = chain.len();
    let g = chain.geometry();
    let rho_max = g.side() as u64 / 2;
    let dim = g.dim();
    let parts: Vec<ConductanceProfile> = (0..v)
        .into_par_iter()
        .fold(
            || (ConductanceProfile::empty(ProfileMethod::Ball, v, dim), vec![false; v]),
            |(mut profile, mut inside), x| {
                let cx = chain.cell(x);
                let mut shells: Vec<Vec<usize>> = vec![Vec::new(); rho_max as usize + 1];
                for y in 0..v {
                    let r = g.linf_distance(cx, chain.cell(y));
                    if r <= rho_max {
                        shells[r as usize].push(y);
                    }
                }
                inside.iter_mut().for_each(|b| *b = false);
                let mut boundary = 0u64;
                let mut size = 0usize;
                for (rho, shell) in shells.iter().enumerate() {
                    for &y in shell {
                        let adj = chain.neighbors(y).iter().filter(|&&z| inside[z as usize]).count() as u64;
                        boundary = boundary + chain.degree(y) as u64 - 2 * adj;
                        inside[y] = true;
                        size += 1;
                    }
                    let w = || Witness::Ball { center: cx, radius: rho as u64 };
                    profile.offer(size, boundary, ProfileMethod::Ball, w);
                    profile.offer(v - size, boundary, ProfileMethod::Ball, || w().complement());
                }
                (profile, inside)
            },
        )
        .map(|(p, _)| p)
        .collect();
    ConductanceProfile::merge(parts).or_else(|_| Ok(ConductanceProfile::empty(ProfileMethod::Ball, v, dim)))
}

// ---------------------------------------------------------------------------
// Isoperimetric check

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsoCheckReport {
    pub gamma_hat: f64,
    pub mu: f64,
    pub exponent: f64,
    pub size: usize,
    pub boundary: u64,
    pub method: ProfileMethod,
    pub witness: Vec<usize>,
    pub candidates: usize,
}

/// `1 - 1/d + 1/d^2`.
pub fn iso_exponent(d: usize) -> f64 {
    let d = d as f64;
    1.0 - 1.0 / d + 1.0 / (d * d)
}

/// `gamma_hat = min |dA| / (|A|^{1-1/d+1/d^2} N^{-1/d})` over all recorded
/// candidates with `|A| <= mu |R|`.
pub fn check_iso_inequality(s: &OccupancyGrid, candidates: &[ConductanceProfile], mu: f64) -> Result<IsoCheckReport> {
    if !(mu > 0.0 && mu < 1.0) {
        return Err(Error::InvalidConfig(format!("mu = {mu} must lie in (0, 1)")));
    }
    let vertices = s.popcount();
    let d = s.geometry().dim();
    let n = s.geometry().side() as f64;
    let exponent = iso_exponent(d);
    let limit = mu * vertices as f64;
    let mut best: Option<(f64, &CutRecord)> = None;
    let mut count = 0;
    for p in candidates {
        if p.vertices != vertices {
            return Err(Error::Precondition("candidate profile built on a different graph".into()));
        }
        for r in p.records().filter(|r| r.size as f64 <= limit) {
            count += 1;
            let g = r.boundary as f64 * n.powf(1.0 / d as f64) / (r.size as f64).powf(exponent);
            if best.is_none_or(|(b, _)| g < b) {
                best = Some((g, r));
            }
        }
    }
    let (gamma_hat, rec) = best.ok_or_else(|| Error::Precondition(format!("no candidate with |A| <= {mu} |R|")))?;
    Ok(IsoCheckReport {
        gamma_hat,
        mu,
        exponent,
        size: rec.size,
        boundary: rec.boundary,
        method: rec.method,
        witness: rec.witness.materialize(s).into_vec(),
        candidates: count,
    })
}

// ---------------------------------------------------------------------------
// Morris-Peres integral

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MorrisPeres {
    pub integral: f64,
    pub constant: f64,
    pub upper: f64,
    pub bound: u64,
}

/// Upper limit `32 d N^d` of the integral.
pub fn mp_upper_limit(cfg: &TorusConfig) -> f64 {
    32.0 * cfg.d as f64 * (cfg.n as f64).powi(cfg.d as i32)
}

/// `int_1^upper dr / (r phi(r)^2)` for the right-continuous step function
/// through `steps = [(r_i, phi_i)]`, `r_1 = 1`, sorted by `r`.
pub fn step_integral(steps: &[(f64, f64)], upper: f64) -> Result<f64> {
    let first = steps.first().ok_or(Error::Empty)?;
    if first.0 > 1.0 {
        return Err(Error::Precondition(format!("profile undefined on [1, {})", first.0)));
    }
    let mut total = 0.0;
    for (i, &(r, phi)) in steps.iter().enumerate() {
        let a = r.max(1.0);
        let b = steps.get(i + 1).map_or(upper, |s| s.0).min(upper);
        if b <= a {
            continue;
        }
        if !(phi > 0.0 && phi.is_finite()) {
            return Err(Error::Numerical(format!("profile value {phi} at r = {r}")));
        }
        total += (b / a).ln() / (phi * phi);
    }
    Ok(total)
}

/// `C int_1^{32 d N^d} dr / (r phi(r)^2)` for a profile.
pub fn morris_peres_bound(profile: &ConductanceProfile, cfg: &TorusConfig, constant: f64) -> Result<MorrisPeres> {
    let steps: Vec<(f64, f64)> = profile.breakpoints().iter().map(|b| (b.r as f64, b.phi)).collect();
    let upper = mp_upper_limit(cfg);
    let integral = step_integral(&steps, upper)?;
    let value = constant * integral;
    if !value.is_finite() || value < 0.0 || value > u64::MAX as f64 {
        return Err(Error::Numerical(format!("bound {value} out of range")));
    }
    Ok(MorrisPeres { integral, constant, upper, bound: value.ceil() as u64 })
}

/// Closed form of the integral for `phi(r) = gamma N^{-1/d} r^{-(d-1)/d^2}`:
/// `gamma^-2 N^{2/d} d^2/(2(d-1)) ((32 d N^d)^{2(d-1)/d^2} - 1)`.
pub fn morris_peres_power_law(gamma: f64, cfg: &TorusConfig) -> f64 {
    let d = cfg.d as f64;
    let n = cfg.n as f64;
    let a = 2.0 * (d - 1.0) / (d * d);
    (n.powf(2.0 / d) / (gamma * gamma)) * (mp_upper_limit(cfg).powf(a) - 1.0) / a
}
