//! Random interlacements restricted to a finite set of `Z^d`.
//!
//! Capacity and equilibrium measure come from escape walks: from `x in K`
//! a walk either returns to `K` or reaches the sphere of radius `R`
//! around the centre of `K`, after which it returns with probability
//! `sum_y e_K(y) g(Z - y)`. Replacing that sum by `cap(K) a_d |Z - c|^{2-d}`
//! gives, with `A_x = P_x[exit before return]` and
//! `B_x = E_x[exit before return; a_d |Z - c|^{2-d}]`,
//! `e_K(x) = A_x - cap B_x` and `cap = sum A / (1 + sum B)`.
//!
//! The trace of `I^u` on `K` is the union of the forward halves of
//! `Poisson(u cap)` trajectories entering at `e_K / cap`; a forward half
//! is followed to distance `D`, where it re-enters `K` with the far-field
//! hitting probability.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Geometry, OccupancyGrid, TorusConfig};
use crate::rng::RngSeed;
use crate::walk::{green_far_field, sample_range};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityBudget {
    pub walks_per_cell: u64,
    /// Escape radius; defaults to `4 diam(K) + 16`.
    pub radius: Option<f64>,
    pub seed: RngSeed,
}

impl Default for CapacityBudget {
    fn default() -> Self {
        CapacityBudget { walks_per_cell: 20_000, radius: None, seed: RngSeed::new(0xca9, 0) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CapacityEstimate {
    /// `K` as occupied cells of a window of `Z^d`.
    pub set: OccupancyGrid,
    pub cap: f64,
    pub std_err: f64,
    /// `(cell, e_K(cell), standard error)` for every cell of `K`.
    pub weights: Vec<(usize, f64, f64)>,
    pub radius: f64,
    /// First-order size of the far-field approximation error.
    pub truncation_bias: f64,
}

impl CapacityEstimate {
    /// `e_K` as `(point, weight)` over its support, clipped at zero.
    pub fn support(&self) -> Vec<(Vec<i64>, f64)> {
        let g = self.set.geometry();
        self.weights.iter().filter(|w| w.1 > 0.0).map(|&(c, w, _)| (g.point(c), w)).collect()
    }
}

/// Geometry helper: membership and centre of `K`.
struct Target<'a> {
    set: &'a OccupancyGrid,
    centre: Vec<f64>,
    diam: f64,
}

impl<'a> Target<'a> {
    fn new(set: &'a OccupancyGrid) -> Result<Self> {
        if set.geometry().is_periodic() {
            return Err(Error::Precondition("K must live in a window of Z^d".into()));
        }
        if set.popcount() == 0 {
            return Err(Error::Empty);
        }
        let g = set.geometry();
        let d = g.dim();
        let pts: Vec<Vec<i64>> = set.occupied().map(|c| g.point(c)).collect();
        let mut lo = pts[0].clone();
        let mut hi = pts[0].clone();
        for p in &pts {
            for i in 0..d {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        let centre: Vec<f64> = (0..d).map(|i| (lo[i] + hi[i]) as f64 / 2.0).collect();
        let diam = (0..d).map(|i| ((hi[i] - lo[i]) as f64).powi(2)).sum::<f64>().sqrt();
        Ok(Target { set, centre, diam })
    }

    fn contains(&self, z: &[i64]) -> bool {
        self.set.get_point(z)
    }

    fn dist2(&self, z: &[i64]) -> f64 {
        z.iter().zip(&self.centre).map(|(&a, &c)| (a as f64 - c).powi(2)).sum()
    }
}

#[inline]
fn random_step<R: Rng>(z: &mut [i64], rng: &mut R) {
    let k = rng.random_range(0..2 * z.len());
    z[k / 2] += if k % 2 == 0 { 1 } else { -1 };
}

/// Walk from `z` until it hits `K` (`None`) or leaves the ball of radius
/// `radius` (`Some(exit point)`).
fn run_until<R: Rng>(
    t: &Target,
    z: &mut [i64],
    radius2: f64,
    rng: &mut R,
    mut visit: impl FnMut(&[i64]) -> bool,
) -> Option<Vec<i64>> {
    loop {
        random_step(z, rng);
        if visit(z) {
            return None;
        }
        if t.dist2(z) >= radius2 {
            return Some(z.to_vec());
        }
    }
}

pub fn estimate_capacity(set: &OccupancyGrid, budget: &CapacityBudget) -> Result<CapacityEstimate> {
    let t = Target::new(set)?;
    if budget.walks_per_cell == 0 {
        return Err(Error::InvalidConfig("walks_per_cell must be positive".into()));
    }
    let g = set.geometry();
    let d = g.dim();
    let radius = budget.radius.unwrap_or(4.0 * t.diam + 16.0);
    if radius <= t.diam {
        return Err(Error::InvalidConfig(format!("escape radius {radius} inside the set")));
    }
    let radius2 = radius * radius;
    let cells: Vec<usize> = set.occupied().collect();
    // per cell: (sum I, sum I phi, sum I phi^2) with I the escape indicator
    let stats: Vec<(f64, f64, f64)> = cells
        .par_iter()
        .map(|&c| {
            let x = g.point(c);
            let enclosed =
                g.distinct_neighbors(c).len() == 2 * d && g.distinct_neighbors(c).iter().all(|&y| set.get(y));
            if enclosed {
                return (0.0, 0.0, 0.0);
            }
            let mut rng = budget.seed.substream(c as u64);
            let mut a = 0.0;
            let mut b = 0.0;
            let mut b2 = 0.0;
            let mut z = x.clone();
            for _ in 0..budget.walks_per_cell {
                z.copy_from_slice(&x);
                if let Some(exit) = run_until(&t, &mut z, radius2, &mut rng, |p| t.contains(p)) {
                    let phi = green_far_field(d, t.dist2(&exit).sqrt());
                    a += 1.0;
                    b += phi;
                    b2 += phi * phi;
                }
            }
            (a, b, b2)
        })
        .collect();
    let n = budget.walks_per_cell as f64;
    let sum_a: f64 = stats.iter().map(|s| s.0).sum::<f64>() / n;
    let sum_b: f64 = stats.iter().map(|s| s.1).sum::<f64>() / n;
    let cap = sum_a / (1.0 + sum_b);
    let mut var_total = 0.0;
    let weights = cells
        .iter()
        .zip(&stats)
        .map(|(&c, &(a, b, b2))| {
            // per-walk value Y = I (1 - cap phi)
            let mean = (a - cap * b) / n;
            let second = (a - 2.0 * cap * b + cap * cap * b2) / n;
            let var = (second - mean * mean).max(0.0) / n;
            var_total += var;
            (c, mean, var.sqrt())
        })
        .collect();
    let std_err = var_total.sqrt() / (1.0 + sum_b);
    let truncation_bias = cap * sum_b * (d as f64 - 2.0) * (t.diam / 2.0) / radius;
    Ok(CapacityEstimate { set: set.clone(), cap, std_err, weights, radius, truncation_bias })
}

/// Cube `anchor + [0, side)^d` as a set of `Z^d`.
pub fn cube(anchor: Vec<i64>, side: usize) -> Result<OccupancyGrid> {
    Ok(OccupancyGrid::full(Geometry::window(anchor, side)?))
}

// ---------------------------------------------------------------------------
// Sampling

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SamplerParams {
    pub capacity: CapacityBudget,
    /// Distance from the centre at which re-entry is decided; defaults to
    /// `8 diam(K) + 32`.
    pub truncation: Option<f64>,
}

/// Trace of `I^u` on a box.
#[derive(Clone, Debug, PartialEq)]
pub struct InterlacementTrace {
    pub u: f64,
    pub trace: OccupancyGrid,
    pub trajectories: u64,
}

/// Reusable sampler for one target set.
#[derive(Clone, Debug)]
pub struct InterlacementSampler {
    pub capacity: CapacityEstimate,
    pub truncation: f64,
    /// Cumulative normalized `e_K` over the support for entry sampling.
    support: Vec<(Vec<i64>, f64)>,
    cumulative: Vec<f64>,
}

impl InterlacementSampler {
    pub fn new(set: &OccupancyGrid, params: &SamplerParams) -> Result<Self> {
        let capacity = estimate_capacity(set, &params.capacity)?;
        Self::with_capacity(capacity, params.truncation)
    }

    pub fn with_capacity(capacity: CapacityEstimate, truncation: Option<f64>) -> Result<Self> {
        let t = Target::new(&capacity.set)?;
        let truncation = truncation.unwrap_or(8.0 * t.diam + 32.0);
        if truncation <= t.diam {
            return Err(Error::InvalidConfig(format!("truncation distance {truncation} inside the set")));
        }
        let support = capacity.support();
        if support.is_empty() {
            return Err(Error::Numerical("equilibrium measure has empty support".into()));
        }
        let mut acc = 0.0;
        let cumulative = support
            .iter()
            .map(|(_, w)| {
                acc += w;
                acc
            })
            .collect();
        Ok(InterlacementSampler { capacity, truncation, support, cumulative })
    }

    pub fn cap(&self) -> f64 {
        self.capacity.cap
    }

    fn draw_entry<R: Rng>(&self, rng: &mut R) -> Vec<i64> {
        let total = *self.cumulative.last().expect("nonempty support");
        let u = rng.random::<f64>() * total;
        let k = self.cumulative.partition_point(|&c| c < u).min(self.support.len() - 1);
        self.support[k].0.clone()
    }

    /// Forward half of one trajectory, marking the cells of `K` it visits.
    fn trajectory<R: Rng>(&self, rng: &mut R, trace: &mut OccupancyGrid) {
        let t = Target::new(&self.capacity.set).expect("validated set");
        let g = trace.geometry().clone();
        let d = g.dim();
        let d2 = self.truncation * self.truncation;
        let mut z = self.draw_entry(rng);
        trace.insert(g.index_of_point(&z).expect("entry inside K"));
        loop {
            let exit = run_until(&t, &mut z, d2, rng, |p| {
                if let Some(c) = g.index_of_point(p) {
                    if t.set.get(c) {
                        trace.insert(c);
                    }
                }
                false
            })
            .expect("walk only stops at the truncation sphere");
            let weights: Vec<f64> = self
                .support
                .iter()
                .map(|(y, w)| {
                    let r = exit.iter().zip(y).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>().sqrt();
                    w * green_far_field(d, r)
                })
                .collect();
            let back: f64 = weights.iter().sum();
            if rng.random::<f64>() >= back.min(1.0) {
                return;
            }
            let mut pick = rng.random::<f64>() * back;
            let mut k = 0;
            while k + 1 < weights.len() && pick >= weights[k] {
                pick -= weights[k];
                k += 1;
            }
            z = self.support[k].0.clone();
            trace.insert(g.index_of_point(&z).expect("re-entry inside K"));
        }
    }

    /// Traces at several levels from one Poisson soup: each trajectory gets
    /// a uniform label on `[0, max u]` and belongs to every level above its
    /// label, so the traces are nested.
    pub fn sample_levels(&self, levels: &[f64], seed: RngSeed) -> Result<Vec<InterlacementTrace>> {
        if levels.iter().any(|u| !(u.is_finite() && *u >= 0.0)) {
            return Err(Error::InvalidConfig("levels must be finite and nonnegative".into()));
        }
        let top = levels.iter().cloned().fold(0.0, f64::max);
        let set = &self.capacity.set;
        let mut rng = seed.substream(0);
        let count = if top * self.cap() > 0.0 {
            Poisson::new(top * self.cap()).map_err(|e| Error::Numerical(e.to_string()))?.sample(&mut rng) as u64
        } else {
            0
        };
        let labels: Vec<f64> = (0..count).map(|_| rng.random::<f64>() * top).collect();
        let paths: Vec<OccupancyGrid> = (0..count)
            .into_par_iter()
            .map(|i| {
                let mut trace = OccupancyGrid::empty(set.geometry().clone());
                self.trajectory(&mut seed.substream(i + 1), &mut trace);
                trace
            })
            .collect();
        Ok(levels
            .iter()
            .map(|&u| {
                let mut trace = OccupancyGrid::empty(set.geometry().clone());
                let mut n = 0;
                for (p, &l) in paths.iter().zip(&labels) {
                    if l < u || (l == u && u > 0.0) {
                        n += 1;
                        for c in p.occupied() {
                            trace.insert(c);
                        }
                    }
                }
                InterlacementTrace { u, trace, trajectories: n }
            })
            .collect())
    }

    pub fn sample(&self, u: f64, seed: RngSeed) -> Result<InterlacementTrace> {
        Ok(self.sample_levels(&[u], seed)?.remove(0))
    }
}

/// One-shot sampler on the cube `anchor + [0, side)^d`.
pub fn sample_interlacement_box(
    anchor: Vec<i64>,
    side: usize,
    u: f64,
    seed: RngSeed,
    params: &SamplerParams,
) -> Result<InterlacementTrace> {
    InterlacementSampler::new(&cube(anchor, side)?, params)?.sample(u, seed)
}

// ---------------------------------------------------------------------------
// Sandwich diagnostic

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub u: f64,
    pub epsilon: f64,
    pub box_side: usize,
    pub trials: u64,
    pub freq_lower: Vec<f64>,
    pub freq_range: Vec<f64>,
    pub freq_upper: Vec<f64>,
    /// Fraction of cells where `lower <= range <= upper` holds within 3 sigma.
    pub cell_order_fraction: f64,
    pub mean_count: [f64; 3],
    pub mean_count_err: [f64; 3],
    pub mean_order_holds: bool,
    /// Largest violation of `F_upper <= F_range <= F_lower` between the
    /// empirical CDFs of the box counts.
    pub cdf_violation: f64,
    /// Two-sample KS critical value at the 5% level.
    pub cdf_tolerance: f64,
    /// `epsilon = 0`: the two bounds coincide and the test says nothing.
    pub vacuous: bool,
}

fn within(lower: f64, upper: f64, var: f64) -> bool {
    lower - upper <= 3.0 * var.sqrt()
}

pub fn sandwich_diagnostic(
    cfg: &TorusConfig,
    epsilon: f64,
    box_side: usize,
    trials: u64,
    seed: RngSeed,
    params: &SamplerParams,
) -> Result<SandwichReport> {
    cfg.validate()?;
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::InvalidConfig(format!("epsilon = {epsilon} must lie in [0, 1)")));
    }
    if box_side == 0 || 7 * box_side > 6 * cfg.n {
        return Err(Error::Precondition(format!("box side {box_side} must be in [1, 6N/7] at N = {}", cfg.n)));
    }
    if trials == 0 {
        return Err(Error::InvalidConfig("need at least one trial".into()));
    }
    let d = cfg.d;
    let set = cube(vec![0; d], box_side)?;
    let sampler = InterlacementSampler::new(&set, params)?;
    let (lo_u, hi_u) = (cfg.u * (1.0 - epsilon), cfg.u * (1.0 + epsilon));
    let cells = set.geometry().cells();
    let range_seed = seed.trial(1);
    let inter_seed = seed.trial(2);
    let samples: Vec<[OccupancyGrid; 3]> = (0..trials)
        .into_par_iter()
        .map(|k| {
            let (r, _) = sample_range(cfg, range_seed.trial(k), false)?;
            let r_box = crate::lattice::periodic_window_of(&r, set.geometry());
            let mut lv = sampler.sample_levels(&[lo_u, hi_u], inter_seed.trial(k))?;
            let hi = lv.pop().expect("two levels").trace;
            let lo = lv.pop().expect("two levels").trace;
            Ok([lo, r_box, hi])
        })
        .collect::<Result<_>>()?;
    let n = trials as f64;
    let mut freq = [vec![0.0; cells], vec![0.0; cells], vec![0.0; cells]];
    let mut counts: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for s in &samples {
        for j in 0..3 {
            for c in s[j].occupied() {
                freq[j][c] += 1.0;
            }
            counts[j].push(s[j].popcount() as f64);
        }
    }
    for f in freq.iter_mut() {
        f.iter_mut().for_each(|x| *x /= n);
    }
    let bvar = |p: f64| p * (1.0 - p) / n;
    let ok_cells = (0..cells)
        .filter(|&c| {
            let (l, r, h) = (freq[0][c], freq[1][c], freq[2][c]);
            within(l, r, bvar(l) + bvar(r)) && within(r, h, bvar(r) + bvar(h))
        })
        .count();
    let mut mean = [0.0; 3];
    let mut err = [0.0; 3];
    for j in 0..3 {
        mean[j] = counts[j].iter().sum::<f64>() / n;
        let var = counts[j].iter().map(|x| (x - mean[j]).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        err[j] = (var / n).sqrt();
    }
    let mean_order_holds = within(mean[0], mean[1], err[0].powi(2) + err[1].powi(2))
        && within(mean[1], mean[2], err[1].powi(2) + err[2].powi(2));
    let cdf = |xs: &[f64], k: f64| xs.iter().filter(|&&x| x <= k).count() as f64 / n;
    let mut cdf_violation = 0.0f64;
    for k in 0..=cells {
        let k = k as f64;
        let (fl, fr, fh) = (cdf(&counts[0], k), cdf(&counts[1], k), cdf(&counts[2], k));
        cdf_violation = cdf_violation.max(fh - fr).max(fr - fl);
    }
    Ok(SandwichReport {
        u: cfg.u,
        epsilon,
        box_side,
        trials,
        cell_order_fraction: ok_cells as f64 / cells as f64,
        freq_lower: std::mem::take(&mut freq[0]),
        freq_range: std::mem::take(&mut freq[1]),
        freq_upper: std::mem::take(&mut freq[2]),
        mean_count: mean,
        mean_count_err: err,
        mean_order_holds,
        cdf_violation,
        cdf_tolerance: 1.36 * (2.0 / n).sqrt(),
        vacuous: epsilon == 0.0,
    })
}
