//! The lazy random walk on an induced subgraph of the torus.
//!
//! Transition law: hold with probability 1/2, otherwise move to one of the
//! `d_x` distinct occupied neighbors. The chain is reversible with
//! `pi(x) = d_x / sum_y d_y`, and the symmetrized kernel
//! `D^{1/2} P D^{-1/2} = I/2 + D^{-1/2} A D^{-1/2} / 2` has spectrum in
//! `[0, 1]`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{connected_components, CellSet, Geometry, OccupancyGrid};
use crate::rng::RngSeed;

/// Default vertex cap for the exact (dense) methods.
pub const EXACT_CAP: usize = 4000;
/// Slack on the 1/4 threshold so eigen-noise cannot flip a comparison.
pub const CRITERION_SLACK: f64 = 1e-12;
pub const UNIFORM_THRESHOLD: f64 = 0.25;

/// Lazy walk on a connected induced subgraph. Vertices are numbered
/// `0..V` in increasing cell order.
#[derive(Clone, Debug)]
pub struct LazyChain {
    geom: Geometry,
    cells: CellSet,
    offsets: Vec<usize>,
    adj: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationaryDist {
    pub pi: Vec<f64>,
}

/// Builds the lazy chain on the occupied cells of `s`, which must be
/// nonempty and connected.
pub fn build_chain(s: &OccupancyGrid) -> Result<(LazyChain, StationaryDist)> {
    if s.popcount() == 0 {
        return Err(Error::Empty);
    }
    let parts = connected_components(s).len();
    if parts != 1 {
        return Err(Error::Disconnected { components: parts });
    }
    let chain = LazyChain::from_grid(s);
    let pi = chain.stationary();
    Ok((chain, pi))
}

impl LazyChain {
    fn from_grid(s: &OccupancyGrid) -> LazyChain {
        let geom = s.geometry().clone();
        let cells = s.cell_set();
        let mut offsets = Vec::with_capacity(cells.len() + 1);
        let mut adj = Vec::new();
        offsets.push(0);
        for c in cells.iter() {
            let mut nb: Vec<u32> = geom
                .distinct_neighbors(c)
                .into_iter()
                .filter(|&j| s.get(j))
                .map(|j| cells.as_slice().binary_search(&j).expect("occupied neighbor") as u32)
                .collect();
            nb.sort_unstable();
            adj.extend(nb);
            offsets.push(adj.len());
        }
        LazyChain { geom, cells, offsets, adj }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    pub fn cells(&self) -> &CellSet {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.len() / 2
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn neighbors(&self, v: usize) -> &[u32] {
        &self.adj[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn cell(&self, v: usize) -> usize {
        self.cells.as_slice()[v]
    }

    pub fn vertex_of_cell(&self, cell: usize) -> Option<usize> {
        self.cells.as_slice().binary_search(&cell).ok()
    }

    pub fn stationary(&self) -> StationaryDist {
        let total = self.adj.len();
        if total == 0 {
            return StationaryDist { pi: vec![1.0] };
        }
        StationaryDist { pi: (0..self.len()).map(|v| self.degree(v) as f64 / total as f64).collect() }
    }

    /// One-step probability `p(x, y)`.
    pub fn transition(&self, x: usize, y: usize) -> f64 {
        let dx = self.degree(x);
        if x == y {
            if dx == 0 {
                1.0
            } else {
                0.5
            }
        } else if self.neighbors(x).binary_search(&(y as u32)).is_ok() {
            0.5 / dx as f64
        } else {
            0.0
        }
    }

    /// `mu P` for a row distribution `mu`.
    pub fn step_distribution(&self, mu: &[f64], out: &mut [f64]) {
        if self.adj.is_empty() {
            out.copy_from_slice(mu);
            return;
        }
        for (o, m) in out.iter_mut().zip(mu) {
            *o = 0.5 * m;
        }
        for x in 0..self.len() {
            let share = 0.5 * mu[x] / self.degree(x) as f64;
            if share != 0.0 {
                for &y in self.neighbors(x) {
                    out[y as usize] += share;
                }
            }
        }
    }

    /// Dense transition matrix (small chains only).
    pub fn dense_transition(&self) -> DMatrix<f64> {
        let v = self.len();
        DMatrix::from_fn(v, v, |x, y| self.transition(x, y))
    }

    /// Dense symmetrized kernel `D^{1/2} P D^{-1/2}`.
    fn dense_symmetric(&self) -> DMatrix<f64> {
        let v = self.len();
        let mut m = DMatrix::zeros(v, v);
        for x in 0..v {
            m[(x, x)] = if self.degree(x) == 0 { 1.0 } else { 0.5 };
            for &y in self.neighbors(x) {
                let y = y as usize;
                m[(x, y)] = 0.5 / ((self.degree(x) * self.degree(y)) as f64).sqrt();
            }
        }
        m
    }

    /// `S x` for the symmetrized kernel, column by column.
    fn apply_symmetric(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x * 0.5;
        let inv_sqrt: Vec<f64> = (0..self.len()).map(|v| 1.0 / (self.degree(v) as f64).sqrt()).collect();
        for c in 0..x.ncols() {
            for v in 0..self.len() {
                let mut acc = 0.0;
                for &w in self.neighbors(v) {
                    acc += x[(w as usize, c)] * inv_sqrt[w as usize];
                }
                out[(v, c)] += 0.5 * inv_sqrt[v] * acc;
            }
        }
        out
    }

    /// Cells in the `l^inf` ball of radius `r` around vertex `x` (torus
    /// metric), as vertex ids.
    pub fn ball(&self, x: usize, r: u64) -> Vec<usize> {
        let cx = self.cell(x);
        (0..self.len()).filter(|&y| self.geom.linf_distance(cx, self.cell(y)) <= r).collect()
    }
}

// ---------------------------------------------------------------------------
// Spectral data

/// Eigenpairs of the symmetrized lazy kernel, eigenvalues descending.
#[derive(Clone, Debug)]
pub struct SpectralData {
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors as columns.
    pub eigenvectors: DMatrix<f64>,
    pub pi: Vec<f64>,
}

/// Full eigendecomposition; fails above `cap` vertices or when the
/// residual `max |S v - lambda v|` exceeds `1e-8`.
pub fn spectral_decomposition(chain: &LazyChain, cap: usize) -> Result<SpectralData> {
    let v = chain.len();
    if v > cap {
        return Err(Error::CapExceeded { vertices: v, cap });
    }
    let s = chain.dense_symmetric();
    let eig = s.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..v).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let eigenvectors = DMatrix::from_fn(v, v, |i, j| eig.eigenvectors[(i, order[j])]);
    let residual =
        (&s * &eigenvectors - &eigenvectors * DMatrix::from_diagonal(&DVector::from_vec(eigenvalues.clone()))).amax();
    if residual > 1e-8 {
        return Err(Error::Numerical(format!("eigen-residual {residual:.3e} exceeds 1e-8")));
    }
    Ok(SpectralData { eigenvalues, eigenvectors, pi: chain.stationary().pi })
}

impl SpectralData {
    pub fn lambda2(&self) -> Option<f64> {
        self.eigenvalues.get(1).copied()
    }

    /// `w_k(x) = v_k(x) / sqrt(pi(x))`, the right eigenvectors of `P`
    /// normalized in `L^2(pi)`.
    pub fn right_eigenvector(&self, k: usize) -> Vec<f64> {
        (0..self.pi.len()).map(|x| self.eigenvectors[(x, k)] / self.pi[x].sqrt()).collect()
    }

    /// `p_n(x, y) = sqrt(pi(y)/pi(x)) sum_k lambda_k^n v_k(x) v_k(y)`.
    pub fn transition_power(&self, n: u64) -> DMatrix<f64> {
        let v = self.pi.len();
        let lam: Vec<f64> = self.eigenvalues.iter().map(|&l| pow_clamped(l, n)).collect();
        let scaled = DMatrix::from_fn(v, v, |i, k| self.eigenvectors[(i, k)] * lam[k]);
        let core = scaled * self.eigenvectors.transpose();
        DMatrix::from_fn(v, v, |x, y| core[(x, y)] * (self.pi[y] / self.pi[x]).sqrt())
    }
}

fn pow_clamped(l: f64, n: u64) -> f64 {
    let l = l.clamp(0.0, 1.0);
    if n == 0 {
        1.0
    } else {
        l.powf(n as f64)
    }
}

// ---------------------------------------------------------------------------
// Uniform mixing time

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MixingMethod {
    ExactSpectral,
    MatrixPower,
    McDiagonal,
}

impl MixingMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            MixingMethod::ExactSpectral => "exact-spectral",
            MixingMethod::MatrixPower => "matrix-power",
            MixingMethod::McDiagonal => "mc-diagonal",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixingEstimate {
    pub value: u64,
    pub method: MixingMethod,
    /// Half-width of the reported confidence interval (Monte Carlo only).
    pub errbar: Option<f64>,
    /// Cell attaining the worst deviation at `value - 1` (or at 0).
    pub worst_cell: Option<usize>,
    pub lambda2: Option<f64>,
}

/// Hard ceiling on the scan length of the exact methods.
pub const MAX_SCAN: u64 = 50_000_000;

/// Exact `1/4`-uniform mixing time from the spectral decomposition.
///
/// For a lazy reversible chain the kernel `p_n(x,y)/pi(y) - 1` equals
/// `<a_x, a_y>` with `a_x(k) = lambda_k^{n/2} w_k(x)` over the non-trivial
/// modes (all `lambda_k >= 0`), so by Cauchy-Schwarz the worst pair is a
/// diagonal one: `max_{x,y} |p_n(x,y)/pi(y) - 1| = max_x (p_n(x,x)/pi(x) - 1)`.
/// Every `n` from 0 upward is tested until the first success.
pub fn uniform_mixing_time_exact(chain: &LazyChain, cap: usize) -> Result<MixingEstimate> {
    let v = chain.len();
    if v == 1 {
        return Ok(MixingEstimate {
            value: 0,
            method: MixingMethod::ExactSpectral,
            errbar: None,
            worst_cell: Some(chain.cell(0)),
            lambda2: None,
        });
    }
    let spec = spectral_decomposition(chain, cap)?;
    // squared right eigenvectors of the non-trivial modes, V x (V-1)
    let w2 = DMatrix::from_fn(v, v - 1, |x, k| {
        let w = spec.eigenvectors[(x, k + 1)] / spec.pi[x].sqrt();
        w * w
    });
    let mut lam_n = DVector::from_element(v - 1, 1.0);
    let lam = DVector::from_iterator(v - 1, spec.eigenvalues[1..].iter().map(|l| l.clamp(0.0, 1.0)));
    let mut worst = 0usize;
    for n in 0..=MAX_SCAN {
        let dev = &w2 * &lam_n;
        let (arg, max) = dev.argmax();
        if max <= UNIFORM_THRESHOLD + CRITERION_SLACK {
            return Ok(MixingEstimate {
                value: n,
                method: MixingMethod::ExactSpectral,
                errbar: None,
                worst_cell: Some(chain.cell(worst)),
                lambda2: spec.lambda2(),
            });
        }
        worst = arg;
        lam_n.component_mul_assign(&lam);
    }
    Err(Error::BudgetExhausted(format!("no mixing within {MAX_SCAN} steps")))
}

/// Exact mixing time by dense `n`-step products, scanning all pairs
/// `(x, y)` at every `n`. Independent of the spectral route.
pub fn uniform_mixing_time_matrix_power(chain: &LazyChain, cap: usize) -> Result<MixingEstimate> {
    let v = chain.len();
    if v > cap {
        return Err(Error::CapExceeded { vertices: v, cap });
    }
    let pi = chain.stationary().pi;
    let mut rows: Vec<Vec<f64>> = (0..v)
        .map(|x| {
            let mut r = vec![0.0; v];
            r[x] = 1.0;
            r
        })
        .collect();
    let mut scratch = vec![0.0; v];
    let mut worst = 0usize;
    for n in 0..=MAX_SCAN {
        let mut max = 0.0f64;
        let mut arg = 0usize;
        for (x, r) in rows.iter().enumerate() {
            for (y, &p) in r.iter().enumerate() {
                let dev = (p - pi[y]).abs() / pi[y];
                if dev > max {
                    max = dev;
                    arg = x;
                }
            }
        }
        if max <= UNIFORM_THRESHOLD + CRITERION_SLACK {
            return Ok(MixingEstimate {
                value: n,
                method: MixingMethod::MatrixPower,
                errbar: None,
                worst_cell: Some(chain.cell(worst)),
                lambda2: None,
            });
        }
        worst = arg;
        for r in rows.iter_mut() {
            chain.step_distribution(r, &mut scratch);
            std::mem::swap(r, &mut scratch);
        }
    }
    Err(Error::BudgetExhausted(format!("no mixing within {MAX_SCAN} steps")))
}

// ---------------------------------------------------------------------------
// Slow modes for large chains

/// The `k` largest non-trivial eigenpairs of the symmetrized kernel.
/// Dense when `V <= dense_cap`, otherwise block subspace iteration with
/// Rayleigh-Ritz on the complement of `sqrt(pi)`.
pub fn slow_modes(chain: &LazyChain, k: usize, dense_cap: usize, seed: RngSeed) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let v = chain.len();
    let k = k.min(v.saturating_sub(1));
    if k == 0 {
        return Ok((Vec::new(), DMatrix::zeros(v, 0)));
    }
    if v <= dense_cap {
        let spec = spectral_decomposition(chain, dense_cap)?;
        let vals = spec.eigenvalues[1..=k].to_vec();
        let vecs = spec.eigenvectors.columns(1, k).into_owned();
        return Ok((vals, vecs));
    }
    let pi = chain.stationary().pi;
    let top = DVector::from_iterator(v, pi.iter().map(|p| p.sqrt()));
    let block = (k + 6).min(v - 1);
    let mut rng = seed.rng();
    let mut x = DMatrix::from_fn(v, block, |_, _| rng.random::<f64>() - 0.5);
    let deflate = |m: &mut DMatrix<f64>| {
        let proj = top.transpose() * &*m;
        *m -= &top * proj;
    };
    deflate(&mut x);
    x = x.qr().q();
    let mut vals = vec![0.0; block];
    for iter in 0..4000 {
        let mut y = chain.apply_symmetric(&x);
        deflate(&mut y);
        x = y.qr().q();
        if iter % 20 == 19 {
            let sx = chain.apply_symmetric(&x);
            let h = x.transpose() * &sx;
            let h = (&h + h.transpose()) * 0.5;
            let eig = h.symmetric_eigen();
            let mut order: Vec<usize> = (0..block).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
            let rot = DMatrix::from_fn(block, block, |i, j| eig.eigenvectors[(i, order[j])]);
            x = &x * rot;
            vals = order.iter().map(|&o| eig.eigenvalues[o]).collect();
            let sx = chain.apply_symmetric(&x);
            let resid = (0..k).map(|j| (sx.column(j) - x.column(j) * vals[j]).norm()).fold(0.0, f64::max);
            if resid < 1e-7 {
                break;
            }
        }
    }
    Ok((vals[..k].to_vec(), x.columns(0, k).into_owned()))
}

// ---------------------------------------------------------------------------
// Monte Carlo estimator

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct McParams {
    /// Walkers launched from each sampled vertex.
    pub walkers: usize,
    /// Minimum number of sampled vertices (all vertices when `V` is smaller).
    pub vertices: usize,
    /// Poisson-bootstrap replicates.
    pub bootstrap: usize,
    /// Two-sided confidence level of the reported interval.
    pub confidence: f64,
    /// Walk length budget per vertex; the time horizon is twice this.
    pub max_walk_len: u64,
    pub seed: RngSeed,
}

impl Default for McParams {
    fn default() -> Self {
        McParams {
            walkers: 2000,
            vertices: 64,
            bootstrap: 40,
            confidence: 0.95,
            max_walk_len: 200_000,
            seed: RngSeed::new(0x6d63, 0),
        }
    }
}

/// Vertices probed by the Monte Carlo estimator: evenly spaced along a
/// Morton (Z-order) sweep including both ends, the two ends of a
/// double-sweep BFS, and the lowest-degree vertices.
pub fn probe_vertices(chain: &LazyChain, count: usize) -> Vec<usize> {
    let v = chain.len();
    if v <= count {
        return (0..v).collect();
    }
    let geom = chain.geometry();
    let mut order: Vec<(u128, usize)> = (0..v).map(|x| (morton_key(&geom.coords(chain.cell(x))), x)).collect();
    order.sort_unstable();
    let mut picks: Vec<usize> = (0..count).map(|i| order[i * (v - 1) / (count - 1)].1).collect();
    let a = bfs_farthest(chain, 0);
    let b = bfs_farthest(chain, a);
    picks.push(a);
    picks.push(b);
    let mut by_degree: Vec<usize> = (0..v).collect();
    by_degree.sort_by_key(|&x| (chain.degree(x), x));
    picks.extend(by_degree.into_iter().take(8));
    picks.sort_unstable();
    picks.dedup();
    picks
}

fn morton_key(coords: &[usize]) -> u128 {
    let d = coords.len();
    let mut key = 0u128;
    for bit in (0..(128 / d).min(32)).rev() {
        for c in coords {
            key = (key << 1) | ((c >> bit) & 1) as u128;
        }
    }
    key
}

fn bfs_farthest(chain: &LazyChain, from: usize) -> usize {
    let mut dist = vec![usize::MAX; chain.len()];
    let mut queue = std::collections::VecDeque::from([from]);
    dist[from] = 0;
    let mut last = from;
    while let Some(x) = queue.pop_front() {
        last = x;
        for &y in chain.neighbors(x) {
            let y = y as usize;
            if dist[y] == usize::MAX {
                dist[y] = dist[x] + 1;
                queue.push_back(y);
            }
        }
    }
    last
}

#[inline]
fn lazy_step<R: Rng>(chain: &LazyChain, x: usize, rng: &mut R) -> usize {
    let r: u64 = rng.random();
    if r & 1 == 0 {
        return x;
    }
    let nb = chain.neighbors(x);
    if nb.is_empty() {
        return x;
    }
    nb[((r >> 1) % nb.len() as u64) as usize] as usize
}

/// Crossing times of the diagonal deviation for one starting vertex: entry
/// 0 is the point estimate, entries `1..=B` the bootstrap replicates.
///
/// With `T` independent walkers from `x`, positions `X^i_k`, the pair sums
/// `sum_{i != j} 1{X^i_k = X^j_k} / pi` and `sum_{i != j} 1{X^i_k = X^j_{k+1}} / pi`
/// are unbiased for `p_{2k}(x,x)/pi(x)` and `p_{2k+1}(x,x)/pi(x)` by
/// reversibility.
fn vertex_crossings(chain: &LazyChain, pi: &[f64], x: usize, params: &McParams) -> Result<Vec<u64>> {
    let t = params.walkers;
    let reps = params.bootstrap + 1;
    let seed = RngSeed::new(params.seed.root, params.seed.stream ^ (x as u64).wrapping_mul(0x9E37_79B9));
    let mut walk_rng = seed.substream(1);
    let mut boot_rng = seed.substream(2);
    // weights[i * reps + b]
    let mut weights = vec![1.0f64; t * reps];
    for i in 0..t {
        for b in 1..reps {
            weights[i * reps + b] = poisson1(&mut boot_rng) as f64;
        }
    }
    let mut total = vec![0.0f64; reps];
    let mut total_sq = vec![0.0f64; reps];
    for i in 0..t {
        for b in 0..reps {
            let w = weights[i * reps + b];
            total[b] += w;
            total_sq[b] += w * w;
        }
    }
    let norm: Vec<f64> = (0..reps).map(|b| total[b] * total[b] - total_sq[b]).collect();

    let v = chain.len();
    let mut cur = vec![x; t];
    let mut next = vec![0usize; t];
    let mut count_cur = vec![0.0f64; v * reps];
    let mut count_next = vec![0.0f64; v * reps];
    let mut touched_cur: Vec<usize> = Vec::new();
    let mut touched_next: Vec<usize> = Vec::new();
    let mut mark = vec![false; v];

    let fill = |pos: &[usize], counts: &mut [f64], touched: &mut Vec<usize>, mark: &mut [bool]| {
        for &y in touched.iter() {
            counts[y * reps..(y + 1) * reps].iter_mut().for_each(|c| *c = 0.0);
            mark[y] = false;
        }
        touched.clear();
        for (i, &y) in pos.iter().enumerate() {
            if !mark[y] {
                mark[y] = true;
                touched.push(y);
            }
            let row = &mut counts[y * reps..(y + 1) * reps];
            for (c, w) in row.iter_mut().zip(&weights[i * reps..(i + 1) * reps]) {
                *c += w;
            }
        }
    };

    let mut crossing: Vec<Option<u64>> = vec![None; reps];
    let mut mark_next = vec![false; v];
    fill(&cur, &mut count_cur, &mut touched_cur, &mut mark);
    let threshold = UNIFORM_THRESHOLD + CRITERION_SLACK;
    for k in 0..params.max_walk_len {
        for i in 0..t {
            next[i] = lazy_step(chain, cur[i], &mut walk_rng);
        }
        fill(&next, &mut count_next, &mut touched_next, &mut mark_next);
        let mut even = vec![0.0f64; reps];
        for &y in &touched_cur {
            let row = &count_cur[y * reps..(y + 1) * reps];
            for b in 0..reps {
                even[b] += row[b] * row[b] / pi[y];
            }
        }
        let mut odd = vec![0.0f64; reps];
        for &y in &touched_cur {
            let a = &count_cur[y * reps..(y + 1) * reps];
            let c = &count_next[y * reps..(y + 1) * reps];
            for b in 0..reps {
                odd[b] += a[b] * c[b] / pi[y];
            }
        }
        for i in 0..t {
            let wrow = &weights[i * reps..(i + 1) * reps];
            let inv = 1.0 / pi[cur[i]];
            let stay = cur[i] == next[i];
            for b in 0..reps {
                let w2 = wrow[b] * wrow[b] * inv;
                even[b] -= w2;
                if stay {
                    odd[b] -= w2;
                }
            }
        }
        for b in 0..reps {
            if crossing[b].is_some() || norm[b] <= 0.0 {
                continue;
            }
            if even[b] / norm[b] - 1.0 <= threshold {
                crossing[b] = Some(2 * k);
            } else if odd[b] / norm[b] - 1.0 <= threshold {
                crossing[b] = Some(2 * k + 1);
            }
        }
        if crossing.iter().enumerate().all(|(b, c)| c.is_some() || norm[b] <= 0.0) {
            break;
        }
        std::mem::swap(&mut cur, &mut next);
        std::mem::swap(&mut count_cur, &mut count_next);
        std::mem::swap(&mut touched_cur, &mut touched_next);
        std::mem::swap(&mut mark, &mut mark_next);
    }
    match crossing[0] {
        None => Err(Error::BudgetExhausted(format!(
            "deviation at vertex {} still above 1/4 after {} steps",
            chain.cell(x),
            2 * params.max_walk_len
        ))),
        Some(c0) => Ok(crossing.into_iter().map(|c| c.unwrap_or(c0)).collect()),
    }
}

fn poisson1<R: Rng>(rng: &mut R) -> u32 {
    // inversion for Poisson(1)
    let u: f64 = rng.random();
    let mut p = (-1.0f64).exp();
    let mut cdf = p;
    let mut k = 0;
    while u > cdf && k < 20 {
        k += 1;
        p /= k as f64;
        cdf += p;
    }
    k
}

/// Monte Carlo uniform mixing time from diagonal return statistics over
/// the probe vertices; the estimate is the latest per-vertex crossing of
/// `1/4`, with a Poisson-bootstrap interval.
pub fn uniform_mixing_time_mc(chain: &LazyChain, params: &McParams) -> Result<MixingEstimate> {
    if params.walkers < 2 {
        return Err(Error::InvalidConfig("need at least two walkers".into()));
    }
    if !(params.confidence > 0.0 && params.confidence < 1.0) {
        return Err(Error::InvalidConfig("confidence must lie in (0, 1)".into()));
    }
    if chain.len() == 1 {
        return Ok(MixingEstimate {
            value: 0,
            method: MixingMethod::McDiagonal,
            errbar: Some(0.0),
            worst_cell: Some(chain.cell(0)),
            lambda2: None,
        });
    }
    let pi = chain.stationary().pi;
    let probes = probe_vertices(chain, params.vertices);
    let per_vertex: Vec<Vec<u64>> =
        probes.par_iter().map(|&x| vertex_crossings(chain, &pi, x, params)).collect::<Result<_>>()?;
    let reps = params.bootstrap + 1;
    let mut best = vec![0u64; reps];
    let mut worst_vertex = probes[0];
    for (pv, &x) in per_vertex.iter().zip(&probes) {
        if pv[0] > best[0] {
            worst_vertex = x;
        }
        for b in 0..reps {
            best[b] = best[b].max(pv[b]);
        }
    }
    let value = best[0];
    let mut boot: Vec<u64> = best[1..].to_vec();
    boot.sort_unstable();
    let errbar = if boot.is_empty() {
        1.0
    } else {
        let lo = boot[(((1.0 - params.confidence) / 2.0) * (boot.len() - 1) as f64).floor() as usize];
        let hi = boot[(((1.0 + params.confidence) / 2.0) * (boot.len() - 1) as f64).ceil() as usize];
        (value.abs_diff(lo).max(value.abs_diff(hi)) as f64).max(1.0)
    };
    Ok(MixingEstimate {
        value,
        method: MixingMethod::McDiagonal,
        errbar: Some(errbar),
        worst_cell: Some(chain.cell(worst_vertex)),
        lambda2: None,
    })
}

// ---------------------------------------------------------------------------
// Local confinement diagnostics

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum MassMethod {
    Exact,
    MonteCarlo { trajectories: u64, seed: RngSeed },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassEstimate {
    pub value: f64,
    pub std_err: f64,
    pub steps: u64,
}

fn check_radius(chain: &LazyChain, radius: u64) -> Result<()> {
    let g = chain.geometry();
    if g.is_periodic() && radius > (g.side() / 2) as u64 {
        return Err(Error::Precondition(format!("radius {radius} exceeds the torus half-width {}", g.side() / 2)));
    }
    Ok(())
}

/// `sum_{y in B(x, n)} p_m(x, y)` with `m = floor(eps n^2)`.
pub fn local_escape_mass(
    chain: &LazyChain,
    x: usize,
    radius: u64,
    eps: f64,
    method: MassMethod,
) -> Result<MassEstimate> {
    if x >= chain.len() {
        return Err(Error::IndexOutOfRange { index: x, cells: chain.len() });
    }
    check_radius(chain, radius)?;
    let steps = (eps * (radius * radius) as f64).floor();
    if !(steps >= 1.0) {
        return Err(Error::Precondition(format!("floor(eps n^2) = {steps} must be at least 1")));
    }
    let steps = steps as u64;
    let inside: Vec<bool> = {
        let mut m = vec![false; chain.len()];
        for y in chain.ball(x, radius) {
            m[y] = true;
        }
        m
    };
    match method {
        MassMethod::Exact => {
            let mut mu = vec![0.0; chain.len()];
            mu[x] = 1.0;
            let mut tmp = vec![0.0; chain.len()];
            for _ in 0..steps {
                chain.step_distribution(&mu, &mut tmp);
                std::mem::swap(&mut mu, &mut tmp);
            }
            let value = mu.iter().zip(&inside).filter(|(_, &i)| i).map(|(p, _)| p).sum();
            Ok(MassEstimate { value, std_err: 0.0, steps })
        }
        MassMethod::MonteCarlo { trajectories, seed } => {
            if trajectories == 0 {
                return Err(Error::InvalidConfig("need at least one trajectory".into()));
            }
            let batch = 1024u64;
            let batches = trajectories.div_ceil(batch);
            let hits: u64 = (0..batches)
                .into_par_iter()
                .map(|b| {
                    let mut rng = seed.substream(b);
                    let n = batch.min(trajectories - b * batch);
                    (0..n)
                        .filter(|_| {
                            let mut pos = x;
                            for _ in 0..steps {
                                pos = lazy_step(chain, pos, &mut rng);
                            }
                            inside[pos]
                        })
                        .count() as u64
                })
                .collect::<Vec<_>>()
                .into_iter()
                .sum();
            let f = hits as f64 / trajectories as f64;
            Ok(MassEstimate { value: f, std_err: (f * (1.0 - f) / trajectories as f64).sqrt(), steps })
        }
    }
}

/// `sum_{y in B(x, n)} pi(y)`.
pub fn stationary_ball_mass(chain: &LazyChain, pi: &StationaryDist, x: usize, radius: u64) -> Result<f64> {
    if x >= chain.len() {
        return Err(Error::IndexOutOfRange { index: x, cells: chain.len() });
    }
    Ok(chain.ball(x, radius).into_iter().map(|y| pi.pi[y]).sum())
}
