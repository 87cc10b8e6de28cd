//! Simple random walk on the torus and its range; the lattice Green
//! function at the origin.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{OccupancyGrid, TorusConfig};
use crate::rng::RngSeed;

/// One step: `axis * 2 + (0 for +1, 1 for -1)`.
pub type StepCode = u8;

/// The walk `X_0, ..., X_T` with `T = floor(u N^d)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkTrace {
    pub start: usize,
    pub length: u64,
    pub steps: Option<Vec<StepCode>>,
}

impl WalkTrace {
    /// Replays the stored steps; `None` if the steps were not kept.
    pub fn positions(&self, cfg: &TorusConfig) -> Option<Vec<usize>> {
        let steps = self.steps.as_ref()?;
        let geom = cfg.geometry();
        let mut pos = self.start;
        let mut out = Vec::with_capacity(steps.len() + 1);
        out.push(pos);
        for &code in steps {
            pos = geom.step(pos, (code >> 1) as usize, code & 1 == 0).expect("torus step");
            out.push(pos);
        }
        Some(out)
    }
}

/// Range of a simple (non-lazy) walk of `floor(u N^d)` steps started from a
/// uniform cell.
pub fn sample_range(cfg: &TorusConfig, seed: RngSeed, keep_trace: bool) -> Result<(OccupancyGrid, Option<WalkTrace>)> {
    cfg.validate()?;
    let steps = cfg.walk_steps()?;
    let mut grids = sample_range_prefixes(cfg, seed, &[steps], keep_trace)?;
    let (grid, trace) = grids.pop().expect("one prefix");
    Ok((grid, trace))
}

/// Ranges of the first `lengths[k]` steps of a single walk (lengths must be
/// non-decreasing); successive grids are nested.
pub fn sample_range_prefixes(
    cfg: &TorusConfig,
    seed: RngSeed,
    lengths: &[u64],
    keep_trace: bool,
) -> Result<Vec<(OccupancyGrid, Option<WalkTrace>)>> {
    if lengths.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Precondition("walk lengths must be non-decreasing".into()));
    }
    let geom = cfg.geometry();
    let dirs = 2 * cfg.d as u32;
    let mut rng = seed.rng();
    let start = rng.random_range(0..geom.cells());
    let mut grid = OccupancyGrid::empty(geom.clone());
    grid.insert(start);
    let mut codes: Vec<StepCode> = Vec::new();
    let mut pos = start;
    let mut done: u64 = 0;
    let mut out = Vec::with_capacity(lengths.len());
    for &len in lengths {
        if keep_trace {
            codes.reserve((len - done).min(1 << 32) as usize);
        }
        while done < len {
            let code = rng.random_range(0..dirs) as StepCode;
            pos = geom.step(pos, (code >> 1) as usize, code & 1 == 0).expect("torus step");
            grid.insert(pos);
            if keep_trace {
                codes.push(code);
            }
            done += 1;
        }
        let trace = keep_trace.then(|| WalkTrace { start, length: len, steps: Some(codes.clone()) });
        out.push((grid.clone(), trace));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Green function at the origin

/// Asymptotic constant of the Green function, `g(x) ~ a_d |x|^{2-d}`:
/// `a_d = (d/2) Gamma(d/2 - 1) pi^{-d/2}`.
pub fn green_asymptotic_constant(d: usize) -> f64 {
    let half = d as f64 / 2.0;
    half * gamma_half_integer(d as i64 - 2) / std::f64::consts::PI.powf(half)
}

/// `Gamma(k / 2)` for a positive integer `k`.
fn gamma_half_integer(k: i64) -> f64 {
    assert!(k > 0, "Gamma(k/2) needs k > 0");
    let mut x = if k % 2 == 0 { 1.0 } else { std::f64::consts::PI.sqrt() };
    let mut z = if k % 2 == 0 { 1.0 } else { 0.5 };
    while z + 1e-9 < k as f64 / 2.0 {
        x *= z;
        z += 1.0;
    }
    x
}

/// `a_d |x|^{2-d}`, the far-field Green function.
pub fn green_far_field(d: usize, dist: f64) -> f64 {
    green_asymptotic_constant(d) * dist.powf(2.0 - d as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreenComponent {
    pub value: f64,
    pub std_err: f64,
    pub walks: u64,
}

/// Estimate of `g(0,0)` from two independent estimators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreenEstimate {
    pub d: usize,
    /// Inverse-variance weighted mean of the two estimators.
    pub value: f64,
    pub std_err: f64,
    /// Mean number of visits to the origin over a fixed horizon, plus the
    /// local-limit tail beyond it.
    pub visit_count: GreenComponent,
    /// `1/P[escape to radius R before return]` plus the far-field visits
    /// after the exit.
    pub escape: GreenComponent,
    /// Whether the two estimators agree within three combined standard errors.
    pub agree: bool,
}

impl GreenEstimate {
    /// `cap({0}) = 1 / g(0,0)`.
    pub fn point_capacity(&self) -> f64 {
        1.0 / self.value
    }

    /// Interlacement density `1 - exp(-u / g(0,0))`.
    pub fn density(&self, u: f64) -> f64 {
        1.0 - (-u / self.value).exp()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GreenBudget {
    /// Maximum number of walks per estimator.
    pub max_walks: u64,
    pub batch: u64,
    /// Time horizon for visit counting.
    pub horizon: u64,
    /// Euclidean exit radius for the escape estimator.
    pub radius: f64,
    pub seed: RngSeed,
}

impl Default for GreenBudget {
    fn default() -> Self {
        GreenBudget {
            max_walks: 4_000_000,
            batch: 2048,
            horizon: 4096,
            radius: 32.0,
            seed: RngSeed::new(0x6772_6565_6e00, 0),
        }
    }
}

#[derive(Default, Clone, Copy)]
struct Moments {
    n: u64,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }
    fn merge(mut self, o: Moments) -> Moments {
        self.n += o.n;
        self.sum += o.sum;
        self.sum_sq += o.sum_sq;
        self
    }
    fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }
    fn var(&self) -> f64 {
        let m = self.mean();
        (self.sum_sq / self.n as f64 - m * m).max(0.0) * self.n as f64 / (self.n as f64 - 1.0).max(1.0)
    }
}

#[inline]
fn zd_step<R: Rng>(rng: &mut R, x: &mut [i64], dirs: u32) {
    let k = rng.random_range(0..dirs);
    let axis = (k >> 1) as usize;
    x[axis] += if k & 1 == 0 { 1 } else { -1 };
}

/// Runs batches in parallel until `done(moments)` or the walk budget runs
/// out. Batch `b` always uses sub-stream `b`, so results do not depend on
/// the thread count.
fn run_batches<F>(
    budget: &GreenBudget,
    stream: u64,
    precision: f64,
    per_batch: F,
    se: impl Fn(&[Moments]) -> f64,
) -> Result<Vec<Moments>>
where
    F: Fn(&mut rand_chacha::ChaCha8Rng, u64) -> Vec<Moments> + Sync,
{
    let seed = RngSeed::new(budget.seed.root, budget.seed.stream ^ stream);
    let threads = rayon::current_num_threads().max(1) as u64;
    let mut acc: Option<Vec<Moments>> = None;
    let mut next_batch = 0u64;
    let mut walks = 0u64;
    loop {
        let round = (4 * threads).max(8);
        let results: Vec<Vec<Moments>> = (next_batch..next_batch + round)
            .into_par_iter()
            .map(|b| per_batch(&mut seed.substream(b), budget.batch))
            .collect();
        next_batch += round;
        walks += round * budget.batch;
        for r in results {
            acc = Some(match acc {
                None => r,
                Some(a) => a.into_iter().zip(r).map(|(x, y)| x.merge(y)).collect(),
            });
        }
        let a = acc.as_ref().unwrap();
        if se(a) <= precision {
            return Ok(acc.unwrap());
        }
        if walks >= budget.max_walks {
            return Err(Error::BudgetExhausted(format!(
                "standard error {:.3e} above target {precision:.3e} after {walks} walks",
                se(a)
            )));
        }
    }
}

/// Visit counting: mean visits to `0` at times `0..=T`, plus
/// `sum_{t > T} p_t(0,0) ~ (d / 2 pi)^{d/2} T^{1 - d/2} / (d/2 - 1)`.
pub fn green_visit_counting(d: usize, precision: f64, budget: &GreenBudget) -> Result<GreenComponent> {
    if d < 3 {
        return Err(Error::InvalidConfig("the Green function is finite only for d >= 3".into()));
    }
    let horizon = budget.horizon;
    let dirs = 2 * d as u32;
    let per_batch = |rng: &mut rand_chacha::ChaCha8Rng, walks: u64| {
        let mut m = Moments::default();
        let mut x = vec![0i64; d];
        for _ in 0..walks {
            x.iter_mut().for_each(|c| *c = 0);
            let mut visits = 1u32;
            for _ in 0..horizon {
                zd_step(rng, &mut x, dirs);
                if x.iter().all(|&c| c == 0) {
                    visits += 1;
                }
            }
            m.push(visits as f64);
        }
        vec![m]
    };
    let se = |m: &[Moments]| (m[0].var() / m[0].n as f64).sqrt();
    let m = run_batches(budget, 0x76_6973_6974, precision, per_batch, se)?;
    let half = d as f64 / 2.0;
    let tail = (half / std::f64::consts::PI).powf(half) * (horizon as f64).powf(1.0 - half) / (half - 1.0);
    Ok(GreenComponent { value: m[0].mean() + tail, std_err: se(&m), walks: m[0].n })
}

/// Escape estimator: each excursion from `0` either returns or reaches
/// Euclidean radius `R` at some `Z`; `g = 1 / P[reach R first] + E[g(Z)]`
/// with `g(Z)` from the far-field asymptotics.
pub fn green_escape(d: usize, precision: f64, budget: &GreenBudget) -> Result<GreenComponent> {
    if d < 3 {
        return Err(Error::InvalidConfig("the Green function is finite only for d >= 3".into()));
    }
    let r2 = budget.radius * budget.radius;
    let dirs = 2 * d as u32;
    let per_batch = |rng: &mut rand_chacha::ChaCha8Rng, walks: u64| {
        // [escape indicator, far-field term on escape]
        let mut esc = Moments::default();
        let mut far = Moments::default();
        let mut x = vec![0i64; d];
        for _ in 0..walks {
            x.iter_mut().for_each(|c| *c = 0);
            loop {
                zd_step(rng, &mut x, dirs);
                if x.iter().all(|&c| c == 0) {
                    esc.push(0.0);
                    break;
                }
                let norm2: i64 = x.iter().map(|c| c * c).sum();
                if norm2 as f64 >= r2 {
                    esc.push(1.0);
                    far.push(green_far_field(d, (norm2 as f64).sqrt()));
                    break;
                }
            }
        }
        vec![esc, far]
    };
    let se = |m: &[Moments]| {
        let p = m[0].mean();
        if p <= 0.0 {
            return f64::INFINITY;
        }
        let se_p = (m[0].var() / m[0].n as f64).sqrt();
        let se_far = if m[1].n > 1 { (m[1].var() / m[1].n as f64).sqrt() } else { 0.0 };
        ((se_p / (p * p)).powi(2) + se_far.powi(2)).sqrt()
    };
    let m = run_batches(budget, 0x6573_6361_7065, precision, per_batch, se)?;
    let p = m[0].mean();
    Ok(GreenComponent { value: 1.0 / p + m[1].mean(), std_err: se(&m), walks: m[0].n })
}

/// `g(0,0)` for simple random walk on `Z^d`, estimated twice and combined.
pub fn green_at_origin(d: usize, precision: f64) -> Result<GreenEstimate> {
    green_at_origin_with(d, precision, &GreenBudget::default())
}

pub fn green_at_origin_with(d: usize, precision: f64, budget: &GreenBudget) -> Result<GreenEstimate> {
    if !(precision.is_finite() && precision > 0.0) {
        return Err(Error::InvalidConfig(format!("precision {precision} must be positive")));
    }
    let visit = green_visit_counting(d, precision, budget)?;
    let escape = green_escape(d, precision, budget)?;
    let wv = 1.0 / visit.std_err.powi(2).max(1e-300);
    let we = 1.0 / escape.std_err.powi(2).max(1e-300);
    let value = (wv * visit.value + we * escape.value) / (wv + we);
    let std_err = (1.0 / (wv + we)).sqrt();
    let diff = (visit.value - escape.value).abs();
    let agree = diff <= 3.0 * (visit.std_err.powi(2) + escape.std_err.powi(2)).sqrt();
    Ok(GreenEstimate { d, value, std_err, visit_count: visit, escape, agree })
}
