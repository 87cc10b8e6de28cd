//! Experiment orchestration: configuration, per-trial seeding, parallel
//! execution, the scaling and isoperimetry studies, and report files.
//!
//! Every trial is a pure function of `(kind, TorusConfig, seed)`, so the
//! worker count never changes a result. Records come back in task order.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{
    build_chain, uniform_mixing_time_exact, uniform_mixing_time_mc, LazyChain, McParams, MixingEstimate, EXACT_CAP,
};
use crate::error::{Error, Result};
use crate::isoperimetry::{
    check_iso_inequality, morris_peres_bound, profile_balls, profile_exhaustive, profile_sweep, ConductanceProfile,
    ENUMERATION_CAP,
};
use crate::lattice::{OccupancyGrid, TorusConfig};
use crate::rng::RngSeed;
use crate::stats::{bootstrap_groups, log_log_slope, median, quantile};
use crate::walk::sample_range;

pub const CODE_VERSION: &str = concat!("rangemix-core ", env!("CARGO_PKG_VERSION"));

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "RANGEMIX_THREADS";

pub const CSV_COLUMNS: [&str; 13] =
    ["kind", "d", "N", "u", "seed", "V", "E", "t_mix", "method", "errbar", "gamma_hat", "mp_bound", "wall_ms"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Mixing time of sampled ranges.
    Scaling,
    /// Mixing time of the full torus (no range sampling).
    TorusControl,
    /// Candidate conductance profiles and the isoperimetric ratio.
    Iso,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Scaling => "scaling",
            ExperimentKind::TorusControl => "torus-control",
            ExperimentKind::Iso => "iso",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSettings {
    pub walkers: usize,
    pub vertices: usize,
    pub bootstrap: usize,
}

impl Default for McSettings {
    fn default() -> Self {
        let p = McParams::default();
        McSettings { walkers: p.walkers, vertices: p.vertices, bootstrap: p.bootstrap }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsoSettings {
    /// Largest exhaustively enumerated set size (0 disables the family).
    pub rmax: usize,
    /// Eigenvectors used for sweep cuts (0 disables the family).
    pub sweep_modes: usize,
    pub balls: bool,
    /// Size limit `|A| <= mu |R|` of the ratio check; `None` means `1 - 1/(4d)`.
    pub mu: Option<f64>,
    /// Also measure `t_mix` on every instance.
    pub measure_mixing: bool,
}

impl Default for IsoSettings {
    fn default() -> Self {
        IsoSettings { rmax: ENUMERATION_CAP, sweep_modes: 4, balls: true, mu: None, measure_mixing: false }
    }
}

fn default_exact_cap() -> usize {
    EXACT_CAP
}

fn default_bootstrap() -> usize {
    1000
}

fn default_mp_constant() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub grids: Vec<TorusConfig>,
    /// Trials per grid (ignored by the torus control, which is deterministic).
    pub trials: usize,
    /// Trial `k` uses seed `seed + k` unless `seeds` is given.
    pub seed: u64,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    /// Largest `|R|` handled by the exact spectral method; Monte Carlo above.
    #[serde(default = "default_exact_cap")]
    pub exact_cap: usize,
    #[serde(default)]
    pub mc: McSettings,
    #[serde(default)]
    pub iso: IsoSettings,
    /// Morris-Peres constant `C` multiplying the profile integral.
    #[serde(default = "default_mp_constant")]
    pub mp_constant: f64,
    /// Bootstrap replicates for confidence intervals.
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind, grids: Vec<TorusConfig>, trials: usize, seed: u64) -> Self {
        ExperimentConfig {
            kind,
            grids,
            trials,
            seed,
            seeds: None,
            exact_cap: EXACT_CAP,
            mc: McSettings::default(),
            iso: IsoSettings::default(),
            mp_constant: 1.0,
            bootstrap: default_bootstrap(),
            output: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn trial_seeds(&self) -> Vec<u64> {
        match (&self.seeds, self.kind) {
            (_, ExperimentKind::TorusControl) => vec![self.seed],
            (Some(s), _) => s.clone(),
            (None, _) => (0..self.trials as u64).map(|k| self.seed.wrapping_add(k)).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.grids.is_empty() {
            return bad("no grids".into());
        }
        for g in &self.grids {
            g.validate()?;
        }
        if let Some(s) = &self.seeds {
            if s.len() != self.trials {
                return bad(format!("{} seeds listed for {} trials", s.len(), self.trials));
            }
        }
        if self.exact_cap == 0 {
            return bad("exact_cap must be positive".into());
        }
        if self.mc.walkers < 2 || self.mc.vertices == 0 || self.mc.bootstrap == 0 {
            return bad("mc settings need walkers >= 2, vertices >= 1, bootstrap >= 1".into());
        }
        if !(self.mp_constant.is_finite() && self.mp_constant > 0.0) {
            return bad(format!("mp_constant = {} must be positive", self.mp_constant));
        }
        if self.bootstrap == 0 {
            return bad("bootstrap must be positive".into());
        }
        if let Some(mu) = self.iso.mu {
            if !(mu > 0.0 && mu < 1.0) {
                return bad(format!("mu = {mu} must lie in (0, 1)"));
            }
        }
        if self.kind == ExperimentKind::Iso && self.iso.rmax == 0 && self.iso.sweep_modes == 0 && !self.iso.balls {
            return bad("all candidate families disabled".into());
        }
        if self.kind == ExperimentKind::Iso && self.iso.rmax > ENUMERATION_CAP {
            return bad(format!("rmax = {} exceeds the enumeration cap {ENUMERATION_CAP}", self.iso.rmax));
        }
        Ok(())
    }

    fn check_scaling_grids(&self) -> Result<()> {
        let first = self.grids[0];
        for w in self.grids.windows(2) {
            if w[1].n <= w[0].n {
                return Err(Error::InvalidConfig("grid sides must be strictly increasing".into()));
            }
        }
        if self.grids.iter().any(|g| g.d != first.d || g.u != first.u) {
            return Err(Error::InvalidConfig("a scaling study varies N only".into()));
        }
        if self.kind == ExperimentKind::Scaling && self.trials < 10 {
            return Err(Error::InvalidConfig(format!("scaling needs at least 10 trials per N, got {}", self.trials)));
        }
        Ok(())
    }
}

/// One row of output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub kind: ExperimentKind,
    pub cfg: TorusConfig,
    pub seed: u64,
    pub vertices: usize,
    pub edges: usize,
    /// `|R| / N^d`.
    pub density: f64,
    pub t_mix: Option<u64>,
    pub method: Option<String>,
    pub errbar: Option<f64>,
    pub gamma_hat: Option<f64>,
    pub mp_integral: Option<f64>,
    pub mp_bound: Option<u64>,
    /// Breakpoints `(r, phi(r))` of the merged candidate profile.
    pub profile: Option<Vec<(usize, f64)>>,
    pub wall_ms: u64,
    pub version: String,
}

/// Exact spectral mixing time when `|R| <= cap`, Monte Carlo otherwise.
pub fn measure_mixing(chain: &LazyChain, exact_cap: usize, mc: &McSettings, seed: RngSeed) -> Result<MixingEstimate> {
    if chain.len() <= exact_cap {
        uniform_mixing_time_exact(chain, exact_cap)
    } else {
        let params = McParams {
            walkers: mc.walkers,
            vertices: mc.vertices,
            bootstrap: mc.bootstrap,
            seed,
            ..McParams::default()
        };
        uniform_mixing_time_mc(chain, &params)
    }
}

fn instance(kind: ExperimentKind, cfg: &TorusConfig, seed: u64) -> Result<OccupancyGrid> {
    match kind {
        ExperimentKind::TorusControl => Ok(OccupancyGrid::full(cfg.geometry())),
        _ => Ok(sample_range(cfg, RngSeed::new(seed, 0), false)?.0),
    }
}

/// Runs a single trial. Seeds: stream 0 samples the range, stream 1 drives
/// the Monte Carlo mixing estimate, stream 2 the sweep start vectors.
pub fn run_trial(exp: &ExperimentConfig, cfg: &TorusConfig, seed: u64) -> Result<ExperimentRecord> {
    let start = Instant::now();
    let grid = instance(exp.kind, cfg, seed)?;
    let (chain, _) = build_chain(&grid)?;
    let mut rec = ExperimentRecord {
        kind: exp.kind,
        cfg: *cfg,
        seed,
        vertices: chain.len(),
        edges: chain.edge_count(),
        density: chain.len() as f64 / cfg.cells() as f64,
        t_mix: None,
        method: None,
        errbar: None,
        gamma_hat: None,
        mp_integral: None,
        mp_bound: None,
        profile: None,
        wall_ms: 0,
        version: CODE_VERSION.to_string(),
    };
    let mix = exp.kind != ExperimentKind::Iso || exp.iso.measure_mixing;
    if mix {
        let m = measure_mixing(&chain, exp.exact_cap, &exp.mc, RngSeed::new(seed, 1))?;
        rec.t_mix = Some(m.value);
        rec.method = Some(m.method.as_str().to_string());
        rec.errbar = m.errbar;
    }
    if exp.kind == ExperimentKind::Iso {
        let iso = &exp.iso;
        let mut profiles: Vec<ConductanceProfile> = Vec::new();
        if iso.rmax > 0 {
            profiles.push(profile_exhaustive(&grid, iso.rmax)?);
        }
        if iso.sweep_modes > 0 {
            profiles.push(profile_sweep(&grid, iso.sweep_modes, RngSeed::new(seed, 2))?);
        }
        if iso.balls {
            profiles.push(profile_balls(&grid)?);
        }
        let mu = iso.mu.unwrap_or(1.0 - 1.0 / (4.0 * cfg.d as f64));
        rec.gamma_hat = Some(check_iso_inequality(&grid, &profiles, mu)?.gamma_hat);
        // lower envelope of every candidate family
        let merged = ConductanceProfile::merge(profiles)?;
        let mp = morris_peres_bound(&merged, cfg, exp.mp_constant)?;
        rec.mp_integral = Some(mp.integral);
        rec.mp_bound = Some(mp.bound);
        rec.profile = Some(merged.breakpoints().iter().map(|b| (b.r, b.phi)).collect());
    }
    rec.wall_ms = start.elapsed().as_millis() as u64;
    Ok(rec)
}

/// Runs every `(grid, seed)` task on the current rayon pool. On failure the
/// completed records are written to the configured output directory before
/// the first error (in task order) is returned.
pub fn run_experiment(exp: &ExperimentConfig) -> Result<Vec<ExperimentRecord>> {
    exp.validate()?;
    let seeds = exp.trial_seeds();
    let tasks: Vec<(TorusConfig, u64)> = exp.grids.iter().flat_map(|g| seeds.iter().map(move |&s| (*g, s))).collect();
    let results: Vec<Result<ExperimentRecord>> = tasks.par_iter().map(|(g, s)| run_trial(exp, g, *s)).collect();
    let mut records = Vec::with_capacity(results.len());
    let mut first_err = None;
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_err {
        if let Some(dir) = &exp.output {
            report(&records, dir)?;
        }
        return Err(e);
    }
    Ok(records)
}

// ---------------------------------------------------------------------------
// Scaling study

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub n: usize,
    pub trials: usize,
    pub median: f64,
    /// Bootstrap interval of the median.
    pub ci: (f64, f64),
    /// Largest Monte Carlo error bar among the trials (0 when all exact).
    pub max_errbar: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub points: Vec<ScalingPoint>,
    pub slope: f64,
    pub intercept: f64,
    pub ci: (f64, f64),
    pub level: f64,
}

const CI_LEVEL: f64 = 0.95;

/// Least-squares slope of `ln median t_mix` against `ln N`, with a bootstrap
/// interval from resampling the trials at every `N`.
pub fn fit_scaling(records: &[ExperimentRecord], replicates: usize, seed: RngSeed) -> Result<ScalingFit> {
    let mut by_n: BTreeMap<usize, (Vec<f64>, f64)> = BTreeMap::new();
    for r in records {
        let t = r.t_mix.ok_or_else(|| Error::Precondition("record without t_mix".into()))?;
        let e = by_n.entry(r.cfg.n).or_default();
        e.0.push(t as f64);
        e.1 = e.1.max(r.errbar.unwrap_or(0.0));
    }
    if by_n.len() < 2 {
        return Err(Error::Precondition(format!("a scaling fit needs at least 2 values of N, got {}", by_n.len())));
    }
    let ns: Vec<f64> = by_n.keys().map(|&n| n as f64).collect();
    let groups: Vec<Vec<f64>> = by_n.values().map(|v| v.0.clone()).collect();
    let medians: Vec<f64> = groups.iter().map(|g| median(g).expect("nonempty")).collect();
    let fit = log_log_slope(&ns, &medians)?;
    let slope_of = |gs: &[Vec<f64>]| {
        let m: Vec<f64> = gs.iter().map(|g| median(g).expect("nonempty")).collect();
        log_log_slope(&ns, &m).ok().map(|f| f.slope)
    };
    let ci = bootstrap_groups(&groups, replicates, CI_LEVEL, seed, slope_of).unwrap_or((fit.slope, fit.slope));
    let points = by_n
        .iter()
        .zip(&medians)
        .enumerate()
        .map(|(i, ((&n, (v, err)), &m))| {
            let ci = bootstrap_groups(&groups[i..=i], replicates, CI_LEVEL, seed.trial(n as u64), |g| median(&g[0]))
                .unwrap_or((m, m));
            ScalingPoint { n, trials: v.len(), median: m, ci, max_errbar: *err }
        })
        .collect();
    Ok(ScalingFit { points, slope: fit.slope, intercept: fit.intercept, ci, level: CI_LEVEL })
}

/// The mixing-time scaling study over the configured `N` values.
pub fn run_scaling(exp: &ExperimentConfig) -> Result<(ScalingFit, Vec<ExperimentRecord>)> {
    if !matches!(exp.kind, ExperimentKind::Scaling | ExperimentKind::TorusControl) {
        return Err(Error::InvalidConfig(format!("run_scaling given a {} config", exp.kind.as_str())));
    }
    exp.validate()?;
    exp.check_scaling_grids()?;
    if exp.grids.len() < 2 {
        return Err(Error::Precondition("a scaling fit needs at least 2 values of N".into()));
    }
    let records = run_experiment(exp)?;
    let fit = fit_scaling(&records, exp.bootstrap, RngSeed::new(exp.seed, 0x5ca1))?;
    Ok((fit, records))
}

// ---------------------------------------------------------------------------
// Isoperimetry study

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsoPoint {
    pub n: usize,
    pub instances: usize,
    pub min_gamma: f64,
    pub median_gamma: f64,
    /// Bootstrap interval of the minimum over instances.
    pub min_ci: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsoTrend {
    /// `min gamma_hat` at the largest `N` over that at the smallest.
    pub ratio: f64,
    /// Log-log slope of the per-`N` minimum against `N`.
    pub slope: f64,
    pub slope_ci: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsoStudy {
    pub records: Vec<ExperimentRecord>,
    pub points: Vec<IsoPoint>,
    pub trend: Option<IsoTrend>,
}

fn min_of(xs: &[f64]) -> Option<f64> {
    xs.iter().copied().min_by(f64::total_cmp)
}

pub fn summarize_iso(records: Vec<ExperimentRecord>, replicates: usize, seed: RngSeed) -> Result<IsoStudy> {
    let mut by_n: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in &records {
        let g = r.gamma_hat.ok_or_else(|| Error::Precondition("record without gamma_hat".into()))?;
        by_n.entry(r.cfg.n).or_default().push(g);
    }
    let groups: Vec<Vec<f64>> = by_n.values().cloned().collect();
    let points: Vec<IsoPoint> = by_n
        .iter()
        .map(|(&n, g)| {
            let m = min_of(g).expect("nonempty");
            let ci = bootstrap_groups(std::slice::from_ref(g), replicates, CI_LEVEL, seed.trial(n as u64), |b| {
                min_of(&b[0])
            })
            .unwrap_or((m, m));
            IsoPoint { n, instances: g.len(), min_gamma: m, median_gamma: median(g).expect("nonempty"), min_ci: ci }
        })
        .collect();
    let trend = if points.len() >= 2 {
        let ns: Vec<f64> = points.iter().map(|p| p.n as f64).collect();
        let mins: Vec<f64> = points.iter().map(|p| p.min_gamma).collect();
        let slope = log_log_slope(&ns, &mins)?.slope;
        let slope_ci = bootstrap_groups(&groups, replicates, CI_LEVEL, seed, |gs| {
            let m: Vec<f64> = gs.iter().map(|g| min_of(g).expect("nonempty")).collect();
            log_log_slope(&ns, &m).ok().map(|f| f.slope)
        })
        .unwrap_or((slope, slope));
        Some(IsoTrend { ratio: mins[mins.len() - 1] / mins[0], slope, slope_ci })
    } else {
        None
    };
    Ok(IsoStudy { records, points, trend })
}

pub fn run_iso_study(exp: &ExperimentConfig) -> Result<IsoStudy> {
    if exp.kind != ExperimentKind::Iso {
        return Err(Error::InvalidConfig(format!("run_iso_study given a {} config", exp.kind.as_str())));
    }
    let records = run_experiment(exp)?;
    summarize_iso(records, exp.bootstrap, RngSeed::new(exp.seed, 0x150))
}

// ---------------------------------------------------------------------------
// Reports

fn fmt_opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_default()
}

fn csv_row(r: &ExperimentRecord) -> [String; 13] {
    [
        r.kind.as_str().to_string(),
        r.cfg.d.to_string(),
        r.cfg.n.to_string(),
        r.cfg.u.to_string(),
        r.seed.to_string(),
        r.vertices.to_string(),
        r.edges.to_string(),
        fmt_opt(&r.t_mix),
        fmt_opt(&r.method),
        fmt_opt(&r.errbar),
        fmt_opt(&r.gamma_hat),
        fmt_opt(&r.mp_bound),
        r.wall_ms.to_string(),
    ]
}

/// Writes records as RFC 4180 CSV with the [`CSV_COLUMNS`] header.
pub fn write_csv<W: Write>(records: &[ExperimentRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in records {
        w.write_record(csv_row(r))?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Canonical record order: kind, d, u, N, seed.
pub fn sort_records(records: &mut [ExperimentRecord]) {
    records.sort_by(|a, b| {
        (a.kind, a.cfg.d)
            .cmp(&(b.kind, b.cfg.d))
            .then(a.cfg.u.total_cmp(&b.cfg.u))
            .then((a.cfg.n, a.seed).cmp(&(b.cfg.n, b.seed)))
    });
}

/// Concatenates record sets, refusing mixed code versions unless allowed.
pub fn merge_records(sets: Vec<Vec<ExperimentRecord>>, allow_mixed_versions: bool) -> Result<Vec<ExperimentRecord>> {
    let all: Vec<ExperimentRecord> = sets.into_iter().flatten().collect();
    if !allow_mixed_versions {
        if let Some(first) = all.first() {
            if let Some(other) = all.iter().find(|r| r.version != first.version) {
                return Err(Error::Precondition(format!(
                    "records from different code versions ({} and {})",
                    first.version, other.version
                )));
            }
        }
    }
    Ok(all)
}

pub fn read_records(path: &Path) -> Result<Vec<ExperimentRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReportFiles {
    pub csv: PathBuf,
    pub json: PathBuf,
    pub per_kind: Vec<PathBuf>,
    pub plot_data: Vec<PathBuf>,
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

fn write_csv_file(records: &[ExperimentRecord], path: &Path) -> Result<()> {
    write_csv(records, create(path)?).map_err(|e| match e {
        Error::Csv(c) if c.is_io_error() => Error::io(path, std::io::Error::other(c.to_string())),
        e => e,
    })
}

fn fmt_dat(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| x.to_string())
}

/// Whitespace table per `(d, u, N)`: trials, median t_mix, min gamma_hat,
/// median Morris-Peres bound.
type PlotKey = (usize, f64, usize);

fn write_plot_data(records: &[ExperimentRecord], path: &Path) -> Result<()> {
    let mut groups: Vec<(PlotKey, Vec<&ExperimentRecord>)> = Vec::new();
    for r in records {
        let key = (r.cfg.d, r.cfg.u, r.cfg.n);
        match groups.last_mut() {
            Some((k, v)) if *k == key => v.push(r),
            _ => groups.push((key, vec![r])),
        }
    }
    let mut text = String::from("# d u N trials median_t_mix min_gamma_hat median_mp_bound\n");
    for ((d, u, n), rs) in groups {
        let t: Vec<f64> = rs.iter().filter_map(|r| r.t_mix.map(|x| x as f64)).collect();
        let g: Vec<f64> = rs.iter().filter_map(|r| r.gamma_hat).collect();
        let b: Vec<f64> = rs.iter().filter_map(|r| r.mp_bound.map(|x| x as f64)).collect();
        text += &format!(
            "{d} {u} {n} {} {} {} {}\n",
            rs.len(),
            fmt_dat(median(&t)),
            fmt_dat(min_of(&g)),
            fmt_dat(quantile(&b, 0.5))
        );
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `records.csv`, `records.json`, and per kind `records-<kind>.csv`
/// and `<kind>.dat` into `dir`, in canonical record order.
pub fn report(records: &[ExperimentRecord], dir: &Path) -> Result<ReportFiles> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut sorted = records.to_vec();
    sort_records(&mut sorted);
    let mut files = ReportFiles { csv: dir.join("records.csv"), json: dir.join("records.json"), ..Default::default() };
    write_csv_file(&sorted, &files.csv)?;
    let json = serde_json::to_string_pretty(&sorted)?;
    fs::write(&files.json, json + "\n").map_err(|e| Error::io(&files.json, e))?;
    for chunk in sorted.chunk_by(|a, b| a.kind == b.kind) {
        let kind = chunk[0].kind.as_str();
        let csv = dir.join(format!("records-{kind}.csv"));
        write_csv_file(chunk, &csv)?;
        let dat = dir.join(format!("{kind}.dat"));
        write_plot_data(chunk, &dat)?;
        files.per_kind.push(csv);
        files.plot_data.push(dat);
    }
    Ok(files)
}

/// Worker count requested through [`THREADS_ENV`], if any.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::InvalidConfig(format!("{THREADS_ENV}={v} is not a positive integer"))),
        },
        Err(_) => Ok(None),
    }
}

/// Runs `f` on a dedicated pool of `threads` workers (rayon's default when `None`).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n);
    }
    let pool = b.build().map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}
