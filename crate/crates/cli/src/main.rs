use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use rangemix_core::chain::{
    build_chain, uniform_mixing_time_exact, uniform_mixing_time_matrix_power, MixingEstimate, EXACT_CAP,
};
use rangemix_core::harness::{
    self, measure_mixing, merge_records, read_records, run_iso_study, run_scaling, with_threads, ExperimentConfig,
    ExperimentKind, McSettings,
};
use rangemix_core::interlacements::{cube, sandwich_diagnostic, CapacityBudget, InterlacementSampler, SamplerParams};
use rangemix_core::isoperimetry::{
    check_iso_inequality, morris_peres_bound, profile_balls, profile_exhaustive, profile_sweep, ConductanceProfile,
};
use rangemix_core::lattice::io::{read_grid, write_grid};
use rangemix_core::lattice::{periodic_window_of, Geometry};
use rangemix_core::renorm::{
    build_ladder, check_assumptions, classify, enlarged_cluster, select_window, small_set_check, BadKind,
    DensityParams, RenormWindow, Status, EPSILON_LADDER,
};
use rangemix_core::walk::{green_at_origin, sample_range};
use rangemix_core::{OccupancyGrid, RngSeed, TorusConfig};

#[derive(Parser)]
#[command(name = "rangemix", version, about = "Random walk ranges on the discrete torus")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "RANGEMIX_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample ranges and write them as grid files.
    Sample(SampleArgs),
    /// Uniform mixing time of the lazy walk on a grid.
    Mix(MixArgs),
    /// Conductance profile, isoperimetric ratio and Morris-Peres bound.
    Isop(IsopArgs),
    /// Good/bad classification and window assumptions.
    Renorm(RenormArgs),
    /// Capacity, interlacement density and the sandwich test.
    Interlace(InterlaceArgs),
    /// Run an experiment from a config file.
    Scaling(ScalingArgs),
    /// Merge record files into CSV, JSON and plot data.
    Report(ReportArgs),
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long, default_value_t = 3)]
    d: usize,
    #[arg(long = "N", alias = "n")]
    n: usize,
    #[arg(long, default_value_t = 1.0)]
    u: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    trials: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MixMethod {
    /// Exact below the cap, Monte Carlo above.
    Auto,
    Exact,
    MatrixPower,
    Mc,
}

#[derive(Args)]
struct MixArgs {
    #[arg(long)]
    grid: PathBuf,
    #[arg(long, value_enum, default_value_t = MixMethod::Auto)]
    method: MixMethod,
    #[arg(long, default_value_t = EXACT_CAP)]
    cap: usize,
    /// Independent Monte Carlo repetitions.
    #[arg(long, default_value_t = 1)]
    trials: u64,
    #[arg(long, default_value_t = 2000)]
    walkers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct IsopArgs {
    #[arg(long)]
    grid: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "exhaustive,sweep,ball")]
    families: Vec<Family>,
    #[arg(long, default_value_t = 8)]
    rmax: usize,
    /// Defaults to `1 - 1/(4d)`.
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long, default_value_t = 4)]
    sweep_modes: usize,
    #[arg(long, default_value_t = 1.0)]
    mp_constant: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Family {
    Exhaustive,
    Sweep,
    Ball,
}

#[derive(Args)]
struct RenormArgs {
    #[arg(long)]
    grid: PathBuf,
    #[arg(long, default_value_t = 1)]
    lambda: u64,
    #[arg(long = "L0", alias = "l0")]
    l0: u64,
    /// Top level `s`.
    #[arg(long, default_value_t = 0)]
    levels: usize,
    #[arg(long, default_value_t = 1.0)]
    u: f64,
    /// Sprinkling parameter; the largest admissible of 0.2, 0.1, 0.05 when omitted.
    #[arg(long)]
    epsilon: Option<f64>,
    /// `g(0,0)`; estimated when omitted.
    #[arg(long)]
    g00: Option<f64>,
    /// Core multiplicity `K`; the largest fitting the torus when omitted.
    #[arg(long)]
    k: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InterlaceArgs {
    #[arg(long, default_value_t = 3)]
    d: usize,
    #[arg(long)]
    u: f64,
    #[arg(long, default_value_t = 4)]
    box_side: usize,
    #[arg(long, default_value_t = 1000)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20_000)]
    walks_per_cell: u64,
    /// Torus side for the sandwich test against the range; skipped when omitted.
    #[arg(long = "N", alias = "n")]
    n: Option<usize>,
    #[arg(long, default_value_t = 0.2)]
    epsilon: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScalingArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Record files (`records.json`).
    #[arg(long, required = true, num_args = 1..)]
    records: Vec<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    allow_mixed_versions: bool,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if cli.threads == Some(0) {
        bail!("--threads must be positive");
    }
    with_threads(cli.threads, || match cli.cmd {
        Cmd::Sample(a) => sample(a),
        Cmd::Mix(a) => mix(a),
        Cmd::Isop(a) => isop(a),
        Cmd::Renorm(a) => renorm(a),
        Cmd::Interlace(a) => interlace(a),
        Cmd::Scaling(a) => scaling(a),
        Cmd::Report(a) => report(a),
    })?
}

fn emit(out: Option<&Path>, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn ms(t: Instant) -> u64 {
    t.elapsed().as_millis() as u64
}

fn sample(a: SampleArgs) -> Result<()> {
    let cfg = TorusConfig::new(a.d, a.n, a.u)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    for k in 0..a.trials {
        let seed = a.seed.wrapping_add(k);
        let t = Instant::now();
        let (grid, _) = sample_range(&cfg, RngSeed::new(seed, 0), false)?;
        let wall = ms(t);
        let stem = format!("range-d{}-N{}-u{}-s{seed}", a.d, a.n, a.u);
        write_grid(&a.out_dir.join(format!("{stem}.rmg")), &grid)?;
        let meta =
            json!({"d": a.d, "N": a.n, "u": a.u, "seed": seed, "popcount": grid.popcount(), "wall_time_ms": wall});
        emit(Some(&a.out_dir.join(format!("{stem}.json"))), &meta)?;
        println!("{}", serde_json::to_string(&meta)?);
    }
    Ok(())
}

fn mix(a: MixArgs) -> Result<()> {
    let grid = read_grid(&a.grid)?;
    let t = Instant::now();
    let (chain, _) = build_chain(&grid)?;
    let mc = McSettings { walkers: a.walkers, ..McSettings::default() };
    let estimates: Vec<MixingEstimate> = match a.method {
        MixMethod::Exact => vec![uniform_mixing_time_exact(&chain, a.cap)?],
        MixMethod::MatrixPower => vec![uniform_mixing_time_matrix_power(&chain, a.cap)?],
        MixMethod::Auto | MixMethod::Mc => {
            let cap = if matches!(a.method, MixMethod::Mc) { 0 } else { a.cap };
            let runs = if cap >= chain.len() { 1 } else { a.trials.max(1) };
            (0..runs)
                .map(|k| measure_mixing(&chain, cap, &mc, RngSeed::new(a.seed, 1).trial(k)))
                .collect::<Result<_, _>>()?
        }
    };
    let mut values: Vec<u64> = estimates.iter().map(|e| e.value).collect();
    values.sort_unstable();
    let first = &estimates[0];
    let errbar = estimates.iter().filter_map(|e| e.errbar).reduce(f64::max);
    emit(
        a.out.as_deref(),
        &json!({
            "method": first.method.as_str(),
            "t_mix": values[(values.len() - 1) / 2],
            "errbar": errbar,
            "trials": values,
            "V": chain.len(),
            "E": chain.edge_count(),
            "lambda2": first.lambda2,
            "worst_cell": first.worst_cell,
            "wall_time_ms": ms(t),
        }),
    )
}

fn torus_config(grid: &OccupancyGrid, u: f64) -> Result<TorusConfig> {
    let g = grid.geometry();
    Ok(TorusConfig::new(g.dim(), g.side(), u)?)
}

fn isop(a: IsopArgs) -> Result<()> {
    let grid = read_grid(&a.grid)?;
    let cfg = torus_config(&grid, 1.0)?;
    let t = Instant::now();
    let mut profiles: Vec<ConductanceProfile> = Vec::new();
    if a.families.contains(&Family::Exhaustive) {
        profiles.push(profile_exhaustive(&grid, a.rmax)?);
    }
    if a.families.contains(&Family::Sweep) {
        profiles.push(profile_sweep(&grid, a.sweep_modes, RngSeed::new(a.seed, 2))?);
    }
    if a.families.contains(&Family::Ball) {
        profiles.push(profile_balls(&grid)?);
    }
    if profiles.is_empty() {
        bail!("no candidate family selected");
    }
    let mu = a.mu.unwrap_or(1.0 - 1.0 / (4.0 * cfg.d as f64));
    let check = check_iso_inequality(&grid, &profiles, mu)?;
    let merged = ConductanceProfile::merge(profiles)?;
    let mp = morris_peres_bound(&merged, &cfg, a.mp_constant)?;
    emit(
        a.out.as_deref(),
        &json!({
            "V": grid.popcount(),
            "profile": merged.summary(&grid),
            "iso": check,
            "morris_peres": mp,
            "wall_time_ms": ms(t),
        }),
    )
}

fn renorm(a: RenormArgs) -> Result<()> {
    let torus = read_grid(&a.grid)?;
    let g = torus.geometry();
    let (d, n) = (g.dim(), g.side());
    let t = Instant::now();
    let ladder = build_ladder(a.lambda, a.l0, a.levels)?;
    let (g00, g00_err) = match a.g00 {
        Some(g) => (g, 0.0),
        None => {
            let e = green_at_origin(d, 0.005)?;
            (e.value, e.std_err)
        }
    };
    let params = match a.epsilon {
        Some(e) => DensityParams::new(a.u, e, g00, g00_err)?,
        None => EPSILON_LADDER
            .iter()
            .find_map(|&e| DensityParams::new(a.u, e, g00, g00_err).ok())
            .with_context(|| format!("no epsilon in {EPSILON_LADDER:?} is admissible at u = {}", a.u))?,
    };
    let ls = i64::try_from(ladder.big_l[a.levels])?;
    // the torus is read as the window [0, N)^d; the core keeps 2 L_s clear of its faces
    let k = match a.k {
        Some(k) => k as i64,
        None => n as i64 / ls - 4,
    };
    if k < 1 || (k + 4) * ls > n as i64 {
        bail!("no core box fits: need (K + 4) L_s <= N with K >= 1 (L_s = {ls}, N = {n})");
    }
    let window_grid = periodic_window_of(&torus, &Geometry::window(vec![0; d], n)?);
    let w = RenormWindow::shallow(&ladder, a.levels, k as u128, vec![2 * ls; d])?;
    let map = classify(&window_grid, &ladder, &params, a.levels)?;
    let assumptions = check_assumptions(&window_grid, &w, &ladder, &params)?;
    let cluster = enlarged_cluster(&window_grid, &w)?;
    let levels: Vec<Value> = map
        .levels
        .iter()
        .map(|m| {
            json!({
                "level": m.level,
                "spacing": m.spacing,
                "vertices": m.status.len(),
                "bad_a": m.bad_points(BadKind::A),
                "bad_b": m.bad_points(BadKind::B),
                "unknown": m.count(|s| s.combined() == Status::Unknown),
            })
        })
        .collect();
    let asymptotic = select_window(d, n as u128, &ladder).map_err(|e| e.to_string());
    emit(
        a.out.as_deref(),
        &json!({
            "ladder": ladder,
            "params": params,
            "min_component": params.min_component(a.l0, d),
            "max_count": params.max_count(a.l0, d),
            "levels": levels,
            "window": w,
            "small_set": small_set_check(d, &w).ok(),
            "asymptotic_window": match &asymptotic { Ok(w) => json!(w), Err(e) => json!({"error": e}) },
            "assumptions": assumptions,
            "enlarged_cluster": {"size": cluster.cells.len(), "core_count": cluster.core_count, "connected": cluster.connected},
            "wall_time_ms": ms(t),
        }),
    )
}

fn interlace(a: InterlaceArgs) -> Result<()> {
    if a.trials == 0 {
        bail!("--trials must be positive");
    }
    let t = Instant::now();
    let green = green_at_origin(a.d, 0.002)?;
    let params = SamplerParams {
        capacity: CapacityBudget { walks_per_cell: a.walks_per_cell, radius: None, seed: RngSeed::new(a.seed, 7) },
        truncation: None,
    };
    let set = cube(vec![0; a.d], a.box_side)?;
    let sampler = InterlacementSampler::new(&set, &params)?;
    let cells = set.popcount() as f64;
    let fractions: Vec<f64> = (0..a.trials)
        .map(|k| Ok(sampler.sample(a.u, RngSeed::new(a.seed, 8).trial(k))?.trace.popcount() as f64 / cells))
        .collect::<Result<_>>()?;
    let (mean, sd) = rangemix_core::stats::mean_sd(&fractions);
    let se = sd / (a.trials as f64).sqrt();
    let eta = green.density(a.u);
    let sandwich = match a.n {
        Some(n) => {
            let cfg = TorusConfig::new(a.d, n, a.u)?;
            Some(sandwich_diagnostic(&cfg, a.epsilon, a.box_side, a.trials, RngSeed::new(a.seed, 9), &params)?)
        }
        None => None,
    };
    emit(
        a.out.as_deref(),
        &json!({
            "capacity": {"cap": sampler.cap(), "std_err": sampler.capacity.std_err, "radius": sampler.capacity.radius},
            "density": {"estimate": mean, "std_err": se, "eta": eta, "g00": green.value, "z": (mean - eta) / se},
            "sandwich": sandwich,
            "wall_time_ms": ms(t),
        }),
    )
}

fn scaling(a: ScalingArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(o) = a.out_dir {
        cfg.output = Some(o);
    }
    let out = cfg.output.clone();
    let (summary, records) = match cfg.kind {
        ExperimentKind::Iso => {
            let study = run_iso_study(&cfg)?;
            let v = json!({"points": study.points, "trend": study.trend});
            (v, study.records)
        }
        _ => {
            let (fit, records) = run_scaling(&cfg)?;
            (json!(fit), records)
        }
    };
    match out {
        Some(dir) => {
            harness::report(&records, &dir)?;
            cfg.save(&dir.join("config.json"))?;
            emit(Some(&dir.join("summary.json")), &summary)?;
            emit(None, &summary)
        }
        None => emit(None, &json!({"summary": summary, "records": records})),
    }
}

fn report(a: ReportArgs) -> Result<()> {
    let sets = a.records.iter().map(|p| read_records(p)).collect::<Result<Vec<_>, _>>()?;
    let merged = merge_records(sets, a.allow_mixed_versions)?;
    let files = harness::report(&merged, &a.out_dir)?;
    println!("{} records -> {}", merged.len(), files.csv.display());
    Ok(())
}
