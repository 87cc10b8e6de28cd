use std::fs;

use rangemix_core::harness::*;
use rangemix_core::TorusConfig;

fn grids(ns: &[usize], u: f64) -> Vec<TorusConfig> {
    ns.iter().map(|&n| TorusConfig::new(3, n, u).unwrap()).collect()
}

fn strip_time(mut rs: Vec<ExperimentRecord>) -> Vec<ExperimentRecord> {
    rs.iter_mut().for_each(|r| r.wall_ms = 0);
    rs
}

#[test]
fn config_round_trips_through_json() {
    let mut c = ExperimentConfig::new(ExperimentKind::Iso, grids(&[6, 8], 0.1 + 0.2), 3, 99);
    c.seeds = Some(vec![5, u64::MAX, 0]);
    c.iso.mu = Some(0.9583);
    c.output = Some("out/dir".into());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    c.save(&path).unwrap();
    assert_eq!(ExperimentConfig::load(&path).unwrap(), c);
}

#[test]
fn invalid_configs_are_rejected_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    fs::write(&path, r#"{"kind":"scaling","grids":[{"d":2,"n":4,"u":1.0}],"trials":10,"seed":0}"#).unwrap();
    assert!(ExperimentConfig::load(&path).is_err());
    fs::write(&path, r#"{"kind":"scaling","grids":[],"trials":10,"seed":0,"bogus":1}"#).unwrap();
    assert!(ExperimentConfig::load(&path).is_err());
    let few = ExperimentConfig::new(ExperimentKind::Scaling, grids(&[4, 6], 1.0), 5, 0);
    assert!(run_scaling(&few).is_err());
    let unsorted = ExperimentConfig::new(ExperimentKind::Scaling, grids(&[6, 4], 1.0), 10, 0);
    assert!(run_scaling(&unsorted).is_err());
}

#[test]
fn torus_control_slope() {
    let (fit, recs) =
        run_scaling(&ExperimentConfig::new(ExperimentKind::TorusControl, grids(&[4, 6, 8, 10], 1.0), 1, 0)).unwrap();
    assert_eq!(recs.len(), 4);
    assert!(recs.iter().all(|r| r.method.as_deref() == Some("exact-spectral") && r.density == 1.0));
    assert!((1.85..=2.15).contains(&fit.slope), "{}", fit.slope);
    assert_eq!(fit.ci, (fit.slope, fit.slope));
}

#[test]
fn single_n_cannot_be_fitted() {
    let c = ExperimentConfig::new(ExperimentKind::TorusControl, grids(&[6], 1.0), 1, 0);
    assert!(run_scaling(&c).is_err());
}

#[test]
fn scaling_uses_monte_carlo_above_the_cap() {
    let mut c = ExperimentConfig::new(ExperimentKind::Scaling, grids(&[4, 5], 1.0), 10, 3);
    c.exact_cap = 40;
    c.mc.walkers = 300;
    c.bootstrap = 200;
    let (fit, recs) = run_scaling(&c).unwrap();
    for r in &recs {
        if r.vertices <= 40 {
            assert_eq!(r.method.as_deref(), Some("exact-spectral"));
        } else {
            assert_eq!(r.method.as_deref(), Some("mc-diagonal"));
            assert!(r.errbar.unwrap() >= 1.0);
        }
    }
    assert!(fit.ci.0 <= fit.slope && fit.slope <= fit.ci.1);
    assert_eq!(fit.points.iter().map(|p| p.trials).collect::<Vec<_>>(), vec![10, 10]);
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let mut c = ExperimentConfig::new(ExperimentKind::Scaling, grids(&[4, 5], 1.0), 10, 11);
    c.exact_cap = 50;
    c.mc.walkers = 200;
    let one = with_threads(Some(1), || run_scaling(&c).unwrap()).unwrap();
    let four = with_threads(Some(4), || run_scaling(&c).unwrap()).unwrap();
    assert_eq!(one.0, four.0);
    assert_eq!(strip_time(one.1), strip_time(four.1));
}

#[test]
fn iso_study_with_zero_trials_is_empty() {
    let c = ExperimentConfig::new(ExperimentKind::Iso, grids(&[6], 1.0), 0, 0);
    let s = run_iso_study(&c).unwrap();
    assert!(s.records.is_empty() && s.points.is_empty() && s.trend.is_none());
    let dir = tempfile::tempdir().unwrap();
    let files = report(&s.records, dir.path()).unwrap();
    assert_eq!(fs::read_to_string(&files.csv).unwrap(), CSV_COLUMNS.join(",") + "\n");
    assert!(files.per_kind.is_empty());
}

#[test]
fn iso_study_is_deterministic() {
    let mut c = ExperimentConfig::new(ExperimentKind::Iso, grids(&[6, 7], 1.0), 2, 4);
    c.iso.rmax = 5;
    c.iso.measure_mixing = true;
    c.bootstrap = 100;
    let a = run_iso_study(&c).unwrap();
    let b = run_iso_study(&c).unwrap();
    assert_eq!(strip_time(a.records.clone()), strip_time(b.records));
    assert_eq!(a.points, b.points);
    assert!(a.records.iter().all(|r| r.gamma_hat.unwrap() > 0.0 && r.mp_bound.is_some() && r.t_mix.is_some()));
    let t = a.trend.unwrap();
    assert!((t.ratio - a.points[1].min_gamma / a.points[0].min_gamma).abs() < 1e-12);
}

#[test]
fn failures_persist_partial_records() {
    // |A| <= mu |R| admits no candidate on the small torus only
    let dir = tempfile::tempdir().unwrap();
    let mut c = ExperimentConfig::new(ExperimentKind::Iso, grids(&[4, 8], 1.0), 1, 0);
    c.iso.mu = Some(1.0 / 150.0);
    c.iso.rmax = 3;
    c.output = Some(dir.path().to_path_buf());
    assert!(run_experiment(&c).is_err());
    let saved = read_records(&dir.path().join("records.json")).unwrap();
    assert_eq!(saved.len(), 1);
    assert_eq!(saved[0].cfg.n, 8);
}

fn record(kind: ExperimentKind, n: usize, seed: u64) -> ExperimentRecord {
    ExperimentRecord {
        kind,
        cfg: TorusConfig::new(3, n, 1.0).unwrap(),
        seed,
        vertices: 100 + n,
        edges: 120,
        density: 0.5,
        t_mix: Some(40 + seed),
        method: Some("mc-diagonal".into()),
        errbar: Some(2.5),
        gamma_hat: Some(0.25),
        mp_integral: Some(10.0),
        mp_bound: Some(10),
        profile: None,
        wall_ms: 7,
        version: CODE_VERSION.into(),
    }
}

#[test]
fn report_rows_and_partitions() {
    let dir = tempfile::tempdir().unwrap();
    let one = report(&[record(ExperimentKind::Scaling, 6, 2)], dir.path()).unwrap();
    let text = fs::read_to_string(&one.csv).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), CSV_COLUMNS);
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 1);
    assert_eq!(
        rows[0].iter().collect::<Vec<_>>(),
        ["scaling", "3", "6", "1", "2", "106", "120", "42", "mc-diagonal", "2.5", "0.25", "10", "7"]
    );
    assert_eq!(read_records(&one.json).unwrap(), vec![record(ExperimentKind::Scaling, 6, 2)]);

    let mixed = vec![
        record(ExperimentKind::Iso, 8, 1),
        record(ExperimentKind::Scaling, 6, 3),
        record(ExperimentKind::Scaling, 4, 9),
        record(ExperimentKind::Iso, 6, 1),
    ];
    let dir = tempfile::tempdir().unwrap();
    let files = report(&mixed, dir.path()).unwrap();
    let names: Vec<String> = files.per_kind.iter().map(|p| p.file_name().unwrap().to_string_lossy().into()).collect();
    assert_eq!(names, ["records-scaling.csv", "records-iso.csv"]);
    let iso = fs::read_to_string(&files.per_kind[1]).unwrap();
    assert_eq!(iso.lines().count(), 3);
    assert!(iso.lines().nth(1).unwrap().starts_with("iso,3,6,"));
    let dat = fs::read_to_string(&files.plot_data[0]).unwrap();
    assert_eq!(dat.lines().skip(1).collect::<Vec<_>>(), ["3 1 4 1 49 0.25 10", "3 1 6 1 43 0.25 10"]);
    // shuffled input gives the same bytes
    let dir2 = tempfile::tempdir().unwrap();
    let rev: Vec<_> = mixed.into_iter().rev().collect();
    let files2 = report(&rev, dir2.path()).unwrap();
    assert_eq!(fs::read(&files.csv).unwrap(), fs::read(&files2.csv).unwrap());
}

#[test]
fn merging_refuses_mixed_versions() {
    let a = vec![record(ExperimentKind::Scaling, 6, 1)];
    let mut old = record(ExperimentKind::Scaling, 6, 2);
    old.version = "rangemix-core 0.0.1".into();
    assert!(merge_records(vec![a.clone(), vec![old.clone()]], false).is_err());
    assert_eq!(merge_records(vec![a.clone(), vec![old]], true).unwrap().len(), 2);
    assert_eq!(merge_records(vec![a.clone(), a], false).unwrap().len(), 2);
}
