use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rangemix_core::harness::{read_records, run_trial, ExperimentConfig, ExperimentKind};
use rangemix_core::TorusConfig;
use serde_json::Value;

fn rangemix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rangemix")).args(args).env_remove("RANGEMIX_THREADS").output().unwrap()
}

fn ok_json(args: &[&str]) -> Value {
    let out = rangemix(args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn sample(dir: &Path, n: usize, seed: u64) -> String {
    let out =
        rangemix(&["sample", "--N", &n.to_string(), "--seed", &seed.to_string(), "--out-dir", dir.to_str().unwrap()]);
    assert!(out.status.success());
    dir.join(format!("range-d3-N{n}-u1-s{seed}.rmg")).to_string_lossy().into_owned()
}

#[test]
fn sample_writes_grids_and_sidecars() {
    let dir = tempfile::tempdir().unwrap();
    let out =
        rangemix(&["sample", "--N", "5", "--seed", "3", "--trials", "2", "--out-dir", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    for seed in [3, 4] {
        let meta: Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join(format!("range-d3-N5-u1-s{seed}.json"))).unwrap())
                .unwrap();
        assert_eq!((meta["d"].as_u64(), meta["N"].as_u64(), meta["seed"].as_u64()), (Some(3), Some(5), Some(seed)));
        let grid =
            rangemix_core::lattice::io::read_grid(&dir.path().join(format!("range-d3-N5-u1-s{seed}.rmg"))).unwrap();
        assert_eq!(meta["popcount"].as_u64(), Some(grid.popcount() as u64));
    }
}

#[test]
fn mix_matches_the_harness() {
    let dir = tempfile::tempdir().unwrap();
    let grid = sample(dir.path(), 6, 21);
    let exact = ok_json(&["mix", "--grid", &grid, "--method", "exact"]);
    let power = ok_json(&["mix", "--grid", &grid, "--method", "matrix-power"]);
    assert_eq!(exact["t_mix"], power["t_mix"]);
    let exp = ExperimentConfig::new(ExperimentKind::Scaling, vec![TorusConfig::new(3, 6, 1.0).unwrap()], 1, 21);
    let rec = run_trial(&exp, &exp.grids[0], 21).unwrap();
    assert_eq!(exact["t_mix"].as_u64(), rec.t_mix);
    assert_eq!(exact["V"].as_u64(), Some(rec.vertices as u64));
    assert_eq!(exact["method"], "exact-spectral");
    let mc = ok_json(&["mix", "--grid", &grid, "--method", "mc", "--walkers", "300", "--trials", "2"]);
    assert_eq!(mc["method"], "mc-diagonal");
    assert_eq!(mc["trials"].as_array().unwrap().len(), 2);
}

#[test]
fn isop_reports_profile_ratio_and_bound() {
    let dir = tempfile::tempdir().unwrap();
    let grid = sample(dir.path(), 6, 5);
    let out = dir.path().join("iso.json");
    let out_s = out.to_str().unwrap();
    rangemix(&["isop", "--grid", &grid, "--rmax", "4", "--families", "exhaustive,ball", "--out", out_s]);
    let v: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert!(v["iso"]["gamma_hat"].as_f64().unwrap() > 0.0);
    assert!((v["iso"]["mu"].as_f64().unwrap() - 11.0 / 12.0).abs() < 1e-12);
    let bps = v["profile"]["breakpoints"].as_array().unwrap();
    assert!(!bps.is_empty());
    let w: Vec<u64> = bps[0]["witness"].as_array().unwrap().iter().map(|x| x.as_u64().unwrap()).collect();
    assert!(w.windows(2).all(|p| p[0] < p[1]));
    assert!(v["morris_peres"]["bound"].as_u64().unwrap() > 0);
    let none = rangemix(&["isop", "--grid", &grid, "--families", "exhaustive", "--rmax", "9"]);
    assert!(!none.status.success());
}

#[test]
fn renorm_reports_levels_and_assumptions() {
    let dir = tempfile::tempdir().unwrap();
    let grid = sample(dir.path(), 16, 2);
    let v = ok_json(&["renorm", "--grid", &grid, "--L0", "2", "--levels", "1", "--g00", "1.5164"]);
    assert_eq!(v["levels"].as_array().unwrap().len(), 2);
    assert_eq!(v["window"]["k"].as_u64(), Some(4));
    assert!((v["params"]["epsilon"].as_f64().unwrap() - 0.1).abs() < 1e-12);
    assert!(v["enlarged_cluster"]["size"].as_u64().unwrap() > 0);
    assert!(v["asymptotic_window"]["error"].is_string());
    let too_big = rangemix(&["renorm", "--grid", &grid, "--L0", "4", "--levels", "1", "--g00", "1.5164"]);
    assert!(!too_big.status.success());
}

#[test]
fn interlace_density_and_sandwich() {
    let v = ok_json(&[
        "interlace",
        "--u",
        "1",
        "--box-side",
        "2",
        "--trials",
        "300",
        "--walks-per-cell",
        "4000",
        "--N",
        "8",
    ]);
    assert!(v["density"]["z"].as_f64().unwrap().abs() < 4.0, "{}", v["density"]);
    assert!(v["capacity"]["cap"].as_f64().unwrap() > 1.0);
    assert_eq!(v["sandwich"]["freq_range"].as_array().unwrap().len(), 8);
}

fn scaling_run(dir: &Path, threads: &str) -> Vec<rangemix_core::harness::ExperimentRecord> {
    let cfg = dir.join("cfg.json");
    let mut c = ExperimentConfig::new(
        ExperimentKind::Scaling,
        vec![TorusConfig::new(3, 4, 1.0).unwrap(), TorusConfig::new(3, 5, 1.0).unwrap()],
        10,
        0,
    );
    c.exact_cap = 45;
    c.mc.walkers = 200;
    c.bootstrap = 100;
    c.save(&cfg).unwrap();
    let out = dir.join(format!("out{threads}"));
    let o = Command::new(env!("CARGO_BIN_EXE_rangemix"))
        .args(["scaling", "--config", cfg.to_str().unwrap(), "--seed", "40", "--out-dir", out.to_str().unwrap()])
        .env("RANGEMIX_THREADS", threads)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let saved = ExperimentConfig::load(&out.join("config.json")).unwrap();
    assert_eq!(saved.seed, 40);
    assert!(out.join("records-scaling.csv").exists() && out.join("scaling.dat").exists());
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert!(summary["slope"].is_number());
    let mut recs = read_records(&out.join("records.json")).unwrap();
    recs.iter_mut().for_each(|r| r.wall_ms = 0);
    recs
}

#[test]
fn scaling_is_independent_of_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let one = scaling_run(dir.path(), "1");
    assert_eq!(one.len(), 20);
    assert!(one.iter().all(|r| (40..50).contains(&r.seed)));
    assert_eq!(one, scaling_run(dir.path(), "4"));
    let bad = Command::new(env!("CARGO_BIN_EXE_rangemix"))
        .args(["report", "--records", "x", "--out-dir", "y"])
        .env("RANGEMIX_THREADS", "zero")
        .output()
        .unwrap();
    assert!(!bad.status.success());
}

#[test]
fn report_refuses_mixed_versions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    ExperimentConfig::new(
        ExperimentKind::TorusControl,
        vec![TorusConfig::new(3, 4, 1.0).unwrap(), TorusConfig::new(3, 5, 1.0).unwrap()],
        1,
        0,
    )
    .save(&cfg)
    .unwrap();
    let run = dir.path().join("run");
    ok_json(&["scaling", "--config", cfg.to_str().unwrap(), "--out-dir", run.to_str().unwrap()]);
    let a = run.join("records.json");
    let text = fs::read_to_string(&a).unwrap().replace(rangemix_core::harness::CODE_VERSION, "rangemix-core 0.0.0");
    let b = dir.path().join("old.json");
    fs::write(&b, text).unwrap();
    let out = dir.path().join("merged");
    let (a, b, out) = (a.to_str().unwrap(), b.to_str().unwrap(), out.to_str().unwrap());
    assert!(!rangemix(&["report", "--records", a, b, "--out-dir", out]).status.success());
    assert!(rangemix(&["report", "--records", a, b, "--out-dir", out, "--allow-mixed-versions"]).status.success());
    let csv = fs::read_to_string(Path::new(out).join("records.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().nth(1).unwrap().starts_with("torus-control,3,4,1,0,64,192,"));
}
