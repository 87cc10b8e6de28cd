use std::collections::VecDeque;

use proptest::prelude::*;
use rangemix_core::isoperimetry::*;
use rangemix_core::lattice::{edge_boundary, CellSet, Geometry, OccupancyGrid, TorusConfig};
use rangemix_core::rng::RngSeed;
use rangemix_core::walk::sample_range;

fn range(n: usize, root: u64) -> OccupancyGrid {
    sample_range(&TorusConfig::new(3, n, 1.0).unwrap(), RngSeed::new(root, 0), false).unwrap().0
}

/// Connected neighborhood of `size` cells grown by BFS from `start`.
fn bfs_patch(s: &OccupancyGrid, start: usize, size: usize) -> OccupancyGrid {
    let g = s.geometry();
    let mut seen = vec![start];
    let mut queue = VecDeque::from([start]);
    while let Some(c) = queue.pop_front() {
        for nb in g.distinct_neighbors(c) {
            if s.get(nb) && !seen.contains(&nb) && seen.len() < size {
                seen.push(nb);
                queue.push_back(nb);
            }
        }
    }
    OccupancyGrid::from_cells(g.clone(), seen).unwrap()
}

/// min |dA|/|A| over every subset (connected or not) of size <= r.
fn brute_force_phi(s: &OccupancyGrid, r: usize) -> f64 {
    let cells: Vec<usize> = s.occupied().collect();
    let v = cells.len();
    let cap = (v * 11) / 12;
    let mut best = f64::INFINITY;
    for mask in 1u32..(1 << v) {
        let k = mask.count_ones() as usize;
        if k > r.min(cap) {
            continue;
        }
        let a = CellSet::from_unsorted((0..v).filter(|i| mask >> i & 1 == 1).map(|i| cells[i]).collect());
        let b = edge_boundary(&a, s).unwrap().count as f64;
        best = best.min(b / k as f64);
    }
    best
}

#[test]
fn exhaustive_matches_unrestricted_oracle() {
    let s = range(6, 11);
    let cells: Vec<usize> = s.occupied().collect();
    for start in [cells[0], cells[cells.len() / 2], cells[cells.len() - 1]] {
        let patch = bfs_patch(&s, start, 16);
        let p = profile_exhaustive(&patch, 6).unwrap();
        for r in 1..=6 {
            let oracle = brute_force_phi(&patch, r);
            assert_eq!(p.phi(r as f64).unwrap(), oracle, "r = {r}");
        }
    }
}

#[test]
fn full_torus_sweep_half_volume() {
    for n in [6usize, 8, 10] {
        let s = OccupancyGrid::full(Geometry::torus(3, n).unwrap());
        // explicit slab oracle
        let g = s.geometry();
        let slab: CellSet = s.occupied().filter(|&c| g.coords(c)[0] < n / 2).collect();
        let slab_ratio = edge_boundary(&slab, &s).unwrap().count as f64 / slab.len() as f64;
        assert!((slab_ratio - 4.0 / n as f64).abs() < 1e-12);
        let p = profile_sweep(&s, 3, RngSeed::new(n as u64, 0)).unwrap();
        let half = p.record(n * n * n / 2).unwrap();
        let ratio = half.ratio();
        let target = 2.0 / n as f64;
        assert!(ratio >= target / 4.0 && ratio <= target * 4.0, "N = {n}: {ratio}");
    }
}

#[test]
fn full_torus_balls_match_direct_count() {
    let n = 7;
    let s = OccupancyGrid::full(Geometry::torus(3, n).unwrap());
    let p = profile_balls(&s).unwrap();
    for rho in 0..=3usize {
        let side = 2 * rho + 1;
        let vol = side.pow(3);
        if vol >= n * n * n {
            continue;
        }
        // cube of side m: 6 m^2 boundary edges
        let expect = 6 * side * side;
        let direct = {
            let g = s.geometry();
            let ball: CellSet = s.occupied().filter(|&c| g.linf_distance(0, c) <= rho as u64).collect();
            edge_boundary(&ball, &s).unwrap().count
        };
        assert_eq!(direct, expect);
        assert_eq!(p.record(vol).unwrap().boundary as usize, expect);
    }
}

#[test]
fn ball_singleton_ratio_is_degree() {
    let s = range(6, 4);
    let p = profile_balls(&s).unwrap();
    let min_deg = s.occupied().map(|c| s.degree(c)).min().unwrap();
    assert_eq!(p.record(1).unwrap().boundary as usize, min_deg);
}

#[test]
fn complements_are_scored() {
    let s = range(6, 2);
    let b = profile_balls(&s).unwrap();
    let v = s.popcount();
    let big = b.record(v - 1).unwrap();
    assert_eq!(edge_boundary(&big.witness.materialize(&s), &s).unwrap().count as u64, big.boundary);
    let rep = check_iso_inequality(&s, &[b], 1.0 - 1.0 / 12.0).unwrap();
    assert!(rep.gamma_hat > 0.0);
    assert!(rep.size as f64 <= (1.0 - 1.0 / 12.0) * v as f64);
}

#[test]
fn iso_check_is_deterministic() {
    let s = range(8, 9);
    let run = || {
        let profiles = [
            profile_exhaustive(&s, 5).unwrap(),
            profile_sweep(&s, 3, RngSeed::new(3, 0)).unwrap(),
            profile_balls(&s).unwrap(),
        ];
        check_iso_inequality(&s, &profiles, 0.9).unwrap()
    };
    assert_eq!(run(), run());
}

/// Adaptive Simpson quadrature in `t = ln r`.
fn quad(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (f(a) + 4.0 * f((a + b) / 2.0) + f(b))
    }
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = (a + b) / 2.0;
        let (l, r) = (simpson(f, a, m), simpson(f, m, b));
        if depth == 0 || (l + r - whole).abs() <= 15.0 * tol {
            return l + r + (l + r - whole) / 15.0;
        }
        rec(f, a, m, l, tol / 2.0, depth - 1) + rec(f, m, b, r, tol / 2.0, depth - 1)
    }
    let g = |t: f64| f(t.exp()) * t.exp();
    rec(&g, a.ln(), b.ln(), simpson(&g, a.ln(), b.ln()), tol, 50)
}

#[test]
fn power_law_closed_form_matches_quadrature() {
    for n in [6usize, 10, 16] {
        let cfg = TorusConfig::new(3, n, 1.0).unwrap();
        let gamma = 1.3;
        let d = 3.0;
        let phi = |r: f64| gamma * (n as f64).powf(-1.0 / d) * r.powf(-(d - 1.0) / (d * d));
        let numeric = quad(&|r| 1.0 / (r * phi(r) * phi(r)), 1.0, mp_upper_limit(&cfg), 1e-11);
        let closed = morris_peres_power_law(gamma, &cfg);
        assert!((numeric - closed).abs() <= 1e-9 * closed, "{numeric} vs {closed}");
    }
}

#[test]
fn two_piece_step_matches_quadrature() {
    let steps = [(1.0, 0.8), (37.0, 0.3)];
    let upper = 5000.0;
    let closed = step_integral(&steps, upper).unwrap();
    let f = |r: f64| {
        let phi = if r < 37.0 { 0.8 } else { 0.3 };
        1.0 / (r * phi * phi)
    };
    let numeric = quad(&f, 1.0, 37.0, 1e-13) + quad(&f, 37.0, upper, 1e-13);
    assert!((closed - numeric).abs() < 1e-9, "{closed} vs {numeric}");
}

#[test]
fn morris_peres_on_real_profile() {
    let s = range(8, 1);
    let cfg = TorusConfig::new(3, 8, 1.0).unwrap();
    let p = ConductanceProfile::merge([profile_sweep(&s, 3, RngSeed::new(0, 0)).unwrap(), profile_balls(&s).unwrap()])
        .unwrap();
    let mp = morris_peres_bound(&p, &cfg, 1.0).unwrap();
    assert!(mp.integral > 0.0);
    assert_eq!(mp.bound, mp.integral.ceil() as u64);
}

proptest! {
    #[test]
    fn step_integral_is_antitone(
        phis in proptest::collection::vec(0.05f64..3.0, 1..6),
        bump in 0.0f64..1.0,
        gaps in proptest::collection::vec(1.0f64..50.0, 5),
    ) {
        let mut r = 1.0;
        let steps: Vec<(f64, f64)> = phis.iter().enumerate().map(|(i, &p)| {
            let at = r;
            r += gaps[i % gaps.len()];
            (at, p)
        }).collect();
        let larger: Vec<(f64, f64)> = steps.iter().map(|&(r, p)| (r, p + bump)).collect();
        let a = step_integral(&steps, 1000.0).unwrap();
        let b = step_integral(&larger, 1000.0).unwrap();
        prop_assert!(b <= a + 1e-12);
    }
}
