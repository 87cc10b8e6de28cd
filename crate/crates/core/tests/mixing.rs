use std::f64::consts::PI;

use proptest::prelude::*;
use rangemix_core::chain::*;
use rangemix_core::lattice::{Geometry, OccupancyGrid, TorusConfig};
use rangemix_core::rng::RngSeed;
use rangemix_core::walk::sample_range;

/// Full-torus mixing time from Fourier modes, scanning every displacement:
/// `p_n(0, z) N^d - 1 = sum_{k != 0} lambda_k^n cos(2 pi k.z / N)`.
fn torus_fourier_tmix(n_side: usize) -> u64 {
    let d = 3;
    let modes: Vec<[usize; 3]> = (0..n_side.pow(3))
        .map(|i| [i / (n_side * n_side), (i / n_side) % n_side, i % n_side])
        .filter(|k| k != &[0, 0, 0])
        .collect();
    let lam: Vec<f64> = modes
        .iter()
        .map(|k| 0.5 + k.iter().map(|&ki| (2.0 * PI * ki as f64 / n_side as f64).cos()).sum::<f64>() / (2.0 * d as f64))
        .collect();
    let mut pw = vec![1.0; lam.len()];
    for n in 0.. {
        let mut worst = 0.0f64;
        for z in 0..n_side.pow(3) {
            let zc = [z / (n_side * n_side), (z / n_side) % n_side, z % n_side];
            let s: f64 = modes
                .iter()
                .zip(&pw)
                .map(|(k, p)| {
                    let phase: usize = k.iter().zip(&zc).map(|(a, b)| a * b).sum();
                    p * (2.0 * PI * phase as f64 / n_side as f64).cos()
                })
                .sum();
            worst = worst.max(s.abs());
        }
        if worst <= 0.25 + CRITERION_SLACK {
            return n;
        }
        for (p, l) in pw.iter_mut().zip(&lam) {
            *p *= l;
        }
    }
    unreachable!()
}

fn range_chain(n: usize, u: f64, seed: RngSeed) -> LazyChain {
    let cfg = TorusConfig::new(3, n, u).unwrap();
    build_chain(&sample_range(&cfg, seed, false).unwrap().0).unwrap().0
}

#[test]
fn full_torus_matches_fourier_oracle() {
    for n in [4usize, 5, 6] {
        let (c, _) = build_chain(&OccupancyGrid::full(Geometry::torus(3, n).unwrap())).unwrap();
        let spec = spectral_decomposition(&c, EXACT_CAP).unwrap();
        let lam2 = 0.5 + (2.0 + (2.0 * PI / n as f64).cos()) / 6.0;
        assert!((spec.lambda2().unwrap() - lam2).abs() < 1e-10);
        let exact = uniform_mixing_time_exact(&c, EXACT_CAP).unwrap().value;
        assert_eq!(exact, torus_fourier_tmix(n), "N = {n}");
    }
}

#[test]
fn exact_methods_agree_on_small_ranges() {
    for k in 0..12u64 {
        let c = range_chain(4 + (k % 3) as usize, 0.7 + 0.1 * (k % 4) as f64, RngSeed::new(500 + k, 0));
        let a = uniform_mixing_time_exact(&c, EXACT_CAP).unwrap();
        let b = uniform_mixing_time_matrix_power(&c, EXACT_CAP).unwrap();
        assert_eq!(a.value, b.value, "seed {k}");
        assert!(a.value >= 1);
    }
}

#[test]
fn mc_calibrates_against_exact() {
    let mut hits = 0;
    for k in 0..50u64 {
        let c = range_chain(5 + (k % 4) as usize, 1.0, RngSeed::new(k, 7));
        let exact = uniform_mixing_time_exact(&c, EXACT_CAP).unwrap().value;
        let mc = uniform_mixing_time_mc(&c, &McParams { seed: RngSeed::new(k, 1), ..Default::default() }).unwrap();
        if (mc.value as f64 - exact as f64).abs() <= mc.errbar.unwrap() {
            hits += 1;
        }
    }
    assert!(hits >= 45, "{hits}/50 within error bars");
}

#[test]
fn mc_full_torus_ratio() {
    let est = |n: usize| {
        let (c, _) = build_chain(&OccupancyGrid::full(Geometry::torus(3, n).unwrap())).unwrap();
        uniform_mixing_time_mc(&c, &McParams::default()).unwrap().value as f64
    };
    let ratio = est(16) / est(8);
    assert!((2.8..=5.7).contains(&ratio), "ratio {ratio}");
}

#[test]
fn mc_budget_exhaustion() {
    let c = range_chain(8, 1.0, RngSeed::new(3, 3));
    let params = McParams { max_walk_len: 3, ..Default::default() };
    assert!(matches!(uniform_mixing_time_mc(&c, &params), Err(rangemix_core::Error::BudgetExhausted(_))));
}

#[test]
fn mc_is_deterministic() {
    let c = range_chain(7, 1.0, RngSeed::new(4, 4));
    let p = McParams { seed: RngSeed::new(2, 2), ..Default::default() };
    assert_eq!(uniform_mixing_time_mc(&c, &p).unwrap(), uniform_mixing_time_mc(&c, &p).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn chain_invariants(seed in any::<u64>(), n in 3usize..7, u in 0.2f64..1.5) {
        let c = range_chain(n, u, RngSeed::new(seed, 0));
        let pi = c.stationary();
        prop_assert!((pi.pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for x in 0..c.len() {
            prop_assert!(c.len() == 1 || (1..=6).contains(&c.degree(x)));
            let row: f64 = (0..c.len()).map(|y| c.transition(x, y)).sum();
            prop_assert!((row - 1.0).abs() < 1e-12);
        }
        let spec = spectral_decomposition(&c, EXACT_CAP).unwrap();
        prop_assert!(spec.eigenvalues.iter().all(|&l| (-1e-10..=1.0 + 1e-10).contains(&l)));
        if c.len() > 1 {
            prop_assert!(spec.eigenvalues[1] < 1.0 - 1e-12);
        }
    }
}
