use proptest::prelude::*;
use rand::Rng;
use rangemix_core::lattice::{
    connected_components, periodic_window_of, restrict, Geometry, LatticeBox, OccupancyGrid, TorusConfig,
};
use rangemix_core::renorm::*;
use rangemix_core::rng::RngSeed;
use rangemix_core::walk::sample_range;

const G00: f64 = 1.5163;

fn embedded_range(n: usize, u: f64, root: u64, anchor: i64, side: usize) -> OccupancyGrid {
    let cfg = TorusConfig::new(3, n, u).unwrap();
    let s = sample_range(&cfg, RngSeed::new(root, 0), false).unwrap().0;
    periodic_window_of(&s, &Geometry::window(vec![anchor; 3], side).unwrap())
}

/// Second implementation of the (0a) predicate from lattice primitives.
fn naive_0a(s: &OccupancyGrid, x: &[i64], l0: i64, eta1: f64) -> bool {
    let boxed = |lo: &[i64]| restrict(s, &LatticeBox::new(lo.to_vec(), l0 as usize, false)).unwrap();
    let large = |lo: &[i64]| -> Vec<Vec<Vec<i64>>> {
        let b = boxed(lo);
        connected_components(&b)
            .into_iter()
            .filter(|c| c.len() as f64 >= eta1 * (l0 as f64).powi(3))
            .map(|c| c.iter().map(|i| b.geometry().point(i)).collect())
            .collect()
    };
    let cx = large(x);
    let mut ys = vec![];
    for i in 0..3 {
        for sg in [-1, 1] {
            let mut y = x.to_vec();
            y[i] += sg * l0;
            ys.push(y);
        }
    }
    cx.iter().any(|c| {
        ys.iter().all(|y| {
            let cy = large(y);
            // union of the two boxes as its own grid
            let lo: Vec<i64> = x.iter().zip(y).map(|(a, b)| *a.min(b)).collect();
            let g = Geometry::window(lo, 2 * l0 as usize).unwrap();
            let inside = |p: &[i64], b: &[i64]| p.iter().zip(b).all(|(v, o)| *v >= *o && *v < *o + l0);
            let cells = (0..g.cells()).filter(|&i| {
                let p = g.point(i);
                (inside(&p, x) || inside(&p, y)) && s.get_point(&p)
            });
            let union = OccupancyGrid::from_cells(g.clone(), cells).unwrap();
            let comps = connected_components(&union);
            let comp_of = |p: &Vec<i64>| comps.iter().position(|k| k.contains(g.index_of_point(p).unwrap())).unwrap();
            let lx = comp_of(&c[0]);
            cy.iter().any(|d| comp_of(&d[0]) == lx)
        })
    })
}

#[test]
fn level0_matches_naive_evaluator() {
    let s = embedded_range(32, 1.0, 77, -8, 48);
    let ladder = build_ladder(2, 8, 0).unwrap();
    let p = DensityParams::new(1.0, 0.1, G00, 0.0).unwrap();
    let m = classify_level0(&s, &ladder, &p).unwrap();
    let mut rng = RngSeed::new(5, 5).rng();
    let mut seen = [0usize; 2];
    for _ in 0..50 {
        let x: Vec<i64> = (0..3).map(|_| 8 * rng.random_range(0..4)).collect();
        let st = m.get(&x).unwrap();
        let good = naive_0a(&s, &x, 8, p.eta1);
        assert_eq!(st.a, if good { Status::Good } else { Status::Bad }, "x = {x:?}");
        let count = restrict(&s, &LatticeBox::new(x.clone(), 8, false)).unwrap().popcount() as f64;
        assert_eq!(st.b == Status::Good, count <= p.eta2 * 512.0);
        seen[good as usize] += 1;
    }
    // also at a smaller scale where both outcomes occur
    let ladder = build_ladder(2, 3, 0).unwrap();
    let m = classify_level0(&s, &ladder, &p).unwrap();
    for _ in 0..50 {
        let x: Vec<i64> = (0..3).map(|_| 3 * rng.random_range(0..10)).collect();
        let good = naive_0a(&s, &x, 3, p.eta1);
        assert_eq!(m.get(&x).unwrap().a == Status::Good, good, "x = {x:?}");
        seen[good as usize] += 1;
    }
    assert!(seen[0] > 0 && seen[1] > 0, "{seen:?}");
}

#[test]
fn insertions_are_monotone() {
    let mut s = embedded_range(16, 0.6, 3, -4, 24);
    let ladder = build_ladder(2, 4, 0).unwrap();
    let p = DensityParams::new(1.0, 0.1, G00, 0.0).unwrap();
    let mut before = classify_level0(&s, &ladder, &p).unwrap();
    let mut rng = RngSeed::new(8, 0).rng();
    let cells = s.geometry().cells();
    for round in 0..40 {
        for _ in 0..25 {
            s.insert(rng.random_range(0..cells));
        }
        let after = classify_level0(&s, &ladder, &p).unwrap();
        for (b, a) in before.status.iter().zip(&after.status) {
            assert!(!(b.a == Status::Good && a.a == Status::Bad), "round {round}");
            assert!(!(b.b == Status::Bad && a.b == Status::Good), "round {round}");
        }
        before = after;
    }
}

#[test]
fn assumption_b_matches_component_oracle() {
    let ladder = build_ladder(2, 2, 0).unwrap();
    let p = DensityParams::explicit(0.1, 1.0).unwrap();
    let mut outcomes = [0usize; 2];
    for root in 0..6u64 {
        let s = embedded_range(12, 0.35 + 0.1 * root as f64, root, -6, 24);
        let w = RenormWindow::shallow(&ladder, 0, 4, vec![0, 0, 0]).unwrap();
        let rep = check_assumptions(&s, &w, &ladder, &p).unwrap();
        let g = s.geometry();
        let core: Vec<Vec<i64>> =
            s.occupied().map(|c| g.point(c)).filter(|p| p.iter().all(|&x| (0..8).contains(&x))).collect();
        let mut oracle_ok = true;
        for x in &core {
            let lo: Vec<i64> = x.iter().map(|v| v - 4).collect();
            let ball = restrict(&s, &LatticeBox::new(lo, 9, false)).unwrap();
            let comps = connected_components(&ball);
            let comp = |p: &[i64]| comps.iter().position(|c| c.contains(ball.geometry().index_of_point(p).unwrap()));
            for y in &core {
                if x.iter().zip(y).all(|(a, b)| (a - b).abs() <= 2) && comp(x) != comp(y) {
                    oracle_ok = false;
                }
            }
        }
        assert_eq!(rep.b.holds, oracle_ok, "root {root}");
        outcomes[oracle_ok as usize] += 1;
    }
    assert!(outcomes[0] > 0 && outcomes[1] > 0, "{outcomes:?}");
}

#[test]
fn enlarged_cluster_contains_core() {
    let ladder = build_ladder(2, 2, 0).unwrap();
    let s = embedded_range(16, 1.0, 4, -8, 32);
    let w = RenormWindow::shallow(&ladder, 0, 4, vec![0, 0, 0]).unwrap();
    let c = enlarged_cluster(&s, &w).unwrap();
    assert!(c.cells.len() >= c.core_count);
    assert!(c.cells.iter().all(|x| s.get(x)));
    let p = DensityParams::explicit(0.1, 1.0).unwrap();
    let rep = check_assumptions(&s, &w, &ladder, &p).unwrap();
    if rep.b.holds && rep.c.holds {
        assert!(c.connected);
    }
}

#[test]
fn bad_frequency_decreases_with_u() {
    let ladder = build_ladder(2, 4, 0).unwrap();
    let p = DensityParams::explicit(0.01, 1.0).unwrap();
    let freq = |u: f64| {
        let cfg = TorusConfig::new(3, 16, u).unwrap();
        bad_density_experiment(&cfg, &ladder, &p, 0, 200, RngSeed::new(1, 0)).unwrap().levels[0].frequency
    };
    let f: Vec<f64> = [0.5, 1.0, 2.0].iter().map(|&u| freq(u)).collect();
    assert!(f[0] >= f[1] && f[1] >= f[2], "{f:?}");
    let cfg = TorusConfig::new(3, 16, 1.0).unwrap();
    let a = bad_density_experiment(&cfg, &ladder, &p, 0, 20, RngSeed::new(3, 0)).unwrap();
    let b = bad_density_experiment(&cfg, &ladder, &p, 0, 20, RngSeed::new(3, 0)).unwrap();
    assert_eq!(a, b);
    let small = TorusConfig::new(3, 8, 1.0).unwrap();
    assert!(bad_density_experiment(&small, &ladder, &p, 0, 1, RngSeed::new(0, 0)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn propagation_is_monotone(bits in proptest::collection::vec(any::<bool>(), 256), extra in proptest::collection::vec(0usize..256, 1..20)) {
        let ladder = build_ladder(2, 1, 2).unwrap();
        let mk = |bad: &dyn Fn(usize) -> bool| LevelMap {
            level: 0,
            spacing: 1,
            lo: vec![0, 0],
            extent: vec![16, 16],
            status: (0..256).map(|i| VertexStatus {
                a: if bad(i) { Status::Bad } else { Status::Good },
                b: Status::Good,
            }).collect(),
        };
        let small = propagate_badness(&mk(&|i| bits[i]), &ladder, 2).unwrap();
        let large = propagate_badness(&mk(&|i| bits[i] || extra.contains(&i)), &ladder, 2).unwrap();
        for (ms, ml) in small.levels.iter().zip(&large.levels) {
            for (a, b) in ms.status.iter().zip(&ml.status) {
                prop_assert!(!(a.a == Status::Bad && b.a != Status::Bad));
            }
        }
    }

    #[test]
    fn window_postconditions(d in 3usize..5, lambda in 1u64..6, l0 in 1u64..4, extra in 0u32..40) {
        let ladder = build_ladder(lambda, l0, 0).unwrap();
        let e = (d * d * d + 1) as u32;
        if let Some(base) = (l0 as u128).checked_pow(e).and_then(|v| v.checked_mul(7)) {
            let n = base.saturating_mul(1u128 << (extra % 20)).saturating_add(extra as u128);
            let w = select_window(d, n, &ladder).unwrap();
            prop_assert!(w.k >= w.scale.pow(e - 1));
            prop_assert!(7 * (w.k + 4) * w.scale <= 6 * n);
            prop_assert!(small_set_check(d, &w).unwrap().holds);
        }
    }
}
