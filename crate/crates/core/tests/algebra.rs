use holoflow::algebra::*;
use holoflow::scene::{BuiltScene, Scene};
use holoflow::tracing::CausalityDataset;
use holoflow::trajspace::build_graph;
use holoflow::Expr;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SCRIPTED: [&str; 5] = ["disk", "annulus", "two_holes", "three_holes", "four_holes"];

fn setup(name: &str, n: usize) -> (BuiltScene, CausalityDataset, SampleGrid) {
    let built = Scene::builtin(name).unwrap().build().unwrap();
    let d = built.sample().unwrap();
    let g = build_graph(&d).unwrap();
    let grid = SampleGrid::build(&built, &d, &g, n).unwrap();
    (built, d, grid)
}

#[test]
fn invariant_and_pullback_share_only_constants() {
    for name in SCRIPTED {
        let (_, _, grid) = setup(name, 30);
        let a = build_v_invariant_space(&grid, 12).unwrap();
        let b = build_f_pullback_space(&grid, 11);
        let r = intersection_dimension(&a, &b).unwrap();
        assert_eq!(r.dim, 1, "{name}: {:?}", &r.cosines[..3]);
        assert!(r.spectral_gap > 1e-4, "{name}: {}", r.spectral_gap);
    }
}

#[test]
fn residual_falls_with_rank() {
    for name in ["disk", "annulus"] {
        let (_, _, grid) = setup(name, 40);
        let a = build_v_invariant_space(&grid, 16).unwrap();
        let b = build_f_pullback_space(&grid, 15);
        let target = grid.evaluate(&Expr::parse("sin(x + 2*y)").unwrap());
        let res: Vec<f64> = [1, 2, 4, 8, 16]
            .iter()
            .map(|&r| tensor_approximation(&target, &a, &b, r).unwrap().residual)
            .collect();
        assert!(res.windows(2).all(|w| w[1] < w[0]), "{name}: {res:?}");
        assert!(res[4] < 1e-2, "{name}: {res:?}");
    }
}

#[test]
fn exact_product_is_recovered_at_rank_two() {
    let (_, _, grid) = setup("disk", 20);
    let a = build_v_invariant_space(&grid, 4).unwrap();
    let b = build_f_pullback_space(&grid, 3);
    // x * y lies in the span of {1, x} ⊗ {1, y}
    let target = grid.evaluate(&Expr::parse("3 + x*y - 2*y").unwrap());
    let fit = tensor_approximation(&target, &a, &b, 2).unwrap();
    assert!(fit.residual < 1e-10, "{}", fit.residual);
}

#[test]
fn invariant_products_stay_invariant() {
    let (_, _, grid) = setup("two_holes", 20);
    let a = build_v_invariant_space(&grid, 6).unwrap();
    let n = a.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| a.boundary.row(i).component_mul(&a.boundary.row(j)).iter().copied().collect())
        .collect();
    let products = FunctionSpace {
        kind: SpaceKind::VInvariant,
        names: (0..rows.len()).map(|k| k.to_string()).collect(),
        interior: DMatrix::zeros(rows.len(), 0),
        boundary: DMatrix::from_fn(rows.len(), grid.boundary.len(), |r, c| rows[r][c]),
    };
    let (spread, _, _) = products.fiber_spread(&grid);
    assert!(spread < 1e-8, "{spread}");
}

#[test]
fn invariant_space_ignores_conformal_factor() {
    let built = Scene::builtin("annulus").unwrap().build().unwrap();
    let mut scaled = built.clone();
    scaled.flow = built.flow.with_lambda(Expr::parse("1 + 0.5*sin(x)*cos(y)").unwrap());
    let space = |s: &BuiltScene| {
        let d = s.sample().unwrap();
        let g = build_graph(&d).unwrap();
        let grid = SampleGrid::build(s, &d, &g, 20).unwrap();
        build_v_invariant_space(&grid, 8).unwrap()
    };
    let (a, b) = (space(&built), space(&scaled));
    assert_eq!(a.names, b.names);
    assert!((&a.interior - &b.interior).amax() < 1e-6);
}

#[test]
fn invariants_separate_distinct_trajectories() {
    let (_, _, grid) = setup("annulus", 30);
    let a = build_v_invariant_space(&grid, 12).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = grid.interior.len();
    let mut tested = 0;
    while tested < 1000 {
        let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
        let (si, sj) = (&grid.interior[i], &grid.interior[j]);
        // distinct first events mean distinct trajectories
        if si.entry.curve == sj.entry.curve && (si.entry.t - sj.entry.t).abs() < 1e-6 {
            continue;
        }
        let diff = (a.interior.column(i) - a.interior.column(j)).amax();
        assert!(diff > 1e-9, "{:?} vs {:?}", si.p, sj.p);
        tested += 1;
    }
}

#[test]
fn a_space_meets_itself_fully() {
    let (_, _, grid) = setup("disk", 15);
    let a = build_v_invariant_space(&grid, 5).unwrap();
    let r = intersection_dimension(&a, &a).unwrap();
    assert_eq!(r.dim, a.numerical_rank());
}

#[test]
fn disjoint_supports_meet_trivially() {
    let n = 50;
    let s = |lo: usize| FunctionSpace {
        kind: SpaceKind::InteriorAll,
        names: vec!["a".into(), "b".into()],
        interior: DMatrix::from_fn(2, n, |r, c| {
            let inside = (lo..lo + 20).contains(&c);
            if !inside {
                0.0
            } else if r == 0 {
                1.0
            } else {
                c as f64
            }
        }),
        boundary: DMatrix::zeros(2, 0),
    };
    let r = intersection_dimension(&s(0), &s(25)).unwrap();
    assert_eq!(r.dim, 0);
}

#[test]
fn hf_is_skipped_on_split_range() {
    let built = Scene::builtin("range_split").unwrap().build().unwrap();
    let out = check_hf_boundary(&built.flow, &built.domain, 20, 10, 1).unwrap();
    assert!(matches!(out, HfOutcome::NotApplicable { components: 2 }), "{out:?}");
}

#[test]
fn hf_holds_on_the_disk() {
    let built = Scene::builtin("four_holes").unwrap().build().unwrap();
    let out = check_hf_boundary(&built.flow, &built.domain, 40, 50, 2).unwrap();
    assert!(matches!(out, HfOutcome::Verified { .. }), "{out:?}");
}

#[test]
fn conjecture_accepts_first_integral_functions() {
    let (built, d, grid) = setup("annulus", 20);
    let strata = built.strata().unwrap();
    let tracer = built.tracer();
    let e = Expr::parse("cos(2*x) + x^3").unwrap();
    let r = conjecture_probe("cos(2x)+x^3", &tracer, &d, &strata, &grid, &boundary_function(&e)).unwrap();
    assert!(r.fiber_constant, "{}", r.fiber_spread);
    assert!(r.jets.iter().all(|j| j.consistent), "{:?}", r.jets);
    assert!(r.in_m_cv);
}

#[test]
fn conjecture_rejects_non_invariant_functions() {
    let (built, d, grid) = setup("disk", 10);
    let strata = built.strata().unwrap();
    let tracer = built.tracer();
    let e = Expr::parse("y").unwrap();
    let r = conjecture_probe("y", &tracer, &d, &strata, &grid, &boundary_function(&e)).unwrap();
    assert!(!r.fiber_constant);
    assert!(!r.in_m_cv);
}

#[test]
fn fuzzed_candidates_are_members() {
    let (built, d, grid) = setup("disk", 10);
    let strata = built.strata().unwrap();
    let tracer = built.tracer();
    for c in fuzz_candidates(&built.flow, grid.u_range, 9, 3).unwrap() {
        let e = Expr::parse(&c.psi).unwrap();
        let r = conjecture_probe(&c.psi, &tracer, &d, &strata, &grid, &boundary_function(&e)).unwrap();
        assert!(r.in_m_cv, "{}: {r:?}", c.psi);
    }
}
