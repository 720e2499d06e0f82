use std::sync::OnceLock;

use holoflow::flowfield::{morse_stratify, TangencyKind};
use holoflow::geometry::{param_distance, Location};
use holoflow::scene::{BuiltScene, Scene, BUILTIN_SCENES};
use holoflow::tracing::{EventKind, SamplingConfig, Tracer};
use holoflow::{BoundaryPoint, Expr, Point};
use proptest::prelude::*;

fn scenes() -> &'static Vec<BuiltScene> {
    static SCENES: OnceLock<Vec<BuiltScene>> = OnceLock::new();
    SCENES.get_or_init(|| {
        BUILTIN_SCENES
            .iter()
            .map(|n| Scene::builtin(n).unwrap().build().unwrap())
            .collect()
    })
}

fn scripted() -> impl Iterator<Item = &'static BuiltScene> {
    scenes()
        .iter()
        .filter(|s| ["disk", "annulus", "two_holes", "three_holes", "four_holes"].contains(&s.scene.name.as_str()))
}

/// Even-odd ray casting toward +x.
fn ray_cast(poly: &[Point], p: Point) -> bool {
    let mut inside = false;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if x > p.x {
                inside = !inside;
            }
        }
    }
    inside
}

fn lambda(a: f64, b: f64, c: f64) -> Expr {
    Expr::parse(&format!("1 + {a} * sin({b} * x) * cos({c} * y)")).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn winding_agrees_with_ray_casting(k in 0usize..7, u in 0.0f64..1.0, v in 0.0f64..1.0) {
        let s = &scenes()[k % scenes().len()];
        let (lo, hi) = s.domain.bounding_box();
        let p = Point::new(lo.x + u * (hi.x - lo.x), lo.y + v * (hi.y - lo.y));
        for id in 0..s.domain.curve_count() {
            let poly = s.domain.polyline(id);
            prop_assert_eq!(s.domain.winding_number(id, p) != 0, ray_cast(poly, p));
        }
    }

    #[test]
    fn stepping_along_the_normal_crosses_the_boundary(k in 0usize..7, c in 0usize..5, t in 0.0f64..1.0) {
        let s = &scenes()[k % scenes().len()];
        let b = BoundaryPoint::new(c % s.domain.curve_count(), t);
        let frame = s.domain.boundary_frame(b);
        let delta = (0.5 * s.domain.ambient_margin()).min(0.02);
        let inward = s.domain.locate(frame.position + delta * frame.inward_normal);
        let outward = s.domain.locate(frame.position - delta * frame.inward_normal);
        prop_assert_eq!(inward, Location::Interior);
        prop_assert_eq!(outward, Location::Exterior);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conformal_factor_keeps_strata(k in 0usize..7, a in -0.9f64..0.9, b in 0.0f64..3.0, c in 0.0f64..3.0) {
        let s = &scenes()[k % scenes().len()];
        let tol = s.scene.flow.refine_tolerance;
        let base = s.strata().unwrap();
        let scaled = morse_stratify(&s.domain, &s.flow.with_lambda(lambda(a, b, c)), tol).unwrap();
        prop_assert_eq!(base.tangency_points.len(), scaled.tangency_points.len());
        for (x, y) in base.tangency_points.iter().zip(&scaled.tangency_points) {
            prop_assert_eq!(x.point.curve, y.point.curve);
            prop_assert!(param_distance(x.point.t, y.point.t) <= tol);
            prop_assert_eq!(x.kind, y.kind);
        }
        prop_assert_eq!(base.positive_arcs.len(), scaled.positive_arcs.len());
        prop_assert_eq!(base.negative_arcs.len(), scaled.negative_arcs.len());
    }

    #[test]
    fn causality_ignores_conformal_factor(k in 0usize..5, c in 0usize..5, t in 0.0f64..1.0, a in -0.9f64..0.9, b in 0.0f64..3.0, w in 0.0f64..3.0) {
        let s = scripted().nth(k).unwrap();
        let strata = s.strata().unwrap();
        let x = BoundaryPoint::new(c % s.domain.curve_count(), t);
        prop_assume!(strata.is_positive(x));
        let scaled = s.flow.with_lambda(lambda(a, b, w));
        let t1 = s.tracer().causality(x).unwrap();
        let t2 = Tracer::new(&s.domain, &scaled, s.trace_config()).causality(x).unwrap();
        prop_assert_eq!(t1.point.curve, t2.point.curve);
        prop_assert!(param_distance(t1.point.t, t2.point.t) < 1e-6);
    }

    #[test]
    fn causality_raises_f(k in 0usize..7, c in 0usize..5, t in 0.0f64..1.0) {
        let s = &scenes()[k % scenes().len()];
        let strata = s.strata().unwrap();
        let x = BoundaryPoint::new(c % s.domain.curve_count(), t);
        prop_assume!(strata.is_positive(x));
        let y = s.tracer().causality(x).unwrap();
        if y.point != x {
            let f = |b: BoundaryPoint| s.flow.f_value(s.domain.position(b));
            prop_assert!(f(y.point) > f(x));
        }
    }

    #[test]
    fn fiber_is_the_same_from_each_of_its_points(k in 0usize..5, c in 0usize..5, t in 0.0f64..1.0) {
        let s = scripted().nth(k).unwrap();
        let x = BoundaryPoint::new(c % s.domain.curve_count(), t);
        let tracer = s.tracer();
        let here = tracer.fiber(x).unwrap();
        for e in &here.events {
            let there = tracer.fiber(e.point).unwrap();
            prop_assert_eq!(here.events.len(), there.events.len());
            for (a, b) in here.events.iter().zip(&there.events) {
                prop_assert_eq!(a.point.curve, b.point.curve);
                prop_assert!(param_distance(a.point.t, b.point.t) < 1e-7);
            }
        }
    }

    #[test]
    fn reversed_flow_inverts_causality(k in 0usize..5, c in 0usize..5, t in 0.0f64..1.0) {
        let s = scripted().nth(k).unwrap();
        let strata = s.strata().unwrap();
        let x = BoundaryPoint::new(c % s.domain.curve_count(), t);
        prop_assume!(strata.is_positive(x));
        let y = s.tracer().causality(x).unwrap();
        prop_assume!(y.point != x && y.kind == EventKind::Exit);
        let back = s.flow.reversed();
        let z = Tracer::new(&s.domain, &back, s.trace_config()).causality(y.point).unwrap();
        prop_assert_eq!(z.point.curve, x.curve);
        prop_assert!(param_distance(z.point.t, x.t) < 1e-7);
    }
}

#[test]
fn strata_partition_each_curve() {
    for s in scenes() {
        let strata = s.strata().unwrap();
        for id in 0..s.domain.curve_count() {
            let width: f64 = strata
                .positive_arcs
                .iter()
                .chain(&strata.negative_arcs)
                .filter(|a| a.curve == id)
                .map(|a| a.width())
                .sum();
            assert!((width - 1.0).abs() < s.scene.flow.refine_tolerance, "{} curve {id}: {width}", s.scene.name);
        }
    }
}

#[test]
fn tangency_kind_matches_fiber_size() {
    for s in scenes() {
        let tracer = s.tracer();
        for t in &s.strata().unwrap().tangency_points {
            let n = tracer.fiber(t.point).unwrap().events.len();
            match t.kind {
                TangencyKind::External => assert_eq!(n, 1, "{}", s.scene.name),
                TangencyKind::Internal => assert!(n >= 2, "{}", s.scene.name),
            }
        }
    }
}

#[test]
fn generic_fibers_dominate_as_density_grows() {
    let s = scripted().nth(4).unwrap();
    let fraction = |density: f64| {
        let d = s.sample_with(&SamplingConfig::with_density(density)).unwrap();
        let hist = d.cardinality_histogram();
        assert!(hist.keys().all(|&k| k <= 3));
        hist.get(&2).copied().unwrap_or(0) as f64 / d.samples.len() as f64
    };
    let (a, b) = (fraction(50.0), fraction(200.0));
    assert!(b >= a, "{a} then {b}");
}

#[test]
fn residual_does_not_grow_with_degree() {
    use holoflow::algebra::*;
    let s = scripted().next().unwrap();
    let d = s.sample().unwrap();
    let g = holoflow::trajspace::build_graph(&d).unwrap();
    let grid = SampleGrid::build(s, &d, &g, 24).unwrap();
    let target = grid.evaluate(&Expr::parse("exp(x) * cos(y)").unwrap());
    let a = build_v_invariant_space(&grid, 10).unwrap();
    let mut last = f64::INFINITY;
    for degree in 1..8 {
        let b = build_f_pullback_space(&grid, degree);
        let r = tensor_approximation(&target, &a, &b, 10).unwrap().residual;
        assert!(r <= last * (1.0 + 1e-12), "degree {degree}: {r} after {last}");
        last = r;
    }
}
