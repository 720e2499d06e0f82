use std::collections::BTreeMap;

use holoflow::scene::Scene;
use holoflow::tracing::{CausalityDataset, Direction, SamplingConfig};
use holoflow::trajspace::{build_graph, fiber_events, gamma_project, GraphLocation, TrajectoryGraph};
use holoflow::{BoundaryPoint, Expr};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn graph_of(name: &str) -> (CausalityDataset, TrajectoryGraph) {
    let built = Scene::builtin(name).unwrap().build().unwrap();
    let d = built.sample().unwrap();
    let g = build_graph(&d).unwrap();
    (d, g)
}

#[test]
fn chi_matches_hole_count() {
    for name in ["disk", "annulus", "two_holes", "three_holes", "four_holes", "ellipse", "range_split"] {
        let scene = Scene::builtin(name).unwrap();
        let holes = scene.domain.holes.len() as i64;
        let (_, g) = graph_of(name);
        let inv = g.invariants();
        assert_eq!(inv.chi, 1 - holes, "{name}");
        assert_eq!(inv.components, 1, "{name}");
        assert!(inv.valence_histogram.keys().all(|v| *v == 1 || *v == 3), "{name}");
    }
}

#[test]
fn four_hole_histogram() {
    let (_, g) = graph_of("four_holes");
    let inv = g.invariants();
    assert_eq!(inv.valence_histogram, BTreeMap::from([(1, 2), (3, 8)]));
    assert_eq!(inv.chi, -3);
}

#[test]
fn radial_flow_gives_a_circle() {
    let (_, g) = graph_of("range_split");
    assert!(g.vertices.is_empty());
    assert_eq!(g.edges.len(), 1);
    assert!(g.edges[0].is_loop());
}

#[test]
fn doubling_density_keeps_the_graph() {
    for name in ["annulus", "three_holes"] {
        let built = Scene::builtin(name).unwrap().build().unwrap();
        let base = built.sampling_config();
        let a = build_graph(&built.sample_with(&base).unwrap()).unwrap();
        let b = build_graph(&built.sample_with(&SamplingConfig::with_density(2.0 * base.density)).unwrap()).unwrap();
        assert_eq!(a.vertices.len(), b.vertices.len());
        assert_eq!(a.edges.len(), b.edges.len());
        assert_eq!(a.invariants(), b.invariants());
    }
}

#[test]
fn conformal_rescaling_gives_isomorphic_graph() {
    let built = Scene::builtin("two_holes").unwrap().build().unwrap();
    let mut scaled = built.clone();
    scaled.flow = built.flow.with_lambda(Expr::parse("2 + sin(3*x) * cos(y)").unwrap());
    let a = build_graph(&built.sample().unwrap()).unwrap();
    let b = build_graph(&scaled.sample().unwrap()).unwrap();
    assert_eq!(a.invariants(), b.invariants());
    let mut sa: Vec<_> = a.edges.iter().map(|e| e.signature.clone()).collect();
    let mut sb: Vec<_> = b.edges.iter().map(|e| e.signature.clone()).collect();
    sa.sort();
    sb.sort();
    assert_eq!(sa, sb);
}

#[test]
fn points_of_one_fiber_project_together() {
    let built = Scene::builtin("three_holes").unwrap().build().unwrap();
    let d = built.sample().unwrap();
    let g = build_graph(&d).unwrap();
    let tracer = built.tracer();
    let positive: Vec<_> = d.samples.iter().filter(|s| !s.at_tangency).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let s = positive[rng.gen_range(0..positive.len())];
        let e = s.fiber[rng.gen_range(0..s.fiber.len())];
        let other = tracer.fiber(BoundaryPoint::new(e.curve, e.t)).unwrap();
        let here = gamma_project(&g, &d, &s.fiber).unwrap();
        let there = gamma_project(&g, &d, &fiber_events(&other)).unwrap();
        assert!(g.same_location(here, there, 1e-4), "{here:?} vs {there:?}");
    }
}

#[test]
fn interior_point_projects_into_the_disk_edge() {
    let built = Scene::builtin("disk").unwrap().build().unwrap();
    let d = built.sample().unwrap();
    let g = build_graph(&d).unwrap();
    let tracer = built.tracer();
    let origin = tracer.fiber_of_point(holoflow::Point::new(0.0, 0.0)).unwrap();
    let loc = gamma_project(&g, &d, &fiber_events(&origin)).unwrap();
    match loc {
        GraphLocation::Edge { edge: 0, coordinate } => assert!((coordinate - 0.5).abs() < 1e-3),
        other => panic!("{other:?}"),
    }
    let left = tracer.trace(BoundaryPoint::new(0, 0.5), Direction::Forward).unwrap();
    assert!(matches!(gamma_project(&g, &d, &fiber_events(&left)).unwrap(), GraphLocation::Vertex(_)));
}
