use holoflow::holography::*;
use holoflow::scene::Scene;
use holoflow::tracing::{TraceConfig, Tracer};
use holoflow::trajspace::GraphLocation;
use holoflow::{Expr, Point};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SCRIPTED: [&str; 5] = ["disk", "annulus", "two_holes", "three_holes", "four_holes"];

#[test]
fn boundary_only_reconstruction_matches_truth() {
    for name in SCRIPTED {
        let built = Scene::builtin(name).unwrap().build().unwrap();
        let bd = extract_boundary_data(&built.sample().unwrap());
        // only the serialized boundary data reaches the model
        let reloaded = BoundaryData::from_json(&bd.to_json()).unwrap();
        assert_eq!(reloaded, bd);
        let model = build_alpha_model(&reloaded).unwrap();
        let report = compare_with_truth(&built.domain, &model).unwrap();
        assert!(report.passed(), "{name}: {report:?}");
    }
}

#[test]
fn four_hole_data_pairs_across_circles() {
    let built = Scene::builtin("four_holes").unwrap().build().unwrap();
    let bd = extract_boundary_data(&built.sample().unwrap());
    assert_eq!(bd.circle_lengths.len(), 5);
    assert!(bd.pairing.iter().any(|s| s.source.curve != s.target.curve));
}

#[test]
fn edge_intervals_are_fiber_extremes() {
    let built = Scene::builtin("two_holes").unwrap().build().unwrap();
    let bd = extract_boundary_data(&built.sample().unwrap());
    let model = build_alpha_model(&bd).unwrap();
    for s in bd.pairing.iter().filter(|s| !s.at_tangency) {
        let Ok(loc) = model.graph.project(&s.fiber, &bd.circle_lengths) else { continue };
        if let GraphLocation::Edge { .. } = loc {
            let lo = s.fiber.iter().map(|e| e.f).fold(f64::INFINITY, f64::min);
            let hi = s.fiber.iter().map(|e| e.f).fold(f64::NEG_INFINITY, f64::max);
            let iv = model.interval(loc);
            assert!((iv[0] - lo).abs() <= 1e-8 && (iv[1] - hi).abs() <= 1e-8, "{iv:?} vs {lo} {hi}");
        }
    }
    for (v, iv) in model.graph.vertices.iter().zip(&model.vertex_intervals) {
        let lo = v.fiber.iter().map(|e| e.f).fold(f64::INFINITY, f64::min);
        let hi = v.fiber.iter().map(|e| e.f).fold(f64::NEG_INFINITY, f64::max);
        assert!((iv[0] - lo).abs() <= 1e-8 && (iv[1] - hi).abs() <= 1e-8);
    }
}

#[test]
fn conformal_self_pair_extends_to_identity() {
    let built = Scene::builtin("two_holes").unwrap().build().unwrap();
    let mut scaled = built.clone();
    scaled.flow = built.flow.with_lambda(Expr::parse("1 + 0.5*sin(x)*cos(y)").unwrap());
    let d1 = built.sample().unwrap();
    let d2 = scaled.sample().unwrap();
    let phi = BoundaryMap::identity(built.domain.curve_count(), 1024);
    let map = extend_boundary_map(&built, &d1, &scaled, &d2, &phi, 50).unwrap();
    assert!(map.samples.len() > 500);
    assert!(map.max_error(|p| p) < 1e-6);
    assert!(map.level_error() < 1e-9);
    assert!(map.collisions(1e-9).is_empty());
    let g = holoflow::trajspace::build_graph(&d1).unwrap();
    for s in &map.samples {
        assert!(g.same_location(s.location, s.image_location, 1e-4));
    }
}

#[test]
fn rotated_pair_extends_to_the_rotation() {
    let angle = 0.7;
    let built = Scene::builtin("annulus").unwrap().build().unwrap();
    let (rot, shifts) = built.rotated(angle).unwrap();
    let d1 = built.sample().unwrap();
    let d2 = rot.sample().unwrap();
    let phi = BoundaryMap::shifted(&shifts, 4096);
    let map = extend_boundary_map(&built, &d1, &rot, &d2, &phi, 30).unwrap();
    let r = nalgebra::Rotation2::new(angle);
    assert!(map.max_error(|p| r * p) < 1e-5);
}

#[test]
fn shuffled_map_is_rejected() {
    let built = Scene::builtin("disk").unwrap().build().unwrap();
    let d = built.sample().unwrap();
    let phi = BoundaryMap::shuffled(1, 256, 3);
    let err = extend_boundary_map(&built, &d, &built, &d, &phi, 10).unwrap_err();
    assert!(matches!(err, HolographyError::CommutationViolation { .. }), "{err}");
}

#[test]
fn level_meets_trajectory_iff_in_interval() {
    let built = Scene::builtin("annulus").unwrap().build().unwrap();
    let config = TraceConfig {
        record_polyline: true,
        ..built.trace_config()
    };
    let tracer = Tracer::new(&built.domain, &built.flow, config);
    let bd = extract_boundary_data(&built.sample().unwrap());
    let generic: Vec<_> = bd.pairing.iter().filter(|s| !s.at_tangency).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let s = generic[rng.gen_range(0..generic.len())];
        let traj = tracer.fiber(s.source).unwrap();
        let lo = s.fiber.first().unwrap().f;
        let hi = s.fiber.last().unwrap().f;
        let c = rng.gen_range(-2.5..2.5);
        let meets = traj.polyline.windows(2).any(|w| {
            let (a, b) = (built.flow.f_value(w[0]) - c, built.flow.f_value(w[1]) - c);
            a * b <= 0.0
        });
        assert_eq!(meets, c >= lo && c <= hi, "c = {c}, [{lo}, {hi}]");
    }
}

#[test]
fn rotation_helper_keeps_flow_conjugate() {
    let built = Scene::builtin("disk").unwrap().build().unwrap();
    let (rot, _) = built.rotated(1.1).unwrap();
    let r = nalgebra::Rotation2::new(1.1);
    let p = Point::new(0.3, -0.2);
    assert!((rot.flow.velocity(r * p) - r * built.flow.velocity(p)).norm() < 1e-12);
    assert!((rot.flow.f_value(r * p) - built.flow.f_value(p)).abs() < 1e-12);
}
