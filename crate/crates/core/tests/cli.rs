use std::path::Path;
use std::process::{Command, Output};

use holoflow::holography::BoundaryMap;
use holoflow::report::RunReport;
use holoflow::scene::Scene;
use holoflow::tracing::CausalityDataset;

fn holoflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_holoflow"))
        .args(args)
        .env("HOLOFLOW_THREADS", "2")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn report(dir: &Path) -> RunReport {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn disk_pipeline_passes_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let o = holoflow(&["run", "disk", "--out", path(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(dir.path());
    assert!(r.passed());
    let truth = r.reconstruction.unwrap();
    assert_eq!(truth.reconstructed.chi, 1);
    assert_eq!(truth.reconstructed.boundary_components, 1);
    for f in ["dataset.json", "graph.json", "boundary.json", "timings.json", "domain.svg", "causality.svg", "graph.svg", "alpha.svg"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn four_hole_graph_has_valences_one_and_three() {
    let dir = tempfile::tempdir().unwrap();
    let o = holoflow(&["run", "four_holes", "--stages", "graph", "--out", path(dir.path())]);
    assert_eq!(code(&o), 0);
    let g = report(dir.path()).graph.unwrap();
    assert_eq!(g.invariants.valence_histogram.keys().copied().collect::<Vec<_>>(), vec![1, 3]);
    assert_eq!(g.invariants.chi, -3);
}

#[test]
fn malformed_scene_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.toml");
    let text = Scene::builtin("disk").unwrap().to_toml().replace("[flow]", "[flow]\nspeed = 2");
    std::fs::write(&file, text).unwrap();
    let o = holoflow(&["run", path(&file)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("speed"));
    assert_eq!(code(&holoflow(&["run", "disk", "--stages", "bulk"])), 2);
}

#[test]
fn runs_are_deterministic_and_datasets_round_trip() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        assert_eq!(code(&holoflow(&["run", "annulus", "--stages", "holography", "--out", path(d.path())])), 0);
    }
    for f in ["dataset.json", "report.json", "boundary.json"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs between runs");
    }
    let original = std::fs::read_to_string(a.path().join("dataset.json")).unwrap();
    let again = CausalityDataset::from_json(&original).unwrap().to_json();
    assert_eq!(original, again);
}

#[test]
fn verify_monotone_and_tampering() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&holoflow(&["run", "disk", "--stages", "causality", "--out", path(dir.path())])), 0);
    let file = dir.path().join("dataset.json");
    for p in ["monotone", "quotient", "propertyA"] {
        let o = holoflow(&["verify", path(&file), "--property", p]);
        assert_eq!(code(&o), 0, "{p}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let mut d = CausalityDataset::load(&file).unwrap();
    let k = d.samples.iter().position(|s| !s.is_fixed()).unwrap() + 3;
    let s = &mut d.samples[k];
    std::mem::swap(&mut s.f_source, &mut s.f_target);
    let tampered = dir.path().join("tampered.json");
    d.save(&tampered).unwrap();
    let o = holoflow(&["verify", path(&tampered), "--property", "monotone"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains(&format!("record {k}")));
}

#[test]
fn verify_rejects_unknown_versions() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&holoflow(&["run", "disk", "--stages", "causality", "--out", path(dir.path())])), 0);
    let text = std::fs::read_to_string(dir.path().join("dataset.json")).unwrap();
    let file = dir.path().join("future.json");
    std::fs::write(&file, text.replacen("\"schema_version\": 1", "\"schema_version\": 99", 1)).unwrap();
    let o = holoflow(&["verify", path(&file), "--property", "monotone"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("99"));
}

#[test]
fn verify_conformal_against_rescaled_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let mut scene = Scene::builtin("four_holes").unwrap();
    scene.flow.lambda = Some("1 + 0.5*sin(x)*cos(y)".into());
    let file = dir.path().join("scaled.toml");
    std::fs::write(&file, scene.to_toml()).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&holoflow(&["run", "four_holes", "--stages", "causality", "--out", path(&a)])), 0);
    assert_eq!(code(&holoflow(&["run", path(&file), "--stages", "causality", "--out", path(&b)])), 0);
    let o = holoflow(&[
        "verify",
        path(&a.join("dataset.json")),
        "--property",
        "conformal",
        "--against",
        path(&b.join("dataset.json")),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = holoflow(&["verify", path(&a.join("dataset.json")), "--property", "conformal"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn compare_accepts_identity_and_rejects_shuffles() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("phi.json");
    let o = holoflow(&["compare", "disk", "disk", "--map", "identity", "--grid", "12", "--out", path(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.exists());
    let map = dir.path().join("shuffled.json");
    std::fs::write(&map, serde_json::to_string(&BoundaryMap::shuffled(1, 256, 4)).unwrap()).unwrap();
    let o = holoflow(&["compare", "disk", "disk", "--map", path(&map), "--grid", "12"]);
    assert_eq!(code(&o), 1);
    let o = holoflow(&["compare", "disk", "disk", "--map", path(&dir.path().join("missing.json"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn fuzz_writes_a_replayable_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    for f in [&a, &b] {
        let o = holoflow(&["fuzz-conjecture", "annulus", "--seed", "3", "--count", "2", "--out", path(f)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(code(&holoflow(&["fuzz-conjecture", "range_split", "--count", "1"])), 2);
}
