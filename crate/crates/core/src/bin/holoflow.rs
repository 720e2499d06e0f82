use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use holoflow::algebra::{self, AlgebraError, SampleGrid};
use holoflow::holography::{self, BoundaryMap, HolographyError};
use holoflow::report::{run_scene, RunError, Stage};
use holoflow::scene::Scene;
use holoflow::tracing::{self, CausalityDataset};
use holoflow::trajspace::build_graph;
use holoflow::Expr;

const CONFORMAL_TOLERANCE: f64 = 1e-6;
const THREADS_VAR: &str = "HOLOFLOW_THREADS";

#[derive(Parser)]
#[command(name = "holoflow", version, about = "Traversing flows on planar domains with holes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline on a built-in scene name or a scene file.
    Run {
        scene: String,
        /// Comma-separated subset of strata,causality,graph,holography,algebra.
        #[arg(long, value_delimiter = ',')]
        stages: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-check a stored dataset without tracing.
    Verify {
        dataset: PathBuf,
        #[arg(long, value_enum)]
        property: Property,
        /// Second dataset for the conformal comparison.
        #[arg(long)]
        against: Option<PathBuf>,
    },
    /// Extend a boundary map between two scenes to their interiors.
    Compare {
        scene1: String,
        scene2: String,
        /// JSON boundary map, or `identity`.
        #[arg(long)]
        map: String,
        #[arg(long)]
        grid: Option<usize>,
        /// Where to write the sampled interior map.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Probe random candidate boundary functions for the extension question.
    FuzzConjecture {
        scene: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        count: usize,
        /// Where to write the candidate corpus and reports.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Property {
    Conformal,
    Monotone,
    #[value(name = "propertyA")]
    PropertyA,
    Quotient,
}

enum Failure {
    Check(String),
    Input(String),
}

impl Failure {
    fn input(e: impl std::fmt::Display) -> Self {
        Failure::Input(e.to_string())
    }
}

fn main() -> ExitCode {
    if let Some(n) = std::env::var(THREADS_VAR).ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { scene, stages, out } => run(&scene, &stages, out.as_deref()),
        Command::Verify {
            dataset,
            property,
            against,
        } => verify(&dataset, property, against.as_deref()),
        Command::Compare {
            scene1,
            scene2,
            map,
            grid,
            out,
        } => compare(&scene1, &scene2, &map, grid, out.as_deref()),
        Command::FuzzConjecture { scene, seed, count, out } => fuzz(&scene, seed, count, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("FAIL: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load_scene(spec: &str) -> Result<Scene, Failure> {
    Scene::resolve(spec).map_err(|e| Failure::Input(format!("{spec}: {e}")))
}

fn print_json(value: &impl Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("output serializes"));
}

fn run(spec: &str, stages: &[String], out: Option<&Path>) -> Result<(), Failure> {
    let scene = load_scene(spec)?;
    let stages = if stages.is_empty() {
        Stage::ALL.to_vec()
    } else {
        stages
            .iter()
            .map(|s| Stage::parse(s).ok_or_else(|| Failure::Input(format!("unknown stage `{s}`"))))
            .collect::<Result<Vec<_>, _>>()?
    };
    let output = run_scene(&scene, &stages, out).map_err(|e| match e {
        RunError::Scene { .. } => Failure::input(e),
        other => Failure::Check(other.to_string()),
    })?;
    for c in &output.report.checks {
        println!("{} {:<24} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value);
    }
    if output.report.passed() {
        Ok(())
    } else {
        Err(Failure::Check(format!("scene `{}` failed checks", scene.name)))
    }
}

fn load_dataset(path: &Path) -> Result<CausalityDataset, Failure> {
    CausalityDataset::load(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn verify(path: &Path, property: Property, against: Option<&Path>) -> Result<(), Failure> {
    let d = load_dataset(path)?;
    let violations = match property {
        Property::Monotone => tracing::check_monotone(&d),
        Property::Quotient => tracing::check_quotient(&d),
        Property::PropertyA => tracing::check_property_a(&d).violations,
        Property::Conformal => {
            let other = against.ok_or_else(|| Failure::Input("conformal needs --against <dataset>".into()))?;
            let b = load_dataset(other)?;
            let r = tracing::compare_causality(&d, &b);
            print_json(&r);
            if r.matched == 0 {
                return Err(Failure::Check("no samples in common".into()));
            }
            if r.max_discrepancy >= CONFORMAL_TOLERANCE {
                return Err(Failure::Check(format!(
                    "record {}: discrepancy {:e} exceeds {CONFORMAL_TOLERANCE:e}",
                    r.worst_index.unwrap_or(0),
                    r.max_discrepancy
                )));
            }
            return Ok(());
        }
    };
    print_json(&violations);
    match violations.first() {
        None => Ok(()),
        Some(v) => Err(Failure::Check(format!("record {}: {}", v.index, v.reason))),
    }
}

fn compare(spec1: &str, spec2: &str, map: &str, grid: Option<usize>, out: Option<&Path>) -> Result<(), Failure> {
    let s1 = load_scene(spec1)?.build().map_err(Failure::input)?;
    let s2 = load_scene(spec2)?.build().map_err(Failure::input)?;
    let phi = if map == "identity" {
        BoundaryMap::identity(s1.domain.curve_count(), 1024)
    } else {
        let text = std::fs::read_to_string(map).map_err(|e| Failure::Input(format!("{map}: {e}")))?;
        serde_json::from_str(&text).map_err(|e| Failure::Input(format!("{map}: {e}")))?
    };
    let d1 = s1.sample().map_err(|e| Failure::Check(e.to_string()))?;
    let d2 = s2.sample().map_err(|e| Failure::Check(e.to_string()))?;
    let n = grid.unwrap_or(s1.scene.sampling.interior_grid);
    let result = holography::extend_boundary_map(&s1, &d1, &s2, &d2, &phi, n).map_err(|e| match e {
        HolographyError::Malformed(_) => Failure::input(e),
        other => Failure::Check(other.to_string()),
    })?;
    let collisions = result.collisions(1e-9);
    println!(
        "samples {} level error {:.3e} collisions {}",
        result.samples.len(),
        result.level_error(),
        collisions.len()
    );
    if let Some(path) = out {
        std::fs::write(path, serde_json::to_string_pretty(&result).expect("map serializes")).map_err(Failure::input)?;
    }
    if collisions.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(format!("{} grid points share an image", collisions.len())))
    }
}

#[derive(Serialize)]
struct FuzzEntry {
    candidate: algebra::FuzzCandidate,
    report: algebra::ConjectureReport,
}

fn fuzz(spec: &str, seed: u64, count: usize, out: Option<&Path>) -> Result<(), Failure> {
    let built = load_scene(spec)?.build().map_err(Failure::input)?;
    let strata = built.strata().map_err(|e| Failure::Check(e.to_string()))?;
    let d = built.sample().map_err(|e| Failure::Check(e.to_string()))?;
    let g = build_graph(&d).map_err(|e| Failure::Check(e.to_string()))?;
    let grid = SampleGrid::build(&built, &d, &g, built.scene.sampling.interior_grid).map_err(|e| Failure::Check(e.to_string()))?;
    let candidates = algebra::fuzz_candidates(&built.flow, grid.u_range, seed, count).map_err(|e| match e {
        AlgebraError::NoFirstIntegral => Failure::input(e),
        other => Failure::Check(other.to_string()),
    })?;
    let tracer = built.tracer();
    let mut corpus = Vec::new();
    for c in candidates {
        let e = Expr::parse(&c.psi).map_err(|e| Failure::Check(e.to_string()))?;
        let report = algebra::conjecture_probe(&c.psi, &tracer, &d, &strata, &grid, &algebra::boundary_function(&e))
            .map_err(|e| Failure::Check(e.to_string()))?;
        println!(
            "{:>3} member {} smoothness {:.3e}{}",
            c.index,
            report.in_m_cv,
            report.extension_smoothness_score,
            if report.flagged { " flagged" } else { "" }
        );
        corpus.push(FuzzEntry { candidate: c, report });
    }
    if let Some(path) = out {
        std::fs::write(path, serde_json::to_string_pretty(&corpus).expect("corpus serializes")).map_err(Failure::input)?;
    }
    match corpus.iter().find(|e| !e.report.in_m_cv) {
        None => Ok(()),
        Some(e) => Err(Failure::Check(format!("candidate {} is not a member", e.candidate.index))),
    }
}
