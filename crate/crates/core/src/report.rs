//! Pipeline orchestration for a scene, the run report, and the artifacts
//! written next to it.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{self, AlgebraError, HfOutcome, SampleGrid};
use crate::expr::Expr;
use crate::flowfield::{FlowError, MorseStrata, TangencyKind};
use crate::holography::{self, AlphaModel, HolographyError, TruthReport};
use crate::scene::{BuiltScene, PipelineError, Scene, SceneError};
use crate::svg;
use crate::tracing::{self, CausalityDataset, DatasetError, Direction, TraceConfig, Tracer};
use crate::trajspace::{build_graph, GraphError, GraphInvariants, TrajectoryGraph};
use crate::BoundaryPoint;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Strata,
    Causality,
    Graph,
    Holography,
    Algebra,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Strata, Stage::Causality, Stage::Graph, Stage::Holography, Stage::Algebra];

    pub fn parse(s: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|st| st.name() == s)
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Strata => "strata",
            Stage::Causality => "causality",
            Stage::Graph => "graph",
            Stage::Holography => "holography",
            Stage::Algebra => "algebra",
        }
    }

    fn requires(self) -> &'static [Stage] {
        match self {
            Stage::Strata => &[],
            Stage::Causality => &[Stage::Strata],
            Stage::Graph => &[Stage::Strata, Stage::Causality],
            Stage::Holography => &[Stage::Strata, Stage::Causality],
            Stage::Algebra => &[Stage::Strata, Stage::Causality, Stage::Graph],
        }
    }

    /// The requested stages with their prerequisites, in execution order.
    pub fn closure(requested: &[Stage]) -> Vec<Stage> {
        let mut out: Vec<Stage> = requested.iter().flat_map(|s| s.requires().iter().copied().chain([*s])).collect();
        out.sort();
        out.dedup();
        out
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("scene `{scene}`: {source}")]
    Scene { scene: String, source: SceneError },
    #[error("scene `{scene}`, stage {stage}: {message}")]
    Stage { scene: String, stage: &'static str, message: String },
    #[error("writing artifacts: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// One pass/fail entry, tied to the operation and tolerance that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub operation: String,
    pub tolerance: Option<f64>,
    pub value: String,
    pub passed: bool,
}

impl Check {
    fn new(name: &str, operation: &str, tolerance: Option<f64>, value: impl ToString, passed: bool) -> Self {
        Check {
            name: name.into(),
            operation: operation.into(),
            tolerance,
            value: value.to_string(),
            passed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrataSummary {
    pub positive_arcs: usize,
    pub negative_arcs: usize,
    pub external_tangencies: usize,
    pub internal_tangencies: usize,
}

impl From<&MorseStrata> for StrataSummary {
    fn from(s: &MorseStrata) -> Self {
        let count = |k| s.tangency_points.iter().filter(|t| t.kind == k).count();
        StrataSummary {
            positive_arcs: s.positive_arcs.len(),
            negative_arcs: s.negative_arcs.len(),
            external_tangencies: count(TangencyKind::External),
            internal_tangencies: count(TangencyKind::Internal),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub samples: usize,
    pub fiber_cardinality: BTreeMap<usize, usize>,
    pub max_cardinality: usize,
    /// Share of samples whose fiber has exactly two events.
    pub generic_fraction: f64,
    pub property_a: bool,
    pub property_a_violations: usize,
}

impl From<&CausalityDataset> for DatasetStats {
    fn from(d: &CausalityDataset) -> Self {
        let hist = d.cardinality_histogram();
        let pa = tracing::check_property_a(d);
        DatasetStats {
            samples: d.samples.len(),
            max_cardinality: hist.keys().copied().max().unwrap_or(0),
            generic_fraction: hist.get(&2).copied().unwrap_or(0) as f64 / d.samples.len().max(1) as f64,
            fiber_cardinality: hist,
            property_a: pa.ok,
            property_a_violations: pa.violations.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub vertices: usize,
    pub edges: usize,
    pub loops: usize,
    pub invariants: GraphInvariants,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgebraSummary {
    pub grid: usize,
    pub invariant_generators: usize,
    pub pullback_degree: usize,
    pub intersection_dim: Option<usize>,
    pub spectral_gap: Option<f64>,
    pub density_residuals: Vec<(usize, f64)>,
    pub hf: Option<HfOutcome>,
}

/// Everything a run computed except wall-clock timings, which live in a
/// separate file so that reports of identical runs are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub scene: String,
    pub scene_hash: String,
    pub stages: Vec<Stage>,
    pub strata: Option<StrataSummary>,
    pub dataset: Option<DatasetStats>,
    pub graph: Option<GraphSummary>,
    pub reconstruction: Option<TruthReport>,
    pub algebra: Option<AlgebraSummary>,
    pub checks: Vec<Check>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub type Timings = BTreeMap<String, f64>;

/// Products of a run kept in memory for callers that go on computing.
pub struct RunOutput {
    pub report: RunReport,
    pub timings: Timings,
    pub built: BuiltScene,
    pub dataset: Option<CausalityDataset>,
    pub graph: Option<TrajectoryGraph>,
    pub model: Option<AlphaModel>,
}

pub const RANK_LADDER: [usize; 5] = [1, 2, 4, 8, 16];
pub const DENSITY_TARGET: &str = "sin(x + 2*y)";
pub const DENSITY_RESIDUAL: f64 = 1e-2;
const HF_PROBES: usize = 32;

fn stage_err(scene: &str, stage: Stage, e: impl std::fmt::Display) -> RunError {
    RunError::Stage {
        scene: scene.to_string(),
        stage: stage.name(),
        message: e.to_string(),
    }
}

/// Runs the requested stages and their prerequisites. With `out`, writes the
/// dataset, graph export, boundary data, figures, report and timings there.
pub fn run_scene(scene: &Scene, stages: &[Stage], out: Option<&Path>) -> Result<RunOutput, RunError> {
    let name = scene.name.clone();
    let stages = Stage::closure(stages);
    let built = scene.build().map_err(|source| RunError::Scene {
        scene: name.clone(),
        source,
    })?;
    let mut timings = Timings::new();
    let mut checks = Vec::new();
    let mut report = RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        scene: name.clone(),
        scene_hash: scene.hash(),
        stages: stages.clone(),
        strata: None,
        dataset: None,
        graph: None,
        reconstruction: None,
        algebra: None,
        checks: Vec::new(),
    };
    let mut strata = None;
    let mut dataset = None;
    let mut graph = None;
    let mut model = None;
    for &stage in &stages {
        let clock = Instant::now();
        match stage {
            Stage::Strata => {
                let s = built.strata().map_err(|e: FlowError| stage_err(&name, stage, e))?;
                checks.push(Check::new("traversing", "check_traversing", Some(built.scene.tolerances.positivity_margin), "df(v) > 0 on the grid", true));
                report.strata = Some(StrataSummary::from(&s));
                strata = Some(s);
            }
            Stage::Causality => {
                let d = built.sample().map_err(|e: PipelineError| stage_err(&name, stage, e))?;
                let stats = DatasetStats::from(&d);
                let monotone = tracing::check_monotone(&d);
                let quotient = tracing::check_quotient(&d);
                checks.push(Check::new("monotone", "check_monotone", Some(0.0), format!("{} violations", monotone.len()), monotone.is_empty()));
                checks.push(Check::new("quotient", "check_quotient", Some(1e-12), format!("{} violations", quotient.len()), quotient.is_empty()));
                checks.push(Check::new("property_a", "check_property_a", None, format!("{} violations", stats.property_a_violations), stats.property_a));
                checks.push(Check::new("fiber_cardinality", "sample_causality_map", None, stats.max_cardinality, stats.max_cardinality <= 3));
                report.dataset = Some(stats);
                dataset = Some(d);
            }
            Stage::Graph => {
                let d = dataset.as_ref().expect("causality precedes graph");
                let g = build_graph(d).map_err(|e: GraphError| stage_err(&name, stage, e))?;
                let inv = g.invariants();
                let valences_ok = inv.valence_histogram.keys().all(|&v| v == 1 || v == 3);
                checks.push(Check::new("valences", "build_graph", None, format!("{:?}", inv.valence_histogram), valences_ok));
                let truth = 1 - built.domain.hole_count() as i64;
                checks.push(Check::new("graph_chi", "invariants", Some(0.0), inv.chi, inv.chi == truth));
                report.graph = Some(GraphSummary {
                    vertices: g.vertices.len(),
                    edges: g.edges.len(),
                    loops: g.edges.iter().filter(|e| e.is_loop()).count(),
                    invariants: inv,
                });
                graph = Some(g);
            }
            Stage::Holography => {
                let d = dataset.as_ref().expect("causality precedes holography");
                let bd = holography::extract_boundary_data(d);
                let m = holography::build_alpha_model(&bd).map_err(|e: HolographyError| stage_err(&name, stage, e))?;
                let truth = holography::compare_with_truth(&built.domain, &m).map_err(|e| stage_err(&name, stage, e))?;
                checks.push(Check::new("reconstructed_chi", "reconstruct_invariants", Some(0.0), truth.reconstructed.chi, truth.chi_match));
                checks.push(Check::new(
                    "reconstructed_boundary",
                    "reconstruct_invariants",
                    Some(0.0),
                    truth.reconstructed.boundary_components,
                    truth.boundary_match,
                ));
                report.reconstruction = Some(truth);
                if let Some(dir) = out {
                    std::fs::create_dir_all(dir)?;
                    std::fs::write(dir.join("boundary.json"), bd.to_json())?;
                }
                model = Some(m);
            }
            Stage::Algebra => {
                let d = dataset.as_ref().expect("causality precedes algebra");
                let g = graph.as_ref().expect("graph precedes algebra");
                let summary = run_algebra(&built, d, g, &mut checks).map_err(|e| stage_err(&name, stage, e))?;
                report.algebra = Some(summary);
            }
        }
        timings.insert(stage.name().to_string(), clock.elapsed().as_secs_f64());
    }
    report.checks = checks;
    if let Some(dir) = out {
        write_artifacts(dir, &built, &report, &timings, strata.as_ref(), dataset.as_ref(), graph.as_ref(), model.as_ref())?;
    }
    Ok(RunOutput {
        report,
        timings,
        built,
        dataset,
        graph,
        model,
    })
}

fn run_algebra(
    built: &BuiltScene,
    d: &CausalityDataset,
    g: &TrajectoryGraph,
    checks: &mut Vec<Check>,
) -> Result<AlgebraSummary, AlgebraError> {
    let n = built.scene.sampling.interior_grid;
    let grid = SampleGrid::build(built, d, g, n)?;
    let generators = 16;
    let degree = 15;
    let a = algebra::build_v_invariant_space(&grid, generators)?;
    let b = algebra::build_f_pullback_space(&grid, degree);
    let mut summary = AlgebraSummary {
        grid: n,
        invariant_generators: a.len(),
        pullback_degree: degree,
        intersection_dim: None,
        spectral_gap: None,
        density_residuals: Vec::new(),
        hf: None,
    };
    match algebra::intersection_dimension(&a, &b) {
        Ok(r) => {
            checks.push(Check::new("constants_only", "intersection_dimension", Some(algebra::MIN_SPECTRAL_GAP), format!("dim {} gap {:.3e}", r.dim, r.spectral_gap), r.dim == 1));
            summary.intersection_dim = Some(r.dim);
            summary.spectral_gap = Some(r.spectral_gap);
        }
        Err(e @ AlgebraError::IllConditioned { .. }) => {
            checks.push(Check::new("constants_only", "intersection_dimension", Some(algebra::MIN_SPECTRAL_GAP), e, false));
        }
        Err(e) => return Err(e),
    }
    let target = grid.evaluate(&Expr::parse(DENSITY_TARGET).expect("fixed target parses"));
    for r in RANK_LADDER {
        let fit = algebra::tensor_approximation(&target, &a, &b, r)?;
        summary.density_residuals.push((r, fit.residual));
    }
    let res: Vec<f64> = summary.density_residuals.iter().map(|x| x.1).collect();
    let decreasing = res.windows(2).all(|w| w[1] < w[0]);
    let last = *res.last().expect("ladder is not empty");
    // with only edge coordinates the residuals are reported, not asserted
    if matches!(grid.transverse, algebra::Transverse::Ambient(_)) {
        checks.push(Check::new(
            "density",
            "tensor_approximation",
            Some(DENSITY_RESIDUAL),
            format!("{last:.3e}"),
            decreasing && last < DENSITY_RESIDUAL,
        ));
    }
    match algebra::check_hf_boundary(&built.flow, &built.domain, n, HF_PROBES, built.scene.seed) {
        Ok(out) => {
            let value = match &out {
                HfOutcome::Verified { max_excess, .. } => format!("max excess {max_excess:.3e}"),
                HfOutcome::NotApplicable { components } => format!("not applicable: {components} range components"),
            };
            checks.push(Check::new("hf_boundary", "check_hf_boundary", Some(1e-8), value, true));
            summary.hf = Some(out);
        }
        Err(e @ AlgebraError::RangeViolation { .. }) => {
            checks.push(Check::new("hf_boundary", "check_hf_boundary", Some(1e-8), e, false));
        }
        Err(e) => return Err(e),
    }
    Ok(summary)
}

/// Trajectories through evenly spaced points of each positive arc.
fn sample_trajectories(built: &BuiltScene, strata: &MorseStrata, per_arc: usize) -> Vec<Vec<crate::Point>> {
    let config = TraceConfig {
        record_polyline: true,
        ..built.trace_config()
    };
    let tracer = Tracer::new(&built.domain, &built.flow, config);
    let mut out = Vec::new();
    for arc in &strata.positive_arcs {
        for k in 0..per_arc {
            let t = arc.start + arc.width() * (k as f64 + 0.5) / per_arc as f64;
            if let Ok(traj) = tracer.trace(BoundaryPoint::new(arc.curve, t), Direction::Forward) {
                out.push(traj.polyline);
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn write_artifacts(
    dir: &Path,
    built: &BuiltScene,
    report: &RunReport,
    timings: &Timings,
    strata: Option<&MorseStrata>,
    dataset: Option<&CausalityDataset>,
    graph: Option<&TrajectoryGraph>,
    model: Option<&AlphaModel>,
) -> Result<(), RunError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), report.to_json())?;
    std::fs::write(
        dir.join("timings.json"),
        serde_json::to_string_pretty(timings).expect("timings serialize"),
    )?;
    if let Some(d) = dataset {
        d.save(&dir.join("dataset.json"))?;
        std::fs::write(dir.join("causality.svg"), svg::causality_figure(&built.domain, d, 300))?;
    }
    if let Some(s) = strata {
        let trajectories = sample_trajectories(built, s, 12);
        std::fs::write(dir.join("domain.svg"), svg::domain_figure(&built.domain, s, &trajectories))?;
    }
    if let Some(g) = graph {
        std::fs::write(dir.join("graph.json"), serde_json::to_string_pretty(g).expect("graph serializes"))?;
        std::fs::write(dir.join("graph.svg"), svg::graph_figure(&built.domain, g))?;
    }
    if let Some(m) = model {
        std::fs::write(dir.join("alpha.svg"), svg::alpha_figure(m))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_closure_adds_prerequisites_in_order() {
        assert_eq!(Stage::closure(&[Stage::Algebra]), vec![Stage::Strata, Stage::Causality, Stage::Graph, Stage::Algebra]);
        assert_eq!(Stage::closure(&[Stage::Holography, Stage::Strata]), vec![Stage::Strata, Stage::Causality, Stage::Holography]);
    }
}
