//! The trajectory space as a finite graph.
//!
//! Every trajectory is keyed by its first boundary event (lowest `f`), which
//! always lies on a positive arc. Sampled trajectories sharing a fiber
//! signature along one arc form an edge; tangency trajectories are vertices.

use std::collections::BTreeMap;

use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flowfield::{Arc, MorseStrata, TangencyKind};
use crate::geometry::param_distance;
use crate::tracing::{signature, CausalityDataset, EventKind, FiberEvent, Sample, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("no tangency fiber within {tolerance} of the fiber starting at curve {curve}, t = {t}")]
    SignatureAmbiguity { curve: usize, t: f64, tolerance: f64 },
    #[error("vertex {vertex} has valence {valence}")]
    ValenceViolation { vertex: usize, valence: usize },
}

/// What the graph builder reads: boundary lengths, strata and sampled fibers.
#[derive(Debug, Clone, Copy)]
pub struct FiberTable<'a> {
    pub curve_lengths: &'a [f64],
    pub strata: &'a MorseStrata,
    pub samples: &'a [Sample],
    /// Samples per unit boundary length.
    pub density: f64,
}

impl<'a> From<&'a CausalityDataset> for FiberTable<'a> {
    fn from(d: &'a CausalityDataset) -> Self {
        FiberTable {
            curve_lengths: &d.curve_lengths,
            strata: &d.strata,
            samples: &d.samples,
            density: d.header.density,
        }
    }
}

impl FiberTable<'_> {
    /// Vertex matching distance in arc length.
    pub fn match_tolerance(&self) -> f64 {
        10.0 / self.density
    }

    fn event_distance(&self, a: &FiberEvent, b: &FiberEvent) -> f64 {
        if a.curve != b.curve {
            return f64::INFINITY;
        }
        param_distance(a.t, b.t) * self.curve_lengths.get(a.curve).copied().unwrap_or(1.0)
    }

    /// Largest distance from an event of `fiber` to the nearest event of
    /// `target` on the same curve.
    fn fiber_distance(&self, fiber: &[FiberEvent], target: &[FiberEvent]) -> f64 {
        fiber
            .iter()
            .map(|e| target.iter().map(|g| self.event_distance(e, g)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub fiber: Vec<FiberEvent>,
    pub kind: TangencyKind,
    pub valence: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub t: f64,
    pub f_min: f64,
    pub f_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    /// Vertices at the start and end of the parameter interval; `None` for a
    /// closed family that meets no tangency.
    pub endpoints: Option<[usize; 2]>,
    /// Curve carrying the first events of the family.
    pub curve: usize,
    pub t_start: f64,
    /// Parameter width of the family, measured counterclockwise.
    pub t_width: f64,
    pub signature: Vec<(usize, EventKind)>,
    /// `f` range of the fibers along the family, for plotting.
    pub profile: Vec<ProfilePoint>,
}

impl Edge {
    pub fn is_loop(&self) -> bool {
        self.endpoints.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryGraph {
    pub vertices: Vec<Vertex>,
    pub edges: Vec<Edge>,
    pub match_tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GraphLocation {
    Vertex(usize),
    Edge { edge: usize, coordinate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphInvariants {
    pub chi: i64,
    pub valence_histogram: BTreeMap<usize, usize>,
    pub components: usize,
}

/// Boundary events of a traced trajectory in fiber form.
pub fn fiber_events(trajectory: &Trajectory) -> Vec<FiberEvent> {
    trajectory
        .events
        .iter()
        .map(|e| FiberEvent {
            curve: e.point.curve,
            t: e.point.t,
            f: e.f,
            kind: e.kind,
        })
        .collect()
}

fn has_tangency(fiber: &[FiberEvent]) -> bool {
    fiber.iter().any(|e| e.kind == EventKind::Tangency)
}

/// True when the sample's source is the first event of its own fiber.
fn starts_fiber(s: &Sample) -> bool {
    s.fiber
        .first()
        .is_some_and(|e| e.curve == s.source.curve && param_distance(e.t, s.source.t) < 1e-12)
}

struct Run<'s> {
    samples: Vec<(f64, &'s Sample)>,
}

fn arc_runs<'s>(arc: &Arc, table: &FiberTable<'s>) -> (Vec<Run<'s>>, bool) {
    let mut on_arc: Vec<(f64, &'s Sample)> = table
        .samples
        .iter()
        .filter(|s| !s.at_tangency && arc.contains(s.source.curve, s.source.t))
        .map(|s| ((s.source.t - arc.start).rem_euclid(1.0), s))
        .collect();
    on_arc.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut runs: Vec<Run<'s>> = Vec::new();
    let mut current: Option<Run<'s>> = None;
    let mut separated_at_seam = false;
    for (k, &(u, s)) in on_arc.iter().enumerate() {
        let usable = starts_fiber(s) && !has_tangency(&s.fiber);
        if !usable {
            if k == 0 || k + 1 == on_arc.len() {
                separated_at_seam = true;
            }
            runs.extend(current.take());
            continue;
        }
        let sig = s.signature();
        match &mut current {
            Some(run) if run.samples.last().map(|x| x.1.signature()) == Some(sig) => run.samples.push((u, s)),
            _ => {
                runs.extend(current.take());
                current = Some(Run { samples: vec![(u, s)] });
            }
        }
    }
    runs.extend(current);
    (runs, separated_at_seam)
}

fn profile(run: &Run<'_>) -> Vec<ProfilePoint> {
    run.samples
        .iter()
        .map(|&(_, s)| ProfilePoint {
            t: s.source.t,
            f_min: s.fiber.first().map_or(s.f_source, |e| e.f),
            f_max: s.fiber.last().map_or(s.f_source, |e| e.f),
        })
        .collect()
}

fn match_vertex(table: &FiberTable<'_>, vertices: &[Vertex], limit: &Sample) -> Result<usize, GraphError> {
    let tol = table.match_tolerance();
    let best = vertices
        .iter()
        .enumerate()
        .map(|(i, v)| (i, table.fiber_distance(&limit.fiber, &v.fiber)))
        .min_by(|a, b| a.1.total_cmp(&b.1));
    match best {
        Some((i, d)) if d <= tol => Ok(i),
        _ => Err(GraphError::SignatureAmbiguity {
            curve: limit.source.curve,
            t: limit.source.t,
            tolerance: tol,
        }),
    }
}

/// Builds the trajectory graph from sampled fibers.
pub fn build_graph<'a>(table: impl Into<FiberTable<'a>>) -> Result<TrajectoryGraph, GraphError> {
    let table = table.into();
    let mut vertices: Vec<Vertex> = table
        .samples
        .iter()
        .filter(|s| s.at_tangency)
        .map(|s| {
            let kind = table
                .strata
                .tangency_points
                .iter()
                .filter(|p| p.point.curve == s.source.curve)
                .min_by(|a, b| {
                    param_distance(a.point.t, s.source.t).total_cmp(&param_distance(b.point.t, s.source.t))
                })
                .map_or(TangencyKind::External, |p| p.kind);
            Vertex {
                fiber: s.fiber.clone(),
                kind,
                valence: 0,
            }
        })
        .collect();

    let mut edges = Vec::new();
    for arc in &table.strata.positive_arcs {
        let (mut runs, separated) = arc_runs(arc, &table);
        let full = arc.width() >= 1.0;
        if full && runs.len() == 1 && !separated {
            let run = &runs[0];
            edges.push(Edge {
                endpoints: None,
                curve: arc.curve,
                t_start: run.samples[0].1.source.t,
                t_width: 1.0,
                signature: run.samples[0].1.signature(),
                profile: profile(run),
            });
            continue;
        }
        if full && runs.len() > 1 && !separated {
            let same = runs[0].samples[0].1.signature() == runs[runs.len() - 1].samples[0].1.signature();
            if same {
                // the family straddles the parameter seam
                let last = runs.pop().expect("more than one run");
                let mut merged: Vec<(f64, &Sample)> = last.samples.into_iter().map(|(u, s)| (u - 1.0, s)).collect();
                merged.append(&mut runs[0].samples);
                runs[0].samples = merged;
            }
        }
        for run in &runs {
            let first = run.samples[0];
            let last = run.samples[run.samples.len() - 1];
            let a = match_vertex(&table, &vertices, first.1)?;
            let b = match_vertex(&table, &vertices, last.1)?;
            vertices[a].valence += 1;
            vertices[b].valence += 1;
            edges.push(Edge {
                endpoints: Some([a, b]),
                curve: arc.curve,
                t_start: first.1.source.t,
                t_width: last.0 - first.0,
                signature: first.1.signature(),
                profile: profile(run),
            });
        }
    }

    for (i, v) in vertices.iter().enumerate() {
        let expected = match v.kind {
            TangencyKind::External => 1,
            TangencyKind::Internal => 3,
        };
        if v.valence != expected {
            return Err(GraphError::ValenceViolation {
                vertex: i,
                valence: v.valence,
            });
        }
    }
    Ok(TrajectoryGraph {
        vertices,
        edges,
        match_tolerance: table.match_tolerance(),
    })
}

impl TrajectoryGraph {
    /// Locates a fiber on the graph: tangency fibers land on vertices, the
    /// rest on the edge whose family contains the fiber's first event.
    pub fn project(&self, fiber: &[FiberEvent], curve_lengths: &[f64]) -> Result<GraphLocation, GraphError> {
        let tol = self.match_tolerance;
        let first = fiber.iter().min_by(|a, b| a.f.total_cmp(&b.f)).ok_or(GraphError::SignatureAmbiguity {
            curve: 0,
            t: 0.0,
            tolerance: tol,
        })?;
        let ambiguity = GraphError::SignatureAmbiguity {
            curve: first.curve,
            t: first.t,
            tolerance: tol,
        };
        let length = |c: usize| curve_lengths.get(c).copied().unwrap_or(1.0);
        if has_tangency(fiber) {
            let dist = |v: &Vertex| {
                fiber
                    .iter()
                    .filter(|e| e.kind == EventKind::Tangency)
                    .flat_map(|e| {
                        v.fiber
                            .iter()
                            .filter(move |g| g.kind == EventKind::Tangency && g.curve == e.curve)
                            .map(move |g| param_distance(e.t, g.t) * length(e.curve))
                    })
                    .fold(f64::INFINITY, f64::min)
            };
            return self
                .vertices
                .iter()
                .enumerate()
                .map(|(i, v)| (i, dist(v)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .filter(|(_, d)| *d <= tol)
                .map(|(i, _)| GraphLocation::Vertex(i))
                .ok_or(ambiguity);
        }
        let mut ordered = fiber.to_vec();
        ordered.sort_by(|a, b| a.f.total_cmp(&b.f));
        let sig = signature(&ordered);
        let mut best: Option<(usize, f64, f64)> = None;
        for (i, e) in self.edges.iter().enumerate() {
            if e.curve != first.curve || e.signature != sig {
                continue;
            }
            let rel = (first.t - e.t_start).rem_euclid(1.0);
            // distance outside the family's interval, in parameter units
            let (gap, coord) = if e.t_width >= 1.0 || rel <= e.t_width {
                (0.0, if e.t_width > 0.0 { rel / e.t_width } else { 0.5 })
            } else {
                let after = rel - e.t_width;
                let before = 1.0 - rel;
                if after < before {
                    (after, 1.0)
                } else {
                    (before, 0.0)
                }
            };
            let gap = gap * length(e.curve);
            if best.is_none_or(|b| gap < b.1) {
                best = Some((i, gap, coord.min(1.0)));
            }
        }
        match best {
            Some((edge, gap, coordinate)) if gap <= tol => Ok(GraphLocation::Edge { edge, coordinate }),
            _ => Err(ambiguity),
        }
    }

    /// Vertex a location sits on, counting edge ends within `eps` of their
    /// endpoint vertices.
    pub fn snap(&self, loc: GraphLocation, eps: f64) -> GraphLocation {
        match loc {
            GraphLocation::Edge { edge, coordinate } => match self.edges[edge].endpoints {
                Some([a, _]) if coordinate <= eps => GraphLocation::Vertex(a),
                Some([_, b]) if coordinate >= 1.0 - eps => GraphLocation::Vertex(b),
                _ => loc,
            },
            v => v,
        }
    }

    /// Equality of locations up to `eps` in the edge coordinate.
    pub fn same_location(&self, a: GraphLocation, b: GraphLocation, eps: f64) -> bool {
        match (self.snap(a, eps), self.snap(b, eps)) {
            (GraphLocation::Vertex(i), GraphLocation::Vertex(j)) => i == j,
            (GraphLocation::Edge { edge: i, coordinate: x }, GraphLocation::Edge { edge: j, coordinate: y }) => {
                i == j && (x - y).abs() <= eps
            }
            _ => false,
        }
    }

    pub fn invariants(&self) -> GraphInvariants {
        let loops = self.edges.iter().filter(|e| e.is_loop()).count();
        let chi = self.vertices.len() as i64 - self.edges.len() as i64 + loops as i64;
        let mut valence_histogram = BTreeMap::new();
        for v in &self.vertices {
            *valence_histogram.entry(v.valence).or_insert(0) += 1;
        }
        let mut uf = UnionFind::<usize>::new(self.vertices.len());
        for e in &self.edges {
            if let Some([a, b]) = e.endpoints {
                uf.union(a, b);
            }
        }
        let mut roots: Vec<usize> = (0..self.vertices.len()).map(|i| uf.find(i)).collect();
        roots.sort_unstable();
        roots.dedup();
        GraphInvariants {
            chi,
            valence_histogram,
            components: roots.len() + loops,
        }
    }
}

/// Projects a fiber onto the graph; see [`TrajectoryGraph::project`].
pub fn gamma_project(
    graph: &TrajectoryGraph,
    dataset: &CausalityDataset,
    fiber: &[FiberEvent],
) -> Result<GraphLocation, GraphError> {
    graph.project(fiber, &dataset.curve_lengths)
}

pub fn invariants(graph: &TrajectoryGraph) -> GraphInvariants {
    graph.invariants()
}
