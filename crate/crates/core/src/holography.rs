//! Reconstruction of the bulk from boundary data.
//!
//! [`BoundaryData`] keeps only what lives on the boundary: circle lengths,
//! `f` on each circle, the sampled causality pairing with its fibers and the
//! tangency strata. The α-model, the Euler characteristic and the boundary
//! component count are computed from it alone.

use petgraph::unionfind::UnionFind;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flowfield::MorseStrata;
use crate::geometry::{canonical_t, param_distance, BoundaryPoint, Domain, Location, Point};
use crate::scene::BuiltScene;
use crate::tracing::{CausalityDataset, EventKind, Sample, TraceError, Tracer};
use crate::trajspace::{build_graph, fiber_events, FiberTable, GraphError, GraphLocation, TrajectoryGraph};

#[derive(Debug, Error)]
pub enum HolographyError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("boundary trace does not close at vertex {vertex}: {detail}")]
    BoundaryTraceIncomplete { vertex: usize, detail: String },
    #[error("boundary map does not commute with the causality maps at curve {curve}, t = {t} (discrepancy {discrepancy}, {violations} violations)")]
    CommutationViolation {
        curve: usize,
        t: f64,
        discrepancy: f64,
        violations: usize,
    },
    #[error("level {level} outside the image fiber's range [{}, {}] for grid point ({}, {})", range[0], range[1], at[0], at[1])]
    LevelOutOfRange { at: [f64; 2], level: f64, range: [f64; 2] },
    #[error("malformed boundary data: {0}")]
    Malformed(String),
}

/// Boundary-only data: abstract circles, `f` on them, the causality pairing
/// and the tangency strata. Nothing here refers to the planar embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryData {
    pub circle_lengths: Vec<f64>,
    pub f_boundary: Vec<Vec<f64>>,
    pub pairing: Vec<Sample>,
    pub strata: MorseStrata,
    pub density: f64,
}

pub fn extract_boundary_data(dataset: &CausalityDataset) -> BoundaryData {
    BoundaryData {
        circle_lengths: dataset.curve_lengths.clone(),
        f_boundary: dataset.f_boundary.clone(),
        pairing: dataset.samples.clone(),
        strata: dataset.strata.clone(),
        density: dataset.header.density,
    }
}

impl<'a> From<&'a BoundaryData> for FiberTable<'a> {
    fn from(bd: &'a BoundaryData) -> Self {
        FiberTable {
            curve_lengths: &bd.circle_lengths,
            strata: &bd.strata,
            samples: &bd.pairing,
            density: bd.density,
        }
    }
}

impl BoundaryData {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("boundary data serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, HolographyError> {
        let bd: BoundaryData = serde_json::from_str(text).map_err(|e| HolographyError::Malformed(e.to_string()))?;
        bd.validate()?;
        Ok(bd)
    }

    /// Monotone pairing and strata consistent with the circle count.
    pub fn validate(&self) -> Result<(), HolographyError> {
        let n = self.circle_lengths.len();
        if self.f_boundary.len() != n {
            return Err(HolographyError::Malformed(format!(
                "{} f tables for {n} circles",
                self.f_boundary.len()
            )));
        }
        for (i, s) in self.pairing.iter().enumerate() {
            if s.source.curve >= n || s.target.curve >= n {
                return Err(HolographyError::Malformed(format!("pair {i} names a missing circle")));
            }
            if s.source != s.target && !(s.f_target > s.f_source) {
                return Err(HolographyError::Malformed(format!("pair {i} does not increase f")));
            }
        }
        if self.strata.tangency_points.iter().any(|p| p.point.curve >= n) {
            return Err(HolographyError::Malformed("tangency on a missing circle".into()));
        }
        Ok(())
    }

    /// Spread of `f` over the whole boundary.
    pub fn f_span(&self) -> f64 {
        let all = self.f_boundary.iter().flatten();
        let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
        let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    }
}

/// One sheet of the boundary image over an edge: the lower sheet carries the
/// entry points, the upper one the exit points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub edge: usize,
    pub upper: bool,
    /// `(edge coordinate, f)` pairs.
    pub points: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaModel {
    pub graph: TrajectoryGraph,
    pub vertex_intervals: Vec<[f64; 2]>,
    pub boundary_image: Vec<Branch>,
    pub f_span: f64,
}

fn edge_coordinate(edge: &crate::trajspace::Edge, t: f64) -> f64 {
    if edge.t_width <= 0.0 {
        return 0.5;
    }
    ((t - edge.t_start).rem_euclid(1.0) / edge.t_width).min(1.0)
}

pub fn build_alpha_model(bd: &BoundaryData) -> Result<AlphaModel, HolographyError> {
    bd.validate()?;
    let graph = build_graph(bd)?;
    let vertex_intervals = graph
        .vertices
        .iter()
        .map(|v| {
            let lo = v.fiber.iter().map(|e| e.f).fold(f64::INFINITY, f64::min);
            let hi = v.fiber.iter().map(|e| e.f).fold(f64::NEG_INFINITY, f64::max);
            [lo, hi]
        })
        .collect();
    let mut boundary_image = Vec::new();
    for (i, e) in graph.edges.iter().enumerate() {
        for upper in [false, true] {
            let points = e
                .profile
                .iter()
                .map(|p| [edge_coordinate(e, p.t), if upper { p.f_max } else { p.f_min }])
                .collect();
            boundary_image.push(Branch { edge: i, upper, points });
        }
    }
    Ok(AlphaModel {
        graph,
        vertex_intervals,
        boundary_image,
        f_span: bd.f_span(),
    })
}

impl AlphaModel {
    /// The `f` interval of the fibers at a graph location.
    pub fn interval(&self, loc: GraphLocation) -> [f64; 2] {
        match loc {
            GraphLocation::Vertex(v) => self.vertex_intervals[v],
            GraphLocation::Edge { edge, coordinate } => {
                let lower = &self.boundary_image[2 * edge].points;
                let upper = &self.boundary_image[2 * edge + 1].points;
                [interpolate(lower, coordinate), interpolate(upper, coordinate)]
            }
        }
    }
}

fn interpolate(points: &[[f64; 2]], u: f64) -> f64 {
    let k = points.partition_point(|p| p[0] < u);
    if k == 0 {
        return points[0][1];
    }
    if k == points.len() {
        return points[k - 1][1];
    }
    let (a, b) = (points[k - 1], points[k]);
    if b[0] <= a[0] {
        return b[1];
    }
    a[1] + (b[1] - a[1]) * (u - a[0]) / (b[0] - a[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reconstruction {
    pub chi: i64,
    pub boundary_components: usize,
}

/// Euler characteristic of the graph, and the number of closed curves
/// obtained by following the sheets of the boundary image and joining sheet
/// ends at each vertex that share an `f` value.
pub fn reconstruct_invariants(model: &AlphaModel) -> Result<Reconstruction, HolographyError> {
    let graph = &model.graph;
    let tol = 1e-3 * model.f_span.max(f64::MIN_POSITIVE);
    let mut uf = UnionFind::<usize>::new(model.boundary_image.len());
    // sheet ends landing on each fiber event of each vertex
    let mut landing: Vec<Vec<Vec<usize>>> = graph.vertices.iter().map(|v| vec![Vec::new(); v.fiber.len()]).collect();
    for (b, branch) in model.boundary_image.iter().enumerate() {
        let edge = &graph.edges[branch.edge];
        let Some([start, end]) = edge.endpoints else {
            // a closed family: each sheet closes on itself
            continue;
        };
        let ends = [(start, branch.points[0][1]), (end, branch.points[branch.points.len() - 1][1])];
        for (v, f) in ends {
            let fiber = &graph.vertices[v].fiber;
            let (k, gap) = fiber
                .iter()
                .enumerate()
                .map(|(k, e)| (k, (e.f - f).abs()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .ok_or(HolographyError::BoundaryTraceIncomplete {
                    vertex: v,
                    detail: "empty vertex fiber".into(),
                })?;
            if gap > tol {
                return Err(HolographyError::BoundaryTraceIncomplete {
                    vertex: v,
                    detail: format!("sheet of edge {} ends at f = {f}, {gap} from every fiber event", branch.edge),
                });
            }
            landing[v][k].push(b);
        }
    }
    for (v, events) in landing.iter().enumerate() {
        for (k, ends) in events.iter().enumerate() {
            if ends.len() != 2 {
                return Err(HolographyError::BoundaryTraceIncomplete {
                    vertex: v,
                    detail: format!("{} sheet ends meet fiber event {k}", ends.len()),
                });
            }
            uf.union(ends[0], ends[1]);
        }
    }
    let mut roots: Vec<usize> = (0..model.boundary_image.len()).map(|b| uf.find(b)).collect();
    roots.sort_unstable();
    roots.dedup();
    Ok(Reconstruction {
        chi: graph.invariants().chi,
        boundary_components: roots.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthReport {
    pub truth: Reconstruction,
    pub reconstructed: Reconstruction,
    pub chi_match: bool,
    pub boundary_match: bool,
}

impl TruthReport {
    pub fn passed(&self) -> bool {
        self.chi_match && self.boundary_match
    }
}

pub fn compare_with_truth(domain: &Domain, model: &AlphaModel) -> Result<TruthReport, HolographyError> {
    let holes = domain.hole_count();
    let truth = Reconstruction {
        chi: 1 - holes as i64,
        boundary_components: 1 + holes,
    };
    let reconstructed = reconstruct_invariants(model)?;
    Ok(TruthReport {
        truth,
        reconstructed,
        chi_match: truth.chi == reconstructed.chi,
        boundary_match: truth.boundary_components == reconstructed.boundary_components,
    })
}

/// A sampled map between boundaries: curve `i` goes to `targets[i]`, and
/// `images[i][k]` is the image parameter of `t = k / n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryMap {
    pub targets: Vec<usize>,
    pub images: Vec<Vec<f64>>,
}

impl BoundaryMap {
    pub fn identity(curves: usize, n: usize) -> Self {
        Self::shifted(&vec![0.0; curves], n)
    }

    /// `t ↦ t + shift` on every curve.
    pub fn shifted(shifts: &[f64], n: usize) -> Self {
        BoundaryMap {
            targets: (0..shifts.len()).collect(),
            images: shifts
                .iter()
                .map(|s| (0..n).map(|k| canonical_t(k as f64 / n as f64 + s)).collect())
                .collect(),
        }
    }

    /// The identity with its table entries permuted at random on each curve.
    pub fn shuffled(curves: usize, n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut map = Self::identity(curves, n);
        for table in &mut map.images {
            table.shuffle(&mut rng);
        }
        map
    }

    pub fn apply(&self, b: BoundaryPoint) -> BoundaryPoint {
        let table = &self.images[b.curve];
        let n = table.len();
        let u = canonical_t(b.t) * n as f64;
        let i = (u.floor() as usize).min(n - 1);
        let s = u - i as f64;
        let a = table[i];
        let d = (table[(i + 1) % n] - a + 0.5).rem_euclid(1.0) - 0.5;
        BoundaryPoint::new(self.targets[b.curve], a + s * d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommutationReport {
    pub checked: usize,
    pub violations: usize,
    pub worst: Option<(BoundaryPoint, f64)>,
}

/// Indices of pairing samples away from tangencies and from the jumps of the
/// causality map (a neighbor within `1e-6` with another fiber signature).
fn continuity_samples(samples: &[Sample]) -> Vec<usize> {
    let mut by_curve: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, s) in samples.iter().enumerate() {
        if !s.at_tangency && !s.is_fixed() && s.fiber.iter().all(|e| e.kind != EventKind::Tangency) {
            by_curve.entry(s.source.curve).or_default().push(i);
        }
    }
    let mut out = Vec::new();
    for list in by_curve.values_mut() {
        list.sort_by(|&a, &b| samples[a].source.t.total_cmp(&samples[b].source.t));
        let n = list.len();
        for k in 0..n {
            let s = &samples[list[k]];
            let near_jump = [list[(k + n - 1) % n], list[(k + 1) % n]].iter().any(|&j| {
                let o = &samples[j];
                param_distance(o.source.t, s.source.t) < 1e-6 && o.signature() != s.signature()
            });
            if !near_jump {
                out.push(list[k]);
            }
        }
    }
    out.sort_unstable();
    out
}

/// Compares `C₂ ∘ Φ` with `Φ ∘ C₁` on the continuity points of `C₁`.
pub fn check_commutation(
    dataset1: &CausalityDataset,
    tracer2: &Tracer,
    phi: &BoundaryMap,
    tolerance: f64,
) -> CommutationReport {
    let idx = continuity_samples(&dataset1.samples);
    let gaps: Vec<(BoundaryPoint, f64)> = idx
        .par_iter()
        .map(|&i| {
            let s = &dataset1.samples[i];
            let expected = phi.apply(s.target);
            let gap = match tracer2.causality(phi.apply(s.source)) {
                Ok(e) if e.point.curve == expected.curve => param_distance(e.point.t, expected.t),
                _ => f64::INFINITY,
            };
            (s.source, gap)
        })
        .collect();
    let violations = gaps.iter().filter(|g| !(g.1 <= tolerance)).count();
    let worst = gaps.into_iter().max_by(|a, b| a.1.total_cmp(&b.1));
    CommutationReport {
        checked: idx.len(),
        violations,
        worst,
    }
}

pub const COMMUTATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiSample {
    /// Grid cell `(i, j)`.
    pub cell: [usize; 2],
    pub x: [f64; 2],
    pub image: [f64; 2],
    pub level: f64,
    pub image_level: f64,
    pub location: GraphLocation,
    pub image_location: GraphLocation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiMap {
    pub grid: usize,
    pub samples: Vec<PhiSample>,
}

impl PhiMap {
    /// Largest distance between `Φ(x)` and `expected(x)` over the grid.
    pub fn max_error(&self, expected: impl Fn(Point) -> Point) -> f64 {
        self.samples
            .iter()
            .map(|s| (Point::from(s.image) - expected(Point::from(s.x))).norm())
            .fold(0.0, f64::max)
    }

    /// Largest `|f₂(Φ(x)) − f₁(x)|`.
    pub fn level_error(&self) -> f64 {
        self.samples.iter().map(|s| (s.image_level - s.level).abs()).fold(0.0, f64::max)
    }

    /// Pairs of grid points whose images are within `eps` of each other
    /// although the points themselves are not.
    pub fn collisions(&self, eps: f64) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.samples.len() {
            for j in i + 1..self.samples.len() {
                let (a, b) = (&self.samples[i], &self.samples[j]);
                let di = (Point::from(a.image) - Point::from(b.image)).norm();
                let dx = (Point::from(a.x) - Point::from(b.x)).norm();
                if di <= eps && dx > eps {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Condition numbers of the finite-difference Jacobian on grid cells
    /// whose right and upper neighbors are also sampled.
    pub fn jacobian_conditions(&self) -> Vec<f64> {
        let index: std::collections::HashMap<[usize; 2], usize> =
            self.samples.iter().enumerate().map(|(k, s)| (s.cell, k)).collect();
        let mut out = Vec::new();
        for s in &self.samples {
            let [i, j] = s.cell;
            let (Some(&r), Some(&u)) = (index.get(&[i + 1, j]), index.get(&[i, j + 1])) else {
                continue;
            };
            let (r, u) = (&self.samples[r], &self.samples[u]);
            let dx = r.x[0] - s.x[0];
            let dy = u.x[1] - s.x[1];
            let m = nalgebra::Matrix2::new(
                (r.image[0] - s.image[0]) / dx,
                (u.image[0] - s.image[0]) / dy,
                (r.image[1] - s.image[1]) / dx,
                (u.image[1] - s.image[1]) / dy,
            );
            let sv = m.singular_values();
            out.push(sv.max() / sv.min());
        }
        out
    }
}

/// Interior grid of `n × n` cell centers over the bounding box, keeping
/// points of the domain away from the boundary.
pub fn interior_grid(domain: &Domain, n: usize) -> Vec<([usize; 2], Point)> {
    let (lo, hi) = domain.bounding_box();
    let mut out = Vec::new();
    for j in 0..n {
        for i in 0..n {
            let p = Point::new(
                lo.x + (i as f64 + 0.5) / n as f64 * (hi.x - lo.x),
                lo.y + (j as f64 + 0.5) / n as f64 * (hi.y - lo.y),
            );
            if domain.locate(p) == Location::Interior && domain.signed_distance(p).0 > 1e-6 * domain.scale() {
                out.push(([i, j], p));
            }
        }
    }
    out
}

/// Extends a boundary map to the interior grid of scene 1: each point goes
/// to the point on the image trajectory at the same level of `f`.
pub fn extend_boundary_map(
    scene1: &BuiltScene,
    data1: &CausalityDataset,
    scene2: &BuiltScene,
    data2: &CausalityDataset,
    phi: &BoundaryMap,
    grid: usize,
) -> Result<PhiMap, HolographyError> {
    let tracer1 = scene1.tracer();
    let tracer2 = scene2.tracer();
    let report = check_commutation(data1, &tracer2, phi, COMMUTATION_TOLERANCE);
    if report.violations > 0 {
        let (b, gap) = report.worst.expect("violations imply a worst sample");
        return Err(HolographyError::CommutationViolation {
            curve: b.curve,
            t: b.t,
            discrepancy: gap,
            violations: report.violations,
        });
    }
    let graph1 = build_graph(data1)?;
    let graph2 = build_graph(data2)?;
    let points = interior_grid(&scene1.domain, grid);
    let samples = points
        .par_iter()
        .map(|&(cell, x)| -> Result<PhiSample, HolographyError> {
            let fiber1 = fiber_events(&tracer1.fiber_of_point(x)?);
            let location = graph1.project(&fiber1, &data1.curve_lengths)?;
            let first = fiber1
                .iter()
                .min_by(|a, b| a.f.total_cmp(&b.f))
                .ok_or(TraceError::FieldDegenerate { at: [x.x, x.y] })?;
            let b2 = phi.apply(BoundaryPoint::new(first.curve, first.t));
            let fiber2 = fiber_events(&tracer2.fiber(b2)?);
            let image_location = graph2.project(&fiber2, &data2.curve_lengths)?;
            let level = scene1.flow.f_value(x);
            let lo = fiber2.iter().map(|e| e.f).fold(f64::INFINITY, f64::min);
            let hi = fiber2.iter().map(|e| e.f).fold(f64::NEG_INFINITY, f64::max);
            if !(level >= lo && level <= hi) {
                return Err(HolographyError::LevelOutOfRange {
                    at: [x.x, x.y],
                    level,
                    range: [lo, hi],
                });
            }
            let start = fiber2
                .iter()
                .filter(|e| e.f <= level)
                .max_by(|a, b| a.f.total_cmp(&b.f))
                .expect("level is above the lowest event");
            let p0 = scene2.domain.position(BoundaryPoint::new(start.curve, start.t));
            let image = tracer2.advance_to_level(p0, level)?;
            Ok(PhiSample {
                cell,
                x: [x.x, x.y],
                image: [image.x, image.y],
                level,
                image_level: scene2.flow.f_value(image),
                location,
                image_location,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PhiMap { grid, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Scene;

    #[test]
    fn disk_reconstruction() {
        let built = Scene::builtin("disk").unwrap().build().unwrap();
        let bd = extract_boundary_data(&built.sample().unwrap());
        assert_eq!(bd.circle_lengths.len(), 1);
        assert_eq!(bd.pairing.iter().filter(|s| s.is_fixed()).count(), 2);
        let model = build_alpha_model(&bd).unwrap();
        let r = reconstruct_invariants(&model).unwrap();
        assert_eq!(r, Reconstruction { chi: 1, boundary_components: 1 });
        // intervals collapse at the two ends of the segment
        for v in &model.vertex_intervals {
            assert!((v[1] - v[0]).abs() < 1e-12);
        }
        let mid = model.interval(GraphLocation::Edge { edge: 0, coordinate: 0.5 });
        assert!((mid[0] + 1.0).abs() < 1e-3 && (mid[1] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn boundary_map_wraps_parameters() {
        let m = BoundaryMap::shifted(&[0.25], 64);
        let b = m.apply(BoundaryPoint::new(0, 0.9));
        assert!((b.t - 0.15).abs() < 1e-12);
        let id = BoundaryMap::identity(2, 16);
        let b = id.apply(BoundaryPoint::new(1, 0.99));
        assert!((b.t - 0.99).abs() < 1e-12);
    }
}
