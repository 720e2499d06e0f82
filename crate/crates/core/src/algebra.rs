//! Finite sampled surrogates for the function algebras of a traversing flow:
//! functions constant along trajectories, pullbacks of functions of `f`,
//! their intersection and their bilinear span.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::Expr;
use crate::flowfield::{boundary_f_ranges, range_components, FlowSpec, MorseStrata};
use crate::geometry::{BoundaryPoint, Domain, Point};
use crate::holography::interior_grid;
use crate::scene::BuiltScene;
use crate::tracing::{CausalityDataset, TraceError, Tracer};
use crate::trajspace::{fiber_events, GraphError, GraphLocation, TrajectoryGraph};

/// Cosines above `1 - COSINE_TOLERANCE` count as shared directions.
pub const COSINE_TOLERANCE: f64 = 1e-8;
pub const MIN_SPECTRAL_GAP: f64 = 1e-4;
pub const FIBER_TOLERANCE: f64 = 1e-8;
/// Singular values below `max / CONDITION_LIMIT` are dropped when
/// orthonormalizing a basis.
pub const CONDITION_LIMIT: f64 = 1e8;

#[derive(Debug, Error)]
pub enum AlgebraError {
    #[error("generator `{generator}` varies by {spread} on fiber {fiber}")]
    ConstraintViolation { generator: String, fiber: usize, spread: f64 },
    #[error("principal angles inconclusive: {dim} shared directions, gap {gap}")]
    IllConditioned { dim: usize, gap: f64 },
    #[error("f({}, {}) = {value} outside the boundary range [{}, {}]", at[0], at[1], range[0], range[1])]
    RangeViolation { at: [f64; 2], value: f64, range: [f64; 2] },
    #[error("least squares solve failed: {0}")]
    SolverDiverged(String),
    #[error("no first integral available for this flow")]
    NoFirstIntegral,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteriorSample {
    pub cell: [usize; 2],
    pub p: [f64; 2],
    pub f: f64,
    pub location: GraphLocation,
    /// First boundary event of the trajectory through the point.
    pub entry: BoundaryPoint,
    pub u: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundarySample {
    pub b: BoundaryPoint,
    pub p: [f64; 2],
    pub f: f64,
    /// Index of the dataset sample whose fiber holds this point.
    pub fiber: usize,
    pub location: GraphLocation,
    pub u: f64,
}

/// Transverse coordinate used by the generators.
#[derive(Debug, Clone, PartialEq)]
pub enum Transverse {
    /// A global first integral of the field.
    Ambient(Expr),
    /// The coordinate along each graph edge.
    EdgeCoordinate,
}

#[derive(Debug, Clone)]
pub struct SampleGrid {
    pub interior: Vec<InteriorSample>,
    pub boundary: Vec<BoundarySample>,
    pub f_range: [f64; 2],
    pub u_range: [f64; 2],
    pub transverse: Transverse,
    pub graph: TrajectoryGraph,
    /// `u` range per edge over the sampled points.
    pub edge_u: Vec<[f64; 2]>,
}

fn range_of(values: impl Iterator<Item = f64>) -> [f64; 2] {
    values.fold([f64::INFINITY, f64::NEG_INFINITY], |r, v| [r[0].min(v), r[1].max(v)])
}

fn edge_coordinate(loc: GraphLocation) -> f64 {
    match loc {
        GraphLocation::Edge { coordinate, .. } => coordinate,
        GraphLocation::Vertex(_) => 0.0,
    }
}

impl SampleGrid {
    /// Samples an `n × n` interior grid and every fiber event of the dataset.
    pub fn build(
        scene: &BuiltScene,
        dataset: &CausalityDataset,
        graph: &TrajectoryGraph,
        n: usize,
    ) -> Result<SampleGrid, AlgebraError> {
        let tracer = scene.tracer();
        let transverse = match scene.flow.first_integral() {
            Some(e) => Transverse::Ambient(e),
            None => Transverse::EdgeCoordinate,
        };
        let u_of = |p: Point, loc: GraphLocation| match &transverse {
            Transverse::Ambient(e) => e.eval_xy(p.x, p.y),
            Transverse::EdgeCoordinate => edge_coordinate(loc),
        };
        let interior = interior_grid(&scene.domain, n)
            .par_iter()
            .map(|&(cell, p)| -> Result<InteriorSample, AlgebraError> {
                let fiber = fiber_events(&tracer.fiber_of_point(p)?);
                let location = graph.project(&fiber, &dataset.curve_lengths)?;
                let first = fiber
                    .iter()
                    .min_by(|a, b| a.f.total_cmp(&b.f))
                    .ok_or(TraceError::FieldDegenerate { at: [p.x, p.y] })?;
                Ok(InteriorSample {
                    cell,
                    p: [p.x, p.y],
                    f: scene.flow.f_value(p),
                    location,
                    entry: BoundaryPoint::new(first.curve, first.t),
                    u: u_of(p, location),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut boundary = Vec::new();
        for (i, s) in dataset.samples.iter().enumerate() {
            let location = graph.project(&s.fiber, &dataset.curve_lengths)?;
            for e in &s.fiber {
                let b = BoundaryPoint::new(e.curve, e.t);
                let p = scene.domain.position(b);
                boundary.push(BoundarySample {
                    b,
                    p: [p.x, p.y],
                    f: e.f,
                    fiber: i,
                    location,
                    u: u_of(p, location),
                });
            }
        }
        let f_range = range_of(dataset.f_boundary.iter().flatten().copied());
        let u_range = range_of(interior.iter().map(|s| s.u).chain(boundary.iter().map(|s| s.u)));
        let mut edge_u = vec![[f64::INFINITY, f64::NEG_INFINITY]; graph.edges.len()];
        for s in &boundary {
            if let GraphLocation::Edge { edge, .. } = s.location {
                edge_u[edge] = [edge_u[edge][0].min(s.u), edge_u[edge][1].max(s.u)];
            }
        }
        Ok(SampleGrid {
            interior,
            boundary,
            f_range,
            u_range,
            transverse,
            graph: graph.clone(),
            edge_u,
        })
    }

    /// Values of an expression in `x, y` at the interior points.
    pub fn evaluate(&self, e: &Expr) -> Vec<f64> {
        self.interior.iter().map(|s| e.eval_xy(s.p[0], s.p[1])).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpaceKind {
    BoundaryAll,
    VInvariant,
    FPullback,
    InteriorAll,
}

/// A finite family of functions sampled on a grid: one row per function.
#[derive(Debug, Clone)]
pub struct FunctionSpace {
    pub kind: SpaceKind,
    pub names: Vec<String>,
    pub interior: DMatrix<f64>,
    pub boundary: DMatrix<f64>,
}

impl FunctionSpace {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// The first `k` functions.
    pub fn truncated(&self, k: usize) -> FunctionSpace {
        let k = k.min(self.len());
        FunctionSpace {
            kind: self.kind,
            names: self.names[..k].to_vec(),
            interior: self.interior.rows(0, k).into_owned(),
            boundary: self.boundary.rows(0, k).into_owned(),
        }
    }

    /// Orthonormal basis (columns) of the span of the interior samples.
    pub fn orthonormal(&self) -> DMatrix<f64> {
        let svd = self.interior.transpose().svd(true, false);
        let u = svd.u.expect("requested U");
        let top = svd.singular_values.max();
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&i| svd.singular_values[i] > top / CONDITION_LIMIT)
            .collect();
        DMatrix::from_fn(u.nrows(), keep.len(), |r, c| u[(r, keep[c])])
    }

    pub fn numerical_rank(&self) -> usize {
        self.orthonormal().ncols()
    }

    /// Largest spread of any function over a single sampled fiber, with the
    /// function index and fiber.
    pub fn fiber_spread(&self, grid: &SampleGrid) -> (f64, usize, usize) {
        let mut worst = (0.0, 0, 0);
        for g in 0..self.len() {
            let mut ranges: HashMap<usize, [f64; 2]> = HashMap::new();
            for (k, s) in grid.boundary.iter().enumerate() {
                let v = self.boundary[(g, k)];
                let r = ranges.entry(s.fiber).or_insert([v, v]);
                *r = [r[0].min(v), r[1].max(v)];
            }
            let scale = self.boundary.row(g).amax().max(1.0);
            for (fiber, r) in ranges {
                let spread = (r[1] - r[0]) / scale;
                if spread > worst.0 {
                    worst = (spread, g, fiber);
                }
            }
        }
        worst
    }
}

/// Chebyshev polynomials `T_0..T_{n-1}` at `z`.
fn chebyshev(z: f64, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        out.push(match k {
            0 => 1.0,
            1 => z,
            _ => 2.0 * z * out[k - 1] - out[k - 2],
        });
    }
    out
}

fn normalized(v: f64, range: [f64; 2]) -> f64 {
    let w = range[1] - range[0];
    if w > 0.0 {
        (2.0 * (v - range[0]) / w - 1.0).clamp(-1.0, 1.0)
    } else {
        0.0
    }
}

/// Smooth bump on `[lo, hi]`, flat to all orders at both ends.
fn bump(u: f64, r: [f64; 2]) -> f64 {
    let w = r[1] - r[0];
    if !(w > 0.0) {
        return 0.0;
    }
    let z = 2.0 * (u - r[0]) / w - 1.0;
    if z.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - z * z)).exp()
    }
}

fn on_edge(loc: GraphLocation, e: usize) -> bool {
    matches!(loc, GraphLocation::Edge { edge, .. } if edge == e)
}

/// Functions constant along trajectories: the constant, Chebyshev
/// polynomials in the first integral, and one bump per edge supported on
/// that edge's trajectories. Without a first integral the polynomials are
/// replaced by bumps times polynomials in each edge coordinate.
pub fn build_v_invariant_space(grid: &SampleGrid, generator_count: usize) -> Result<FunctionSpace, AlgebraError> {
    type Gen<'a> = Box<dyn Fn(f64, GraphLocation) -> f64 + Sync + 'a>;
    let mut names: Vec<String> = vec!["1".into()];
    let mut gens: Vec<Gen> = vec![Box::new(|_, _| 1.0)];
    let ur = grid.u_range;
    match grid.transverse {
        Transverse::Ambient(_) => {
            for k in 1..generator_count.max(1) {
                names.push(format!("T{k}(u)"));
                gens.push(Box::new(move |u, _| chebyshev(normalized(u, ur), k + 1)[k]));
            }
            for (e, r) in grid.edge_u.iter().enumerate() {
                if grid.graph.edges[e].is_loop() {
                    continue;
                }
                let r = *r;
                names.push(format!("bump[{e}]"));
                gens.push(Box::new(move |u, loc| if on_edge(loc, e) { bump(u, r) } else { 0.0 }));
            }
        }
        Transverse::EdgeCoordinate => {
            let per_edge = (generator_count.saturating_sub(1) / grid.graph.edges.len().max(1)).max(1);
            for e in 0..grid.graph.edges.len() {
                for k in 0..per_edge {
                    names.push(format!("bump[{e}]*T{k}(s)"));
                    gens.push(Box::new(move |s, loc| {
                        if on_edge(loc, e) {
                            bump(s, [0.0, 1.0]) * chebyshev(2.0 * s - 1.0, k + 1)[k]
                        } else {
                            0.0
                        }
                    }));
                }
            }
        }
    }
    let interior = DMatrix::from_fn(gens.len(), grid.interior.len(), |g, k| {
        let s = &grid.interior[k];
        gens[g](s.u, s.location)
    });
    let boundary = DMatrix::from_fn(gens.len(), grid.boundary.len(), |g, k| {
        let s = &grid.boundary[k];
        gens[g](s.u, s.location)
    });
    let space = FunctionSpace {
        kind: SpaceKind::VInvariant,
        names,
        interior,
        boundary,
    };
    let (spread, g, fiber) = space.fiber_spread(grid);
    if spread > FIBER_TOLERANCE {
        return Err(AlgebraError::ConstraintViolation {
            generator: space.names[g].clone(),
            fiber,
            spread,
        });
    }
    Ok(space)
}

/// Chebyshev polynomials of degree `0..=degree` in `f`, with the boundary
/// range of `f` mapped to `[-1, 1]`.
pub fn build_f_pullback_space(grid: &SampleGrid, degree: usize) -> FunctionSpace {
    let n = degree + 1;
    let fr = grid.f_range;
    let names = (0..n).map(|j| format!("T{j}(f)")).collect();
    let eval = |f: f64| chebyshev(normalized(f, fr), n);
    let interior_cols: Vec<Vec<f64>> = grid.interior.iter().map(|s| eval(s.f)).collect();
    let boundary_cols: Vec<Vec<f64>> = grid.boundary.iter().map(|s| eval(s.f)).collect();
    FunctionSpace {
        kind: SpaceKind::FPullback,
        names,
        interior: DMatrix::from_fn(n, interior_cols.len(), |j, k| interior_cols[k][j]),
        boundary: DMatrix::from_fn(n, boundary_cols.len(), |j, k| boundary_cols[k][j]),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intersection {
    pub dim: usize,
    pub spectral_gap: f64,
    pub cosines: Vec<f64>,
}

/// Dimension of the intersection of two sampled spaces from the cosines of
/// their principal angles.
pub fn intersection_dimension(a: &FunctionSpace, b: &FunctionSpace) -> Result<Intersection, AlgebraError> {
    let qa = a.orthonormal();
    let qb = b.orthonormal();
    let m = qa.transpose() * qb;
    let mut cosines: Vec<f64> = m.singular_values().iter().map(|c| c.min(1.0)).collect();
    cosines.sort_by(|x, y| y.total_cmp(x));
    let dim = cosines.iter().filter(|&&c| c > 1.0 - COSINE_TOLERANCE).count();
    let above = if dim == 0 { 1.0 } else { cosines[dim - 1] };
    let below = cosines.get(dim).copied().unwrap_or(0.0);
    let gap = above - below;
    if gap < MIN_SPECTRAL_GAP {
        return Err(AlgebraError::IllConditioned { dim, gap });
    }
    Ok(Intersection {
        dim,
        spectral_gap: gap,
        cosines,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorFit {
    pub rank: usize,
    /// Relative L² error on the interior grid.
    pub residual: f64,
    /// `coefficients[i][j]` multiplies `a_i · (b_j ∘ f)`.
    pub coefficients: Vec<Vec<f64>>,
}

/// Least-squares fit of `target` by `Σ_i a_i · g_i(f)` over the first `rank`
/// functions `a_i` of `a`, with each `g_i` in the span of the first `rank`
/// functions of `b`.
pub fn tensor_approximation(
    target: &[f64],
    a: &FunctionSpace,
    b: &FunctionSpace,
    rank: usize,
) -> Result<TensorFit, AlgebraError> {
    let ra = rank.min(a.len());
    let rb = rank.min(b.len());
    let n = target.len();
    if n != a.interior.ncols() || n != b.interior.ncols() {
        return Err(AlgebraError::SolverDiverged("target and spaces sampled on different grids".into()));
    }
    let features = DMatrix::from_fn(n, ra * rb, |k, c| a.interior[(c / rb, k)] * b.interior[(c % rb, k)]);
    let rhs = DVector::from_column_slice(target);
    let svd = features.clone().svd(true, true);
    let eps = svd.singular_values.max() * 1e-13;
    let sol = svd.solve(&rhs, eps).map_err(|e| AlgebraError::SolverDiverged(e.to_string()))?;
    let fit = &features * &sol;
    let norm = rhs.norm();
    let residual = if norm > 0.0 { (rhs - fit).norm() / norm } else { (rhs - fit).norm() };
    if !residual.is_finite() {
        return Err(AlgebraError::SolverDiverged("non-finite residual".into()));
    }
    Ok(TensorFit {
        rank,
        residual,
        coefficients: (0..ra).map(|i| (0..rb).map(|j| sol[i * rb + j]).collect()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum HfOutcome {
    Verified {
        range: [f64; 2],
        probes: usize,
        /// Largest `sup_X |φ∘f| − sup_range |φ|` over the probes.
        max_excess: f64,
    },
    /// The boundary range of `f` has several components; repair `f` first.
    NotApplicable { components: usize },
}

fn sup_on_interval(phi: &dyn Fn(f64) -> f64, r: [f64; 2]) -> f64 {
    const N: usize = 4096;
    let h = (r[1] - r[0]) / N as f64;
    let vals: Vec<f64> = (0..=N).map(|i| phi(r[0] + i as f64 * h).abs()).collect();
    let mut best = vals.iter().copied().fold(0.0, f64::max);
    // refine around the three largest samples
    let mut idx: Vec<usize> = (0..=N).collect();
    idx.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
    for &i in idx.iter().take(3) {
        let (mut a, mut b) = ((r[0] + (i as f64 - 1.0) * h).max(r[0]), (r[0] + (i as f64 + 1.0) * h).min(r[1]));
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..60 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if phi(c).abs() > phi(d).abs() {
                b = d;
            } else {
                a = c;
            }
        }
        best = best.max(phi(0.5 * (a + b)).abs());
    }
    best
}

/// Checks that `f` on the interior stays in its boundary range, and that
/// `φ∘f` is bounded by `φ` on that range for random smooth `φ`.
pub fn check_hf_boundary(
    flow: &FlowSpec,
    domain: &Domain,
    grid: usize,
    probe_count: usize,
    seed: u64,
) -> Result<HfOutcome, AlgebraError> {
    let ranges = boundary_f_ranges(domain, flow);
    let components = range_components(&ranges);
    if components.len() > 1 {
        return Ok(HfOutcome::NotApplicable {
            components: components.len(),
        });
    }
    let range = [components[0].0, components[0].1];
    let tol = 1e-9 * (range[1] - range[0]).abs().max(1.0);
    let points = interior_grid(domain, grid);
    let values: Vec<f64> = points.iter().map(|(_, p)| flow.f_value(*p)).collect();
    for ((_, p), &v) in points.iter().zip(&values) {
        if v < range[0] - tol || v > range[1] + tol {
            return Err(AlgebraError::RangeViolation {
                at: [p.x, p.y],
                value: v,
                range,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_excess = f64::NEG_INFINITY;
    for _ in 0..probe_count {
        let terms: Vec<(f64, f64, f64)> = (0..4)
            .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(0.0..6.0), rng.gen_range(0.0..6.3)))
            .collect();
        let phi = |s: f64| terms.iter().map(|(a, w, ph)| a * (w * s + ph).cos()).sum::<f64>();
        let inside = values.iter().map(|&v| phi(v).abs()).fold(0.0, f64::max);
        let excess = inside - sup_on_interval(&phi, range);
        max_excess = max_excess.max(excess);
        if excess > 1e-8 {
            let (k, _) = values
                .iter()
                .enumerate()
                .max_by(|a, b| phi(*a.1).abs().total_cmp(&phi(*b.1).abs()))
                .expect("grid is not empty");
            let p = points[k].1;
            return Err(AlgebraError::RangeViolation {
                at: [p.x, p.y],
                value: values[k],
                range,
            });
        }
    }
    Ok(HfOutcome::Verified {
        range,
        probes: probe_count,
        max_excess,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LieJetRecord {
    pub function: String,
    pub point: BoundaryPoint,
    pub psi: f64,
    /// `L_v ψ` from a central difference along the boundary.
    pub lv_boundary: f64,
    /// `L_v ψ` from following the flow and projecting back to the boundary.
    pub lv_trace: f64,
    /// One-sided limits of `L_v ψ` (before and after the point in `t`).
    pub lv_left: f64,
    pub lv_right: f64,
    pub consistent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjectureReport {
    pub function: String,
    pub fiber_spread: f64,
    pub fiber_constant: bool,
    pub jets: Vec<LieJetRecord>,
    pub lie_vanishes: bool,
    pub in_m_cv: bool,
    pub extension_smoothness_score: f64,
    /// A member whose extension looks non-smooth, for manual review.
    pub flagged: bool,
}

pub const LIE_TOLERANCE: f64 = 1e-5;
pub const SMOOTHNESS_FLAG: f64 = 1e-3;

fn lie_jet(
    name: &str,
    tracer: &Tracer,
    psi: &(dyn Fn(BoundaryPoint, Point) -> f64 + Sync),
    b: BoundaryPoint,
) -> Result<LieJetRecord, AlgebraError> {
    let domain = tracer.domain();
    let flow = tracer.flow();
    let on = |t: f64| {
        let q = BoundaryPoint::new(b.curve, t);
        psi(q, domain.position(q))
    };
    let p = domain.position(b);
    let jet = domain.jet(b);
    let v = flow.velocity(p);
    // d/dt along the boundary turns into L_v by this factor at a tangency
    let factor = v.dot(&jet.d1) / jet.d1.norm_squared();
    let h = 1e-5;
    let central = (on(b.t + h) - on(b.t - h)) / (2.0 * h) * factor;
    let one_sided = |sign: f64| {
        let d = |h: f64| (on(b.t + sign * h) - on(b.t)) / h * sign;
        (2.0 * d(h / 2.0) - d(h)) * factor
    };
    let dphi = 1e-5;
    let level = flow.f_value(p);
    let project = |q: Point| {
        let (_, t) = domain.curve_distance(b.curve, q);
        on(t)
    };
    let ahead = project(tracer.advance_to_level(p, level + dphi)?);
    let behind = project(tracer.advance_to_level(p, level - dphi)?);
    let trace = (ahead - behind) / (2.0 * dphi) * flow.dfv(p);
    Ok(LieJetRecord {
        function: name.to_string(),
        point: b,
        psi: on(b.t),
        lv_boundary: central,
        lv_trace: trace,
        lv_left: one_sided(-1.0),
        lv_right: one_sided(1.0),
        consistent: (central - trace).abs() <= LIE_TOLERANCE * central.abs().max(1.0),
    })
}

/// Tests a boundary function for membership in the algebra of functions
/// constant on causality orbits whose flow derivative vanishes at the
/// tangencies, and scores the smoothness of its extension to the interior.
pub fn conjecture_probe(
    name: &str,
    tracer: &Tracer,
    dataset: &CausalityDataset,
    strata: &MorseStrata,
    grid: &SampleGrid,
    psi: &(dyn Fn(BoundaryPoint, Point) -> f64 + Sync),
) -> Result<ConjectureReport, AlgebraError> {
    let domain = tracer.domain();
    let mut scale: f64 = 1.0;
    let mut fiber_spread: f64 = 0.0;
    for s in &dataset.samples {
        let vals: Vec<f64> = s
            .fiber
            .iter()
            .map(|e| {
                let b = BoundaryPoint::new(e.curve, e.t);
                psi(b, domain.position(b))
            })
            .collect();
        let r = range_of(vals.iter().copied());
        scale = scale.max(r[0].abs()).max(r[1].abs());
        fiber_spread = fiber_spread.max(r[1] - r[0]);
    }
    let fiber_spread = fiber_spread / scale;
    let jets = strata
        .tangency_points
        .iter()
        .map(|t| lie_jet(name, tracer, psi, t.point))
        .collect::<Result<Vec<_>, _>>()?;
    let lie_vanishes = jets
        .iter()
        .all(|j| j.lv_left.abs() <= LIE_TOLERANCE * scale && j.lv_right.abs() <= LIE_TOLERANCE * scale);
    let fiber_constant = fiber_spread <= FIBER_TOLERANCE;
    let in_m_cv = fiber_constant && lie_vanishes;

    // pull back through the first event of each interior trajectory
    let value: HashMap<[usize; 2], (f64, GraphLocation, [f64; 2])> = grid
        .interior
        .iter()
        .map(|s| (s.cell, (psi(s.entry, domain.position(s.entry)), s.location, s.p)))
        .collect();
    let gradient = |c: [usize; 2]| -> Option<[f64; 2]> {
        let (v, _, p) = value.get(&c)?;
        let (vr, _, pr) = value.get(&[c[0] + 1, c[1]])?;
        let (vu, _, pu) = value.get(&[c[0], c[1] + 1])?;
        Some([(vr - v) / (pr[0] - p[0]), (vu - v) / (pu[1] - p[1])])
    };
    let edge_of = |loc: GraphLocation| match loc {
        GraphLocation::Edge { edge, .. } => Some(edge),
        GraphLocation::Vertex(_) => None,
    };
    let mut score: f64 = 0.0;
    for (&c, &(_, loc, _)) in &value {
        let Some(ga) = gradient(c) else { continue };
        for n in [[c[0] + 1, c[1]], [c[0], c[1] + 1]] {
            let Some(&(_, nloc, _)) = value.get(&n) else { continue };
            if edge_of(nloc) == edge_of(loc) {
                continue;
            }
            let Some(gb) = gradient(n) else { continue };
            score = score.max(((ga[0] - gb[0]).powi(2) + (ga[1] - gb[1]).powi(2)).sqrt() / scale);
        }
    }
    Ok(ConjectureReport {
        function: name.to_string(),
        fiber_spread,
        fiber_constant,
        jets,
        lie_vanishes,
        in_m_cv,
        extension_smoothness_score: score,
        flagged: in_m_cv && score > SMOOTHNESS_FLAG,
    })
}

/// `ψ` given as an expression in `x, y` (position), `t` (curve parameter) and
/// `c` (curve index).
pub fn boundary_function(e: &Expr) -> impl Fn(BoundaryPoint, Point) -> f64 + Sync + '_ {
    move |b, p| e.eval(&[p.x, p.y, b.t, b.curve as f64])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzCandidate {
    pub seed: u64,
    pub index: usize,
    pub psi: String,
}

/// Random trigonometric polynomials in the first integral: constant on
/// every fiber, with vanishing flow derivative everywhere.
pub fn fuzz_candidates(flow: &FlowSpec, u_range: [f64; 2], seed: u64, count: usize) -> Result<Vec<FuzzCandidate>, AlgebraError> {
    let u = flow.first_integral().ok_or(AlgebraError::NoFirstIntegral)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = (u_range[1] - u_range[0]).max(1e-12);
    Ok((0..count)
        .map(|index| {
            let terms: Vec<String> = (0..3)
                .map(|_| {
                    let a: f64 = rng.gen_range(-1.0..1.0);
                    let k: f64 = rng.gen_range(0.5..4.0) / w;
                    let ph: f64 = rng.gen_range(0.0..6.3);
                    format!("{a:.6} * cos({k:.6} * ({u}) + {ph:.6})")
                })
                .collect();
            FuzzCandidate {
                seed,
                index,
                psi: terms.join(" + "),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chebyshev_recurrence() {
        let z: f64 = 0.3;
        let t = chebyshev(z, 6);
        for (k, v) in t.iter().enumerate() {
            assert!((v - (k as f64 * z.acos()).cos()).abs() < 1e-14);
        }
    }

    #[test]
    fn bump_is_flat_at_the_ends() {
        assert_eq!(bump(0.0, [0.0, 1.0]), 0.0);
        assert!(bump(1e-3, [0.0, 1.0]) < 1e-100);
        assert!((bump(0.5, [0.0, 1.0]) - 1.0).abs() < 1e-15);
    }
}
