//! Vector fields with a Lyapunov function, their boundary tangencies, and the
//! range repair for disconnected boundary values of `f`.

use nalgebra::Matrix2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Expr, Var};
use crate::geometry::{canonical_t, BoundaryPoint, Domain, Point};

pub const DEFAULT_POSITIVITY_MARGIN: f64 = 1e-6;
pub const DEFAULT_REFINE_TOLERANCE: f64 = 1e-12;
pub const DEFAULT_GRID_RESOLUTION: usize = 200;

const SCAN_SAMPLES: usize = 4096;
const FD_STEP: f64 = 1e-5;
const ORDER_ONE_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("field is not traversing: min df(v) = {min_dfv:e} at ({}, {})", witness[0], witness[1])]
    NotTraversing { min_dfv: f64, witness: [f64; 2] },
    #[error("conformal factor is not positive: min = {min:e} at ({}, {})", witness[0], witness[1])]
    NonPositiveLambda { min: f64, witness: [f64; 2] },
    #[error("field is not boundary generic near curve {curve}, t = {t}")]
    NotBoundaryGeneric { curve: usize, t: f64 },
    #[error("tangency points on curve {curve} cluster below the refine tolerance near t = {t}")]
    DegenerateRootCluster { curve: usize, t: f64 },
    #[error("range repair failed: min df(v) = {margin:e} after bumping")]
    RepairFailed { margin: f64 },
}

/// A vector field `v = (vx, vy)`, a Lyapunov function `f`, and an optional
/// positive conformal factor `λ`. The effective field is `λ·v`.
#[derive(Debug, Clone)]
pub struct FlowSpec {
    vx: Expr,
    vy: Expr,
    f: Expr,
    lambda: Option<Expr>,
    // effective field and derivatives
    ex: Expr,
    ey: Expr,
    jac: [Expr; 4],
    grad_f: [Expr; 2],
}

impl FlowSpec {
    pub fn new(vx: Expr, vy: Expr, f: Expr, lambda: Option<Expr>) -> Self {
        let (ex, ey) = match &lambda {
            Some(l) => (l.mul(&vx), l.mul(&vy)),
            None => (vx.clone(), vy.clone()),
        };
        let jac = [
            ex.derivative(Var::X),
            ex.derivative(Var::Y),
            ey.derivative(Var::X),
            ey.derivative(Var::Y),
        ];
        let grad_f = [f.derivative(Var::X), f.derivative(Var::Y)];
        FlowSpec {
            vx,
            vy,
            f,
            lambda,
            ex,
            ey,
            jac,
            grad_f,
        }
    }

    /// Parses the component expressions.
    pub fn parse(vx: &str, vy: &str, f: &str, lambda: Option<&str>) -> Result<Self, crate::expr::ExprError> {
        Ok(FlowSpec::new(
            Expr::parse(vx)?,
            Expr::parse(vy)?,
            Expr::parse(f)?,
            lambda.map(Expr::parse).transpose()?,
        ))
    }

    pub fn vx(&self) -> &Expr {
        &self.vx
    }
    pub fn vy(&self) -> &Expr {
        &self.vy
    }
    pub fn f(&self) -> &Expr {
        &self.f
    }
    pub fn lambda(&self) -> Option<&Expr> {
        self.lambda.as_ref()
    }

    /// Same field and `f`, with conformal factor `λ` (replacing any previous one).
    pub fn with_lambda(&self, lambda: Expr) -> Self {
        FlowSpec::new(self.vx.clone(), self.vy.clone(), self.f.clone(), Some(lambda))
    }

    pub fn with_f(&self, f: Expr) -> Self {
        FlowSpec::new(self.vx.clone(), self.vy.clone(), f, self.lambda.clone())
    }

    /// The reversed flow `(-v, -f)`.
    pub fn reversed(&self) -> Self {
        FlowSpec::new(self.vx.neg(), self.vy.neg(), self.f.neg(), self.lambda.clone())
    }

    /// A closed-form first integral of `v` when the field is constant:
    /// `u = v_y·x − v_x·y`, constant along every trajectory.
    pub fn first_integral(&self) -> Option<Expr> {
        if !(self.vx.is_constant() && self.vy.is_constant()) {
            return None;
        }
        let (a, b) = (self.vx.eval_xy(0.0, 0.0), self.vy.eval_xy(0.0, 0.0));
        Some(
            Expr::constant(b)
                .mul(&Expr::var(Var::X))
                .add(&Expr::constant(-a).mul(&Expr::var(Var::Y))),
        )
    }

    /// The flow pushed forward by the rotation about the origin by `angle`.
    pub fn rotated(&self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let (x, y) = (Expr::var(Var::X), Expr::var(Var::Y));
        // preimage of (x, y) under the rotation
        let px = Expr::constant(c).mul(&x).add(&Expr::constant(s).mul(&y));
        let py = Expr::constant(-s).mul(&x).add(&Expr::constant(c).mul(&y));
        let pull = |e: &Expr| e.substitute_xy(&px, &py);
        let (vx, vy) = (pull(&self.vx), pull(&self.vy));
        FlowSpec::new(
            Expr::constant(c).mul(&vx).add(&Expr::constant(-s).mul(&vy)),
            Expr::constant(s).mul(&vx).add(&Expr::constant(c).mul(&vy)),
            pull(&self.f),
            self.lambda.as_ref().map(pull),
        )
    }

    #[inline]
    pub fn velocity(&self, p: Point) -> Point {
        Point::new(self.ex.eval_xy(p.x, p.y), self.ey.eval_xy(p.x, p.y))
    }

    pub fn jacobian(&self, p: Point) -> Matrix2<f64> {
        let e = |k: usize| self.jac[k].eval_xy(p.x, p.y);
        Matrix2::new(e(0), e(1), e(2), e(3))
    }

    #[inline]
    pub fn f_value(&self, p: Point) -> f64 {
        self.f.eval_xy(p.x, p.y)
    }

    #[inline]
    pub fn grad_f(&self, p: Point) -> Point {
        Point::new(self.grad_f[0].eval_xy(p.x, p.y), self.grad_f[1].eval_xy(p.x, p.y))
    }

    /// `df(λv)` at `p`.
    #[inline]
    pub fn dfv(&self, p: Point) -> f64 {
        self.grad_f(p).dot(&self.velocity(p))
    }

    /// `⟨λv, n_in⟩` at a boundary point.
    pub fn normal_component(&self, domain: &Domain, b: BoundaryPoint) -> f64 {
        let frame = domain.boundary_frame(b);
        self.velocity(frame.position).dot(&frame.inward_normal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraversalReport {
    pub min_dfv: f64,
    pub witness: [f64; 2],
    pub ok: bool,
}

fn ambient_grid(domain: &Domain, n: usize) -> Vec<Point> {
    let (lo, hi) = domain.bounding_box();
    let m = domain.ambient_margin();
    let lo = lo - Point::new(m, m);
    let hi = hi + Point::new(m, m);
    let n = n.max(2);
    let rows: Vec<Vec<Point>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let y = lo.y + (hi.y - lo.y) * j as f64 / (n - 1) as f64;
            (0..n)
                .map(|i| Point::new(lo.x + (hi.x - lo.x) * i as f64 / (n - 1) as f64, y))
                .filter(|p| domain.in_ambient(*p))
                .collect()
        })
        .collect();
    rows.into_iter().flatten().collect()
}

fn grid_minimum(points: &[Point], g: impl Fn(Point) -> f64 + Sync) -> (f64, Point) {
    points
        .par_iter()
        .map(|p| (g(*p), *p))
        .reduce(
            || (f64::INFINITY, Point::zeros()),
            |a, b| if b.0 < a.0 || (b.0 == a.0 && (b.1.x, b.1.y) < (a.1.x, a.1.y)) { b } else { a },
        )
}

/// Grid certification of `df(v) > margin` over the ambient collar, plus
/// positivity of the conformal factor.
pub fn check_traversing(
    domain: &Domain,
    flow: &FlowSpec,
    grid_resolution: usize,
    margin: f64,
) -> Result<TraversalReport, FlowError> {
    let points = ambient_grid(domain, grid_resolution);
    // the boundary itself is always sampled
    let mut points = points;
    for id in 0..domain.curve_count() {
        for k in 0..256 {
            points.push(domain.position(BoundaryPoint::new(id, k as f64 / 256.0)));
        }
    }
    if let Some(l) = flow.lambda() {
        let (min, w) = grid_minimum(&points, |p| l.eval_xy(p.x, p.y));
        if !(min > 0.0) {
            return Err(FlowError::NonPositiveLambda {
                min,
                witness: [w.x, w.y],
            });
        }
    }
    let (min_dfv, w) = grid_minimum(&points, |p| flow.dfv(p));
    if !(min_dfv > margin) {
        return Err(FlowError::NotTraversing {
            min_dfv,
            witness: [w.x, w.y],
        });
    }
    Ok(TraversalReport {
        min_dfv,
        witness: [w.x, w.y],
        ok: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TangencyKind {
    /// The trajectory germ stays outside `X` on both sides.
    External,
    /// The trajectory passes through the interior on both sides.
    Internal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tangency {
    pub point: BoundaryPoint,
    pub order: u8,
    /// +1 when `v` points into the inward arc, -1 otherwise.
    pub sign: i8,
    pub kind: TangencyKind,
}

/// A boundary arc running counterclockwise in `t` from `start` to `end`
/// (`end` may exceed 1 when the arc wraps).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arc {
    pub curve: usize,
    pub start: f64,
    pub end: f64,
}

impl Arc {
    pub fn contains(&self, curve: usize, t: f64) -> bool {
        if curve != self.curve {
            return false;
        }
        let rel = (t - self.start).rem_euclid(1.0);
        rel > 0.0 && rel < self.end - self.start || (self.end - self.start >= 1.0)
    }

    pub fn width(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorseStrata {
    pub positive_arcs: Vec<Arc>,
    pub negative_arcs: Vec<Arc>,
    pub tangency_points: Vec<Tangency>,
}

impl MorseStrata {
    /// Tangencies on one curve, ordered by parameter.
    pub fn tangencies_on(&self, curve: usize) -> Vec<Tangency> {
        let mut v: Vec<Tangency> = self
            .tangency_points
            .iter()
            .filter(|p| p.point.curve == curve)
            .copied()
            .collect();
        v.sort_by(|a, b| a.point.t.total_cmp(&b.point.t));
        v
    }

    pub fn is_positive(&self, b: BoundaryPoint) -> bool {
        self.positive_arcs.iter().any(|a| a.contains(b.curve, b.t))
    }

    pub fn is_negative(&self, b: BoundaryPoint) -> bool {
        self.negative_arcs.iter().any(|a| a.contains(b.curve, b.t))
    }

    /// Closest tangency on the same curve and its parameter distance.
    pub fn nearest_tangency(&self, b: BoundaryPoint) -> Option<(Tangency, f64)> {
        self.tangency_points
            .iter()
            .filter(|p| p.point.curve == b.curve)
            .map(|p| (*p, crate::geometry::param_distance(p.point.t, b.t)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// Curvature gap between the trajectory and the boundary at a tangency:
/// positive when the trajectory bends into the domain.
pub fn tangency_curvature_gap(domain: &Domain, flow: &FlowSpec, b: BoundaryPoint) -> f64 {
    let frame = domain.boundary_frame(b);
    let v = flow.velocity(frame.position);
    let k_traj = (flow.jacobian(frame.position) * v).dot(&frame.inward_normal) / v.norm_squared();
    k_traj - domain.boundary_curvature(b)
}

pub fn tangency_kind(domain: &Domain, flow: &FlowSpec, b: BoundaryPoint) -> TangencyKind {
    if tangency_curvature_gap(domain, flow, b) > 0.0 {
        TangencyKind::Internal
    } else {
        TangencyKind::External
    }
}

fn sign_of(g: f64) -> i8 {
    if g > 0.0 {
        1
    } else {
        -1
    }
}

/// Finds the tangency points of the flow with every boundary curve and
/// classifies them; the arcs between them carry the sign of `⟨v, n_in⟩`.
pub fn morse_stratify(
    domain: &Domain,
    flow: &FlowSpec,
    refine_tolerance: f64,
) -> Result<MorseStrata, FlowError> {
    let mut strata = MorseStrata {
        positive_arcs: Vec::new(),
        negative_arcs: Vec::new(),
        tangency_points: Vec::new(),
    };
    for curve in 0..domain.curve_count() {
        let g = |t: f64| flow.normal_component(domain, BoundaryPoint::new(curve, t));
        let n = SCAN_SAMPLES;
        let samples: Vec<f64> = (0..n).map(|i| g(i as f64 / n as f64)).collect();
        let scale = (0..n)
            .map(|i| flow.velocity(domain.position(BoundaryPoint::new(curve, i as f64 / n as f64))).norm())
            .fold(0.0f64, f64::max)
            .max(1e-300);

        let mut roots = Vec::new();
        for i in 0..n {
            let (a, b) = (i as f64 / n as f64, (i + 1) as f64 / n as f64);
            let (ga, gb) = (samples[i], samples[(i + 1) % n]);
            if sign_of(ga) != sign_of(gb) {
                roots.push(bisect(&g, a, b, sign_of(ga), refine_tolerance));
            } else {
                // a double root hides between same-sign samples when |g| dips
                let prev = samples[(i + n - 1) % n];
                if sign_of(prev) == sign_of(ga) && ga.abs() <= prev.abs() && ga.abs() <= gb.abs() {
                    let (tm, gm) = golden_min(&|t| g(t).abs(), a - 1.0 / n as f64, b);
                    if gm <= 1e-9 * scale {
                        return Err(FlowError::NotBoundaryGeneric {
                            curve,
                            t: canonical_t(tm),
                        });
                    }
                }
            }
        }
        for w in roots.windows(2) {
            if w[1] - w[0] < refine_tolerance {
                return Err(FlowError::DegenerateRootCluster { curve, t: w[0] });
            }
        }
        if roots.len() >= 2 && roots[0] + 1.0 - roots[roots.len() - 1] < refine_tolerance {
            return Err(FlowError::DegenerateRootCluster { curve, t: roots[0] });
        }

        for &t in &roots {
            let gp = (g(t + FD_STEP) - g(t - FD_STEP)) / (2.0 * FD_STEP);
            if gp.abs() <= ORDER_ONE_THRESHOLD * scale {
                return Err(FlowError::NotBoundaryGeneric { curve, t });
            }
            let b = BoundaryPoint::new(curve, t);
            let frame = domain.boundary_frame(b);
            let v = flow.velocity(frame.position);
            // direction of v along increasing t
            let along = v.dot(&frame.unit_tangent).signum();
            let sign = sign_of(gp * along);
            let k_traj = (flow.jacobian(frame.position) * v).dot(&frame.inward_normal) / v.norm_squared();
            let k_bdry = domain.boundary_curvature(b);
            let diff = k_traj - k_bdry;
            if diff.abs() <= 1e-9 * (k_traj.abs() + k_bdry.abs()).max(1e-12) {
                return Err(FlowError::NotBoundaryGeneric { curve, t });
            }
            let kind = if diff > 0.0 {
                TangencyKind::Internal
            } else {
                TangencyKind::External
            };
            strata.tangency_points.push(Tangency {
                point: b,
                order: 1,
                sign,
                kind,
            });
        }

        if roots.is_empty() {
            let arc = Arc {
                curve,
                start: 0.0,
                end: 1.0,
            };
            if samples[0] > 0.0 {
                strata.positive_arcs.push(arc);
            } else {
                strata.negative_arcs.push(arc);
            }
            continue;
        }
        for (k, &start) in roots.iter().enumerate() {
            let end = if k + 1 < roots.len() {
                roots[k + 1]
            } else {
                roots[0] + 1.0
            };
            let arc = Arc { curve, start, end };
            if g(0.5 * (start + end)) > 0.0 {
                strata.positive_arcs.push(arc);
            } else {
                strata.negative_arcs.push(arc);
            }
        }
    }
    Ok(strata)
}

fn bisect(g: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, sign_a: i8, tol: f64) -> f64 {
    while b - a > tol {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if sign_of(g(m)) == sign_a {
            a = m;
        } else {
            b = m;
        }
    }
    canonical_t(0.5 * (a + b))
}

fn golden_min(h: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut hc, mut hd) = (h(c), h(d));
    for _ in 0..80 {
        if hc < hd {
            b = d;
            d = c;
            hd = hc;
            c = b - r * (b - a);
            hc = h(c);
        } else {
            a = c;
            c = d;
            hc = hd;
            d = a + r * (b - a);
            hd = h(d);
        }
    }
    let t = 0.5 * (a + b);
    (t, h(t))
}

/// Per-curve `(min, max)` of `f` on the boundary and the parameter of the max.
pub fn boundary_f_ranges(domain: &Domain, flow: &FlowSpec) -> Vec<(f64, f64, f64)> {
    (0..domain.curve_count())
        .map(|c| {
            let mut lo = f64::INFINITY;
            let mut hi = (f64::NEG_INFINITY, 0.0);
            for i in 0..SCAN_SAMPLES {
                let t = i as f64 / SCAN_SAMPLES as f64;
                let v = flow.f_value(domain.position(BoundaryPoint::new(c, t)));
                lo = lo.min(v);
                if v > hi.0 {
                    hi = (v, t);
                }
            }
            // refine the maximum
            let (t, negv) = golden_min(
                &|t| -flow.f_value(domain.position(BoundaryPoint::new(c, t))),
                hi.1 - 1.0 / SCAN_SAMPLES as f64,
                hi.1 + 1.0 / SCAN_SAMPLES as f64,
            );
            (lo, (-negv).max(hi.0), canonical_t(t))
        })
        .collect()
}

/// Merges per-curve ranges into connected components, sorted ascending.
/// Each component lists the curves contributing to it.
pub fn range_components(ranges: &[(f64, f64, f64)]) -> Vec<(f64, f64, Vec<usize>)> {
    let mut idx: Vec<usize> = (0..ranges.len()).collect();
    idx.sort_by(|a, b| ranges[*a].0.total_cmp(&ranges[*b].0));
    let mut out: Vec<(f64, f64, Vec<usize>)> = Vec::new();
    for i in idx {
        let (lo, hi, _) = ranges[i];
        match out.last_mut() {
            Some(last) if lo <= last.1 => {
                last.1 = last.1.max(hi);
                last.2.push(i);
            }
            _ => out.push((lo, hi, vec![i])),
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct RepairOutcome {
    pub flow: FlowSpec,
    pub changed: bool,
    pub components_before: usize,
    pub bumps: usize,
    pub min_dfv: f64,
}

/// Makes `f(∂X)` a single interval by adding Gaussian bumps near boundary
/// maxima of the lower range components.
pub fn lyapunov_range_repair(
    domain: &Domain,
    flow: &FlowSpec,
    grid_resolution: usize,
    margin: f64,
) -> Result<RepairOutcome, FlowError> {
    let first = check_traversing(domain, flow, grid_resolution, margin)?;
    let comps = range_components(&boundary_f_ranges(domain, flow));
    let components_before = comps.len();
    let mut current = flow.clone();
    let mut bumps = 0;
    let mut min_dfv = first.min_dfv;
    let scale = domain.scale();
    let sigmas = [0.1, 0.2, 0.35, 0.5, 0.75, 1.0, 1.5];

    for _round in 0..8 {
        let ranges = boundary_f_ranges(domain, &current);
        let comps = range_components(&ranges);
        if comps.len() == 1 {
            return Ok(RepairOutcome {
                flow: current,
                changed: bumps > 0,
                components_before,
                bumps,
                min_dfv,
            });
        }
        // lift the top of the lowest component above the next one
        let (_, _, ref lower) = comps[0];
        let target = comps[1].0;
        let gap = comps[1].0 - comps[0].1;
        let (curve, &(_, fmax, tmax)) = lower
            .iter()
            .map(|&c| (c, &ranges[c]))
            .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
            .unwrap();
        let bpt = domain.position(BoundaryPoint::new(curve, tmax));
        let upper: Vec<usize> = comps[1..].iter().flat_map(|c| c.2.iter().copied()).collect();

        let mut accepted = None;
        let mut worst = f64::NEG_INFINITY;
        for s in sigmas {
            let sigma = s * scale;
            let s2 = sigma * sigma;
            // how much of the bump leaks onto the upper curves
            let leak = upper
                .iter()
                .flat_map(|&c| (0..512).map(move |k| (c, k as f64 / 512.0)))
                .map(|(c, t)| {
                    let q = domain.position(BoundaryPoint::new(c, t));
                    (-(q - bpt).norm_squared() / s2).exp()
                })
                .fold(0.0, f64::max);
            if leak > 0.9 {
                continue;
            }
            let amp = (target - fmax + 0.1 * gap) / (1.0 - leak);
            let bump = Expr::parse(&format!(
                "{amp:e}*exp(-((x-({bx:e}))^2+(y-({by:e}))^2)/{s2:e})",
                bx = bpt.x,
                by = bpt.y
            ))
            .expect("generated bump parses");
            let candidate = current.with_f(current.f().add(&bump));
            match check_traversing(domain, &candidate, grid_resolution, margin) {
                Ok(r) => {
                    accepted = Some((candidate, r.min_dfv));
                    break;
                }
                Err(FlowError::NotTraversing { min_dfv, .. }) => worst = worst.max(min_dfv),
                Err(e) => return Err(e),
            }
        }
        match accepted {
            Some((c, m)) => {
                current = c;
                min_dfv = m;
                bumps += 1;
            }
            None => return Err(FlowError::RepairFailed { margin: worst }),
        }
    }
    Err(FlowError::RepairFailed { margin: min_dfv })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Curve, CurveShape, DEFAULT_AMBIENT_MARGIN};

    fn disk() -> Domain {
        Domain::new(Curve::circle([0.0, 0.0], 1.0), vec![], DEFAULT_AMBIENT_MARGIN).unwrap()
    }

    fn vertical(f: &str) -> FlowSpec {
        FlowSpec::parse("0", "1", f, None).unwrap()
    }

    #[test]
    fn traversing_check_on_disk() {
        let r = check_traversing(&disk(), &vertical("y"), 50, DEFAULT_POSITIVITY_MARGIN).unwrap();
        assert_eq!(r.min_dfv, 1.0);
        match check_traversing(&disk(), &vertical("-y"), 50, DEFAULT_POSITIVITY_MARGIN) {
            Err(FlowError::NotTraversing { min_dfv, .. }) => assert_eq!(min_dfv, -1.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn negative_lambda_rejected() {
        let flow = vertical("y").with_lambda(Expr::parse("x").unwrap());
        assert!(matches!(
            check_traversing(&disk(), &flow, 30, DEFAULT_POSITIVITY_MARGIN),
            Err(FlowError::NonPositiveLambda { .. })
        ));
    }

    #[test]
    fn disk_strata() {
        let s = morse_stratify(&disk(), &vertical("y"), DEFAULT_REFINE_TOLERANCE).unwrap();
        assert_eq!(s.tangency_points.len(), 2);
        let ts: Vec<f64> = s.tangencies_on(0).iter().map(|p| p.point.t).collect();
        for want in [0.0, 0.5] {
            assert!(ts.iter().any(|t| crate::geometry::param_distance(*t, want) < 1e-11), "{ts:?}");
        }
        for p in &s.tangency_points {
            assert_eq!(p.kind, TangencyKind::External);
            assert_eq!(p.sign, -1);
            assert_eq!(p.order, 1);
        }
        assert_eq!(s.positive_arcs.len(), 1);
        assert_eq!(s.negative_arcs.len(), 1);
        // lower semicircle enters
        assert!(s.is_positive(BoundaryPoint::new(0, 0.75)));
        assert!(s.is_negative(BoundaryPoint::new(0, 0.25)));
    }

    #[test]
    fn ellipse_tangencies_at_vertices() {
        let d = Domain::new(
            Curve::new(CurveShape::Ellipse {
                center: [0.0, 0.0],
                semi_x: 2.0,
                semi_y: 1.0,
                rotation: 0.0,
            })
            .unwrap(),
            vec![],
            DEFAULT_AMBIENT_MARGIN,
        )
        .unwrap();
        let s = morse_stratify(&d, &vertical("y"), DEFAULT_REFINE_TOLERANCE).unwrap();
        assert_eq!(s.tangency_points.len(), 2);
        for p in &s.tangency_points {
            let pos = d.position(p.point);
            assert!((pos.x.abs() - 2.0).abs() < 1e-12 && pos.y.abs() < 1e-10);
        }
    }

    #[test]
    fn hole_tangencies_are_internal_and_positive() {
        let d = Domain::new(
            Curve::circle([0.0, 0.0], 2.0),
            vec![Curve::circle([0.0, 0.0], 1.0)],
            DEFAULT_AMBIENT_MARGIN,
        )
        .unwrap();
        let s = morse_stratify(&d, &vertical("y"), DEFAULT_REFINE_TOLERANCE).unwrap();
        assert_eq!(s.tangency_points.len(), 4);
        for p in &s.tangency_points {
            let internal = p.kind == TangencyKind::Internal;
            assert_eq!(internal, p.point.curve == 1);
            assert_eq!(internal, p.sign == 1);
        }
    }

    #[test]
    fn rotation_field_is_not_generic() {
        let flow = FlowSpec::parse("-y", "x", "x", None).unwrap();
        // the rotation field is tangent to the circle everywhere
        assert!(matches!(
            morse_stratify(&disk(), &flow, DEFAULT_REFINE_TOLERANCE),
            Err(FlowError::NotBoundaryGeneric { .. })
        ));
    }

    #[test]
    fn conformal_factor_keeps_strata() {
        let d = Domain::new(
            Curve::circle([0.0, 0.0], 3.0),
            vec![Curve::circle([0.5, 0.3], 0.7)],
            DEFAULT_AMBIENT_MARGIN,
        )
        .unwrap();
        let base = vertical("y");
        let scaled = base.with_lambda(Expr::parse("1+0.5*sin(x)*cos(y)").unwrap());
        let a = morse_stratify(&d, &base, DEFAULT_REFINE_TOLERANCE).unwrap();
        let b = morse_stratify(&d, &scaled, DEFAULT_REFINE_TOLERANCE).unwrap();
        assert_eq!(a.tangency_points.len(), b.tangency_points.len());
        for (p, q) in a.tangency_points.iter().zip(&b.tangency_points) {
            assert_eq!(p.point.curve, q.point.curve);
            assert!(crate::geometry::param_distance(p.point.t, q.point.t) < 1e-11);
            assert_eq!((p.sign, p.kind), (q.sign, q.kind));
        }
    }

    #[test]
    fn connected_range_is_untouched() {
        let out = lyapunov_range_repair(&disk(), &vertical("y"), 40, DEFAULT_POSITIVITY_MARGIN).unwrap();
        assert!(!out.changed);
        assert_eq!(out.components_before, 1);
    }

    #[test]
    fn split_range_gets_repaired() {
        let d = Domain::new(
            Curve::circle([0.0, 0.0], 2.0),
            vec![Curve::circle([0.0, 0.0], 1.0)],
            DEFAULT_AMBIENT_MARGIN,
        )
        .unwrap();
        let flow = FlowSpec::parse("x", "y", "x^2+y^2+0.5*x", None).unwrap();
        let before = range_components(&boundary_f_ranges(&d, &flow));
        assert_eq!(before.len(), 2);
        assert!((before[0].0 - 0.5).abs() < 1e-6 && (before[0].1 - 1.5).abs() < 1e-6);
        assert!((before[1].0 - 3.0).abs() < 1e-6 && (before[1].1 - 5.0).abs() < 1e-6);
        let out = lyapunov_range_repair(&d, &flow, 120, DEFAULT_POSITIVITY_MARGIN).unwrap();
        assert!(out.changed);
        assert_eq!(range_components(&boundary_f_ranges(&d, &out.flow)).len(), 1);
        // independent re-check on a finer grid
        check_traversing(&d, &out.flow, 300, DEFAULT_POSITIVITY_MARGIN).unwrap();
    }
}
