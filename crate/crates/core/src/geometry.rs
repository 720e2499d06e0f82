//! Planar domains: one outer closed curve with a number of holes.
//!
//! Every curve is parameterized by `t ∈ [0, 1)`; curve 0 is the outer
//! boundary and curves `1..` are holes. Signed distances are positive on the
//! side of the curve that belongs to the domain.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point = Vector2<f64>;

pub const DEFAULT_BOUNDARY_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_AMBIENT_MARGIN: f64 = 1e-2;

const VALIDATION_SEGMENTS: usize = 512;
const CACHE_SEGMENTS: usize = 1024;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("curve {curve} intersects itself")]
    SelfIntersectingCurve { curve: usize },
    #[error("curves {a} and {b} overlap or come closer than the collision tolerance")]
    OverlappingCurves { a: usize, b: usize },
    #[error("hole curve {hole} is not inside the outer curve")]
    HoleOutsideOuter { hole: usize },
    #[error("curve {curve} has a vanishing derivative near t = {t}")]
    IrregularCurve { curve: usize, t: f64 },
    #[error("invalid curve: {0}")]
    InvalidCurve(String),
}

/// Closed-form or spline description of a closed curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CurveShape {
    Circle {
        center: [f64; 2],
        radius: f64,
    },
    Ellipse {
        center: [f64; 2],
        semi_x: f64,
        semi_y: f64,
        #[serde(default)]
        rotation: f64,
    },
    /// `r(θ) = radius + Σ_k cos[k-1]·cos(kθ) + sin[k-1]·sin(kθ)` around `center`.
    Fourier {
        center: [f64; 2],
        radius: f64,
        #[serde(default)]
        cos: Vec<f64>,
        #[serde(default)]
        sin: Vec<f64>,
    },
    /// Periodic cubic spline through the control points, uniform in `t`.
    Spline { points: Vec<[f64; 2]> },
}

/// Position with first and second derivatives with respect to `t`.
#[derive(Debug, Clone, Copy)]
pub struct CurveJet {
    pub pos: Point,
    pub d1: Point,
    pub d2: Point,
}

#[derive(Debug, Clone)]
pub struct Curve {
    shape: CurveShape,
    // second derivatives of the periodic spline at the knots
    spline_moments: Vec<Point>,
}

fn rot(v: Point, angle: f64) -> Point {
    let (s, c) = angle.sin_cos();
    Point::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

fn pt(a: [f64; 2]) -> Point {
    Point::new(a[0], a[1])
}

impl Curve {
    pub fn new(shape: CurveShape) -> Result<Self, GeometryError> {
        let finite = |v: f64| v.is_finite();
        let spline_moments = match &shape {
            CurveShape::Circle { radius, center } => {
                if !(finite(*radius) && *radius > 0.0) || !center.iter().all(|v| v.is_finite()) {
                    return Err(GeometryError::InvalidCurve(format!(
                        "circle radius must be positive, got {radius}"
                    )));
                }
                Vec::new()
            }
            CurveShape::Ellipse { semi_x, semi_y, .. } => {
                if !(*semi_x > 0.0 && *semi_y > 0.0) {
                    return Err(GeometryError::InvalidCurve(
                        "ellipse semi-axes must be positive".into(),
                    ));
                }
                Vec::new()
            }
            CurveShape::Fourier { radius, cos, sin, .. } => {
                let wobble: f64 = cos.iter().chain(sin.iter()).map(|a| a.abs()).sum();
                if !(*radius > 0.0) || wobble >= *radius {
                    return Err(GeometryError::InvalidCurve(
                        "fourier radius must exceed the sum of |coefficients|".into(),
                    ));
                }
                Vec::new()
            }
            CurveShape::Spline { points } => {
                if points.len() < 4 {
                    return Err(GeometryError::InvalidCurve(
                        "a periodic spline needs at least 4 control points".into(),
                    ));
                }
                spline_moments(points)
            }
        };
        Ok(Curve {
            shape,
            spline_moments,
        })
    }

    pub fn circle(center: [f64; 2], radius: f64) -> Self {
        Curve::new(CurveShape::Circle { center, radius }).expect("valid circle")
    }

    pub fn shape(&self) -> &CurveShape {
        &self.shape
    }

    /// Evaluates the curve at `t`, taken modulo 1.
    pub fn jet(&self, t: f64) -> CurveJet {
        match &self.shape {
            CurveShape::Circle { center, radius } => {
                let a = TAU * t;
                let (s, c) = a.sin_cos();
                CurveJet {
                    pos: pt(*center) + Point::new(radius * c, radius * s),
                    d1: Point::new(-radius * s, radius * c) * TAU,
                    d2: Point::new(-radius * c, -radius * s) * (TAU * TAU),
                }
            }
            CurveShape::Ellipse {
                center,
                semi_x,
                semi_y,
                rotation,
            } => {
                let a = TAU * t;
                let (s, c) = a.sin_cos();
                CurveJet {
                    pos: pt(*center) + rot(Point::new(semi_x * c, semi_y * s), *rotation),
                    d1: rot(Point::new(-semi_x * s, semi_y * c), *rotation) * TAU,
                    d2: rot(Point::new(-semi_x * c, -semi_y * s), *rotation) * (TAU * TAU),
                }
            }
            CurveShape::Fourier {
                center,
                radius,
                cos,
                sin,
            } => {
                let th = TAU * t;
                let (mut r, mut r1, mut r2) = (*radius, 0.0, 0.0);
                for (k, a) in cos.iter().enumerate() {
                    let k = (k + 1) as f64;
                    let (s, c) = (k * th).sin_cos();
                    r += a * c;
                    r1 -= a * k * s;
                    r2 -= a * k * k * c;
                }
                for (k, b) in sin.iter().enumerate() {
                    let k = (k + 1) as f64;
                    let (s, c) = (k * th).sin_cos();
                    r += b * s;
                    r1 += b * k * c;
                    r2 -= b * k * k * s;
                }
                let (s, c) = th.sin_cos();
                let e = Point::new(c, s);
                let en = Point::new(-s, c);
                // derivatives in θ, then chain rule for t
                let p1 = e * r1 + en * r;
                let p2 = e * (r2 - r) + en * (2.0 * r1);
                CurveJet {
                    pos: pt(*center) + e * r,
                    d1: p1 * TAU,
                    d2: p2 * (TAU * TAU),
                }
            }
            CurveShape::Spline { points } => {
                let n = points.len();
                let u = t.rem_euclid(1.0) * n as f64;
                let i = (u.floor() as usize).min(n - 1);
                let s = u - i as f64;
                let j = (i + 1) % n;
                let (p0, p1) = (pt(points[i]), pt(points[j]));
                let (m0, m1) = (self.spline_moments[i], self.spline_moments[j]);
                // cubic on unit knot spacing in u
                let a = 1.0 - s;
                let pos = p0 * a + p1 * s + (m0 * (a * a * a - a) + m1 * (s * s * s - s)) / 6.0;
                let du = (p1 - p0) + (m1 * (3.0 * s * s - 1.0) - m0 * (3.0 * a * a - 1.0)) / 6.0;
                let ddu = m0 * a + m1 * s;
                let nf = n as f64;
                CurveJet {
                    pos,
                    d1: du * nf,
                    d2: ddu * (nf * nf),
                }
            }
        }
    }

    pub fn position(&self, t: f64) -> Point {
        self.jet(t).pos
    }

    /// Returns the same geometric curve rotated by `angle` about the origin,
    /// plus the parameter shift `s` with `rotated(t + s) = R·self(t)`.
    pub fn rotated(&self, angle: f64) -> (Curve, f64) {
        let shift = angle / TAU;
        let shape = match &self.shape {
            CurveShape::Circle { center, radius } => {
                let c = rot(pt(*center), angle);
                CurveShape::Circle {
                    center: [c.x, c.y],
                    radius: *radius,
                }
            }
            CurveShape::Ellipse {
                center,
                semi_x,
                semi_y,
                rotation,
            } => {
                let c = rot(pt(*center), angle);
                return (
                    Curve::new(CurveShape::Ellipse {
                        center: [c.x, c.y],
                        semi_x: *semi_x,
                        semi_y: *semi_y,
                        rotation: rotation + angle,
                    })
                    .expect("rotation keeps validity"),
                    0.0,
                );
            }
            CurveShape::Fourier {
                center,
                radius,
                cos,
                sin,
            } => {
                let c = rot(pt(*center), angle);
                let m = cos.len().max(sin.len());
                let mut nc = vec![0.0; m];
                let mut ns = vec![0.0; m];
                for k in 0..m {
                    let a = cos.get(k).copied().unwrap_or(0.0);
                    let b = sin.get(k).copied().unwrap_or(0.0);
                    let (s, co) = (((k + 1) as f64) * angle).sin_cos();
                    nc[k] = a * co - b * s;
                    ns[k] = a * s + b * co;
                }
                CurveShape::Fourier {
                    center: [c.x, c.y],
                    radius: *radius,
                    cos: nc,
                    sin: ns,
                }
            }
            CurveShape::Spline { points } => {
                let pts = points
                    .iter()
                    .map(|p| {
                        let q = rot(pt(*p), angle);
                        [q.x, q.y]
                    })
                    .collect();
                return (
                    Curve::new(CurveShape::Spline { points: pts }).expect("rotation keeps validity"),
                    0.0,
                );
            }
        };
        (Curve::new(shape).expect("rotation keeps validity"), shift)
    }

    fn polyline(&self, n: usize) -> Vec<Point> {
        (0..n).map(|i| self.position(i as f64 / n as f64)).collect()
    }
}

/// Second derivatives of the periodic natural spline with unit knot spacing.
fn spline_moments(points: &[[f64; 2]]) -> Vec<Point> {
    let n = points.len();
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut bx = DVector::<f64>::zeros(n);
    let mut by = DVector::<f64>::zeros(n);
    for i in 0..n {
        let prev = (i + n - 1) % n;
        let next = (i + 1) % n;
        a[(i, prev)] += 1.0;
        a[(i, i)] += 4.0;
        a[(i, next)] += 1.0;
        bx[i] = 6.0 * (points[next][0] - 2.0 * points[i][0] + points[prev][0]);
        by[i] = 6.0 * (points[next][1] - 2.0 * points[i][1] + points[prev][1]);
    }
    let lu = a.lu();
    let mx = lu.solve(&bx).expect("cyclic spline system is diagonally dominant");
    let my = lu.solve(&by).expect("cyclic spline system is diagonally dominant");
    (0..n).map(|i| Point::new(mx[i], my[i])).collect()
}

/// A point on one of the boundary curves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub curve: usize,
    pub t: f64,
}

impl BoundaryPoint {
    pub fn new(curve: usize, t: f64) -> Self {
        BoundaryPoint {
            curve,
            t: canonical_t(t),
        }
    }
}

/// Reduces a curve parameter to `[0, 1)`.
pub fn canonical_t(t: f64) -> f64 {
    let r = t.rem_euclid(1.0);
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Periodic distance between two curve parameters.
pub fn param_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Location {
    Interior,
    Exterior,
    NearBoundary {
        point: BoundaryPoint,
        signed_distance: f64,
    },
}

/// Orthonormal frame at a boundary point.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryFrame {
    pub position: Point,
    pub unit_tangent: Point,
    pub inward_normal: Point,
}

#[derive(Debug, Clone)]
struct CurveCache {
    curve: Curve,
    /// +1 for the outer curve, -1 for holes.
    orientation: i8,
    /// Multiplies the left normal `(-c'_y, c'_x)` to get the inward normal.
    inward_sign: f64,
    polyline: Vec<Point>,
    cumulative_length: Vec<f64>,
    centroid: Point,
    r_min: f64,
    r_max: f64,
    /// Upper bound on polyline-to-curve deviation.
    sag: f64,
}

/// A compact planar region bounded by curve 0 (outer) and holes `1..`.
#[derive(Debug, Clone)]
pub struct Domain {
    curves: Vec<CurveCache>,
    ambient_margin: f64,
    boundary_tolerance: f64,
}

impl Domain {
    pub fn new(outer: Curve, holes: Vec<Curve>, ambient_margin: f64) -> Result<Self, GeometryError> {
        Self::with_tolerance(outer, holes, ambient_margin, DEFAULT_BOUNDARY_TOLERANCE)
    }

    pub fn with_tolerance(
        outer: Curve,
        holes: Vec<Curve>,
        ambient_margin: f64,
        boundary_tolerance: f64,
    ) -> Result<Self, GeometryError> {
        if !(ambient_margin > 0.0 && boundary_tolerance > 0.0) {
            return Err(GeometryError::InvalidCurve(
                "ambient margin and boundary tolerance must be positive".into(),
            ));
        }
        let all: Vec<Curve> = std::iter::once(outer).chain(holes).collect();
        let mut validation = Vec::with_capacity(all.len());
        for (id, c) in all.iter().enumerate() {
            check_regular(id, c)?;
            let poly = c.polyline(VALIDATION_SEGMENTS);
            if polyline_self_intersects(&poly) {
                return Err(GeometryError::SelfIntersectingCurve { curve: id });
            }
            validation.push(poly);
        }
        for a in 0..all.len() {
            for b in a + 1..all.len() {
                if polylines_intersect(&validation[a], &validation[b]) {
                    return Err(GeometryError::OverlappingCurves { a, b });
                }
            }
        }
        for h in 1..all.len() {
            if winding_number(&validation[0], validation[h][0]) == 0 {
                return Err(GeometryError::HoleOutsideOuter { hole: h });
            }
            for g in 1..all.len() {
                if g != h && winding_number(&validation[g], validation[h][0]) != 0 {
                    return Err(GeometryError::OverlappingCurves {
                        a: g.min(h),
                        b: g.max(h),
                    });
                }
            }
        }

        let curves: Vec<CurveCache> = all
            .into_iter()
            .enumerate()
            .map(|(id, c)| build_cache(c, if id == 0 { 1 } else { -1 }))
            .collect();
        let domain = Domain {
            curves,
            ambient_margin,
            boundary_tolerance,
        };
        // minimum pairwise curve distance against the collision tolerance
        for a in 0..domain.curves.len() {
            for b in a + 1..domain.curves.len() {
                let d = domain.curves[b]
                    .polyline
                    .iter()
                    .map(|p| domain.curve_distance(a, *p).0.abs())
                    .fold(f64::INFINITY, f64::min);
                if d <= 2.0 * boundary_tolerance {
                    return Err(GeometryError::OverlappingCurves { a, b });
                }
            }
        }
        Ok(domain)
    }

    pub fn curve_count(&self) -> usize {
        self.curves.len()
    }

    pub fn hole_count(&self) -> usize {
        self.curves.len() - 1
    }

    pub fn curve(&self, id: usize) -> &Curve {
        &self.curves[id].curve
    }

    pub fn orientation(&self, id: usize) -> i8 {
        self.curves[id].orientation
    }

    pub fn ambient_margin(&self) -> f64 {
        self.ambient_margin
    }

    pub fn boundary_tolerance(&self) -> f64 {
        self.boundary_tolerance
    }

    pub fn curve_length(&self, id: usize) -> f64 {
        *self.curves[id].cumulative_length.last().unwrap()
    }

    /// Arc length from `t = 0` to `t` along a curve (polyline approximation).
    pub fn arc_length_at(&self, id: usize, t: f64) -> f64 {
        let cache = &self.curves[id];
        let n = cache.polyline.len();
        let u = canonical_t(t) * n as f64;
        let i = (u.floor() as usize).min(n - 1);
        let frac = u - i as f64;
        cache.cumulative_length[i] + frac * (cache.cumulative_length[i + 1] - cache.cumulative_length[i])
    }

    /// Inverse of [`arc_length_at`](Self::arc_length_at).
    pub fn param_at_arc_length(&self, id: usize, s: f64) -> f64 {
        let cache = &self.curves[id];
        let total = *cache.cumulative_length.last().unwrap();
        let s = s.rem_euclid(total);
        let cl = &cache.cumulative_length;
        let i = match cl.binary_search_by(|v| v.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(cl.len() - 2),
            Err(i) => i.saturating_sub(1).min(cl.len() - 2),
        };
        let seg = cl[i + 1] - cl[i];
        let frac = if seg > 0.0 { (s - cl[i]) / seg } else { 0.0 };
        canonical_t((i as f64 + frac) / cache.polyline.len() as f64)
    }

    /// Axis-aligned bounds of the outer curve.
    pub fn bounding_box(&self) -> (Point, Point) {
        let poly = &self.curves[0].polyline;
        let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in poly {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let pad = self.curves[0].sag;
        (lo - Point::new(pad, pad), hi + Point::new(pad, pad))
    }

    /// Characteristic length of the domain.
    pub fn scale(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        (hi - lo).norm() * 0.5
    }

    pub fn position(&self, b: BoundaryPoint) -> Point {
        self.curves[b.curve].curve.position(b.t)
    }

    pub fn jet(&self, b: BoundaryPoint) -> CurveJet {
        self.curves[b.curve].curve.jet(b.t)
    }

    pub fn boundary_frame(&self, b: BoundaryPoint) -> BoundaryFrame {
        let cache = &self.curves[b.curve];
        let jet = cache.curve.jet(b.t);
        let tangent = jet.d1.normalize();
        let left = Point::new(-tangent.y, tangent.x);
        BoundaryFrame {
            position: jet.pos,
            unit_tangent: tangent,
            inward_normal: left * cache.inward_sign,
        }
    }

    /// Signed curvature of the boundary at `b`, positive when the curve bends
    /// toward the domain side.
    pub fn boundary_curvature(&self, b: BoundaryPoint) -> f64 {
        let jet = self.jet(b);
        let frame = self.boundary_frame(b);
        jet.d2.dot(&frame.inward_normal) / jet.d1.norm_squared()
    }

    /// Exact signed distance (positive on the domain side) to curve `id`
    /// together with the parameter of the closest point.
    pub fn curve_distance(&self, id: usize, p: Point) -> (f64, f64) {
        let cache = &self.curves[id];
        let side = cache.orientation as f64;
        if let CurveShape::Circle { center, radius } = cache.curve.shape() {
            let d = p - pt(*center);
            let r = d.norm();
            let t = if r > 0.0 {
                canonical_t(d.y.atan2(d.x) / TAU)
            } else {
                0.0
            };
            return (side * (radius - r), t);
        }
        let t = closest_param(cache, p);
        let jet = cache.curve.jet(t);
        let dist = (p - jet.pos).norm();
        let inside = if dist > 8.0 * cache.sag {
            winding_number(&cache.polyline, p) != 0
        } else {
            let left = Point::new(-jet.d1.y, jet.d1.x);
            (p - jet.pos).dot(&left) * cache.inward_sign * side >= 0.0
        };
        (if inside { side * dist } else { -side * dist }, t)
    }

    /// Signed distance to curve `id`, or a cheap bound of the right sign whose
    /// magnitude never exceeds the true distance when the point is far away.
    fn curve_distance_bound(&self, id: usize, p: Point) -> f64 {
        let cache = &self.curves[id];
        let r = (p - cache.centroid).norm();
        let side = cache.orientation as f64;
        // the bound is loose by up to `sag`, so keep it away from the curve
        let cutoff = 0.05 * cache.r_max;
        let outside = r - cache.r_max - cache.sag;
        if outside > cutoff {
            return -side * outside;
        }
        let inside = cache.r_min - cache.sag - r;
        if inside > cutoff {
            return side * inside;
        }
        self.curve_distance(id, p).0
    }

    /// Minimum signed distance over all curves and the curve attaining it.
    /// The value is exact near the boundary and a conservative bound elsewhere.
    pub fn clearance(&self, p: Point) -> (f64, usize) {
        let mut best = (f64::INFINITY, 0);
        for id in 0..self.curves.len() {
            let d = self.curve_distance_bound(id, p);
            if d < best.0 {
                best = (d, id);
            }
        }
        best
    }

    /// Signed distance to the whole boundary (positive inside the domain).
    pub fn signed_distance(&self, p: Point) -> (f64, BoundaryPoint) {
        let mut best: Option<(f64, BoundaryPoint)> = None;
        for id in 0..self.curves.len() {
            let (d, t) = self.curve_distance(id, p);
            // the domain is the intersection of the curves' inner sides
            let better = best.map_or(true, |(bd, _)| d < bd);
            if better {
                best = Some((d, BoundaryPoint::new(id, t)));
            }
        }
        best.expect("domain has at least one curve")
    }

    pub fn locate(&self, p: Point) -> Location {
        let (d, b) = self.signed_distance(p);
        let tol = self.boundary_tolerance;
        if d.abs() <= tol * (1.0 + 1e-6) {
            return Location::NearBoundary {
                point: b,
                signed_distance: d,
            };
        }
        // membership by winding numbers, distance already known to exceed tol
        let inside_outer = winding_number(&self.curves[0].polyline, p) != 0;
        let in_hole = (1..self.curves.len()).any(|h| winding_number(&self.curves[h].polyline, p) != 0);
        let by_winding = inside_outer && !in_hole;
        // polylines deviate from the true curves by at most `sag`
        let inside = if d.abs() > 8.0 * self.max_sag() { by_winding } else { d > 0.0 };
        if inside {
            Location::Interior
        } else {
            Location::Exterior
        }
    }

    /// True when `p` lies in the ambient collar `X̂` (within the ambient margin).
    pub fn in_ambient(&self, p: Point) -> bool {
        self.clearance(p).0 > -self.ambient_margin
    }

    fn max_sag(&self) -> f64 {
        self.curves.iter().map(|c| c.sag).fold(0.0, f64::max)
    }

    /// Winding number of curve `id` around `p` (polyline approximation).
    pub fn winding_number(&self, id: usize, p: Point) -> i32 {
        winding_number(&self.curves[id].polyline, p)
    }

    pub fn polyline(&self, id: usize) -> &[Point] {
        &self.curves[id].polyline
    }

    /// Returns the domain rotated by `angle` about the origin and, per curve,
    /// the parameter shift of the rotated parameterization.
    pub fn rotated(&self, angle: f64) -> (Domain, Vec<f64>) {
        let mut shifts = Vec::new();
        let mut curves = Vec::new();
        for c in &self.curves {
            let (rc, s) = c.curve.rotated(angle);
            curves.push(rc);
            shifts.push(s);
        }
        let outer = curves.remove(0);
        let d = Domain::with_tolerance(outer, curves, self.ambient_margin, self.boundary_tolerance)
            .expect("a rigid motion preserves validity");
        (d, shifts)
    }
}

fn check_regular(id: usize, c: &Curve) -> Result<(), GeometryError> {
    let n = 4 * VALIDATION_SEGMENTS;
    let speeds: Vec<f64> = (0..n).map(|i| c.jet(i as f64 / n as f64).d1.norm()).collect();
    let scale = speeds.iter().cloned().fold(0.0, f64::max);
    for (i, s) in speeds.iter().enumerate() {
        if !(s.is_finite() && *s > 1e-9 * scale.max(1e-300)) {
            return Err(GeometryError::IrregularCurve {
                curve: id,
                t: i as f64 / n as f64,
            });
        }
    }
    Ok(())
}

fn build_cache(curve: Curve, orientation: i8) -> CurveCache {
    let polyline = curve.polyline(CACHE_SEGMENTS);
    let n = polyline.len();
    let mut cumulative_length = Vec::with_capacity(n + 1);
    cumulative_length.push(0.0);
    let mut area2 = 0.0;
    for i in 0..n {
        let a = polyline[i];
        let b = polyline[(i + 1) % n];
        cumulative_length.push(cumulative_length[i] + (b - a).norm());
        area2 += a.x * b.y - a.y * b.x;
    }
    let centroid = polyline.iter().sum::<Point>() / n as f64;
    // polyline deviation: max over segments of the midpoint gap to the curve
    let mut sag: f64 = 0.0;
    for i in 0..n {
        let mid_true = curve.position((i as f64 + 0.5) / n as f64);
        let mid_poly = (polyline[i] + polyline[(i + 1) % n]) * 0.5;
        sag = sag.max((mid_true - mid_poly).norm());
    }
    let sag = 2.0 * sag + 1e-12;
    let mut r_min = polyline
        .iter()
        .map(|p| (p - centroid).norm())
        .fold(f64::INFINITY, f64::min);
    let r_max = polyline.iter().map(|p| (p - centroid).norm()).fold(0.0, f64::max);
    if winding_number(&polyline, centroid) == 0 {
        r_min = 0.0;
    }
    let ccw = if area2 > 0.0 { 1.0 } else { -1.0 };
    CurveCache {
        curve,
        orientation,
        inward_sign: ccw * orientation as f64,
        polyline,
        cumulative_length,
        centroid,
        r_min,
        r_max,
        sag,
    }
}

fn closest_param(cache: &CurveCache, p: Point) -> f64 {
    let n = cache.polyline.len();
    let mut best = (f64::INFINITY, 0usize);
    for (i, q) in cache.polyline.iter().enumerate() {
        let d = (q - p).norm_squared();
        if d < best.0 {
            best = (d, i);
        }
    }
    // refine on the two adjacent segments, then Newton on |c(t) - p|^2
    let mut t = best.1 as f64 / n as f64;
    let dt_max = 1.0 / n as f64;
    for _ in 0..50 {
        let jet = cache.curve.jet(t);
        let r = jet.pos - p;
        let g = r.dot(&jet.d1);
        let h = jet.d1.norm_squared() + r.dot(&jet.d2);
        let step = if h > 0.0 { -g / h } else { -g.signum() * dt_max * 0.5 };
        let step = step.clamp(-dt_max, dt_max);
        t += step;
        if step.abs() < 1e-15 {
            break;
        }
    }
    canonical_t(t)
}

/// Winding number of a closed polyline around `p`.
pub fn winding_number(poly: &[Point], p: Point) -> i32 {
    let n = poly.len();
    let mut wn = 0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let is_left = (b.x - a.x) * (p.y - a.y) - (p.x - a.x) * (b.y - a.y);
        if a.y <= p.y {
            if b.y > p.y && is_left > 0.0 {
                wn += 1;
            }
        } else if b.y <= p.y && is_left < 0.0 {
            wn -= 1;
        }
    }
    wn
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn segments_cross(a: Point, b: Point, c: Point, d: Point) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

fn polyline_self_intersects(poly: &[Point]) -> bool {
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            if segments_cross(a, b, poly[j], poly[(j + 1) % n]) {
                return true;
            }
        }
    }
    false
}

fn polylines_intersect(p: &[Point], q: &[Point]) -> bool {
    for i in 0..p.len() {
        let (a, b) = (p[i], p[(i + 1) % p.len()]);
        for j in 0..q.len() {
            if segments_cross(a, b, q[j], q[(j + 1) % q.len()]) {
                return true;
            }
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk() -> Domain {
        Domain::new(Curve::circle([0.0, 0.0], 1.0), vec![], DEFAULT_AMBIENT_MARGIN).unwrap()
    }

    #[test]
    fn disk_locate_cases() {
        let d = disk();
        assert_eq!(d.locate(Point::new(0.0, 0.0)), Location::Interior);
        assert_eq!(d.locate(Point::new(2.0, 0.0)), Location::Exterior);
        match d.locate(Point::new(1.0 + 1e-9, 0.0)) {
            Location::NearBoundary {
                point,
                signed_distance,
            } => {
                assert_eq!(point.curve, 0);
                assert!(param_distance(point.t, 0.0) < 1e-12);
                assert!((signed_distance + 1e-9).abs() < 1e-15);
            }
            other => panic!("expected NearBoundary, got {other:?}"),
        }
    }

    #[test]
    fn frames_on_circles() {
        let d = disk();
        let f0 = d.boundary_frame(BoundaryPoint::new(0, 0.0));
        assert!((f0.inward_normal - Point::new(-1.0, 0.0)).norm() < 1e-14);
        let f1 = d.boundary_frame(BoundaryPoint::new(0, 0.25));
        assert!((f1.inward_normal - Point::new(0.0, -1.0)).norm() < 1e-14);
        assert!(f1.unit_tangent.dot(&f1.inward_normal).abs() < 1e-15);

        let holed = Domain::new(
            Curve::circle([0.0, 0.0], 3.0),
            vec![Curve::circle([1.0, 0.5], 0.5)],
            DEFAULT_AMBIENT_MARGIN,
        )
        .unwrap();
        let f = holed.boundary_frame(BoundaryPoint::new(1, 0.0));
        // away from the hole center
        assert!((f.inward_normal - Point::new(1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn overlapping_and_outside_holes_rejected() {
        let err = Domain::new(
            Curve::circle([0.0, 0.0], 3.0),
            vec![Curve::circle([0.0, 0.0], 0.6), Curve::circle([0.8, 0.0], 0.6)],
            DEFAULT_AMBIENT_MARGIN,
        )
        .unwrap_err();
        assert_eq!(err, GeometryError::OverlappingCurves { a: 1, b: 2 });

        let err = Domain::new(
            Curve::circle([0.0, 0.0], 1.0),
            vec![Curve::circle([5.0, 0.0], 0.5)],
            DEFAULT_AMBIENT_MARGIN,
        )
        .unwrap_err();
        assert_eq!(err, GeometryError::HoleOutsideOuter { hole: 1 });

        let err = Domain::new(
            Curve::circle([0.0, 0.0], 3.0),
            vec![Curve::circle([0.0, 0.0], 1.0), Curve::circle([0.0, 0.0], 0.5)],
            DEFAULT_AMBIENT_MARGIN,
        )
        .unwrap_err();
        assert!(matches!(err, GeometryError::OverlappingCurves { .. }));
    }

    #[test]
    fn figure_eight_spline_is_self_intersecting() {
        let pts: Vec<[f64; 2]> = (0..16)
            .map(|i| {
                let a = TAU * i as f64 / 16.0;
                [a.sin(), (2.0 * a).sin() * 0.5]
            })
            .collect();
        let c = Curve::new(CurveShape::Spline { points: pts }).unwrap();
        let err = Domain::new(c, vec![], DEFAULT_AMBIENT_MARGIN).unwrap_err();
        assert_eq!(err, GeometryError::SelfIntersectingCurve { curve: 0 });
    }

    #[test]
    fn curve_jets_match_finite_differences() {
        let shapes = vec![
            CurveShape::Ellipse {
                center: [0.2, -0.1],
                semi_x: 2.0,
                semi_y: 1.0,
                rotation: 0.3,
            },
            CurveShape::Fourier {
                center: [0.0, 0.0],
                radius: 1.0,
                cos: vec![0.0, 0.1],
                sin: vec![0.05, 0.0, 0.08],
            },
            CurveShape::Spline {
                points: vec![[1.0, 0.0], [0.0, 1.2], [-1.0, 0.1], [-0.2, -0.9], [0.7, -0.8]],
            },
        ];
        for s in shapes {
            let c = Curve::new(s).unwrap();
            for &t in &[0.013, 0.31, 0.77, 0.999] {
                let h = 1e-6;
                let j = c.jet(t);
                let fd1 = (c.position(t + h) - c.position(t - h)) / (2.0 * h);
                let fd2 = (c.jet(t + h).d1 - c.jet(t - h).d1) / (2.0 * h);
                assert!((j.d1 - fd1).norm() < 1e-5 * j.d1.norm().max(1.0));
                assert!((j.d2 - fd2).norm() < 1e-4 * j.d2.norm().max(1.0));
            }
            // closed: value and derivatives periodic
            let (a, b) = (c.jet(0.0), c.jet(1.0));
            assert!((a.pos - b.pos).norm() < 1e-12);
            assert!((a.d1 - b.d1).norm() < 1e-9 * a.d1.norm());
            assert!((a.d2 - b.d2).norm() < 1e-7 * a.d2.norm().max(1.0));
        }
    }

    #[test]
    fn rotated_curves_shift_parameters() {
        let angle = 0.7;
        let shapes = vec![
            CurveShape::Circle {
                center: [0.5, -0.2],
                radius: 0.3,
            },
            CurveShape::Fourier {
                center: [0.1, 0.0],
                radius: 1.0,
                cos: vec![0.0, 0.1],
                sin: vec![0.05],
            },
        ];
        for s in shapes {
            let c = Curve::new(s).unwrap();
            let (r, shift) = c.rotated(angle);
            for &t in &[0.0, 0.2, 0.65] {
                let expect = rot(c.position(t), angle);
                assert!((r.position(t + shift) - expect).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn ellipse_distance_is_consistent() {
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
        let (sd, t) = d.curve_distance(0, Point::new(0.0, 0.5));
        assert!((sd - 0.5).abs() < 1e-12);
        assert!((t - 0.25).abs() < 1e-9);
        let (sd, _) = d.curve_distance(0, Point::new(3.0, 0.0));
        assert!((sd + 1.0).abs() < 1e-12);
        assert!((d.curve_length(0) - 9.688448220547675).abs() < 1e-4);
    }

    #[test]
    fn arc_length_inverse() {
        let d = disk();
        for &s in &[0.0, 0.5, 3.0, 6.0] {
            let t = d.param_at_arc_length(0, s);
            assert!((d.arc_length_at(0, t) - s).abs() < 1e-9);
        }
    }
}
