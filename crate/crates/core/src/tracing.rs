//! Trajectory tracing with boundary events, fibers and the causality map.

mod dataset;

pub use dataset::*;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flowfield::{boundary_f_ranges, tangency_kind, FlowSpec, TangencyKind};
use crate::geometry::{BoundaryPoint, Domain, Point};
use crate::integrate::{adaptive_step, dp_step, rhs};

pub const DEFAULT_TANGENCY_THRESHOLD: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TraceError {
    #[error("step limit exceeded after {steps} steps near ({}, {})", at[0], at[1])]
    StepLimitExceeded { steps: usize, at: [f64; 2] },
    #[error("cannot resolve a grazing event on curve {curve} near t = {t}")]
    GrazingUnresolved { curve: usize, t: f64 },
    #[error("point on curve {curve} at t = {t} lies in a negative arc")]
    NotInPositiveBoundary { curve: usize, t: f64 },
    #[error("df(v) is not positive at ({}, {})", at[0], at[1])]
    FieldDegenerate { at: [f64; 2] },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventKind {
    Entry,
    Exit,
    Tangency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub point: BoundaryPoint,
    pub f: f64,
    pub kind: EventKind,
    /// `⟨v, n_in⟩ / |v|` at the event.
    pub normal_speed: f64,
}

/// Boundary events of one trajectory, ordered by increasing `f`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub events: Vec<Event>,
    pub polyline: Vec<Point>,
}

impl Trajectory {
    pub fn f_interval(&self) -> (f64, f64) {
        let lo = self.events.iter().map(|e| e.f).fold(f64::INFINITY, f64::min);
        let hi = self.events.iter().map(|e| e.f).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TraceConfig {
    /// `|⟨v, n⟩| ≤ threshold·|v|` counts as tangency.
    pub tangency_threshold: f64,
    /// Local error tolerance of the integrator, relative to the domain scale.
    pub step_tolerance: f64,
    pub max_steps: usize,
    /// Smallest step cap as a fraction of the domain scale.
    pub min_step_fraction: f64,
    pub record_polyline: bool,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            tangency_threshold: DEFAULT_TANGENCY_THRESHOLD,
            step_tolerance: 1e-12,
            max_steps: 100_000,
            min_step_fraction: 1e-3,
            record_polyline: false,
        }
    }
}

/// Traces trajectories of one flow in one domain.
#[derive(Debug, Clone)]
pub struct Tracer<'a> {
    domain: &'a Domain,
    flow: &'a FlowSpec,
    config: TraceConfig,
    f_lo: f64,
    f_hi: f64,
    scale: f64,
}

enum Stop {
    Yes,
    No,
}

impl<'a> Tracer<'a> {
    pub fn new(domain: &'a Domain, flow: &'a FlowSpec, config: TraceConfig) -> Self {
        let ranges = boundary_f_ranges(domain, flow);
        let f_lo = ranges.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
        let f_hi = ranges.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
        Tracer {
            domain,
            flow,
            config,
            f_lo,
            f_hi,
            scale: domain.scale(),
        }
    }

    pub fn domain(&self) -> &'a Domain {
        self.domain
    }

    pub fn flow(&self) -> &'a FlowSpec {
        self.flow
    }

    pub fn config(&self) -> &TraceConfig {
        &self.config
    }

    /// Boundary event at `b` classified by the normal component of `v`.
    pub fn classify(&self, b: BoundaryPoint) -> Event {
        let frame = self.domain.boundary_frame(b);
        let v = self.flow.velocity(frame.position);
        let ns = v.dot(&frame.inward_normal) / v.norm();
        let kind = if ns > self.config.tangency_threshold {
            EventKind::Entry
        } else if ns < -self.config.tangency_threshold {
            EventKind::Exit
        } else {
            EventKind::Tangency
        };
        Event {
            point: b,
            f: self.flow.f_value(frame.position),
            kind,
            normal_speed: ns,
        }
    }

    fn terminal(&self, e: &Event, dir: Direction) -> Stop {
        match (e.kind, dir) {
            (EventKind::Exit, Direction::Forward) | (EventKind::Entry, Direction::Backward) => Stop::Yes,
            (EventKind::Tangency, _) => match tangency_kind(self.domain, self.flow, e.point) {
                TangencyKind::External => Stop::Yes,
                TangencyKind::Internal => Stop::No,
            },
            _ => Stop::No,
        }
    }

    /// Traces from a boundary point until the trajectory leaves the domain.
    pub fn trace(&self, start: BoundaryPoint, dir: Direction) -> Result<Trajectory, TraceError> {
        let first = self.classify(start);
        let mut events = vec![first];
        let x0 = self.domain.position(start);
        let mut polyline = vec![x0];
        if let Stop::No = self.terminal(&first, dir) {
            self.integrate(x0, dir, &mut events, &mut polyline)?;
        }
        Ok(self.finish(events, polyline, dir))
    }

    /// Traces from an interior point until the trajectory leaves the domain.
    pub fn trace_from_point(&self, p: Point, dir: Direction) -> Result<Trajectory, TraceError> {
        let mut events = Vec::new();
        let mut polyline = vec![p];
        self.integrate(p, dir, &mut events, &mut polyline)?;
        Ok(self.finish(events, polyline, dir))
    }

    fn finish(&self, mut events: Vec<Event>, mut polyline: Vec<Point>, dir: Direction) -> Trajectory {
        if dir == Direction::Backward {
            events.reverse();
            polyline.reverse();
        }
        if !self.config.record_polyline {
            polyline.clear();
        }
        Trajectory { events, polyline }
    }

    /// The full fiber `γ ∩ ∂X` through a boundary point.
    pub fn fiber(&self, x: BoundaryPoint) -> Result<Trajectory, TraceError> {
        let back = self.trace(x, Direction::Backward)?;
        let fwd = self.trace(x, Direction::Forward)?;
        Ok(join(back, fwd))
    }

    /// The fiber of the trajectory through an interior point.
    pub fn fiber_of_point(&self, p: Point) -> Result<Trajectory, TraceError> {
        let back = self.trace_from_point(p, Direction::Backward)?;
        let fwd = self.trace_from_point(p, Direction::Forward)?;
        let mut events = back.events;
        events.extend(fwd.events);
        let mut polyline = back.polyline;
        polyline.extend(fwd.polyline.into_iter().skip(1));
        Ok(Trajectory { events, polyline })
    }

    /// The causality map: next boundary event after `x`, or `x` itself.
    pub fn causality(&self, x: BoundaryPoint) -> Result<Event, TraceError> {
        let start = self.classify(x);
        if start.kind == EventKind::Exit {
            return Err(TraceError::NotInPositiveBoundary { curve: x.curve, t: x.t });
        }
        let fwd = self.trace(x, Direction::Forward)?;
        Ok(fwd.events.get(1).copied().unwrap_or(start))
    }

    /// Follows the trajectory through `p` to the point where `f` equals
    /// `level`, ignoring the boundary.
    pub fn advance_to_level(&self, p: Point, level: f64) -> Result<Point, TraceError> {
        let degenerate = |x: Point| TraceError::FieldDegenerate { at: [x.x, x.y] };
        let err_tol = self.config.step_tolerance * self.scale;
        let mut x = p;
        let mut remaining = level - self.flow.f_value(p);
        let mut h = remaining.abs().min(1e-3 * self.scale);
        let mut steps = 0;
        while remaining.abs() > 0.0 && steps < self.config.max_steps {
            let (y, taken, next) = adaptive_step(self.flow, x, h, remaining, err_tol).ok_or_else(|| degenerate(x))?;
            x = y;
            remaining -= taken;
            h = next.abs();
            steps += 1;
            if taken == 0.0 {
                break;
            }
        }
        // the f-clock makes df/dφ = 1, so a Newton step is a plain correction
        for _ in 0..3 {
            let r = rhs(self.flow, x).ok_or_else(|| degenerate(x))?;
            x += r * (level - self.flow.f_value(x));
        }
        Ok(x)
    }

    fn clearance(&self, p: Point) -> (f64, usize) {
        self.domain.clearance(p)
    }

    fn sub_step(&self, x: Point, s: f64) -> Result<Point, TraceError> {
        if s == 0.0 {
            return Ok(x);
        }
        dp_step(self.flow, x, s)
            .map(|r| r.0)
            .ok_or(TraceError::FieldDegenerate { at: [x.x, x.y] })
    }

    /// Rate of change of the distance to the nearest curve along the motion.
    fn approach_rate(&self, p: Point, dir: Direction) -> Option<f64> {
        let (_, b) = self.domain.signed_distance(p);
        let n = self.domain.boundary_frame(b).inward_normal;
        rhs(self.flow, p).map(|r| dir.sign() * r.dot(&n))
    }

    fn event_at(&self, p: Point, curve: usize) -> Event {
        let (_, t) = self.domain.curve_distance(curve, p);
        self.classify(BoundaryPoint::new(curve, t))
    }

    /// Bisects a sub-step from `x` on the sign of the distance to `curve`
    /// until the bracket is shorter than the boundary tolerance in arc length.
    /// `lo` is inside, `hi` outside.
    fn locate_crossing(&self, x: Point, mut lo: f64, mut hi: f64, curve: usize) -> Result<Point, TraceError> {
        let tol = self.domain.boundary_tolerance();
        let speed = rhs(self.flow, x)
            .map(|r| r.norm())
            .ok_or(TraceError::FieldDegenerate { at: [x.x, x.y] })?;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi || (hi - lo).abs() * speed <= tol {
                break;
            }
            let p = self.sub_step(x, mid)?;
            if self.domain.curve_distance(curve, p).0 > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let p = self.sub_step(x, 0.5 * (lo + hi))?;
        let (d, t) = self.domain.curve_distance(curve, p);
        if d.abs() <= tol {
            Ok(p)
        } else {
            Err(TraceError::GrazingUnresolved { curve, t })
        }
    }

    /// Golden-section minimum of the clearance over a sub-step.
    fn min_clearance(&self, x: Point, h: f64) -> Result<(f64, f64, usize), TraceError> {
        let r = 0.5 * (5f64.sqrt() - 1.0);
        let (mut a, mut b) = (0.0, h);
        let eval = |s: f64| -> Result<(f64, usize), TraceError> { Ok(self.clearance(self.sub_step(x, s)?)) };
        let mut c = b - r * (b - a);
        let mut d = a + r * (b - a);
        let mut fc = eval(c)?;
        let mut fd = eval(d)?;
        for _ in 0..60 {
            if fc.0 < fd.0 {
                b = d;
                d = c;
                fd = fc;
                c = b - r * (b - a);
                fc = eval(c)?;
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + r * (b - a);
                fd = eval(d)?;
            }
        }
        let s = 0.5 * (a + b);
        let (m, id) = eval(s)?;
        Ok((s, m, id))
    }

    fn integrate(
        &self,
        x0: Point,
        dir: Direction,
        events: &mut Vec<Event>,
        polyline: &mut Vec<Point>,
    ) -> Result<(), TraceError> {
        let tol = self.domain.boundary_tolerance();
        let noise = 1e-13 * self.scale;
        let exclusion = 1e-8 * self.scale;
        let sign = dir.sign();
        let delta_min = self.config.min_step_fraction * self.scale;
        let err_tol = self.config.step_tolerance * self.scale;
        let f_margin = 0.1 * (self.f_hi - self.f_lo) + 1e-9;
        // events closer than this to the previous one are the same event
        let mut last_event: Option<Point> = events.last().map(|e| self.domain.position(e.point));
        let fresh = |p: Point, last: &Option<Point>| last.map_or(true, |q| (p - q).norm() > exclusion);
        let mut x = x0;
        let mut sd = self.clearance(x).0;
        let mut h = sign * delta_min;
        for steps in 0..self.config.max_steps {
            let spd = rhs(self.flow, x)
                .map(|r| r.norm())
                .ok_or(TraceError::FieldDegenerate { at: [x.x, x.y] })?;
            let cap = sd.max(delta_min) / spd;
            let (y, taken, next) = adaptive_step(self.flow, x, h.abs(), sign * cap, err_tol)
                .ok_or(TraceError::FieldDegenerate { at: [x.x, x.y] })?;
            let (sd_y, cid) = self.clearance(y);

            let mut crossing: Option<(f64, usize)> = None;
            if sd_y < -noise {
                crossing = Some((taken, cid));
            } else if sd.min(sd_y) < 2.0 * cap * spd {
                // the clearance may dip below zero and recover within one step
                let ra = self.approach_rate(x, dir);
                let rb = self.approach_rate(y, dir);
                if let (Some(ra), Some(rb)) = (ra, rb) {
                    if ra < 0.0 && rb > 0.0 {
                        let (s_min, _, id) = self.min_clearance(x, taken)?;
                        let p = self.sub_step(x, s_min)?;
                        let m = self.domain.curve_distance(id, p).0;
                        if fresh(p, &last_event) {
                            if m < -noise {
                                crossing = Some((s_min, id));
                            } else if m <= tol {
                                let ev = self.event_at(p, id);
                                events.push(Event {
                                    kind: EventKind::Tangency,
                                    ..ev
                                });
                                last_event = Some(p);
                                if tangency_kind(self.domain, self.flow, ev.point) == TangencyKind::External {
                                    polyline.push(p);
                                    return Ok(());
                                }
                            }
                        }
                    }
                }
            }

            if let Some((s_hi, id)) = crossing {
                let p = self.locate_crossing(x, 0.0, s_hi, id)?;
                if fresh(p, &last_event) {
                    polyline.push(p);
                    let ev = self.event_at(p, id);
                    events.push(ev);
                    last_event = Some(p);
                    match (ev.kind, dir) {
                        (EventKind::Exit, Direction::Forward) | (EventKind::Entry, Direction::Backward) => return Ok(()),
                        (EventKind::Tangency, _) => {
                            if tangency_kind(self.domain, self.flow, ev.point) == TangencyKind::External {
                                return Ok(());
                            }
                            x = p;
                            sd = self.clearance(x).0.max(0.0);
                            continue;
                        }
                        _ => {
                            return Err(TraceError::GrazingUnresolved {
                                curve: id,
                                t: ev.point.t,
                            })
                        }
                    }
                }
            }

            x = y;
            sd = sd_y;
            h = next;
            if self.config.record_polyline {
                polyline.push(x);
            }
            let fx = self.flow.f_value(x);
            if fx > self.f_hi + f_margin || fx < self.f_lo - f_margin {
                return Err(TraceError::StepLimitExceeded {
                    steps,
                    at: [x.x, x.y],
                });
            }
        }
        Err(TraceError::StepLimitExceeded {
            steps: self.config.max_steps,
            at: [x.x, x.y],
        })
    }
}

fn join(back: Trajectory, fwd: Trajectory) -> Trajectory {
    let mut events = back.events;
    events.extend(fwd.events.into_iter().skip(1));
    let mut polyline = back.polyline;
    polyline.extend(fwd.polyline.into_iter().skip(1));
    Trajectory { events, polyline }
}
