//! Static SVG figures of scenes, causality maps, trajectory graphs and the
//! reconstructed bulk.

use std::fmt::Write;

use crate::flowfield::{MorseStrata, TangencyKind};
use crate::geometry::{BoundaryPoint, Domain, Point};
use crate::holography::AlphaModel;
use crate::tracing::CausalityDataset;
use crate::trajspace::TrajectoryGraph;

const SIZE: f64 = 640.0;
const PAD: f64 = 24.0;

struct Canvas {
    lo: Point,
    scale: [f64; 2],
    height: f64,
    body: String,
}

impl Canvas {
    fn new(lo: Point, hi: Point) -> Self {
        let w = (hi.x - lo.x).max(1e-12);
        let h = (hi.y - lo.y).max(1e-12);
        let s = (SIZE - 2.0 * PAD) / w.max(h);
        Canvas {
            lo,
            scale: [s, s],
            height: h * s + 2.0 * PAD,
            body: String::new(),
        }
    }

    /// Independent scaling of the two axes to fill the frame.
    fn stretched(lo: Point, hi: Point) -> Self {
        let w = (hi.x - lo.x).max(1e-12);
        let h = (hi.y - lo.y).max(1e-12);
        Canvas {
            lo,
            scale: [(SIZE - 2.0 * PAD) / w, (SIZE - 2.0 * PAD) / h],
            height: SIZE,
            body: String::new(),
        }
    }

    fn map(&self, p: Point) -> (f64, f64) {
        (
            PAD + (p.x - self.lo.x) * self.scale[0],
            self.height - PAD - (p.y - self.lo.y) * self.scale[1],
        )
    }

    fn polyline(&mut self, pts: &[Point], stroke: &str, width: f64, closed: bool) {
        if pts.len() < 2 {
            return;
        }
        let mut d = String::new();
        for (i, p) in pts.iter().enumerate() {
            let (x, y) = self.map(*p);
            let _ = write!(d, "{}{x:.2},{y:.2} ", if i == 0 { "M" } else { "L" });
        }
        if closed {
            d.push('Z');
        }
        let _ = writeln!(
            self.body,
            r#"<path d="{}" fill="none" stroke="{stroke}" stroke-width="{width}"/>"#,
            d.trim_end()
        );
    }

    fn polygon(&mut self, pts: &[Point], fill: &str) {
        let coords: Vec<String> = pts
            .iter()
            .map(|p| {
                let (x, y) = self.map(*p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(self.body, r#"<polygon points="{}" fill="{fill}" stroke="none"/>"#, coords.join(" "));
    }

    fn dot(&mut self, p: Point, r: f64, fill: &str) {
        let (x, y) = self.map(p);
        let _ = writeln!(self.body, r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r}" fill="{fill}"/>"#);
    }

    fn text(&mut self, p: Point, s: &str) {
        let (x, y) = self.map(p);
        let _ = writeln!(self.body, r#"<text x="{x:.2}" y="{y:.2}" font-size="11" font-family="sans-serif">{s}</text>"#);
    }

    fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{:.0}\" viewBox=\"0 0 {SIZE} {:.0}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.height, self.height, self.body
        )
    }
}

fn padded_box(domain: &Domain) -> (Point, Point) {
    let (lo, hi) = domain.bounding_box();
    let m = 0.05 * domain.scale();
    (lo - Point::new(m, m), hi + Point::new(m, m))
}

fn arc_points(domain: &Domain, curve: usize, start: f64, width: f64) -> Vec<Point> {
    let n = ((width * 400.0).ceil() as usize).max(2);
    (0..=n)
        .map(|i| domain.position(BoundaryPoint::new(curve, start + width * i as f64 / n as f64)))
        .collect()
}

/// The domain with trajectories, boundary arcs colored by the sign of the
/// normal component of the field, and tangency points.
pub fn domain_figure(domain: &Domain, strata: &MorseStrata, trajectories: &[Vec<Point>]) -> String {
    let (lo, hi) = padded_box(domain);
    let mut c = Canvas::new(lo, hi);
    for t in trajectories {
        c.polyline(t, "#9a9a9a", 0.8, false);
    }
    for (arcs, color) in [(&strata.positive_arcs, "#1b7f3b"), (&strata.negative_arcs, "#c0392b")] {
        for a in arcs {
            c.polyline(&arc_points(domain, a.curve, a.start, a.width()), color, 2.5, false);
        }
    }
    for id in 0..domain.curve_count() {
        if !strata.positive_arcs.iter().chain(&strata.negative_arcs).any(|a| a.curve == id) {
            c.polyline(domain.polyline(id), "black", 1.5, true);
        }
    }
    for t in &strata.tangency_points {
        let fill = match t.kind {
            TangencyKind::External => "#2c3e50",
            TangencyKind::Internal => "#e67e22",
        };
        c.dot(domain.position(t.point), 3.5, fill);
    }
    c.finish()
}

/// Chords joining each sampled boundary point to its image.
pub fn causality_figure(domain: &Domain, dataset: &CausalityDataset, max_chords: usize) -> String {
    let (lo, hi) = padded_box(domain);
    let mut c = Canvas::new(lo, hi);
    for id in 0..domain.curve_count() {
        c.polyline(domain.polyline(id), "black", 1.2, true);
    }
    let moving: Vec<_> = dataset.samples.iter().filter(|s| !s.is_fixed()).collect();
    let step = (moving.len() / max_chords.max(1)).max(1);
    for s in moving.iter().step_by(step) {
        let a = domain.position(s.source);
        let b = domain.position(s.target);
        c.polyline(&[a, b], "#2e86c1", 0.6, false);
        c.dot(a, 1.2, "#1b7f3b");
    }
    for s in dataset.samples.iter().filter(|s| s.is_fixed()) {
        c.dot(domain.position(s.source), 3.0, "#c0392b");
    }
    c.finish()
}

/// Vertices placed at their tangency points; edges drawn as arcs bent away
/// from parallel edges, loops as circles through the domain.
pub fn graph_figure(domain: &Domain, graph: &TrajectoryGraph) -> String {
    let (lo, hi) = padded_box(domain);
    let mut c = Canvas::new(lo, hi);
    for id in 0..domain.curve_count() {
        c.polyline(domain.polyline(id), "#dddddd", 1.0, true);
    }
    let place = |v: usize| -> Point {
        let fiber = &graph.vertices[v].fiber;
        let e = fiber
            .iter()
            .find(|e| e.kind == crate::tracing::EventKind::Tangency)
            .unwrap_or(&fiber[0]);
        domain.position(BoundaryPoint::new(e.curve, e.t))
    };
    let mut seen: std::collections::HashMap<(usize, usize), usize> = Default::default();
    for edge in &graph.edges {
        match edge.endpoints {
            Some([a, b]) => {
                let key = (a.min(b), a.max(b));
                let k = *seen.entry(key).and_modify(|k| *k += 1).or_insert(0);
                let (pa, pb) = (place(a), place(b));
                let mid = 0.5 * (pa + pb);
                let d = pb - pa;
                let normal = Point::new(-d.y, d.x);
                let bend = if k == 0 { 0.0 } else { 0.25 * ((k + 1) / 2) as f64 * if k % 2 == 1 { 1.0 } else { -1.0 } };
                let ctrl = mid + bend * normal;
                let pts: Vec<Point> = (0..=24)
                    .map(|i| {
                        let s = i as f64 / 24.0;
                        (1.0 - s) * (1.0 - s) * pa + 2.0 * s * (1.0 - s) * ctrl + s * s * pb
                    })
                    .collect();
                c.polyline(&pts, "#2e86c1", 2.0, false);
            }
            None => {
                let (blo, bhi) = domain.bounding_box();
                let center = 0.5 * (blo + bhi);
                let r = 0.35 * (bhi.x - blo.x).min(bhi.y - blo.y);
                let pts: Vec<Point> = (0..=96)
                    .map(|i| {
                        let a = std::f64::consts::TAU * i as f64 / 96.0;
                        center + r * Point::new(a.cos(), a.sin())
                    })
                    .collect();
                c.polyline(&pts, "#2e86c1", 2.0, true);
            }
        }
    }
    for (i, v) in graph.vertices.iter().enumerate() {
        let p = place(i);
        c.dot(p, 4.0, if v.valence == 1 { "#2c3e50" } else { "#e67e22" });
    }
    c.finish()
}

/// Each edge drawn as a strip over its coordinate, between the lower and
/// upper boundary values of `f` along the trajectories.
pub fn alpha_figure(model: &AlphaModel) -> String {
    let n = model.graph.edges.len().max(1) as f64;
    let f_lo = model
        .boundary_image
        .iter()
        .flat_map(|b| b.points.iter().map(|p| p[1]))
        .fold(f64::INFINITY, f64::min);
    let f_hi = model
        .boundary_image
        .iter()
        .flat_map(|b| b.points.iter().map(|p| p[1]))
        .fold(f64::NEG_INFINITY, f64::max);
    let (f_lo, f_hi) = if f_lo < f_hi { (f_lo, f_hi) } else { (0.0, 1.0) };
    let mut c = Canvas::stretched(Point::new(0.0, f_lo), Point::new(n, f_hi));
    let strip = |e: usize, p: &[f64; 2]| Point::new(e as f64 + 0.05 + 0.9 * p[0], p[1]);
    for e in 0..model.graph.edges.len() {
        let branch = |upper: bool| model.boundary_image.iter().find(|b| b.edge == e && b.upper == upper);
        let (Some(lower), Some(upper)) = (branch(false), branch(true)) else { continue };
        let mut outline: Vec<Point> = lower.points.iter().map(|p| strip(e, p)).collect();
        outline.extend(upper.points.iter().rev().map(|p| strip(e, p)));
        c.polygon(&outline, "#d6eaf8");
        for b in [lower, upper] {
            let pts: Vec<Point> = b.points.iter().map(|p| strip(e, p)).collect();
            c.polyline(&pts, "#1b4f72", 1.5, false);
        }
        c.text(Point::new(e as f64 + 0.45, f_lo), &format!("e{e}"));
    }
    c.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Curve;

    #[test]
    fn figure_is_well_formed() {
        let domain = Domain::new(Curve::circle([0.0, 0.0], 1.0), vec![], 0.5).unwrap();
        let strata = MorseStrata {
            positive_arcs: vec![],
            negative_arcs: vec![],
            tangency_points: vec![],
        };
        let svg = domain_figure(&domain, &strata, &[vec![Point::new(0.0, -1.0), Point::new(0.0, 1.0)]]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<path").count(), 2);
    }
}
