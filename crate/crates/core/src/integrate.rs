//! Dormand–Prince 5(4) steps for `dx/dφ = v / df(v)`, i.e. with `f` as the clock.

use crate::flowfield::FlowSpec;
use crate::geometry::Point;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// fifth minus fourth order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Right-hand side in the `f` clock. `None` where `df(v)` is not positive.
#[inline]
pub(crate) fn rhs(flow: &FlowSpec, x: Point) -> Option<Point> {
    let v = flow.velocity(x);
    let d = flow.grad_f(x).dot(&v);
    if d > 0.0 && d.is_finite() {
        Some(v / d)
    } else {
        None
    }
}

/// One embedded step of size `h` (negative for backward). Returns the fifth
/// order solution and the norm of the error estimate.
pub(crate) fn dp_step(flow: &FlowSpec, x: Point, h: f64) -> Option<(Point, f64)> {
    let k1 = rhs(flow, x)?;
    let k2 = rhs(flow, x + k1 * (h * A21))?;
    let k3 = rhs(flow, x + (k1 * A31 + k2 * A32) * h)?;
    let k4 = rhs(flow, x + (k1 * A41 + k2 * A42 + k3 * A43) * h)?;
    let k5 = rhs(flow, x + (k1 * A51 + k2 * A52 + k3 * A53 + k4 * A54) * h)?;
    let k6 = rhs(flow, x + (k1 * A61 + k2 * A62 + k3 * A63 + k4 * A64 + k5 * A65) * h)?;
    let y = x + (k1 * B1 + k3 * B3 + k4 * B4 + k5 * B5 + k6 * B6) * h;
    let k7 = rhs(flow, y)?;
    let err = (k1 * E1 + k3 * E3 + k4 * E4 + k5 * E5 + k6 * E6 + k7 * E7) * h;
    Some((y, err.norm()))
}

/// Error-controlled advance by at most `h_max` in `f`; shrinks the step until
/// the local error is below `tol`. Returns the new point, the step taken and
/// a suggestion for the next step.
pub(crate) fn adaptive_step(
    flow: &FlowSpec,
    x: Point,
    h_try: f64,
    h_max: f64,
    tol: f64,
) -> Option<(Point, f64, f64)> {
    let dir = h_max.signum();
    let mut h = dir * h_try.abs().min(h_max.abs());
    for _ in 0..60 {
        let (y, err) = dp_step(flow, x, h)?;
        if err <= tol || h.abs() < 1e-300 {
            let grow = if err > 0.0 { 0.9 * (tol / err).powf(0.2) } else { 5.0 };
            return Some((y, h, h * grow.clamp(0.2, 5.0)));
        }
        h *= (0.9 * (tol / err).powf(0.2)).clamp(0.1, 0.9);
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parabola_in_f_clock_is_exact() {
        let flow = FlowSpec::parse("1", "x", "x", None).unwrap();
        // dx/dφ = (1, x): y(φ) = y0 + (φ² - x0²)/2 with x = φ
        let mut x = Point::new(0.0, 0.0);
        let mut h = 0.1;
        let mut phi = 0.0;
        while phi < 1.0 {
            let (y, taken, next) = adaptive_step(&flow, x, h, 1.0 - phi, 1e-13).unwrap();
            phi += taken;
            x = y;
            h = next;
        }
        assert!((x.x - 1.0).abs() < 1e-12);
        assert!((x.y - 0.5).abs() < 1e-12);
    }

    #[test]
    fn non_traversing_point_stops() {
        let flow = FlowSpec::parse("1", "0", "-x", None).unwrap();
        assert!(dp_step(&flow, Point::new(0.0, 0.0), 0.1).is_none());
    }
}
