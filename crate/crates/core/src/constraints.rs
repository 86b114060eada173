//! Parametric obstacle and input-rate constraints in `[h]+ = 0` form.
//!
//! Every constraint is written as a residual that is zero exactly when the
//! constraint holds and positive otherwise. Circles use the squared-radius
//! form; rectangles are the product of four half-plane terms built around a
//! detected line segment.
//!
//! Rectangle lines are stored in unit-normal form `n·p - c`, which is a
//! rescaling of the slope-intercept residual `m p_x - p_y + b`. The unit-normal
//! form has no singularity for vertical lines and conditions all slopes
//! equally; [`RectObstacle::slope_form`] recovers the slope-intercept view
//! together with the scale factor relating the two.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{rollout, ControlInput, ModelParams, UavState};

/// Position of the filler obstacles used for unused parameter slots.
pub const FAR_AWAY: f64 = 1.0e6;

/// `[h]+ = max(0, h)`.
#[inline]
pub fn plus(h: f64) -> f64 {
    h.max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircleObstacle {
    pub center: Vector2<f64>,
    /// True radius plus the safety distance.
    pub radius: f64,
}

impl CircleObstacle {
    pub fn new(center: Vector2<f64>, radius: f64) -> Self {
        Self { center, radius }
    }

    /// Unit circle far outside any scenario, used to pad unused slots.
    pub fn filler() -> Self {
        Self::new(Vector2::new(FAR_AWAY, FAR_AWAY), 1.0)
    }

    /// Signed distance from `p` to the circle boundary (negative inside).
    pub fn clearance(&self, p: &Vector2<f64>) -> f64 {
        (p - self.center).norm() - self.radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSegment {
    pub p1: Vector2<f64>,
    pub p2: Vector2<f64>,
}

impl LineSegment {
    pub fn new(p1: Vector2<f64>, p2: Vector2<f64>) -> Self {
        Self { p1, p2 }
    }

    pub fn length(&self) -> f64 {
        (self.p2 - self.p1).norm()
    }

    pub fn distance_to(&self, p: &Vector2<f64>) -> f64 {
        let d = self.p2 - self.p1;
        let len2 = d.norm_squared();
        if len2 == 0.0 {
            return (p - self.p1).norm();
        }
        let s = ((p - self.p1).dot(&d) / len2).clamp(0.0, 1.0);
        (p - (self.p1 + s * d)).norm()
    }
}

/// Rectangle as the intersection of two slabs.
///
/// With `t = direction` and `n = (-t_y, t_x)`, the interior is
/// `normal_bounds[0] < n·p < normal_bounds[1]` and
/// `axial_bounds[0] < t·p < axial_bounds[1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectObstacle {
    /// Unit vector along the originating segment.
    pub direction: Vector2<f64>,
    pub normal_bounds: [f64; 2],
    pub axial_bounds: [f64; 2],
}

/// Slope-intercept description of a rectangle's four lines.
///
/// `precond` is the product of the per-line normalisations, so that
/// `precond * Π(slope-form [·]+ terms) == h_rect`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeForm {
    pub m_par: f64,
    pub b_par1: f64,
    pub b_par2: f64,
    pub m_perp: f64,
    pub b_perp1: f64,
    pub b_perp2: f64,
    pub precond: f64,
}

impl RectObstacle {
    pub fn normal(&self) -> Vector2<f64> {
        Vector2::new(-self.direction.y, self.direction.x)
    }

    pub fn filler() -> Self {
        Self {
            direction: Vector2::new(1.0, 0.0),
            normal_bounds: [FAR_AWAY - 0.5, FAR_AWAY + 0.5],
            axial_bounds: [FAR_AWAY - 0.5, FAR_AWAY + 0.5],
        }
    }

    /// The four signed half-plane terms, positive on the interior side.
    #[inline]
    pub fn half_planes(&self, p: &Vector2<f64>) -> [f64; 4] {
        let n = self.normal();
        let s = n.dot(p);
        let a = self.direction.dot(p);
        [
            s - self.normal_bounds[0],
            self.normal_bounds[1] - s,
            a - self.axial_bounds[0],
            self.axial_bounds[1] - a,
        ]
    }

    pub fn corners(&self) -> [Vector2<f64>; 4] {
        let n = self.normal();
        let t = self.direction;
        let [s0, s1] = self.normal_bounds;
        let [a0, a1] = self.axial_bounds;
        [
            t * a0 + n * s0,
            t * a1 + n * s0,
            t * a1 + n * s1,
            t * a0 + n * s1,
        ]
    }

    /// Slope-intercept view, unavailable when either line family is vertical.
    pub fn slope_form(&self) -> Option<SlopeForm> {
        // orient both normals so n_y > 0; then n·p - c = -n_y (m p_x - p_y + b)
        let line_pair = |n: Vector2<f64>, lo: f64, hi: f64| -> Option<(f64, f64, f64, f64)> {
            if n.y.abs() < 1e-12 {
                return None;
            }
            let (n, lo, hi) = if n.y > 0.0 { (n, lo, hi) } else { (-n, -hi, -lo) };
            let m = -n.x / n.y;
            // [hi - n·p]+ = n_y [m p_x - p_y + hi/n_y]+, [n·p - lo]+ = n_y [-(m p_x - p_y + lo/n_y)]+
            Some((m, hi / n.y, lo / n.y, n.y))
        };
        let (m_par, b_par1, b_par2, ny_par) =
            line_pair(self.normal(), self.normal_bounds[0], self.normal_bounds[1])?;
        let (m_perp, b_perp1, b_perp2, ny_perp) =
            line_pair(self.direction, self.axial_bounds[0], self.axial_bounds[1])?;
        Some(SlopeForm {
            m_par,
            b_par1,
            b_par2,
            m_perp,
            b_perp1,
            b_perp2,
            precond: (ny_par * ny_perp).powi(2),
        })
    }
}

/// Maximum change of the roll/pitch references between consecutive steps, rad.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateBounds {
    pub dphi_max: f64,
    pub dtheta_max: f64,
}

impl Default for RateBounds {
    fn default() -> Self {
        Self {
            dphi_max: 0.08,
            dtheta_max: 0.08,
        }
    }
}

/// Circle residual `[r² - |p - c|²]+`.
#[inline]
pub fn h_circle(p: &Vector2<f64>, obs: &CircleObstacle) -> f64 {
    plus(obs.radius * obs.radius - (p - obs.center).norm_squared())
}

/// Circle residual and its gradient with respect to `p`.
#[inline]
pub fn h_circle_grad(p: &Vector2<f64>, obs: &CircleObstacle) -> (f64, Vector2<f64>) {
    let d = p - obs.center;
    let h = obs.radius * obs.radius - d.norm_squared();
    if h > 0.0 {
        (h, -2.0 * d)
    } else {
        (0.0, Vector2::zeros())
    }
}

/// Rectangle residual: product of the four positive parts.
#[inline]
pub fn h_rect(p: &Vector2<f64>, obs: &RectObstacle) -> f64 {
    obs.half_planes(p).iter().map(|&a| plus(a)).product()
}

/// Rectangle residual and its gradient with respect to `p`.
#[inline]
pub fn h_rect_grad(p: &Vector2<f64>, obs: &RectObstacle) -> (f64, Vector2<f64>) {
    let a = obs.half_planes(p);
    if a.iter().any(|&x| x <= 0.0) {
        return (0.0, Vector2::zeros());
    }
    let n = obs.normal();
    let t = obs.direction;
    let h = a[0] * a[1] * a[2] * a[3];
    let g = n * (a[1] - a[0]) * a[2] * a[3] + t * (a[3] - a[2]) * a[0] * a[1];
    (h, g)
}

/// Builds the rectangle enclosing `seg` with margin `d_s` on every side.
pub fn rect_from_segment(seg: &LineSegment, d_s: f64) -> Result<RectObstacle> {
    let d = seg.p2 - seg.p1;
    let len = d.norm();
    if len < 1e-6 {
        return Err(Error::DegenerateSegment(
            [seg.p1.x, seg.p1.y],
            [seg.p2.x, seg.p2.y],
        ));
    }
    let t = d / len;
    let n = Vector2::new(-t.y, t.x);
    let c = n.dot(&seg.p1);
    let a1 = t.dot(&seg.p1);
    Ok(RectObstacle {
        direction: t,
        normal_bounds: [c - d_s, c + d_s],
        axial_bounds: [a1 - d_s, a1 + len + d_s],
    })
}

/// Rate residuals for every consecutive pair, `u_prev -> u_seq[0]` first.
///
/// Per pair the layout is `[φ up, φ down, θ up, θ down]`.
pub fn rate_residuals(u_seq: &[ControlInput], u_prev: &ControlInput, bounds: &RateBounds) -> Vec<f64> {
    let mut out = Vec::with_capacity(4 * u_seq.len());
    let mut prev = u_prev;
    for u in u_seq {
        let dphi = u.phi_ref - prev.phi_ref;
        let dtheta = u.theta_ref - prev.theta_ref;
        out.push(plus(dphi - bounds.dphi_max));
        out.push(plus(-dphi - bounds.dphi_max));
        out.push(plus(dtheta - bounds.dtheta_max));
        out.push(plus(-dtheta - bounds.dtheta_max));
        prev = u;
    }
    out
}

/// Fixed number of circle and rectangle slots in the parametric problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObstacleCapacity {
    pub circles: usize,
    pub rects: usize,
}

impl Default for ObstacleCapacity {
    fn default() -> Self {
        Self {
            circles: 5,
            rects: 10,
        }
    }
}

/// Obstacles handed to the constraint assembly, already inflated.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObstacleSet {
    pub circles: Vec<CircleObstacle>,
    pub rects: Vec<RectObstacle>,
}

impl ObstacleSet {
    pub fn check_capacity(&self, cap: &ObstacleCapacity) -> Result<()> {
        if self.circles.len() > cap.circles {
            return Err(Error::CapacityExceeded {
                kind: "circle",
                capacity: cap.circles,
                supplied: self.circles.len(),
            });
        }
        if self.rects.len() > cap.rects {
            return Err(Error::CapacityExceeded {
                kind: "rectangle",
                capacity: cap.rects,
                supplied: self.rects.len(),
            });
        }
        Ok(())
    }

    /// Pads with far-away fillers up to the slot capacity.
    pub fn padded(&self, cap: &ObstacleCapacity) -> Result<ObstacleSet> {
        self.check_capacity(cap)?;
        let mut out = self.clone();
        out.circles.resize(cap.circles, CircleObstacle::filler());
        out.rects.resize(cap.rects, RectObstacle::filler());
        Ok(out)
    }
}

/// Constraint vector `G(z, ρ)`.
///
/// Layout: for each circle slot the residuals at predicted steps `0..=N`,
/// then the same for each rectangle slot, then [`rate_residuals`].
#[allow(clippy::too_many_arguments)]
pub fn assemble_constraints(
    u_seq: &[ControlInput],
    x0: &UavState,
    u_prev: &ControlInput,
    obstacles: &ObstacleSet,
    capacity: &ObstacleCapacity,
    bounds: &RateBounds,
    params: &ModelParams,
) -> Result<Vec<f64>> {
    let padded = obstacles.padded(capacity)?;
    let positions: Vec<Vector2<f64>> = rollout(x0, u_seq, params)
        .iter()
        .map(|x| x.p.xy())
        .collect();
    let mut g = Vec::with_capacity(
        (capacity.circles + capacity.rects) * positions.len() + 4 * u_seq.len(),
    );
    for c in &padded.circles {
        g.extend(positions.iter().map(|p| h_circle(p, c)));
    }
    for r in &padded.rects {
        g.extend(positions.iter().map(|p| h_rect(p, r)));
    }
    g.extend(rate_residuals(u_seq, u_prev, bounds));
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn v(x: f64, y: f64) -> Vector2<f64> {
        Vector2::new(x, y)
    }

    #[test]
    fn plus_examples() {
        assert_eq!(plus(-5.0), 0.0);
        assert_eq!(plus(0.0), 0.0);
        assert_eq!(plus(3.2), 3.2);
    }

    #[test]
    fn circle_examples() {
        let c = CircleObstacle::new(v(0.0, 0.0), 2.0);
        assert_eq!(h_circle(&v(0.0, 0.0), &c), 4.0);
        assert_eq!(h_circle(&v(3.0, 0.0), &c), 0.0);
        assert_eq!(h_circle(&v(2.0, 0.0), &c), 0.0);
    }

    #[test]
    fn axis_aligned_rectangle() {
        let seg = LineSegment::new(v(0.0, 0.0), v(2.0, 0.0));
        let r = rect_from_segment(&seg, 0.4).unwrap();
        let corners = r.corners();
        let expected = [v(-0.4, -0.4), v(2.4, -0.4), v(2.4, 0.4), v(-0.4, 0.4)];
        for e in expected {
            assert!(
                corners.iter().any(|c| (c - e).norm() < 1e-12),
                "missing corner {e:?} in {corners:?}"
            );
        }
        // distances to the four lines at (1, 0): 0.4, 0.4, 1.4, 1.4
        assert_abs_diff_eq!(h_rect(&v(1.0, 0.0), &r), 0.4 * 0.4 * 1.4 * 1.4, epsilon = 1e-12);
        assert_eq!(h_rect(&v(1.0, 1.0), &r), 0.0);
        assert_eq!(h_rect(&v(1.0, 0.4), &r), 0.0);
        assert_eq!(h_rect(&v(2.4, 0.1), &r), 0.0);
        assert_eq!(h_rect(&v(5.0, 0.0), &r), 0.0);
        // horizontal segment: the perpendicular family is vertical
        assert!(r.slope_form().is_none());
    }

    #[test]
    fn zero_inflation_has_empty_interior() {
        let seg = LineSegment::new(v(0.0, 0.0), v(1.0, 1.0));
        let r = rect_from_segment(&seg, 0.0).unwrap();
        for p in [v(0.5, 0.5), v(0.2, 0.3), v(1.0, 1.0), v(-1.0, 4.0)] {
            assert_eq!(h_rect(&p, &r), 0.0);
        }
    }

    #[test]
    fn degenerate_segment_rejected() {
        let seg = LineSegment::new(v(1.0, 1.0), v(1.0, 1.0 + 1e-7));
        assert!(matches!(
            rect_from_segment(&seg, 0.4),
            Err(Error::DegenerateSegment(..))
        ));
    }

    #[test]
    fn slope_form_reproduces_residual() {
        let seg = LineSegment::new(v(0.3, -0.2), v(2.0, 1.1));
        let r = rect_from_segment(&seg, 0.4).unwrap();
        let s = r.slope_form().unwrap();
        let slope_residual = |p: &Vector2<f64>| {
            plus(s.m_par * p.x - p.y + s.b_par1)
                * plus(-(s.m_par * p.x - p.y + s.b_par2))
                * plus(s.m_perp * p.x - p.y + s.b_perp1)
                * plus(-(s.m_perp * p.x - p.y + s.b_perp2))
        };
        for p in [v(1.0, 0.5), v(1.2, 0.3), v(0.4, -0.1), v(3.0, 3.0), v(-1.0, 0.0)] {
            assert_abs_diff_eq!(s.precond * slope_residual(&p), h_rect(&p, &r), epsilon = 1e-12);
        }
        assert_abs_diff_eq!(s.m_par * s.m_perp, -1.0, epsilon = 1e-12);
        let m = s.m_par;
        // relative to the 1/(|m_par| + |m_perp|) scaling, unit-normal form differs by (1+m²)/|m|
        let sum_slope_precond = 1.0 / (s.m_par.abs() + s.m_perp.abs());
        let p = v(1.0, 0.5);
        assert_abs_diff_eq!(
            sum_slope_precond * slope_residual(&p),
            h_rect(&p, &r) * (1.0 + m * m) / m.abs(),
            epsilon = 1e-10
        );
    }

    #[test]
    fn rate_examples() {
        let b = RateBounds::default();
        let u = |phi: f64| ControlInput::new(9.81, phi, 0.0);
        assert!(rate_residuals(&[u(0.0); 5], &u(0.0), &b).iter().all(|r| *r == 0.0));
        let r = rate_residuals(&[u(0.1)], &u(0.0), &b);
        assert_abs_diff_eq!(r[0], 0.02, epsilon = 1e-12);
        assert_eq!(r[1], 0.0);
        let r = rate_residuals(&[u(0.0)], &u(0.1), &b);
        assert_eq!(r[0], 0.0);
        assert_abs_diff_eq!(r[1], 0.02, epsilon = 1e-12);
    }

    #[test]
    fn assemble_without_obstacles_is_zero() {
        let params = ModelParams::default();
        let u = vec![ControlInput::new(10.0, 0.05, -0.03); 6];
        let g = assemble_constraints(
            &u,
            &UavState::default(),
            &ControlInput::hover(&params),
            &ObstacleSet::default(),
            &ObstacleCapacity::default(),
            &RateBounds::default(),
            &params,
        )
        .unwrap();
        assert_eq!(g.len(), 15 * 7 + 24);
        assert!(g.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn assemble_hover_inside_circle() {
        let params = ModelParams::default();
        let x0 = UavState::hover_at(nalgebra::Vector3::new(0.1, 0.0, 1.0));
        let u = vec![ControlInput::hover(&params); 4];
        let obs = ObstacleSet {
            circles: vec![CircleObstacle::new(v(0.0, 0.0), 0.5)],
            rects: vec![],
        };
        let cap = ObstacleCapacity::default();
        let g = assemble_constraints(&u, &x0, &u[0], &obs, &cap, &RateBounds::default(), &params)
            .unwrap();
        let expected = 0.25 - 0.01;
        for gk in &g[..5] {
            assert_abs_diff_eq!(*gk, expected, epsilon = 1e-12);
        }
        assert!(g[5..].iter().all(|x| *x == 0.0));
    }

    #[test]
    fn assemble_capacity_error() {
        let params = ModelParams::default();
        let obs = ObstacleSet {
            circles: vec![CircleObstacle::new(v(0.0, 0.0), 0.5); 6],
            rects: vec![],
        };
        let err = assemble_constraints(
            &[ControlInput::hover(&params)],
            &UavState::default(),
            &ControlInput::hover(&params),
            &obs,
            &ObstacleCapacity::default(),
            &RateBounds::default(),
            &params,
        );
        assert!(matches!(err, Err(Error::CapacityExceeded { supplied: 6, .. })));
    }

    fn point_in_convex_polygon(p: &Vector2<f64>, poly: &[Vector2<f64>; 4]) -> Option<bool> {
        // None when within 1e-9 of an edge
        let mut sign = 0.0;
        for i in 0..4 {
            let a = poly[i];
            let b = poly[(i + 1) % 4];
            let cross = (b - a).perp(&(p - a));
            let len = (b - a).norm();
            if (cross / len).abs() < 1e-9 {
                return None;
            }
            if sign == 0.0 {
                sign = cross.signum();
            } else if cross.signum() != sign {
                return Some(false);
            }
        }
        Some(true)
    }

    proptest! {
        #[test]
        fn plus_is_idempotent_and_monotone(a in -10.0f64..10.0, b in -10.0f64..10.0) {
            prop_assert_eq!(plus(plus(a)), plus(a));
            if a <= b { prop_assert!(plus(a) <= plus(b)); }
            if a <= 0.0 { prop_assert_eq!(plus(a), 0.0); }
        }

        #[test]
        fn circle_is_rotation_invariant_and_decreasing(
            cx in -5.0f64..5.0, cy in -5.0f64..5.0, r in 0.1f64..3.0,
            d1 in 0.0f64..1.0, d2 in 0.0f64..1.0, ang1 in 0.0f64..std::f64::consts::TAU, ang2 in 0.0f64..std::f64::consts::TAU,
        ) {
            let c = CircleObstacle::new(v(cx, cy), r);
            let at = |d: f64, a: f64| c.center + d * r * v(a.cos(), a.sin());
            let h1 = h_circle(&at(d1, ang1), &c);
            prop_assert!((h1 - h_circle(&at(d1, ang2), &c)).abs() < 1e-9);
            if d1 + 1e-6 < d2 {
                prop_assert!(h1 > h_circle(&at(d2, ang2), &c));
            }
        }

        #[test]
        fn rect_matches_polygon_oracle(
            x1 in -3.0f64..3.0, y1 in -3.0f64..3.0, ang in 0.0f64..std::f64::consts::TAU, len in 0.1f64..4.0,
            ds in 0.05f64..0.8, px in -5.0f64..5.0, py in -5.0f64..5.0,
        ) {
            let p1 = v(x1, y1);
            let seg = LineSegment::new(p1, p1 + len * v(ang.cos(), ang.sin()));
            let r = rect_from_segment(&seg, ds).unwrap();
            let p = v(px, py);
            if let Some(inside) = point_in_convex_polygon(&p, &r.corners()) {
                let h = h_rect(&p, &r);
                if inside { prop_assert!(h > 0.0); } else { prop_assert_eq!(h, 0.0); }
            }
        }

        #[test]
        fn rect_translation_and_rotation_invariance(
            x1 in -3.0f64..3.0, y1 in -3.0f64..3.0, ang in 0.0f64..std::f64::consts::TAU, len in 0.1f64..4.0,
            ds in 0.05f64..0.8, px in -3.0f64..3.0, py in -3.0f64..3.0,
            tx in -10.0f64..10.0, ty in -10.0f64..10.0,
        ) {
            let p1 = v(x1, y1);
            let seg = LineSegment::new(p1, p1 + len * v(ang.cos(), ang.sin()));
            let p = v(px, py);
            let h = h_rect(&p, &rect_from_segment(&seg, ds).unwrap());

            let t = v(tx, ty);
            let shifted = LineSegment::new(seg.p1 + t, seg.p2 + t);
            let ht = h_rect(&(p + t), &rect_from_segment(&shifted, ds).unwrap());
            prop_assert!((h - ht).abs() <= 1e-8 * (1.0 + h.abs()));

            let rot = |q: Vector2<f64>| v(-q.y, q.x);
            let rotated = LineSegment::new(rot(seg.p1), rot(seg.p2));
            let hr = h_rect(&rot(p), &rect_from_segment(&rotated, ds).unwrap());
            prop_assert!((h - hr).abs() <= 1e-8 * (1.0 + h.abs()));
        }

        #[test]
        fn analytic_point_gradients_match_fd(
            px in -1.0f64..1.0, py in -1.0f64..1.0, ang in 0.0f64..std::f64::consts::TAU,
        ) {
            let c = CircleObstacle::new(v(0.1, -0.2), 1.3);
            let seg = LineSegment::new(v(-0.5, -0.5), v(-0.5, -0.5) + 1.5 * v(ang.cos(), ang.sin()));
            let r = rect_from_segment(&seg, 0.6).unwrap();
            let p = v(px, py);
            let eps = 1e-6;
            for (h, g) in [
                (Box::new(|q: &Vector2<f64>| h_circle(q, &c)) as Box<dyn Fn(&Vector2<f64>) -> f64>, h_circle_grad(&p, &c).1),
                (Box::new(|q: &Vector2<f64>| h_rect(q, &r)), h_rect_grad(&p, &r).1),
            ] {
                let fx = (h(&(p + v(eps, 0.0))) - h(&(p - v(eps, 0.0)))) / (2.0 * eps);
                let fy = (h(&(p + v(0.0, eps))) - h(&(p - v(0.0, eps)))) / (2.0 * eps);
                // kinks make FD unreliable within eps of a boundary; skip those
                let near_kink = r.half_planes(&p).iter().any(|a| a.abs() < 1e-4)
                    || (c.radius.powi(2) - (p - c.center).norm_squared()).abs() < 1e-4;
                if !near_kink {
                    prop_assert!((fx - g.x).abs() < 1e-6 && (fy - g.y).abs() < 1e-6);
                }
            }
        }
    }
}
