//! The NMPC optimisation problem in single-shooting form.
//!
//! The decision vector `z` stacks the `N` inputs of the horizon as
//! `[T_0, φref_0, θref_0, T_1, ...]`. States are eliminated through the Euler
//! prediction model, so the objective and the constraint map are functions of
//! `z` and the parameter vector only. Gradients are computed by reverse
//! accumulation through the rollout.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::constraints::{
    assemble_constraints, h_circle_grad, h_rect_grad, plus, rect_from_segment,
    CircleObstacle, ObstacleCapacity, ObstacleSet, RateBounds, RectObstacle,
};
use crate::error::{Error, Result};
use crate::model::{rollout, ControlInput, ModelParams, UavState, INPUT_DIM, STATE_DIM};
use crate::perception::Detections;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostWeights {
    pub qx: [f64; STATE_DIM],
    pub qu: [f64; INPUT_DIM],
    pub qdu: [f64; INPUT_DIM],
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            qx: [2.0, 2.0, 40.0, 5.0, 5.0, 5.0, 8.0, 8.0],
            qu: [5.0, 10.0, 10.0],
            qdu: [10.0, 20.0, 20.0],
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        let all = self.qx.iter().chain(&self.qu).chain(&self.qdu);
        if all.clone().all(|w| *w >= 0.0 && w.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("negative or non-finite cost weight: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct References {
    pub x_ref: UavState,
    pub u_ref: ControlInput,
}

impl References {
    /// Position set-point with zero velocity and level attitude, hover input.
    pub fn setpoint(p: Vector3<f64>, params: &ModelParams) -> Self {
        Self {
            x_ref: UavState::hover_at(p),
            u_ref: ControlInput::hover(params),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HorizonConfig {
    pub n: usize,
    pub ts: f64,
}

impl Default for HorizonConfig {
    fn default() -> Self {
        Self { n: 40, ts: 0.05 }
    }
}

/// Everything the NMPC needs besides the decision variables.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    pub x_hat: UavState,
    pub refs: References,
    pub u_prev: ControlInput,
    /// Always padded to the problem's slot capacity.
    pub obstacles: ObstacleSet,
}

const CIRCLE_PARAMS: usize = 3;
const RECT_PARAMS: usize = 6;

impl ParameterVector {
    /// Length `n_p` of the flat layout for a given capacity.
    pub fn flat_len(cap: &ObstacleCapacity) -> usize {
        2 * STATE_DIM + 2 * INPUT_DIM + CIRCLE_PARAMS * cap.circles + RECT_PARAMS * cap.rects
    }

    /// Flat layout: `x̂, x_ref, u_ref, u_prev`, circles as `(cx, cy, r)`,
    /// rectangles as `(tx, ty, n_lo, n_hi, a_lo, a_hi)`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend(self.x_hat.to_array());
        out.extend(self.refs.x_ref.to_array());
        out.extend(self.refs.u_ref.to_array());
        out.extend(self.u_prev.to_array());
        for c in &self.obstacles.circles {
            out.extend([c.center.x, c.center.y, c.radius]);
        }
        for r in &self.obstacles.rects {
            out.extend([
                r.direction.x,
                r.direction.y,
                r.normal_bounds[0],
                r.normal_bounds[1],
                r.axial_bounds[0],
                r.axial_bounds[1],
            ]);
        }
        out
    }

    pub fn from_slice(s: &[f64], cap: &ObstacleCapacity) -> Result<Self> {
        let expected = Self::flat_len(cap);
        if s.len() != expected {
            return Err(Error::Dimension {
                expected,
                got: s.len(),
            });
        }
        let state = |o: usize| {
            let mut a = [0.0; STATE_DIM];
            a.copy_from_slice(&s[o..o + STATE_DIM]);
            UavState::from_array(&a)
        };
        let mut o = 2 * STATE_DIM + 2 * INPUT_DIM;
        let mut obstacles = ObstacleSet::default();
        for _ in 0..cap.circles {
            obstacles
                .circles
                .push(CircleObstacle::new(Vector2::new(s[o], s[o + 1]), s[o + 2]));
            o += CIRCLE_PARAMS;
        }
        for _ in 0..cap.rects {
            obstacles.rects.push(RectObstacle {
                direction: Vector2::new(s[o], s[o + 1]),
                normal_bounds: [s[o + 2], s[o + 3]],
                axial_bounds: [s[o + 4], s[o + 5]],
            });
            o += RECT_PARAMS;
        }
        Ok(Self {
            x_hat: state(0),
            refs: References {
                x_ref: state(STATE_DIM),
                u_ref: ControlInput::from_slice(&s[2 * STATE_DIM..]),
            },
            u_prev: ControlInput::from_slice(&s[2 * STATE_DIM + INPUT_DIM..]),
            obstacles,
        })
    }
}

/// Obstacle selection rule used when packing detections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PackingConfig {
    /// Only obstacles whose inflated geometry lies within this distance are kept, m.
    pub radius: f64,
    pub capacity: ObstacleCapacity,
}

impl Default for PackingConfig {
    fn default() -> Self {
        Self {
            radius: 3.0,
            capacity: ObstacleCapacity::default(),
        }
    }
}

/// Packs the measured state, references and detected obstacles.
///
/// Circles and segments are filtered to `cfg.radius`, sorted by distance to
/// the UAV, truncated to capacity and padded with far-away fillers. Segments
/// become rectangles inflated by `d_s`; degenerate segments are dropped.
pub fn pack_rho(
    x_hat: &UavState,
    refs: &References,
    u_prev: &ControlInput,
    detections: &Detections,
    d_s: f64,
    cfg: &PackingConfig,
) -> ParameterVector {
    let p = x_hat.p.xy();
    let mut circles: Vec<(f64, CircleObstacle)> = detections
        .circles
        .iter()
        .map(|c| (c.clearance(&p).max(0.0), *c))
        .filter(|(d, _)| *d <= cfg.radius)
        .collect();
    circles.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rects: Vec<(f64, RectObstacle)> = detections
        .segments
        .iter()
        .filter_map(|s| {
            let d = (s.distance_to(&p) - d_s).max(0.0);
            rect_from_segment(s, d_s).ok().map(|r| (d, r))
        })
        .filter(|(d, _)| *d <= cfg.radius)
        .collect();
    rects.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut obstacles = ObstacleSet {
        circles: circles.into_iter().take(cfg.capacity.circles).map(|c| c.1).collect(),
        rects: rects.into_iter().take(cfg.capacity.rects).map(|r| r.1).collect(),
    };
    obstacles
        .circles
        .resize(cfg.capacity.circles, CircleObstacle::filler());
    obstacles.rects.resize(cfg.capacity.rects, RectObstacle::filler());
    ParameterVector {
        x_hat: *x_hat,
        refs: *refs,
        u_prev: *u_prev,
        obstacles,
    }
}

/// Splits a flat decision vector into inputs.
pub fn inputs_from_z(z: &[f64]) -> Vec<ControlInput> {
    z.chunks_exact(INPUT_DIM).map(ControlInput::from_slice).collect()
}

pub fn z_from_inputs(u: &[ControlInput]) -> Vec<f64> {
    u.iter().flat_map(|u| u.to_array()).collect()
}

/// The parametric NMPC problem for a fixed horizon and tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct NmpcProblem {
    pub model: ModelParams,
    pub weights: CostWeights,
    pub horizon: usize,
    pub rate_bounds: RateBounds,
    pub capacity: ObstacleCapacity,
}

impl NmpcProblem {
    pub fn new(
        model: ModelParams,
        weights: CostWeights,
        horizon: HorizonConfig,
        rate_bounds: RateBounds,
        capacity: ObstacleCapacity,
    ) -> Result<Self> {
        model.validate()?;
        weights.validate()?;
        if horizon.n == 0 {
            return Err(Error::InvalidConfig("horizon must have at least one step".into()));
        }
        if (horizon.ts - model.ts).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "horizon sampling time {} differs from model sampling time {}",
                horizon.ts, model.ts
            )));
        }
        Ok(Self {
            model,
            weights,
            horizon: horizon.n,
            rate_bounds,
            capacity,
        })
    }

    /// Number of decision variables, `3N`.
    pub fn dim(&self) -> usize {
        INPUT_DIM * self.horizon
    }

    fn check_dim(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: z.len(),
            });
        }
        Ok(())
    }

    /// Tracking cost `J`: state error over `j = 0..=N`, input error and input
    /// change over the `N` decision inputs.
    pub fn cost(&self, z: &[f64], rho: &ParameterVector) -> Result<f64> {
        self.check_dim(z)?;
        let u = inputs_from_z(z);
        let w = &self.weights;
        let xr = rho.refs.x_ref.to_array();
        let ur = rho.refs.u_ref.to_array();
        let mut j = 0.0;
        for x in rollout(&rho.x_hat, &u, &self.model) {
            let xa = x.to_array();
            j += (0..STATE_DIM).map(|i| w.qx[i] * (xa[i] - xr[i]).powi(2)).sum::<f64>();
        }
        let mut prev = rho.u_prev.to_array();
        for ui in &u {
            let ua = ui.to_array();
            for i in 0..INPUT_DIM {
                j += w.qu[i] * (ua[i] - ur[i]).powi(2) + w.qdu[i] * (ua[i] - prev[i]).powi(2);
            }
            prev = ua;
        }
        Ok(j)
    }

    /// Constraint map `G(z, ρ)`; see [`assemble_constraints`] for the layout.
    pub fn constraints(&self, z: &[f64], rho: &ParameterVector) -> Result<Vec<f64>> {
        self.check_dim(z)?;
        assemble_constraints(
            &inputs_from_z(z),
            &rho.x_hat,
            &rho.u_prev,
            &rho.obstacles,
            &self.capacity,
            &self.rate_bounds,
            &self.model,
        )
    }

    /// `J + q ‖G‖²`.
    pub fn penalized_objective(&self, z: &[f64], rho: &ParameterVector, q: f64) -> Result<f64> {
        let g = self.constraints(z, rho)?;
        Ok(self.cost(z, rho)? + q * g.iter().map(|x| x * x).sum::<f64>())
    }

    /// Value and gradient of `J + q ‖G‖²` in a single forward/backward sweep.
    ///
    /// `rho.obstacles` must already be padded to capacity (as produced by
    /// [`pack_rho`] or [`ParameterVector::from_slice`]); extra fillers are harmless.
    pub fn value_and_gradient(
        &self,
        z: &[f64],
        rho: &ParameterVector,
        q: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        self.check_dim(z)?;
        if grad.len() != z.len() {
            return Err(Error::Dimension {
                expected: z.len(),
                got: grad.len(),
            });
        }
        let n = self.horizon;
        let m = &self.model;
        let w = &self.weights;
        let xr = rho.refs.x_ref.to_array();
        let ur = rho.refs.u_ref.to_array();
        let u = inputs_from_z(z);
        let states = rollout(&rho.x_hat, &u, m);

        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut value = 0.0;

        // input, input-change and rate terms act on z directly
        let mut prev = rho.u_prev.to_array();
        let rb = [f64::INFINITY, self.rate_bounds.dphi_max, self.rate_bounds.dtheta_max];
        for (k, ui) in u.iter().enumerate() {
            let ua = ui.to_array();
            for i in 0..INPUT_DIM {
                let e = ua[i] - ur[i];
                let d = ua[i] - prev[i];
                value += w.qu[i] * e * e + w.qdu[i] * d * d;
                grad[INPUT_DIM * k + i] += 2.0 * w.qu[i] * e + 2.0 * w.qdu[i] * d;
                if k > 0 {
                    grad[INPUT_DIM * (k - 1) + i] -= 2.0 * w.qdu[i] * d;
                }
                if i > 0 {
                    let up = plus(d - rb[i]);
                    let down = plus(-d - rb[i]);
                    value += q * (up * up + down * down);
                    let dd = 2.0 * q * (up - down);
                    grad[INPUT_DIM * k + i] += dd;
                    if k > 0 {
                        grad[INPUT_DIM * (k - 1) + i] -= dd;
                    }
                }
            }
            prev = ua;
        }

        // per-stage state terms and their gradient with respect to x_j
        let stage = |x: &UavState, value: &mut f64| -> [f64; STATE_DIM] {
            let xa = x.to_array();
            let mut gx = [0.0; STATE_DIM];
            for i in 0..STATE_DIM {
                let e = xa[i] - xr[i];
                *value += w.qx[i] * e * e;
                gx[i] = 2.0 * w.qx[i] * e;
            }
            let p = x.p.xy();
            for c in &rho.obstacles.circles {
                let (h, dh) = h_circle_grad(&p, c);
                if h > 0.0 {
                    *value += q * h * h;
                    gx[0] += 2.0 * q * h * dh.x;
                    gx[1] += 2.0 * q * h * dh.y;
                }
            }
            for r in &rho.obstacles.rects {
                let (h, dh) = h_rect_grad(&p, r);
                if h > 0.0 {
                    *value += q * h * h;
                    gx[0] += 2.0 * q * h * dh.x;
                    gx[1] += 2.0 * q * h * dh.y;
                }
            }
            gx
        };

        let mut lambda = stage(&states[n], &mut value);
        let ts = m.ts;
        let [ax, ay, az] = m.damping;
        for j in (0..n).rev() {
            let x = &states[j];
            let t = u[j].thrust;
            let (sp, cp) = x.phi.sin_cos();
            let (st, ct) = x.theta.sin_cos();
            let l = lambda;

            grad[INPUT_DIM * j] += ts * (cp * st * l[3] - sp * l[4] + cp * ct * l[5]);
            grad[INPUT_DIM * j + 1] += ts * m.k_phi / m.tau_phi * l[6];
            grad[INPUT_DIM * j + 2] += ts * m.k_theta / m.tau_theta * l[7];

            // λ_j = ∂ℓ_j/∂x_j + A_jᵀ λ_{j+1}
            let mut at_l = [0.0; STATE_DIM];
            at_l[0] = l[0];
            at_l[1] = l[1];
            at_l[2] = l[2];
            at_l[3] = l[3] + ts * (l[0] - ax * l[3]);
            at_l[4] = l[4] + ts * (l[1] - ay * l[4]);
            at_l[5] = l[5] + ts * (l[2] - az * l[5]);
            at_l[6] = l[6]
                + ts * (-t * sp * st * l[3] - t * cp * l[4] - t * sp * ct * l[5]
                    - l[6] / m.tau_phi);
            at_l[7] = l[7] + ts * (t * cp * ct * l[3] - t * cp * st * l[5] - l[7] / m.tau_theta);

            let gx = stage(x, &mut value);
            for i in 0..STATE_DIM {
                lambda[i] = gx[i] + at_l[i];
            }
        }
        if !value.is_finite() {
            return Err(Error::NonFinite("objective"));
        }
        Ok(value)
    }

    /// `‖G(z, ρ)‖∞`.
    pub fn infeasibility(&self, z: &[f64], rho: &ParameterVector) -> Result<f64> {
        Ok(self
            .constraints(z, rho)?
            .iter()
            .fold(0.0f64, |acc, g| acc.max(g.abs())))
    }

    /// Smallest absolute argument of any `[·]+` in `G`, i.e. how far `z` is
    /// from the set where the penalty is not twice differentiable.
    pub fn kink_distance(&self, z: &[f64], rho: &ParameterVector) -> Result<f64> {
        self.check_dim(z)?;
        let u = inputs_from_z(z);
        let mut d = f64::INFINITY;
        for x in rollout(&rho.x_hat, &u, &self.model) {
            let p = x.p.xy();
            for c in &rho.obstacles.circles {
                d = d.min((c.radius * c.radius - (p - c.center).norm_squared()).abs());
            }
            for r in &rho.obstacles.rects {
                d = r.half_planes(&p).iter().fold(d, |acc, h| acc.min(h.abs()));
            }
        }
        let mut prev = rho.u_prev;
        for ui in &u {
            let dphi = ui.phi_ref - prev.phi_ref;
            let dtheta = ui.theta_ref - prev.theta_ref;
            for v in [
                dphi - self.rate_bounds.dphi_max,
                -dphi - self.rate_bounds.dphi_max,
                dtheta - self.rate_bounds.dtheta_max,
                -dtheta - self.rate_bounds.dtheta_max,
            ] {
                d = d.min(v.abs());
            }
            prev = *ui;
        }
        Ok(d)
    }
}
