//! Planar-attitude quadrotor dynamics in a yaw-compensated world frame.
//!
//! The state carries position, velocity and the roll/pitch angles; the
//! attitude loop is modelled as a first-order lag on the commanded angles.
//! [`predict_step`] is the forward-Euler map used inside the NMPC, while
//! [`simulate_plant`] integrates the same vector field with RK4 and serves as
//! ground truth in closed-loop simulation.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard gravity, m/s².
pub const GRAVITY: f64 = 9.81;

/// Number of scalar state components.
pub const STATE_DIM: usize = 8;
/// Number of scalar input components.
pub const INPUT_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UavState {
    /// Position, m.
    pub p: Vector3<f64>,
    /// Velocity, m/s.
    pub v: Vector3<f64>,
    /// Roll, rad.
    pub phi: f64,
    /// Pitch, rad.
    pub theta: f64,
}

impl Default for UavState {
    fn default() -> Self {
        Self::hover_at(Vector3::zeros())
    }
}

impl UavState {
    /// At rest and level at `p`.
    pub fn hover_at(p: Vector3<f64>) -> Self {
        Self {
            p,
            v: Vector3::zeros(),
            phi: 0.0,
            theta: 0.0,
        }
    }

    pub fn to_array(&self) -> [f64; STATE_DIM] {
        [
            self.p.x, self.p.y, self.p.z, self.v.x, self.v.y, self.v.z, self.phi, self.theta,
        ]
    }

    pub fn from_array(a: &[f64; STATE_DIM]) -> Self {
        Self {
            p: Vector3::new(a[0], a[1], a[2]),
            v: Vector3::new(a[3], a[4], a[5]),
            phi: a[6],
            theta: a[7],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }
}

/// Mass-normalised thrust plus roll and pitch references.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    /// Thrust, m/s².
    pub thrust: f64,
    pub phi_ref: f64,
    pub theta_ref: f64,
}

impl ControlInput {
    pub const fn new(thrust: f64, phi_ref: f64, theta_ref: f64) -> Self {
        Self {
            thrust,
            phi_ref,
            theta_ref,
        }
    }

    /// Level hover input `(g, 0, 0)`.
    pub fn hover(params: &ModelParams) -> Self {
        Self::new(params.g, 0.0, 0.0)
    }

    pub fn to_array(&self) -> [f64; INPUT_DIM] {
        [self.thrust, self.phi_ref, self.theta_ref]
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Self::new(s[0], s[1], s[2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    pub g: f64,
    /// Linear damping (A_x, A_y, A_z), 1/s.
    pub damping: [f64; 3],
    pub k_phi: f64,
    pub k_theta: f64,
    pub tau_phi: f64,
    pub tau_theta: f64,
    /// Thrust constant mapping the normalised command to acceleration.
    pub thrust_constant: f64,
    /// Sampling time, s.
    pub ts: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            g: GRAVITY,
            damping: [0.1, 0.1, 0.2],
            k_phi: 1.0,
            k_theta: 1.0,
            tau_phi: 0.23,
            tau_theta: 0.25,
            thrust_constant: GRAVITY.sqrt() / 0.48,
            ts: 0.05,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.g > 0.0
            && self.tau_phi > 0.0
            && self.tau_theta > 0.0
            && self.ts > 0.0
            && self.damping.iter().all(|a| a.is_finite())
            && self.k_phi.is_finite()
            && self.k_theta.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("model parameters out of range: {self:?}")))
        }
    }
}

/// State derivative `(ṗ, v̇, φ̇, θ̇)` as a flat array.
pub fn continuous_dynamics(x: &UavState, u: &ControlInput, params: &ModelParams) -> [f64; STATE_DIM] {
    let (sp, cp) = x.phi.sin_cos();
    let (st, ct) = x.theta.sin_cos();
    let [ax, ay, az] = params.damping;
    let t = u.thrust;
    [
        x.v.x,
        x.v.y,
        x.v.z,
        t * cp * st - ax * x.v.x,
        -t * sp - ay * x.v.y,
        t * cp * ct - params.g - az * x.v.z,
        (params.k_phi * u.phi_ref - x.phi) / params.tau_phi,
        (params.k_theta * u.theta_ref - x.theta) / params.tau_theta,
    ]
}

fn advance(x: &UavState, dx: &[f64; STATE_DIM], h: f64) -> UavState {
    let mut a = x.to_array();
    for (ai, di) in a.iter_mut().zip(dx) {
        *ai += h * di;
    }
    UavState::from_array(&a)
}

/// One forward-Euler step of length `params.ts`.
pub fn predict_step(x: &UavState, u: &ControlInput, params: &ModelParams) -> UavState {
    advance(x, &continuous_dynamics(x, u, params), params.ts)
}

/// Single-shooting prediction: returns `u_seq.len() + 1` states starting at `x0`.
pub fn rollout(x0: &UavState, u_seq: &[ControlInput], params: &ModelParams) -> Vec<UavState> {
    let mut states = Vec::with_capacity(u_seq.len() + 1);
    states.push(*x0);
    let mut x = *x0;
    for u in u_seq {
        x = predict_step(&x, u, params);
        states.push(x);
    }
    states
}

/// Classic RK4 over `dt` with the input held constant.
pub fn simulate_plant(x: &UavState, u: &ControlInput, params: &ModelParams, dt: f64) -> UavState {
    let k1 = continuous_dynamics(x, u, params);
    let k2 = continuous_dynamics(&advance(x, &k1, dt / 2.0), u, params);
    let k3 = continuous_dynamics(&advance(x, &k2, dt / 2.0), u, params);
    let k4 = continuous_dynamics(&advance(x, &k3, dt), u, params);
    let mut slope = [0.0; STATE_DIM];
    for i in 0..STATE_DIM {
        slope[i] = (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0;
    }
    advance(x, &slope, dt)
}

/// Maps a thrust acceleration to the normalised motor command `u_t = sqrt(T / C)`,
/// clamped to `[0, 1]`.
pub fn thrust_to_command(thrust: f64, c: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "thrust constant must be positive, got {c}"
        )));
    }
    Ok((thrust.max(0.0) / c).sqrt().clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn hover_is_steady_state() {
        let p = ModelParams::default();
        let x = UavState::default();
        let d = continuous_dynamics(&x, &ControlInput::hover(&p), &p);
        assert!(d.iter().all(|v| *v == 0.0));
        assert_eq!(predict_step(&x, &ControlInput::hover(&p), &p), x);
    }

    #[test]
    fn damping_only() {
        let p = ModelParams::default();
        let mut x = UavState::default();
        x.v.x = 1.0;
        let d = continuous_dynamics(&x, &ControlInput::hover(&p), &p);
        assert_abs_diff_eq!(d[3], -0.1, epsilon = 1e-15);
        assert_eq!(d[0], 1.0);
        assert!(d[4..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn first_order_roll_law() {
        let p = ModelParams::default();
        let u = ControlInput::new(p.g, 0.2, 0.0);
        let d = continuous_dynamics(&UavState::default(), &u, &p);
        assert_abs_diff_eq!(d[6], 0.2 / 0.23, epsilon = 1e-12);
        assert_abs_diff_eq!(d[6], 0.86957, epsilon = 1e-5);
        let x1 = predict_step(&UavState::default(), &u, &p);
        assert_abs_diff_eq!(x1.phi, 0.05 * 0.2 / 0.23, epsilon = 1e-15);
        assert_abs_diff_eq!(x1.phi, 0.04348, epsilon = 1e-5);
        assert_eq!(x1.theta, 0.0);
        assert_eq!(x1.p, Vector3::zeros());
    }

    #[test]
    fn rollout_lengths() {
        let p = ModelParams::default();
        let x0 = UavState::default();
        let states = rollout(&x0, &vec![ControlInput::hover(&p); 40], &p);
        assert_eq!(states.len(), 41);
        assert!(states.iter().all(|s| *s == x0));

        let u = ControlInput::new(10.0, 0.1, -0.1);
        let states = rollout(&x0, &[u], &p);
        assert_eq!(states, vec![x0, predict_step(&x0, &u, &p)]);
    }

    #[test]
    fn thrust_mapping() {
        let c = GRAVITY.sqrt() / 0.48;
        assert_eq!(thrust_to_command(0.0, c).unwrap(), 0.0);
        assert_abs_diff_eq!(thrust_to_command(c, c).unwrap(), 1.0, epsilon = 1e-15);
        let ut = thrust_to_command(GRAVITY, c).unwrap();
        // sqrt(0.48·√g) exceeds full throttle, so hover saturates
        assert!((0.48 * GRAVITY.sqrt()).sqrt() > 1.0);
        assert_eq!(ut, 1.0);
        let half = thrust_to_command(0.25 * c, c).unwrap();
        assert_abs_diff_eq!(half, 0.5, epsilon = 1e-15);
        assert_eq!(thrust_to_command(10.0 * c, c).unwrap(), 1.0);
        assert!(thrust_to_command(1.0, 0.0).is_err());
        assert!(thrust_to_command(1.0, -2.0).is_err());
    }

    #[test]
    fn plant_hover_and_small_step_consistency() {
        let p = ModelParams::default();
        let x = UavState::default();
        assert_eq!(simulate_plant(&x, &ControlInput::hover(&p), &p, 0.05), x);

        let x = UavState {
            p: Vector3::new(0.3, -1.0, 2.0),
            v: Vector3::new(0.5, 0.2, -0.1),
            phi: 0.1,
            theta: -0.05,
        };
        let u = ControlInput::new(10.5, -0.1, 0.15);
        let f = continuous_dynamics(&x, &u, &p);
        for dt in [1e-3, 1e-4] {
            let next = simulate_plant(&x, &u, &p, dt).to_array();
            let x0 = x.to_array();
            for i in 0..STATE_DIM {
                let fd = (next[i] - x0[i]) / dt;
                assert!((fd - f[i]).abs() < 20.0 * dt, "component {i}: {fd} vs {}", f[i]);
            }
        }
    }

    #[test]
    fn attitude_step_matches_closed_form() {
        let p = ModelParams::default();
        let u = ControlInput::new(p.g, 0.1, 0.0);
        let mut x = UavState::default();
        let dt = 0.01;
        let mut t = 0.0;
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            x = simulate_plant(&x, &u, &p, dt);
            t += dt;
            let exact = 0.1 * (1.0 - (-t / p.tau_phi).exp());
            worst = worst.max((x.phi - exact).abs());
        }
        assert!(worst < 1e-6, "max deviation {worst}");
        // 63 % of the step after one time constant
        let mut x = UavState::default();
        for _ in 0..23 {
            x = simulate_plant(&x, &u, &p, dt);
        }
        assert_abs_diff_eq!(x.phi / 0.1, 1.0 - (-1.0f64).exp(), epsilon = 1e-6);
    }

    #[test]
    fn roll_and_pitch_channels_decouple() {
        let p = ModelParams::default();
        let x = UavState {
            phi: 0.05,
            theta: -0.02,
            ..UavState::default()
        };
        let a = continuous_dynamics(&x, &ControlInput::new(9.0, 0.1, 0.0), &p);
        let b = continuous_dynamics(&x, &ControlInput::new(9.0, -0.2, 0.0), &p);
        assert_eq!(a[7], b[7]);
        let c = continuous_dynamics(&x, &ControlInput::new(9.0, 0.1, 0.2), &p);
        assert_eq!(a[6], c[6]);
    }

    #[test]
    fn euler_vs_rk4_mismatch_is_second_order() {
        let x = UavState {
            p: Vector3::new(0.0, 0.0, 1.0),
            v: Vector3::new(1.0, -0.5, 0.2),
            phi: 0.1,
            theta: 0.15,
        };
        let u = ControlInput::new(11.0, -0.15, 0.2);
        let err = |ts: f64| {
            let p = ModelParams {
                ts,
                ..ModelParams::default()
            };
            let e = predict_step(&x, &u, &p).to_array();
            let r = simulate_plant(&x, &u, &p, ts).to_array();
            e.iter().zip(&r).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        };
        let ratio = err(0.05) / err(0.025);
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }
}
