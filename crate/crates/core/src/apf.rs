//! Artificial potential fields on the raw point cloud.
//!
//! The field shifts the position set-point of a tracking controller instead of
//! commanding the vehicle directly.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ApfConfig {
    pub l_a: f64,
    pub l_r: [f64; 2],
    pub l_offset: f64,
    pub l_s: f64,
    pub r_f: f64,
    pub r_s: f64,
    pub f_max: f64,
    pub df_max: f64,
}

impl Default for ApfConfig {
    fn default() -> Self {
        Self {
            l_a: 1.0,
            l_r: [0.08, 0.16],
            l_offset: 0.04,
            l_s: 1.5,
            r_f: 0.75,
            r_s: 0.4,
            f_max: 6.0,
            df_max: 0.5,
        }
    }
}

impl ApfConfig {
    pub fn validate(&self) -> Result<()> {
        let gains = [self.l_a, self.l_r[0], self.l_r[1], self.l_offset, self.l_s, self.f_max, self.df_max];
        if gains.iter().any(|g| !(*g >= 0.0)) {
            return Err(Error::InvalidConfig("APF gains must be non-negative".into()));
        }
        if !(self.r_s > 0.0 && self.r_s < self.r_f) {
            return Err(Error::InvalidConfig(format!(
                "need 0 < r_s < r_F, got r_s = {}, r_F = {}",
                self.r_s, self.r_f
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApfMode {
    Baseline,
    Enhanced,
}

/// Repulsive force from the previous step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ForceState {
    pub f_r_prev: Vector2<f64>,
}

/// Points with their distance and unit direction, skipping the origin.
fn polar(points: &[Vector2<f64>]) -> impl Iterator<Item = (f64, Vector2<f64>)> + '_ {
    points.iter().filter_map(|p| {
        let d = p.norm();
        (d > 0.0).then(|| (d, p / d))
    })
}

/// Linear falloff with a constant per-point offset inside `r_F`.
pub fn repulsive_baseline(points: &[Vector2<f64>], cfg: &ApfConfig) -> Vector2<f64> {
    let gain = Vector2::from(cfg.l_r);
    polar(points)
        .filter(|(d, _)| *d <= cfg.r_f)
        .map(|(d, u)| -(gain * (1.0 - d / cfg.r_f)).component_mul(&u) - cfg.l_offset * u)
        .sum()
}

/// Quadratic falloff inside `r_F` plus a constant push inside `r_s`.
pub fn repulsive_enhanced(points: &[Vector2<f64>], cfg: &ApfConfig) -> Vector2<f64> {
    let gain = Vector2::from(cfg.l_r);
    polar(points)
        .filter(|(d, _)| *d <= cfg.r_f)
        .map(|(d, u)| {
            let mut f = -(gain * (1.0 - d / cfg.r_f).powi(2)).component_mul(&u);
            if d <= cfg.r_s {
                f -= cfg.l_s * u;
            }
            f
        })
        .sum()
}

fn clamp_norm(v: Vector2<f64>, cap: f64) -> Vector2<f64> {
    let n = v.norm();
    if n > cap {
        v * (cap / n)
    } else {
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceBreakdown {
    /// After the magnitude cap, before the rate cap.
    pub repulsive_capped: Vector2<f64>,
    /// After both caps; stored as the next previous force.
    pub repulsive: Vector2<f64>,
    pub attractive: Vector2<f64>,
    pub total: Vector2<f64>,
}

/// Saturates and combines the attractive and repulsive forces.
pub fn force_step(
    f_a: Vector2<f64>,
    f_r: Vector2<f64>,
    state: &mut ForceState,
    cfg: &ApfConfig,
) -> ForceBreakdown {
    let capped = clamp_norm(f_r, cfg.f_max);
    let repulsive = state.f_r_prev + clamp_norm(capped - state.f_r_prev, cfg.df_max);
    let attractive = clamp_norm(f_a, 1.0);
    let total = clamp_norm(attractive + repulsive, 1.0);
    state.f_r_prev = repulsive;
    ForceBreakdown {
        repulsive_capped: capped,
        repulsive,
        attractive,
        total,
    }
}

/// Shifted set-point and the forces behind it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApfOutput {
    pub setpoint: Vector3<f64>,
    pub forces: ForceBreakdown,
}

/// Moves the set-point to `p_hat + F` in the horizontal plane; altitude keeps `p_ref`.
///
/// `points` are sensor-frame returns, which coincide in orientation with the
/// world frame since yaw is held at zero.
pub fn apf_setpoint(
    p_ref: &Vector3<f64>,
    p_hat: &Vector3<f64>,
    points: &[Vector2<f64>],
    mode: ApfMode,
    state: &mut ForceState,
    cfg: &ApfConfig,
) -> ApfOutput {
    let f_a = cfg.l_a * (p_ref.xy() - p_hat.xy());
    let forces = match mode {
        ApfMode::Baseline => {
            let f_r = repulsive_baseline(points, cfg);
            state.f_r_prev = f_r;
            ForceBreakdown {
                repulsive_capped: f_r,
                repulsive: f_r,
                attractive: f_a,
                total: f_a + f_r,
            }
        }
        ApfMode::Enhanced => force_step(f_a, repulsive_enhanced(points, cfg), state, cfg),
    };
    let xy = p_hat.xy() + forces.total;
    ApfOutput {
        setpoint: Vector3::new(xy.x, xy.y, p_ref.z),
        forces,
    }
}
