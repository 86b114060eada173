//! Box-constrained PANOC wrapped in a quadratic-penalty outer loop.
//!
//! [`penalty_solve`] minimises `J(z) + q‖G(z)‖²` for an increasing sequence of
//! penalty weights, warm-starting each stage at the previous solution and
//! stopping once `‖G‖∞` drops below the constraint tolerance or the time
//! budget runs out.

mod lbfgs;
mod panoc;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use lbfgs::Lbfgs;
pub use panoc::{panoc_solve, PanocOptions, PanocResult, PanocStatus};

use crate::error::{Error, Result};
use crate::model::{ControlInput, INPUT_DIM};
use crate::problem::{inputs_from_z, NmpcProblem, ParameterVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub fpr_tol: f64,
    /// Tolerance on `‖G‖∞` for leaving the penalty loop early.
    pub constraint_tol: f64,
    pub q_schedule: Vec<f64>,
    /// Per penalty stage.
    pub max_inner_iters: usize,
    /// Wall-clock budget for one full penalty solve, s. `inf` disables it.
    pub time_budget: f64,
    pub lbfgs_memory: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            fpr_tol: 1e-3,
            constraint_tol: 1e-2,
            q_schedule: vec![1000.0, 4000.0, 16000.0, 64000.0],
            max_inner_iters: 500,
            time_budget: 0.04,
            lbfgs_memory: 10,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fpr_tol > 0.0 && self.constraint_tol > 0.0) {
            return Err(Error::InvalidConfig("solver tolerances must be positive".into()));
        }
        if self.q_schedule.is_empty()
            || self.q_schedule[0] <= 0.0
            || self.q_schedule.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::InvalidConfig(format!(
                "penalty schedule must be positive and strictly increasing: {:?}",
                self.q_schedule
            )));
        }
        if self.lbfgs_memory == 0 || self.max_inner_iters == 0 || !(self.time_budget > 0.0) {
            return Err(Error::InvalidConfig(
                "lbfgs_memory, max_inner_iters and time_budget must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Per-input bounds, replicated over the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoxBounds {
    pub u_min: [f64; INPUT_DIM],
    pub u_max: [f64; INPUT_DIM],
}

impl Default for BoxBounds {
    fn default() -> Self {
        Self {
            u_min: [5.0, -0.2, -0.2],
            u_max: [13.5, 0.2, 0.2],
        }
    }
}

impl BoxBounds {
    pub fn validate(&self) -> Result<()> {
        if self.u_min.iter().zip(&self.u_max).all(|(a, b)| a <= b) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("u_min > u_max in {self:?}")))
        }
    }

    pub fn over_horizon(&self, n: usize) -> DecisionBox {
        DecisionBox {
            lower: self.u_min.repeat(n),
            upper: self.u_max.repeat(n),
        }
    }
}

/// Component-wise box on the decision vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DecisionBox {
    pub fn contains(&self, z: &[f64]) -> bool {
        z.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }
}

/// Clamps `z` into the box in place.
pub fn project_box(z: &mut [f64], bounds: &DecisionBox) {
    for (v, (lo, hi)) in z.iter_mut().zip(bounds.lower.iter().zip(&bounds.upper)) {
        *v = v.clamp(*lo, *hi);
    }
}

#[derive(Debug, Clone)]
pub struct PenaltyStage {
    pub q: f64,
    pub z: Vec<f64>,
    pub fpr_norm: f64,
    pub infeasibility: f64,
    pub inner_iters: usize,
}

#[derive(Debug, Clone)]
pub struct SolverOutput {
    pub u_seq: Vec<ControlInput>,
    pub z: Vec<f64>,
    pub fpr_norm: f64,
    /// `‖G‖₂` at the solution.
    pub infeasibility: f64,
    /// `‖G‖∞` at the solution.
    pub infeasibility_max: f64,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub elapsed: Duration,
    /// The last inner problem reached `fpr_tol`.
    pub converged: bool,
    pub budget_exhausted: bool,
    pub stages: Vec<PenaltyStage>,
}

/// Runs the penalty schedule from `z_warm`; never fails on non-convergence.
pub fn penalty_solve(
    problem: &NmpcProblem,
    rho: &ParameterVector,
    bounds: &BoxBounds,
    z_warm: &[f64],
    config: &SolverConfig,
) -> Result<SolverOutput> {
    let start = Instant::now();
    let deadline = config
        .time_budget
        .is_finite()
        .then(|| start + Duration::from_secs_f64(config.time_budget));
    let box_bounds = bounds.over_horizon(problem.horizon);
    if z_warm.len() != problem.dim() {
        return Err(Error::Dimension {
            expected: problem.dim(),
            got: z_warm.len(),
        });
    }

    let mut z = z_warm.to_vec();
    project_box(&mut z, &box_bounds);
    let mut stages = Vec::with_capacity(config.q_schedule.len());
    let mut inner_total = 0;
    let mut last: Option<PanocResult> = None;
    let mut budget_exhausted = false;

    for &q in &config.q_schedule {
        let opts = PanocOptions {
            fpr_tol: config.fpr_tol,
            max_iters: config.max_inner_iters,
            lbfgs_memory: config.lbfgs_memory,
            deadline,
            record_envelope: false,
        };
        let res = panoc_solve(
            |z: &[f64], g: &mut [f64]| problem.value_and_gradient(z, rho, q, g),
            &box_bounds,
            &z,
            &opts,
        )?;
        inner_total += res.iters;
        z.clone_from(&res.z);
        let g = problem.constraints(&z, rho)?;
        let inf_max = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        stages.push(PenaltyStage {
            q,
            z: z.clone(),
            fpr_norm: res.fpr_norm,
            infeasibility: g.iter().map(|v| v * v).sum::<f64>().sqrt(),
            inner_iters: res.iters,
        });
        budget_exhausted = res.status == PanocStatus::TimeBudget;
        last = Some(res);
        if budget_exhausted || inf_max <= config.constraint_tol {
            break;
        }
    }

    let last = last.expect("q_schedule is non-empty");
    let g = problem.constraints(&z, rho)?;
    Ok(SolverOutput {
        u_seq: inputs_from_z(&z),
        fpr_norm: last.fpr_norm,
        infeasibility: g.iter().map(|v| v * v).sum::<f64>().sqrt(),
        infeasibility_max: g.iter().fold(0.0f64, |a, v| a.max(v.abs())),
        outer_iters: stages.len(),
        inner_iters: inner_total,
        elapsed: start.elapsed(),
        converged: last.converged(),
        budget_exhausted,
        stages,
        z,
    })
}

/// Receding-horizon warm start: drop the first input and repeat the last.
/// Without a previous solution every input is `fallback`.
pub fn warm_start_shift(previous: Option<&[f64]>, n: usize, fallback: &ControlInput) -> Vec<f64> {
    match previous {
        Some(prev) if prev.len() == INPUT_DIM * n && n > 0 => {
            let mut z = Vec::with_capacity(prev.len());
            z.extend_from_slice(&prev[INPUT_DIM..]);
            z.extend_from_slice(&prev[prev.len() - INPUT_DIM..]);
            z
        }
        _ => fallback.to_array().repeat(n),
    }
}
