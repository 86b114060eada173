use nalgebra::{Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::metrics::{summarize, RunSummary};
use super::scenario::{ControllerKind, ScenarioSpec};
use crate::apf::{apf_setpoint, ForceBreakdown, ForceState};
use crate::error::Result;
use crate::model::{simulate_plant, ControlInput, ModelParams, UavState};
use crate::perception::{detect, raycast, to_pointcloud, Detections, Pose2, Scan};
use crate::problem::{pack_rho, NmpcProblem, PackingConfig, References};
use crate::solver::{penalty_solve, warm_start_shift, BoxBounds, SolverConfig, SolverOutput};

/// Receding-horizon NMPC with a shifted warm start between calls.
#[derive(Debug, Clone)]
pub struct NmpcController {
    pub problem: NmpcProblem,
    pub bounds: BoxBounds,
    pub solver: SolverConfig,
    pub packing: PackingConfig,
    pub d_s: f64,
    z_prev: Option<Vec<f64>>,
}

impl NmpcController {
    pub fn new(spec: &ScenarioSpec) -> Result<Self> {
        let problem = NmpcProblem::new(
            spec.model,
            spec.weights,
            spec.horizon,
            spec.rate_bounds,
            spec.packing.capacity,
        )?;
        let mut solver = spec.solver.clone();
        if spec.deterministic {
            solver.time_budget = f64::INFINITY;
        }
        Ok(Self {
            problem,
            bounds: spec.input_bounds,
            solver,
            packing: spec.packing,
            d_s: spec.d_s,
            z_prev: None,
        })
    }

    /// Solves for the current measurement and returns the full solver output;
    /// the input to apply is `u_seq[0]`.
    pub fn solve(
        &mut self,
        x_hat: &UavState,
        target: &Vector3<f64>,
        u_prev: &ControlInput,
        detections: &Detections,
    ) -> Result<SolverOutput> {
        let model = &self.problem.model;
        let refs = References::setpoint(*target, model);
        let rho = pack_rho(x_hat, &refs, u_prev, detections, self.d_s, &self.packing);
        let z0 = warm_start_shift(
            self.z_prev.as_deref(),
            self.problem.horizon,
            &ControlInput::hover(model),
        );
        let out = penalty_solve(&self.problem, &rho, &self.bounds, &z0, &self.solver)?;
        self.z_prev = Some(out.z.clone());
        Ok(out)
    }
}

/// One control period.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub t: f64,
    pub state: UavState,
    pub cmd: ControlInput,
    pub setpoint: Vector3<f64>,
    /// Potential-field way-point handed to the tracking MPC.
    pub shifted_setpoint: Option<Vector3<f64>>,
    pub min_range: f64,
    /// Distance from the UAV to the nearest true obstacle surface.
    pub true_clearance: f64,
    /// `None` in deterministic runs.
    pub solver_ms: Option<f64>,
    pub fpr: f64,
    /// `‖G‖∞` at the applied solution.
    pub infeas: f64,
    pub converged: bool,
    pub budget_exhausted: bool,
    pub inner_iters: usize,
    pub outer_iters: usize,
    pub n_circles: usize,
    pub n_segments: usize,
    pub forces: Option<ForceBreakdown>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub scenario: String,
    pub controller: ControllerKind,
    pub seed: u64,
    pub rows: Vec<RunRow>,
    pub summary: RunSummary,
    /// Raw scans, kept only when the scenario asks for them.
    pub scans: Vec<Scan>,
}

fn propagate(x: &UavState, u: &ControlInput, model: &ModelParams, substeps: usize) -> UavState {
    let dt = model.ts / substeps as f64;
    (0..substeps).fold(*x, |x, _| simulate_plant(&x, u, model, dt))
}

/// Flies `spec` in closed loop until arrival, collision or `duration_max`.
pub fn run_scenario(spec: &ScenarioSpec) -> Result<RunLog> {
    spec.validate()?;
    let model = spec.model;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let mut controller = NmpcController::new(spec)?;
    let mut forces = ForceState::default();
    let mut x = UavState::hover_at(spec.start);
    let mut u_prev = ControlInput::hover(&model);
    let mut rows = Vec::new();
    let mut scans = Vec::new();
    let mut dwell_start: Option<f64> = None;

    for k in 0..=spec.max_steps() {
        let t = k as f64 * model.ts;
        let scan = raycast(&spec.scene, &Pose2::new(x.p.x, x.p.y, 0.0), &spec.lidar, &mut rng);

        let (target, shifted, detections, force) = match spec.controller.apf_mode() {
            None => {
                let det = detect(&scan, spec.d_s, &spec.detector);
                (spec.setpoint, None, det, None)
            }
            Some(mode) => {
                let points: Vec<Vector2<f64>> = to_pointcloud(&scan).iter().map(|p| p.point).collect();
                let out = apf_setpoint(&spec.setpoint, &x.p, &points, mode, &mut forces, &spec.apf);
                (out.setpoint, Some(out.setpoint), Detections::default(), Some(out.forces))
            }
        };
        let sol = controller.solve(&x, &target, &u_prev, &detections)?;
        let u = sol.u_seq[0];

        let true_clearance = spec.scene.clearance(&x.p.xy());
        rows.push(RunRow {
            t,
            state: x,
            cmd: u,
            setpoint: spec.setpoint,
            shifted_setpoint: shifted,
            min_range: scan.min_range(),
            true_clearance,
            solver_ms: (!spec.deterministic).then_some(sol.elapsed.as_secs_f64() * 1e3),
            fpr: sol.fpr_norm,
            infeas: sol.infeasibility_max,
            converged: sol.converged,
            budget_exhausted: sol.budget_exhausted,
            inner_iters: sol.inner_iters,
            outer_iters: sol.outer_iters,
            n_circles: detections.circles.len(),
            n_segments: detections.segments.len(),
            forces: force,
        });
        if spec.record_scans {
            scans.push(scan);
        }

        if true_clearance < spec.collision_distance || !x.is_finite() {
            break;
        }
        if (x.p - spec.setpoint).norm() <= spec.arrival_radius {
            let since = *dwell_start.get_or_insert(t);
            if t - since >= spec.arrival_dwell - 1e-9 {
                break;
            }
        } else {
            dwell_start = None;
        }

        x = propagate(&x, &u, &model, spec.plant_substeps);
        u_prev = u;
    }

    let summary = summarize(&rows, spec);
    Ok(RunLog {
        scenario: spec.name.clone(),
        controller: spec.controller,
        seed: spec.rng_seed,
        rows,
        summary,
        scans,
    })
}
