//! Self-checks on small problems, run by `quadnav check`.

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::runner::run_scenario;
use super::scenario::ScenarioSpec;
use crate::apf::{apf_setpoint, ApfConfig, ApfMode, ForceState};
use crate::constraints::{CircleObstacle, LineSegment, ObstacleCapacity, RateBounds};
use crate::error::Result;
use crate::model::{predict_step, simulate_plant, ControlInput, ModelParams, UavState};
use crate::perception::{Detections, Scene};
use crate::problem::{pack_rho, CostWeights, HorizonConfig, NmpcProblem, PackingConfig, ParameterVector, References};
use crate::solver::{panoc_solve, penalty_solve, BoxBounds, PanocOptions, SolverConfig};

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// A short-horizon problem with one circle and one rectangle across the
/// initial heading, so both obstacle penalties are active near hover inputs.
pub fn toy_instance(n: usize, rng: &mut impl Rng) -> Result<(NmpcProblem, ParameterVector)> {
    let model = ModelParams::default();
    let problem = NmpcProblem::new(
        model,
        CostWeights::default(),
        HorizonConfig { n, ts: model.ts },
        RateBounds::default(),
        ObstacleCapacity::default(),
    )?;
    let mut x = UavState::hover_at(Vector3::new(0.0, 0.0, 1.0));
    x.v = Vector3::new(rng.random_range(0.5..1.5), rng.random_range(-0.3..0.3), 0.0);
    let det = Detections {
        circles: vec![CircleObstacle::new(Vector2::new(0.15, rng.random_range(-0.1..0.1)), 0.6)],
        segments: vec![LineSegment::new(Vector2::new(-0.5, 0.2), Vector2::new(0.6, 0.25))],
    };
    let refs = References::setpoint(Vector3::new(3.0, 0.0, 1.0), &model);
    let rho = pack_rho(&x, &refs, &ControlInput::hover(&model), &det, 0.4, &PackingConfig::default());
    Ok((problem, rho))
}

fn random_z(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n)
        .flat_map(|_| {
            [
                rng.random_range(7.0..12.0),
                rng.random_range(-0.2..0.2),
                rng.random_range(-0.2..0.2),
            ]
        })
        .collect()
}

/// Largest relative error `‖∇ - ∇_fd‖ / ‖∇_fd‖` over `points` off-kink samples.
pub fn gradient_error(n: usize, points: usize, q: f64, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < points {
        let (problem, rho) = toy_instance(n, &mut rng)?;
        let z = random_z(n, &mut rng);
        if problem.kink_distance(&z, &rho)? < 1e-3 || problem.infeasibility(&z, &rho)? == 0.0 {
            continue;
        }
        let mut grad = vec![0.0; z.len()];
        problem.value_and_gradient(&z, &rho, q, &mut grad)?;
        let h = 1e-6;
        let mut diff = 0.0;
        let mut norm = 0.0;
        for i in 0..z.len() {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[i] += h;
            zm[i] -= h;
            let fd = (problem.penalized_objective(&zp, &rho, q)? - problem.penalized_objective(&zm, &rho, q)?) / (2.0 * h);
            diff += (grad[i] - fd).powi(2);
            norm += fd * fd;
        }
        worst = worst.max(diff.sqrt() / norm.sqrt().max(1e-12));
        done += 1;
    }
    Ok(worst)
}

fn outcome(name: &'static str, res: Result<(bool, String)>) -> CheckOutcome {
    match res {
        Ok((passed, detail)) => CheckOutcome { name, passed, detail },
        Err(e) => CheckOutcome {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn check_gradient(seed: u64) -> Result<(bool, String)> {
    let e2 = gradient_error(2, 20, 1e3, seed)?;
    let e5 = gradient_error(5, 20, 1e3, seed + 1)?;
    let worst = e2.max(e5);
    Ok((worst <= 1e-5, format!("max relative error {worst:.2e}")))
}

fn check_box_and_envelope(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bounds = BoxBounds::default();
    let mut worst_rise: f64 = f64::NEG_INFINITY;
    let mut in_box = true;
    for _ in 0..10 {
        let (problem, rho) = toy_instance(5, &mut rng)?;
        let z0: Vec<f64> = random_z(5, &mut rng).iter().map(|v| 3.0 * v).collect();
        let cfg = SolverConfig {
            time_budget: f64::INFINITY,
            ..SolverConfig::default()
        };
        let out = penalty_solve(&problem, &rho, &bounds, &z0, &cfg)?;
        let b = bounds.over_horizon(5);
        in_box &= b.contains(&out.z) && out.stages.iter().all(|s| b.contains(&s.z));
        let opts = PanocOptions {
            record_envelope: true,
            max_iters: 200,
            ..PanocOptions::default()
        };
        let res = panoc_solve(|z: &[f64], g: &mut [f64]| problem.value_and_gradient(z, &rho, 1e3, g), &b, &z0, &opts)?;
        for (before, after, _) in &res.envelope_trace {
            worst_rise = worst_rise.max((after - before) / before.abs().max(1.0));
        }
    }
    Ok((
        in_box && worst_rise <= 1e-9,
        format!("iterates in box: {in_box}, largest envelope increase {worst_rise:.2e}"),
    ))
}

fn check_hover() -> Result<(bool, String)> {
    let params = ModelParams::default();
    let x = UavState::hover_at(Vector3::new(1.0, -2.0, 1.5));
    let u = ControlInput::hover(&params);
    let euler = predict_step(&x, &u, &params);
    let rk4 = simulate_plant(&x, &u, &params, params.ts);
    Ok((euler == x && rk4 == x, format!("euler {:?}, rk4 {:?}", euler == x, rk4 == x)))
}

fn check_apf(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ApfConfig::default();
    let mut state = ForceState::default();
    let mut ok = true;
    for _ in 0..500 {
        let cloud: Vec<Vector2<f64>> = (0..rng.random_range(0..60))
            .map(|_| Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let goal = Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), 1.0);
        let prev = state.f_r_prev;
        let out = apf_setpoint(&goal, &Vector3::new(0.0, 0.0, 1.0), &cloud, ApfMode::Enhanced, &mut state, &cfg);
        ok &= out.forces.total.norm() <= 1.0 + 1e-12
            && out.forces.repulsive.norm() <= cfg.f_max + 1e-12
            && (out.forces.repulsive - prev).norm() <= cfg.df_max + 1e-12;
    }
    Ok((ok, "500 random clouds".into()))
}

fn check_determinism(seed: u64) -> Result<(bool, String)> {
    let mut spec = ScenarioSpec::from_toml_str(
        "name = \"determinism\"\nstart = [0.0, 0.0, 1.0]\nsetpoint = [1.0, 0.5, 1.0]\nduration_max = 1.0\n[scene]\n",
        "inline",
    )?;
    spec.scene = Scene {
        circles: vec![CircleObstacle::new(Vector2::new(2.0, 0.0), 0.3)],
        ..Scene::default()
    };
    spec.deterministic = true;
    spec.rng_seed = seed;
    let a = run_scenario(&spec)?;
    let b = run_scenario(&spec)?;
    Ok((a == b, format!("{} rows", a.rows.len())))
}

/// Runs every self-check; never panics.
pub fn run_checks(seed: u64) -> Vec<CheckOutcome> {
    vec![
        outcome("gradient matches central differences", check_gradient(seed)),
        outcome("solver stays in the box, envelope decreases", check_box_and_envelope(seed)),
        outcome("hover is a fixed point", check_hover()),
        outcome("APF force and rate caps", check_apf(seed)),
        outcome("closed loop is deterministic", check_determinism(seed)),
    ]
}
