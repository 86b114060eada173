use super::runner::RunRow;
use super::scenario::ScenarioSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    /// `None` when the UAV never arrived.
    pub time_to_setpoint: Option<f64>,
    /// Smallest LiDAR range over the run, m.
    pub min_clearance: f64,
    /// Smallest distance to true geometry over the run, m.
    pub min_true_clearance: f64,
    pub mean_solver_ms: Option<f64>,
    pub max_solver_ms: Option<f64>,
    pub collision: bool,
    /// Share of solves whose last stage reached the FPR tolerance.
    pub converged_fraction: f64,
    /// Solves cut short by the time budget.
    pub budget_hits: usize,
    pub steps: usize,
}

/// Smallest per-step minimum LiDAR range; infinite for an empty log.
pub fn metric_min_clearance(rows: &[RunRow]) -> f64 {
    rows.iter().map(|r| r.min_range).fold(f64::INFINITY, f64::min)
}

/// Time from the first row until the UAV entered the arrival ball for a stay
/// of at least `dwell` seconds.
pub fn metric_time_to_setpoint(rows: &[RunRow], arrival_radius: f64, dwell: f64) -> Option<f64> {
    let t0 = rows.first()?.t;
    let mut entered: Option<f64> = None;
    for r in rows {
        if (r.state.p - r.setpoint).norm() <= arrival_radius {
            let since = *entered.get_or_insert(r.t);
            if r.t - since >= dwell - 1e-9 {
                return Some(since - t0);
            }
        } else {
            entered = None;
        }
    }
    None
}

pub fn summarize(rows: &[RunRow], spec: &ScenarioSpec) -> RunSummary {
    let times: Vec<f64> = rows.iter().filter_map(|r| r.solver_ms).collect();
    let mean = (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64);
    let max = times.iter().copied().reduce(f64::max);
    let min_true = rows.iter().map(|r| r.true_clearance).fold(f64::INFINITY, f64::min);
    let converged = rows.iter().filter(|r| r.converged).count();
    RunSummary {
        time_to_setpoint: metric_time_to_setpoint(rows, spec.arrival_radius, spec.arrival_dwell),
        min_clearance: metric_min_clearance(rows),
        min_true_clearance: min_true,
        mean_solver_ms: mean,
        max_solver_ms: max,
        collision: min_true < spec.collision_distance,
        converged_fraction: if rows.is_empty() { 0.0 } else { converged as f64 / rows.len() as f64 },
        budget_hits: rows.iter().filter(|r| r.budget_exhausted).count(),
        steps: rows.len(),
    }
}
