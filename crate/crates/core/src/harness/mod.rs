//! Closed-loop scenarios: plant, LiDAR, perception and controller stepped
//! together at the control rate, plus metrics and CSV output.

pub mod check;
mod metrics;
mod output;
mod runner;
mod scenario;

pub use metrics::{metric_min_clearance, metric_time_to_setpoint, summarize, RunSummary};
pub use output::{emit_outputs, write_summary, ROWS_HEADER, SUMMARY_HEADER};
pub use runner::{run_scenario, NmpcController, RunLog, RunRow};
pub use scenario::{ControllerKind, ScenarioSpec};
