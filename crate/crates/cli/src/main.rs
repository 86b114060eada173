use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use quadnav::harness::{self, check, ControllerKind, RunLog, ScenarioSpec};

#[derive(Parser)]
#[command(name = "quadnav", version, about = "Closed-loop NMPC / APF obstacle-avoidance scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Controller {
    Nmpc,
    ApfBaseline,
    ApfEnhanced,
}

impl From<Controller> for ControllerKind {
    fn from(c: Controller) -> Self {
        match c {
            Controller::Nmpc => ControllerKind::Nmpc,
            Controller::ApfBaseline => ControllerKind::ApfBaseline,
            Controller::ApfEnhanced => ControllerKind::ApfEnhanced,
        }
    }
}

#[derive(clap::Args)]
struct RunOpts {
    /// Scenario file, or `stock:<name>` (cylinder, two_walls, opening)
    scenario: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the scenario's rng_seed
    #[arg(long)]
    seed: Option<u64>,
    /// No solver time budget and no timings in the logs
    #[arg(long)]
    deterministic: bool,
    /// Also write scans.csv
    #[arg(long)]
    dump_scans: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Fly one scenario with one controller
    Run {
        #[command(flatten)]
        opts: RunOpts,
        #[arg(long, value_enum)]
        controller: Option<Controller>,
    },
    /// Fly one scenario with all three controllers
    Compare {
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Run the self-check suite on toy problems
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load(opts: &RunOpts) -> Result<ScenarioSpec> {
    let mut spec = ScenarioSpec::load(&opts.scenario)
        .with_context(|| format!("loading {}", opts.scenario.display()))?;
    if let Some(seed) = opts.seed {
        spec.rng_seed = seed;
    }
    spec.deterministic |= opts.deterministic;
    spec.record_scans |= opts.dump_scans;
    Ok(spec)
}

fn report(log: &RunLog) {
    let s = &log.summary;
    let tts = s
        .time_to_setpoint
        .map_or_else(|| "DNF".to_string(), |t| format!("{t:.2} s"));
    let timing = match (s.mean_solver_ms, s.max_solver_ms) {
        (Some(mean), Some(max)) => format!("solver mean {mean:.2} ms, max {max:.2} ms"),
        _ => "solver timing not recorded".to_string(),
    };
    println!(
        "{:<10} {:<13} time {tts:<9} min range {:.3} m  collision {}  converged {:.1}%  {timing}",
        log.scenario,
        log.controller.as_str(),
        s.min_clearance,
        s.collision,
        100.0 * s.converged_fraction,
    );
}

fn fly(spec: &ScenarioSpec, dir: &std::path::Path) -> Result<RunLog> {
    let log = harness::run_scenario(spec).with_context(|| format!("running {}", spec.name))?;
    harness::emit_outputs(&log, dir)?;
    report(&log);
    Ok(log)
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Run { opts, controller } => {
            let mut spec = load(&opts)?;
            if let Some(c) = controller {
                spec.controller = c.into();
            }
            fly(&spec, &opts.out)?;
        }
        Command::Compare { opts } => {
            let base = load(&opts)?;
            let mut logs = Vec::new();
            for kind in ControllerKind::ALL {
                let spec = ScenarioSpec {
                    controller: kind,
                    ..base.clone()
                };
                logs.push(fly(&spec, &opts.out.join(kind.as_str()))?);
            }
            harness::write_summary(&logs, &opts.out.join("summary.csv"))?;
        }
        Command::Check { seed } => {
            let results = check::run_checks(seed);
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
            if results.iter().any(|r| !r.passed) {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
