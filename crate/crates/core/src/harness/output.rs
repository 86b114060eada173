use std::fs;
use std::path::{Path, PathBuf};

use super::runner::RunLog;
use crate::error::{Error, Result};

pub const ROWS_HEADER: [&str; 17] = [
    "t", "px", "py", "pz", "vx", "vy", "vz", "phi", "theta", "T_cmd", "phi_cmd", "theta_cmd",
    "min_range", "solver_ms", "fpr", "infeas", "converged",
];

pub const SUMMARY_HEADER: [&str; 8] = [
    "scenario",
    "controller",
    "seed",
    "time_to_setpoint",
    "min_clearance",
    "mean_solver_ms",
    "max_solver_ms",
    "collision",
];

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

struct Table {
    path: PathBuf,
    writer: csv::Writer<fs::File>,
}

impl Table {
    fn create(path: PathBuf, header: &[&str]) -> Result<Self> {
        let mut writer = csv::Writer::from_path(&path).map_err(|source| Error::Csv {
            path: path.clone(),
            source,
        })?;
        writer.write_record(header).map_err(|source| Error::Csv {
            path: path.clone(),
            source,
        })?;
        Ok(Self { path, writer })
    }

    fn row<I: IntoIterator<Item = String>>(&mut self, fields: I) -> Result<()> {
        let rec: Vec<String> = fields.into_iter().collect();
        self.writer.write_record(&rec).map_err(|source| Error::Csv {
            path: self.path.clone(),
            source,
        })
    }

    fn finish(mut self) -> Result<PathBuf> {
        self.writer.flush().map_err(|source| Error::Io {
            path: self.path.clone(),
            source,
        })?;
        Ok(self.path)
    }
}

type Series = (&'static str, &'static [&'static str], fn(&super::runner::RunRow) -> Vec<String>);

/// Writes one row per run.
pub fn write_summary(logs: &[RunLog], path: &Path) -> Result<PathBuf> {
    let mut table = Table::create(path.to_path_buf(), &SUMMARY_HEADER)?;
    for log in logs {
        let s = &log.summary;
        table.row([
            log.scenario.clone(),
            log.controller.to_string(),
            log.seed.to_string(),
            s.time_to_setpoint.map(num).unwrap_or_else(|| "DNF".into()),
            num(s.min_clearance),
            opt(s.mean_solver_ms),
            opt(s.max_solver_ms),
            s.collision.to_string(),
        ])?;
    }
    table.finish()
}

/// Writes the per-step log, a one-row summary and plot series into `dir`.
///
/// Returns the paths written. Solver time is left empty for deterministic runs.
pub fn emit_outputs(log: &RunLog, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();

    let mut rows = Table::create(dir.join("rows.csv"), &ROWS_HEADER)?;
    for r in &log.rows {
        let x = r.state.to_array();
        let u = r.cmd.to_array();
        let mut fields = vec![num(r.t)];
        fields.extend(x.iter().map(|v| num(*v)));
        fields.extend(u.iter().map(|v| num(*v)));
        fields.extend([
            num(r.min_range),
            opt(r.solver_ms),
            num(r.fpr),
            num(r.infeas),
            r.converged.to_string(),
        ]);
        rows.row(fields)?;
    }
    written.push(rows.finish()?);
    written.push(write_summary(std::slice::from_ref(log), &dir.join("summary.csv"))?);

    let mut path = Table::create(
        dir.join("path.csv"),
        &["t", "px", "py", "pz", "target_x", "target_y", "target_z"],
    )?;
    for r in &log.rows {
        let target = r.shifted_setpoint.unwrap_or(r.setpoint);
        path.row([r.t, r.state.p.x, r.state.p.y, r.state.p.z, target.x, target.y, target.z].map(num))?;
    }
    written.push(path.finish()?);

    let series: [Series; 4] = [
        ("solver_time.csv", &["t", "solver_ms", "inner_iters", "outer_iters", "budget_exhausted"], |r| {
            vec![
                num(r.t),
                opt(r.solver_ms),
                r.inner_iters.to_string(),
                r.outer_iters.to_string(),
                r.budget_exhausted.to_string(),
            ]
        }),
        ("fpr.csv", &["t", "fpr"], |r| vec![num(r.t), num(r.fpr)]),
        ("infeasibility.csv", &["t", "infeas"], |r| vec![num(r.t), num(r.infeas)]),
        ("min_distance.csv", &["t", "min_range", "true_clearance"], |r| {
            vec![num(r.t), num(r.min_range), num(r.true_clearance)]
        }),
    ];
    for (name, header, fields) in series {
        let mut table = Table::create(dir.join(name), header)?;
        for r in &log.rows {
            table.row(fields(r))?;
        }
        written.push(table.finish()?);
    }

    if log.rows.iter().any(|r| r.forces.is_some()) {
        let mut table = Table::create(
            dir.join("forces.csv"),
            &["t", "fa_x", "fa_y", "fr_x", "fr_y", "f_x", "f_y"],
        )?;
        for r in &log.rows {
            if let Some(f) = &r.forces {
                table.row(
                    [
                        r.t,
                        f.attractive.x,
                        f.attractive.y,
                        f.repulsive.x,
                        f.repulsive.y,
                        f.total.x,
                        f.total.y,
                    ]
                    .map(num),
                )?;
            }
        }
        written.push(table.finish()?);
    }

    if !log.scans.is_empty() {
        let mut table = Table::create(dir.join("scans.csv"), &["step", "bearing", "range"])?;
        for (step, scan) in log.scans.iter().enumerate() {
            for (i, range) in scan.ranges.iter().enumerate() {
                table.row([step.to_string(), num(scan.spec.bearing(i)), num(*range)])?;
            }
        }
        written.push(table.finish()?);
    }
    Ok(written)
}
