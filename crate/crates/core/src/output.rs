//! Running scenarios end to end and writing CSV / JSON artifacts.
//!
//! Single-system CSV columns are `t,x1..xn,u1..um,err_y`. Formation CSV stacks
//! the follower states and controls, followed by `err_y` (norm of the stacked
//! displacement), the leader state `xL1..xLp` and one `err_<l>` column per
//! follower. Floats are written with 17 significant digits.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, ErrorClass, Result};
use crate::multiagent::{formation_error, gain_condition, simulate_formation, FormationTrajectory};
use crate::sampling::{
    decay_report, epsilon_sweep, simulate_pi_epsilon, SampledTrajectory, SweepRow,
};
use crate::scenarios::{ScenarioBundle, Setup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

/// Column-oriented numeric table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|&v| format_float(v)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialize(e.to_string()))
    }

    pub fn render(&self, format: Format) -> Result<String> {
        match format {
            Format::Csv => Ok(self.to_csv()),
            Format::Json => self.to_json(),
        }
    }
}

fn numbered(prefix: &str, count: usize) -> impl Iterator<Item = String> + '_ {
    (1..=count).map(move |i| format!("{prefix}{i}"))
}

pub fn trajectory_table(traj: &SampledTrajectory) -> Table {
    let n = traj.dense_states.first().map_or(0, |x| x.len());
    let m = traj.dense_controls.first().map_or(0, |u| u.len());
    let columns = std::iter::once("t".to_string())
        .chain(numbered("x", n))
        .chain(numbered("u", m))
        .chain(std::iter::once("err_y".to_string()))
        .collect();
    let rows = (0..traj.len())
        .map(|k| {
            let mut row = Vec::with_capacity(n + m + 2);
            row.push(traj.dense_times[k]);
            row.extend(traj.dense_states[k].iter());
            row.extend(traj.dense_controls[k].iter());
            row.push(traj.y_error[k]);
            row
        })
        .collect();
    Table { columns, rows }
}

pub fn formation_table(traj: &FormationTrajectory) -> Table {
    let p = traj.leader_states.first().map_or(0, |x| x.len());
    let n_agents = traj.agents.len();
    let n: usize = n_agents * p;
    let m: usize = traj
        .agents
        .iter()
        .map(|a| a.trajectory.dense_controls.first().map_or(0, |u| u.len()))
        .sum();
    let columns = std::iter::once("t".to_string())
        .chain(numbered("x", n))
        .chain(numbered("u", m))
        .chain(std::iter::once("err_y".to_string()))
        .chain(numbered("xL", p))
        .chain(numbered("err_", n_agents))
        .collect();
    // Stop at the shortest agent run so every row is complete.
    let len = traj
        .agents
        .iter()
        .map(|a| a.trajectory.len())
        .min()
        .unwrap_or(0)
        .min(traj.dense_times.len());
    let errors: Vec<Vec<f64>> = (0..n_agents)
        .map(|i| formation_error(traj, i).unwrap_or_default())
        .collect();
    let rows = (0..len)
        .map(|k| {
            let mut row = Vec::with_capacity(1 + n + m + 1 + p + n_agents);
            row.push(traj.dense_times[k]);
            for a in &traj.agents {
                row.extend(a.trajectory.dense_states[k].iter());
            }
            for a in &traj.agents {
                row.extend(a.trajectory.dense_controls[k].iter());
            }
            let stacked = errors.iter().map(|e| e[k] * e[k]).sum::<f64>().sqrt();
            row.push(stacked);
            row.extend(traj.leader_states[k].iter());
            row.extend(errors.iter().map(|e| e[k]));
            row
        })
        .collect();
    Table { columns, rows }
}

pub fn sweep_table(rows: &[SweepRow]) -> Table {
    Table {
        columns: vec!["epsilon".into(), "max_deviation".into()],
        rows: rows
            .iter()
            .map(|r| vec![r.epsilon, r.max_deviation])
            .collect(),
    }
}

/// Error summary kept with run artifacts.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFailure {
    pub class: ErrorClass,
    pub kind: &'static str,
    pub message: String,
}

impl From<&Error> for RunFailure {
    fn from(e: &Error) -> Self {
        RunFailure {
            class: e.class(),
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

impl RunFailure {
    fn to_json(&self) -> Value {
        json!({
            "class": self.class.as_str(),
            "kind": self.kind,
            "message": self.message,
        })
    }
}

fn error_json(e: &Error) -> Value {
    RunFailure::from(e).to_json()
}

/// Trajectory table plus a JSON report; `failure` is set if the run stopped early.
#[derive(Debug)]
pub struct RunArtifacts {
    pub table: Table,
    pub report: Value,
    pub failure: Option<RunFailure>,
}

/// Simulates a scenario and assembles its table and report.
pub fn run_scenario(bundle: &ScenarioBundle, rho: f64) -> Result<RunArtifacts> {
    let mut report = json!({
        "scenario": bundle.name(),
        "kind": bundle.kind(),
        "epsilon": bundle.gains.epsilon,
        "gamma": bundle.gains.gamma,
        "t_final": bundle.sim.t_final,
        "substeps_per_period": bundle.sim.substeps_per_period,
        "rho": rho,
    });
    match &bundle.setup {
        Setup::Single(s) => {
            let (traj, failure) = match simulate_pi_epsilon(
                &s.system,
                &s.selection,
                &bundle.gains,
                &s.x0,
                &bundle.sim,
            ) {
                Ok(t) => (t, None),
                Err(f) => (f.partial, Some(f.error)),
            };
            let decay = decay_report(&traj, rho).ok();
            report["decay_report"] = json!(decay);
            report["rank_certificate"] = json!(s.certificate);
            let failure = failure.as_ref().map(RunFailure::from);
            report["failure"] = failure.as_ref().map_or(Value::Null, RunFailure::to_json);
            Ok(RunArtifacts {
                table: trajectory_table(&traj),
                report,
                failure,
            })
        }
        Setup::Formation(f) => {
            let traj =
                simulate_formation(&f.agents, &f.leader, &f.x0s, &bundle.gains, &bundle.sim)?;
            let agents: Vec<Value> = traj
                .agents
                .iter()
                .zip(&f.certificates)
                .map(|(run, cert)| {
                    json!({
                        "decay_report": decay_report(&run.trajectory, rho).ok(),
                        "rank_certificate": cert,
                        "failure": run.failure.as_ref().map_or(Value::Null, error_json),
                    })
                })
                .collect();
            report["agents"] = Value::Array(agents);
            report["gain_condition"] = json!(gain_condition(&traj, &f.leader, &f.agents, rho).ok());
            let failure = traj.first_failure().map(|(i, e)| {
                log::error!("agent {} stopped early: {e}", i + 1);
                RunFailure::from(e)
            });
            report["failure"] = failure.as_ref().map_or(Value::Null, RunFailure::to_json);
            Ok(RunArtifacts {
                table: formation_table(&traj),
                report,
                failure,
            })
        }
    }
}

/// Runs an epsilon sweep for a single-system scenario.
pub fn sweep_scenario(bundle: &ScenarioBundle, eps_list: &[f64]) -> Result<Table> {
    match &bundle.setup {
        Setup::Single(s) => {
            let rows = epsilon_sweep(
                &s.system,
                &s.selection,
                &bundle.gains,
                &s.x0,
                bundle.sim.t_final,
                eps_list,
                bundle.config.sim.substeps_per_period,
            )?;
            Ok(sweep_table(&rows))
        }
        Setup::Formation(_) => Err(Error::InvalidParameter {
            invariant: "sweep needs a single-system scenario",
            detail: format!("'{}' is a formation scenario", bundle.name()),
        }),
    }
}

/// Report path next to the main output: `run.csv` → `run.report.json`.
pub fn sidecar_path(out: &Path) -> PathBuf {
    out.with_extension("report.json")
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Writes the trajectory and its report; returns both paths.
pub fn write_run(
    artifacts: &RunArtifacts,
    out: &Path,
    format: Format,
) -> Result<(PathBuf, PathBuf)> {
    write_text(out, &artifacts.table.render(format)?)?;
    let side = sidecar_path(out);
    let report = serde_json::to_string_pretty(&artifacts.report)
        .map_err(|e| Error::Serialize(e.to_string()))?;
    write_text(&side, &report)?;
    Ok((out.to_path_buf(), side))
}
