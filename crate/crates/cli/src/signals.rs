//! `check-pe` and `simulate`: trajectory CSV utilities.

use std::fs::File;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Deserialize;
use willems::hankel::{pe_check, pe_order};
use willems::lti::simulate;
use willems::{Error, Matrix, Trajectory, TrajectorySet, Vector};

use crate::config::{
    announce, bad, matrix, rank_tolerance, vector, Loaded, SignalSource, SystemConfig,
};
use crate::output::OutputDir;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeConfig {
    #[serde(default)]
    pub description: Option<String>,
    /// Trajectory CSV files; only their input columns are used.
    pub trajectories: Vec<String>,
    /// When set, also report whether the inputs are exciting of this order.
    pub order: Option<usize>,
    pub rank_tolerance: Option<f64>,
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Trajectory::read_csv(file).with_context(|| format!("in {}", path.display()))
}

/// Largest excitation order of the input columns, optionally gated on `order`.
pub fn check_pe(cfg: &Loaded<PeConfig>) -> Result<()> {
    let c = &cfg.config;
    announce(&c.description);
    if c.trajectories.is_empty() {
        return Err(bad("trajectories", "list at least one CSV file").into());
    }
    let tol = rank_tolerance("rank_tolerance", c.rank_tolerance)?;
    let set = TrajectorySet::new(
        c.trajectories
            .iter()
            .map(|p| read_trajectory(&cfg.resolve(p)))
            .collect::<Result<Vec<_>>>()?,
    )
    .map_err(|e| bad("trajectories", e))?;
    let order = pe_order(&set, tol)?;
    println!("pe_order = {order}");
    if let Some(required) = c.order {
        let report = pe_check(&set, required, tol)?;
        println!(
            "order {required}: {} (rank {} of {} rows{})",
            if report.exciting {
                "exciting"
            } else {
                "not exciting"
            },
            report.rank,
            report.rows,
            report
                .diagnostic
                .as_deref()
                .map(|d| format!("; {d}"))
                .unwrap_or_default()
        );
        if !report.exciting {
            return Err(Error::HypothesisViolated(format!(
                "inputs are not exciting of order {required}"
            ))
            .into());
        }
    }
    Ok(())
}

/// `check-pe` also accepts a trajectory CSV in place of a JSON config.
pub fn load_pe(path: &Path) -> Result<Loaded<PeConfig>> {
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
    {
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let name = path
            .file_name()
            .expect("has extension")
            .to_string_lossy()
            .into_owned();
        return Ok(Loaded {
            config: PeConfig {
                description: None,
                trajectories: vec![name],
                order: None,
                rank_tolerance: None,
            },
            base,
        });
    }
    Ok(crate::config::load(path)?)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default)]
    pub description: Option<String>,
    pub system: SystemConfig,
    /// Zero when omitted.
    pub initial_state: Option<Vec<f64>>,
    /// Input signal: rows are input channels, columns time steps; or the path
    /// of a trajectory CSV whose `u_*` columns are used.
    pub inputs: SignalSource,
    #[serde(default = "default_output")]
    pub output: String,
    #[serde(default)]
    pub seed: u64,
    pub out: Option<String>,
}

fn default_output() -> String {
    "trajectory.csv".into()
}

pub fn simulate_cmd(cfg: &Loaded<SimulateConfig>, seed: u64, out: &OutputDir) -> Result<()> {
    let c = &cfg.config;
    announce(&c.description);
    let sys = c.system.build("system", seed)?;
    let inputs: Matrix = match &c.inputs {
        SignalSource::Inline(rows) => matrix("inputs", rows)?,
        SignalSource::Path(p) => read_trajectory(&cfg.resolve(p))?.inputs().clone(),
    };
    if inputs.nrows() != sys.m() {
        return Err(bad(
            "inputs",
            format!("has {} channels, expected {}", inputs.nrows(), sys.m()),
        )
        .into());
    }
    let x0 = match &c.initial_state {
        Some(v) => {
            let x0 = vector("initial_state", v)?;
            if x0.len() != sys.n() {
                return Err(bad(
                    "initial_state",
                    format!("has length {}, expected {}", x0.len(), sys.n()),
                )
                .into());
            }
            x0
        }
        None => Vector::zeros(sys.n()),
    };
    if Path::new(&c.output).components().count() != 1 {
        return Err(bad(
            "output",
            "must be a bare file name inside the output directory",
        )
        .into());
    }
    let traj = simulate(&sys, &x0, &inputs)?;
    let path = out.write_with(&c.output, |w| Ok(traj.write_csv(w)?))?;
    println!("simulated {} steps into {}", traj.len(), path.display());
    Ok(())
}
