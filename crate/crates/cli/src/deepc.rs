//! `deepc`: closed-loop tracking with MPC, online DeePC or both side by side.

use anyhow::Result;
use serde::{Deserialize, Serialize};
use willems::predictive::{run_closed_loop, Controller, PredictiveConfig, Reference, RunOutcome};
use willems::qp::QpSettings;

use crate::config::{
    announce, bad, bounds, interval, matrix, positive, vector, BoundsConfig, Loaded, SystemConfig,
};
use crate::output::OutputDir;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub description: Option<String>,
    pub system: SystemConfig,
    #[serde(default = "both")]
    pub controller: ControllerName,
    /// `N`: measured past window.
    pub past: usize,
    /// `L`: prediction horizon.
    pub horizon: usize,
    /// `T`: excitation prefix length.
    pub online_len: usize,
    /// `K`: last simulated time step.
    pub run_len: usize,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub reference: ReferenceConfig,
    pub input_bounds: Option<BoundsConfig>,
    pub output_bounds: Option<BoundsConfig>,
    pub excitation: [f64; 2],
    /// Defaults to `n + L + N`.
    pub excitation_order: Option<usize>,
    /// Zero when omitted.
    pub initial_state: Option<Vec<f64>>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub seed: u64,
    pub out: Option<String>,
}

fn both() -> ControllerName {
    ControllerName::Both
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerName {
    Mpc,
    Deepc,
    Both,
}

/// A constant setpoint, or a signal with one row per output and one column
/// per time step (held at its last column).
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum ReferenceConfig {
    Constant(Vec<f64>),
    Signal(Vec<Vec<f64>>),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
}

#[derive(Debug, Serialize)]
struct Summary {
    controller: &'static str,
    outcome: &'static str,
    aborted_at: Option<usize>,
    reason: Option<String>,
    steps: usize,
    control_steps: usize,
    excitation_draws: usize,
    final_output: Vec<f64>,
    max_abs_input: f64,
    max_input_gap: Option<f64>,
    max_objective_gap: Option<f64>,
}

pub fn build(
    cfg: &Config,
    seed: u64,
) -> Result<(willems::LtiSystem, PredictiveConfig, Controller)> {
    let sys = cfg.system.build("system", seed)?;
    let (m, p) = (sys.m(), sys.p());
    let reference = match &cfg.reference {
        ReferenceConfig::Constant(v) => Reference::Constant(vector("reference", v)?),
        ReferenceConfig::Signal(rows) => Reference::Signal(matrix("reference", rows)?),
    };
    let mut solver = QpSettings::default();
    if let Some(tol) = cfg.solver.tol {
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(bad("solver.tol", "must be positive").into());
        }
        solver.tol = tol;
    }
    if let Some(it) = cfg.solver.max_iter {
        solver.max_iter = positive("solver.max_iter", it)?;
    }
    let initial_state = match &cfg.initial_state {
        None => None,
        Some(v) => {
            let x0 = vector("initial_state", v)?;
            if x0.len() != sys.n() {
                return Err(bad(
                    "initial_state",
                    format!("has length {}, expected {}", x0.len(), sys.n()),
                )
                .into());
            }
            Some(x0)
        }
    };
    let pc = PredictiveConfig {
        past: cfg.past,
        horizon: cfg.horizon,
        q: matrix("q", &cfg.q)?,
        r: matrix("r", &cfg.r)?,
        reference,
        input_bounds: bounds("input_bounds", &cfg.input_bounds, m)?,
        output_bounds: bounds("output_bounds", &cfg.output_bounds, p)?,
        online_len: cfg.online_len,
        run_len: cfg.run_len,
        excitation: interval("excitation", cfg.excitation)?,
        excitation_order: cfg.excitation_order,
        initial_state,
        solver,
    };
    pc.validate(m, p).map_err(|e| bad("config", e))?;
    let controller = match cfg.controller {
        ControllerName::Mpc => Controller::Mpc,
        ControllerName::Deepc => Controller::Deepc,
        ControllerName::Both => Controller::Both,
    };
    Ok((sys, pc, controller))
}

pub fn run(cfg: &Loaded<Config>, seed: u64, out: &OutputDir) -> Result<()> {
    announce(&cfg.config.description);
    let (sys, pc, controller) = build(&cfg.config, seed)?;
    let log = run_closed_loop(&sys, &pc, controller, seed)?;
    out.write_with("deepc_log.csv", |w| Ok(log.write_csv(w)?))?;
    out.write_with("deepc_plot.csv", |w| {
        Ok(log.write_plot_csv(w, &pc.reference)?)
    })?;

    let (outcome, aborted_at, reason, error) = match &log.outcome {
        RunOutcome::Completed => ("completed", None, None, None),
        RunOutcome::Aborted { t, error } => (
            "aborted",
            Some(*t),
            Some(error.to_string()),
            Some(error.clone()),
        ),
    };
    let summary = Summary {
        controller: match controller {
            Controller::Mpc => "mpc",
            Controller::Deepc => "deepc",
            Controller::Both => "both",
        },
        outcome,
        aborted_at,
        reason,
        steps: log.entries.len(),
        control_steps: log.control_entries().count(),
        excitation_draws: log.excitation_draws,
        final_output: log
            .last_output()
            .map(|y| y.iter().copied().collect())
            .unwrap_or_default(),
        max_abs_input: log
            .entries
            .iter()
            .map(|e| e.input.amax())
            .fold(0.0, f64::max),
        max_input_gap: (controller == Controller::Both)
            .then(|| log.max_input_gap())
            .flatten(),
        max_objective_gap: (controller == Controller::Both)
            .then(|| log.max_objective_gap())
            .flatten(),
    };
    out.write_json("deepc_summary.json", &summary)?;

    println!(
        "{} run: {} of {} steps in the control phase, prefix found after {} draw(s)",
        summary.controller, summary.control_steps, summary.steps, summary.excitation_draws
    );
    println!("final output: {:?}", summary.final_output);
    if let (Some(du), Some(dj)) = (summary.max_input_gap, summary.max_objective_gap) {
        println!("max |u_deepc - u_mpc| = {du:.3e}, max |J_deepc - J_mpc| = {dj:.3e}");
    }
    match error {
        None => Ok(()),
        Some(e) => {
            println!("run aborted at t = {}: {e}", aborted_at.unwrap_or_default());
            Err(e.into())
        }
    }
}
