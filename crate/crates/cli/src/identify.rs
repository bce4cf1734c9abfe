//! `identify`: multi-agent identification from data and the minimum
//! trajectory-count sweep.

use anyhow::Result;
use serde::{Deserialize, Serialize};
use willems::multiagent::{
    build_system, generate_data, markov_from_data, markov_from_system, min_trajectory_sweep,
    recover_system, write_sweep_csv, Anchor, MultiAgentSpec, OrderRule, SweepOptions, SweepRow,
};
use willems::numerics::to_rows;
use willems::{Gated, Matrix};

use crate::config::{announce, bad, interval, matrix, positive, Loaded};
use crate::output::OutputDir;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub description: Option<String>,
    /// Agent dynamics `Ā` and input matrix `B̄`.
    pub abar: Vec<Vec<f64>>,
    pub bbar: Vec<Vec<f64>>,
    /// Agent counts to identify.
    #[serde(default = "default_agents")]
    pub identify: Vec<usize>,
    #[serde(default)]
    pub graph: Graph,
    /// Trajectory length `T`.
    #[serde(default = "default_len")]
    pub length: usize,
    #[serde(default = "default_range")]
    pub input_range: [f64; 2],
    /// Highest Markov parameter index; defaults to `n̄ + 1`.
    pub kmax: Option<usize>,
    #[serde(default)]
    pub anchor: AnchorConfig,
    /// Consistency tolerance for the data equations.
    #[serde(default = "default_tol")]
    pub markov_tolerance: f64,
    /// Tolerance of the block matching during recovery.
    #[serde(default = "default_recovery_tol")]
    pub recovery_tolerance: f64,
    /// Trajectory counts tried above the analytic bound.
    #[serde(default = "default_cap")]
    pub search_cap: usize,
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub seed: u64,
    pub out: Option<String>,
}

fn default_agents() -> Vec<usize> {
    vec![3]
}

fn default_len() -> usize {
    120
}

fn default_range() -> [f64; 2] {
    [-0.1, 0.1]
}

fn default_tol() -> f64 {
    1e-8
}

fn default_recovery_tol() -> f64 {
    1e-6
}

fn default_cap() -> usize {
    50
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Graph {
    /// Edges `(0, k)` for every other agent `k`.
    #[default]
    Star,
    /// Explicit `[head, tail]` pairs.
    Edges(Vec<[usize; 2]>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorConfig {
    pub edge: usize,
    pub node: usize,
    pub sign: i8,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        AnchorConfig {
            edge: 0,
            node: 0,
            sign: 1,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub agents: Vec<usize>,
    /// Simulate passing data sets to monitor state growth.
    #[serde(default)]
    pub simulate: bool,
}

#[derive(Debug, Serialize)]
struct Report {
    seed: u64,
    length: usize,
    identification: Vec<IdentRow>,
    sweep: Vec<SweepSummary>,
}

#[derive(Debug, Serialize)]
struct IdentRow {
    agents: usize,
    status: &'static str,
    message: Option<String>,
    trajectories: Option<usize>,
    markov_errors: Vec<f64>,
    consistency_residual: Option<f64>,
    abar: Option<Vec<Vec<f64>>>,
    bbar: Option<Vec<Vec<f64>>>,
    incidence: Option<Vec<Vec<f64>>>,
    abar_error: Option<f64>,
    bbar_error: Option<f64>,
    incidence_error: Option<f64>,
}

impl IdentRow {
    fn skipped(agents: usize, status: &'static str, message: String) -> Self {
        IdentRow {
            agents,
            status,
            message: Some(message),
            trajectories: None,
            markov_errors: Vec::new(),
            consistency_residual: None,
            abar: None,
            bbar: None,
            incidence: None,
            abar_error: None,
            bbar_error: None,
            incidence_error: None,
        }
    }
}

#[derive(Debug, Serialize)]
struct SweepSummary {
    agents: usize,
    rule: &'static str,
    tau_min: Option<usize>,
    analytic_bound: Option<usize>,
}

pub fn run(cfg: &Loaded<Config>, seed: u64, out: &OutputDir) -> Result<()> {
    let c = &cfg.config;
    announce(&c.description);
    let abar = matrix("abar", &c.abar)?;
    let bbar = matrix("bbar", &c.bbar)?;
    let length = positive("length", c.length)?;
    let range = interval("input_range", c.input_range)?;
    if !matches!(c.anchor.sign, -1 | 1) {
        return Err(bad("anchor.sign", "must be 1 or -1").into());
    }
    let anchor = Anchor {
        edge: c.anchor.edge,
        node: c.anchor.node,
        sign: c.anchor.sign,
    };
    let base =
        MultiAgentSpec::star(abar.clone(), bbar.clone(), 1).map_err(|e| bad("abar/bbar", e))?;
    let nbar = base.nbar();
    let kmax = c.kmax.unwrap_or(nbar + 1);

    let mut identification = Vec::new();
    for (i, &agents) in c.identify.iter().enumerate() {
        let field = format!("identify[{i}]");
        let spec = match &c.graph {
            Graph::Star => MultiAgentSpec::star(abar.clone(), bbar.clone(), agents),
            Graph::Edges(e) => MultiAgentSpec::new(
                abar.clone(),
                bbar.clone(),
                agents,
                e.iter().map(|p| (p[0], p[1])).collect(),
            ),
        }
        .map_err(|e| bad(&field, e))?;
        let row = identify_one(&spec, c, length, range, kmax, anchor, seed)?;
        match &row.message {
            Some(msg) => println!("N = {agents}: {} ({msg})", row.status),
            None => println!(
                "N = {agents}: tau = {}, max Markov error {:.2e}, errors A {:.2e} B {:.2e} E {:.2e}",
                row.trajectories.unwrap_or_default(),
                row.markov_errors.iter().copied().fold(0.0, f64::max),
                row.abar_error.unwrap_or(f64::NAN),
                row.bbar_error.unwrap_or(f64::NAN),
                row.incidence_error.unwrap_or(f64::NAN),
            ),
        }
        identification.push(row);
    }

    let mut sweep_rows: Vec<SweepRow> = Vec::new();
    if let Some(sweep) = &c.sweep {
        if let Some(i) = sweep.agents.iter().position(|&n| n == 0) {
            return Err(bad(&format!("sweep.agents[{i}]"), "must be at least 1").into());
        }
        let opts = SweepOptions {
            len: length,
            input_range: range,
            search_cap: c.search_cap,
            simulate: sweep.simulate,
        };
        for rule in [OrderRule::Corollary2, OrderRule::FullN] {
            sweep_rows.extend(min_trajectory_sweep(
                &base,
                &sweep.agents,
                rule,
                seed,
                &opts,
            )?);
        }
        out.write_with("sweep.csv", |w| Ok(write_sweep_csv(&sweep_rows, w)?))?;
        println!("{:>4} {:>12} {:>8} {:>8}", "N", "rule", "tau_min", "bound");
        for r in &sweep_rows {
            let show = |v: Option<usize>| v.map_or("-".to_string(), |v| v.to_string());
            println!(
                "{:>4} {:>12} {:>8} {:>8}",
                r.agents,
                r.rule.name(),
                show(r.tau_min),
                show(r.analytic_bound)
            );
        }
    }

    let report = Report {
        seed,
        length,
        identification,
        sweep: sweep_rows
            .iter()
            .map(|r| SweepSummary {
                agents: r.agents,
                rule: r.rule.name(),
                tau_min: r.tau_min,
                analytic_bound: r.analytic_bound,
            })
            .collect(),
    };
    out.write_json("identify_report.json", &report)?;
    Ok(())
}

fn identify_one(
    spec: &MultiAgentSpec,
    c: &Config,
    length: usize,
    range: (f64, f64),
    kmax: usize,
    anchor: Anchor,
    seed: u64,
) -> Result<IdentRow> {
    let agents = spec.agents();
    if spec.edges().is_empty() {
        return Ok(IdentRow::skipped(
            agents,
            "skipped",
            "graph has no edges, so the network has no output channel".into(),
        ));
    }
    let (nbar, mbar) = (spec.nbar(), spec.mbar());
    let rule = OrderRule::Corollary2;
    let Some(bound) = rule.analytic_bound(agents, nbar, mbar, length) else {
        return Ok(IdentRow::skipped(
            agents,
            "skipped",
            format!(
                "length {length} is too short for excitation of order {}",
                rule.order(agents, nbar)
            ),
        ));
    };
    let sys = build_system(spec)?;
    let order = rule.order(agents, nbar);
    let mut found = None;
    for tau in bound.max(1)..=bound.max(1) + c.search_cap {
        let data = generate_data(&sys, tau, length, range, seed)?;
        if let Gated::Evaluated(params) =
            markov_from_data(&data, sys.n(), kmax, order, c.markov_tolerance)?
        {
            found = Some((tau, params));
            break;
        }
    }
    let Some((tau, params)) = found else {
        return Ok(IdentRow::skipped(
            agents,
            "hypothesis_violated",
            format!(
                "no exciting data set within {} trajectories of the bound",
                c.search_cap
            ),
        ));
    };
    let truth = markov_from_system(&sys, kmax)?;
    let markov_errors = (1..=kmax)
        .map(|k| (params.get(k).expect("k <= kmax") - truth.get(k).expect("k <= kmax")).norm())
        .collect();
    let rec = recover_system(&params, anchor, nbar, mbar, c.recovery_tolerance)?;
    let incidence = spec.incidence();
    let err = |a: &Matrix, b: &Matrix| (a - b).norm();
    Ok(IdentRow {
        agents,
        status: "identified",
        message: None,
        trajectories: Some(tau),
        markov_errors,
        consistency_residual: Some(params.consistency_residual),
        abar_error: Some(err(&rec.abar, spec.abar())),
        bbar_error: Some(err(&rec.bbar, spec.bbar())),
        incidence_error: Some(err(&rec.e, &incidence)),
        abar: Some(to_rows(&rec.abar)),
        bbar: Some(to_rows(&rec.bbar)),
        incidence: Some(to_rows(&rec.e)),
    })
}
