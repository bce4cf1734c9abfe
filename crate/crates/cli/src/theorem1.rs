//! `verify-theorem1`: image check on generated data plus per-state
//! parameterization round trips.

use anyhow::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use willems::hankel::is_collectively_pe;
use willems::lti::{random_input_with, simulate};
use willems::parameterize::{parameterize, stack_signal, DEFAULT_THRESHOLD};
use willems::subspace::{min_poly_degree, theorem1_image_check, theorem1_state_condition};
use willems::{Error, Gated, LtiSystem, Trajectory, TrajectorySet, Vector};

use crate::config::{
    announce, bad, interval, positive, rank_tolerance, vector, ConfigResult, Loaded, SystemConfig,
};
use crate::output::OutputDir;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub description: Option<String>,
    pub system: SystemConfig,
    /// Number of data trajectories `tau`.
    #[serde(default = "one")]
    pub trajectories: usize,
    /// Parameterized trajectory length `L`.
    pub horizon: usize,
    /// Defaults to the degree of the minimal polynomial of `A`.
    pub delta: Option<usize>,
    /// Length of each data trajectory; defaults to a few samples more than
    /// the shortest length that can be exciting of order `delta + L`.
    pub length: Option<usize>,
    #[serde(default = "unit_interval")]
    pub input_range: [f64; 2],
    #[serde(default)]
    pub initial_states: InitialStates,
    /// States `x̄0` whose parameterizability is tested; defaults to the unit vectors.
    pub state_samples: Option<Vec<Vec<f64>>>,
    /// Redraws allowed when searching for exciting inputs.
    #[serde(default = "draws")]
    pub max_draws: usize,
    pub threshold: Option<f64>,
    pub rank_tolerance: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    pub out: Option<String>,
}

fn one() -> usize {
    1
}

fn unit_interval() -> [f64; 2] {
    [-1.0, 1.0]
}

fn draws() -> usize {
    100
}

/// Initial states of the data trajectories.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialStates {
    Zero,
    #[default]
    Random,
    Given(Vec<Vec<f64>>),
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub trajectories: usize,
    pub length: usize,
    pub horizon: usize,
    pub delta: usize,
    pub draws: usize,
    pub status: &'static str,
    pub reason: Option<String>,
    pub image: Option<ImageRow>,
    pub samples: Vec<SampleRow>,
}

#[derive(Debug, Serialize)]
pub struct ImageRow {
    pub holds: bool,
    pub residual: f64,
    pub data_rank: usize,
    pub predicted_dim: usize,
}

#[derive(Debug, Serialize)]
pub struct SampleRow {
    pub state: Vec<f64>,
    /// Whether the state lies in the parameterizable subspace.
    pub state_condition: bool,
    pub relative_residual: f64,
    pub parameterizable: bool,
    /// The subspace test and the round trip agree.
    pub consistent: bool,
}

pub fn run(cfg: &Loaded<Config>, seed: u64, out: &OutputDir) -> Result<()> {
    let c = &cfg.config;
    announce(&c.description);
    let sys = c.system.build("system", seed)?;
    let tol = rank_tolerance("rank_tolerance", c.rank_tolerance)?;
    let threshold = c.threshold.unwrap_or(DEFAULT_THRESHOLD);
    let tau = positive("trajectories", c.trajectories)?;
    let horizon = positive("horizon", c.horizon)?;
    let range = interval("input_range", c.input_range)?;
    let delta = match c.delta {
        Some(d) => d,
        None => min_poly_degree(sys.a(), tol)?.get(),
    };
    let order = delta + horizon;
    let length = c
        .length
        .unwrap_or(order - 1 + (order * sys.m()).div_ceil(tau) + 5);
    if length < horizon {
        return Err(bad("length", format!("must be at least the horizon {horizon}")).into());
    }
    let x0s = initial_states(&c.initial_states, &sys, tau, seed)?;
    let samples = match &c.state_samples {
        Some(rows) => rows
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let field = format!("state_samples[{i}]");
                let x = vector(&field, v)?;
                if x.len() != sys.n() {
                    return Err(bad(
                        &field,
                        format!("has length {}, expected {}", x.len(), sys.n()),
                    ));
                }
                Ok(x)
            })
            .collect::<ConfigResult<Vec<_>>>()?,
        None => (0..sys.n())
            .map(|i| Vector::from_fn(sys.n(), |j, _| f64::from(u8::from(i == j))))
            .collect(),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws = 0;
    let data = loop {
        draws += 1;
        let trajs = x0s
            .iter()
            .map(|x0| {
                simulate(
                    &sys,
                    x0,
                    &random_input_with(&mut rng, sys.m(), length, range.0, range.1)?,
                )
            })
            .collect::<willems::Result<Vec<Trajectory>>>()?;
        let set = TrajectorySet::new(trajs)?;
        if draws >= c.max_draws || is_collectively_pe(&set, order, tol)? {
            break set;
        }
    };

    let mut report = Report {
        n: sys.n(),
        m: sys.m(),
        p: sys.p(),
        trajectories: tau,
        length,
        horizon,
        delta,
        draws,
        status: "pass",
        reason: None,
        image: None,
        samples: Vec::new(),
    };
    let check = match theorem1_image_check(&sys, &data, horizon, delta, tol)? {
        Gated::Evaluated(check) => check,
        Gated::HypothesisViolated { reason } => {
            println!("hypothesis violated: {reason}");
            report.status = "hypothesis_violated";
            report.reason = Some(reason.clone());
            out.write_json("theorem1_report.json", &report)?;
            return Err(Error::HypothesisViolated(reason).into());
        }
    };
    report.image = Some(ImageRow {
        holds: check.holds,
        residual: check.residual,
        data_rank: check.data_rank,
        predicted_dim: check.predicted_dim,
    });

    let io_data = TrajectorySet::new(data.iter().map(Trajectory::without_states).collect())?;
    for x in &samples {
        let u = random_input_with(&mut rng, sys.m(), horizon, range.0, range.1)?;
        let target = simulate(&sys, x, &u)?;
        let sol = parameterize(
            &io_data,
            &stack_signal(&u),
            &stack_signal(target.outputs().expect("simulated")),
            threshold,
        )?;
        let condition = theorem1_state_condition(&sys, &data, x, tol)?;
        report.samples.push(SampleRow {
            state: x.iter().copied().collect(),
            state_condition: condition,
            relative_residual: sol.relative_residual,
            parameterizable: sol.parameterizable,
            consistent: condition == sol.parameterizable,
        });
    }

    let passed = check.holds && report.samples.iter().all(|s| s.consistent);
    if !passed {
        report.status = "fail";
    }
    print_table(&report);
    out.write_json("theorem1_report.json", &report)?;
    if passed {
        Ok(())
    } else {
        Err(Error::Numerical(
            "data image or a state round trip disagrees with the subspace prediction".into(),
        )
        .into())
    }
}

fn initial_states(
    cfg: &InitialStates,
    sys: &LtiSystem,
    tau: usize,
    seed: u64,
) -> Result<Vec<Vector>> {
    let n = sys.n();
    Ok(match cfg {
        InitialStates::Zero => vec![Vector::zeros(n); tau],
        InitialStates::Random => {
            // Separate stream from the inputs so changing tau keeps the input draws.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(2);
            (0..tau)
                .map(|_| Vector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)))
                .collect()
        }
        InitialStates::Given(rows) => {
            if rows.len() != tau {
                return Err(bad(
                    "initial_states.given",
                    format!("has {} states, expected {tau}", rows.len()),
                )
                .into());
            }
            rows.iter()
                .enumerate()
                .map(|(i, v)| {
                    let field = format!("initial_states.given[{i}]");
                    let x = vector(&field, v)?;
                    if x.len() != n {
                        return Err(bad(&field, format!("has length {}, expected {n}", x.len())));
                    }
                    Ok(x)
                })
                .collect::<ConfigResult<Vec<_>>>()?
        }
    })
}

fn print_table(r: &Report) {
    println!(
        "system n={} m={} p={}; tau={} T={} L={} delta={} ({} draw(s))",
        r.n, r.m, r.p, r.trajectories, r.length, r.horizon, r.delta, r.draws
    );
    if let Some(img) = &r.image {
        println!(
            "{:<6} image equality: residual {:.2e}, rank {} vs predicted {}",
            verdict(img.holds),
            img.residual,
            img.data_rank,
            img.predicted_dim
        );
    }
    for s in &r.samples {
        println!(
            "{:<6} x0 = {:?}: in subspace {}, round-trip residual {:.2e}",
            verdict(s.consistent),
            s.state,
            s.state_condition,
            s.relative_residual
        );
    }
    println!("verdict: {}", r.status);
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}
