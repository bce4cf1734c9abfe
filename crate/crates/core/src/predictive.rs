//! Output-feedback MPC, online DeePC and a closed-loop simulation harness.
//!
//! Both controllers solve the same tracking problem over a horizon of `L`
//! steps, anchored to the last `N` measured input-output samples. MPC uses the
//! model; DeePC replaces it with the depth-`(N + L)` Hankel matrices of a data
//! prefix.

use std::io::{Read, Write};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Gated, Result};
use crate::hankel::{hankel, pe_check};
use crate::lti::{format_real, random_input_with, LtiSystem, Trajectory, TrajectorySet};
use crate::numerics::{Matrix, RankTolerance, Vector};
use crate::qp::{solve_qp, QpSettings, QpStatus, QuadraticProgram};

/// Redraws allowed when searching for a persistently exciting prefix.
pub const MAX_EXCITATION_DRAWS: usize = 100;

/// Per-coordinate box; infinite entries mean unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vector,
    pub upper: Vector,
}

impl Bounds {
    pub fn new(lower: Vector, upper: Vector) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::invalid("bound vectors differ in length"));
        }
        if lower.iter().chain(upper.iter()).any(|v| v.is_nan()) {
            return Err(Error::NonFinite("bounds".into()));
        }
        if let Some(i) = (0..lower.len()).find(|&i| lower[i] > upper[i]) {
            return Err(Error::invalid(format!(
                "bound {i}: lower {} exceeds upper {}",
                lower[i], upper[i]
            )));
        }
        Ok(Bounds { lower, upper })
    }

    pub fn unbounded(dim: usize) -> Self {
        Bounds {
            lower: Vector::from_element(dim, f64::NEG_INFINITY),
            upper: Vector::from_element(dim, f64::INFINITY),
        }
    }

    /// The same interval on every coordinate.
    pub fn interval(dim: usize, lower: f64, upper: f64) -> Result<Self> {
        Bounds::new(
            Vector::from_element(dim, lower),
            Vector::from_element(dim, upper),
        )
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, v: &Vector, tol: f64) -> bool {
        v.len() == self.dim()
            && (0..v.len()).all(|i| v[i] >= self.lower[i] - tol && v[i] <= self.upper[i] + tol)
    }

    fn repeat(&self, times: usize) -> (Vector, Vector) {
        let d = self.dim();
        (
            Vector::from_fn(d * times, |i, _| self.lower[i % d]),
            Vector::from_fn(d * times, |i, _| self.upper[i % d]),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    Constant(Vector),
    /// `p x len` samples; times past the end reuse the last column.
    Signal(Matrix),
}

impl Reference {
    pub fn dim(&self) -> usize {
        match self {
            Reference::Constant(r) => r.len(),
            Reference::Signal(s) => s.nrows(),
        }
    }

    pub fn at(&self, t: usize) -> Vector {
        match self {
            Reference::Constant(r) => r.clone(),
            Reference::Signal(s) => s.column(t.min(s.ncols() - 1)).into_owned(),
        }
    }

    /// `r_{[t, t + len - 1]}` stacked.
    pub fn window(&self, t: usize, len: usize) -> Vector {
        let p = self.dim();
        let mut out = Vector::zeros(p * len);
        for k in 0..len {
            out.rows_mut(k * p, p).copy_from(&self.at(t + k));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveConfig {
    /// `N`: length of the measured past window.
    pub past: usize,
    /// `L`: prediction horizon.
    pub horizon: usize,
    pub q: Matrix,
    pub r: Matrix,
    pub reference: Reference,
    pub input_bounds: Bounds,
    pub output_bounds: Bounds,
    /// `T`: length of the excitation prefix used as DeePC data.
    pub online_len: usize,
    /// `K`: the run covers `t = 0..=K`.
    pub run_len: usize,
    /// Excitation inputs are drawn uniformly from this interval.
    pub excitation: (f64, f64),
    /// Required excitation order of the prefix; `n + L + N` when unset.
    pub excitation_order: Option<usize>,
    /// Plant initial state; zero when unset.
    pub initial_state: Option<Vector>,
    pub solver: QpSettings,
}

fn check_psd(m: &Matrix, name: &str, dim: usize) -> Result<()> {
    if m.shape() != (dim, dim) {
        return Err(Error::invalid(format!("{name} must be {dim}x{dim}")));
    }
    crate::numerics::ensure_finite(m, name)?;
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-10 * scale {
        return Err(Error::invalid(format!("{name} is not symmetric")));
    }
    if dim > 0 && m.clone().symmetric_eigenvalues().min() < -1e-10 * scale {
        return Err(Error::invalid(format!(
            "{name} is not positive semidefinite"
        )));
    }
    Ok(())
}

impl PredictiveConfig {
    /// Tracking setup of the uncontrollable benchmark experiment.
    pub fn benchmark() -> Self {
        PredictiveConfig {
            past: 4,
            horizon: 5,
            q: Matrix::identity(2, 2),
            r: Matrix::from_element(1, 1, 0.5),
            reference: Reference::Constant(Vector::from_column_slice(&[-3.0, 0.1])),
            input_bounds: Bounds::interval(1, -1.0, 1.0).expect("ordered"),
            output_bounds: Bounds::unbounded(2),
            online_len: 25,
            run_len: 80,
            excitation: (-0.04, 0.04),
            excitation_order: None,
            initial_state: None,
            solver: QpSettings::default(),
        }
    }

    pub fn validate(&self, m: usize, p: usize) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::invalid("horizon L must be at least 1"));
        }
        if !(self.past <= self.online_len && self.online_len <= self.run_len) {
            return Err(Error::invalid(format!(
                "need N <= T <= K, got N = {}, T = {}, K = {}",
                self.past, self.online_len, self.run_len
            )));
        }
        check_psd(&self.q, "Q", p)?;
        check_psd(&self.r, "R", m)?;
        if self.reference.dim() != p {
            return Err(Error::invalid(format!(
                "reference has dimension {}, expected {p}",
                self.reference.dim()
            )));
        }
        if let Reference::Signal(s) = &self.reference {
            if s.ncols() == 0 {
                return Err(Error::invalid("reference signal is empty"));
            }
        }
        if self.input_bounds.dim() != m || self.output_bounds.dim() != p {
            return Err(Error::invalid("bound dimensions do not match the system"));
        }
        if self.excitation.0.partial_cmp(&self.excitation.1) != Some(std::cmp::Ordering::Less) {
            return Err(Error::invalid(
                "excitation interval must satisfy low < high",
            ));
        }
        Ok(())
    }

    fn order_for(&self, n: usize) -> usize {
        self.excitation_order
            .unwrap_or(n + self.horizon + self.past)
    }
}

/// Solution of one receding-horizon problem.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSolution {
    /// First planned input, the one applied.
    pub input: Vector,
    pub objective: f64,
    pub status: QpStatus,
    /// `m x L` planned inputs.
    pub planned_inputs: Matrix,
    /// `p x L` predicted outputs.
    pub planned_outputs: Matrix,
    /// DeePC combination coefficients.
    pub g: Option<Vector>,
    pub solve_ms: f64,
}

/// Variables `[lead; u_bar; y_bar]`; tracking cost over the future block.
fn tracking_program(
    cfg: &PredictiveConfig,
    lead: usize,
    t: usize,
    aeq: Matrix,
    beq: Vector,
) -> Result<QuadraticProgram> {
    let (m, p, l) = (cfg.r.nrows(), cfg.q.nrows(), cfg.horizon);
    let nv = lead + (m + p) * l;
    let mut pm = Matrix::zeros(nv, nv);
    let mut q = Vector::zeros(nv);
    let mut offset = 0.0;
    let refs = cfg.reference.window(t, l);
    for k in 0..l {
        let ui = lead + k * m;
        let yi = lead + m * l + k * p;
        pm.view_mut((ui, ui), (m, m)).copy_from(&(&cfg.r * 2.0));
        pm.view_mut((yi, yi), (p, p)).copy_from(&(&cfg.q * 2.0));
        let rk = refs.rows(k * p, p);
        q.rows_mut(yi, p).copy_from(&(&cfg.q * rk * -2.0));
        offset += rk.dot(&(&cfg.q * rk));
    }
    let (ul, uu) = cfg.input_bounds.repeat(l);
    let (yl, yu) = cfg.output_bounds.repeat(l);
    let mut lower = Vector::from_element(nv, f64::NEG_INFINITY);
    let mut upper = Vector::from_element(nv, f64::INFINITY);
    lower.rows_mut(lead, m * l).copy_from(&ul);
    upper.rows_mut(lead, m * l).copy_from(&uu);
    lower.rows_mut(lead + m * l, p * l).copy_from(&yl);
    upper.rows_mut(lead + m * l, p * l).copy_from(&yu);
    QuadraticProgram::new(pm, q)?
        .with_offset(offset)
        .with_equalities(aeq, beq)?
        .with_bounds(lower, upper)
}

fn solve_tracking(
    cfg: &PredictiveConfig,
    prob: &QuadraticProgram,
    lead: usize,
    t: usize,
) -> Result<(StepSolution, Vector)> {
    let (m, p, l) = (cfg.r.nrows(), cfg.q.nrows(), cfg.horizon);
    let start = Instant::now();
    let sol = solve_qp(prob, &cfg.solver)?;
    let solve_ms = start.elapsed().as_secs_f64() * 1e3;
    match sol.status {
        QpStatus::Optimal => {}
        QpStatus::Infeasible => {
            return Err(Error::Infeasible(format!(
                "predictive problem at t = {t} is infeasible"
            )))
        }
        other => {
            return Err(Error::Numerical(format!(
                "predictive problem at t = {t} ended with status {other:?} (KKT residual {:e})",
                sol.kkt_residual
            )))
        }
    }
    let planned_inputs = Matrix::from_column_slice(m, l, sol.x.rows(lead, m * l).as_slice());
    let planned_outputs =
        Matrix::from_column_slice(p, l, sol.x.rows(lead + m * l, p * l).as_slice());
    let step = StepSolution {
        input: planned_inputs.column(0).into_owned(),
        objective: sol.objective,
        status: sol.status,
        planned_inputs,
        planned_outputs,
        g: None,
        solve_ms,
    };
    Ok((step, sol.x))
}

fn check_history(history: &Trajectory, cfg: &PredictiveConfig, t: usize) -> Result<()> {
    if t < cfg.past {
        return Err(Error::invalid(format!(
            "t = {t} is smaller than N = {}",
            cfg.past
        )));
    }
    if history.len() < t || history.outputs().is_none() {
        return Err(Error::invalid(format!(
            "history must hold input-output samples up to t - 1 = {}",
            t as i64 - 1
        )));
    }
    Ok(())
}

/// One step of model-based predictive control at time `t`.
pub fn mpc_step(
    sys: &LtiSystem,
    history: &Trajectory,
    cfg: &PredictiveConfig,
    t: usize,
) -> Result<StepSolution> {
    let (n, m, p) = (sys.n(), sys.m(), sys.p());
    cfg.validate(m, p)?;
    check_history(history, cfg, t)?;
    let (big_n, l) = (cfg.past, cfg.horizon);
    let hu = history.inputs();
    let hy = history.outputs().expect("checked");
    let lead = (big_n + l) * n;
    let nv = lead + (m + p) * l;
    let rows = big_n * (n + p) + (l - 1) * n + l * p;
    let mut a = Matrix::zeros(rows, nv);
    let mut b = Vector::zeros(rows);
    let xi = |j: usize| j * n;
    let ui = |k: usize| lead + k * m;
    let yi = |k: usize| lead + m * l + k * p;
    let mut row = 0;
    for j in 0..big_n {
        let uk = hu.column(t - big_n + j);
        a.view_mut((row, xi(j + 1)), (n, n))
            .copy_from(&Matrix::identity(n, n));
        a.view_mut((row, xi(j)), (n, n)).copy_from(&-sys.a());
        b.rows_mut(row, n).copy_from(&(sys.b() * uk));
        row += n;
        a.view_mut((row, xi(j)), (p, n)).copy_from(sys.c());
        b.rows_mut(row, p)
            .copy_from(&(hy.column(t - big_n + j) - sys.d() * uk));
        row += p;
    }
    for k in 0..l {
        if k + 1 < l {
            a.view_mut((row, xi(big_n + k + 1)), (n, n))
                .copy_from(&Matrix::identity(n, n));
            a.view_mut((row, xi(big_n + k)), (n, n))
                .copy_from(&-sys.a());
            a.view_mut((row, ui(k)), (n, m)).copy_from(&-sys.b());
            row += n;
        }
        a.view_mut((row, yi(k)), (p, p))
            .copy_from(&Matrix::identity(p, p));
        a.view_mut((row, xi(big_n + k)), (p, n))
            .copy_from(&-sys.c());
        a.view_mut((row, ui(k)), (p, m)).copy_from(&-sys.d());
        row += p;
    }
    debug_assert_eq!(row, rows);
    let prob = tracking_program(cfg, lead, t, a, b)?;
    Ok(solve_tracking(cfg, &prob, lead, t)?.0)
}

/// One step of data-enabled predictive control at time `t`, using `data`
/// (normally the online prefix) as the model.
///
/// Reports a violated hypothesis instead of solving when the data input is not
/// persistently exciting of `excitation_order` (or `N + L` when unset, the
/// least order at which the Hankel constraint can be meaningful).
pub fn deepc_step(
    data: &Trajectory,
    history: &Trajectory,
    cfg: &PredictiveConfig,
    t: usize,
) -> Result<Gated<StepSolution>> {
    let m = data.m();
    let du = data.inputs();
    let dy = data
        .outputs()
        .ok_or_else(|| Error::invalid("DeePC data needs outputs"))?;
    let p = dy.nrows();
    cfg.validate(m, p)?;
    check_history(history, cfg, t)?;
    let (big_n, l) = (cfg.past, cfg.horizon);
    let depth = big_n + l;
    if data.len() < depth {
        return Err(Error::invalid(format!(
            "data length {} is shorter than N + L = {depth}",
            data.len()
        )));
    }
    let order = cfg.excitation_order.unwrap_or(depth);
    let pe = pe_check(
        &TrajectorySet::single(data.without_states()),
        order,
        RankTolerance::DEFAULT,
    )?;
    if !pe.exciting {
        return Ok(Gated::HypothesisViolated {
            reason: format!(
                "data input is not persistently exciting of order {order} (rank {} of {}{})",
                pe.rank,
                pe.rows,
                pe.diagnostic.map(|d| format!("; {d}")).unwrap_or_default()
            ),
        });
    }
    let h_u = hankel(du, depth)?;
    let h_y = hankel(dy, depth)?;
    let lead = h_u.ncols();
    let nv = lead + (m + p) * l;
    let rows = depth * (m + p);
    let mut a = Matrix::zeros(rows, nv);
    let mut b = Vector::zeros(rows);
    let hist_u = history.inputs();
    let hist_y = history.outputs().expect("checked");
    // Past inputs, future inputs, past outputs, future outputs.
    a.view_mut((0, 0), (depth * m, lead)).copy_from(&h_u);
    a.view_mut((depth * m, 0), (depth * p, lead))
        .copy_from(&h_y);
    for j in 0..big_n {
        b.rows_mut(j * m, m)
            .copy_from(&hist_u.column(t - big_n + j));
        b.rows_mut(depth * m + j * p, p)
            .copy_from(&hist_y.column(t - big_n + j));
    }
    a.view_mut((big_n * m, lead), (l * m, l * m))
        .copy_from(&-Matrix::identity(l * m, l * m));
    a.view_mut((depth * m + big_n * p, lead + l * m), (l * p, l * p))
        .copy_from(&-Matrix::identity(l * p, l * p));
    let prob = tracking_program(cfg, lead, t, a, b)?;
    let (mut sol, x) = solve_tracking(cfg, &prob, lead, t)?;
    sol.g = Some(x.rows(0, lead).into_owned());
    Ok(Gated::Evaluated(sol))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Controller {
    Mpc,
    Deepc,
    /// Applies DeePC and solves MPC on the same history for comparison.
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Excitation,
    Control,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Excitation => "excitation",
            Phase::Control => "control",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "excitation" => Some(Phase::Excitation),
            "control" => Some(Phase::Control),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub t: usize,
    pub phase: Phase,
    pub input: Vector,
    pub output: Vector,
    pub objective: Option<f64>,
    pub status: Option<QpStatus>,
    pub solve_ms: Option<f64>,
    /// MPC's input and objective at this step, in [`Controller::Both`] runs.
    pub mpc_input: Option<Vector>,
    pub mpc_objective: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunOutcome {
    Completed,
    /// The controller failed at `t`; the log stops before that step.
    Aborted {
        t: usize,
        error: Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopLog {
    pub controller: Controller,
    pub entries: Vec<LogEntry>,
    pub outcome: RunOutcome,
    /// Draws needed to obtain a persistently exciting prefix.
    pub excitation_draws: usize,
    m: usize,
    p: usize,
}

const STATUSES: [QpStatus; 5] = [
    QpStatus::Optimal,
    QpStatus::Infeasible,
    QpStatus::MaxIter,
    QpStatus::Unbounded,
    QpStatus::Inaccurate,
];

fn status_name(s: QpStatus) -> &'static str {
    match s {
        QpStatus::Optimal => "optimal",
        QpStatus::Infeasible => "infeasible",
        QpStatus::MaxIter => "max_iter",
        QpStatus::Unbounded => "unbounded",
        QpStatus::Inaccurate => "inaccurate",
    }
}

/// Column layout of a log or plot CSV: `t,phase` followed by named groups of
/// `prefix_0..prefix_{k-1}` columns and scalar columns.
struct CsvColumns {
    names: Vec<String>,
}

impl CsvColumns {
    fn count(&self, prefix: &str) -> usize {
        let p = format!("{prefix}_");
        self.names
            .iter()
            .filter(|n| {
                n.strip_prefix(&p)
                    .is_some_and(|i| i.parse::<usize>().is_ok())
            })
            .count()
    }
}

fn parse_cell<T: std::str::FromStr>(
    rec: &csv::StringRecord,
    k: usize,
    row: usize,
) -> Result<Option<T>> {
    match rec.get(k).map(str::trim) {
        None => Err(Error::Parse(format!("row {row}: missing column {k}"))),
        Some("") => Ok(None),
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|_| Error::Parse(format!("row {row}: bad value `{v}` in column {k}"))),
    }
}

fn parse_vector(
    rec: &csv::StringRecord,
    start: usize,
    len: usize,
    row: usize,
) -> Result<Option<Vector>> {
    let vals = (start..start + len)
        .map(|k| parse_cell::<f64>(rec, k, row))
        .collect::<Result<Vec<_>>>()?;
    if vals.iter().all(Option::is_none) && len > 0 {
        return Ok(None);
    }
    vals.into_iter()
        .collect::<Option<Vec<_>>>()
        .map(|v| Some(Vector::from_vec(v)))
        .ok_or_else(|| Error::Parse(format!("row {row}: partially empty vector")))
}

fn parse_time_phase(rec: &csv::StringRecord, row: usize) -> Result<(usize, Phase)> {
    let t = parse_cell::<usize>(rec, 0, row)?
        .ok_or_else(|| Error::Parse(format!("row {row}: empty t")))?;
    let phase = Phase::from_name(rec.get(1).unwrap_or("").trim())
        .ok_or_else(|| Error::Parse(format!("row {row}: bad phase")))?;
    Ok((t, phase))
}

fn log_header(m: usize, p: usize, both: bool) -> Vec<String> {
    let mut header = vec!["t".to_string(), "phase".to_string()];
    header.extend((0..m).map(|i| format!("u_{i}")));
    header.extend((0..p).map(|i| format!("y_{i}")));
    header.extend(["objective", "status", "solve_ms"].map(String::from));
    if both {
        header.extend((0..m).map(|i| format!("mpc_u_{i}")));
        header.push("mpc_objective".into());
        header.push("input_gap".into());
    }
    header
}

/// Parses the output of [`ClosedLoopLog::write_csv`] back into log entries.
/// The `input_gap` column is derived and not stored.
pub fn read_log_csv<R: Read>(reader: R) -> Result<Vec<LogEntry>> {
    let mut r = csv::Reader::from_reader(reader);
    let cols = CsvColumns {
        names: r.headers()?.iter().map(String::from).collect(),
    };
    let (m, p) = (cols.count("u"), cols.count("y"));
    let both = cols.count("mpc_u") > 0;
    if cols.names != log_header(m, p, both) {
        return Err(Error::Parse("unexpected log CSV header".into()));
    }
    let mut entries = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let (t, phase) = parse_time_phase(&rec, row)?;
        let missing = |what: &str| Error::Parse(format!("row {row}: empty {what}"));
        let input = parse_vector(&rec, 2, m, row)?.unwrap_or_else(|| Vector::zeros(0));
        let output = parse_vector(&rec, 2 + m, p, row)?.unwrap_or_else(|| Vector::zeros(0));
        if input.len() != m || output.len() != p {
            return Err(missing("signal"));
        }
        let base = 2 + m + p;
        let status = match rec.get(base + 1).map(str::trim) {
            Some("") | None => None,
            Some(name) => Some(
                STATUSES
                    .into_iter()
                    .find(|s| status_name(*s) == name)
                    .ok_or_else(|| Error::Parse(format!("row {row}: unknown status `{name}`")))?,
            ),
        };
        let (mpc_input, mpc_objective) = if both {
            (
                parse_vector(&rec, base + 3, m, row)?,
                parse_cell(&rec, base + 3 + m, row)?,
            )
        } else {
            (None, None)
        };
        entries.push(LogEntry {
            t,
            phase,
            input,
            output,
            objective: parse_cell(&rec, base, row)?,
            status,
            solve_ms: parse_cell(&rec, base + 2, row)?,
            mpc_input,
            mpc_objective,
        });
    }
    Ok(entries)
}

/// Outputs and references as read back from a plot CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotTable {
    pub t: Vec<usize>,
    pub phase: Vec<Phase>,
    pub outputs: Matrix,
    pub reference: Matrix,
}

/// Parses the output of [`ClosedLoopLog::write_plot_csv`].
pub fn read_plot_csv<R: Read>(reader: R) -> Result<PlotTable> {
    let mut r = csv::Reader::from_reader(reader);
    let cols = CsvColumns {
        names: r.headers()?.iter().map(String::from).collect(),
    };
    let p = cols.count("y");
    if cols.names != plot_header(p) {
        return Err(Error::Parse("unexpected plot CSV header".into()));
    }
    let (mut t, mut phase, mut ys, mut rs) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let (ti, ph) = parse_time_phase(&rec, row)?;
        let empty = || Error::Parse(format!("row {row}: empty value"));
        t.push(ti);
        phase.push(ph);
        ys.push(parse_vector(&rec, 2, p, row)?.ok_or_else(empty)?);
        rs.push(parse_vector(&rec, 2 + p, p, row)?.ok_or_else(empty)?);
    }
    let len = t.len();
    Ok(PlotTable {
        t,
        phase,
        outputs: Matrix::from_fn(p, len, |i, k| ys[k][i]),
        reference: Matrix::from_fn(p, len, |i, k| rs[k][i]),
    })
}

fn plot_header(p: usize) -> Vec<String> {
    let mut header = vec!["t".to_string(), "phase".to_string()];
    header.extend((0..p).map(|i| format!("y_{i}")));
    header.extend((0..p).map(|i| format!("r_{i}")));
    header
}

impl ClosedLoopLog {
    pub fn control_entries(&self) -> impl Iterator<Item = &LogEntry> {
        self.entries.iter().filter(|e| e.phase == Phase::Control)
    }

    /// Logged inputs and outputs as a trajectory.
    pub fn trajectory(&self) -> Result<Trajectory> {
        let len = self.entries.len();
        let u = Matrix::from_fn(self.m, len, |i, t| self.entries[t].input[i]);
        let y = Matrix::from_fn(self.p, len, |i, t| self.entries[t].output[i]);
        Trajectory::input_output(u, y)
    }

    pub fn last_output(&self) -> Option<&Vector> {
        self.entries.last().map(|e| &e.output)
    }

    /// Largest per-step gap between applied DeePC and MPC inputs.
    pub fn max_input_gap(&self) -> Option<f64> {
        self.control_entries()
            .map(|e| e.mpc_input.as_ref().map(|mi| (mi - &e.input).amax()))
            .try_fold(0.0f64, |acc, g| g.map(|g| acc.max(g)))
    }

    pub fn max_objective_gap(&self) -> Option<f64> {
        self.control_entries()
            .map(|e| Some((e.mpc_objective? - e.objective?).abs()))
            .try_fold(0.0f64, |acc, g| g.map(|g| acc.max(g)))
    }

    /// `t,phase,u_*,y_*,objective,status,solve_ms`, plus
    /// `mpc_u_*,mpc_objective,input_gap` for comparison runs, where `input_gap`
    /// is the max-norm difference of the two inputs. Control-phase fields are empty during excitation.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let both = self.controller == Controller::Both;
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(log_header(self.m, self.p, both))?;
        let opt = |v: Option<f64>| v.map(format_real).unwrap_or_default();
        for e in &self.entries {
            let mut rec = vec![e.t.to_string(), e.phase.as_str().to_string()];
            rec.extend(e.input.iter().map(|&v| format_real(v)));
            rec.extend(e.output.iter().map(|&v| format_real(v)));
            rec.push(opt(e.objective));
            rec.push(e.status.map(status_name).unwrap_or_default().to_string());
            rec.push(opt(e.solve_ms));
            if both {
                match &e.mpc_input {
                    Some(u) => rec.extend(u.iter().map(|&v| format_real(v))),
                    None => rec.extend((0..self.m).map(|_| String::new())),
                }
                rec.push(opt(e.mpc_objective));
                rec.push(opt(e.mpc_input.as_ref().map(|u| (u - &e.input).amax())));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// `t,phase,y_*,r_*` for plotting outputs against their references.
    pub fn write_plot_csv<W: Write>(&self, writer: W, reference: &Reference) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(plot_header(self.p))?;
        for e in &self.entries {
            let mut rec = vec![e.t.to_string(), e.phase.as_str().to_string()];
            rec.extend(e.output.iter().map(|&v| format_real(v)));
            rec.extend(reference.at(e.t).iter().map(|&v| format_real(v)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Draws the excitation prefix, retrying until it is persistently exciting of
/// `order`. Returns the inputs and the number of draws used.
pub fn draw_excitation(
    m: usize,
    len: usize,
    range: (f64, f64),
    order: usize,
    seed: u64,
) -> Result<(Matrix, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for draw in 1..=MAX_EXCITATION_DRAWS {
        let u = random_input_with(&mut rng, m, len, range.0, range.1)?;
        let set = TrajectorySet::single(Trajectory::new(u.clone(), None, None)?);
        if pe_check(&set, order, RankTolerance::DEFAULT)?.exciting {
            return Ok((u, draw));
        }
    }
    Err(Error::HypothesisViolated(format!(
        "no persistently exciting input of order {order} in {MAX_EXCITATION_DRAWS} draws \
         (length {len} may be too short)"
    )))
}

/// Simulates `t = 0..=K`: seeded excitation on `[0, T)`, then the controller.
///
/// Controller failures end the run early with [`RunOutcome::Aborted`] and the
/// log up to the failing step.
pub fn run_closed_loop(
    sys: &LtiSystem,
    cfg: &PredictiveConfig,
    controller: Controller,
    seed: u64,
) -> Result<ClosedLoopLog> {
    let (n, m, p) = (sys.n(), sys.m(), sys.p());
    cfg.validate(m, p)?;
    let order = cfg.order_for(n);
    let (excitation, draws) = draw_excitation(m, cfg.online_len, cfg.excitation, order, seed)?;
    let mut x = match &cfg.initial_state {
        Some(x0) if x0.len() == n => x0.clone(),
        Some(x0) => {
            return Err(Error::invalid(format!(
                "initial state has length {}, expected {n}",
                x0.len()
            )))
        }
        None => Vector::zeros(n),
    };
    let total = cfg.run_len + 1;
    let mut us = Matrix::zeros(m, total);
    let mut ys = Matrix::zeros(p, total);
    let mut log = ClosedLoopLog {
        controller,
        entries: Vec::with_capacity(total),
        outcome: RunOutcome::Completed,
        excitation_draws: draws,
        m,
        p,
    };
    let mut data: Option<Trajectory> = None;
    let data_cfg = PredictiveConfig {
        excitation_order: Some(order),
        ..cfg.clone()
    };
    for t in 0..total {
        let mut entry = LogEntry {
            t,
            phase: Phase::Excitation,
            input: Vector::zeros(m),
            output: Vector::zeros(p),
            objective: None,
            status: None,
            solve_ms: None,
            mpc_input: None,
            mpc_objective: None,
        };
        if t < cfg.online_len {
            entry.input = excitation.column(t).into_owned();
        } else {
            entry.phase = Phase::Control;
            let history = Trajectory::input_output(
                us.columns(0, t).into_owned(),
                ys.columns(0, t).into_owned(),
            )?;
            let data =
                data.get_or_insert_with(|| history.window(0, cfg.online_len).expect("t >= T"));
            let step = match controller {
                Controller::Mpc => mpc_step(sys, &history, cfg, t).map(Gated::Evaluated),
                Controller::Deepc | Controller::Both => deepc_step(data, &history, &data_cfg, t),
            };
            let step = match step {
                Ok(Gated::Evaluated(s)) => s,
                Ok(Gated::HypothesisViolated { reason }) => {
                    log.outcome = RunOutcome::Aborted {
                        t,
                        error: Error::HypothesisViolated(reason),
                    };
                    return Ok(log);
                }
                Err(e @ (Error::Infeasible(_) | Error::Numerical(_))) => {
                    log.outcome = RunOutcome::Aborted { t, error: e };
                    return Ok(log);
                }
                Err(e) => return Err(e),
            };
            if controller == Controller::Both {
                match mpc_step(sys, &history, cfg, t) {
                    Ok(s) => {
                        entry.mpc_input = Some(s.input);
                        entry.mpc_objective = Some(s.objective);
                    }
                    Err(e @ (Error::Infeasible(_) | Error::Numerical(_))) => {
                        log.outcome = RunOutcome::Aborted { t, error: e };
                        return Ok(log);
                    }
                    Err(e) => return Err(e),
                }
            }
            entry.input = step.input;
            entry.objective = Some(step.objective);
            entry.status = Some(step.status);
            entry.solve_ms = Some(step.solve_ms);
        }
        let (next, y) = sys.step(&x, &entry.input);
        entry.output = y;
        us.set_column(t, &entry.input);
        ys.set_column(t, &entry.output);
        x = next;
        log.entries.push(entry);
    }
    Ok(log)
}
