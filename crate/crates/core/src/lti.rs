//! Discrete-time LTI plants, trajectories and simulation.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::numerics::{ensure_finite, Matrix, Vector};

/// `x_{t+1} = A x_t + B u_t`, `y_t = C x_t + D u_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    a: Matrix,
    b: Matrix,
    c: Matrix,
    d: Matrix,
}

impl LtiSystem {
    pub fn new(a: Matrix, b: Matrix, c: Matrix, d: Matrix) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::invalid(format!(
                "A must be square, got {:?}",
                a.shape()
            )));
        }
        if b.nrows() != n {
            return Err(Error::invalid(format!(
                "B must have {n} rows, got {}",
                b.nrows()
            )));
        }
        if c.ncols() != n {
            return Err(Error::invalid(format!(
                "C must have {n} columns, got {}",
                c.ncols()
            )));
        }
        if d.shape() != (c.nrows(), b.ncols()) {
            return Err(Error::invalid(format!(
                "D must be {}x{}, got {:?}",
                c.nrows(),
                b.ncols(),
                d.shape()
            )));
        }
        for (m, name) in [(&a, "A"), (&b, "B"), (&c, "C"), (&d, "D")] {
            ensure_finite(m, name)?;
        }
        Ok(LtiSystem { a, b, c, d })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }
    pub fn b(&self) -> &Matrix {
        &self.b
    }
    pub fn c(&self) -> &Matrix {
        &self.c
    }
    pub fn d(&self) -> &Matrix {
        &self.d
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    /// Input dimension.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }
    /// Output dimension.
    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    pub fn step(&self, x: &Vector, u: &Vector) -> (Vector, Vector) {
        let y = &self.c * x + &self.d * u;
        let next = &self.a * x + &self.b * u;
        (next, y)
    }

    /// The uncontrollable double-integrator benchmark used for the online
    /// DeePC experiment: a controllable position/velocity block and an
    /// autonomous block with a repeated 0.9 eigenvalue.
    pub fn benchmark_uncontrollable() -> Self {
        let a = Matrix::from_row_slice(
            4,
            4,
            &[
                1.0, 0.5, 0.0, 0.0, //
                0.0, 1.0, 0.0, 0.0, //
                0.0, 0.0, 0.9, 0.5, //
                0.0, 0.0, 0.0, 0.9,
            ],
        );
        let b = Matrix::from_column_slice(4, 1, &[0.125, 0.5, 0.0, 0.0]);
        let c = Matrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let d = Matrix::zeros(2, 1);
        LtiSystem::new(a, b, c, d).expect("benchmark matrices are consistent")
    }
}

/// Signals stored column-per-time-step: `inputs` is `m x T`, `states` is
/// `n x T`, `outputs` is `p x T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    inputs: Matrix,
    states: Option<Matrix>,
    outputs: Option<Matrix>,
}

/// Which signal of a trajectory to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Input,
    State,
    Output,
}

impl Trajectory {
    pub fn new(inputs: Matrix, states: Option<Matrix>, outputs: Option<Matrix>) -> Result<Self> {
        let t = inputs.ncols();
        if t == 0 {
            return Err(Error::invalid("trajectory length must be positive"));
        }
        ensure_finite(&inputs, "inputs")?;
        for (sig, name) in [(&states, "states"), (&outputs, "outputs")] {
            if let Some(s) = sig {
                if s.ncols() != t {
                    return Err(Error::invalid(format!(
                        "{name} have length {} but inputs have length {t}",
                        s.ncols()
                    )));
                }
                ensure_finite(s, name)?;
            }
        }
        Ok(Trajectory {
            inputs,
            states,
            outputs,
        })
    }

    /// Input-output trajectory without states.
    pub fn input_output(inputs: Matrix, outputs: Matrix) -> Result<Self> {
        Trajectory::new(inputs, None, Some(outputs))
    }

    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn m(&self) -> usize {
        self.inputs.nrows()
    }
    pub fn n(&self) -> Option<usize> {
        self.states.as_ref().map(|s| s.nrows())
    }
    pub fn p(&self) -> Option<usize> {
        self.outputs.as_ref().map(|s| s.nrows())
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }
    pub fn states(&self) -> Option<&Matrix> {
        self.states.as_ref()
    }
    pub fn outputs(&self) -> Option<&Matrix> {
        self.outputs.as_ref()
    }

    pub fn channel(&self, channel: Channel) -> Option<&Matrix> {
        match channel {
            Channel::Input => Some(&self.inputs),
            Channel::State => self.states.as_ref(),
            Channel::Output => self.outputs.as_ref(),
        }
    }

    /// Drops the state sequence, keeping inputs and outputs.
    pub fn without_states(&self) -> Trajectory {
        Trajectory {
            inputs: self.inputs.clone(),
            states: None,
            outputs: self.outputs.clone(),
        }
    }

    pub fn initial_state(&self) -> Option<Vector> {
        self.states.as_ref().map(|s| s.column(0).into_owned())
    }

    /// Contiguous sub-trajectory `[start, start + length)`.
    pub fn window(&self, start: usize, length: usize) -> Result<Trajectory> {
        if length == 0 || start + length > self.len() {
            return Err(Error::invalid(format!(
                "window [{start}, {}) outside trajectory of length {}",
                start + length,
                self.len()
            )));
        }
        let cut = |m: &Matrix| m.columns(start, length).into_owned();
        Ok(Trajectory {
            inputs: cut(&self.inputs),
            states: self.states.as_ref().map(cut),
            outputs: self.outputs.as_ref().map(cut),
        })
    }

    /// Largest per-step violation of the state and output equations,
    /// relative to the size of the terms involved.
    pub fn dynamics_residual(&self, sys: &LtiSystem) -> Result<f64> {
        let (Some(x), Some(y)) = (&self.states, &self.outputs) else {
            return Err(Error::invalid("dynamics check needs states and outputs"));
        };
        if x.nrows() != sys.n() || y.nrows() != sys.p() || self.m() != sys.m() {
            return Err(Error::invalid("trajectory dimensions do not match system"));
        }
        let mut worst: f64 = 0.0;
        for t in 0..self.len() {
            let xt = x.column(t);
            let ut = self.inputs.column(t);
            let y_pred = sys.c() * xt + sys.d() * ut;
            let scale = 1.0 + y.column(t).norm();
            worst = worst.max((y.column(t) - y_pred).norm() / scale);
            if t + 1 < self.len() {
                let x_pred = sys.a() * xt + sys.b() * ut;
                let scale = 1.0 + x.column(t + 1).norm();
                worst = worst.max((x.column(t + 1) - x_pred).norm() / scale);
            }
        }
        Ok(worst)
    }

    /// Writes `t,u_0..,[x_0..,][y_0..]` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((0..self.m()).map(|i| format!("u_{i}")));
        if let Some(n) = self.n() {
            header.extend((0..n).map(|i| format!("x_{i}")));
        }
        if let Some(p) = self.p() {
            header.extend((0..p).map(|i| format!("y_{i}")));
        }
        w.write_record(&header)?;
        for t in 0..self.len() {
            let mut row = vec![t.to_string()];
            let mut push = |m: &Matrix| row.extend(m.column(t).iter().map(|v| format_real(*v)));
            push(&self.inputs);
            if let Some(x) = &self.states {
                push(x);
            }
            if let Some(y) = &self.outputs {
                push(y);
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Trajectory> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        if header.get(0) != Some("t") {
            return Err(Error::Parse("first column must be `t`".into()));
        }
        let mut kinds = Vec::with_capacity(header.len());
        for (col, name) in header.iter().enumerate().skip(1) {
            let (prefix, idx) = name
                .split_once('_')
                .ok_or_else(|| Error::Parse(format!("bad column name `{name}`")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| Error::Parse(format!("bad column index in `{name}`")))?;
            let kind = match prefix {
                "u" => 0,
                "x" => 1,
                "y" => 2,
                _ => {
                    return Err(Error::Parse(format!(
                        "unknown signal `{name}` in column {col}"
                    )))
                }
            };
            kinds.push((kind, idx));
        }
        // Columns must be grouped u, x, y with consecutive indices.
        let mut counts = [0usize; 3];
        let mut last_kind = 0;
        for &(kind, idx) in &kinds {
            if kind < last_kind || idx != counts[kind] {
                return Err(Error::Parse("columns must be ordered u_*, x_*, y_*".into()));
            }
            counts[kind] += 1;
            last_kind = kind;
        }
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != header.len() {
                return Err(Error::Parse(format!("row {i} has {} fields", rec.len())));
            }
            let t: usize = rec[0]
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("row {i}: bad time index")))?;
            if t != i {
                return Err(Error::Parse(format!("row {i}: expected t = {i}, got {t}")));
            }
            let vals = rec
                .iter()
                .skip(1)
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Parse(format!("row {i}: bad number `{s}`")))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(vals);
        }
        let len = rows.len();
        let block =
            |offset: usize, dim: usize| Matrix::from_fn(dim, len, |i, t| rows[t][offset + i]);
        let inputs = block(0, counts[0]);
        let states = (counts[1] > 0).then(|| block(counts[0], counts[1]));
        let outputs = (counts[2] > 0).then(|| block(counts[0] + counts[1], counts[2]));
        Trajectory::new(inputs, states, outputs)
    }
}

pub(crate) fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// Ordered collection of trajectories from the same system.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet {
    trajectories: Vec<Trajectory>,
}

impl TrajectorySet {
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self> {
        let first = trajectories
            .first()
            .ok_or_else(|| Error::invalid("trajectory set must not be empty"))?;
        let (m, n, p) = (first.m(), first.n(), first.p());
        for (i, t) in trajectories.iter().enumerate() {
            if t.m() != m || t.n() != n || t.p() != p {
                return Err(Error::invalid(format!(
                    "trajectory {i} has dimensions inconsistent with trajectory 0"
                )));
            }
        }
        Ok(TrajectorySet { trajectories })
    }

    pub fn single(traj: Trajectory) -> Self {
        TrajectorySet {
            trajectories: vec![traj],
        }
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Trajectory> {
        self.trajectories.iter()
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn m(&self) -> usize {
        self.trajectories[0].m()
    }
    pub fn n(&self) -> Option<usize> {
        self.trajectories[0].n()
    }
    pub fn p(&self) -> Option<usize> {
        self.trajectories[0].p()
    }

    pub fn has_states(&self) -> bool {
        self.n().is_some()
    }

    pub fn min_len(&self) -> usize {
        self.trajectories
            .iter()
            .map(Trajectory::len)
            .min()
            .unwrap_or(0)
    }

    /// Initial states as the columns of an `n x tau` matrix.
    pub fn initial_states(&self) -> Result<Matrix> {
        let n = self
            .n()
            .ok_or_else(|| Error::invalid("trajectory set carries no states"))?;
        Ok(Matrix::from_fn(n, self.len(), |i, j| {
            self.trajectories[j].states.as_ref().expect("checked")[(i, 0)]
        }))
    }
}

impl<'a> IntoIterator for &'a TrajectorySet {
    type Item = &'a Trajectory;
    type IntoIter = std::slice::Iter<'a, Trajectory>;
    fn into_iter(self) -> Self::IntoIter {
        self.trajectories.iter()
    }
}

/// Simulates from `x0` under `inputs` (`m x T`), recording states and outputs.
pub fn simulate(sys: &LtiSystem, x0: &Vector, inputs: &Matrix) -> Result<Trajectory> {
    if x0.len() != sys.n() {
        return Err(Error::invalid(format!(
            "initial state has length {} but the system has n = {}",
            x0.len(),
            sys.n()
        )));
    }
    if inputs.nrows() != sys.m() {
        return Err(Error::invalid(format!(
            "inputs have {} channels but the system has m = {}",
            inputs.nrows(),
            sys.m()
        )));
    }
    ensure_finite(inputs, "inputs")?;
    let t_len = inputs.ncols();
    let mut states = Matrix::zeros(sys.n(), t_len);
    let mut outputs = Matrix::zeros(sys.p(), t_len);
    let mut x = x0.clone();
    for t in 0..t_len {
        let u = inputs.column(t).into_owned();
        let (next, y) = sys.step(&x, &u);
        states.set_column(t, &x);
        outputs.set_column(t, &y);
        x = next;
    }
    Trajectory::new(inputs.clone(), Some(states), Some(outputs))
}

/// `m x T` matrix of i.i.d. samples from `U[low, high]`, deterministic in `seed`.
pub fn random_input(m: usize, t: usize, low: f64, high: f64, seed: u64) -> Result<Matrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_input_with(&mut rng, m, t, low, high)
}

pub fn random_input_with<R: rand::Rng>(
    rng: &mut R,
    m: usize,
    t: usize,
    low: f64,
    high: f64,
) -> Result<Matrix> {
    if !(low.is_finite() && high.is_finite()) || low >= high {
        return Err(Error::invalid(format!(
            "input range must satisfy low < high, got [{low}, {high}]"
        )));
    }
    if t == 0 {
        return Err(Error::invalid("input length must be positive"));
    }
    let dist = Uniform::new_inclusive(low, high);
    // Column-major fill: time-major order, channel fastest.
    Ok(Matrix::from_iterator(
        m,
        t,
        dist.sample_iter(rng).take(m * t),
    ))
}
