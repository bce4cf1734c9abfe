//! Homogeneous multi-agent systems: construction, Markov parameters from data,
//! recovery of the agent model and graph, and trajectory-count sweeps.
//!
//! The network of `N` identical agents `(Ā, B̄)` with `M` directed edges has
//! `A = I_N ⊗ Ā`, `B = I_N ⊗ B̄`, `C = E ⊗ I_n̄`, `D = 0`, where row `k` of the
//! incidence matrix `E` holds `+1` at the head and `-1` at the tail of edge `k`.

use std::io::{Read, Write};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Gated, Result};
use crate::hankel::{mosaic_hankel, pe_check};
use crate::lti::{
    format_real, random_input_with, simulate, Channel, LtiSystem, Trajectory, TrajectorySet,
};
use crate::numerics::{
    ensure_finite, from_rows, numerical_rank, pseudo_inverse, vstack, Matrix, RankTolerance, Svd,
    Vector,
};
use crate::subspace::controllable_subspace;

/// Blocks of `M_1` below this fraction of the anchor block norm count as zero.
pub const ZERO_BLOCK_THRESHOLD: f64 = 1e-6;

/// State norm above which a sweep logs a growth warning.
pub const STATE_NORM_WARNING: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct MultiAgentSpec {
    abar: Matrix,
    bbar: Matrix,
    agents: usize,
    /// `(head, tail)` node pairs.
    edges: Vec<(usize, usize)>,
}

impl MultiAgentSpec {
    /// Validates shapes and edges and requires `(Ā, B̄)` controllable with `B̄ != 0`.
    pub fn new(
        abar: Matrix,
        bbar: Matrix,
        agents: usize,
        edges: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let nbar = abar.nrows();
        if abar.ncols() != nbar || bbar.nrows() != nbar || nbar == 0 || bbar.ncols() == 0 {
            return Err(Error::invalid(format!(
                "agent matrices have incompatible shapes {:?} and {:?}",
                abar.shape(),
                bbar.shape()
            )));
        }
        ensure_finite(&abar, "Abar")?;
        ensure_finite(&bbar, "Bbar")?;
        if agents == 0 {
            return Err(Error::invalid("need at least one agent"));
        }
        for (k, &(head, tail)) in edges.iter().enumerate() {
            if head >= agents || tail >= agents {
                return Err(Error::invalid(format!(
                    "edge {k} ({head}, {tail}) references a node outside 0..{agents}"
                )));
            }
            if head == tail {
                return Err(Error::invalid(format!(
                    "edge {k} is a self-loop at node {head}"
                )));
            }
        }
        if bbar.amax() == 0.0 {
            return Err(Error::invalid("Bbar is zero"));
        }
        let agent = LtiSystem::new(
            abar.clone(),
            bbar.clone(),
            Matrix::zeros(0, nbar),
            Matrix::zeros(0, bbar.ncols()),
        )?;
        let reach = controllable_subspace(&agent, RankTolerance::DEFAULT)?;
        if reach.dim() != nbar {
            return Err(Error::invalid(format!(
                "(Abar, Bbar) is not controllable: reachable dimension {} of {nbar}",
                reach.dim()
            )));
        }
        Ok(MultiAgentSpec {
            abar,
            bbar,
            agents,
            edges,
        })
    }

    /// Node 0 is the head of every edge; edge `k` ends at node `k + 1`.
    pub fn star(abar: Matrix, bbar: Matrix, agents: usize) -> Result<Self> {
        let edges = (1..agents).map(|k| (0, k)).collect();
        MultiAgentSpec::new(abar, bbar, agents, edges)
    }

    /// Discretized four-state, two-input agent used in the identification study.
    pub fn benchmark_agent() -> (Matrix, Matrix) {
        let a = from_rows(&[
            vec![0.9964, 0.0026, -0.0004, -0.0460],
            vec![0.0045, 0.9037, -0.0188, -0.3834],
            vec![0.0098, 0.0339, 0.9383, 0.1302],
            vec![0.0005, 0.0017, 0.0968, 1.0067],
        ])
        .expect("constant");
        let b = from_rows(&[
            vec![0.0445, 0.0167],
            vec![0.3407, -0.7249],
            vec![-0.5278, 0.4214],
            vec![-0.0268, 0.0215],
        ])
        .expect("constant");
        (a, b)
    }

    pub fn abar(&self) -> &Matrix {
        &self.abar
    }

    pub fn bbar(&self) -> &Matrix {
        &self.bbar
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn nbar(&self) -> usize {
        self.abar.nrows()
    }

    pub fn mbar(&self) -> usize {
        self.bbar.ncols()
    }

    /// `M x N` incidence matrix.
    pub fn incidence(&self) -> Matrix {
        let mut e = Matrix::zeros(self.edges.len(), self.agents);
        for (k, &(head, tail)) in self.edges.iter().enumerate() {
            e[(k, head)] = 1.0;
            e[(k, tail)] = -1.0;
        }
        e
    }

    pub fn with_agents(&self, agents: usize) -> Result<Self> {
        MultiAgentSpec::star(self.abar.clone(), self.bbar.clone(), agents)
    }
}

pub fn build_system(spec: &MultiAgentSpec) -> Result<LtiSystem> {
    let n = spec.agents;
    let eye = Matrix::identity(n, n);
    let c = spec
        .incidence()
        .kronecker(&Matrix::identity(spec.nbar(), spec.nbar()));
    let d = Matrix::zeros(c.nrows(), n * spec.mbar());
    LtiSystem::new(eye.kronecker(&spec.abar), eye.kronecker(&spec.bbar), c, d)
}

/// `M_0 = 0, M_1, ..., M_kmax` with `M_k = C A^{k-1} B`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovParams {
    params: Vec<Matrix>,
    /// Relative distance of the last output rows of the data matrix from the
    /// row space of the rows above them (zero for model-derived parameters).
    pub consistency_residual: f64,
}

impl MarkovParams {
    /// `M_k`; `k = 0` is the zero matrix.
    pub fn get(&self, k: usize) -> Option<&Matrix> {
        self.params.get(k)
    }

    /// Largest available index.
    pub fn kmax(&self) -> usize {
        self.params.len() - 1
    }

    pub fn p(&self) -> usize {
        self.params[0].nrows()
    }

    pub fn m(&self) -> usize {
        self.params[0].ncols()
    }
}

/// Markov parameters of a known system. Only `D = 0` is supported, matching
/// the `M_0 = 0` convention used by the data-driven computation.
pub fn markov_from_system(sys: &LtiSystem, kmax: usize) -> Result<MarkovParams> {
    if sys.d().amax() != 0.0 {
        return Err(Error::invalid(
            "Markov parameters are defined here for D = 0 only",
        ));
    }
    let mut params = vec![Matrix::zeros(sys.p(), sys.m())];
    let mut ab = sys.b().clone();
    for _ in 0..kmax {
        params.push(sys.c() * &ab);
        ab = sys.a() * ab;
    }
    Ok(MarkovParams {
        params,
        consistency_residual: 0.0,
    })
}

/// Markov parameters `M_1..M_kmax` from input-output data of a system with
/// `n` states and `D = 0`.
///
/// For each `k`, finds `G_k` such that the depth-`(n+1)` data matrix times
/// `G_k` is the length-`(n+1)` trajectory with zero past, a unit impulse at
/// time `n - k`, and outputs `M_0..M_{k-1}` already known; the last output
/// block of that trajectory is `M_k`. Gated on the inputs being collectively
/// persistently exciting of `excitation_order`; `n + n̄ + 1` suffices for the
/// multi-agent case.
///
/// Errors when the last output rows of the data matrix are not determined by
/// the rows above them (relative residual above `tol`), which is how data not
/// generated by such a system shows up.
pub fn markov_from_data(
    data: &TrajectorySet,
    n: usize,
    kmax: usize,
    excitation_order: usize,
    tol: f64,
) -> Result<Gated<MarkovParams>> {
    let m = data.m();
    let p = data
        .p()
        .ok_or_else(|| Error::invalid("Markov computation needs output trajectories"))?;
    if kmax == 0 || kmax > n {
        return Err(Error::invalid(format!(
            "kmax must lie in 1..={n}, got {kmax}"
        )));
    }
    if let Some((i, t)) = data.iter().enumerate().find(|(_, t)| t.len() < n + 1) {
        return Err(Error::invalid(format!(
            "trajectory {i} has length {} < n + 1 = {}",
            t.len(),
            n + 1
        )));
    }
    let pe = pe_check(data, excitation_order, RankTolerance::DEFAULT)?;
    if !pe.exciting {
        return Ok(Gated::HypothesisViolated {
            reason: format!(
                "inputs are not collectively persistently exciting of order {excitation_order} \
                 (rank {} of {}{})",
                pe.rank,
                pe.rows,
                pe.diagnostic.map(|d| format!("; {d}")).unwrap_or_default()
            ),
        });
    }
    let depth = n + 1;
    let hu = mosaic_hankel(data, depth, Channel::Input)?.matrix;
    let hy = mosaic_hankel(data, depth, Channel::Output)?.matrix;
    let top = vstack(&[&hu, &hy.rows(0, p * n).into_owned()])?;
    let bottom = hy.rows(p * n, p).into_owned();

    let svd = Svd::new(&top)?;
    let rank = svd.rank(top.nrows(), top.ncols(), RankTolerance::DEFAULT);
    let v = svd.v.columns(0, rank);
    let leak = &bottom - (&bottom * v) * v.transpose();
    let consistency_residual = leak.norm() / bottom.norm().max(f64::MIN_POSITIVE);
    if consistency_residual > tol {
        return Err(Error::Numerical(format!(
            "data are inconsistent with an order-{n} system: last output rows leave the \
             row space of the rows above by relative residual {consistency_residual:e}"
        )));
    }
    let u = svd.u.columns(0, rank);

    let mut params = vec![Matrix::zeros(p, m)];
    for k in 1..=kmax {
        let mut rhs = Matrix::zeros(top.nrows(), m);
        rhs.view_mut(((n - k) * m, 0), (m, m))
            .copy_from(&Matrix::identity(m, m));
        // Output samples n-k .. n-1 are M_0 .. M_{k-1}.
        for (j, mj) in params.iter().enumerate() {
            rhs.view_mut((depth * m + (n - k + j) * p, 0), (p, m))
                .copy_from(mj);
        }
        let mut coeffs = u.transpose() * &rhs;
        for (i, mut row) in coeffs.row_iter_mut().enumerate() {
            row /= svd.s[i];
        }
        let g = v * coeffs;
        let residual = (&top * &g - &rhs).norm() / rhs.norm();
        if residual > tol {
            return Err(Error::Numerical(format!(
                "impulse response of order {k} is not reproducible from the data \
                 (relative residual {residual:e})"
            )));
        }
        params.push(&bottom * g);
    }
    Ok(Gated::Evaluated(MarkovParams {
        params,
        consistency_residual,
    }))
}

/// A known nonzero entry of `E`: `E[edge, node] = sign`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Anchor {
    pub edge: usize,
    pub node: usize,
    pub sign: i8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredSystem {
    pub abar: Matrix,
    pub bbar: Matrix,
    /// Entries in `{-1, 0, 1}`.
    pub e: Matrix,
    pub anchor: Anchor,
}

fn block(mk: &Matrix, edge: usize, node: usize, nbar: usize, mbar: usize) -> Matrix {
    mk.view((edge * nbar, node * mbar), (nbar, mbar))
        .into_owned()
}

/// Recovers `(Ā, B̄, E)` from `M_1..M_{n̄+1}` and one known entry of `E`.
///
/// `Ā` solves `Ā [B̄ .. Ā^{n̄-1}B̄] = [ĀB̄ .. Ā^{n̄}B̄]`, which requires the left
/// factor to have rank `n̄`. Blocks of `M_1` are classified as `±B̄` within
/// relative tolerance `tol`, or as zero below [`ZERO_BLOCK_THRESHOLD`].
pub fn recover_system(
    params: &MarkovParams,
    anchor: Anchor,
    nbar: usize,
    mbar: usize,
    tol: f64,
) -> Result<RecoveredSystem> {
    if nbar == 0 || mbar == 0 {
        return Err(Error::invalid("agent dimensions must be positive"));
    }
    if params.kmax() < nbar + 1 {
        return Err(Error::invalid(format!(
            "need Markov parameters through index {}, have {}",
            nbar + 1,
            params.kmax()
        )));
    }
    let (p, m) = (params.p(), params.m());
    if p % nbar != 0 || m % mbar != 0 {
        return Err(Error::invalid(format!(
            "Markov parameters are {p}x{m}, not a grid of {nbar}x{mbar} blocks"
        )));
    }
    let (edges, agents) = (p / nbar, m / mbar);
    if anchor.edge >= edges || anchor.node >= agents || !(anchor.sign == 1 || anchor.sign == -1) {
        return Err(Error::invalid(format!(
            "anchor {anchor:?} is outside the {edges}x{agents} incidence matrix"
        )));
    }
    let sign = f64::from(anchor.sign);
    let pick = |k: usize| {
        block(
            params.get(k).expect("checked"),
            anchor.edge,
            anchor.node,
            nbar,
            mbar,
        ) * sign
    };
    let bbar = pick(1);
    let bnorm = bbar.norm();
    if bnorm == 0.0 {
        return Err(Error::invalid(
            "anchor block of M_1 is zero; the anchor is not a nonzero entry",
        ));
    }
    let mut left = Matrix::zeros(nbar, nbar * mbar);
    let mut right = Matrix::zeros(nbar, nbar * mbar);
    for k in 1..=nbar {
        left.view_mut((0, (k - 1) * mbar), (nbar, mbar))
            .copy_from(&pick(k));
        right
            .view_mut((0, (k - 1) * mbar), (nbar, mbar))
            .copy_from(&pick(k + 1));
    }
    let rank = numerical_rank(&left, RankTolerance::DEFAULT)?;
    if rank != nbar {
        return Err(Error::Numerical(format!(
            "Abar is not uniquely determined: [M_1 .. M_{nbar}] anchor blocks have rank {rank} < {nbar}"
        )));
    }
    let abar = right * pseudo_inverse(&left, RankTolerance::DEFAULT)?;

    let m1 = params.get(1).expect("checked");
    let mut e = Matrix::zeros(edges, agents);
    for k in 0..edges {
        for l in 0..agents {
            let blk = block(m1, k, l, nbar, mbar);
            e[(k, l)] = if blk.norm() <= ZERO_BLOCK_THRESHOLD * bnorm {
                0.0
            } else if (&blk - &bbar).norm() <= tol * bnorm {
                1.0
            } else if (&blk + &bbar).norm() <= tol * bnorm {
                -1.0
            } else {
                return Err(Error::Numerical(format!(
                    "block ({k}, {l}) of M_1 matches neither 0 nor ±Bbar \
                     (distances {:e}, {:e} relative)",
                    (&blk - &bbar).norm() / bnorm,
                    (&blk + &bbar).norm() / bnorm
                )));
            };
        }
    }
    Ok(RecoveredSystem {
        abar,
        bbar,
        e,
        anchor,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderRule {
    /// `(N + 1) n̄ + 1`, from the block-diagonal minimal-polynomial bound.
    Corollary2,
    /// `2 N n̄ + 1`, treating the network as a generic order-`N n̄` system.
    FullN,
}

impl OrderRule {
    pub fn name(self) -> &'static str {
        match self {
            OrderRule::Corollary2 => "corollary2",
            OrderRule::FullN => "full_n",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "corollary2" => Some(OrderRule::Corollary2),
            "full_n" => Some(OrderRule::FullN),
            _ => None,
        }
    }

    pub fn order(self, agents: usize, nbar: usize) -> usize {
        match self {
            OrderRule::Corollary2 => (agents + 1) * nbar + 1,
            OrderRule::FullN => 2 * agents * nbar + 1,
        }
    }

    /// Least `τ` for which the depth-`d` input mosaic Hankel has at least as
    /// many columns as rows: `ceil(d N m̄ / (T - d + 1))`. `None` when `d > T`.
    pub fn analytic_bound(
        self,
        agents: usize,
        nbar: usize,
        mbar: usize,
        len: usize,
    ) -> Option<usize> {
        let d = self.order(agents, nbar);
        if d > len {
            return None;
        }
        let rows = d * agents * mbar;
        Some(rows.div_ceil(len - d + 1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub agents: usize,
    pub rule: OrderRule,
    /// `None` when the order exceeds the trajectory length or the search cap hit.
    pub tau_min: Option<usize>,
    pub analytic_bound: Option<usize>,
    pub pe_order: usize,
    pub elapsed_ms: f64,
    /// Largest state norm over the simulated passing data set.
    pub max_state_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    pub len: usize,
    pub input_range: (f64, f64),
    /// Trajectory counts tried above the analytic bound before giving up.
    pub search_cap: usize,
    /// Simulate the passing data set to monitor state growth.
    pub simulate: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            len: 120,
            input_range: (-0.1, 0.1),
            search_cap: 50,
            simulate: false,
        }
    }
}

/// `tau` uniform input trajectories, reproducible from `(seed, agents, tau)`.
pub fn sweep_inputs(
    m: usize,
    len: usize,
    tau: usize,
    range: (f64, f64),
    seed: u64,
    agents: usize,
) -> Result<Vec<Matrix>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((agents as u64) << 32) | tau as u64);
    (0..tau)
        .map(|_| random_input_with(&mut rng, m, len, range.0, range.1))
        .collect()
}

/// Smallest trajectory count whose seeded random inputs are collectively
/// persistently exciting at the rule's order, for each agent count.
///
/// The search starts at the analytic bound, below which the rank condition
/// cannot hold.
pub fn min_trajectory_sweep(
    spec: &MultiAgentSpec,
    agent_counts: &[usize],
    rule: OrderRule,
    seed: u64,
    opts: &SweepOptions,
) -> Result<Vec<SweepRow>> {
    let (nbar, mbar) = (spec.nbar(), spec.mbar());
    let mut rows = Vec::with_capacity(agent_counts.len());
    for &agents in agent_counts {
        let start = Instant::now();
        let order = rule.order(agents, nbar);
        let bound = rule.analytic_bound(agents, nbar, mbar, opts.len);
        let mut row = SweepRow {
            agents,
            rule,
            tau_min: None,
            analytic_bound: bound,
            pe_order: order,
            elapsed_ms: 0.0,
            max_state_norm: None,
        };
        if let Some(bound) = bound {
            let m = agents * mbar;
            for tau in bound.max(1)..=bound.max(1) + opts.search_cap {
                let inputs = sweep_inputs(m, opts.len, tau, opts.input_range, seed, agents)?;
                let set = TrajectorySet::new(
                    inputs
                        .iter()
                        .map(|u| Trajectory::new(u.clone(), None, None))
                        .collect::<Result<_>>()?,
                )?;
                if pe_check(&set, order, RankTolerance::DEFAULT)?.exciting {
                    row.tau_min = Some(tau);
                    if opts.simulate {
                        let sys = build_system(&spec.with_agents(agents)?)?;
                        let mut worst: f64 = 0.0;
                        for u in &inputs {
                            let traj = simulate(&sys, &Vector::zeros(sys.n()), u)?;
                            let states = traj.states().expect("simulated");
                            for col in states.column_iter() {
                                worst = worst.max(col.norm());
                            }
                        }
                        if worst > STATE_NORM_WARNING {
                            log::warn!("N = {agents}: state norm reached {worst:e}");
                        }
                        row.max_state_norm = Some(worst);
                    }
                    break;
                }
            }
        }
        row.elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
        rows.push(row);
    }
    Ok(rows)
}

const SWEEP_HEADER: [&str; 7] = [
    "N",
    "rule",
    "tau_min",
    "analytic_bound",
    "pe_order",
    "elapsed_ms",
    "max_state_norm",
];

/// One row per sweep point; missing values are empty.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SWEEP_HEADER)?;
    let opt = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.agents.to_string(),
            r.rule.name().to_string(),
            opt(r.tau_min),
            opt(r.analytic_bound),
            r.pe_order.to_string(),
            format_real(r.elapsed_ms),
            r.max_state_norm.map(format_real).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Parses the output of [`write_sweep_csv`].
pub fn read_sweep_csv<R: Read>(reader: R) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_reader(reader);
    if r.headers()?.iter().ne(SWEEP_HEADER) {
        return Err(Error::Parse("unexpected sweep CSV header".into()));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |k: usize| rec.get(k).unwrap_or("").trim();
        let bad = |what: &str| Error::Parse(format!("row {i}: bad {what}"));
        let count = |k: usize, what: &str| -> Result<Option<usize>> {
            match field(k) {
                "" => Ok(None),
                v => v.parse().map(Some).map_err(|_| bad(what)),
            }
        };
        let real = |k: usize, what: &str| -> Result<Option<f64>> {
            match field(k) {
                "" => Ok(None),
                v => v.parse().map(Some).map_err(|_| bad(what)),
            }
        };
        rows.push(SweepRow {
            agents: count(0, "N")?.ok_or_else(|| bad("N"))?,
            rule: OrderRule::from_name(field(1)).ok_or_else(|| bad("rule"))?,
            tau_min: count(2, "tau_min")?,
            analytic_bound: count(3, "analytic_bound")?,
            pe_order: count(4, "pe_order")?.ok_or_else(|| bad("pe_order"))?,
            elapsed_ms: real(5, "elapsed_ms")?.ok_or_else(|| bad("elapsed_ms"))?,
            max_state_norm: real(6, "max_state_norm")?,
        });
    }
    Ok(rows)
}

/// Simulates `tau` seeded trajectories of `sys` from random initial states.
pub fn generate_data(
    sys: &LtiSystem,
    tau: usize,
    len: usize,
    input_range: (f64, f64),
    seed: u64,
) -> Result<TrajectorySet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(tau);
    for _ in 0..tau {
        let u = random_input_with(&mut rng, sys.m(), len, input_range.0, input_range.1)?;
        let x0 = random_input_with(&mut rng, sys.n(), 1, -1.0, 1.0)?;
        out.push(simulate(sys, &x0.column(0).into_owned(), &u)?.without_states());
    }
    TrajectorySet::new(out)
}
