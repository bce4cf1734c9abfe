//! Parameterizing length-`L` trajectories by measured data.
//!
//! A target `(u, y)` is parameterizable when some `g` satisfies
//! `[H_L(u^1) .. H_L(u^tau); H_L(y^1) .. H_L(y^tau)] g = [u; y]`. The
//! canonical `g` returned here is the minimum-norm least-squares solution.

use crate::error::{Error, Gated, Result};
use crate::hankel::{mosaic_hankel, pe_check};
use crate::lti::{Channel, LtiSystem, Trajectory, TrajectorySet};
use crate::numerics::{hstack, vstack, Matrix, RankTolerance, Svd, Vector};
use crate::subspace::observability_matrix;

/// Relative residual below which a target counts as parameterizable.
pub const DEFAULT_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSolution {
    pub g: Vector,
    pub residual_norm: f64,
    /// `residual_norm / max(1, ||target||)`.
    pub relative_residual: f64,
    pub parameterizable: bool,
}

/// Stacks a `q x L` signal time-major into a `qL` vector.
pub fn stack_signal(signal: &Matrix) -> Vector {
    Vector::from_column_slice(signal.as_slice())
}

/// `[H_L(u) mosaic; H_L(y) mosaic]`.
pub fn build_trajectory_matrix(data: &TrajectorySet, horizon: usize) -> Result<Matrix> {
    if data.p().is_none() {
        return Err(Error::invalid(
            "trajectory matrix needs output trajectories",
        ));
    }
    let hu = mosaic_hankel(data, horizon, Channel::Input)?;
    let hy = mosaic_hankel(data, horizon, Channel::Output)?;
    vstack(&[&hu.matrix, &hy.matrix])
}

fn horizon_of(data: &TrajectorySet, target_u: &Vector, target_y: &Vector) -> Result<usize> {
    let m = data.m();
    let p = data
        .p()
        .ok_or_else(|| Error::invalid("parameterization needs output trajectories"))?;
    if m == 0 {
        return Err(Error::invalid(
            "parameterization needs at least one input channel",
        ));
    }
    if !target_u.len().is_multiple_of(m) || target_u.is_empty() {
        return Err(Error::invalid(format!(
            "target input length {} is not a positive multiple of m = {m}",
            target_u.len()
        )));
    }
    let horizon = target_u.len() / m;
    if target_y.len() != p * horizon {
        return Err(Error::invalid(format!(
            "target output length {} does not equal p * L = {}",
            target_y.len(),
            p * horizon
        )));
    }
    Ok(horizon)
}

fn solutions_from(svd: &Svd, h: &Matrix, targets: &Matrix, threshold: f64) -> Vec<ParamSolution> {
    let rank = svd.rank(h.nrows(), h.ncols(), RankTolerance::DEFAULT);
    let u = svd.u.columns(0, rank);
    let v = svd.v.columns(0, rank);
    let mut coeffs = u.transpose() * targets;
    for (i, mut row) in coeffs.row_iter_mut().enumerate() {
        row /= svd.s[i];
    }
    let g_all = v * coeffs;
    let fitted = h * &g_all;
    (0..targets.ncols())
        .map(|j| {
            let residual_norm = (fitted.column(j) - targets.column(j)).norm();
            let relative_residual = residual_norm / targets.column(j).norm().max(1.0);
            ParamSolution {
                g: g_all.column(j).into_owned(),
                residual_norm,
                relative_residual,
                parameterizable: relative_residual <= threshold,
            }
        })
        .collect()
}

/// Minimum-norm `g` with `[H_L(u); H_L(y)] g ~= [target_u; target_y]`.
pub fn parameterize(
    data: &TrajectorySet,
    target_u: &Vector,
    target_y: &Vector,
    threshold: f64,
) -> Result<ParamSolution> {
    let horizon = horizon_of(data, target_u, target_y)?;
    let h = build_trajectory_matrix(data, horizon)?;
    let mut target = Matrix::zeros(target_u.len() + target_y.len(), 1);
    target.rows_mut(0, target_u.len()).copy_from(target_u);
    target
        .rows_mut(target_u.len(), target_y.len())
        .copy_from(target_y);
    let svd = Svd::new(&h)?;
    Ok(solutions_from(&svd, &h, &target, threshold).remove(0))
}

/// [`parameterize`] with the target taken from an input-output trajectory.
pub fn parameterize_trajectory(
    data: &TrajectorySet,
    target: &Trajectory,
    threshold: f64,
) -> Result<ParamSolution> {
    let y = target
        .outputs()
        .ok_or_else(|| Error::invalid("target trajectory has no outputs"))?;
    parameterize(
        data,
        &stack_signal(target.inputs()),
        &stack_signal(y),
        threshold,
    )
}

/// Initial state `[H_1(x^i_{[0, T^i - L]}) ...] g` certified by a parameterization.
pub fn reconstruct_state(data: &TrajectorySet, horizon: usize, g: &Vector) -> Result<Vector> {
    if !data.has_states() {
        return Err(Error::invalid(
            "state reconstruction needs state trajectories",
        ));
    }
    let mut blocks = Vec::with_capacity(data.len());
    for (i, t) in data.iter().enumerate() {
        if t.len() < horizon || horizon == 0 {
            return Err(Error::invalid(format!(
                "trajectory {i} is shorter than the horizon {horizon}"
            )));
        }
        blocks.push(
            t.states()
                .expect("checked")
                .columns(0, t.len() - horizon + 1)
                .into_owned(),
        );
    }
    let refs: Vec<&Matrix> = blocks.iter().collect();
    let hx = hstack(&refs)?;
    if hx.ncols() != g.len() {
        return Err(Error::invalid(format!(
            "g has length {} but the data provide {} columns",
            g.len(),
            hx.ncols()
        )));
    }
    Ok(hx * g)
}

/// Extended observability matrix and block-Toeplitz impulse-response matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseOperators {
    /// `(Lp) x n`, row blocks `C A^k`.
    pub observability: Matrix,
    /// `(Lp) x (Lm)`, block `(i, j)` is `D` on the diagonal and
    /// `C A^{i-j-1} B` below it.
    pub toeplitz: Matrix,
}

impl ResponseOperators {
    /// `O_L x0 + T_L u` for a stacked input.
    pub fn predict(&self, x0: &Vector, u: &Vector) -> Vector {
        &self.observability * x0 + &self.toeplitz * u
    }
}

pub fn response_operators(sys: &LtiSystem, horizon: usize) -> Result<ResponseOperators> {
    if horizon == 0 {
        return Err(Error::invalid("horizon must be positive"));
    }
    let (m, p) = (sys.m(), sys.p());
    let observability = observability_matrix(sys, horizon);
    let mut toeplitz = Matrix::zeros(p * horizon, m * horizon);
    // markov[k] = C A^k B
    let mut markov = Vec::with_capacity(horizon);
    let mut ab = sys.b().clone();
    for _ in 0..horizon.saturating_sub(1) {
        markov.push(sys.c() * &ab);
        ab = sys.a() * ab;
    }
    for i in 0..horizon {
        toeplitz.view_mut((i * p, i * m), (p, m)).copy_from(sys.d());
        for j in 0..i {
            toeplitz
                .view_mut((i * p, j * m), (p, m))
                .copy_from(&markov[i - j - 1]);
        }
    }
    Ok(ResponseOperators {
        observability,
        toeplitz,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowReport {
    pub start: usize,
    pub relative_residual: f64,
    pub parameterizable: bool,
}

/// Parameterizes every length-`horizon` window of `traj` by its length-`prefix` head.
///
/// Gated on the prefix input being persistently exciting of order
/// `delta + horizon`.
pub fn check_corollary1(
    traj: &Trajectory,
    prefix: usize,
    horizon: usize,
    delta: usize,
    threshold: f64,
) -> Result<Gated<Vec<WindowReport>>> {
    let k = traj.len();
    if horizon == 0 || horizon > prefix || prefix > k {
        return Err(Error::invalid(format!(
            "need 1 <= L <= T <= K, got L = {horizon}, T = {prefix}, K = {k}"
        )));
    }
    let y = traj
        .outputs()
        .ok_or_else(|| Error::invalid("trajectory has no outputs"))?;
    let data = TrajectorySet::single(traj.without_states().window(0, prefix)?);
    let pe = pe_check(&data, delta + horizon, RankTolerance::DEFAULT)?;
    if !pe.exciting {
        return Ok(Gated::HypothesisViolated {
            reason: format!(
                "prefix input is not persistently exciting of order {} (rank {} of {})",
                delta + horizon,
                pe.rank,
                pe.rows
            ),
        });
    }
    let h = build_trajectory_matrix(&data, horizon)?;
    let (m, p) = (traj.m(), y.nrows());
    let windows = k - horizon + 1;
    let mut targets = Matrix::zeros((m + p) * horizon, windows);
    for t in 0..windows {
        let u = stack_signal(&traj.inputs().columns(t, horizon).into_owned());
        let yy = stack_signal(&y.columns(t, horizon).into_owned());
        targets.view_mut((0, t), (m * horizon, 1)).copy_from(&u);
        targets
            .view_mut((m * horizon, t), (p * horizon, 1))
            .copy_from(&yy);
    }
    let svd = Svd::new(&h)?;
    let reports = solutions_from(&svd, &h, &targets, threshold)
        .into_iter()
        .enumerate()
        .map(|(start, s)| WindowReport {
            start,
            relative_residual: s.relative_residual,
            parameterizable: s.parameterizable,
        })
        .collect();
    Ok(Gated::Evaluated(reports))
}
