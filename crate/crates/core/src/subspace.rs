//! Controllable, unobservable and Krylov subspaces, minimal-polynomial
//! degree, and the image / initial-state conditions for trajectory
//! parameterization.

use crate::error::{Error, Gated, Result};
use crate::hankel::{mosaic_hankel, pe_check};
use crate::lti::{Channel, LtiSystem, TrajectorySet};
use crate::numerics::{
    hstack, numerical_rank, vstack, Matrix, RankTolerance, Vector, SUBSPACE_TOL,
};

pub use crate::numerics::SubspaceBasis;

/// Degree of the minimal polynomial of a square matrix; `1 <= degree <= n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct MinPolyDegree(usize);

impl MinPolyDegree {
    pub fn get(self) -> usize {
        self.0
    }
}

/// `[X, A X, ..., A^{k-1} X]`.
fn krylov_matrix(a: &Matrix, x: &Matrix, k: usize) -> Result<Matrix> {
    let mut blocks = Vec::with_capacity(k);
    let mut cur = x.clone();
    for _ in 0..k {
        let next = a * &cur;
        blocks.push(cur);
        cur = next;
    }
    let refs: Vec<&Matrix> = blocks.iter().collect();
    hstack(&refs)
}

/// `im [B, AB, ..., A^{n-1} B]`.
pub fn controllable_subspace(sys: &LtiSystem, tol: RankTolerance) -> Result<SubspaceBasis> {
    krylov_subspace(sys.a(), sys.b(), tol)
}

/// `ker [C; CA; ...; CA^{n-1}]`.
pub fn unobservable_subspace(sys: &LtiSystem, tol: RankTolerance) -> Result<SubspaceBasis> {
    let obs = observability_matrix(sys, sys.n());
    SubspaceBasis::kernel(&obs, tol)
}

/// `[C; CA; ...; CA^{k-1}]`.
pub fn observability_matrix(sys: &LtiSystem, k: usize) -> Matrix {
    let (p, n) = (sys.p(), sys.n());
    let mut out = Matrix::zeros(p * k, n);
    let mut row = sys.c().clone();
    for i in 0..k {
        out.view_mut((i * p, 0), (p, n)).copy_from(&row);
        row = &row * sys.a();
    }
    out
}

/// Smallest `A`-invariant subspace containing the columns of `x0`.
pub fn krylov_subspace(a: &Matrix, x0: &Matrix, tol: RankTolerance) -> Result<SubspaceBasis> {
    let n = a.nrows();
    if a.ncols() != n || x0.nrows() != n {
        return Err(Error::invalid(format!(
            "Krylov subspace: A is {:?}, X0 has {} rows",
            a.shape(),
            x0.nrows()
        )));
    }
    if x0.ncols() == 0 {
        return Ok(SubspaceBasis::zero(n));
    }
    SubspaceBasis::span(&krylov_matrix(a, x0, n.max(1))?, tol)
}

/// Degree of the minimal polynomial, by rank tests on vectorized powers.
///
/// Returns the smallest `d` with `vec(A^d)` in the span of
/// `vec(I), ..., vec(A^{d-1})`. Each vectorized power is normalized before
/// the test so growth or decay of the powers does not skew the tolerance.
pub fn min_poly_degree(a: &Matrix, tol: RankTolerance) -> Result<MinPolyDegree> {
    let n = a.nrows();
    if a.ncols() != n || n == 0 {
        return Err(Error::invalid(format!(
            "minimal polynomial needs a nonempty square matrix, got {:?}",
            a.shape()
        )));
    }
    let mut powers = Matrix::zeros(n * n, n + 1);
    let mut pow = Matrix::identity(n, n);
    for k in 0..=n {
        let norm = pow.norm();
        if norm > 0.0 {
            let col = Vector::from_column_slice((&pow / norm).as_slice());
            powers.set_column(k, &col);
        }
        pow = a * pow;
    }
    for d in 1..=n {
        let rank = numerical_rank(&powers.columns(0, d + 1).into_owned(), tol)?;
        if rank <= d {
            return Ok(MinPolyDegree(d));
        }
    }
    // Cayley-Hamilton guarantees termination in exact arithmetic.
    Ok(MinPolyDegree(n))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageCheck {
    pub holds: bool,
    /// Subspace distance between the data image and the predicted subspace.
    pub residual: f64,
    pub data_rank: usize,
    pub predicted_dim: usize,
}

/// `[H_1(x^i_{[0, T^i - L]}) ...; H_L(u^i) ...]`.
pub fn state_input_matrix(data: &TrajectorySet, horizon: usize) -> Result<Matrix> {
    if !data.has_states() {
        return Err(Error::invalid(
            "state-input data matrix needs state trajectories",
        ));
    }
    let hu = mosaic_hankel(data, horizon, Channel::Input)?;
    let states: Vec<Matrix> = data
        .iter()
        .map(|t| {
            let x = t.states().expect("checked");
            x.columns(0, t.len() - horizon + 1).into_owned()
        })
        .collect();
    let refs: Vec<&Matrix> = states.iter().collect();
    let hx = hstack(&refs)?;
    vstack(&[&hx, &hu.matrix])
}

/// Checks `im [H_1(x); H_L(u)] == (R + K[x_0^1..x_0^tau]) x R^{mL}`.
///
/// Gated on the inputs being collectively persistently exciting of order
/// `delta + horizon`; `delta` should bound the minimal-polynomial degree of
/// the system matrix from above.
pub fn theorem1_image_check(
    sys: &LtiSystem,
    data: &TrajectorySet,
    horizon: usize,
    delta: usize,
    tol: RankTolerance,
) -> Result<Gated<ImageCheck>> {
    if !data.has_states() {
        return Err(Error::invalid("image check needs state trajectories"));
    }
    if data.n() != Some(sys.n()) || data.m() != sys.m() {
        return Err(Error::invalid("data dimensions do not match the system"));
    }
    if horizon == 0 {
        return Err(Error::invalid("horizon must be positive"));
    }
    let pe = pe_check(data, delta + horizon, tol)?;
    if !pe.exciting {
        return Ok(Gated::HypothesisViolated {
            reason: format!(
                "inputs are not collectively persistently exciting of order {} (rank {} of {}{})",
                delta + horizon,
                pe.rank,
                pe.rows,
                pe.diagnostic.map(|d| format!("; {d}")).unwrap_or_default()
            ),
        });
    }
    let stacked = state_input_matrix(data, horizon)?;
    let image = SubspaceBasis::span(&stacked, tol)?;
    let reach = controllable_subspace(sys, tol)?.sum(&krylov_subspace(
        sys.a(),
        &data.initial_states()?,
        tol,
    )?)?;
    let predicted = reach.product(&SubspaceBasis::full(sys.m() * horizon));
    let residual = image.distance(&predicted)?;
    Ok(Gated::Evaluated(ImageCheck {
        holds: residual <= SUBSPACE_TOL,
        residual,
        data_rank: image.dim(),
        predicted_dim: predicted.dim(),
    }))
}

/// `R + O + K[x_0^1, ..., x_0^tau]`.
pub fn parameterizable_initial_states(
    sys: &LtiSystem,
    data: &TrajectorySet,
    tol: RankTolerance,
) -> Result<SubspaceBasis> {
    let k = krylov_subspace(sys.a(), &data.initial_states()?, tol)?;
    controllable_subspace(sys, tol)?
        .sum(&unobservable_subspace(sys, tol)?)?
        .sum(&k)
}

/// Whether `xbar0` lies in `R + O + K[x_0^1, ..., x_0^tau]`.
pub fn theorem1_state_condition(
    sys: &LtiSystem,
    data: &TrajectorySet,
    xbar0: &Vector,
    tol: RankTolerance,
) -> Result<bool> {
    parameterizable_initial_states(sys, data, tol)?.contains(xbar0, SUBSPACE_TOL)
}
