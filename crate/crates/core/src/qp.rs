//! Dense convex QP solver: `min 1/2 x'Px + q'x + c` subject to `Aeq x = beq`
//! and `lower <= x <= upper`.
//!
//! Primal active-set method on the bound constraints. Phase 1 is a
//! bounded-variable least-squares fit of the equalities; phase 2 walks faces
//! of the box while keeping the equalities satisfied. Semidefinite `P` is
//! handled with minimum-norm steps and a final minimum-norm tie-break on the
//! optimal face.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::numerics::{
    ensure_finite, least_squares, orthonormal_kernel, Matrix, RankTolerance, Svd, Vector,
};

#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    pub lower: Vector,
    pub upper: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    p: Matrix,
    q: Vector,
    aeq: Matrix,
    beq: Vector,
    bounds: Option<BoxBounds>,
    offset: f64,
}

impl QuadraticProgram {
    /// Unconstrained problem. `p` must be symmetric positive semidefinite.
    pub fn new(p: Matrix, q: Vector) -> Result<Self> {
        let n = q.len();
        if p.shape() != (n, n) {
            return Err(Error::invalid(format!(
                "P is {}x{} but q has length {n}",
                p.nrows(),
                p.ncols()
            )));
        }
        ensure_finite(&p, "P")?;
        if !q.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("q".into()));
        }
        let scale = p.amax().max(1.0);
        if (&p - p.transpose()).amax() > 1e-10 * scale {
            return Err(Error::invalid("P is not symmetric"));
        }
        if n > 0 {
            let min_eig = p.clone().symmetric_eigenvalues().min();
            if min_eig < -1e-8 * scale {
                return Err(Error::invalid(format!(
                    "P is not positive semidefinite (eigenvalue {min_eig:e})"
                )));
            }
        }
        Ok(QuadraticProgram {
            p,
            q,
            aeq: Matrix::zeros(0, n),
            beq: Vector::zeros(0),
            bounds: None,
            offset: 0.0,
        })
    }

    pub fn with_equalities(mut self, aeq: Matrix, beq: Vector) -> Result<Self> {
        if aeq.ncols() != self.dim() || aeq.nrows() != beq.len() {
            return Err(Error::invalid(format!(
                "Aeq is {}x{}, beq has length {}, expected {} columns",
                aeq.nrows(),
                aeq.ncols(),
                beq.len(),
                self.dim()
            )));
        }
        ensure_finite(&aeq, "Aeq")?;
        if !beq.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("beq".into()));
        }
        self.aeq = aeq;
        self.beq = beq;
        Ok(self)
    }

    /// Infinite entries are allowed; NaN is not. `lower > upper` is kept and
    /// reported as infeasible by the solver.
    pub fn with_bounds(mut self, lower: Vector, upper: Vector) -> Result<Self> {
        if lower.len() != self.dim() || upper.len() != self.dim() {
            return Err(Error::invalid(format!(
                "bounds have lengths {} and {}, expected {}",
                lower.len(),
                upper.len(),
                self.dim()
            )));
        }
        if lower.iter().chain(upper.iter()).any(|v| v.is_nan()) {
            return Err(Error::NonFinite("bounds".into()));
        }
        self.bounds = Some(BoxBounds { lower, upper });
        Ok(self)
    }

    pub fn with_offset(mut self, offset: f64) -> Self {
        self.offset = offset;
        self
    }

    pub fn without_bounds(&self) -> Self {
        QuadraticProgram {
            bounds: None,
            ..self.clone()
        }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn p(&self) -> &Matrix {
        &self.p
    }

    pub fn q(&self) -> &Vector {
        &self.q
    }

    pub fn aeq(&self) -> &Matrix {
        &self.aeq
    }

    pub fn beq(&self) -> &Vector {
        &self.beq
    }

    pub fn bounds(&self) -> Option<&BoxBounds> {
        self.bounds.as_ref()
    }

    pub fn objective(&self, x: &Vector) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x) + self.offset
    }

    fn lower(&self) -> Vector {
        self.bounds.as_ref().map_or_else(
            || Vector::from_element(self.dim(), f64::NEG_INFINITY),
            |b| b.lower.clone(),
        )
    }

    fn upper(&self) -> Vector {
        self.bounds.as_ref().map_or_else(
            || Vector::from_element(self.dim(), f64::INFINITY),
            |b| b.upper.clone(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
    /// The objective decreases without bound on the feasible set.
    Unbounded,
    /// Terminated normally but the final KKT residual exceeds the tolerance.
    Inaccurate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: Vector,
    pub objective: f64,
    pub status: QpStatus,
    /// Scaled max of equality, box, stationarity and multiplier-sign residuals.
    pub kkt_residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iter: usize,
    /// `(coordinates, weight)`: adds `weight * I` to those diagonal entries of `P`.
    pub ridge: Vec<(Range<usize>, f64)>,
}

impl Default for QpSettings {
    fn default() -> Self {
        QpSettings {
            tol: 1e-9,
            max_iter: 1000,
            ridge: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bound {
    Free,
    Lower,
    Upper,
    /// `lower == upper`; never released.
    Fixed,
}

struct Workspace<'a> {
    lower: &'a Vector,
    upper: &'a Vector,
    state: Vec<Bound>,
    x: Vector,
}

impl Workspace<'_> {
    fn free(&self) -> Vec<usize> {
        (0..self.x.len())
            .filter(|&i| self.state[i] == Bound::Free)
            .collect()
    }

    fn fix(&mut self, i: usize, bound: Bound) {
        self.state[i] = bound;
        self.x[i] = match bound {
            Bound::Lower | Bound::Fixed => self.lower[i],
            Bound::Upper => self.upper[i],
            Bound::Free => self.x[i],
        };
    }

    /// Largest `alpha <= alpha_max` keeping `x + alpha d` in the box, with the
    /// blocking coordinate (lowest index on ties).
    fn ratio_test(
        &self,
        free: &[usize],
        d: &Vector,
        alpha_max: f64,
    ) -> (f64, Option<(usize, Bound)>) {
        let mut alpha = alpha_max;
        let mut block = None;
        for (k, &i) in free.iter().enumerate() {
            let (limit, bound) = if d[k] < 0.0 && self.lower[i].is_finite() {
                ((self.lower[i] - self.x[i]) / d[k], Bound::Lower)
            } else if d[k] > 0.0 && self.upper[i].is_finite() {
                ((self.upper[i] - self.x[i]) / d[k], Bound::Upper)
            } else {
                continue;
            };
            let limit = limit.max(0.0);
            if limit < alpha {
                alpha = limit;
                block = Some((i, bound));
            }
        }
        (alpha, block)
    }

    fn step(&mut self, free: &[usize], d: &Vector, alpha: f64) {
        for (k, &i) in free.iter().enumerate() {
            self.x[i] = (self.x[i] + alpha * d[k]).clamp(self.lower[i], self.upper[i]);
        }
    }
}

fn select(m: &Matrix, rows: &[usize], cols: &[usize]) -> Matrix {
    Matrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

fn gather(v: &Vector, idx: &[usize]) -> Vector {
    Vector::from_fn(idx.len(), |i, _| v[idx[i]])
}

/// Index of the most violated multiplier, if any exceeds `thresh`. `lambda`
/// is the gradient of the Lagrangian with respect to each fixed coordinate.
fn most_violating(ws: &Workspace, lambda: &Vector, thresh: f64) -> Option<usize> {
    let mut worst = thresh;
    let mut pick = None;
    for i in 0..ws.x.len() {
        let violation = match ws.state[i] {
            Bound::Lower => -lambda[i],
            Bound::Upper => lambda[i],
            Bound::Free | Bound::Fixed => continue,
        };
        if violation > worst {
            worst = violation;
            pick = Some(i);
        }
    }
    pick
}

fn initial_workspace<'a>(lower: &'a Vector, upper: &'a Vector) -> Workspace<'a> {
    let n = lower.len();
    let mut ws = Workspace {
        lower,
        upper,
        state: vec![Bound::Free; n],
        x: Vector::zeros(n),
    };
    for i in 0..n {
        if lower[i] == upper[i] {
            ws.fix(i, Bound::Fixed);
        } else if lower[i] >= 0.0 {
            ws.fix(i, Bound::Lower);
        } else if upper[i] <= 0.0 {
            ws.fix(i, Bound::Upper);
        }
    }
    ws
}

/// Bounded-variable least squares on `A x = b`, in place. Returns the
/// iteration count, or `None` when `max_iter` ran out.
fn phase_one(
    ws: &mut Workspace,
    a: &Matrix,
    b: &Vector,
    tol: f64,
    max_iter: usize,
) -> Result<Option<usize>> {
    let all: Vec<usize> = (0..a.nrows()).collect();
    let grad_scale = (a.transpose() * b).amax().max(1.0);
    for iter in 0..max_iter {
        let free = ws.free();
        let r = b - a * &ws.x;
        let a_f = select(a, &all, &free);
        let d = least_squares(&a_f, &Matrix::from_column_slice(r.len(), 1, r.as_slice()))?
            .solution
            .column(0)
            .into_owned();
        let (alpha, block) = ws.ratio_test(&free, &d, 1.0);
        ws.step(&free, &d, alpha);
        if let Some((i, bound)) = block {
            ws.fix(i, bound);
            continue;
        }
        // Gradient of 1/2 ||Ax - b||^2.
        let grad = a.transpose() * (a * &ws.x - b);
        match most_violating(ws, &grad, tol * grad_scale) {
            Some(i) => ws.state[i] = Bound::Free,
            None => return Ok(Some(iter + 1)),
        }
    }
    Ok(None)
}

enum FaceStep {
    Newton { d: Vector, nu: Vector },
    Descent(Vector),
}

/// Step on the current face: the equality-constrained Newton step when the
/// reduced KKT system is consistent, otherwise a direction of unbounded
/// descent in `ker P_FF ∩ ker A_F`.
fn face_step(p: &Matrix, a: &Matrix, g: &Vector, r: &Vector, free: &[usize]) -> Result<FaceStep> {
    let (nf, me) = (free.len(), a.nrows());
    let all: Vec<usize> = (0..me).collect();
    let mut kkt = Matrix::zeros(nf + me, nf + me);
    kkt.view_mut((0, 0), (nf, nf))
        .copy_from(&select(p, free, free));
    let a_f = select(a, &all, free);
    kkt.view_mut((nf, 0), (me, nf)).copy_from(&a_f);
    kkt.view_mut((0, nf), (nf, me)).copy_from(&a_f.transpose());
    let mut rhs = Vector::zeros(nf + me);
    rhs.rows_mut(0, nf).copy_from(&(-gather(g, free)));
    rhs.rows_mut(nf, me).copy_from(r);

    let svd = Svd::new(&kkt)?;
    let rank = svd.rank(nf + me, nf + me, RankTolerance::DEFAULT);
    let null = svd.v.columns(rank, nf + me - rank);
    let leak = null * (null.transpose() * &rhs);
    let descent = leak.rows(0, nf).into_owned();
    let scale = rhs.amax().max(1.0);
    if descent.amax() > 1e-9 * scale {
        return Ok(FaceStep::Descent(descent));
    }
    let u = svd.u.columns(0, rank);
    let mut coeffs = u.transpose() * &rhs;
    for i in 0..rank {
        coeffs[i] /= svd.s[i];
    }
    let sol = svd.v.columns(0, rank) * coeffs;
    Ok(FaceStep::Newton {
        d: sol.rows(0, nf).into_owned(),
        nu: sol.rows(nf, me).into_owned(),
    })
}

/// Moves free coordinates toward the minimum-norm point of the optimal face,
/// stopping at the box if it is reached first.
fn min_norm_polish(ws: &mut Workspace, p: &Matrix, a: &Matrix) -> Result<()> {
    let free = ws.free();
    if free.is_empty() {
        return Ok(());
    }
    let all_p: Vec<usize> = (0..p.nrows()).collect();
    let all_a: Vec<usize> = (0..a.nrows()).collect();
    let mut m = Matrix::zeros(p.nrows() + a.nrows(), free.len());
    m.rows_mut(0, p.nrows())
        .copy_from(&select(p, &all_p, &free));
    m.rows_mut(p.nrows(), a.nrows())
        .copy_from(&select(a, &all_a, &free));
    let z = orthonormal_kernel(&m, RankTolerance::DEFAULT)?;
    if z.ncols() == 0 {
        return Ok(());
    }
    let x_f = gather(&ws.x, &free);
    let d = -(&z * (z.transpose() * &x_f));
    let (alpha, _) = ws.ratio_test(&free, &d, 1.0);
    ws.step(&free, &d, alpha);
    Ok(())
}

/// Scaled KKT residual of `x` with bound states `state`.
fn kkt_residual(p: &Matrix, q: &Vector, a: &Matrix, b: &Vector, ws: &Workspace) -> Result<f64> {
    let x = &ws.x;
    let n = x.len();
    let eq = if a.nrows() > 0 {
        (a * x - b).amax() / b.amax().max(1.0)
    } else {
        0.0
    };
    let mut box_violation: f64 = 0.0;
    for i in 0..n {
        box_violation = box_violation
            .max(ws.lower[i] - x[i])
            .max(x[i] - ws.upper[i]);
    }
    let g = p * x + q;
    let fixed: Vec<usize> = (0..n).filter(|&i| ws.state[i] != Bound::Free).collect();
    let mut jac = Matrix::zeros(n, a.nrows() + fixed.len());
    jac.columns_mut(0, a.nrows()).copy_from(&a.transpose());
    for (k, &i) in fixed.iter().enumerate() {
        jac[(i, a.nrows() + k)] = -1.0;
    }
    let sol = least_squares(&jac, &Matrix::from_column_slice(n, 1, (-&g).as_slice()))?;
    let mult = sol.solution.column(0);
    let stationarity = (&jac * mult + &g).amax();
    let mut sign: f64 = 0.0;
    for (k, &i) in fixed.iter().enumerate() {
        let lambda = mult[a.nrows() + k];
        sign = sign.max(match ws.state[i] {
            Bound::Lower => -lambda,
            Bound::Upper => lambda,
            _ => 0.0,
        });
    }
    let scale = q.amax().max(p.amax() * x.amax()).max(1.0);
    Ok(eq
        .max(box_violation)
        .max(stationarity / scale)
        .max(sign / scale))
}

/// Solves `prob`. Errors are reserved for malformed input; infeasibility,
/// unboundedness and iteration limits are reported through the status.
pub fn solve_qp(prob: &QuadraticProgram, settings: &QpSettings) -> Result<QpSolution> {
    if settings.tol.is_nan() || settings.tol <= 0.0 {
        return Err(Error::invalid("solver tolerance must be positive"));
    }
    let n = prob.dim();
    let mut p = prob.p.clone();
    for (range, weight) in &settings.ridge {
        if range.end > n || *weight < 0.0 {
            return Err(Error::invalid(format!(
                "bad ridge block {range:?} with weight {weight}"
            )));
        }
        for i in range.clone() {
            p[(i, i)] += weight;
        }
    }
    let (a, b) = (&prob.aeq, &prob.beq);
    let (lower, upper) = (prob.lower(), prob.upper());
    let finish = |ws: &Workspace, status, iterations, kkt| QpSolution {
        x: ws.x.clone(),
        objective: prob.objective(&ws.x),
        status,
        kkt_residual: kkt,
        iterations,
    };

    let mut ws = initial_workspace(&lower, &upper);
    if (0..n).any(|i| lower[i] > upper[i]) {
        return Ok(finish(&ws, QpStatus::Infeasible, 0, f64::INFINITY));
    }
    let mut iterations = 0;
    if a.nrows() > 0 {
        iterations = match phase_one(&mut ws, a, b, settings.tol, settings.max_iter)? {
            Some(it) => it,
            None => {
                let kkt = kkt_residual(&p, &prob.q, a, b, &ws)?;
                return Ok(finish(&ws, QpStatus::MaxIter, settings.max_iter, kkt));
            }
        };
        let eq = (a * &ws.x - b).amax() / b.amax().max(1.0);
        if eq > settings.tol.max(1e-12) {
            return Ok(finish(&ws, QpStatus::Infeasible, iterations, eq));
        }
    }

    let q = &prob.q;
    let mut converged = false;
    while iterations < settings.max_iter {
        iterations += 1;
        let free = ws.free();
        let g = &p * &ws.x + q;
        let r = b - a * &ws.x;
        match face_step(&p, a, &g, &r, &free)? {
            FaceStep::Descent(d) => {
                let (alpha, block) = ws.ratio_test(&free, &d, f64::INFINITY);
                match block {
                    Some((i, bound)) => {
                        ws.step(&free, &d, alpha);
                        ws.fix(i, bound);
                    }
                    None => {
                        let kkt = kkt_residual(&p, q, a, b, &ws)?;
                        return Ok(finish(&ws, QpStatus::Unbounded, iterations, kkt));
                    }
                }
            }
            FaceStep::Newton { d, nu } => {
                let (alpha, block) = ws.ratio_test(&free, &d, 1.0);
                ws.step(&free, &d, alpha);
                if let Some((i, bound)) = block {
                    ws.fix(i, bound);
                    continue;
                }
                let g = &p * &ws.x + q;
                let lambda = g + a.transpose() * nu;
                let scale = q.amax().max(p.amax() * ws.x.amax()).max(1.0);
                match most_violating(&ws, &lambda, settings.tol * scale) {
                    Some(i) => ws.state[i] = Bound::Free,
                    None => {
                        converged = true;
                        break;
                    }
                }
            }
        }
    }
    if converged {
        min_norm_polish(&mut ws, &p, a)?;
    }
    let kkt = kkt_residual(&p, q, a, b, &ws)?;
    let status = if !converged {
        QpStatus::MaxIter
    } else if kkt <= settings.tol {
        QpStatus::Optimal
    } else {
        QpStatus::Inaccurate
    };
    Ok(finish(&ws, status, iterations, kkt))
}
