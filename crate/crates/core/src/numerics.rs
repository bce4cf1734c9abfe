//! Dense linear-algebra kernels shared by every other module.
//!
//! Everything rank-related goes through a thin SVD with a single tolerance
//! policy ([`RankTolerance`]), so "full row rank", "image" and "kernel" mean
//! the same thing wherever they appear.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Default residual tolerance for subspace equality and membership tests.
pub const SUBSPACE_TOL: f64 = 1e-8;

/// Policy for turning singular values into a numerical rank.
///
/// The default threshold is `max(rows, cols) * eps * sigma_max`. A relative
/// override replaces it with `relative * sigma_max`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RankTolerance {
    relative: Option<f64>,
}

impl RankTolerance {
    pub const DEFAULT: RankTolerance = RankTolerance { relative: None };

    pub fn relative(relative: f64) -> Result<Self> {
        if !relative.is_finite() || relative < 0.0 {
            return Err(Error::invalid(format!(
                "rank tolerance must be a finite nonnegative number, got {relative}"
            )));
        }
        Ok(RankTolerance {
            relative: Some(relative),
        })
    }

    pub fn relative_value(&self) -> Option<f64> {
        self.relative
    }

    /// Absolute singular-value cutoff for a `rows x cols` matrix.
    pub fn threshold(&self, rows: usize, cols: usize, sigma_max: f64) -> f64 {
        match self.relative {
            Some(r) => r * sigma_max,
            None => rows.max(cols) as f64 * f64::EPSILON * sigma_max,
        }
    }
}

pub fn ensure_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Builds a matrix from nested row-major rows, rejecting ragged input.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::invalid("ragged matrix rows"));
    }
    let m = Matrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]);
    ensure_finite(&m, "matrix")?;
    Ok(m)
}

/// Row-major nested representation, the inverse of [`from_rows`].
pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

/// Thin SVD (via faer) with singular values sorted in decreasing order.
pub(crate) struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    /// `cols x k` right singular vectors (as columns).
    pub v: Matrix,
}

impl Svd {
    pub fn new(m: &Matrix) -> Result<Svd> {
        let (r, c) = m.shape();
        if r.min(c) == 0 {
            return Ok(Svd {
                u: Matrix::zeros(r, 0),
                s: Vec::new(),
                v: Matrix::zeros(c, 0),
            });
        }
        if r < c {
            let t = Svd::new(&m.transpose())?;
            return Ok(Svd {
                u: t.v,
                s: t.s,
                v: t.u,
            });
        }
        // faer's direct SVD of non-square inputs can lose backward stability
        // (relative reconstruction errors near 1e-6 on rank-deficient Hankel
        // data); reducing to the square R factor first avoids it.
        let qr = to_faer(m).qr();
        let q = qr.compute_thin_Q();
        let svd = qr
            .thin_R()
            .thin_svd()
            .map_err(|e| Error::Numerical(format!("SVD failed: {e:?}")))?;
        Ok(Svd {
            u: from_faer((&q * svd.U()).as_ref()),
            s: svd.S().column_vector().iter().copied().collect(),
            v: from_faer(svd.V()),
        })
    }

    pub fn sigma_max(&self) -> f64 {
        self.s.first().copied().unwrap_or(0.0)
    }

    pub fn rank(&self, rows: usize, cols: usize, tol: RankTolerance) -> usize {
        let smax = self.sigma_max();
        if smax == 0.0 {
            return 0;
        }
        let cutoff = tol.threshold(rows, cols, smax);
        self.s.iter().filter(|&&s| s > cutoff).count()
    }
}

fn to_faer(m: &Matrix) -> faer::Mat<f64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn from_faer(m: faer::MatRef<'_, f64>) -> Matrix {
    Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Singular values in nonincreasing order.
pub fn singular_values(m: &Matrix) -> Result<Vec<f64>> {
    ensure_finite(m, "matrix")?;
    let (r, c) = m.shape();
    if r.min(c) == 0 {
        return Ok(Vec::new());
    }
    let tall = if r >= c {
        to_faer(m)
    } else {
        to_faer(&m.transpose())
    };
    tall.qr()
        .thin_R()
        .singular_values()
        .map_err(|e| Error::Numerical(format!("SVD failed: {e:?}")))
}

/// Number of singular values strictly above the resolved tolerance.
pub fn numerical_rank(m: &Matrix, tol: RankTolerance) -> Result<usize> {
    let s = singular_values(m)?;
    let smax = s.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return Ok(0);
    }
    let cutoff = tol.threshold(m.nrows(), m.ncols(), smax);
    Ok(s.iter().filter(|&&v| v > cutoff).count())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquares {
    pub solution: Matrix,
    /// Frobenius norm of `a * solution - b`.
    pub residual_norm: f64,
}

/// Minimum-norm least-squares solution of `a x = b` under the default rank policy.
pub fn least_squares(a: &Matrix, b: &Matrix) -> Result<LeastSquares> {
    least_squares_with(a, b, RankTolerance::DEFAULT)
}

pub fn least_squares_with(a: &Matrix, b: &Matrix, tol: RankTolerance) -> Result<LeastSquares> {
    if a.nrows() != b.nrows() {
        return Err(Error::invalid(format!(
            "least squares: lhs has {} rows but rhs has {}",
            a.nrows(),
            b.nrows()
        )));
    }
    ensure_finite(a, "least-squares matrix")?;
    ensure_finite(b, "least-squares right-hand side")?;
    let svd = Svd::new(a)?;
    let solution = pinv_apply(&svd, a.nrows(), a.ncols(), tol, b);
    let residual_norm = (a * &solution - b).norm();
    Ok(LeastSquares {
        solution,
        residual_norm,
    })
}

fn pinv_apply(svd: &Svd, rows: usize, cols: usize, tol: RankTolerance, b: &Matrix) -> Matrix {
    let r = svd.rank(rows, cols, tol);
    let mut x = Matrix::zeros(cols, b.ncols());
    if r == 0 {
        return x;
    }
    let u = svd.u.columns(0, r);
    let v = svd.v.columns(0, r);
    let mut coeffs = u.transpose() * b;
    for (i, mut row) in coeffs.row_iter_mut().enumerate() {
        row /= svd.s[i];
    }
    x += v * coeffs;
    x
}

pub fn pseudo_inverse(m: &Matrix, tol: RankTolerance) -> Result<Matrix> {
    ensure_finite(m, "matrix")?;
    let svd = Svd::new(m)?;
    Ok(pinv_apply(
        &svd,
        m.nrows(),
        m.ncols(),
        tol,
        &Matrix::identity(m.nrows(), m.nrows()),
    ))
}

/// Orthonormal basis (as columns) of the numerical column space of `m`.
pub fn orthonormal_image(m: &Matrix, tol: RankTolerance) -> Result<Matrix> {
    ensure_finite(m, "matrix")?;
    let svd = Svd::new(m)?;
    let r = svd.rank(m.nrows(), m.ncols(), tol);
    Ok(svd.u.columns(0, r).into_owned())
}

/// Orthonormal basis of the numerical right kernel of `m`.
pub fn orthonormal_kernel(m: &Matrix, tol: RankTolerance) -> Result<Matrix> {
    ensure_finite(m, "matrix")?;
    let (rows, cols) = m.shape();
    if cols == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    if rows == 0 {
        return Ok(Matrix::identity(cols, cols));
    }
    // Zero rows leave the kernel unchanged and make the thin V complete.
    let svd = if rows < cols {
        let mut padded = Matrix::zeros(cols, cols);
        padded.rows_mut(0, rows).copy_from(m);
        Svd::new(&padded)?
    } else {
        Svd::new(m)?
    };
    let smax = svd.sigma_max();
    let cutoff = tol.threshold(rows, cols, smax);
    let keep: Vec<usize> = (0..cols)
        .filter(|&i| smax == 0.0 || svd.s[i] <= cutoff)
        .collect();
    Ok(Matrix::from_fn(cols, keep.len(), |i, j| {
        svd.v[(i, keep[j])]
    }))
}

/// Horizontal concatenation; all blocks must share a row count.
pub fn hstack(blocks: &[&Matrix]) -> Result<Matrix> {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    if blocks.iter().any(|b| b.nrows() != rows) {
        return Err(Error::invalid("hstack: row counts differ"));
    }
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        out.columns_mut(c, b.ncols()).copy_from(*b);
        c += b.ncols();
    }
    Ok(out)
}

/// Vertical concatenation; all blocks must share a column count.
pub fn vstack(blocks: &[&Matrix]) -> Result<Matrix> {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    if blocks.iter().any(|b| b.ncols() != cols) {
        return Err(Error::invalid("vstack: column counts differ"));
    }
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        out.rows_mut(r, b.nrows()).copy_from(*b);
        r += b.nrows();
    }
    Ok(out)
}

pub fn block_diag(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((a.nrows(), a.ncols()), b.shape()).copy_from(b);
    out
}

/// Orthonormal basis of a linear subspace of `R^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceBasis {
    basis: Matrix,
    tol: RankTolerance,
}

impl SubspaceBasis {
    /// Column space of `spanning`; the ambient dimension is its row count.
    pub fn span(spanning: &Matrix, tol: RankTolerance) -> Result<Self> {
        Ok(SubspaceBasis {
            basis: orthonormal_image(spanning, tol)?,
            tol,
        })
    }

    /// Right kernel of `m`, as a subspace of `R^{m.ncols()}`.
    pub fn kernel(m: &Matrix, tol: RankTolerance) -> Result<Self> {
        Ok(SubspaceBasis {
            basis: orthonormal_kernel(m, tol)?,
            tol,
        })
    }

    /// Wraps a matrix whose columns are already orthonormal.
    pub fn from_orthonormal(basis: Matrix, tol: RankTolerance) -> Result<Self> {
        let gram = basis.transpose() * &basis;
        let err = (gram - Matrix::identity(basis.ncols(), basis.ncols())).amax();
        if err > 1e-10 {
            return Err(Error::invalid(format!(
                "basis columns are not orthonormal (deviation {err:e})"
            )));
        }
        Ok(SubspaceBasis { basis, tol })
    }

    pub fn zero(ambient: usize) -> Self {
        SubspaceBasis {
            basis: Matrix::zeros(ambient, 0),
            tol: RankTolerance::DEFAULT,
        }
    }

    pub fn full(ambient: usize) -> Self {
        SubspaceBasis {
            basis: Matrix::identity(ambient, ambient),
            tol: RankTolerance::DEFAULT,
        }
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn tolerance(&self) -> RankTolerance {
        self.tol
    }

    fn check_ambient(&self, n: usize) -> Result<()> {
        if self.ambient_dim() != n {
            return Err(Error::invalid(format!(
                "ambient dimension mismatch: {} vs {}",
                self.ambient_dim(),
                n
            )));
        }
        Ok(())
    }

    /// Subspace sum `self + other`.
    pub fn sum(&self, other: &SubspaceBasis) -> Result<Self> {
        other.check_ambient(self.ambient_dim())?;
        SubspaceBasis::span(&hstack(&[&self.basis, &other.basis])?, self.tol)
    }

    /// Cartesian product `self x other` in `R^{n1 + n2}`.
    pub fn product(&self, other: &SubspaceBasis) -> Self {
        SubspaceBasis {
            basis: block_diag(&self.basis, &other.basis),
            tol: self.tol,
        }
    }

    /// `||v - P v|| / ||v||`, where `P` projects onto the subspace; 0 for `v = 0`.
    pub fn projection_residual(&self, v: &Vector) -> Result<f64> {
        self.check_ambient(v.len())?;
        let norm = v.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        let proj = &self.basis * (self.basis.transpose() * v);
        Ok((v - proj).norm() / norm)
    }

    pub fn contains(&self, v: &Vector, tol: f64) -> Result<bool> {
        Ok(self.projection_residual(v)? <= tol)
    }

    /// Largest residual of projecting either basis onto the other.
    ///
    /// Infinite when the dimensions differ.
    pub fn distance(&self, other: &SubspaceBasis) -> Result<f64> {
        other.check_ambient(self.ambient_dim())?;
        if self.dim() != other.dim() {
            return Ok(f64::INFINITY);
        }
        let one_way = |a: &Matrix, b: &Matrix| -> f64 {
            let r = a - b * (b.transpose() * a);
            r.column_iter().map(|c| c.norm()).fold(0.0, f64::max)
        };
        Ok(one_way(&self.basis, &other.basis).max(one_way(&other.basis, &self.basis)))
    }

    pub fn equals(&self, other: &SubspaceBasis, tol: f64) -> Result<bool> {
        Ok(self.distance(other)? <= tol)
    }
}

pub fn subspace_equal(a: &SubspaceBasis, b: &SubspaceBasis) -> Result<bool> {
    a.equals(b, SUBSPACE_TOL)
}

pub fn subspace_contains(space: &SubspaceBasis, v: &Vector) -> Result<bool> {
    space.contains(v, SUBSPACE_TOL)
}
