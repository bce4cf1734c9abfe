//! Hankel and mosaic-Hankel matrices, collective persistency of excitation.

use crate::error::{Error, Result};
use crate::lti::{Channel, TrajectorySet};
use crate::numerics::{hstack, numerical_rank, Matrix, RankTolerance};

/// Depth-`depth` block Hankel matrix of a `q x T` signal.
///
/// Block `(i, j)` is the sample `f_{i+j}`, so the result is
/// `(depth * q) x (T - depth + 1)`.
pub fn hankel(signal: &Matrix, depth: usize) -> Result<Matrix> {
    let (q, t) = signal.shape();
    if depth == 0 || depth > t {
        return Err(Error::invalid(format!(
            "Hankel depth {depth} must lie in 1..={t}"
        )));
    }
    let cols = t - depth + 1;
    let mut h = Matrix::zeros(depth * q, cols);
    for i in 0..depth {
        h.view_mut((i * q, 0), (q, cols))
            .copy_from(&signal.columns(i, cols));
    }
    Ok(h)
}

/// Horizontal concatenation of per-trajectory Hankel matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct MosaicHankel {
    pub matrix: Matrix,
    pub depth: usize,
    /// Column count contributed by each trajectory, in set order.
    pub block_columns: Vec<usize>,
}

pub fn mosaic_hankel(set: &TrajectorySet, depth: usize, channel: Channel) -> Result<MosaicHankel> {
    let mut blocks = Vec::with_capacity(set.len());
    for (i, traj) in set.iter().enumerate() {
        if depth == 0 || depth > traj.len() {
            return Err(Error::invalid(format!(
                "trajectory {i} has length {} < depth {depth}",
                traj.len()
            )));
        }
        let sig = traj.channel(channel).ok_or_else(|| {
            Error::invalid(format!("trajectory {i} lacks the {channel:?} channel"))
        })?;
        blocks.push(hankel(sig, depth)?);
    }
    let refs: Vec<&Matrix> = blocks.iter().collect();
    Ok(MosaicHankel {
        matrix: hstack(&refs)?,
        depth,
        block_columns: blocks.iter().map(|b| b.ncols()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeReport {
    pub order: usize,
    pub exciting: bool,
    pub rank: usize,
    pub rows: usize,
    pub cols: usize,
    /// Why the check failed structurally (depth too large), if it did.
    pub diagnostic: Option<String>,
}

/// Full-row-rank test of the depth-`order` input mosaic-Hankel matrix.
pub fn pe_check(set: &TrajectorySet, order: usize, tol: RankTolerance) -> Result<PeReport> {
    let rows = order * set.m();
    if order == 0 {
        return Err(Error::invalid("excitation order must be positive"));
    }
    if let Some((i, t)) = set
        .iter()
        .map(|t| t.len())
        .enumerate()
        .find(|&(_, t)| t < order)
    {
        return Ok(PeReport {
            order,
            exciting: false,
            rank: 0,
            rows,
            cols: 0,
            diagnostic: Some(format!("trajectory {i} has length {t} < order {order}")),
        });
    }
    let cols: usize = set.iter().map(|t| t.len() - order + 1).sum();
    if rows > cols {
        return Ok(PeReport {
            order,
            exciting: false,
            rank: cols,
            rows,
            cols,
            diagnostic: Some(format!("{rows} rows exceed {cols} columns")),
        });
    }
    let h = mosaic_hankel(set, order, Channel::Input)?;
    let rank = numerical_rank(&h.matrix, tol)?;
    Ok(PeReport {
        order,
        exciting: rank == rows,
        rank,
        rows,
        cols,
        diagnostic: None,
    })
}

pub fn is_collectively_pe(set: &TrajectorySet, order: usize, tol: RankTolerance) -> Result<bool> {
    Ok(pe_check(set, order, tol)?.exciting)
}

/// Largest order at which the inputs are collectively persistently exciting.
///
/// Scans downward from the structural bound `min_i T^i`; returns 0 when no
/// order passes.
pub fn pe_order(set: &TrajectorySet, tol: RankTolerance) -> Result<usize> {
    if set.m() == 0 {
        return Ok(0);
    }
    for d in (1..=set.min_len()).rev() {
        let cols: usize = set.iter().map(|t| t.len() - d + 1).sum();
        if d * set.m() > cols {
            continue;
        }
        if pe_check(set, d, tol)?.exciting {
            return Ok(d);
        }
    }
    Ok(0)
}
