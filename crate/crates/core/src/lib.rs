//! Data-based trajectory parameterization for discrete-time LTI systems.
//!
//! Modules:
//!
//! * [`numerics`]: SVD-backed rank, least squares and subspace comparison.
//! * [`lti`]: plant model, trajectories, simulation and seeded excitation.
//! * [`hankel`]: (mosaic-)Hankel matrices and collective persistency of excitation.
//! * [`subspace`]: controllable, unobservable and Krylov subspaces, minimal
//!   polynomial degree and the image/initial-state checks.
//! * [`parameterize`]: parameterization of length-`L` trajectories by data.
//! * [`qp`]: active-set solver for box- and equality-constrained convex QPs.
//! * [`predictive`]: model predictive control, online DeePC and the
//!   closed-loop harness.
//! * [`multiagent`]: homogeneous multi-agent systems, data-driven Markov
//!   parameters and system recovery.

pub mod error;
pub mod hankel;
pub mod lti;
pub mod multiagent;
pub mod numerics;
pub mod parameterize;
pub mod predictive;
pub mod qp;
pub mod subspace;

pub use error::{Error, Gated, Result};
pub use lti::{LtiSystem, Trajectory, TrajectorySet};
pub use numerics::{Matrix, RankTolerance, SubspaceBasis, Vector};
