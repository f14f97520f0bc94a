use thiserror::Error;

use crate::sdp::SdpSolution;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    /// An offloading user was given zero bandwidth.
    #[error("user {user} offloads but has no uplink bandwidth")]
    InfeasibleAllocation { user: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A Farkas-type certificate was found: no PSD matrix satisfies the constraints.
    #[error("SDP is infeasible (certificate residual {certificate_residual:.3e})")]
    Infeasible { certificate_residual: f64 },

    #[error("SDP is unbounded below (ray residual {ray_residual:.3e})")]
    Unbounded { ray_residual: f64 },

    #[error(
        "SDP solver did not converge in {iterations} iterations \
         (primal {primal_residual:.3e}, dual {dual_residual:.3e}, gap {gap:.3e})"
    )]
    NotConverged {
        iterations: usize,
        primal_residual: f64,
        dual_residual: f64,
        gap: f64,
        best: Box<SdpSolution>,
    },

    #[error("numerical breakdown in SDP solver: {0}")]
    Numerical(String),

    #[error("degenerate solution: homogenizer entry Y[{index},{index}] = {value:.3e}")]
    DegenerateSolution { index: usize, value: f64 },

    #[error("bisection did not converge in {iterations} iterations (bracket [{lo}, {hi}])")]
    BisectionNotConverged { iterations: usize, lo: f64, hi: f64 },

    #[error("brute force refused: {users} users exceeds the limit of {limit}")]
    TooManyUsers { users: usize, limit: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
