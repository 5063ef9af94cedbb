//! Certified upper and lower bounds for the projection constant of a
//! univariate polynomial subspace of C[-1,1].
//!
//! The upper bound restricts the dual measures of a projection to finite
//! combinations of Dirac atoms and solves a linear program; the lower bound
//! relaxes the measures to truncated trigonometric moment sequences with
//! Toeplitz positive-semidefinite constraints and solves a semidefinite
//! program. Together they bracket the projection constant.

pub mod certify;
pub mod chebyshev;
pub mod cli;
pub mod conic;
pub mod lower_bound;
pub mod lp_solver;
pub mod oracle;
pub mod sdp_solver;
pub mod shape;
pub mod space;
pub mod upper_bound;

pub use certify::{bracket, Bracket, CertifyError, ScheduleConfig, StopReason};
pub use chebyshev::{ChebError, ChebSeries};
pub use lower_bound::{lower_bound, LowerConfig, LowerError};
pub use shape::{convexity_violation, ConvexityTest, ConvexityVerdict, ShapeError};
pub use space::{parse_space_spec, PolySpace, SpaceError};
pub use upper_bound::{upper_bound, UpperConfig, UpperError};

use nalgebra::DMatrix;

/// Which side of the projection constant a result bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundSide {
    Upper,
    Lower,
}

/// Solver telemetry attached to a bound so reports can show how trustworthy
/// the optimum is.
#[derive(Debug, Clone, Copy)]
pub struct SolveDiagnostics {
    pub iterations: usize,
    pub duality_gap: f64,
    /// Largest violation of the program's equality constraints at the
    /// returned solution.
    pub residual: f64,
    /// Smallest eigenvalue over all semidefinite blocks, when the program
    /// has any.
    pub min_block_eigenvalue: Option<f64>,
}

/// Discrete dual measures attached to an upper bound: row m of `weights`
/// holds the Dirac weights of the functional dual to basis element m, with
/// atom locations listed in `support`.
#[derive(Debug, Clone)]
pub struct DiracWeights {
    pub weights: DMatrix<f64>,
    pub support: Vec<f64>,
}

/// A one-sided bound on a projection constant, together with the program
/// parameters and solver evidence that produced it.
///
/// `value` folds the oversampling factor and a solver-tolerance safety
/// margin into the reported bound; `objective` is the raw optimum of the
/// finite program.
#[derive(Debug, Clone)]
pub struct BoundResult {
    pub side: BoundSide,
    pub value: f64,
    pub objective: f64,
    /// Oversampling compensation factor; only upper bounds have one.
    pub rho: Option<f64>,
    pub symmetric: bool,
    /// Dirac support size of the upper-bound program.
    pub k: Option<usize>,
    /// Number of sup-norm check points.
    pub l: usize,
    /// Moment truncation order of the lower-bound program.
    pub s: Option<usize>,
    pub diagnostics: SolveDiagnostics,
    /// Solved dual measures, present on upper bounds.
    pub weights: Option<DiracWeights>,
}

/// Stopping tolerances shared by the LP and SDP solvers.
///
/// `feas_tol` bounds the scaled primal and dual residuals, `gap_tol` the
/// relative duality gap, and `psd_tol` the eigenvalue slack allowed when
/// re-checking semidefinite blocks. The LP path runs tighter than the SDP
/// path because its optimum gets multiplied by an oversampling factor and
/// still has to deliver several correct digits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToleranceConfig {
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub psd_tol: f64,
    pub max_iter: usize,
}

impl ToleranceConfig {
    pub fn lp_default() -> Self {
        ToleranceConfig {
            feas_tol: 1e-9,
            gap_tol: 1e-9,
            psd_tol: 1e-9,
            max_iter: 100,
        }
    }

    pub fn sdp_default() -> Self {
        ToleranceConfig {
            feas_tol: 1e-8,
            gap_tol: 1e-8,
            psd_tol: 1e-8,
            max_iter: 100,
        }
    }
}
