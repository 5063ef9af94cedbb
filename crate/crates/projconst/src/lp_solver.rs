//! Dense linear programming on top of the conic interior-point core.
//!
//! Problems are stated with an equality block, an inequality block (rows mean
//! a·x ≤ b) and per-variable bounds; everything is folded into the orthant
//! cone of the shared driver. This solver handles the small and
//! medium-sized programs (shape checks, oracle comparisons, symmetric
//! cross-checks); the production upper-bound path talks to the conic driver
//! through its own structured factorization instead.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::conic::cone::Cone;
use crate::conic::hsd::{solve_hsd, ConicOptions, ConicStatus};
use crate::conic::kkt::DenseKkt;
use crate::ToleranceConfig;

#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    /// eq_mat · x = eq_rhs
    pub eq_mat: DMatrix<f64>,
    pub eq_rhs: Vec<f64>,
    /// ineq_mat · x ≤ ineq_rhs
    pub ineq_mat: DMatrix<f64>,
    pub ineq_rhs: Vec<f64>,
    /// Per-variable bounds; use ±infinity for unbounded sides.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LinearProgram {
    /// A program over `n` free variables with the given costs and no
    /// constraints yet.
    pub fn new(objective: Vec<f64>) -> Self {
        let n = objective.len();
        LinearProgram {
            objective,
            eq_mat: DMatrix::zeros(0, n),
            eq_rhs: Vec::new(),
            ineq_mat: DMatrix::zeros(0, n),
            ineq_rhs: Vec::new(),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterLimit,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    /// NaN unless the status carries a meaningful point (Optimal, IterLimit).
    pub objective_value: f64,
    /// Multipliers with the sign convention
    /// objective + eqᵀ·dual_eq + ineqᵀ·dual_ineq + bound terms = 0,
    /// dual_ineq ≥ 0.
    pub dual_eq: Vec<f64>,
    pub dual_ineq: Vec<f64>,
    pub duality_gap: f64,
    pub iterations: usize,
}

#[derive(Debug, Error, PartialEq)]
pub enum LpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
}

fn validate(lp: &LinearProgram) -> Result<(), LpError> {
    let n = lp.num_vars();
    let check = |name: &str, cols: usize, rows: usize, rhs: usize| -> Result<(), LpError> {
        if cols != n {
            return Err(LpError::DimensionMismatch(format!(
                "{name} has {cols} columns for {n} variables"
            )));
        }
        if rows != rhs {
            return Err(LpError::DimensionMismatch(format!(
                "{name} has {rows} rows but {rhs} right-hand sides"
            )));
        }
        Ok(())
    };
    check("eq", lp.eq_mat.ncols(), lp.eq_mat.nrows(), lp.eq_rhs.len())?;
    check(
        "ineq",
        lp.ineq_mat.ncols(),
        lp.ineq_mat.nrows(),
        lp.ineq_rhs.len(),
    )?;
    if lp.lower.len() != n || lp.upper.len() != n {
        return Err(LpError::DimensionMismatch(format!(
            "bounds have lengths {}/{} for {n} variables",
            lp.lower.len(),
            lp.upper.len()
        )));
    }
    if lp.eq_rhs.iter().chain(&lp.ineq_rhs).any(|v| !v.is_finite()) {
        return Err(LpError::DimensionMismatch(
            "right-hand sides must be finite".into(),
        ));
    }
    Ok(())
}

pub fn solve_lp(lp: &LinearProgram, tol: &ToleranceConfig) -> Result<LpSolution, LpError> {
    validate(lp)?;
    let n = lp.num_vars();
    let n_ineq = lp.ineq_rhs.len();

    // cone rows: inequality block first, then finite lower/upper bounds
    let mut g_rows: Vec<Vec<f64>> = Vec::new();
    let mut h = Vec::new();
    for i in 0..n_ineq {
        g_rows.push(lp.ineq_mat.row(i).iter().copied().collect());
        h.push(lp.ineq_rhs[i]);
    }
    for j in 0..n {
        if lp.lower[j].is_finite() {
            let mut row = vec![0.0; n];
            row[j] = -1.0;
            g_rows.push(row);
            h.push(-lp.lower[j]);
        }
    }
    for j in 0..n {
        if lp.upper[j].is_finite() {
            let mut row = vec![0.0; n];
            row[j] = 1.0;
            g_rows.push(row);
            h.push(lp.upper[j]);
        }
    }
    let m = g_rows.len();
    let mut g = DMatrix::zeros(m, n);
    for (i, row) in g_rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            g[(i, j)] = v;
        }
    }
    let cone = Cone {
        lin: m,
        psd: vec![],
    };
    let mut kkt = DenseKkt::new(lp.eq_mat.clone(), g);
    let opts = ConicOptions {
        feas_tol: tol.feas_tol,
        gap_tol: tol.gap_tol,
        max_iter: tol.max_iter,
        ..Default::default()
    };
    let sol = solve_hsd(&lp.objective, &lp.eq_rhs, &h, &cone, &mut kkt, &opts);

    let status = match sol.status {
        ConicStatus::Optimal => LpStatus::Optimal,
        ConicStatus::PrimalInfeasible => LpStatus::Infeasible,
        ConicStatus::DualInfeasible => LpStatus::Unbounded,
        ConicStatus::IterationLimit => LpStatus::IterLimit,
        ConicStatus::NumericalFailure => {
            return Err(LpError::NumericalFailure(format!(
                "interior-point iteration broke down after {} iterations",
                sol.iterations
            )))
        }
    };
    let objective_value = match status {
        LpStatus::Optimal | LpStatus::IterLimit => sol.primal_objective,
        _ => f64::NAN,
    };
    Ok(LpSolution {
        status,
        objective_value,
        dual_eq: sol.y,
        dual_ineq: sol.z[..n_ineq.min(sol.z.len())].to_vec(),
        duality_gap: sol.gap,
        iterations: sol.iterations,
        x: sol.x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn bounded_single_variable() {
        // min x s.t. x >= 1
        let mut lp = LinearProgram::new(vec![1.0]);
        lp.lower[0] = 1.0;
        let sol = solve_lp(&lp, &ToleranceConfig::lp_default()).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert_abs_diff_eq!(sol.objective_value, 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-7);
    }

    #[test]
    fn free_variable_is_unbounded() {
        let lp = LinearProgram::new(vec![1.0]);
        let sol = solve_lp(&lp, &ToleranceConfig::lp_default()).unwrap();
        assert_eq!(sol.status, LpStatus::Unbounded);
        assert!(sol.objective_value.is_nan());
    }

    #[test]
    fn conflicting_bounds_are_infeasible() {
        let mut lp = LinearProgram::new(vec![0.0]);
        lp.lower[0] = 1.0;
        lp.upper[0] = 0.0;
        let sol = solve_lp(&lp, &ToleranceConfig::lp_default()).unwrap();
        assert_eq!(sol.status, LpStatus::Infeasible);
    }

    #[test]
    fn transport_toy_with_equality_and_duals() {
        // min 2a + 3b s.t. a + b = 1, a, b >= 0 -> a = 1
        let mut lp = LinearProgram::new(vec![2.0, 3.0]);
        lp.eq_mat = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        lp.eq_rhs = vec![1.0];
        lp.lower = vec![0.0, 0.0];
        let sol = solve_lp(&lp, &ToleranceConfig::lp_default()).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert_abs_diff_eq!(sol.objective_value, 2.0, epsilon = 1e-8);
        assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-7);
        // stationarity: c + eq' y = 0 on the active coordinate
        assert_abs_diff_eq!(sol.dual_eq[0], -2.0, epsilon = 1e-6);
    }

    #[test]
    fn inequality_duals_are_nonnegative_and_stationary() {
        // min -x - y s.t. x + y <= 1, x <= 0.6, y free in [0, inf)
        let mut lp = LinearProgram::new(vec![-1.0, -1.0]);
        lp.ineq_mat = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 0.0]);
        lp.ineq_rhs = vec![1.0, 0.6];
        lp.lower = vec![f64::NEG_INFINITY, 0.0];
        let sol = solve_lp(&lp, &ToleranceConfig::lp_default()).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert_abs_diff_eq!(sol.objective_value, -1.0, epsilon = 1e-8);
        assert!(sol.dual_ineq.iter().all(|&z| z >= -1e-9));
        // first row is binding with multiplier 1, second is slack at optimum
        assert_abs_diff_eq!(sol.dual_ineq[0], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn scaling_objective_scales_value() {
        let mut lp = LinearProgram::new(vec![1.0, 2.0]);
        lp.ineq_mat = DMatrix::from_row_slice(2, 2, &[-1.0, -1.0, -2.0, 1.0]);
        lp.ineq_rhs = vec![-1.0, 0.5];
        lp.lower = vec![-3.0, -3.0];
        lp.upper = vec![3.0, 3.0];
        let tol = ToleranceConfig::lp_default();
        let base = solve_lp(&lp, &tol).unwrap();
        assert_eq!(base.status, LpStatus::Optimal);
        let mut scaled = lp.clone();
        for c in &mut scaled.objective {
            *c *= 7.5;
        }
        let scaled_sol = solve_lp(&scaled, &tol).unwrap();
        assert_abs_diff_eq!(
            scaled_sol.objective_value,
            7.5 * base.objective_value,
            epsilon = 1e-7
        );
        // the unscaled minimizer stays feasible and optimal for the scaled problem
        let obj_at_base: f64 = scaled
            .objective
            .iter()
            .zip(&base.x)
            .map(|(c, x)| c * x)
            .sum();
        assert_abs_diff_eq!(obj_at_base, scaled_sol.objective_value, epsilon = 1e-6);
    }

    #[test]
    fn weak_duality_on_equality_form() {
        // dual objective = eq_rhs . dual_eq + ... <= primal for minimization;
        // checked through the driver's gap instead of reconstructing it here
        let mut lp = LinearProgram::new(vec![1.0, 1.0, 1.0]);
        lp.eq_mat = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 1.0]);
        lp.eq_rhs = vec![2.0];
        lp.lower = vec![0.0; 3];
        let sol = solve_lp(&lp, &ToleranceConfig::lp_default()).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!(sol.duality_gap >= 0.0);
        assert!(sol.duality_gap <= 1e-8);
        assert_abs_diff_eq!(sol.objective_value, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn mismatched_rhs_is_rejected() {
        let mut lp = LinearProgram::new(vec![1.0]);
        lp.eq_mat = DMatrix::zeros(2, 1);
        lp.eq_rhs = vec![0.0];
        assert!(matches!(
            solve_lp(&lp, &ToleranceConfig::lp_default()),
            Err(LpError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn identical_inputs_identical_outputs() {
        let mut lp = LinearProgram::new(vec![0.3, -1.2, 0.8]);
        lp.ineq_mat =
            DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 1.0, -0.5, 1.0, -1.0]);
        lp.ineq_rhs = vec![2.0, 1.0];
        lp.lower = vec![-2.0; 3];
        lp.upper = vec![2.0; 3];
        let tol = ToleranceConfig::lp_default();
        let a = solve_lp(&lp, &tol).unwrap();
        let b = solve_lp(&lp, &tol).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.objective_value.to_bits(), b.objective_value.to_bits());
    }
}
