//! Independent cross-check oracles: brute-force vertex enumeration for small
//! LPs, direct eigenvalue computations for small SDPs, and randomized suites
//! comparing the production solvers against them. The `validate` subcommand
//! runs the same suites the test harness does.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::chebyshev::{cheb_eval, cheb_zeros, oversampling_factor};
use crate::lp_solver::{solve_lp, LinearProgram, LpStatus};
use crate::ToleranceConfig;

/// Ground truth for a bounded LP: its optimal value, or infeasibility.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VertexOutcome {
    Optimal(f64),
    Infeasible,
}

fn for_each_combination(m: usize, k: usize, mut visit: impl FnMut(&[usize])) {
    if k > m {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        visit(&idx);
        // advance to the next k-subset in lexicographic order
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + m - k {
                break;
            }
            if i == 0 {
                return;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Enumerates every basic point (each choice of n active constraints),
/// keeps the feasible ones and returns the best objective. Sound for
/// bounded feasible regions, which is all the random suite generates:
/// every variable carries finite bounds.
pub fn lp_vertex_oracle(lp: &LinearProgram) -> VertexOutcome {
    let n = lp.num_vars();
    let p = lp.eq_rhs.len();
    // all <=-rows: inequalities, then finite bounds
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for i in 0..lp.ineq_rhs.len() {
        rows.push(lp.ineq_mat.row(i).iter().copied().collect());
        rhs.push(lp.ineq_rhs[i]);
    }
    for j in 0..n {
        if lp.lower[j].is_finite() {
            let mut r = vec![0.0; n];
            r[j] = -1.0;
            rows.push(r);
            rhs.push(-lp.lower[j]);
        }
        if lp.upper[j].is_finite() {
            let mut r = vec![0.0; n];
            r[j] = 1.0;
            rows.push(r);
            rhs.push(lp.upper[j]);
        }
    }
    let need = n.saturating_sub(p);
    let mut best: Option<f64> = None;
    for_each_combination(rows.len(), need, |active| {
        let mut a = DMatrix::zeros(n, n);
        let mut b = nalgebra::DVector::zeros(n);
        for i in 0..p {
            for j in 0..n {
                a[(i, j)] = lp.eq_mat[(i, j)];
            }
            b[i] = lp.eq_rhs[i];
        }
        for (k, &r) in active.iter().enumerate() {
            for j in 0..n {
                a[(p + k, j)] = rows[r][j];
            }
            b[p + k] = rhs[r];
        }
        let lu = a.full_piv_lu();
        let x = match lu.solve(&b) {
            Some(x) if x.iter().all(|v| v.is_finite()) => x,
            _ => return,
        };
        let feasible = (0..rows.len()).all(|i| {
            let lhs: f64 = rows[i].iter().zip(x.iter()).map(|(a, b)| a * b).sum();
            lhs <= rhs[i] + 1e-9
        }) && (0..p).all(|i| {
            let lhs: f64 = (0..n).map(|j| lp.eq_mat[(i, j)] * x[j]).sum();
            (lhs - lp.eq_rhs[i]).abs() <= 1e-8
        });
        if feasible {
            let obj: f64 = lp.objective.iter().zip(x.iter()).map(|(c, v)| c * v).sum();
            best = Some(best.map_or(obj, |b: f64| b.min(obj)));
        }
    });
    match best {
        Some(v) => VertexOutcome::Optimal(v),
        None => VertexOutcome::Infeasible,
    }
}

/// Random fully-boxed LP with up to 6 variables, 8 inequalities and 2
/// equalities; roughly a quarter of the draws get one inequality pushed hard
/// enough to usually cut the feasible set to nothing.
pub fn random_box_lp(rng: &mut ChaCha8Rng) -> LinearProgram {
    let n = rng.gen_range(1..=6);
    let n_ineq = rng.gen_range(0..=8);
    let n_eq = if n >= 2 { rng.gen_range(0..=2.min(n - 1)) } else { 0 };
    let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut lp = LinearProgram::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect());
    for j in 0..n {
        lp.lower[j] = x0[j] - 0.5 - rng.gen_range(0.0..1.5);
        lp.upper[j] = x0[j] + 0.5 + rng.gen_range(0.0..1.5);
    }
    lp.ineq_mat = DMatrix::zeros(n_ineq, n);
    for i in 0..n_ineq {
        for j in 0..n {
            lp.ineq_mat[(i, j)] = rng.gen_range(-1.0..1.0);
        }
        let ax: f64 = (0..n).map(|j| lp.ineq_mat[(i, j)] * x0[j]).sum();
        lp.ineq_rhs.push(ax + 0.05 + rng.gen_range(0.0..1.0));
    }
    if n_ineq > 0 && rng.gen_bool(0.25) {
        let i = rng.gen_range(0..n_ineq);
        let ax: f64 = (0..n).map(|j| lp.ineq_mat[(i, j)] * x0[j]).sum();
        lp.ineq_rhs[i] = ax - 4.0 - rng.gen_range(0.0..1.0);
    }
    lp.eq_mat = DMatrix::zeros(n_eq, n);
    for i in 0..n_eq {
        for j in 0..n {
            lp.eq_mat[(i, j)] = rng.gen_range(-1.0..1.0);
        }
        let ax: f64 = (0..n).map(|j| lp.eq_mat[(i, j)] * x0[j]).sum();
        lp.eq_rhs.push(ax);
    }
    lp
}

#[derive(Debug, Clone, Copy)]
pub struct AgreementReport {
    pub cases: usize,
    pub status_mismatches: usize,
    /// max over cases of |solver - oracle| / (1 + |oracle|)
    pub worst_value_error: f64,
}

impl AgreementReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.status_mismatches == 0 && self.worst_value_error <= tol
    }
}

/// Solves `cases` random LPs with both the interior-point solver and the
/// vertex oracle and reports the discrepancies.
pub fn lp_agreement_suite(cases: usize, seed: u64) -> AgreementReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tol = ToleranceConfig::lp_default();
    let mut report = AgreementReport {
        cases,
        status_mismatches: 0,
        worst_value_error: 0.0,
    };
    for _ in 0..cases {
        let lp = random_box_lp(&mut rng);
        let oracle = lp_vertex_oracle(&lp);
        let sol = match solve_lp(&lp, &tol) {
            Ok(s) => s,
            Err(_) => {
                report.status_mismatches += 1;
                continue;
            }
        };
        match (oracle, sol.status) {
            (VertexOutcome::Optimal(v), LpStatus::Optimal) => {
                let err = (sol.objective_value - v).abs() / (1.0 + v.abs());
                report.worst_value_error = report.worst_value_error.max(err);
            }
            (VertexOutcome::Infeasible, LpStatus::Infeasible) => {}
            _ => report.status_mismatches += 1,
        }
    }
    report
}

/// Solves max λ s.t. A − λI ⪰ 0 with the SDP solver for random symmetric A
/// and compares against the smallest eigenvalue computed directly.
pub fn sdp_eigen_agreement_suite(cases: usize, order: usize, seed: u64) -> AgreementReport {
    use crate::sdp_solver::{solve_sdp, ConicProgram, PsdBlock, SdpStatus};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tol = ToleranceConfig::sdp_default();
    let mut report = AgreementReport {
        cases,
        status_mismatches: 0,
        worst_value_error: 0.0,
    };
    for _ in 0..cases {
        let raw = DMatrix::from_fn(order, order, |_, _| rng.gen_range(-1.0..1.0));
        let a = (&raw + raw.transpose()) * 0.5;
        let lmin = nalgebra::SymmetricEigen::new(a.clone()).eigenvalues.min();
        let mut cp = ConicProgram::new(vec![-1.0]);
        cp.psd_blocks.push(PsdBlock::Dense {
            constant: a,
            terms: vec![(0, -DMatrix::<f64>::identity(order, order))],
        });
        match solve_sdp(&cp, &tol) {
            Ok(sol) if sol.status == SdpStatus::Optimal => {
                let err = (sol.x[0] - lmin).abs() / (1.0 + lmin.abs());
                report.worst_value_error = report.worst_value_error.max(err);
            }
            _ => report.status_mismatches += 1,
        }
    }
    report
}

/// Cosine moments y_k = Σ_i w_i cos(kθ_i) of a discrete measure on [0,π].
pub fn cosine_moments(atoms: &[(f64, f64)], count: usize) -> Vec<f64> {
    (0..count)
        .map(|k| {
            atoms
                .iter()
                .map(|&(theta, w)| w * (k as f64 * theta).cos())
                .sum()
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct MomentPsdReport {
    pub cases: usize,
    /// most negative Toeplitz eigenvalue seen across all cases
    pub worst_min_eigenvalue: f64,
}

/// Every nonnegative measure's cosine moments give a PSD Toeplitz matrix;
/// exercised on random discrete measures with up to five atoms.
pub fn toeplitz_moment_suite(cases: usize, seed: u64) -> MomentPsdReport {
    use crate::sdp_solver::toeplitz_from_vector;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    for _ in 0..cases {
        let n_atoms = rng.gen_range(1..=5);
        let atoms: Vec<(f64, f64)> = (0..n_atoms)
            .map(|_| {
                (
                    rng.gen_range(0.0..std::f64::consts::PI),
                    rng.gen_range(0.0..2.0),
                )
            })
            .collect();
        let s = rng.gen_range(3..=10);
        let y = cosine_moments(&atoms, s);
        let t = toeplitz_from_vector(&y, s);
        let min_eig = nalgebra::SymmetricEigen::new(t).eigenvalues.min();
        worst = worst.min(min_eig);
    }
    MomentPsdReport {
        cases,
        worst_min_eigenvalue: worst,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OversamplingReport {
    pub cases: usize,
    /// max over cases of (dense-grid max) - rho * (zero-grid max)
    pub worst_violation: f64,
}

/// Checks the oversampling inequality max|p| ≤ rho(d,L) · max over the L
/// Chebyshev zeros of |p| on random degree-d polynomials, sampling the
/// left-hand maximum on a dense grid.
pub fn oversampling_suite(d: usize, l: usize, cases: usize, seed: u64) -> OversamplingReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rho = oversampling_factor(d, l).expect("l > d");
    let zeros = cheb_zeros(l);
    let grid: Vec<f64> = (0..=2000).map(|i| -1.0 + i as f64 / 1000.0).collect();
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..cases {
        let coeffs: Vec<f64> = (0..=d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dense_max = grid
            .iter()
            .map(|&x| cheb_eval(&coeffs, x).abs())
            .fold(0.0, f64::max);
        let zero_max = zeros
            .iter()
            .map(|&x| cheb_eval(&coeffs, x).abs())
            .fold(0.0, f64::max);
        worst = worst.max(dense_max - rho * zero_max);
    }
    OversamplingReport {
        cases,
        worst_violation: worst,
    }
}
