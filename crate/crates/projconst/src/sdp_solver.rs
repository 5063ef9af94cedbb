//! Semidefinite programming with first-class Toeplitz blocks.
//!
//! Programs are affine images of a flat variable vector: equality rows, a
//! set of nonnegative variables, and PSD constraints that are either
//! Toeplitz matrices of affine lag vectors or general symmetric affine maps.
//! The interior-point core treats every block as a dense PSD cone; the
//! Toeplitz structure pays off in the KKT factorization, where each block's
//! contribution to the Schur complement collapses to an S×S table of
//! E_p T⁻¹ E_q T⁻¹ traces (E_p the elementary Toeplitz basis) computed by
//! matrix autocorrelation — O(S² log S) by FFT instead of O(S⁴) entrywise.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;
use thiserror::Error;

use crate::conic::cone::{apply_wtw_inv, smat, svec_into, svec_len, Cone, Scaling};
use crate::conic::hsd::{solve_hsd, ConicOptions, ConicStatus, KktBackend};
use crate::conic::kkt::chol_with_shift;
use crate::ToleranceConfig;

/// Affine scalar c + Σ w_i x_i over the program's variable vector.
#[derive(Debug, Clone, Default)]
pub struct AffineExpr {
    pub constant: f64,
    pub terms: Vec<(usize, f64)>,
}

impl AffineExpr {
    pub fn constant(c: f64) -> Self {
        AffineExpr {
            constant: c,
            terms: Vec::new(),
        }
    }

    pub fn var(i: usize) -> Self {
        AffineExpr {
            constant: 0.0,
            terms: vec![(i, 1.0)],
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(i, w)| w * x[i]).sum::<f64>()
    }
}

#[derive(Debug, Clone)]
pub enum PsdBlock {
    /// Toep_S of the affine lag vector: entry (i,j) is lags[|i-j|].
    Toeplitz { lags: Vec<AffineExpr> },
    /// constant + Σ x_i·terms[i].1, all matrices symmetric of equal order.
    Dense {
        constant: DMatrix<f64>,
        terms: Vec<(usize, DMatrix<f64>)>,
    },
}

impl PsdBlock {
    pub fn order(&self) -> usize {
        match self {
            PsdBlock::Toeplitz { lags } => lags.len(),
            PsdBlock::Dense { constant, .. } => constant.nrows(),
        }
    }

    /// The block matrix at a given variable vector.
    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        match self {
            PsdBlock::Toeplitz { lags } => {
                let vals: Vec<f64> = lags.iter().map(|e| e.eval(x)).collect();
                toeplitz_from_vector(&vals, vals.len())
            }
            PsdBlock::Dense { constant, terms } => {
                let mut m = constant.clone();
                for &(i, ref f) in terms {
                    m += f * x[i];
                }
                m
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConicProgram {
    pub objective: Vec<f64>,
    pub eq_mat: DMatrix<f64>,
    pub eq_rhs: Vec<f64>,
    pub psd_blocks: Vec<PsdBlock>,
    /// Indices of variables constrained to be nonnegative.
    pub nonneg: Vec<usize>,
}

impl ConicProgram {
    pub fn new(objective: Vec<f64>) -> Self {
        let n = objective.len();
        ConicProgram {
            objective,
            eq_mat: DMatrix::zeros(0, n),
            eq_rhs: Vec::new(),
            psd_blocks: Vec::new(),
            nonneg: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterLimit,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub x: Vec<f64>,
    pub objective_value: f64,
    /// Weak-duality side of the solve: certifies objective_value from below
    /// for minimization programs, up to dual_residual.
    pub dual_objective: f64,
    pub dual_residual: f64,
    /// Independent eigenvalue re-check of every block at the returned point.
    pub min_eigenvalue_per_block: Vec<f64>,
    pub equality_residual: f64,
    pub duality_gap: f64,
    pub iterations: usize,
}

#[derive(Debug, Error)]
pub enum SdpError {
    #[error("malformed program: {0}")]
    Malformed(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
}

/// The S×S symmetric Toeplitz matrix with first column y[0..S].
pub fn toeplitz_from_vector(y: &[f64], s: usize) -> DMatrix<f64> {
    assert!(y.len() >= s, "need {s} lags, got {}", y.len());
    DMatrix::from_fn(s, s, |i, j| y[i.abs_diff(j)])
}

// ---------------------------------------------------------------------------
// Structured KKT backend

/// Precompiled sparse lag map of one Toeplitz block: triples (variable, lag,
/// weight) so the Schur contribution is Σ w_a w_b Htoep[lag_a][lag_b] into
/// H[var_a][var_b].
struct ToeplitzMap {
    order: usize,
    triples: Vec<(usize, usize, f64)>,
}

struct DenseMap {
    constant: DMatrix<f64>,
    terms: Vec<(usize, DMatrix<f64>)>,
}

enum BlockMap {
    Toeplitz(ToeplitzMap),
    Dense(DenseMap),
}

impl BlockMap {
    fn order(&self) -> usize {
        match self {
            BlockMap::Toeplitz(t) => t.order,
            BlockMap::Dense(d) => d.constant.nrows(),
        }
    }
}

/// Autocorrelation table of a symmetric S×S matrix: entry (α+S-1, β+S-1)
/// holds Σ_{j,k} R[j,k]·R[j+α,k+β] over in-range indices.
fn corr_table_direct(r: &DMatrix<f64>) -> DMatrix<f64> {
    let s = r.nrows();
    let w = 2 * s - 1;
    let mut out = DMatrix::zeros(w, w);
    for a in 0..w {
        let alpha = a as isize - (s as isize - 1);
        for b in 0..w {
            let beta = b as isize - (s as isize - 1);
            let mut acc = 0.0;
            let j_lo = (-alpha).max(0) as usize;
            let j_hi = ((s as isize) - alpha.max(0)) as usize;
            let k_lo = (-beta).max(0) as usize;
            let k_hi = ((s as isize) - beta.max(0)) as usize;
            for j in j_lo..j_hi {
                let jj = (j as isize + alpha) as usize;
                for k in k_lo..k_hi {
                    acc += r[(j, k)] * r[(jj, (k as isize + beta) as usize)];
                }
            }
            out[(a, b)] = acc;
        }
    }
    out
}

struct CorrFft {
    size: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl CorrFft {
    fn new(s: usize) -> Self {
        let size = 2 * s;
        let mut planner = FftPlanner::new();
        CorrFft {
            size,
            forward: planner.plan_fft_forward(size),
            inverse: planner.plan_fft_inverse(size),
        }
    }

    /// Same table as `corr_table_direct` via a 2-D FFT on the 2S×2S
    /// zero-padded grid (large enough that circular shifts do not alias).
    fn corr_table(&self, r: &DMatrix<f64>) -> DMatrix<f64> {
        let s = r.nrows();
        let n = self.size;
        let mut grid = vec![Complex::new(0.0, 0.0); n * n];
        for j in 0..s {
            for k in 0..s {
                grid[j * n + k] = Complex::new(r[(j, k)], 0.0);
            }
        }
        // rows then columns
        for row in grid.chunks_exact_mut(n) {
            self.forward.process(row);
        }
        let mut col = vec![Complex::new(0.0, 0.0); n];
        for c in 0..n {
            for j in 0..n {
                col[j] = grid[j * n + c];
            }
            self.forward.process(&mut col);
            for j in 0..n {
                grid[j * n + c] = col[j];
            }
        }
        for v in grid.iter_mut() {
            *v = Complex::new(v.norm_sqr(), 0.0);
        }
        for row in grid.chunks_exact_mut(n) {
            self.inverse.process(row);
        }
        for c in 0..n {
            for j in 0..n {
                col[j] = grid[j * n + c];
            }
            self.inverse.process(&mut col);
            for j in 0..n {
                grid[j * n + c] = col[j];
            }
        }
        let scale = 1.0 / (n * n) as f64;
        let w = 2 * s - 1;
        DMatrix::from_fn(w, w, |a, b| {
            let alpha = a as isize - (s as isize - 1);
            let beta = b as isize - (s as isize - 1);
            let ia = ((alpha + n as isize) % n as isize) as usize;
            let ib = ((beta + n as isize) % n as isize) as usize;
            grid[ia * n + ib].re * scale
        })
    }
}

/// Above this order the FFT path wins over the O(S⁴) direct sums.
const FFT_CUTOFF: usize = 28;

/// (p, q) table of tr(E_p R E_q R) from the correlation table of R.
fn htoep_from_corr(corr: &DMatrix<f64>, s: usize) -> DMatrix<f64> {
    let c = |alpha: isize, beta: isize| -> f64 {
        corr[(
            (alpha + s as isize - 1) as usize,
            (beta + s as isize - 1) as usize,
        )]
    };
    DMatrix::from_fn(s, s, |p, q| {
        let (p, q) = (p as isize, q as isize);
        match (p == 0, q == 0) {
            (true, true) => c(0, 0),
            (true, false) => 2.0 * c(0, q),
            (false, true) => 2.0 * c(p, 0),
            (false, false) => 2.0 * (c(p, q) + c(p, -q)),
        }
    })
}

pub struct StructuredSdpKkt {
    n: usize,
    eq: DMatrix<f64>,
    nonneg: Vec<usize>,
    blocks: Vec<BlockMap>,
    ffts: Vec<Option<CorrFft>>,
    chol_h: Option<Cholesky<f64, Dyn>>,
    chol_schur: Option<Cholesky<f64, Dyn>>,
}

impl StructuredSdpKkt {
    fn new(cp: &ConicProgram) -> Self {
        let blocks: Vec<BlockMap> = cp
            .psd_blocks
            .iter()
            .map(|b| match b {
                PsdBlock::Toeplitz { lags } => {
                    let mut triples = Vec::new();
                    for (lag, e) in lags.iter().enumerate() {
                        for &(var, w) in &e.terms {
                            triples.push((var, lag, w));
                        }
                    }
                    BlockMap::Toeplitz(ToeplitzMap {
                        order: lags.len(),
                        triples,
                    })
                }
                PsdBlock::Dense { constant, terms } => BlockMap::Dense(DenseMap {
                    constant: constant.clone(),
                    terms: terms.clone(),
                }),
            })
            .collect();
        let ffts = blocks
            .iter()
            .map(|b| {
                if matches!(b, BlockMap::Toeplitz(_)) && b.order() >= FFT_CUTOFF {
                    Some(CorrFft::new(b.order()))
                } else {
                    None
                }
            })
            .collect();
        StructuredSdpKkt {
            n: cp.num_vars(),
            eq: cp.eq_mat.clone(),
            nonneg: cp.nonneg.clone(),
            blocks,
            ffts,
            chol_h: None,
            chol_schur: None,
        }
    }
}

impl KktBackend for StructuredSdpKkt {
    fn dims(&self) -> (usize, usize) {
        (self.n, self.eq.nrows())
    }

    fn factor(&mut self, _cone: &Cone, sc: &Scaling) -> bool {
        let n = self.n;
        let mut h = DMatrix::zeros(n, n);
        for (i, &var) in self.nonneg.iter().enumerate() {
            let w = sc.lin_w[i];
            h[(var, var)] += 1.0 / (w * w);
        }
        for (bi, block) in self.blocks.iter().enumerate() {
            let psd = &sc.psd[bi];
            let tinv = psd.rinv.tr_mul(&psd.rinv);
            match block {
                BlockMap::Toeplitz(t) => {
                    let corr = match &self.ffts[bi] {
                        Some(fft) => fft.corr_table(&tinv),
                        None => corr_table_direct(&tinv),
                    };
                    let htoep = htoep_from_corr(&corr, t.order);
                    for &(va, la, wa) in &t.triples {
                        for &(vb, lb, wb) in &t.triples {
                            h[(va, vb)] += wa * wb * htoep[(la, lb)];
                        }
                    }
                }
                BlockMap::Dense(d) => {
                    // tr(F_i T⁻¹ F_j T⁻¹) pairwise over the terms
                    let mapped: Vec<(usize, DMatrix<f64>)> = d
                        .terms
                        .iter()
                        .map(|(v, f)| (*v, &tinv * f))
                        .collect();
                    for (ia, (va, fa)) in mapped.iter().enumerate() {
                        for (vb, fb) in mapped.iter().skip(ia) {
                            let tr = (fa * fb).trace();
                            h[(*va, *vb)] += tr;
                            if va != vb {
                                h[(*vb, *va)] += tr;
                            }
                        }
                    }
                }
            }
        }
        let chol_h = match chol_with_shift(h) {
            Some(c) => c,
            None => return false,
        };
        if self.eq.nrows() > 0 {
            let hinv_at = chol_h.solve(&self.eq.transpose());
            let schur = &self.eq * hinv_at;
            match chol_with_shift(schur) {
                Some(c) => self.chol_schur = Some(c),
                None => return false,
            }
        }
        self.chol_h = Some(chol_h);
        true
    }

    fn solve3(
        &self,
        cone: &Cone,
        sc: &Scaling,
        u1: &[f64],
        u2: &[f64],
        u3: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (n, p) = self.dims();
        let m = cone.dim();
        let chol_h = self.chol_h.as_ref().expect("factor before solve");
        let mut t = vec![0.0; m];
        apply_wtw_inv(cone, sc, u3, &mut t);
        let mut u_tilde = vec![0.0; n];
        self.mul_gt(&t, &mut u_tilde);
        for i in 0..n {
            u_tilde[i] += u1[i];
        }
        let u_tilde = DVector::from_column_slice(&u_tilde);
        let (dx, dy) = if p > 0 {
            let chol_s = self.chol_schur.as_ref().unwrap();
            let r = chol_h.solve(&u_tilde);
            let mut rhs_y = &self.eq * r;
            for i in 0..p {
                rhs_y[i] -= u2[i];
            }
            let dy = chol_s.solve(&rhs_y);
            let rhs_x = &u_tilde - self.eq.tr_mul(&dy);
            (chol_h.solve(&rhs_x), dy)
        } else {
            (chol_h.solve(&u_tilde), DVector::zeros(0))
        };
        let mut gx = vec![0.0; m];
        self.mul_g(dx.as_slice(), &mut gx);
        for i in 0..m {
            gx[i] -= u3[i];
        }
        let mut dz = vec![0.0; m];
        apply_wtw_inv(cone, sc, &gx, &mut dz);
        (dx.as_slice().to_vec(), dy.as_slice().to_vec(), dz)
    }

    fn mul_a(&self, x: &[f64], out: &mut [f64]) {
        let v = &self.eq * DVector::from_column_slice(x);
        out.copy_from_slice(v.as_slice());
    }

    fn mul_at(&self, y: &[f64], out: &mut [f64]) {
        let v = self.eq.tr_mul(&DVector::from_column_slice(y));
        out.copy_from_slice(v.as_slice());
    }

    fn mul_g(&self, x: &[f64], out: &mut [f64]) {
        // orthant rows −x_i, then −svec of each block's linear part
        let mut off = 0;
        for &var in &self.nonneg {
            out[off] = -x[var];
            off += 1;
        }
        for block in &self.blocks {
            let s = block.order();
            let end = off + svec_len(s);
            let mat = match block {
                BlockMap::Toeplitz(t) => {
                    let mut lags = vec![0.0; s];
                    for &(var, lag, w) in &t.triples {
                        lags[lag] += w * x[var];
                    }
                    toeplitz_from_vector(&lags, s)
                }
                BlockMap::Dense(d) => {
                    let mut m = DMatrix::zeros(s, s);
                    for &(var, ref f) in &d.terms {
                        m += f * x[var];
                    }
                    m
                }
            };
            svec_into(&mat, &mut out[off..end]);
            for v in &mut out[off..end] {
                *v = -*v;
            }
            off = end;
        }
    }

    fn mul_gt(&self, z: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let mut off = 0;
        for &var in &self.nonneg {
            out[var] -= z[off];
            off += 1;
        }
        for block in &self.blocks {
            let s = block.order();
            let end = off + svec_len(s);
            let zm = smat(&z[off..end], s);
            match block {
                BlockMap::Toeplitz(t) => {
                    // lag sums tr(E_lag Z)
                    let mut lag_tr = vec![0.0; s];
                    for i in 0..s {
                        lag_tr[0] += zm[(i, i)];
                    }
                    for lag in 1..s {
                        let mut acc = 0.0;
                        for i in 0..s - lag {
                            acc += zm[(i, i + lag)];
                        }
                        lag_tr[lag] = 2.0 * acc;
                    }
                    for &(var, lag, w) in &t.triples {
                        out[var] -= w * lag_tr[lag];
                    }
                }
                BlockMap::Dense(d) => {
                    for &(var, ref f) in &d.terms {
                        out[var] -= (f * &zm).trace();
                    }
                }
            }
            off = end;
        }
    }
}

fn validate(cp: &ConicProgram) -> Result<(), SdpError> {
    let n = cp.num_vars();
    if cp.eq_mat.ncols() != n {
        return Err(SdpError::Malformed(format!(
            "equality block has {} columns for {n} variables",
            cp.eq_mat.ncols()
        )));
    }
    if cp.eq_mat.nrows() != cp.eq_rhs.len() {
        return Err(SdpError::Malformed(format!(
            "{} equality rows but {} right-hand sides",
            cp.eq_mat.nrows(),
            cp.eq_rhs.len()
        )));
    }
    for (i, b) in cp.psd_blocks.iter().enumerate() {
        if b.order() == 0 {
            return Err(SdpError::Malformed(format!("psd block {i} has order 0")));
        }
        if let PsdBlock::Dense { constant, terms } = b {
            let s = constant.nrows();
            let symmetric = |m: &DMatrix<f64>| {
                m.nrows() == s && m.ncols() == s && (m - m.transpose()).amax() < 1e-12 * (1.0 + m.amax())
            };
            if !symmetric(constant) || terms.iter().any(|(_, f)| !symmetric(f)) {
                return Err(SdpError::Malformed(format!(
                    "psd block {i} is not symmetric of consistent order"
                )));
            }
        }
        if let PsdBlock::Toeplitz { lags } = b {
            if lags.iter().flat_map(|e| &e.terms).any(|&(v, _)| v >= n) {
                return Err(SdpError::Malformed(format!(
                    "psd block {i} references a variable out of range"
                )));
            }
        }
    }
    if cp.nonneg.iter().any(|&v| v >= n) {
        return Err(SdpError::Malformed("nonneg index out of range".into()));
    }
    Ok(())
}

pub fn solve_sdp(cp: &ConicProgram, tol: &ToleranceConfig) -> Result<SdpSolution, SdpError> {
    validate(cp)?;
    let cone = Cone {
        lin: cp.nonneg.len(),
        psd: cp.psd_blocks.iter().map(|b| b.order()).collect(),
    };
    // h carries the constant parts; G is purely linear
    let mut h = vec![0.0; cone.dim()];
    let mut off = cp.nonneg.len();
    for block in &cp.psd_blocks {
        let s = block.order();
        let end = off + svec_len(s);
        let const_mat = match block {
            PsdBlock::Toeplitz { lags } => {
                let c: Vec<f64> = lags.iter().map(|e| e.constant).collect();
                toeplitz_from_vector(&c, s)
            }
            PsdBlock::Dense { constant, .. } => constant.clone(),
        };
        svec_into(&const_mat, &mut h[off..end]);
        off = end;
    }
    let mut kkt = StructuredSdpKkt::new(cp);
    let opts = ConicOptions {
        feas_tol: tol.feas_tol,
        gap_tol: tol.gap_tol,
        max_iter: tol.max_iter,
        ..Default::default()
    };
    let sol = solve_hsd(&cp.objective, &cp.eq_rhs, &h, &cone, &mut kkt, &opts);
    let status = match sol.status {
        ConicStatus::Optimal => SdpStatus::Optimal,
        ConicStatus::PrimalInfeasible => SdpStatus::Infeasible,
        ConicStatus::DualInfeasible => SdpStatus::Unbounded,
        ConicStatus::IterationLimit => SdpStatus::IterLimit,
        ConicStatus::NumericalFailure => {
            return Err(SdpError::NumericalFailure(format!(
                "interior-point iteration broke down after {} iterations",
                sol.iterations
            )))
        }
    };

    let carries_point = matches!(status, SdpStatus::Optimal | SdpStatus::IterLimit);
    let min_eigs: Vec<f64> = if carries_point {
        cp.psd_blocks
            .iter()
            .map(|b| {
                let eig = nalgebra::SymmetricEigen::new(b.eval(&sol.x));
                eig.eigenvalues.min()
            })
            .collect()
    } else {
        Vec::new()
    };
    let equality_residual = if carries_point && !cp.eq_rhs.is_empty() {
        let ax = &cp.eq_mat * DVector::from_column_slice(&sol.x);
        (0..cp.eq_rhs.len())
            .map(|i| (ax[i] - cp.eq_rhs[i]).abs())
            .fold(0.0, f64::max)
    } else {
        0.0
    };
    if status == SdpStatus::Optimal {
        // the solution contract promises eigenvalue slack within 10·psd_tol
        if let Some(&worst) = min_eigs
            .iter()
            .filter(|&&e| e < -10.0 * tol.psd_tol)
            .min_by(|a, b| a.partial_cmp(b).unwrap())
        {
            return Err(SdpError::NumericalFailure(format!(
                "optimal point fails the PSD re-check: min eigenvalue {worst:.3e}"
            )));
        }
    }
    Ok(SdpSolution {
        status,
        objective_value: if carries_point {
            sol.primal_objective
        } else {
            f64::NAN
        },
        dual_objective: if carries_point {
            sol.dual_objective
        } else {
            f64::NAN
        },
        dual_residual: sol.dual_residual,
        min_eigenvalue_per_block: min_eigs,
        equality_residual,
        duality_gap: sol.gap,
        iterations: sol.iterations,
        x: sol.x,
    })
}
