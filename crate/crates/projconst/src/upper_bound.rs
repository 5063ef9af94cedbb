//! Upper bounds on projection constants via discrete dual measures: restrict
//! each dual functional to Dirac combinations on a fixed support, bound the
//! resulting Lebesgue function on a Chebyshev grid, and compensate the
//! grid-to-interval gap with an oversampling factor.
//!
//! The resulting linear programs have K copies of every weight row plus an
//! L x K matrix of absolute-value slacks, so instead of handing the solver a
//! dense system we eliminate the slack block analytically (it is diagonal
//! plus one rank-one coupling per check point) and factor only a Schur
//! complement over the measure weights.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

use crate::chebyshev::{cheb_zeros, oversampling_factor, positive_cheb_zeros};
use crate::conic::cone::{Cone, Scaling};
use crate::conic::hsd::{solve_hsd, ConicOptions, ConicStatus, KktBackend};
use crate::conic::kkt::chol_with_shift;
use crate::lp_solver::LinearProgram;
use crate::space::{parity_split, shift_basis, ParitySplit, PolySpace, ShiftedBasis};
use crate::{BoundResult, BoundSide, DiracWeights, SolveDiagnostics, ToleranceConfig};

/// Relative weight below which an atom is hidden from measure summaries.
pub const DEFAULT_ATOM_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum UpperError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("solver failed: {0}")]
    Solver(String),
}

/// Parameters of an upper-bound program.
///
/// `k` counts Dirac support points (in the rescaled variable when the
/// symmetric path runs), `l` sup-norm check points. Explicit
/// `support_points` override the default equispaced grid; `upper_bound`
/// then always runs the general program, because custom grids carry no
/// parity structure.
#[derive(Debug, Clone)]
pub struct UpperConfig {
    pub k: usize,
    pub l: usize,
    pub symmetric: bool,
    pub support_points: Option<Vec<f64>>,
    /// When set, adds a seeded random perturbation of size
    /// [`TIE_BREAK_EPS`] to the weight-variable costs. The optimal weight
    /// face of the program is wide once the support is dense, and the
    /// interior-point solver returns a point near its center; the
    /// perturbation makes the optimum unique and extreme instead, which is
    /// the structure the shape diagnostics probe. The certified value
    /// (recomputed from the weights) stays valid, merely up to
    /// `TIE_BREAK_EPS` looser.
    pub tie_break_seed: Option<u64>,
}

impl UpperConfig {
    pub fn new(k: usize, l: usize) -> Self {
        UpperConfig {
            k,
            l,
            symmetric: true,
            support_points: None,
            tie_break_seed: None,
        }
    }
}

/// Relative size of the tie-break cost perturbation.
pub const TIE_BREAK_EPS: f64 = 1e-6;

fn perturb_weight_costs(costs: &mut [f64], count: usize, seed: u64) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for c in costs.iter_mut().take(count) {
        *c += TIE_BREAK_EPS * rng.gen_range(-1.0..1.0);
    }
}

/// Atom lists recovered from a solved weight matrix, one per basis
/// functional, with the full matrix retained for plotting or re-filtering.
#[derive(Debug, Clone)]
pub struct MeasureApprox {
    /// Per functional: (location, weight) pairs above the threshold,
    /// in support order.
    pub atoms: Vec<Vec<(f64, f64)>>,
    pub weights: DMatrix<f64>,
    pub support: Vec<f64>,
    pub atom_threshold: f64,
    /// max |A V - I| over the duality constraints, against the space the
    /// weights were solved for.
    pub duality_residual: f64,
}

/// One weight group of the program: `v` collocates the duality basis on the
/// support grid, `w` the sup-norm basis on the check grid. The general
/// program has one channel; the symmetric program one per parity class,
/// sharing slack variables.
struct Channel {
    v: DMatrix<f64>,
    w: DMatrix<f64>,
}

fn equispaced(k: usize, lo: f64, hi: f64) -> Vec<f64> {
    if k == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..k)
        .map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64)
        .collect()
}

fn support_grid(cfg: &UpperConfig) -> Result<Vec<f64>, UpperError> {
    let grid = match &cfg.support_points {
        Some(pts) => {
            if pts.len() != cfg.k {
                return Err(UpperError::InvalidGrid(format!(
                    "{} support points given but K = {}",
                    pts.len(),
                    cfg.k
                )));
            }
            pts.clone()
        }
        None => equispaced(cfg.k, -1.0, 1.0),
    };
    if grid.is_empty() {
        return Err(UpperError::InvalidGrid("empty support".into()));
    }
    if grid.iter().any(|v| !v.is_finite() || v.abs() > 1.0) {
        return Err(UpperError::InvalidGrid(
            "support points must lie in [-1, 1]".into(),
        ));
    }
    let mut sorted = grid.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(UpperError::InvalidGrid(
            "support points must be distinct".into(),
        ));
    }
    Ok(grid)
}

fn rho_or_grid_error(degree: usize, points: usize) -> Result<f64, UpperError> {
    oversampling_factor(degree, points).map_err(|e| UpperError::InvalidGrid(e.to_string()))
}

fn conic_opts(tol: &ToleranceConfig) -> ConicOptions {
    ConicOptions {
        feas_tol: tol.feas_tol,
        gap_tol: tol.gap_tol,
        max_iter: tol.max_iter,
        ..ConicOptions::default()
    }
}

fn general_channels(space: &PolySpace, grid: &[f64], l: usize) -> Vec<Channel> {
    vec![Channel {
        v: space.collocate(grid),
        w: space.collocate(&cheb_zeros(l)),
    }]
}

fn symmetric_channels(
    split: &ParitySplit,
    shifted_even: &ShiftedBasis,
    shifted_odd: &ShiftedBasis,
    grid: &[f64],
    l: usize,
) -> Vec<Channel> {
    let check = positive_cheb_zeros(l);
    let mut channels = Vec::new();
    if split.even_dim() > 0 {
        channels.push(Channel {
            v: shifted_even.collocate(grid),
            w: split.even.collocate(&check),
        });
    }
    if split.odd_dim() > 0 {
        channels.push(Channel {
            v: shifted_odd.collocate(grid),
            w: split.odd.collocate(&check),
        });
    }
    channels
}

/// Variable layout shared by the dense assembly and the structured backend:
/// weights first (point-major, channels stacked inside each point), then the
/// L x K slack block (check-point-major), then the bound variable.
fn assemble(channels: &[Channel], k: usize, l: usize) -> LinearProgram {
    let nch = channels.len();
    let dims: Vec<usize> = channels.iter().map(|ch| ch.v.ncols()).collect();
    let ma: usize = dims.iter().sum();
    let offs: Vec<usize> = dims
        .iter()
        .scan(0, |acc, &d| {
            let o = *acc;
            *acc += d;
            Some(o)
        })
        .collect();
    let n = ma * k + l * k + 1;
    let p: usize = dims.iter().map(|d| d * d).sum();
    let m_rows = 2 * nch * l * k + l;

    let mut objective = vec![0.0; n];
    objective[n - 1] = 1.0;

    let mut eq_mat = DMatrix::zeros(p, n);
    let mut eq_rhs = vec![0.0; p];
    let mut row = 0;
    for (c, ch) in channels.iter().enumerate() {
        let mc = dims[c];
        for m in 0..mc {
            for mp in 0..mc {
                for kk in 0..k {
                    eq_mat[(row, kk * ma + offs[c] + m)] = ch.v[(kk, mp)];
                }
                eq_rhs[row] = if m == mp { 1.0 } else { 0.0 };
                row += 1;
            }
        }
    }

    let mut ineq_mat = DMatrix::zeros(m_rows, n);
    let ineq_rhs = vec![0.0; m_rows];
    for (c, ch) in channels.iter().enumerate() {
        let mc = dims[c];
        for sign in 0..2 {
            let base = (2 * c + sign) * l * k;
            let sgn = if sign == 0 { 1.0 } else { -1.0 };
            for li in 0..l {
                for kk in 0..k {
                    let r = base + li * k + kk;
                    for m in 0..mc {
                        ineq_mat[(r, kk * ma + offs[c] + m)] = sgn * ch.w[(li, m)];
                    }
                    ineq_mat[(r, ma * k + li * k + kk)] = -1.0;
                }
            }
        }
    }
    for li in 0..l {
        let r = 2 * nch * l * k + li;
        for kk in 0..k {
            ineq_mat[(r, ma * k + li * k + kk)] = 1.0;
        }
        ineq_mat[(r, n - 1)] = -1.0;
    }

    let mut lp = LinearProgram::new(objective);
    lp.eq_mat = eq_mat;
    lp.eq_rhs = eq_rhs;
    lp.ineq_mat = ineq_mat;
    lp.ineq_rhs = ineq_rhs;
    lp
}

/// Builds the plain upper-bound program: weights A with A V = I, slacks B
/// with -B <= W A <= B column-wise, and B 1 <= c 1.
pub fn assemble_upper_general(
    space: &PolySpace,
    cfg: &UpperConfig,
) -> Result<LinearProgram, UpperError> {
    let grid = support_grid(cfg)?;
    rho_or_grid_error(space.degree(), cfg.l)?;
    if cfg.k < space.dim() {
        return Err(UpperError::InvalidGrid(format!(
            "K = {} cannot interpolate a {}-dimensional space",
            cfg.k,
            space.dim()
        )));
    }
    let mut lp = assemble(&general_channels(space, &grid, cfg.l), cfg.k, cfg.l);
    if let Some(seed) = cfg.tie_break_seed {
        perturb_weight_costs(&mut lp.objective, space.dim() * cfg.k, seed);
    }
    Ok(lp)
}

/// Builds the parity-exploiting variant: separate even/odd weight matrices
/// collocated against the half-interval rescaled basis, sharing one slack
/// block over the positive Chebyshev check points.
pub fn assemble_upper_symmetric(
    split: &ParitySplit,
    shifted_even: &ShiftedBasis,
    shifted_odd: &ShiftedBasis,
    cfg: &UpperConfig,
) -> Result<LinearProgram, UpperError> {
    let grid = support_grid(cfg)?;
    let degree = split.even.degree().max(split.odd.degree());
    rho_or_grid_error(degree, 2 * cfg.l)?;
    if cfg.k < split.even_dim().max(split.odd_dim()) {
        return Err(UpperError::InvalidGrid(format!(
            "K = {} cannot interpolate parity parts of dimensions {} and {}",
            cfg.k,
            split.even_dim(),
            split.odd_dim()
        )));
    }
    let mut lp = assemble(
        &symmetric_channels(split, shifted_even, shifted_odd, &grid, cfg.l),
        cfg.k,
        cfg.l,
    );
    if let Some(seed) = cfg.tie_break_seed {
        let ma = split.even_dim() + split.odd_dim();
        perturb_weight_costs(&mut lp.objective, ma * cfg.k, seed);
    }
    Ok(lp)
}

// ---------------------------------------------------------------------------
// structured KKT backend

/// Backend for the upper-bound LP that never materializes the slack block.
///
/// With scaling weights delta on the inequality rows, the primal Hessian
/// H = G' diag(delta) G couples the slack variables only through a diagonal
/// plus a rank-one term per check point (from the shared bound row), so the
/// slack block is inverted by Sherman-Morrison and the solver factors a
/// dense Schur complement over the weight variables and the bound only.
struct UpperKkt {
    k: usize,
    l: usize,
    channels: Vec<Channel>,
    dims: Vec<usize>,
    offs: Vec<usize>,
    ma: usize,
    n: usize,
    p: usize,
    m_rows: usize,
    // factorization state
    dsum: Vec<DMatrix<f64>>,
    dprod: Vec<DMatrix<f64>>,
    t: Vec<DMatrix<f64>>,
    d: DMatrix<f64>,
    sig: DVector<f64>,
    sigt: DVector<f64>,
    delta: Vec<f64>,
    chol_s: Option<Cholesky<f64, Dyn>>,
    chol_eq: Option<Cholesky<f64, Dyn>>,
    e_mat: DMatrix<f64>,
}

impl UpperKkt {
    fn new(channels: Vec<Channel>, k: usize, l: usize) -> Self {
        let dims: Vec<usize> = channels.iter().map(|ch| ch.v.ncols()).collect();
        let ma: usize = dims.iter().sum();
        let offs: Vec<usize> = dims
            .iter()
            .scan(0, |acc, &d| {
                let o = *acc;
                *acc += d;
                Some(o)
            })
            .collect();
        let n = ma * k + l * k + 1;
        let p = dims.iter().map(|d| d * d).sum();
        let m_rows = 2 * channels.len() * l * k + l;
        let dsum = dims.iter().map(|_| DMatrix::zeros(l, k)).collect();
        let dprod = dims.iter().map(|_| DMatrix::zeros(l, k)).collect();
        let t = dims.iter().map(|_| DMatrix::zeros(l, k)).collect();
        UpperKkt {
            k,
            l,
            channels,
            dims,
            offs,
            ma,
            n,
            p,
            m_rows,
            dsum,
            dprod,
            t,
            d: DMatrix::zeros(l, k),
            sig: DVector::zeros(l),
            sigt: DVector::zeros(l),
            delta: vec![0.0; m_rows],
            chol_s: None,
            chol_eq: None,
            e_mat: DMatrix::zeros(0, 0),
        }
    }

    fn weight_matrix(&self, x: &[f64], c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.dims[c], self.k, |m, kk| {
            x[kk * self.ma + self.offs[c] + m]
        })
    }

    fn slack_matrix(&self, x: &[f64]) -> DMatrix<f64> {
        let base = self.ma * self.k;
        DMatrix::from_fn(self.l, self.k, |li, kk| x[base + li * self.k + kk])
    }

    /// Applies the inverse of the slack-slack block of H in place.
    fn slack_solve(&self, r: &mut DMatrix<f64>) {
        for li in 0..self.l {
            let mut inner = 0.0;
            for kk in 0..self.k {
                inner += r[(li, kk)] / self.d[(li, kk)];
            }
            let corr = self.sigt[li] * inner;
            for kk in 0..self.k {
                r[(li, kk)] = (r[(li, kk)] - corr) / self.d[(li, kk)];
            }
        }
    }

    /// Full solve against H = G' diag(delta) G by eliminating the slack
    /// block and back-substituting.
    fn h_solve(&self, r: &[f64]) -> Vec<f64> {
        let (mak, n) = (self.ma * self.k, self.n);
        let chol_s = self.chol_s.as_ref().expect("factored");
        let mut rb = DMatrix::from_fn(self.l, self.k, |li, kk| r[mak + li * self.k + kk]);
        self.slack_solve(&mut rb);

        // reduced right-hand side over (weights, bound)
        let mut red = DVector::zeros(mak + 1);
        for i in 0..mak {
            red[i] = r[i];
        }
        for (c, ch) in self.channels.iter().enumerate() {
            let ty = self.t[c].component_mul(&rb);
            let contrib = ch.w.tr_mul(&ty); // Mc x K
            for kk in 0..self.k {
                for m in 0..self.dims[c] {
                    red[kk * self.ma + self.offs[c] + m] -= contrib[(m, kk)];
                }
            }
        }
        let mut rc = r[n - 1];
        for li in 0..self.l {
            let mut row = 0.0;
            for kk in 0..self.k {
                row += rb[(li, kk)];
            }
            rc += self.sig[li] * row;
        }
        red[mak] = rc;

        let xred = chol_s.solve(&red);

        // slack part: H_bb^{-1} (r_b - H_ba x_a - H_bc x_c)
        let mut rem = DMatrix::from_fn(self.l, self.k, |li, kk| r[mak + li * self.k + kk]);
        let xc = xred[mak];
        for (c, ch) in self.channels.iter().enumerate() {
            let xa = DMatrix::from_fn(self.dims[c], self.k, |m, kk| {
                xred[kk * self.ma + self.offs[c] + m]
            });
            let wx = &ch.w * &xa; // L x K
            rem -= self.t[c].component_mul(&wx);
        }
        for li in 0..self.l {
            for kk in 0..self.k {
                rem[(li, kk)] += self.sig[li] * xc;
            }
        }
        self.slack_solve(&mut rem);

        let mut out = vec![0.0; n];
        out[..mak].copy_from_slice(xred.as_slice().split_last().unwrap().1);
        for li in 0..self.l {
            for kk in 0..self.k {
                out[mak + li * self.k + kk] = rem[(li, kk)];
            }
        }
        out[n - 1] = xc;
        out
    }
}

impl KktBackend for UpperKkt {
    fn dims(&self) -> (usize, usize) {
        (self.n, self.p)
    }

    fn factor(&mut self, cone: &Cone, sc: &Scaling) -> bool {
        debug_assert_eq!(cone.lin, self.m_rows);
        debug_assert!(cone.psd.is_empty());
        let (k, l) = (self.k, self.l);
        for (i, w) in sc.lin_w.iter().enumerate() {
            self.delta[i] = 1.0 / (w * w);
        }
        self.d.fill(0.0);
        for c in 0..self.channels.len() {
            let base_p = (2 * c) * l * k;
            let base_m = (2 * c + 1) * l * k;
            for li in 0..l {
                for kk in 0..k {
                    let dp = self.delta[base_p + li * k + kk];
                    let dm = self.delta[base_m + li * k + kk];
                    self.dsum[c][(li, kk)] = dp + dm;
                    self.dprod[c][(li, kk)] = dp * dm;
                    self.d[(li, kk)] += dp + dm;
                    self.t[c][(li, kk)] = dm - dp;
                }
            }
        }
        let sbase = 2 * self.channels.len() * l * k;
        for li in 0..l {
            self.sig[li] = self.delta[sbase + li];
            let s1: f64 = (0..k).map(|kk| 1.0 / self.d[(li, kk)]).sum();
            self.sigt[li] = self.sig[li] / (1.0 + self.sig[li] * s1);
        }

        let mak = self.ma * k;
        let mut s = DMatrix::zeros(mak + 1, mak + 1);
        let mut coef = vec![0.0; l];
        for kk in 0..k {
            for c1 in 0..self.channels.len() {
                let mc1 = self.dims[c1];
                for c2 in c1..self.channels.len() {
                    let mc2 = self.dims[c2];
                    for li in 0..l {
                        let dd = self.d[(li, kk)];
                        coef[li] = if c1 == c2 {
                            // dsum - t^2/d rewritten without cancellation:
                            // t^2 = dsum^2 - 4 delta+ delta-
                            let others: f64 = (0..self.channels.len())
                                .filter(|&c| c != c1)
                                .map(|c| self.dsum[c][(li, kk)])
                                .sum();
                            let ds = self.dsum[c1][(li, kk)];
                            (ds * others + 4.0 * self.dprod[c1][(li, kk)]) / dd
                        } else {
                            -self.t[c1][(li, kk)] * self.t[c2][(li, kk)] / dd
                        };
                    }
                    let mut scaled = self.channels[c1].w.clone();
                    for li in 0..l {
                        for m in 0..mc1 {
                            scaled[(li, m)] *= coef[li];
                        }
                    }
                    let block = scaled.tr_mul(&self.channels[c2].w);
                    let (r1, r2) = (kk * self.ma + self.offs[c1], kk * self.ma + self.offs[c2]);
                    for i in 0..mc1 {
                        for j in 0..mc2 {
                            s[(r1 + i, r2 + j)] = block[(i, j)];
                            if c1 != c2 {
                                s[(r2 + j, r1 + i)] = block[(i, j)];
                            }
                        }
                    }
                }
            }
        }

        // rank-one couplings from the shared bound rows
        let sq: Vec<f64> = (0..l).map(|li| self.sigt[li].sqrt()).collect();
        let mut ut = DMatrix::zeros(l, mak);
        for (c, ch) in self.channels.iter().enumerate() {
            for kk in 0..k {
                for m in 0..self.dims[c] {
                    let col = kk * self.ma + self.offs[c] + m;
                    for li in 0..l {
                        ut[(li, col)] =
                            sq[li] * self.t[c][(li, kk)] / self.d[(li, kk)] * ch.w[(li, m)];
                    }
                }
            }
        }
        s.view_mut((0, 0), (mak, mak)).gemm_tr(1.0, &ut, &ut, 1.0);
        let sqv = DVector::from_column_slice(&sq);
        let sac = ut.tr_mul(&sqv);
        for i in 0..mak {
            s[(i, mak)] = sac[i];
            s[(mak, i)] = sac[i];
        }
        s[(mak, mak)] = self.sigt.sum();

        let chol_s = match chol_with_shift(s) {
            Some(c) => c,
            None => return false,
        };

        // equality Schur complement over the duality rows
        let mut e = DMatrix::zeros(mak + 1, self.p);
        let mut col = 0;
        for (c, ch) in self.channels.iter().enumerate() {
            let mc = self.dims[c];
            for m in 0..mc {
                for mp in 0..mc {
                    for kk in 0..k {
                        e[(kk * self.ma + self.offs[c] + m, col)] = ch.v[(kk, mp)];
                    }
                    col += 1;
                }
            }
        }
        let hinv_e = chol_s.solve(&e);
        let s_eq = e.tr_mul(&hinv_e);
        let chol_eq = match chol_with_shift(s_eq) {
            Some(c) => c,
            None => return false,
        };
        self.chol_s = Some(chol_s);
        self.chol_eq = Some(chol_eq);
        self.e_mat = e;
        true
    }

    fn solve3(
        &self,
        _cone: &Cone,
        _sc: &Scaling,
        u1: &[f64],
        u2: &[f64],
        u3: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let chol_eq = self.chol_eq.as_ref().expect("factored");
        let scaled: Vec<f64> = u3.iter().zip(&self.delta).map(|(u, d)| u * d).collect();
        let mut utld = vec![0.0; self.n];
        self.mul_gt(&scaled, &mut utld);
        for (o, u) in utld.iter_mut().zip(u1) {
            *o += u;
        }
        let w = self.h_solve(&utld);

        let mak = self.ma * self.k;
        let wred = DVector::from_fn(mak + 1, |i, _| if i < mak { w[i] } else { w[self.n - 1] });
        let mut rhs = self.e_mat.tr_mul(&wred);
        for (r, u) in rhs.iter_mut().zip(u2) {
            *r -= u;
        }
        let dy = chol_eq.solve(&rhs);

        let mut atd = vec![0.0; self.n];
        self.mul_at(dy.as_slice(), &mut atd);
        let r2: Vec<f64> = utld.iter().zip(&atd).map(|(u, a)| u - a).collect();
        let dx = self.h_solve(&r2);

        let mut g = vec![0.0; self.m_rows];
        self.mul_g(&dx, &mut g);
        let dz: Vec<f64> = g
            .iter()
            .zip(u3)
            .zip(&self.delta)
            .map(|((gi, ui), di)| di * (gi - ui))
            .collect();
        (dx, dy.as_slice().to_vec(), dz)
    }

    fn mul_a(&self, x: &[f64], out: &mut [f64]) {
        let mut row = 0;
        for (c, ch) in self.channels.iter().enumerate() {
            let xa = self.weight_matrix(x, c);
            let prod = &xa * &ch.v; // Mc x Mc
            for m in 0..self.dims[c] {
                for mp in 0..self.dims[c] {
                    out[row] = prod[(m, mp)];
                    row += 1;
                }
            }
        }
    }

    fn mul_at(&self, y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let mut row = 0;
        for (c, ch) in self.channels.iter().enumerate() {
            let mc = self.dims[c];
            let ymat = DMatrix::from_fn(mc, mc, |m, mp| y[row + m * mc + mp]);
            row += mc * mc;
            let prod = &ymat * ch.v.transpose(); // Mc x K
            for kk in 0..self.k {
                for m in 0..mc {
                    out[kk * self.ma + self.offs[c] + m] += prod[(m, kk)];
                }
            }
        }
    }

    fn mul_g(&self, x: &[f64], out: &mut [f64]) {
        let (k, l) = (self.k, self.l);
        let b = self.slack_matrix(x);
        let c_var = x[self.n - 1];
        for (c, ch) in self.channels.iter().enumerate() {
            let xa = self.weight_matrix(x, c);
            let wx = &ch.w * &xa; // L x K
            for sign in 0..2 {
                let base = (2 * c + sign) * l * k;
                let sgn = if sign == 0 { 1.0 } else { -1.0 };
                for li in 0..l {
                    for kk in 0..k {
                        out[base + li * k + kk] = sgn * wx[(li, kk)] - b[(li, kk)];
                    }
                }
            }
        }
        let sbase = 2 * self.channels.len() * l * k;
        for li in 0..l {
            let mut row = 0.0;
            for kk in 0..k {
                row += b[(li, kk)];
            }
            out[sbase + li] = row - c_var;
        }
    }

    fn mul_gt(&self, z: &[f64], out: &mut [f64]) {
        let (k, l) = (self.k, self.l);
        out.fill(0.0);
        let sbase = 2 * self.channels.len() * l * k;
        let mak = self.ma * k;
        for (c, ch) in self.channels.iter().enumerate() {
            let base_p = (2 * c) * l * k;
            let base_m = (2 * c + 1) * l * k;
            let diff = DMatrix::from_fn(l, k, |li, kk| {
                z[base_p + li * k + kk] - z[base_m + li * k + kk]
            });
            let contrib = ch.w.tr_mul(&diff); // Mc x K
            for kk in 0..k {
                for m in 0..self.dims[c] {
                    out[kk * self.ma + self.offs[c] + m] += contrib[(m, kk)];
                }
            }
            for li in 0..l {
                for kk in 0..k {
                    out[mak + li * k + kk] -= z[base_p + li * k + kk] + z[base_m + li * k + kk];
                }
            }
        }
        for li in 0..l {
            for kk in 0..k {
                out[mak + li * k + kk] += z[sbase + li];
            }
            out[self.n - 1] -= z[sbase + li];
        }
    }
}

struct SolveOutcome {
    weight_mats: Vec<DMatrix<f64>>,
    /// Grid optimum recomputed from the weights, not read off the solver.
    cstar: f64,
    diagnostics: SolveDiagnostics,
}

fn solve_structured(
    channels: Vec<Channel>,
    k: usize,
    l: usize,
    tol: &ToleranceConfig,
    tie_break_seed: Option<u64>,
) -> Result<SolveOutcome, UpperError> {
    let p: usize = channels.iter().map(|ch| {
        let m = ch.v.ncols();
        m * m
    }).sum();
    let mut b = vec![0.0; p];
    let mut row = 0;
    for ch in &channels {
        let mc = ch.v.ncols();
        for m in 0..mc {
            for mp in 0..mc {
                b[row] = if m == mp { 1.0 } else { 0.0 };
                row += 1;
            }
        }
    }
    let mut kkt = UpperKkt::new(channels, k, l);
    let mut c = vec![0.0; kkt.n];
    c[kkt.n - 1] = 1.0;
    if let Some(seed) = tie_break_seed {
        perturb_weight_costs(&mut c, kkt.ma * k, seed);
    }
    let h = vec![0.0; kkt.m_rows];
    let cone = Cone {
        lin: kkt.m_rows,
        psd: vec![],
    };
    let sol = solve_hsd(&c, &b, &h, &cone, &mut kkt, &conic_opts(tol));
    match sol.status {
        // an iteration-limited point is still usable if it interpolates;
        // the bound below is recomputed from the weights either way
        ConicStatus::Optimal | ConicStatus::IterationLimit => {}
        ConicStatus::PrimalInfeasible => {
            return Err(UpperError::Solver(
                "program infeasible: the support grid cannot reproduce the basis".into(),
            ))
        }
        ConicStatus::DualInfeasible => {
            return Err(UpperError::Solver("program unbounded".into()))
        }
        ConicStatus::NumericalFailure => {
            return Err(UpperError::Solver("numerical failure in the solver".into()))
        }
    }
    let weight_mats: Vec<DMatrix<f64>> = (0..kkt.channels.len())
        .map(|c| kkt.weight_matrix(&sol.x, c))
        .collect();
    let mut residual = 0.0f64;
    for (c, ch) in kkt.channels.iter().enumerate() {
        let prod = &weight_mats[c] * &ch.v;
        for m in 0..prod.nrows() {
            for mp in 0..prod.ncols() {
                let target = if m == mp { 1.0 } else { 0.0 };
                residual = residual.max((prod[(m, mp)] - target).abs());
            }
        }
    }
    if residual > 100.0 * tol.feas_tol {
        return Err(UpperError::Solver(format!(
            "weights fail to interpolate: residual {:.3e}",
            residual
        )));
    }
    // certify against the weights themselves: the grid bound is the largest
    // check-row sum of shared slacks, i.e. of channel-wise maxima
    let check_rows: Vec<DMatrix<f64>> = kkt
        .channels
        .iter()
        .zip(&weight_mats)
        .map(|(ch, a)| &ch.w * a)
        .collect();
    let mut cstar = 0.0f64;
    for li in 0..l {
        let mut row = 0.0;
        for kk in 0..k {
            let mut worst = 0.0f64;
            for p in &check_rows {
                worst = worst.max(p[(li, kk)].abs());
            }
            row += worst;
        }
        cstar = cstar.max(row);
    }
    Ok(SolveOutcome {
        weight_mats,
        cstar,
        diagnostics: SolveDiagnostics {
            iterations: sol.iterations,
            duality_gap: sol.gap,
            residual,
            min_block_eigenvalue: None,
        },
    })
}

fn certified_value(rho: f64, outcome: &SolveOutcome, tol: &ToleranceConfig) -> f64 {
    let slack = outcome.diagnostics.residual.max(tol.feas_tol);
    rho * outcome.cstar + slack * (1.0 + rho * outcome.cstar.abs())
}

fn general_bound(
    space: &PolySpace,
    cfg: &UpperConfig,
    tol: &ToleranceConfig,
) -> Result<BoundResult, UpperError> {
    let grid = support_grid(cfg)?;
    let rho = rho_or_grid_error(space.degree(), cfg.l)?;
    if cfg.k < space.dim() {
        return Err(UpperError::InvalidGrid(format!(
            "K = {} cannot interpolate a {}-dimensional space",
            cfg.k,
            space.dim()
        )));
    }
    let outcome = solve_structured(general_channels(space, &grid, cfg.l), cfg.k, cfg.l, tol, cfg.tie_break_seed)?;
    Ok(BoundResult {
        side: BoundSide::Upper,
        value: certified_value(rho, &outcome, tol),
        objective: outcome.cstar,
        rho: Some(rho),
        symmetric: false,
        k: Some(cfg.k),
        l: cfg.l,
        s: None,
        diagnostics: outcome.diagnostics,
        weights: Some(DiracWeights {
            weights: outcome.weight_mats.into_iter().next().expect("one channel"),
            support: grid,
        }),
    })
}

/// Maps parity-frame Dirac weights on the rescaled grid back to measures
/// for the user's basis on [-1, 1]: an atom at t splits into a symmetric
/// (even) or antisymmetric (odd) pair at +-(t+1)/2.
fn unfold_symmetric(
    split: &ParitySplit,
    weight_mats: &[DMatrix<f64>],
    grid: &[f64],
) -> DiracWeights {
    let taus: Vec<f64> = grid.iter().map(|v| (v + 1.0) / 2.0).collect();
    let mut support: Vec<f64> = Vec::new();
    for &tau in &taus {
        if tau == 0.0 {
            support.push(0.0);
        } else {
            support.push(tau);
            support.push(-tau);
        }
    }
    support.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let find = |x: f64| -> usize {
        support
            .binary_search_by(|a| a.partial_cmp(&x).unwrap())
            .expect("support location")
    };

    let me = split.even_dim();
    let mo = split.odd_dim();
    let mut parity = DMatrix::zeros(me + mo, support.len());
    let mut next = 0;
    if me > 0 {
        let a = &weight_mats[next];
        next += 1;
        for m in 0..me {
            for (kk, &tau) in taus.iter().enumerate() {
                let w = a[(m, kk)];
                if tau == 0.0 {
                    parity[(m, find(0.0))] += w;
                } else {
                    parity[(m, find(tau))] += 0.5 * w;
                    parity[(m, find(-tau))] += 0.5 * w;
                }
            }
        }
    }
    if mo > 0 {
        let a = &weight_mats[next];
        for m in 0..mo {
            for (kk, &tau) in taus.iter().enumerate() {
                let w = a[(m, kk)];
                if tau == 0.0 {
                    // the antisymmetric pair cancels exactly; the duality
                    // row is zero there as well, so nothing is lost
                    continue;
                }
                parity[(me + m, find(tau))] += 0.5 * w;
                parity[(me + m, find(-tau))] -= 0.5 * w;
            }
        }
    }
    DiracWeights {
        weights: &split.combine * parity,
        support,
    }
}

fn symmetric_bound(
    space: &PolySpace,
    split: &ParitySplit,
    cfg: &UpperConfig,
    tol: &ToleranceConfig,
) -> Result<BoundResult, UpperError> {
    let grid = support_grid(cfg)?;
    let rho = rho_or_grid_error(space.degree(), 2 * cfg.l)?;
    if cfg.k < split.even_dim().max(split.odd_dim()) {
        return Err(UpperError::InvalidGrid(format!(
            "K = {} cannot interpolate parity parts of dimensions {} and {}",
            cfg.k,
            split.even_dim(),
            split.odd_dim()
        )));
    }
    let shifted_even = shift_basis(&split.even);
    let shifted_odd = shift_basis(&split.odd);
    let channels = symmetric_channels(split, &shifted_even, &shifted_odd, &grid, cfg.l);
    let outcome = solve_structured(channels, cfg.k, cfg.l, tol, cfg.tie_break_seed)?;
    let weights = unfold_symmetric(split, &outcome.weight_mats, &grid);
    Ok(BoundResult {
        side: BoundSide::Upper,
        value: certified_value(rho, &outcome, tol),
        objective: outcome.cstar,
        rho: Some(rho),
        symmetric: true,
        k: Some(cfg.k),
        l: cfg.l,
        s: None,
        diagnostics: outcome.diagnostics,
        weights: Some(weights),
    })
}

/// Certified upper bound on the projection constant of `space`.
///
/// Runs the parity-exploiting program when the space is symmetric, the
/// configuration asks for it, and no custom support grid is given;
/// otherwise the general program. The reported value is
/// rho * optimum plus a solver-tolerance margin.
pub fn upper_bound(space: &PolySpace, cfg: &UpperConfig) -> Result<BoundResult, UpperError> {
    upper_bound_with(space, cfg, &ToleranceConfig::lp_default())
}

pub fn upper_bound_with(
    space: &PolySpace,
    cfg: &UpperConfig,
    tol: &ToleranceConfig,
) -> Result<BoundResult, UpperError> {
    if cfg.symmetric && cfg.support_points.is_none() {
        if let Ok(split) = parity_split(space) {
            return symmetric_bound(space, &split, cfg, tol);
        }
    }
    general_bound(space, cfg, tol)
}

/// Summarizes a solved weight matrix as per-functional atom lists, hiding
/// weights below `atom_threshold` times the row maximum, and reports the
/// worst duality-constraint violation of the full matrix.
pub fn extract_measures(
    space: &PolySpace,
    dirac: &DiracWeights,
    atom_threshold: f64,
) -> MeasureApprox {
    let v = space.collocate(&dirac.support);
    let prod = &dirac.weights * &v;
    let mut residual = 0.0f64;
    for m in 0..prod.nrows() {
        for mp in 0..prod.ncols() {
            let target = if m == mp { 1.0 } else { 0.0 };
            residual = residual.max((prod[(m, mp)] - target).abs());
        }
    }
    let atoms = (0..dirac.weights.nrows())
        .map(|m| {
            let row_max = (0..dirac.support.len())
                .map(|kk| dirac.weights[(m, kk)].abs())
                .fold(0.0f64, f64::max);
            (0..dirac.support.len())
                .filter(|&kk| dirac.weights[(m, kk)].abs() > atom_threshold * row_max)
                .map(|kk| (dirac.support[kk], dirac.weights[(m, kk)]))
                .collect()
        })
        .collect();
    MeasureApprox {
        atoms,
        weights: dirac.weights.clone(),
        support: dirac.support.clone(),
        atom_threshold,
        duality_residual: residual,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp_solver::solve_lp;
    use crate::space::{space_monomials, space_pd};
    use approx::assert_abs_diff_eq;

    fn general_cfg(k: usize, l: usize, support: Option<Vec<f64>>) -> UpperConfig {
        UpperConfig {
            k,
            l,
            symmetric: false,
            support_points: support,
            tie_break_seed: None,
        }
    }

    #[test]
    fn constant_space_single_atom_is_exact() {
        let space = space_pd(0);
        let cfg = general_cfg(1, 1, Some(vec![0.0]));
        let r = upper_bound(&space, &cfg).unwrap();
        assert_abs_diff_eq!(r.objective, 1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(r.rho.unwrap(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(r.value, 1.0, epsilon = 1e-6);
        let w = r.weights.unwrap();
        assert_abs_diff_eq!(w.weights[(0, 0)], 1.0, epsilon = 1e-7);
    }

    #[test]
    fn endpoint_interpolation_of_lines_is_optimal() {
        // linear interpolation at the endpoints has Lebesgue function 1
        let space = space_pd(1);
        let cfg = general_cfg(2, 4, Some(vec![-1.0, 1.0]));
        let r = upper_bound(&space, &cfg).unwrap();
        assert_abs_diff_eq!(r.objective, 1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(r.rho.unwrap(), 1.0823922002923940, epsilon = 1e-12);
        assert_abs_diff_eq!(r.value, 1.0823922002923940, epsilon = 1e-6);
    }

    #[test]
    fn three_point_quadratic_support_value() {
        let space = space_pd(2);
        let cfg = general_cfg(3, 8, Some(vec![-1.0, 0.0, 1.0]));
        let r = upper_bound(&space, &cfg).unwrap();
        assert_abs_diff_eq!(r.objective, 1.246911949202147, epsilon = 1e-8);
        assert_abs_diff_eq!(r.value, 1.3496477682677898, epsilon = 1e-6);
    }

    #[test]
    fn structured_solution_matches_dense_lp() {
        let tol = ToleranceConfig::lp_default();
        // general path
        let space = space_pd(3);
        let cfg = general_cfg(7, 5, None);
        let lp = assemble_upper_general(&space, &cfg).unwrap();
        let dense = solve_lp(&lp, &tol).unwrap();
        let structured = upper_bound_with(&space, &cfg, &tol).unwrap();
        assert_abs_diff_eq!(dense.objective_value, structured.objective, epsilon = 1e-7);

        // symmetric path
        for space in [space_pd(2), space_monomials(&[0, 2, 3]).unwrap()] {
            let cfg = UpperConfig::new(6, 4);
            let split = parity_split(&space).unwrap();
            let se = shift_basis(&split.even);
            let so = shift_basis(&split.odd);
            let lp = assemble_upper_symmetric(&split, &se, &so, &cfg).unwrap();
            let dense = solve_lp(&lp, &tol).unwrap();
            let structured = upper_bound_with(&space, &cfg, &tol).unwrap();
            assert!(structured.symmetric);
            assert_abs_diff_eq!(dense.objective_value, structured.objective, epsilon = 1e-7);
        }
    }

    #[test]
    fn symmetric_and_general_agree_on_quadratics() {
        let space = space_pd(2);
        let sym = upper_bound(&space, &UpperConfig::new(11, 8)).unwrap();
        assert!(sym.symmetric);
        let gen = upper_bound(&space, &general_cfg(21, 16, None)).unwrap();
        assert!(!gen.symmetric);
        assert!((sym.value - gen.value).abs() < 2e-3, "{} vs {}", sym.value, gen.value);
    }

    #[test]
    fn unfolded_weights_still_interpolate() {
        let space = space_pd(3);
        let r = upper_bound(&space, &UpperConfig::new(10, 8)).unwrap();
        assert!(r.symmetric);
        assert!(r.diagnostics.residual <= 1e-7);
        let measures = extract_measures(&space, r.weights.as_ref().unwrap(), 1e-6);
        assert!(
            measures.duality_residual <= 1e-7,
            "unfolded residual {}",
            measures.duality_residual
        );
    }

    #[test]
    fn larger_support_does_not_increase_the_optimum() {
        let space = space_pd(2);
        let coarse = upper_bound(&space, &general_cfg(5, 8, None)).unwrap();
        // 9 equispaced points contain the 5 equispaced points
        let fine = upper_bound(&space, &general_cfg(9, 8, None)).unwrap();
        assert!(fine.objective <= coarse.objective + 1e-7);
    }

    #[test]
    fn bad_grids_are_rejected() {
        let space = space_pd(3);
        // check grid too coarse for the degree
        assert!(matches!(
            upper_bound(&space, &general_cfg(8, 3, None)),
            Err(UpperError::InvalidGrid(_))
        ));
        // too few support points
        assert!(matches!(
            upper_bound(&space, &general_cfg(3, 8, None)),
            Err(UpperError::InvalidGrid(_))
        ));
        // duplicate support points
        assert!(matches!(
            upper_bound(&space, &general_cfg(4, 8, Some(vec![-1.0, 0.0, 0.0, 1.0]))),
            Err(UpperError::InvalidGrid(_))
        ));
        // outside the interval
        assert!(matches!(
            upper_bound(&space, &general_cfg(4, 8, Some(vec![-1.5, 0.0, 0.5, 1.0]))),
            Err(UpperError::InvalidGrid(_))
        ));
    }

    #[test]
    fn measure_summary_filters_small_atoms() {
        let space = space_pd(0);
        let dirac = DiracWeights {
            weights: DMatrix::from_row_slice(1, 3, &[1e-9, 1.0, 2e-7]),
            support: vec![-1.0, 0.0, 1.0],
        };
        let m = extract_measures(&space, &dirac, 1e-6);
        assert_eq!(m.atoms[0], vec![(0.0, 1.0)]);
        assert_eq!(m.weights.ncols(), 3); // full matrix retained
        // duality: weights sum to ~1 against the constant, tiny extras shift it
        assert!(m.duality_residual < 1e-6);
    }

    #[test]
    fn single_atom_summary_for_constants() {
        let space = space_pd(0);
        let dirac = DiracWeights {
            weights: DMatrix::from_element(1, 1, 1.0),
            support: vec![0.0],
        };
        let m = extract_measures(&space, &dirac, 1e-6);
        assert_eq!(m.atoms[0], vec![(0.0, 1.0)]);
        assert_abs_diff_eq!(m.duality_residual, 0.0, epsilon = 1e-15);
    }
}
