//! Lower bounds on projection constants by truncated-moment relaxation:
//! replace each dual measure by its first S Chebyshev moments, keep the
//! necessary Toeplitz positive-semidefiniteness of the moment sequences, and
//! dominate the absolute kernel rows at Chebyshev check angles. Every
//! feasible projection induces a feasible moment point, so the relaxed
//! optimum sits below the projection constant at any resolution.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::chebyshev::{cheb_zeros, positive_cheb_zeros};
use crate::sdp_solver::{solve_sdp, AffineExpr, ConicProgram, PsdBlock, SdpStatus};
use crate::space::{parity_split, shift_basis, ParitySplit, PolySpace, ShiftedBasis};
use crate::{BoundResult, BoundSide, SolveDiagnostics, ToleranceConfig};

#[derive(Debug, Error)]
pub enum LowerError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("solver failed: {0}")]
    Solver(String),
}

/// Parameters of a lower-bound program: `s` moments per sequence, `l` check
/// angles. Explicit `grid_angles` (in radians, within [0, pi]) override the
/// default Chebyshev angles; `lower_bound` then runs the general program.
#[derive(Debug, Clone)]
pub struct LowerConfig {
    pub s: usize,
    pub l: usize,
    pub symmetric: bool,
    pub grid_angles: Option<Vec<f64>>,
}

impl LowerConfig {
    pub fn new(s: usize, l: usize) -> Self {
        LowerConfig {
            s,
            l,
            symmetric: true,
            grid_angles: None,
        }
    }
}

fn check_points(cfg: &LowerConfig) -> Result<Vec<f64>, LowerError> {
    let pts = match &cfg.grid_angles {
        Some(angles) => {
            if angles.len() != cfg.l {
                return Err(LowerError::InvalidGrid(format!(
                    "{} angles given but L = {}",
                    angles.len(),
                    cfg.l
                )));
            }
            if angles
                .iter()
                .any(|a| !a.is_finite() || *a < 0.0 || *a > std::f64::consts::PI)
            {
                return Err(LowerError::InvalidGrid(
                    "check angles must lie in [0, pi]".into(),
                ));
            }
            angles.iter().map(|a| a.cos()).collect::<Vec<f64>>()
        }
        None => cheb_zeros(cfg.l),
    };
    if pts.is_empty() {
        return Err(LowerError::InvalidGrid("empty check grid".into()));
    }
    let mut sorted = pts.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(LowerError::InvalidGrid(
            "check angles must be distinct".into(),
        ));
    }
    Ok(pts)
}

/// Moment layout of the general program: stacked positive/negative moment
/// rows for each functional, dominating moment rows per check angle, the
/// bound, and one slack per check row.
struct GenLayout {
    m: usize,
    s: usize,
    l: usize,
}

impl GenLayout {
    fn yp(&self, m: usize, j: usize) -> usize {
        m * self.s + j
    }
    fn ym(&self, m: usize, j: usize) -> usize {
        (self.m + m) * self.s + j
    }
    fn zp(&self, li: usize, j: usize) -> usize {
        2 * self.m * self.s + li * self.s + j
    }
    fn c(&self) -> usize {
        (2 * self.m + self.l) * self.s
    }
    fn slack(&self, li: usize) -> usize {
        self.c() + 1 + li
    }
    fn num_vars(&self) -> usize {
        self.c() + 1 + self.l
    }
}

/// Builds the plain moment relaxation. Variables are signed moment parts
/// Y+/Y- per functional and dominating sequences Z+ per check row (the Z-
/// partner is eliminated through the coupling Z+ - Z- = W (Y+ - Y-)); the
/// bound caps the zeroth dominating moments.
pub fn assemble_lower_general(
    space: &PolySpace,
    cfg: &LowerConfig,
) -> Result<ConicProgram, LowerError> {
    let pts = check_points(cfg)?;
    let u = space.coefficients();
    let rows = u.nrows();
    if cfg.s < rows {
        return Err(LowerError::InvalidGrid(format!(
            "S = {} moments cannot express degree {} interpolation",
            cfg.s,
            rows - 1
        )));
    }
    let m = space.dim();
    let lay = GenLayout {
        m,
        s: cfg.s,
        l: cfg.l,
    };
    let w = space.collocate(&pts); // L x M

    let mut cp = ConicProgram::new(vec![0.0; lay.num_vars()]);
    cp.objective[lay.c()] = 1.0;

    let p = m * m + cfg.l;
    let mut eq = DMatrix::zeros(p, lay.num_vars());
    let mut rhs = vec![0.0; p];
    let mut row = 0;
    for mi in 0..m {
        for mp in 0..m {
            for j in 0..rows {
                eq[(row, lay.yp(mi, j))] = u[(j, mp)];
                eq[(row, lay.ym(mi, j))] = -u[(j, mp)];
            }
            rhs[row] = if mi == mp { 1.0 } else { 0.0 };
            row += 1;
        }
    }
    for li in 0..cfg.l {
        // z+_0 + z-_0 <= c with z- eliminated
        eq[(row, lay.zp(li, 0))] = 2.0;
        for mi in 0..m {
            eq[(row, lay.yp(mi, 0))] = -w[(li, mi)];
            eq[(row, lay.ym(mi, 0))] = w[(li, mi)];
        }
        eq[(row, lay.slack(li))] = 1.0;
        eq[(row, lay.c())] = -1.0;
        row += 1;
    }
    cp.eq_mat = eq;
    cp.eq_rhs = rhs;

    for mi in 0..m {
        cp.psd_blocks.push(PsdBlock::Toeplitz {
            lags: (0..cfg.s).map(|j| AffineExpr::var(lay.yp(mi, j))).collect(),
        });
    }
    for mi in 0..m {
        cp.psd_blocks.push(PsdBlock::Toeplitz {
            lags: (0..cfg.s).map(|j| AffineExpr::var(lay.ym(mi, j))).collect(),
        });
    }
    for li in 0..cfg.l {
        cp.psd_blocks.push(PsdBlock::Toeplitz {
            lags: (0..cfg.s).map(|j| AffineExpr::var(lay.zp(li, j))).collect(),
        });
    }
    for li in 0..cfg.l {
        // Z- = Z+ - W (Y+ - Y-), row by row
        let lags = (0..cfg.s)
            .map(|j| {
                let mut terms = vec![(lay.zp(li, j), 1.0)];
                for mi in 0..m {
                    terms.push((lay.yp(mi, j), -w[(li, mi)]));
                    terms.push((lay.ym(mi, j), w[(li, mi)]));
                }
                AffineExpr {
                    constant: 0.0,
                    terms,
                }
            })
            .collect();
        cp.psd_blocks.push(PsdBlock::Toeplitz { lags });
    }
    cp.nonneg = (0..cfg.l).map(|li| lay.slack(li)).collect();
    Ok(cp)
}

struct SymLayout {
    me: usize,
    mo: usize,
    s: usize,
    l: usize,
}

impl SymLayout {
    fn ye(&self, m: usize, j: usize) -> usize {
        m * self.s + j
    }
    fn yo(&self, m: usize, j: usize) -> usize {
        (self.me + m) * self.s + j
    }
    fn z(&self, li: usize, j: usize) -> usize {
        (self.me + self.mo + li) * self.s + j
    }
    fn c(&self) -> usize {
        (self.me + self.mo + self.l) * self.s
    }
    fn slack(&self, li: usize) -> usize {
        self.c() + 1 + li
    }
    fn num_vars(&self) -> usize {
        self.c() + 1 + self.l
    }
}

/// Parity-exploiting variant: unsigned moment rows per parity class in the
/// half-interval rescaled variable, one dominating sequence per positive
/// check angle, domination imposed as Toep(Z) +- Toep(W Y) psd.
pub fn assemble_lower_symmetric(
    split: &ParitySplit,
    shifted_even: &ShiftedBasis,
    shifted_odd: &ShiftedBasis,
    cfg: &LowerConfig,
) -> Result<ConicProgram, LowerError> {
    if cfg.grid_angles.is_some() {
        return Err(LowerError::InvalidGrid(
            "custom angles are only supported by the general program".into(),
        ));
    }
    if cfg.l == 0 {
        return Err(LowerError::InvalidGrid("empty check grid".into()));
    }
    let rows_needed = shifted_even.coeff.nrows().max(shifted_odd.coeff.nrows());
    if cfg.s < rows_needed {
        return Err(LowerError::InvalidGrid(format!(
            "S = {} moments cannot express degree {} interpolation",
            cfg.s,
            rows_needed - 1
        )));
    }
    let (me, mo) = (split.even_dim(), split.odd_dim());
    let lay = SymLayout {
        me,
        mo,
        s: cfg.s,
        l: cfg.l,
    };
    let pts = positive_cheb_zeros(cfg.l);
    let we = split.even.collocate(&pts); // L x Me
    let wo = split.odd.collocate(&pts); // L x Mo

    let mut cp = ConicProgram::new(vec![0.0; lay.num_vars()]);
    cp.objective[lay.c()] = 1.0;

    let p = me * me + mo * mo + cfg.l;
    let mut eq = DMatrix::zeros(p, lay.num_vars());
    let mut rhs = vec![0.0; p];
    let mut row = 0;
    let mut interp = |idx: &dyn Fn(usize, usize) -> usize, ut: &DMatrix<f64>, dim: usize| {
        for mi in 0..dim {
            for mp in 0..dim {
                for j in 0..ut.nrows() {
                    eq[(row, idx(mi, j))] = ut[(j, mp)];
                }
                rhs[row] = if mi == mp { 1.0 } else { 0.0 };
                row += 1;
            }
        }
    };
    interp(&|m, j| lay.ye(m, j), &shifted_even.coeff, me);
    interp(&|m, j| lay.yo(m, j), &shifted_odd.coeff, mo);
    for li in 0..cfg.l {
        eq[(row, lay.z(li, 0))] = 1.0;
        eq[(row, lay.slack(li))] = 1.0;
        eq[(row, lay.c())] = -1.0;
        row += 1;
    }
    cp.eq_mat = eq;
    cp.eq_rhs = rhs;

    for li in 0..cfg.l {
        for sign in [-1.0, 1.0] {
            if me > 0 {
                let lags = (0..cfg.s)
                    .map(|j| {
                        let mut terms = vec![(lay.z(li, j), 1.0)];
                        for mi in 0..me {
                            terms.push((lay.ye(mi, j), sign * we[(li, mi)]));
                        }
                        AffineExpr {
                            constant: 0.0,
                            terms,
                        }
                    })
                    .collect();
                cp.psd_blocks.push(PsdBlock::Toeplitz { lags });
            }
            if mo > 0 {
                let lags = (0..cfg.s)
                    .map(|j| {
                        let mut terms = vec![(lay.z(li, j), 1.0)];
                        for mi in 0..mo {
                            terms.push((lay.yo(mi, j), sign * wo[(li, mi)]));
                        }
                        AffineExpr {
                            constant: 0.0,
                            terms,
                        }
                    })
                    .collect();
                cp.psd_blocks.push(PsdBlock::Toeplitz { lags });
            }
        }
    }
    cp.nonneg = (0..cfg.l).map(|li| lay.slack(li)).collect();
    Ok(cp)
}

fn run_sdp(
    cp: &ConicProgram,
    objective_var: usize,
    tol: &ToleranceConfig,
) -> Result<(f64, f64, SolveDiagnostics), LowerError> {
    let sol = solve_sdp(cp, tol).map_err(|e| LowerError::Solver(e.to_string()))?;
    match sol.status {
        SdpStatus::Optimal => {}
        // usable while the certifying dual side is accurate enough for the
        // residual-scaled discount below to absorb the error
        SdpStatus::IterLimit => {
            if !(sol.dual_residual <= 1000.0 * tol.feas_tol) {
                return Err(LowerError::Solver(format!(
                    "iteration limit with dual residual {:.3e}",
                    sol.dual_residual
                )));
            }
        }
        SdpStatus::Infeasible => {
            return Err(LowerError::Solver(
                "moment relaxation reported infeasible".into(),
            ))
        }
        SdpStatus::Unbounded => {
            return Err(LowerError::Solver(
                "moment relaxation reported unbounded".into(),
            ))
        }
    }
    let objective = sol.x[objective_var];
    // weak duality: the dual objective sits below every feasible bound, so
    // discount it by the residual scale instead of trusting the primal
    let base = sol.dual_objective.min(objective);
    let slack = (10.0 * tol.gap_tol).max(sol.dual_residual);
    let value = base - slack * (1.0 + base.abs());
    let min_eig = sol
        .min_eigenvalue_per_block
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    Ok((
        value,
        objective,
        SolveDiagnostics {
            iterations: sol.iterations,
            duality_gap: sol.duality_gap,
            residual: sol.equality_residual,
            min_block_eigenvalue: if min_eig.is_finite() {
                Some(min_eig)
            } else {
                None
            },
        },
    ))
}

/// Certified lower bound on the projection constant of `space`.
///
/// Runs the parity-exploiting relaxation when the space is symmetric, the
/// configuration asks for it, and no custom angles are given; otherwise the
/// general relaxation. The reported value discounts the solver's duality
/// certificate by its residual scale.
pub fn lower_bound(space: &PolySpace, cfg: &LowerConfig) -> Result<BoundResult, LowerError> {
    lower_bound_with(space, cfg, &ToleranceConfig::sdp_default())
}

pub fn lower_bound_with(
    space: &PolySpace,
    cfg: &LowerConfig,
    tol: &ToleranceConfig,
) -> Result<BoundResult, LowerError> {
    if cfg.symmetric && cfg.grid_angles.is_none() {
        if let Ok(split) = parity_split(space) {
            let shifted_even = shift_basis(&split.even);
            let shifted_odd = shift_basis(&split.odd);
            let cp = assemble_lower_symmetric(&split, &shifted_even, &shifted_odd, cfg)?;
            let lay = SymLayout {
                me: split.even_dim(),
                mo: split.odd_dim(),
                s: cfg.s,
                l: cfg.l,
            };
            let (value, objective, diagnostics) = run_sdp(&cp, lay.c(), tol)?;
            return Ok(BoundResult {
                side: BoundSide::Lower,
                value,
                objective,
                rho: None,
                symmetric: true,
                k: None,
                l: cfg.l,
                s: Some(cfg.s),
                diagnostics,
                weights: None,
            });
        }
    }
    let cp = assemble_lower_general(space, cfg)?;
    let lay = GenLayout {
        m: space.dim(),
        s: cfg.s,
        l: cfg.l,
    };
    let (value, objective, diagnostics) = run_sdp(&cp, lay.c(), tol)?;
    Ok(BoundResult {
        side: BoundSide::Lower,
        value,
        objective,
        rho: None,
        symmetric: false,
        k: None,
        l: cfg.l,
        s: Some(cfg.s),
        diagnostics,
        weights: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{space_monomials, space_pd};
    use crate::upper_bound::{upper_bound, UpperConfig};
    use approx::assert_abs_diff_eq;

    fn general_cfg(s: usize, l: usize) -> LowerConfig {
        LowerConfig {
            s,
            l,
            symmetric: false,
            grid_angles: None,
        }
    }

    #[test]
    fn flat_space_lower_is_exact() {
        // the zeroth dominating moments must absorb the unit mass of the
        // interpolation row, so the optimum is exactly one
        let space = space_pd(0);
        let r = lower_bound(&space, &general_cfg(2, 1)).unwrap();
        assert_abs_diff_eq!(r.objective, 1.0, epsilon = 1e-6);
        assert!(r.value <= r.objective);
        assert!(r.value >= 1.0 - 1e-5);
    }

    #[test]
    fn endpoint_pair_certifies_lines() {
        // for lines the even channel forces z0 >= 1 + |z1 - y1| with
        // equality attainable, so the optimum is exactly one
        let space = space_pd(1);
        let r = lower_bound(&space, &LowerConfig::new(2, 1)).unwrap();
        assert!(r.symmetric);
        assert_abs_diff_eq!(r.objective, 1.0, epsilon = 1e-7);
        assert!(r.value <= 1.0 + 1e-9);
        assert!(r.value >= 1.0 - 1e-5);
    }

    #[test]
    fn quadratics_approach_the_projection_constant() {
        let space = space_pd(2);
        let r = lower_bound(&space, &LowerConfig::new(12, 24)).unwrap();
        assert!(r.symmetric);
        assert!(
            r.value <= 1.220173064217988 + 1e-9,
            "lower value {} overshoots",
            r.value
        );
        assert!(r.value >= 1.2190, "lower value {} too weak", r.value);
        assert!(r.diagnostics.min_block_eigenvalue.unwrap() >= -1e-6);
    }

    #[test]
    fn moment_order_growth_is_monotone() {
        let space = space_pd(2);
        let mut prev = f64::NEG_INFINITY;
        for s in [4, 6, 10] {
            let r = lower_bound(&space, &LowerConfig::new(s, 16)).unwrap();
            assert!(
                r.objective >= prev - 1e-7,
                "S={} dropped: {} after {}",
                s,
                r.objective,
                prev
            );
            prev = r.objective;
        }
    }

    #[test]
    fn general_and_symmetric_agree_on_quadratics() {
        let space = space_pd(2);
        let sym = lower_bound(&space, &LowerConfig::new(10, 16)).unwrap();
        let gen = lower_bound(&space, &general_cfg(10, 32)).unwrap();
        assert!(!gen.symmetric);
        let lambda = 1.220173064217988;
        assert!(sym.value <= lambda + 1e-9);
        assert!(gen.value <= lambda + 1e-9);
        assert!(
            (sym.value - gen.value).abs() < 5e-3,
            "{} vs {}",
            sym.value,
            gen.value
        );
    }

    #[test]
    fn lower_stays_below_upper() {
        let space = space_monomials(&[0, 2, 3]).unwrap();
        let lo = lower_bound(&space, &LowerConfig::new(8, 12)).unwrap();
        let up = upper_bound(&space, &UpperConfig::new(40, 20)).unwrap();
        assert!(
            lo.value <= up.value,
            "bracket inverted: {} > {}",
            lo.value,
            up.value
        );
        // this span contains a norm-one projection target
        assert!(lo.value <= 1.0 + 1e-6);
        assert!(up.value >= 1.0 - 1e-9);
    }

    #[test]
    fn bad_configs_are_rejected() {
        let space = space_pd(3);
        // too few moments for the degree
        assert!(matches!(
            lower_bound(&space, &LowerConfig::new(2, 8)),
            Err(LowerError::InvalidGrid(_))
        ));
        // empty check grid
        assert!(matches!(
            lower_bound(&space, &LowerConfig::new(8, 0)),
            Err(LowerError::InvalidGrid(_))
        ));
        // wrong angle count
        let cfg = LowerConfig {
            s: 8,
            l: 3,
            symmetric: false,
            grid_angles: Some(vec![0.3, 0.7]),
        };
        assert!(matches!(
            lower_bound(&space, &cfg),
            Err(LowerError::InvalidGrid(_))
        ));
        // out-of-range angle
        let cfg = LowerConfig {
            s: 8,
            l: 2,
            symmetric: false,
            grid_angles: Some(vec![0.3, 4.0]),
        };
        assert!(matches!(
            lower_bound(&space, &cfg),
            Err(LowerError::InvalidGrid(_))
        ));
        // duplicate angles
        let cfg = LowerConfig {
            s: 8,
            l: 2,
            symmetric: false,
            grid_angles: Some(vec![0.5, 0.5]),
        };
        assert!(matches!(
            lower_bound(&space, &cfg),
            Err(LowerError::InvalidGrid(_))
        ));
    }
}
