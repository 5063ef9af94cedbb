//! Primal-dual interior-point driver on the homogeneous self-dual embedding
//!
//!   minimize c'x  subject to  Ax = b,  Gx + s = h,  s in K,
//!
//! where K is a product of an orthant and PSD blocks.  The embedding carries
//! (x, y, z, s, tau, kappa) and certifies optimality, primal infeasibility or
//! dual infeasibility by which of tau, kappa stays bounded away from zero.
//!
//! Each iteration computes a Nesterov-Todd scaling, factors one KKT system
//! through the pluggable backend, and takes a Mehrotra predictor-corrector
//! step.  The backend only has to solve
//!
//!   [ 0   A'  G'     ] [dx]   [u1]
//!   [ A   0   0      ] [dy] = [u2]
//!   [ G   0  -W'W    ] [dz]   [u3]
//!
//! for a given scaling W; everything else (embedding, step sizes, corrector,
//! stopping rules) lives here and is shared by the LP and the SDP front ends.

use super::cone::{
    apply_w, apply_winv_t, apply_wtw, cone_identity, jordan_div_lambda,
    jordan_prod, lambda_sq, max_step_scaled, min_margin, Cone, Scaling,
};

/// Single-factorization interface the driver talks to.  `factor` is called
/// once per iteration with the current scaling, `solve3` as often as needed
/// (three times per iteration plus refinement).
pub trait KktBackend {
    /// Number of primal variables n and equality rows p.
    fn dims(&self) -> (usize, usize);
    fn factor(&mut self, cone: &Cone, sc: &Scaling) -> bool;
    /// Solves the 3x3 system above into (dx, dy, dz).
    fn solve3(
        &self,
        cone: &Cone,
        sc: &Scaling,
        u1: &[f64],
        u2: &[f64],
        u3: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>);
    fn mul_a(&self, x: &[f64], out: &mut [f64]);
    fn mul_at(&self, y: &[f64], out: &mut [f64]);
    fn mul_g(&self, x: &[f64], out: &mut [f64]);
    fn mul_gt(&self, z: &[f64], out: &mut [f64]);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConicStatus {
    Optimal,
    /// Infeasibility certificate (y, z): A'y + G'z = 0, b'y + h'z = -1, z in K*.
    PrimalInfeasible,
    /// Unboundedness certificate (x, s): Ax = 0, Gx + s = 0, c'x = -1, s in K.
    DualInfeasible,
    IterationLimit,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub status: ConicStatus,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub s: Vec<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub gap: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ConicOptions {
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub max_iter: usize,
    /// Fraction of the distance to the cone boundary taken per step.
    pub step_frac: f64,
    /// Rounds of iterative refinement per KKT solve.
    pub refine_rounds: usize,
}

impl Default for ConicOptions {
    fn default() -> Self {
        ConicOptions {
            feas_tol: 1e-9,
            gap_tol: 1e-9,
            max_iter: 100,
            step_frac: 0.99,
            refine_rounds: 2,
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

struct Workspace<'a> {
    cone: &'a Cone,
    kkt: &'a mut dyn KktBackend,
    c: &'a [f64],
    b: &'a [f64],
    h: &'a [f64],
    refine_rounds: usize,
}

impl Workspace<'_> {
    /// solve3 with iterative refinement against the exact operators.
    fn solve_refined(
        &self,
        sc: &Scaling,
        u1: &[f64],
        u2: &[f64],
        u3: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (n, p) = self.kkt.dims();
        let m = self.cone.dim();
        let (mut dx, mut dy, mut dz) = self.kkt.solve3(self.cone, sc, u1, u2, u3);
        for _ in 0..self.refine_rounds {
            let mut r1 = u1.to_vec();
            let mut tmp_n = vec![0.0; n];
            self.kkt.mul_at(&dy, &mut tmp_n);
            axpy(-1.0, &tmp_n, &mut r1);
            self.kkt.mul_gt(&dz, &mut tmp_n);
            axpy(-1.0, &tmp_n, &mut r1);
            let mut r2 = u2.to_vec();
            if p > 0 {
                let mut tmp_p = vec![0.0; p];
                self.kkt.mul_a(&dx, &mut tmp_p);
                axpy(-1.0, &tmp_p, &mut r2);
            }
            let mut r3 = u3.to_vec();
            let mut tmp_m = vec![0.0; m];
            self.kkt.mul_g(&dx, &mut tmp_m);
            axpy(-1.0, &tmp_m, &mut r3);
            apply_wtw(self.cone, sc, &dz, &mut tmp_m);
            axpy(1.0, &tmp_m, &mut r3);
            let res = norm(&r1).max(norm(&r2)).max(norm(&r3));
            let scale = 1.0 + norm(u1).max(norm(u2)).max(norm(u3));
            if res <= 1e-14 * scale {
                break;
            }
            let (ex, ey, ez) = self.kkt.solve3(self.cone, sc, &r1, &r2, &r3);
            axpy(1.0, &ex, &mut dx);
            axpy(1.0, &ey, &mut dy);
            axpy(1.0, &ez, &mut dz);
        }
        (dx, dy, dz)
    }
}

struct Direction {
    dx: Vec<f64>,
    dy: Vec<f64>,
    dz: Vec<f64>,
    ds: Vec<f64>,
    dtau: f64,
    dkappa: f64,
}

/// Snapshot of the iterate with the smallest worst-case residual so far;
/// breakdown and iteration-limit exits fall back to it so late-stage
/// numerical trouble cannot erase an already-good point.
struct BestIterate {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    s: Vec<f64>,
    tau: f64,
    pcost: f64,
    dcost: f64,
    gap: f64,
    pres: f64,
    dres: f64,
}

impl BestIterate {
    fn into_solution(self, iterations: usize) -> ConicSolution {
        let inv_tau = 1.0 / self.tau;
        ConicSolution {
            status: ConicStatus::IterationLimit,
            x: self.x.iter().map(|v| v * inv_tau).collect(),
            y: self.y.iter().map(|v| v * inv_tau).collect(),
            z: self.z.iter().map(|v| v * inv_tau).collect(),
            s: self.s.iter().map(|v| v * inv_tau).collect(),
            primal_objective: self.pcost,
            dual_objective: self.dcost,
            gap: self.gap,
            primal_residual: self.pres,
            dual_residual: self.dres,
            iterations,
        }
    }
}

/// Solves the full embedding step given the residual right-hand sides and the
/// precomputed solve against (-c, b, h).
#[allow(clippy::too_many_arguments)]
fn direction(
    ws: &Workspace<'_>,
    sc: &Scaling,
    res_x: &[f64],
    res_y: &[f64],
    res_z: &[f64],
    res_tau: f64,
    ds_rhs: &[f64],
    dkappa_rhs: f64,
    tau: f64,
    kappa: f64,
    wsol: &(Vec<f64>, Vec<f64>, Vec<f64>),
) -> Direction {
    let cone = ws.cone;
    let m = cone.dim();
    // sigma = lambda \ ds_rhs, folded into the z-row right-hand side
    let mut sigma = vec![0.0; m];
    jordan_div_lambda(cone, sc, ds_rhs, &mut sigma);
    let mut wt_sigma = vec![0.0; m];
    super::cone::apply_wt(cone, sc, &sigma, &mut wt_sigma);

    let u1: Vec<f64> = res_x.iter().map(|r| -r).collect();
    let u2: Vec<f64> = res_y.iter().map(|r| -r).collect();
    let u3: Vec<f64> = res_z
        .iter()
        .zip(&wt_sigma)
        .map(|(r, w)| -r - w)
        .collect();
    let (vx, vy, vz) = ws.solve_refined(sc, &u1, &u2, &u3);

    let (wx, wy, wz) = wsol;
    let num = -res_tau - dot(ws.c, &vx) - dot(ws.b, &vy) - dot(ws.h, &vz) - dkappa_rhs / tau;
    let den = dot(ws.c, wx) + dot(ws.b, wy) + dot(ws.h, wz) - kappa / tau;
    let dtau = num / den;

    let mut dx = vx;
    axpy(dtau, wx, &mut dx);
    let mut dy = vy;
    axpy(dtau, wy, &mut dy);
    let mut dz = vz;
    axpy(dtau, wz, &mut dz);

    // ds = W'(sigma) - W'W dz
    let mut ds = vec![0.0; m];
    apply_wtw(cone, sc, &dz, &mut ds);
    for i in 0..m {
        ds[i] = wt_sigma[i] - ds[i];
    }
    let dkappa = (dkappa_rhs - kappa * dtau) / tau;
    Direction {
        dx,
        dy,
        dz,
        ds,
        dtau,
        dkappa,
    }
}

/// Runs the interior-point iteration.  `c`, `b`, `h` are the problem data
/// vectors; the constraint operators live in the backend.
pub fn solve_hsd(
    c: &[f64],
    b: &[f64],
    h: &[f64],
    cone: &Cone,
    kkt: &mut dyn KktBackend,
    opts: &ConicOptions,
) -> ConicSolution {
    let (n, p) = kkt.dims();
    let m = cone.dim();
    assert_eq!(c.len(), n);
    assert_eq!(b.len(), p);
    assert_eq!(h.len(), m);

    let norm_b = norm(b).max(1.0);
    let norm_h = norm(h).max(1.0);
    let norm_c = norm(c).max(1.0);

    let fail = |iterations| ConicSolution {
        status: ConicStatus::NumericalFailure,
        x: vec![0.0; n],
        y: vec![0.0; p],
        z: vec![0.0; m],
        s: vec![0.0; m],
        primal_objective: f64::NAN,
        dual_objective: f64::NAN,
        gap: f64::NAN,
        primal_residual: f64::NAN,
        dual_residual: f64::NAN,
        iterations,
    };

    // --- starting point: least-squares primal/dual pair shifted into K
    let id_scaling = Scaling::identity(cone);
    let ws = Workspace {
        cone,
        kkt,
        c,
        b,
        h,
        refine_rounds: opts.refine_rounds,
    };
    if !ws.kkt.factor(cone, &id_scaling) {
        return fail(0);
    }
    let zeros_n = vec![0.0; n];
    let (x0, _, dz0) = ws.solve_refined(&id_scaling, &zeros_n, b, h);
    let mut s: Vec<f64> = dz0.iter().map(|v| -v).collect();
    let margin = if m > 0 { min_margin(cone, &s) } else { 1.0 };
    if margin <= 0.0 {
        let shift = 1.0 - margin;
        let e = cone_identity(cone);
        axpy(shift, &e, &mut s);
    }
    let neg_c: Vec<f64> = c.iter().map(|v| -v).collect();
    let zeros_p = vec![0.0; p];
    let zeros_m = vec![0.0; m];
    let (_, y0, z0) = ws.solve_refined(&id_scaling, &neg_c, &zeros_p, &zeros_m);
    let mut z = z0;
    let margin = if m > 0 { min_margin(cone, &z) } else { 1.0 };
    if margin <= 0.0 {
        let shift = 1.0 - margin;
        let e = cone_identity(cone);
        axpy(shift, &e, &mut z);
    }
    let mut x = x0;
    let mut y = y0;
    let mut tau = 1.0f64;
    let mut kappa = 1.0f64;

    let degree = (cone.degree() + 1) as f64;
    let mut iterations = 0;
    let trace = std::env::var("PROJCONST_TRACE").is_ok();
    // ill-conditioned late iterations often polish one residual to machine
    // precision while the other stalls; callers that only need one side can
    // still use such a point, so stop instead of burning the budget
    let mut stalled_lag = f64::INFINITY;
    let mut stall_count = 0usize;
    let mut best: Option<BestIterate> = None;
    let mut best_score = f64::INFINITY;

    let mut res_x = vec![0.0; n];
    let mut res_y = vec![0.0; p];
    let mut res_z = vec![0.0; m];
    let mut tmp_n = vec![0.0; n];
    let mut tmp_m = vec![0.0; m];

    loop {
        // residuals of the embedding
        ws.kkt.mul_at(&y, &mut res_x);
        ws.kkt.mul_gt(&z, &mut tmp_n);
        for i in 0..n {
            res_x[i] += tmp_n[i] + c[i] * tau;
        }
        ws.kkt.mul_a(&x, &mut res_y);
        for i in 0..p {
            res_y[i] -= b[i] * tau;
        }
        ws.kkt.mul_g(&x, &mut res_z);
        for i in 0..m {
            res_z[i] += s[i] - h[i] * tau;
        }
        let res_tau = dot(c, &x) + dot(b, &y) + dot(h, &z) + kappa;

        let cx = dot(c, &x);
        let by_hz = dot(b, &y) + dot(h, &z);
        let pcost = cx / tau;
        let dcost = -by_hz / tau;
        let gap = if m > 0 { dot(&s, &z) / (tau * tau) } else { 0.0 };
        let pres = (norm(&res_y) / norm_b).max(norm(&res_z) / norm_h) / tau;
        let dres = norm(&res_x) / (norm_c * tau);
        let relgap = gap / pcost.abs().max(1.0);

        if trace {
            eprintln!(
                "iter {:3}  pcost {:+.9e}  pres {:.2e}  dres {:.2e}  relgap {:.2e}  tau {:.2e}  kappa {:.2e}",
                iterations, pcost, pres, dres, relgap, tau, kappa
            );
        }

        let score = pres.max(dres).max(relgap);
        if score.is_finite() && score < best_score && tau > 0.0 {
            best_score = score;
            best = Some(BestIterate {
                x: x.clone(),
                y: y.clone(),
                z: z.clone(),
                s: s.clone(),
                tau,
                pcost,
                dcost,
                gap,
                pres,
                dres,
            });
        }

        if pres <= opts.feas_tol && dres <= opts.feas_tol && relgap <= opts.gap_tol {
            let inv_tau = 1.0 / tau;
            return ConicSolution {
                status: ConicStatus::Optimal,
                x: x.iter().map(|v| v * inv_tau).collect(),
                y: y.iter().map(|v| v * inv_tau).collect(),
                z: z.iter().map(|v| v * inv_tau).collect(),
                s: s.iter().map(|v| v * inv_tau).collect(),
                primal_objective: pcost,
                dual_objective: dcost,
                gap,
                primal_residual: pres,
                dual_residual: dres,
                iterations,
            };
        }

        // infeasibility certificates; A'y + G'z = res_x - c tau
        if by_hz < 0.0 {
            for i in 0..n {
                tmp_n[i] = res_x[i] - c[i] * tau;
            }
            let cert_res = norm(&tmp_n) / (norm_c * (-by_hz));
            if cert_res <= opts.feas_tol {
                let scale = -1.0 / by_hz;
                return ConicSolution {
                    status: ConicStatus::PrimalInfeasible,
                    x: vec![0.0; n],
                    y: y.iter().map(|v| v * scale).collect(),
                    z: z.iter().map(|v| v * scale).collect(),
                    s: vec![0.0; m],
                    primal_objective: f64::NAN,
                    dual_objective: f64::NAN,
                    gap: f64::NAN,
                    primal_residual: pres,
                    dual_residual: cert_res,
                    iterations,
                };
            }
        }
        if cx < 0.0 {
            // Ax = res_y + b tau, Gx + s = res_z + h tau
            let ray_eq: Vec<f64> = res_y.iter().zip(b).map(|(r, bi)| r + bi * tau).collect();
            for i in 0..m {
                tmp_m[i] = res_z[i] + h[i] * tau;
            }
            let cert_res = (norm(&ray_eq) / norm_b).max(norm(&tmp_m) / norm_h) / (-cx);
            if cert_res <= opts.feas_tol {
                let scale = -1.0 / cx;
                return ConicSolution {
                    status: ConicStatus::DualInfeasible,
                    x: x.iter().map(|v| v * scale).collect(),
                    y: vec![0.0; p],
                    z: vec![0.0; m],
                    s: s.iter().map(|v| v * scale).collect(),
                    primal_objective: f64::NAN,
                    dual_objective: f64::NAN,
                    gap: f64::NAN,
                    primal_residual: cert_res,
                    dual_residual: dres,
                    iterations,
                };
            }
        }

        // One side of the pair has converged but the other has stopped
        // contracting: further iterations only risk a breakdown, so bail out
        // with the best iterate on hand.
        let one_side_done =
            relgap <= opts.gap_tol && pres.min(dres) <= 100.0 * opts.feas_tol;
        if one_side_done {
            let lag = pres.max(dres);
            if lag > 0.5 * stalled_lag {
                stall_count += 1;
            } else {
                stall_count = 0;
                stalled_lag = lag;
            }
        } else {
            stall_count = 0;
        }

        if iterations >= opts.max_iter || stall_count >= 8 {
            return best
                .take()
                .map(|b| b.into_solution(iterations))
                .unwrap_or_else(|| fail(iterations));
        }

        let sc = match Scaling::compute(cone, &s, &z) {
            Some(sc) => sc,
            None => {
                return best
                    .take()
                    .map(|b| b.into_solution(iterations))
                    .unwrap_or_else(|| fail(iterations))
            }
        };
        if !ws.kkt.factor(cone, &sc) {
            return best
                .take()
                .map(|b| b.into_solution(iterations))
                .unwrap_or_else(|| fail(iterations));
        }
        let wsol = ws.solve_refined(&sc, &neg_c, b, h);

        let mu = (dot(&s, &z) + tau * kappa) / degree;

        // predictor: pure Newton step toward the central path target 0
        let lam_sq = lambda_sq(cone, &sc);
        let ds_rhs_aff: Vec<f64> = lam_sq.iter().map(|v| -v).collect();
        let aff = direction(
            &ws, &sc, &res_x, &res_y, &res_z, res_tau, &ds_rhs_aff, -tau * kappa, tau, kappa,
            &wsol,
        );

        // scaled directions determine both the step length and the corrector
        let mut dz_sc = vec![0.0; m];
        apply_w(cone, &sc, &aff.dz, &mut dz_sc);
        let mut ds_sc = vec![0.0; m];
        apply_winv_t(cone, &sc, &aff.ds, &mut ds_sc);
        let mut step_bound = max_step_scaled(cone, &sc, &dz_sc)
            .min(max_step_scaled(cone, &sc, &ds_sc));
        if aff.dtau < 0.0 {
            step_bound = step_bound.min(-tau / aff.dtau);
        }
        if aff.dkappa < 0.0 {
            step_bound = step_bound.min(-kappa / aff.dkappa);
        }
        let alpha_aff = step_bound.min(1.0);

        // centering weight from the predicted gap reduction
        let gap_now = dot(&sc.lambda, &sc.lambda) + tau * kappa;
        let mut lam_ds = sc.lambda.clone();
        axpy(alpha_aff, &ds_sc, &mut lam_ds);
        let mut lam_dz = sc.lambda.clone();
        axpy(alpha_aff, &dz_sc, &mut lam_dz);
        let gap_aff = dot(&lam_ds, &lam_dz)
            + (tau + alpha_aff * aff.dtau) * (kappa + alpha_aff * aff.dkappa);
        let sigma_c = (gap_aff / gap_now).clamp(0.0, 1.0).powi(3);

        // corrector right-hand side: -lambda∘lambda - (W^-T ds)∘(W dz) + sigma mu e
        let mut eta = vec![0.0; m];
        jordan_prod(cone, &ds_sc, &dz_sc, &mut eta);
        let e = cone_identity(cone);
        let mut ds_rhs = vec![0.0; m];
        for i in 0..m {
            ds_rhs[i] = -lam_sq[i] - eta[i] + sigma_c * mu * e[i];
        }
        let dkappa_rhs = -tau * kappa - aff.dtau * aff.dkappa + sigma_c * mu;
        let dir = direction(
            &ws, &sc, &res_x, &res_y, &res_z, res_tau, &ds_rhs, dkappa_rhs, tau, kappa, &wsol,
        );

        apply_w(cone, &sc, &dir.dz, &mut dz_sc);
        apply_winv_t(cone, &sc, &dir.ds, &mut ds_sc);
        let mut step_bound = max_step_scaled(cone, &sc, &dz_sc)
            .min(max_step_scaled(cone, &sc, &ds_sc));
        if dir.dtau < 0.0 {
            step_bound = step_bound.min(-tau / dir.dtau);
        }
        if dir.dkappa < 0.0 {
            step_bound = step_bound.min(-kappa / dir.dkappa);
        }
        let alpha = (opts.step_frac * step_bound).min(1.0);
        if !alpha.is_finite() || alpha < 1e-10 {
            return best
                .take()
                .map(|b| b.into_solution(iterations))
                .unwrap_or_else(|| fail(iterations));
        }

        axpy(alpha, &dir.dx, &mut x);
        axpy(alpha, &dir.dy, &mut y);
        axpy(alpha, &dir.dz, &mut z);
        axpy(alpha, &dir.ds, &mut s);
        tau += alpha * dir.dtau;
        kappa += alpha * dir.dkappa;
        iterations += 1;
    }
}
