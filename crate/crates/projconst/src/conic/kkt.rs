//! Dense reference backend: keeps A and G as explicit matrices, eliminates
//! dz through H = G'(W'W)⁻¹G, and factors H and the equality Schur
//! complement A H⁻¹A' with Cholesky.  Quadratic storage, cubic factor cost;
//! meant for small problems and as the ground truth the structured backends
//! are checked against.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::cone::{apply_wtw_inv, Cone, Scaling};
use super::hsd::KktBackend;

pub struct DenseKkt {
    a: DMatrix<f64>,
    g: DMatrix<f64>,
    chol_h: Option<Cholesky<f64, Dyn>>,
    chol_schur: Option<Cholesky<f64, Dyn>>,
}

impl DenseKkt {
    /// `a` is p x n (equalities), `g` is m x n (cone rows).
    pub fn new(a: DMatrix<f64>, g: DMatrix<f64>) -> Self {
        assert_eq!(a.ncols(), g.ncols());
        DenseKkt {
            a,
            g,
            chol_h: None,
            chol_schur: None,
        }
    }
}

/// Cholesky with a ladder of diagonal shifts, for matrices that are PD in
/// exact arithmetic but may lose that under roundoff.
pub fn chol_with_shift(mut m: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let n = m.nrows();
    if n == 0 {
        return Cholesky::new(m);
    }
    let scale = m.diagonal().amax().max(1.0);
    let mut shift = 0.0;
    for attempt in 0..4 {
        let trial = if shift == 0.0 {
            m.clone()
        } else {
            let mut t = m.clone();
            for i in 0..n {
                t[(i, i)] += shift;
            }
            t
        };
        match Cholesky::new(trial) {
            Some(ch) => return Some(ch),
            None => {
                shift = scale * 1e-12 * 100f64.powi(attempt);
            }
        }
    }
    // last resort: a large shift so the driver can at least refine
    for i in 0..n {
        m[(i, i)] += scale * 1e-4;
    }
    Cholesky::new(m)
}

impl KktBackend for DenseKkt {
    fn dims(&self) -> (usize, usize) {
        (self.a.ncols(), self.a.nrows())
    }

    fn factor(&mut self, cone: &Cone, sc: &Scaling) -> bool {
        let (n, p) = self.dims();
        let m = cone.dim();
        // columns of (W'W)^{-1} G
        let mut wg = DMatrix::zeros(m, n);
        let mut col = vec![0.0; m];
        let mut out = vec![0.0; m];
        for j in 0..n {
            for i in 0..m {
                col[i] = self.g[(i, j)];
            }
            apply_wtw_inv(cone, sc, &col, &mut out);
            for i in 0..m {
                wg[(i, j)] = out[i];
            }
        }
        let h = self.g.tr_mul(&wg);
        let chol_h = match chol_with_shift(h) {
            Some(c) => c,
            None => return false,
        };
        if p > 0 {
            let hinv_at = chol_h.solve(&self.a.transpose());
            let schur = &self.a * hinv_at;
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
        let tv = DVector::from_column_slice(&t);
        let mut u_tilde = self.g.tr_mul(&tv);
        for i in 0..n {
            u_tilde[i] += u1[i];
        }
        let (dx, dy) = if p > 0 {
            let chol_s = self.chol_schur.as_ref().unwrap();
            let r = chol_h.solve(&u_tilde);
            let mut rhs_y = &self.a * r;
            for i in 0..p {
                rhs_y[i] -= u2[i];
            }
            let dy = chol_s.solve(&rhs_y);
            let rhs_x = &u_tilde - self.a.tr_mul(&dy);
            (chol_h.solve(&rhs_x), dy)
        } else {
            (chol_h.solve(&u_tilde), DVector::zeros(0))
        };
        let gx = &self.g * &dx;
        let mut dz_in = vec![0.0; m];
        for i in 0..m {
            dz_in[i] = gx[i] - u3[i];
        }
        let mut dz = vec![0.0; m];
        apply_wtw_inv(cone, sc, &dz_in, &mut dz);
        (dx.as_slice().to_vec(), dy.as_slice().to_vec(), dz)
    }

    fn mul_a(&self, x: &[f64], out: &mut [f64]) {
        let v = &self.a * DVector::from_column_slice(x);
        out.copy_from_slice(v.as_slice());
    }

    fn mul_at(&self, y: &[f64], out: &mut [f64]) {
        let v = self.a.tr_mul(&DVector::from_column_slice(y));
        out.copy_from_slice(v.as_slice());
    }

    fn mul_g(&self, x: &[f64], out: &mut [f64]) {
        let v = &self.g * DVector::from_column_slice(x);
        out.copy_from_slice(v.as_slice());
    }

    fn mul_gt(&self, z: &[f64], out: &mut [f64]) {
        let v = self.g.tr_mul(&DVector::from_column_slice(z));
        out.copy_from_slice(v.as_slice());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::cone::{apply_wtw, svec_into};
    use crate::conic::hsd::{solve_hsd, ConicOptions, ConicStatus};

    fn lcg(seed: u64, len: usize) -> Vec<f64> {
        let mut state = seed;
        (0..len)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
                (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
            })
            .collect()
    }

    fn interior_point(cone: &Cone, seed: u64) -> Vec<f64> {
        let mut v = vec![0.0; cone.dim()];
        let raw = lcg(seed, cone.dim() * 4);
        for i in 0..cone.lin {
            v[i] = 0.5 + raw[i].abs();
        }
        for (j, &s) in cone.psd.iter().enumerate() {
            let o = cone.block_offset(j);
            let mut m = DMatrix::zeros(s, s);
            for r in 0..s {
                for c in 0..s {
                    m[(r, c)] = raw[cone.lin + 2 * (r * s + c) + j] * 0.3;
                }
            }
            let sym = &m * m.transpose() + DMatrix::identity(s, s);
            svec_into(&sym, &mut v[o..o + s * (s + 1) / 2]);
        }
        v
    }

    #[test]
    fn solve3_satisfies_all_three_equations() {
        let cone = Cone {
            lin: 3,
            psd: vec![2, 3],
        };
        let m = cone.dim();
        let n = 5;
        let p = 2;
        let a = DMatrix::from_column_slice(p, n, &lcg(1, p * n));
        let g = DMatrix::from_column_slice(m, n, &lcg(2, m * n));
        let s = interior_point(&cone, 3);
        let z = interior_point(&cone, 4);
        let sc = Scaling::compute(&cone, &s, &z).unwrap();
        let mut kkt = DenseKkt::new(a.clone(), g.clone());
        assert!(kkt.factor(&cone, &sc));
        let u1 = lcg(5, n);
        let u2 = lcg(6, p);
        let u3 = lcg(7, m);
        let (dx, dy, dz) = kkt.solve3(&cone, &sc, &u1, &u2, &u3);
        let dxv = DVector::from_column_slice(&dx);
        let dyv = DVector::from_column_slice(&dy);
        let dzv = DVector::from_column_slice(&dz);
        let r1 = a.tr_mul(&dyv) + g.tr_mul(&dzv);
        for i in 0..n {
            assert!((r1[i] - u1[i]).abs() < 1e-8, "row eq at {i}");
        }
        let r2 = &a * &dxv;
        for i in 0..p {
            assert!((r2[i] - u2[i]).abs() < 1e-8);
        }
        let gx = &g * &dxv;
        let mut wtw_dz = vec![0.0; m];
        apply_wtw(&cone, &sc, &dz, &mut wtw_dz);
        for i in 0..m {
            assert!((gx[i] - wtw_dz[i] - u3[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn minimizes_single_bounded_variable() {
        // min x subject to x >= 1
        let cone = Cone { lin: 1, psd: vec![] };
        let mut kkt = DenseKkt::new(
            DMatrix::zeros(0, 1),
            DMatrix::from_row_slice(1, 1, &[-1.0]),
        );
        let sol = solve_hsd(
            &[1.0],
            &[],
            &[-1.0],
            &cone,
            &mut kkt,
            &ConicOptions::default(),
        );
        assert_eq!(sol.status, ConicStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-7);
        assert!((sol.primal_objective - 1.0).abs() < 1e-7);
    }

    #[test]
    fn splits_unit_mass_between_two_weights() {
        // min x + 2y subject to x + y = 1, x, y >= 0
        let cone = Cone { lin: 2, psd: vec![] };
        let mut kkt = DenseKkt::new(
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0]),
        );
        let sol = solve_hsd(
            &[1.0, 2.0],
            &[1.0],
            &[0.0, 0.0],
            &cone,
            &mut kkt,
            &ConicOptions::default(),
        );
        assert_eq!(sol.status, ConicStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-7);
        assert!(sol.x[1].abs() < 1e-7);
        assert!((sol.primal_objective - 1.0).abs() < 1e-8);
        // dual: maximize b'y: y = 1 (the cheaper coefficient)
        assert!((sol.dual_objective - 1.0).abs() < 1e-7);
    }

    #[test]
    fn detects_unbounded_direction() {
        // min x subject to x <= 0
        let cone = Cone { lin: 1, psd: vec![] };
        let mut kkt = DenseKkt::new(
            DMatrix::zeros(0, 1),
            DMatrix::from_row_slice(1, 1, &[1.0]),
        );
        let sol = solve_hsd(
            &[1.0],
            &[],
            &[0.0],
            &cone,
            &mut kkt,
            &ConicOptions::default(),
        );
        assert_eq!(sol.status, ConicStatus::DualInfeasible);
        // certificate: ray with c'x = -1
        assert!((sol.x[0] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn detects_empty_interval() {
        // x >= 1 and x <= 0 cannot both hold
        let cone = Cone { lin: 2, psd: vec![] };
        let mut kkt = DenseKkt::new(
            DMatrix::zeros(0, 1),
            DMatrix::from_row_slice(2, 1, &[-1.0, 1.0]),
        );
        let sol = solve_hsd(
            &[0.0],
            &[],
            &[-1.0, 0.0],
            &cone,
            &mut kkt,
            &ConicOptions::default(),
        );
        assert_eq!(sol.status, ConicStatus::PrimalInfeasible);
        // Farkas pair: G'z = 0, h'z = -1, z >= 0
        assert!((sol.z[0] - sol.z[1]).abs() < 1e-6);
        assert!((-sol.z[0] * 1.0 - 0.0 * sol.z[1] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn smallest_eigenvalue_via_matrix_inequality() {
        // max t s.t. C - t I psd, i.e. min -t; optimum is lambda_min(C)
        let c_mat = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 1.0, -0.3, 0.1, -0.3, 1.5]);
        let eig = nalgebra::SymmetricEigen::new(c_mat.clone());
        let lmin = eig.eigenvalues.min();
        let cone = Cone { lin: 0, psd: vec![3] };
        let mut g = DMatrix::zeros(6, 1);
        let mut id = vec![0.0; 6];
        svec_into(&DMatrix::identity(3, 3), &mut id);
        for i in 0..6 {
            g[(i, 0)] = id[i];
        }
        let mut h = vec![0.0; 6];
        svec_into(&c_mat, &mut h);
        let mut kkt = DenseKkt::new(DMatrix::zeros(0, 1), g);
        let opts = ConicOptions {
            feas_tol: 1e-8,
            gap_tol: 1e-8,
            ..Default::default()
        };
        let sol = solve_hsd(&[-1.0], &[], &h, &cone, &mut kkt, &opts);
        assert_eq!(sol.status, ConicStatus::Optimal);
        assert!((sol.x[0] - lmin).abs() < 1e-6, "{} vs {}", sol.x[0], lmin);
    }

    #[test]
    fn unit_trace_extremal_matrix() {
        // min <C, X> s.t. tr X = 1, X psd; optimum lambda_min(C)
        let c_mat = DMatrix::from_row_slice(3, 3, &[1.0, 0.4, 0.0, 0.4, 2.0, 0.6, 0.0, 0.6, 0.5]);
        let eig = nalgebra::SymmetricEigen::new(c_mat.clone());
        let lmin = eig.eigenvalues.min();
        let cone = Cone { lin: 0, psd: vec![3] };
        let mut c = vec![0.0; 6];
        svec_into(&c_mat, &mut c);
        let mut tr_row = vec![0.0; 6];
        svec_into(&DMatrix::identity(3, 3), &mut tr_row);
        let a = DMatrix::from_row_slice(1, 6, &tr_row);
        let g = -DMatrix::<f64>::identity(6, 6);
        let mut kkt = DenseKkt::new(a, g);
        let opts = ConicOptions {
            feas_tol: 1e-8,
            gap_tol: 1e-8,
            ..Default::default()
        };
        let sol = solve_hsd(&c, &[1.0], &vec![0.0; 6], &cone, &mut kkt, &opts);
        assert_eq!(sol.status, ConicStatus::Optimal);
        assert!((sol.primal_objective - lmin).abs() < 1e-6);
    }
}
