//! Cone arithmetic for a product of a nonnegative orthant and dense PSD
//! blocks, with symmetric matrices stored in scaled `svec` form so that inner
//! products of cone vectors equal trace inner products of the matrices.

use nalgebra::{DMatrix, DVector};

pub const SQRT2: f64 = std::f64::consts::SQRT_2;

pub fn svec_len(s: usize) -> usize {
    s * (s + 1) / 2
}

/// Product cone: `lin` nonnegative entries followed by one svec segment per
/// PSD block order in `psd`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cone {
    pub lin: usize,
    pub psd: Vec<usize>,
}

impl Cone {
    pub fn dim(&self) -> usize {
        self.lin + self.psd.iter().map(|&s| svec_len(s)).sum::<usize>()
    }

    /// Barrier degree: lin count plus the sum of block orders.
    pub fn degree(&self) -> usize {
        self.lin + self.psd.iter().sum::<usize>()
    }

    /// Offset of PSD block `j` within a cone vector.
    pub fn block_offset(&self, j: usize) -> usize {
        self.lin + self.psd[..j].iter().map(|&s| svec_len(s)).sum::<usize>()
    }
}

/// Writes the scaled lower triangle of a symmetric matrix column-major into
/// `out`: diagonal entries as-is, off-diagonal entries times sqrt(2).
pub fn svec_into(mat: &DMatrix<f64>, out: &mut [f64]) {
    let s = mat.nrows();
    let mut idx = 0;
    for j in 0..s {
        out[idx] = mat[(j, j)];
        idx += 1;
        for i in j + 1..s {
            out[idx] = SQRT2 * mat[(i, j)];
            idx += 1;
        }
    }
}

/// Reconstructs the symmetric matrix from its svec storage.
pub fn smat(v: &[f64], s: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(s, s);
    let mut idx = 0;
    for j in 0..s {
        m[(j, j)] = v[idx];
        idx += 1;
        for i in j + 1..s {
            let x = v[idx] / SQRT2;
            m[(i, j)] = x;
            m[(j, i)] = x;
            idx += 1;
        }
    }
    m
}

/// Nesterov-Todd scaling data for one PSD block: T = R Rᵀ is the scaling
/// point with T z T = s, and Rᵀ (smat z) R = R⁻¹ (smat s) R⁻ᵀ = diag(sigma).
#[derive(Debug, Clone)]
pub struct PsdScaling {
    pub r: DMatrix<f64>,
    pub rinv: DMatrix<f64>,
    pub sigma: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct Scaling {
    /// w_i = sqrt(s_i / z_i) for the orthant part.
    pub lin_w: Vec<f64>,
    pub psd: Vec<PsdScaling>,
    /// Scaled point lambda = W^{-T} s = W z as a cone vector.
    pub lambda: Vec<f64>,
}

impl Scaling {
    pub fn identity(cone: &Cone) -> Self {
        let mut lambda = vec![0.0; cone.dim()];
        lambda[..cone.lin].fill(1.0);
        let mut psd = Vec::with_capacity(cone.psd.len());
        for (j, &s) in cone.psd.iter().enumerate() {
            let off = cone.block_offset(j);
            let mut idx = off;
            for c in 0..s {
                lambda[idx] = 1.0;
                idx += s - c;
            }
            psd.push(PsdScaling {
                r: DMatrix::identity(s, s),
                rinv: DMatrix::identity(s, s),
                sigma: DVector::from_element(s, 1.0),
            });
        }
        Scaling {
            lin_w: vec![1.0; cone.lin],
            psd,
            lambda,
        }
    }

    /// Computes the NT scaling from strictly feasible cone points (s, z).
    pub fn compute(cone: &Cone, s: &[f64], z: &[f64]) -> Option<Self> {
        let mut lin_w = Vec::with_capacity(cone.lin);
        let mut lambda = vec![0.0; cone.dim()];
        for i in 0..cone.lin {
            if s[i] <= 0.0 || z[i] <= 0.0 {
                return None;
            }
            lin_w.push((s[i] / z[i]).sqrt());
            lambda[i] = (s[i] * z[i]).sqrt();
        }
        let mut psd = Vec::with_capacity(cone.psd.len());
        for (j, &order) in cone.psd.iter().enumerate() {
            let off = cone.block_offset(j);
            let sm = smat(&s[off..off + svec_len(order)], order);
            let zm = smat(&z[off..off + svec_len(order)], order);
            let ls = nalgebra::Cholesky::new(sm)?.unpack();
            let lz = nalgebra::Cholesky::new(zm)?.unpack();
            let m = lz.transpose() * &ls;
            let svd = nalgebra::SVD::new(m, true, true);
            let u = svd.u.as_ref()?;
            let vt = svd.v_t.as_ref()?;
            let sv = &svd.singular_values;
            if sv.iter().any(|&x| x <= 0.0) {
                return None;
            }
            let inv_sqrt = DVector::from_iterator(order, sv.iter().map(|&x| 1.0 / x.sqrt()));
            // R = L_s V diag(sv^-1/2), Rinv = diag(sv^-1/2) Uᵀ L_zᵀ
            let mut r = ls * vt.transpose();
            for c in 0..order {
                r.column_mut(c).scale_mut(inv_sqrt[c]);
            }
            let mut rinv = u.transpose() * lz.transpose();
            for rr in 0..order {
                rinv.row_mut(rr).scale_mut(inv_sqrt[rr]);
            }
            let mut idx = off;
            for c in 0..order {
                lambda[idx] = sv[c];
                idx += order - c;
            }
            psd.push(PsdScaling {
                r,
                rinv,
                sigma: sv.clone_owned(),
            });
        }
        Some(Scaling { lin_w, psd, lambda })
    }
}

fn psd_transform(block: &PsdScaling, left_t: bool, v: &[f64], out: &mut [f64], order: usize, inv: bool) {
    // out = svec(Mᵀ V M) with M = R (inv=false) or R⁻¹ᵀ... callers pick below.
    let vm = smat(v, order);
    let m = if inv { &block.rinv } else { &block.r };
    let res = if left_t {
        // Mᵀ V M
        m.transpose() * vm * m
    } else {
        // M V Mᵀ
        m * vm * m.transpose()
    };
    svec_into(&res, out);
}

/// out = W v: orthant w∘v; PSD svec(Rᵀ V R).
pub fn apply_w(cone: &Cone, sc: &Scaling, v: &[f64], out: &mut [f64]) {
    for i in 0..cone.lin {
        out[i] = sc.lin_w[i] * v[i];
    }
    for (j, &s) in cone.psd.iter().enumerate() {
        let o = cone.block_offset(j);
        let e = o + svec_len(s);
        psd_transform(&sc.psd[j], true, &v[o..e], &mut out[o..e], s, false);
    }
}

/// out = Wᵀ v: orthant w∘v; PSD svec(R V Rᵀ).
pub fn apply_wt(cone: &Cone, sc: &Scaling, v: &[f64], out: &mut [f64]) {
    for i in 0..cone.lin {
        out[i] = sc.lin_w[i] * v[i];
    }
    for (j, &s) in cone.psd.iter().enumerate() {
        let o = cone.block_offset(j);
        let e = o + svec_len(s);
        psd_transform(&sc.psd[j], false, &v[o..e], &mut out[o..e], s, false);
    }
}

/// out = W⁻¹ v: orthant v/w; PSD svec(R⁻ᵀ V R⁻¹).
pub fn apply_winv(cone: &Cone, sc: &Scaling, v: &[f64], out: &mut [f64]) {
    for i in 0..cone.lin {
        out[i] = v[i] / sc.lin_w[i];
    }
    for (j, &s) in cone.psd.iter().enumerate() {
        let o = cone.block_offset(j);
        let e = o + svec_len(s);
        psd_transform(&sc.psd[j], true, &v[o..e], &mut out[o..e], s, true);
    }
}

/// out = W⁻ᵀ v: orthant v/w; PSD svec(R⁻¹ V R⁻ᵀ).
pub fn apply_winv_t(cone: &Cone, sc: &Scaling, v: &[f64], out: &mut [f64]) {
    for i in 0..cone.lin {
        out[i] = v[i] / sc.lin_w[i];
    }
    for (j, &s) in cone.psd.iter().enumerate() {
        let o = cone.block_offset(j);
        let e = o + svec_len(s);
        psd_transform(&sc.psd[j], false, &v[o..e], &mut out[o..e], s, true);
    }
}

/// out = (WᵀW) v = svec(T V T).
pub fn apply_wtw(cone: &Cone, sc: &Scaling, v: &[f64], out: &mut [f64]) {
    let mut tmp = vec![0.0; v.len()];
    apply_w(cone, sc, v, &mut tmp);
    apply_wt(cone, sc, &tmp, out);
}

/// out = (WᵀW)⁻¹ v = svec(T⁻¹ V T⁻¹).
pub fn apply_wtw_inv(cone: &Cone, sc: &Scaling, v: &[f64], out: &mut [f64]) {
    let mut tmp = vec![0.0; v.len()];
    apply_winv_t(cone, sc, v, &mut tmp);
    apply_winv(cone, sc, &tmp, out);
}

/// lambda∘lambda as a cone vector (lambda is diagonal on PSD blocks).
pub fn lambda_sq(cone: &Cone, sc: &Scaling) -> Vec<f64> {
    let mut out = vec![0.0; cone.dim()];
    for i in 0..cone.lin {
        out[i] = sc.lambda[i] * sc.lambda[i];
    }
    for (j, &s) in cone.psd.iter().enumerate() {
        let mut idx = cone.block_offset(j);
        for c in 0..s {
            let sg = sc.psd[j].sigma[c];
            out[idx] = sg * sg;
            idx += s - c;
        }
    }
    out
}

/// Solves lambda∘u = rhs for u (Jordan division by the scaled point).
pub fn jordan_div_lambda(cone: &Cone, sc: &Scaling, rhs: &[f64], out: &mut [f64]) {
    for i in 0..cone.lin {
        out[i] = rhs[i] / sc.lambda[i];
    }
    for (j, &s) in cone.psd.iter().enumerate() {
        let sg = &sc.psd[j].sigma;
        let mut idx = cone.block_offset(j);
        for c in 0..s {
            for r in c..s {
                out[idx] = 2.0 * rhs[idx] / (sg[r] + sg[c]);
                idx += 1;
            }
        }
    }
}

/// Symmetrized Jordan product u∘v (componentwise on the orthant, (UV+VU)/2
/// on PSD blocks).
pub fn jordan_prod(cone: &Cone, u: &[f64], v: &[f64], out: &mut [f64]) {
    for i in 0..cone.lin {
        out[i] = u[i] * v[i];
    }
    for (j, &s) in cone.psd.iter().enumerate() {
        let o = cone.block_offset(j);
        let e = o + svec_len(s);
        let um = smat(&u[o..e], s);
        let vm = smat(&v[o..e], s);
        let p = &um * &vm;
        let sym = (&p + p.transpose()) * 0.5;
        svec_into(&sym, &mut out[o..e]);
    }
}

/// The identity element of the cone algebra.
pub fn cone_identity(cone: &Cone) -> Vec<f64> {
    let mut e = vec![0.0; cone.dim()];
    e[..cone.lin].fill(1.0);
    for (j, &s) in cone.psd.iter().enumerate() {
        let mut idx = cone.block_offset(j);
        for c in 0..s {
            e[idx] = 1.0;
            idx += s - c;
        }
    }
    e
}

/// Smallest eigenvalue margin of a cone vector (min entry on the orthant,
/// min eigenvalue per PSD block).
pub fn min_margin(cone: &Cone, v: &[f64]) -> f64 {
    let mut m = f64::INFINITY;
    for i in 0..cone.lin {
        m = m.min(v[i]);
    }
    for (j, &s) in cone.psd.iter().enumerate() {
        let o = cone.block_offset(j);
        let mat = smat(&v[o..o + svec_len(s)], s);
        let eig = nalgebra::SymmetricEigen::new(mat);
        m = m.min(eig.eigenvalues.min());
    }
    m
}

/// Largest step t such that lambda + t * dir stays in the cone, where `dir`
/// lives in the scaled space. Returns f64::INFINITY when unconstrained.
pub fn max_step_scaled(cone: &Cone, sc: &Scaling, dir: &[f64]) -> f64 {
    let mut bound = f64::INFINITY;
    for i in 0..cone.lin {
        if dir[i] < 0.0 {
            bound = bound.min(-sc.lambda[i] / dir[i]);
        }
    }
    for (j, &s) in cone.psd.iter().enumerate() {
        let o = cone.block_offset(j);
        let mut mat = smat(&dir[o..o + svec_len(s)], s);
        let sg = &sc.psd[j].sigma;
        for r in 0..s {
            for c in 0..s {
                mat[(r, c)] /= (sg[r] * sg[c]).sqrt();
            }
        }
        let eig = nalgebra::SymmetricEigen::new(mat);
        let lmin = eig.eigenvalues.min();
        if lmin < 0.0 {
            bound = bound.min(-1.0 / lmin);
        }
    }
    bound
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_cone() -> Cone {
        Cone {
            lin: 2,
            psd: vec![3],
        }
    }

    fn rand_vec(seed: u64, len: usize) -> Vec<f64> {
        let mut state = seed;
        (0..len)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
                (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
            })
            .collect()
    }

    fn psd_point(cone: &Cone, seed: u64) -> Vec<f64> {
        // strictly interior point: diag-dominant random symmetric
        let mut v = vec![0.0; cone.dim()];
        v[0] = 1.5;
        v[1] = 0.7;
        let raw = rand_vec(seed, 9);
        let mut m = DMatrix::zeros(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                m[(i, j)] = raw[3 * i + j] * 0.2;
            }
        }
        let sym = &m * m.transpose() + DMatrix::identity(3, 3);
        svec_into(&sym, &mut v[2..]);
        v
    }

    #[test]
    fn svec_preserves_inner_products() {
        let a = smat(&rand_vec(3, 6), 3);
        let a = (&a + a.transpose()) * 0.5;
        let b = smat(&rand_vec(7, 6), 3);
        let b = (&b + b.transpose()) * 0.5;
        let mut va = vec![0.0; 6];
        let mut vb = vec![0.0; 6];
        svec_into(&a, &mut va);
        svec_into(&b, &mut vb);
        let dot: f64 = va.iter().zip(&vb).map(|(x, y)| x * y).sum();
        let tr = (&a * &b).trace();
        assert!((dot - tr).abs() < 1e-12);
    }

    #[test]
    fn svec_smat_round_trip() {
        let v = rand_vec(11, 10);
        let m = smat(&v, 4);
        let mut back = vec![0.0; 10];
        svec_into(&m, &mut back);
        for (a, b) in v.iter().zip(&back) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn nt_scaling_maps_both_points_to_lambda() {
        let cone = test_cone();
        let s = psd_point(&cone, 101);
        let z = psd_point(&cone, 202);
        let sc = Scaling::compute(&cone, &s, &z).unwrap();
        let mut ls = vec![0.0; cone.dim()];
        let mut lz = vec![0.0; cone.dim()];
        apply_winv_t(&cone, &sc, &s, &mut ls);
        apply_w(&cone, &sc, &z, &mut lz);
        for i in 0..cone.dim() {
            assert!((ls[i] - sc.lambda[i]).abs() < 1e-10, "W^-T s at {i}");
            assert!((lz[i] - sc.lambda[i]).abs() < 1e-10, "W z at {i}");
        }
        // lambda off-diagonals vanish on the PSD block
        let lam = smat(&sc.lambda[2..], 3);
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!(lam[(i, j)].abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn scaling_inverses_compose() {
        let cone = test_cone();
        let s = psd_point(&cone, 5);
        let z = psd_point(&cone, 6);
        let sc = Scaling::compute(&cone, &s, &z).unwrap();
        let v = rand_vec(9, cone.dim());
        let mut a = vec![0.0; cone.dim()];
        let mut b = vec![0.0; cone.dim()];
        apply_wtw(&cone, &sc, &v, &mut a);
        apply_wtw_inv(&cone, &sc, &a, &mut b);
        for i in 0..cone.dim() {
            assert!((v[i] - b[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn jordan_division_inverts_product_along_lambda() {
        let cone = test_cone();
        let s = psd_point(&cone, 21);
        let z = psd_point(&cone, 22);
        let sc = Scaling::compute(&cone, &s, &z).unwrap();
        let rhs = rand_vec(33, cone.dim());
        let mut u = vec![0.0; cone.dim()];
        jordan_div_lambda(&cone, &sc, &rhs, &mut u);
        // lambda∘u should reproduce rhs; lambda is diagonal so jordan_prod
        // against the svec of diag(sigma) is exact.
        let mut back = vec![0.0; cone.dim()];
        jordan_prod(&cone, &sc.lambda, &u, &mut back);
        for i in 0..cone.dim() {
            assert!((back[i] - rhs[i]).abs() < 1e-10, "at {i}");
        }
    }

    #[test]
    fn max_step_hits_boundary() {
        let cone = Cone { lin: 1, psd: vec![2] };
        let s = {
            let mut v = vec![2.0, 0.0, 0.0, 0.0];
            let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
            svec_into(&m, &mut v[1..]);
            v
        };
        let z = {
            let mut v = vec![0.5, 0.0, 0.0, 0.0];
            let m = DMatrix::from_row_slice(2, 2, &[1.0, -0.1, -0.1, 0.7]);
            svec_into(&m, &mut v[1..]);
            v
        };
        let sc = Scaling::compute(&cone, &s, &z).unwrap();
        let dir = vec![-1.0, -0.4, 0.2, -0.3];
        let t = max_step_scaled(&cone, &sc, &dir);
        assert!(t.is_finite() && t > 0.0);
        // at t the margin vanishes; just inside it stays positive
        let mut probe = sc.lambda.clone();
        for i in 0..probe.len() {
            probe[i] += 0.999 * t * dir[i];
        }
        // scale back to unscaled? margin test in scaled coordinates is enough
        assert!(min_margin(&cone, &probe) > -1e-9);
        let mut beyond = sc.lambda.clone();
        for i in 0..beyond.len() {
            beyond[i] += 1.01 * t * dir[i];
        }
        assert!(min_margin(&cone, &beyond) < 0.0);
    }
}
