//! Polynomial subspaces of C[-1,1], stored as Chebyshev coefficient columns,
//! with the parity decomposition the symmetric solver paths run on.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::chebyshev::{cheb_eval, chebu_to_cheb, monomial_to_cheb, ChebError};

/// Singular values below RANK_TOL times the largest are treated as zero when
/// deciding whether generating sets are independent or parity-decomposable.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum SpaceError {
    #[error("generators of {label} are linearly dependent")]
    RankDeficient { label: String },
    #[error("{label} is not invariant under x -> -x")]
    NotSymmetric { label: String },
    #[error("cannot parse space spec {spec:?}: {reason}")]
    InvalidSpec { spec: String, reason: String },
    #[error(transparent)]
    Cheb(#[from] ChebError),
}

/// A subspace of polynomials on [-1,1], spanned by the columns of `coeff`
/// interpreted as Chebyshev coefficient vectors (row k multiplies T_k).
#[derive(Debug, Clone, PartialEq)]
pub struct PolySpace {
    label: String,
    coeff: DMatrix<f64>,
}

fn matrix_rank(m: &DMatrix<f64>) -> usize {
    if m.ncols() == 0 || m.nrows() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let top = sv.max();
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * top).count()
}

fn trim_zero_rows(coeff: &DMatrix<f64>) -> DMatrix<f64> {
    let mut last = 0;
    for r in 0..coeff.nrows() {
        if coeff.row(r).iter().any(|&v| v != 0.0) {
            last = r;
        }
    }
    coeff.rows(0, last + 1).clone_owned()
}

/// Builds a space from explicit Chebyshev coefficient columns, trimming
/// trailing all-zero rows and rejecting dependent generators.
pub fn make_space(label: impl Into<String>, coeff: DMatrix<f64>) -> Result<PolySpace, SpaceError> {
    let label = label.into();
    let m = coeff.ncols();
    if m == 0 {
        return Err(SpaceError::InvalidSpec {
            spec: label,
            reason: "no basis functions".into(),
        });
    }
    let coeff = trim_zero_rows(&coeff);
    if matrix_rank(&coeff) < m {
        return Err(SpaceError::RankDeficient { label });
    }
    Ok(PolySpace { label, coeff })
}

/// Collocation of raw Chebyshev coefficient columns: entry (i, j) is
/// column j evaluated at the i-th point.
pub fn collocate_columns(coeff: &DMatrix<f64>, points: &[f64]) -> DMatrix<f64> {
    let mut v = DMatrix::zeros(points.len(), coeff.ncols());
    for j in 0..coeff.ncols() {
        let c: Vec<f64> = coeff.column(j).iter().copied().collect();
        for (i, &x) in points.iter().enumerate() {
            v[(i, j)] = cheb_eval(&c, x);
        }
    }
    v
}

impl PolySpace {
    /// Number of basis functions.
    pub fn dim(&self) -> usize {
        self.coeff.ncols()
    }

    /// Largest Chebyshev index present, i.e. the degree of the space.
    pub fn degree(&self) -> usize {
        self.coeff.nrows() - 1
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coeff
    }

    pub fn basis_coeffs(&self, j: usize) -> Vec<f64> {
        self.coeff.column(j).iter().copied().collect()
    }

    /// Values of all basis functions at x.
    pub fn eval_basis(&self, x: f64) -> Vec<f64> {
        (0..self.dim())
            .map(|j| cheb_eval(&self.basis_coeffs(j), x))
            .collect()
    }

    /// Collocation matrix: entry (k, j) is the j-th basis function at the
    /// k-th point.
    pub fn collocate(&self, points: &[f64]) -> DMatrix<f64> {
        collocate_columns(&self.coeff, points)
    }

    /// True when every generator already has pure parity. Cheap check used
    /// only for reporting; `parity_split` decides the general case.
    pub fn generators_have_pure_parity(&self) -> bool {
        (0..self.dim()).all(|j| {
            let col = self.coeff.column(j);
            let even = col.iter().step_by(2).any(|&v| v != 0.0);
            let odd = col.iter().skip(1).step_by(2).any(|&v| v != 0.0);
            !(even && odd)
        })
    }
}

/// Parity decomposition of a symmetric space: `even` and `odd` are bases of
/// the even/odd members, still over [-1,1] in the original variable.
/// `combine` expresses the parity basis in the user's basis:
/// coeff * combine = [even | odd] column-wise, so a vector of functionals
/// found for the parity basis maps back to the user's basis by multiplying
/// with `combine` on the left.
#[derive(Debug, Clone)]
pub struct ParitySplit {
    pub even: PolySpace,
    pub odd: PolySpace,
    pub combine: DMatrix<f64>,
}

impl ParitySplit {
    pub fn even_dim(&self) -> usize {
        self.even.dim()
    }

    pub fn odd_dim(&self) -> usize {
        self.odd.dim()
    }
}

/// Chebyshev coefficients (in t) of the half-interval rescaling u((t+1)/2),
/// given the Chebyshev coefficients (in x) of u.
///
/// Uses the images p_j of T_j under the substitution, which obey
/// p_{j+1} = p_j + T_1 p_j - p_{j-1} starting from p_0 = 1,
/// p_1 = (T_0+T_1)/2; every coefficient is a dyadic rational, so the
/// composition is exact in floating point.
pub fn shift_cheb_coeffs(coeffs: &[f64]) -> Vec<f64> {
    let n = coeffs.len();
    let mut out = vec![0.0; n.max(1)];
    if n == 0 {
        return out;
    }
    // multiplication by T_1 in the Chebyshev basis
    let mul_t1 = |q: &[f64]| -> Vec<f64> {
        let mut r = vec![0.0; q.len() + 1];
        r[1] += q[0];
        for (k, &c) in q.iter().enumerate().skip(1) {
            r[k + 1] += 0.5 * c;
            r[k - 1] += 0.5 * c;
        }
        r
    };
    let mut prev = vec![1.0]; // p_0
    out[0] += coeffs[0];
    if n == 1 {
        return out;
    }
    let mut cur = vec![0.5, 0.5]; // p_1
    for (j, &c) in coeffs.iter().enumerate().skip(1) {
        for (i, &v) in cur.iter().enumerate() {
            out[i] += c * v;
        }
        if j + 1 < n {
            let mut next = mul_t1(&cur);
            for (i, &v) in cur.iter().enumerate() {
                next[i] += v;
            }
            for (i, &v) in prev.iter().enumerate() {
                next[i] -= v;
            }
            prev = cur;
            cur = next;
        }
    }
    out
}

/// Chebyshev coefficient columns (in the rescaled variable t) of the
/// functions u_m((t+1)/2); row k multiplies T_k(t).
#[derive(Debug, Clone)]
pub struct ShiftedBasis {
    pub coeff: DMatrix<f64>,
}

impl ShiftedBasis {
    pub fn dim(&self) -> usize {
        self.coeff.ncols()
    }

    pub fn collocate(&self, points: &[f64]) -> DMatrix<f64> {
        collocate_columns(&self.coeff, points)
    }
}

/// Rescales every basis function onto the half interval: the result spans
/// the same values on [0,1] that the input spans, but parametrized over
/// t in [-1,1] via x = (t+1)/2.
pub fn shift_basis(space: &PolySpace) -> ShiftedBasis {
    let rows = space.coeff.nrows();
    let mut coeff = DMatrix::zeros(rows, space.dim());
    for j in 0..space.dim() {
        let shifted = shift_cheb_coeffs(&space.basis_coeffs(j));
        for (i, &v) in shifted.iter().enumerate() {
            coeff[(i, j)] = v;
        }
    }
    ShiftedBasis { coeff }
}

/// Splits a parity-invariant space into even and odd parts, selecting parity
/// projections of pivot generators as the new basis. Errors when the space
/// is not invariant under x -> -x, detected by the projected ranks exceeding
/// the dimension.
pub fn parity_split(space: &PolySpace) -> Result<ParitySplit, SpaceError> {
    let m = space.dim();
    let rows = space.degree() + 1;
    let mut even = space.coeff.clone();
    let mut odd = space.coeff.clone();
    for r in 0..rows {
        if r % 2 == 0 {
            odd.row_mut(r).fill(0.0);
        } else {
            even.row_mut(r).fill(0.0);
        }
    }
    let rank_e = matrix_rank(&even);
    let rank_o = matrix_rank(&odd);
    if rank_e + rank_o > m {
        return Err(SpaceError::NotSymmetric {
            label: space.label.clone(),
        });
    }

    // greedy pivoted selection: peel off the column with the largest
    // residual until the target rank is reached, then keep those columns
    // verbatim (so parity members stay recognizable projections of the
    // user's generators)
    let pick = |proj: &DMatrix<f64>, rank: usize| -> DMatrix<f64> {
        let mut chosen: Vec<usize> = Vec::new();
        let mut ortho: Vec<nalgebra::DVector<f64>> = Vec::new();
        for _ in 0..rank {
            let mut best = (usize::MAX, -1.0);
            for j in 0..proj.ncols() {
                if chosen.contains(&j) {
                    continue;
                }
                let mut r = proj.column(j).clone_owned();
                for b in &ortho {
                    let d = b.dot(&r);
                    r.axpy(-d, b, 1.0);
                }
                let n = r.norm();
                if n > best.1 {
                    best = (j, n);
                }
            }
            chosen.push(best.0);
            let mut r = proj.column(best.0).clone_owned();
            for b in &ortho {
                let d = b.dot(&r);
                r.axpy(-d, b, 1.0);
            }
            ortho.push(r.normalize());
        }
        chosen.sort_unstable();
        let mut sel = DMatrix::zeros(rows, rank);
        for (i, &j) in chosen.iter().enumerate() {
            sel.set_column(i, &proj.column(j));
        }
        sel
    };
    let even_full = pick(&even, rank_e);
    let odd_full = pick(&odd, rank_o);

    // coeff * combine = [even_full | odd_full]; coeff has full column rank
    let mut stacked = DMatrix::zeros(rows, m);
    for j in 0..even_full.ncols() {
        stacked.set_column(j, &even_full.column(j));
    }
    for j in 0..odd_full.ncols() {
        stacked.set_column(even_full.ncols() + j, &odd_full.column(j));
    }
    let svd = nalgebra::SVD::new(space.coeff.clone(), true, true);
    let combine = svd
        .solve(&stacked, RANK_TOL)
        .map_err(|_| SpaceError::RankDeficient {
            label: space.label.clone(),
        })?;

    Ok(ParitySplit {
        even: PolySpace {
            label: format!("{} (even part)", space.label),
            coeff: trim_zero_rows(&even_full),
        },
        odd: PolySpace {
            label: format!("{} (odd part)", space.label),
            coeff: trim_zero_rows(&odd_full),
        },
        combine,
    })
}

/// All polynomials of degree at most d, in the Chebyshev basis.
pub fn space_pd(d: usize) -> PolySpace {
    make_space(format!("P:{d}"), DMatrix::identity(d + 1, d + 1)).expect("identity basis")
}

/// Span of the given monomial powers x^{e_0}, x^{e_1}, ...
pub fn space_monomials(exponents: &[usize]) -> Result<PolySpace, SpaceError> {
    let label = format!(
        "mono:{}",
        exponents
            .iter()
            .map(|e| e.to_string())
            .collect::<Vec<_>>()
            .join(",")
    );
    let d = *exponents.iter().max().ok_or_else(|| SpaceError::InvalidSpec {
        spec: label.clone(),
        reason: "no basis functions".into(),
    })?;
    let mut coeff = DMatrix::zeros(d + 1, exponents.len());
    for (j, &e) in exponents.iter().enumerate() {
        let mut mono = vec![0.0; e + 1];
        mono[e] = 1.0;
        let cheb = monomial_to_cheb(&mono)?;
        for (i, &v) in cheb.iter().enumerate() {
            coeff[(i, j)] = v;
        }
    }
    make_space(label, coeff)
}

/// Span of first-kind Chebyshev polynomials T_k for the given indices.
pub fn space_cheb1(indices: &[usize]) -> Result<PolySpace, SpaceError> {
    let label = format!(
        "cheb1:{}",
        indices
            .iter()
            .map(|e| e.to_string())
            .collect::<Vec<_>>()
            .join(",")
    );
    let d = *indices.iter().max().ok_or_else(|| SpaceError::InvalidSpec {
        spec: label.clone(),
        reason: "no basis functions".into(),
    })?;
    let mut coeff = DMatrix::zeros(d + 1, indices.len());
    for (j, &k) in indices.iter().enumerate() {
        coeff[(k, j)] = 1.0;
    }
    make_space(label, coeff)
}

/// Span of second-kind Chebyshev polynomials U_k for the given indices.
pub fn space_cheb2(indices: &[usize]) -> Result<PolySpace, SpaceError> {
    let label = format!(
        "cheb2:{}",
        indices
            .iter()
            .map(|e| e.to_string())
            .collect::<Vec<_>>()
            .join(",")
    );
    let d = *indices.iter().max().ok_or_else(|| SpaceError::InvalidSpec {
        spec: label.clone(),
        reason: "no basis functions".into(),
    })?;
    let mut coeff = DMatrix::zeros(d + 1, indices.len());
    for (j, &k) in indices.iter().enumerate() {
        for (i, &v) in chebu_to_cheb(k).iter().enumerate() {
            coeff[(i, j)] = v;
        }
    }
    make_space(label, coeff)
}

/// Parses the `family:args` space mini-language used by the command line:
/// `P:5`, `mono:0,2,3`, `cheb1:0,1,4`, `cheb2:2,3`.
pub fn parse_space_spec(spec: &str) -> Result<PolySpace, SpaceError> {
    let spec_trim = spec.trim();
    let bad = |reason: &str| SpaceError::InvalidSpec {
        spec: spec_trim.to_string(),
        reason: reason.to_string(),
    };
    let (family, args) = spec_trim.split_once(':').ok_or_else(|| bad("expected family:args"))?;
    let parse_list = |s: &str| -> Result<Vec<usize>, SpaceError> {
        s.split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<usize>()
                    .map_err(|_| bad(&format!("bad index {tok:?}")))
            })
            .collect()
    };
    match family.trim() {
        "P" => {
            let d: usize = args
                .trim()
                .parse()
                .map_err(|_| bad(&format!("bad degree {args:?}")))?;
            Ok(space_pd(d))
        }
        "mono" => space_monomials(&parse_list(args)?),
        "cheb1" => space_cheb1(&parse_list(args)?),
        "cheb2" => space_cheb2(&parse_list(args)?),
        other => Err(bad(&format!("unknown family {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn full_degree_space_has_expected_shape() {
        let s = space_pd(3);
        assert_eq!(s.dim(), 4);
        assert_eq!(s.degree(), 3);
        assert_eq!(s.label(), "P:3");
        // T_2(0.3) = 2*0.09 - 1
        let vals = s.eval_basis(0.3);
        assert_abs_diff_eq!(vals[2], 2.0 * 0.09 - 1.0, epsilon = 1e-15);
    }

    #[test]
    fn monomial_space_evaluates_like_powers() {
        let s = space_monomials(&[0, 2, 3]).unwrap();
        assert_eq!(s.label(), "mono:0,2,3");
        for &x in &[-1.0, -0.4, 0.0, 0.7, 1.0] {
            let vals = s.eval_basis(x);
            assert_abs_diff_eq!(vals[0], 1.0, epsilon = 1e-14);
            assert_abs_diff_eq!(vals[1], x * x, epsilon = 1e-14);
            assert_abs_diff_eq!(vals[2], x * x * x, epsilon = 1e-14);
        }
    }

    #[test]
    fn second_kind_space_evaluates_correctly() {
        let s = space_cheb2(&[1, 3]).unwrap();
        for &x in &[-0.9, 0.2, 0.8] {
            let vals = s.eval_basis(x);
            assert_abs_diff_eq!(vals[0], crate::chebyshev::chebu_eval(1, x), epsilon = 1e-12);
            assert_abs_diff_eq!(vals[1], crate::chebyshev::chebu_eval(3, x), epsilon = 1e-12);
        }
    }

    #[test]
    fn dependent_generators_rejected() {
        // x and 3x span the same line
        let mut coeff = DMatrix::zeros(2, 2);
        coeff[(1, 0)] = 1.0;
        coeff[(1, 1)] = 3.0;
        assert_eq!(
            make_space("dup", coeff),
            Err(SpaceError::RankDeficient {
                label: "dup".into()
            })
        );
    }

    #[test]
    fn collocation_matrix_rows_are_point_evaluations() {
        let s = space_pd(2);
        let pts = [-1.0, 0.0, 1.0];
        let v = s.collocate(&pts);
        // T_0, T_1, T_2 at the three points
        let expect = [
            [1.0, -1.0, 1.0],
            [1.0, 0.0, -1.0],
            [1.0, 1.0, 1.0],
        ];
        for (k, row) in expect.iter().enumerate() {
            for (j, &e) in row.iter().enumerate() {
                assert_abs_diff_eq!(v[(k, j)], e, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn half_interval_rescaling_of_low_monomials_is_exact() {
        // 1 -> T_0; x -> (1/2)T_0 + (1/2)T_1; x^2 -> (3/8)T_0 + (1/2)T_1 + (1/8)T_2
        assert_eq!(shift_cheb_coeffs(&[1.0]), vec![1.0]);
        let x = shift_cheb_coeffs(&monomial_to_cheb(&[0.0, 1.0]).unwrap());
        assert_eq!(x, vec![0.5, 0.5]);
        let x2 = shift_cheb_coeffs(&monomial_to_cheb(&[0.0, 0.0, 1.0]).unwrap());
        assert_eq!(x2, vec![0.375, 0.5, 0.125]);
    }

    #[test]
    fn rescaled_basis_commutes_with_evaluation() {
        use rand::Rng;
        use rand::SeedableRng;
        let s = space_monomials(&[0, 1, 3, 5, 6]).unwrap();
        let shifted = shift_basis(&s);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4021);
        for _ in 0..100 {
            let t: f64 = rng.gen_range(-1.0..=1.0);
            let here = shifted.collocate(&[t]);
            let there = s.eval_basis((t + 1.0) / 2.0);
            for j in 0..s.dim() {
                assert_abs_diff_eq!(here[(0, j)], there[j], epsilon = 1e-11);
            }
        }
    }

    #[test]
    fn quadratics_split_into_even_pair_and_linear() {
        let split = parity_split(&space_pd(2)).unwrap();
        assert_eq!(split.even_dim(), 2);
        assert_eq!(split.odd_dim(), 1);
        assert_eq!(split.even.degree(), 2); // spans {T_0, T_2}
        assert_eq!(split.odd.degree(), 1);
        // combine maps the parity basis back through the user's basis
        let prod = space_pd(2).coefficients() * &split.combine;
        let even_c = split.even.coefficients();
        let odd_c = split.odd.coefficients();
        for j in 0..2 {
            for i in 0..3 {
                assert_abs_diff_eq!(prod[(i, j)], even_c[(i, j)], epsilon = 1e-12);
            }
        }
        for i in 0..2 {
            assert_abs_diff_eq!(prod[(i, 2)], odd_c[(i, 0)], epsilon = 1e-12);
        }
        assert_abs_diff_eq!(prod[(2, 2)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn mixed_basis_of_symmetric_space_still_splits() {
        // {1, 1+x} spans the same space as {1, x}
        let mut coeff = DMatrix::zeros(2, 2);
        coeff[(0, 0)] = 1.0;
        coeff[(0, 1)] = 1.0;
        coeff[(1, 1)] = 1.0;
        let s = make_space("affine", coeff).unwrap();
        let split = parity_split(&s).unwrap();
        assert_eq!(split.even_dim(), 1);
        assert_eq!(split.odd_dim(), 1);
        // sanity: the split functions really are even/odd
        for &x in &[0.3, 0.9] {
            let e = split.even.eval_basis(x)[0];
            let e_neg = split.even.eval_basis(-x)[0];
            assert_abs_diff_eq!(e, e_neg, epsilon = 1e-14);
            let o = split.odd.eval_basis(x)[0];
            let o_neg = split.odd.eval_basis(-x)[0];
            assert_abs_diff_eq!(o, -o_neg, epsilon = 1e-14);
        }
    }

    #[test]
    fn shifted_line_is_not_symmetric() {
        // span{1+x} contains neither an even nor an odd nonzero member
        let mut coeff = DMatrix::zeros(2, 1);
        coeff[(0, 0)] = 1.0;
        coeff[(1, 0)] = 1.0;
        let s = make_space("1+x", coeff).unwrap();
        assert_eq!(
            parity_split(&s).unwrap_err(),
            SpaceError::NotSymmetric {
                label: "1+x".into()
            }
        );
    }

    #[test]
    fn spec_language_round_trips() {
        assert_eq!(parse_space_spec("P:4").unwrap().label(), "P:4");
        assert_eq!(parse_space_spec(" mono: 0, 2,3 ").unwrap().label(), "mono:0,2,3");
        assert_eq!(parse_space_spec("cheb1:0,2").unwrap().label(), "cheb1:0,2");
        assert_eq!(parse_space_spec("cheb2:1").unwrap().label(), "cheb2:1");
        assert!(matches!(
            parse_space_spec("foo:1"),
            Err(SpaceError::InvalidSpec { .. })
        ));
        assert!(matches!(
            parse_space_spec("P:x"),
            Err(SpaceError::InvalidSpec { .. })
        ));
        assert!(matches!(
            parse_space_spec("mono:"),
            Err(SpaceError::InvalidSpec { .. })
        ));
    }

    #[test]
    fn cubic_space_parity_has_two_and_two() {
        let split = parity_split(&space_pd(3)).unwrap();
        assert_eq!(split.even_dim(), 2);
        assert_eq!(split.odd_dim(), 2);
        assert_eq!(split.odd.degree(), 3);
    }

    #[test]
    fn span_one_x2_x3_splits_with_even_pair() {
        let s = space_monomials(&[0, 2, 3]).unwrap();
        let split = parity_split(&s).unwrap();
        assert_eq!(split.even_dim(), 2);
        assert_eq!(split.odd_dim(), 1);
        // rescaling the odd member x^3 onto the half interval:
        // ((t+1)/2)^3 = (5/16)T_0 + (15/32)T_1 + (3/16)T_2 + (1/32)T_3
        let shifted = shift_basis(&split.odd);
        let col: Vec<f64> = shifted.coeff.column(0).iter().copied().collect();
        let expect = [5.0 / 16.0, 15.0 / 32.0, 3.0 / 16.0, 1.0 / 32.0];
        for (a, e) in col.iter().zip(expect.iter()) {
            assert_abs_diff_eq!(a, e, epsilon = 1e-15);
        }
    }
}
