//! Chebyshev polynomial utilities: Clenshaw evaluation, zero grids, basis
//! conversion, and the oversampling factor that turns a max over a Chebyshev
//! zero grid into a bound on the max over the whole interval.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ChebError {
    /// The norm-check grid is too coarse for the polynomial degree.
    #[error("invalid grid: need L > {needed} check points for degree {degree}, got {got}")]
    InvalidGrid {
        degree: usize,
        needed: usize,
        got: usize,
    },
    #[error("degree {0} exceeds the exact-conversion cap of {MAX_CONVERSION_DEGREE}")]
    DegreeTooLarge(usize),
}

/// Degree cap for exact integer-arithmetic basis conversions. Binomials up to
/// C(60,30) fit in i128 and convert to f64 without overflow.
pub const MAX_CONVERSION_DEGREE: usize = 60;

/// A polynomial stored by its coefficients against T_0, T_1, ..., T_d.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebSeries {
    pub coeffs: Vec<f64>,
}

impl ChebSeries {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    /// Degree of the stored expansion (trailing zero coefficients count).
    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn eval(&self, x: f64) -> f64 {
        cheb_eval(&self.coeffs, x)
    }
}

/// Evaluates sum_k c_k T_k(x) by the Clenshaw backward recurrence.
pub fn cheb_eval(coeffs: &[f64], x: f64) -> f64 {
    if coeffs.is_empty() {
        return 0.0;
    }
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for &c in coeffs.iter().skip(1).rev() {
        let b0 = c + 2.0 * x * b1 - b2;
        b2 = b1;
        b1 = b0;
    }
    coeffs[0] + x * b1 - b2
}

/// The L zeros of T_L, cos(pi (l - 1/2) / L), in ascending order.
///
/// The grid is exactly symmetric: entries are negated mirror images and the
/// middle entry of an odd-length grid is exactly 0.
pub fn cheb_zeros(l: usize) -> Vec<f64> {
    let mut out = vec![0.0; l];
    for j in 0..l / 2 {
        // l-j-th zero counted from the right end; cos is decreasing.
        let x = (std::f64::consts::PI * (2.0 * (j as f64) + 1.0) / (2.0 * l as f64)).cos();
        out[l - 1 - j] = x;
        out[j] = -x;
    }
    out
}

/// The L positive zeros of T_{2L}, cos(pi (l - 1/2) / (2L)), ascending.
pub fn positive_cheb_zeros(l: usize) -> Vec<f64> {
    let full = cheb_zeros(2 * l);
    full[l..].to_vec()
}

/// Oversampling factor rho = 1 / cos(pi d / (2L)): for any polynomial p of
/// degree <= d, max over [-1,1] of |p| <= rho * max over the L Chebyshev
/// zeros of |p|. Requires L > d.
pub fn oversampling_factor(d: usize, l: usize) -> Result<f64, ChebError> {
    if l <= d {
        return Err(ChebError::InvalidGrid {
            degree: d,
            needed: d,
            got: l,
        });
    }
    Ok(1.0 / (std::f64::consts::PI * d as f64 / (2.0 * l as f64)).cos())
}

fn binomial_i128(n: usize, k: usize) -> i128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut num: i128 = 1;
    for j in 0..k {
        num = num * (n - j) as i128 / (j + 1) as i128;
    }
    num
}

/// Chebyshev coefficients of the monomial x^n:
/// x^n = 2^(1-n) * sum_{j} C(n,j) T_{n-2j}, with the T_0 term halved.
/// Exact in f64 for n <= 60 (dyadic rationals with integer numerators < 2^53
/// hold up to well past the degree cap used by spaces).
fn monomial_cheb_column(n: usize) -> Vec<f64> {
    let mut col = vec![0.0; n + 1];
    if n == 0 {
        col[0] = 1.0;
        return col;
    }
    let scale = (2.0f64).powi(1 - (n as i32));
    for j in 0..=n / 2 {
        let k = n - 2 * j;
        let mut c = binomial_i128(n, j) as f64 * scale;
        if k == 0 {
            c *= 0.5;
        }
        col[k] = c;
    }
    col
}

/// Converts monomial coefficients (a_0 + a_1 x + ...) to Chebyshev
/// coefficients. Exact per-monomial columns; one rounding at the final sum.
pub fn monomial_to_cheb(mono: &[f64]) -> Result<Vec<f64>, ChebError> {
    let d = mono.len().saturating_sub(1);
    if d > MAX_CONVERSION_DEGREE {
        return Err(ChebError::DegreeTooLarge(d));
    }
    let mut out = vec![0.0; mono.len().max(1)];
    for (n, &a) in mono.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        for (k, &c) in monomial_cheb_column(n).iter().enumerate() {
            out[k] += a * c;
        }
    }
    Ok(out)
}

/// Monomial coefficient rows of T_0..T_d via the integer recurrence
/// T_{n+1} = 2x T_n - T_{n-1}.
fn cheb_monomial_table(d: usize) -> Vec<Vec<i128>> {
    let mut rows: Vec<Vec<i128>> = Vec::with_capacity(d + 1);
    rows.push(vec![1]);
    if d >= 1 {
        rows.push(vec![0, 1]);
    }
    for n in 2..=d {
        let mut row = vec![0i128; n + 1];
        for (j, &c) in rows[n - 1].iter().enumerate() {
            row[j + 1] += 2 * c;
        }
        for (j, &c) in rows[n - 2].iter().enumerate() {
            row[j] -= c;
        }
        rows.push(row);
    }
    rows
}

/// Converts Chebyshev coefficients back to monomial coefficients.
pub fn cheb_to_monomial(cheb: &[f64]) -> Result<Vec<f64>, ChebError> {
    let d = cheb.len().saturating_sub(1);
    if d > MAX_CONVERSION_DEGREE {
        return Err(ChebError::DegreeTooLarge(d));
    }
    let table = cheb_monomial_table(d);
    let mut out = vec![0.0; cheb.len().max(1)];
    for (n, &c) in cheb.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        for (j, &t) in table[n].iter().enumerate() {
            out[j] += c * t as f64;
        }
    }
    Ok(out)
}

/// Second-kind Chebyshev polynomial U_k expressed in the T basis:
/// U_k = 2(T_k + T_{k-2} + ...), with the trailing T_0 term (k even)
/// entering with coefficient 1.
pub fn chebu_to_cheb(k: usize) -> Vec<f64> {
    let mut out = vec![0.0; k + 1];
    let mut j = k as isize;
    while j >= 0 {
        out[j as usize] = if j == 0 { 1.0 } else { 2.0 };
        j -= 2;
    }
    out
}

/// Evaluates U_k(x) through the sine quotient sin((k+1)θ)/sin(θ), θ = acos x,
/// falling back to the endpoint limits U_k(±1) = (±1)^k (k+1).
pub fn chebu_eval(k: usize, x: f64) -> f64 {
    let s = (1.0 - x * x).max(0.0).sqrt();
    if s < 1e-8 {
        let sign = if x >= 0.0 { 1.0 } else { (-1.0f64).powi(k as i32) };
        return sign * (k as f64 + 1.0);
    }
    let theta = x.acos();
    ((k as f64 + 1.0) * theta).sin() / s
}
