// Probe: does the x^3-coefficient functional of the solved weights admit a
// nonnegative triple-difference representation?  Compares the full grid
// {k/K : |k| <= K} against the interior grid {k/K : |k| <= K-1}.
use projconst::space::{parse_space_spec, PolySpace};
use projconst::upper_bound::{upper_bound_with, UpperConfig};
use projconst::ToleranceConfig;

fn leading_functional(space: &PolySpace, weights: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    let coeff = space.coefficients();
    let d = coeff.nrows() - 1;
    let lead = if d == 0 { 1.0 } else { 2f64.powi(d as i32 - 1) };
    let mut a = vec![0.0; weights.ncols()];
    for (k, ak) in a.iter_mut().enumerate() {
        for j in 0..space.dim() {
            *ak += coeff[(d, j)] * lead * weights[(j, k)];
        }
    }
    a
}

// Forward substitution for D3^T y = a; returns (y, consistency residuals).
fn solve_y(a: &[f64]) -> (Vec<f64>, [f64; 3]) {
    let n = a.len();
    let mut y = vec![0.0; n - 3];
    for i in 0..n - 3 {
        let mut v = -a[i];
        if i >= 1 {
            v += 3.0 * y[i - 1];
        }
        if i >= 2 {
            v -= 3.0 * y[i - 2];
        }
        if i >= 3 {
            v += y[i - 3];
        }
        y[i] = v;
    }
    let mut checks = [0.0; 3];
    for (t, c) in checks.iter_mut().enumerate() {
        let i = n - 3 + t;
        let mut v = -a[i];
        if i >= 1 && i - 1 < n - 3 {
            v += 3.0 * y[i - 1];
        }
        if i >= 2 && i - 2 < n - 3 {
            v -= 3.0 * y[i - 2];
        }
        if i >= 3 && i - 3 < n - 3 {
            v += y[i - 3];
        }
        *c = v;
    }
    (y, checks)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let bigk: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(100);
    let l: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(48);
    let mode: String = args.get(3).cloned().unwrap_or_else(|| "sym".into());
    let tol_exp: i32 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(9);
    let space = parse_space_spec("mono:0,1,2,3").unwrap();
    let mut tol = ToleranceConfig::lp_default();
    tol.feas_tol = 10f64.powi(-tol_exp);
    tol.gap_tol = 10f64.powi(-tol_exp);
    let mut cfg = UpperConfig::new(2 * bigk + 1, l);
    match mode.as_str() {
        "gen" => cfg.symmetric = false,
        "interior" => {
            let pts: Vec<f64> = (-(bigk as i64 - 1)..=(bigk as i64 - 1))
                .map(|k| k as f64 / bigk as f64)
                .collect();
            cfg.k = pts.len();
            cfg.support_points = Some(pts);
        }
        _ => {}
    }
    let t0 = std::time::Instant::now();
    let r = upper_bound_with(&space, &cfg, &tol).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let w = r.weights.as_ref().unwrap();
    let a = leading_functional(&space, &w.weights);
    let (y, checks) = solve_y(&a);
    let (mut mi, mut mv) = (0usize, f64::INFINITY);
    for (i, &v) in y.iter().enumerate() {
        if v < mv {
            mv = v;
            mi = i;
        }
    }
    // moment defects against 1, t, t^2 on the actual support grid
    let support = &r.weights.as_ref().unwrap().support;
    let mut m = [0.0f64; 3];
    for (k, &ak) in a.iter().enumerate() {
        let t = support[k];
        m[0] += ak;
        m[1] += ak * t;
        m[2] += ak * t * t;
    }
    println!(
        "K={} l={} mode={} tol=1e-{} n={} upper={:.9} iters={} res={:.2e} [{:.1}s]",
        bigk, l, mode, tol_exp, a.len(), r.value, r.diagnostics.iterations,
        r.diagnostics.residual, secs
    );
    println!(
        "  m=({:+.3e},{:+.3e},{:+.3e})  min(y)={:.6e} at {}/{}  checks=({:.2e},{:.2e},{:.2e})",
        m[0], m[1], m[2], mv, mi, y.len(), checks[0], checks[1], checks[2]
    );
    // magnitude spectrum of the x^3 row
    let mut mags: Vec<f64> = a.iter().map(|v| v.abs()).collect();
    mags.sort_by(|p, q| q.partial_cmp(p).unwrap());
    let bands = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-8, 1e-10, 1e-12];
    let mut counts = vec![0usize; bands.len() + 1];
    for &v in &mags {
        let mut b = bands.len();
        for (i, &lo) in bands.iter().enumerate() {
            if v >= lo {
                b = i;
                break;
            }
        }
        counts[b] += 1;
    }
    println!("  |a| bands >=1e-1..: {:?}", counts);
    // atoms-only reconstruction at various thresholds: zero sub-threshold
    // weights per row, rebuild the functional, recheck moments and y
    let full = r.weights.as_ref().unwrap();
    for thr in [1e-6, 1e-4, 1e-3, 1e-2] {
        let mut wt = full.weights.clone();
        for j in 0..wt.nrows() {
            let row_max = (0..wt.ncols()).map(|k| wt[(j, k)].abs()).fold(0.0f64, f64::max);
            for k in 0..wt.ncols() {
                if wt[(j, k)].abs() <= thr * row_max {
                    wt[(j, k)] = 0.0;
                }
            }
        }
        let at = leading_functional(&space, &wt);
        let mut mt = [0.0f64; 3];
        for (k, &ak) in at.iter().enumerate() {
            let t = support[k];
            mt[0] += ak;
            mt[1] += ak * t;
            mt[2] += ak * t * t;
        }
        let (yt, _) = solve_y(&at);
        let mvt = yt.iter().cloned().fold(f64::INFINITY, f64::min);
        println!(
            "  thr={:.0e}: m=({:+.3e},{:+.3e},{:+.3e})  min(y)={:+.4e}",
            thr, mt[0], mt[1], mt[2], mvt
        );
    }
}
