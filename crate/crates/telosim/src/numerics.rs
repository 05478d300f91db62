//! Small numerical routines shared across the toolkit: adaptive quadrature,
//! bracketed root finding, and a few statistics helpers.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RootError {
    #[error("no sign change on [{lo}, {hi}]: f(lo) = {flo:.6e}, f(hi) = {fhi:.6e}")]
    NoBracket { lo: f64, hi: f64, flo: f64, fhi: f64 },
    #[error("root finder failed to converge after {0} iterations")]
    NoConvergence(usize),
}

/// Adaptive Simpson quadrature on [a, b] with absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1)
                + recurse(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1)
        }
    }
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(&f, a, fa, b, fb);
    recurse(&f, a, fa, b, fb, m, fm, whole, tol, 48)
}

/// Adaptive Simpson over [a, b] split into fixed panels first, so sharply
/// localised integrands on long intervals are not missed by the three
/// initial probes.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    let panels = 16;
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|i| adaptive_simpson(&f, a + i as f64 * h, a + (i + 1) as f64 * h, tol / panels as f64))
        .sum()
}

/// Bisection on a bracketing interval, run until the interval is shorter
/// than `xtol` or `f` is within `ftol` of zero.
pub fn bisect<F: Fn(f64) -> f64>(
    f: F,
    mut lo: f64,
    mut hi: f64,
    xtol: f64,
    ftol: f64,
) -> Result<f64, RootError> {
    let (mut flo, fhi) = (f(lo), f(hi));
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(RootError::NoBracket { lo, hi, flo, fhi });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fmid = f(mid);
        if fmid.abs() <= ftol || hi - lo <= xtol {
            return Ok(mid);
        }
        if fmid.signum() == flo.signum() {
            lo = mid;
            flo = fmid;
        } else {
            hi = mid;
        }
    }
    Err(RootError::NoConvergence(200))
}

/// Sample mean and its standard error.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, f64::INFINITY);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

/// Mean and standard error from streaming moments (count, sum, sum of squares).
pub fn mean_se_from_moments(n: u64, sum: f64, sum_sq: f64) -> (f64, f64) {
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let nf = n as f64;
    let mean = sum / nf;
    if n == 1 {
        return (mean, f64::INFINITY);
    }
    let var = ((sum_sq - sum * sum / nf) / (nf - 1.0)).max(0.0);
    (mean, (var / nf).sqrt())
}

/// Ordinary least squares fit y = intercept + slope * x.
/// Returns (slope, intercept, standard error of the slope).
pub fn ols_line(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    assert!(n >= 3.0, "need at least 3 points for a slope with an error bar");
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let se = (rss / (n - 2.0) / sxx).sqrt();
    (slope, intercept, se)
}

/// Two-sided Kolmogorov-Smirnov statistic of `samples` against the model
/// CDF `cdf`. `samples` need not be sorted.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, s) in sorted.iter().enumerate() {
        let model = cdf(*s);
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((model - lo).abs()).max((hi - model).abs());
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn simpson_integrates_smooth_functions() {
        let v = adaptive_simpson(|x| x * x, 0.0, 3.0, 1e-12);
        assert_relative_eq!(v, 9.0, max_relative = 1e-11);
        let v = adaptive_simpson(f64::exp, 0.0, 1.0, 1e-12);
        assert_relative_eq!(v, std::f64::consts::E - 1.0, max_relative = 1e-11);
        let v = adaptive_simpson(|x| (-x * x / 2.0).exp(), 0.0, 40.0, 1e-12);
        assert_relative_eq!(v, (std::f64::consts::PI / 2.0).sqrt(), max_relative = 1e-10);
    }

    #[test]
    fn bisect_finds_roots_and_reports_bad_brackets() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-14, 0.0).unwrap();
        assert_relative_eq!(r, std::f64::consts::SQRT_2, max_relative = 1e-12);
        assert!(matches!(
            bisect(|x| x * x + 1.0, -1.0, 1.0, 1e-12, 0.0),
            Err(RootError::NoBracket { .. })
        ));
    }

    #[test]
    fn mean_se_matches_direct_computation() {
        let vals = [1.0, 2.0, 3.0, 4.0];
        let (m, se) = mean_se(&vals);
        assert_relative_eq!(m, 2.5);
        assert_relative_eq!(se, (5.0 / 3.0 / 4.0_f64).sqrt());
        let (m2, se2) = mean_se_from_moments(4, 10.0, 30.0);
        assert_relative_eq!(m, m2);
        assert_relative_eq!(se, se2, max_relative = 1e-12);
    }

    #[test]
    fn ols_recovers_exact_line() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 + 2.0 * x).collect();
        let (slope, intercept, se) = ols_line(&xs, &ys);
        assert_relative_eq!(slope, 2.0, max_relative = 1e-12);
        assert_relative_eq!(intercept, 3.0, max_relative = 1e-12);
        assert!(se < 1e-12);
    }

    #[test]
    fn ks_statistic_detects_fit_and_misfit() {
        // Deterministic uniform grid against the uniform CDF: D = 1/(2n).
        let n = 1000;
        let samples: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let d = ks_statistic(&samples, |x| x.clamp(0.0, 1.0));
        assert_relative_eq!(d, 0.5 / n as f64, max_relative = 1e-9);
        // Same samples against a badly wrong CDF.
        let d = ks_statistic(&samples, |x| (x * x * x).clamp(0.0, 1.0));
        assert!(d > 0.3);
    }
}
