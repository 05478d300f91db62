//! Renewal machinery: lifetime laws built from age-dependent rates, their
//! Laplace transforms and Malthusian roots, Bellman-Harris mean growth via
//! the renewal equation, convolution powers, and the monotone coupling of
//! jump times between ordered rates.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::AgeRate;
use crate::numerics::{bisect, integrate, RootError};

const MASS_TOL: f64 = 1e-6;
const MAX_CONV_POWER: usize = 10;

#[derive(Debug, Error)]
pub enum RenewalError {
    #[error("grid step must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("grid values must be finite, got {0}")]
    BadValue(f64),
    #[error("evaluation at t = {t} outside the grid [0, {t_max}]")]
    Extrapolation { t: f64, t_max: f64 },
    #[error("grid steps differ: {0} vs {1}")]
    StepMismatch(f64, f64),
    #[error("convolution power must lie in [1, {MAX_CONV_POWER}], got {0}")]
    PowerRange(usize),
    #[error("grid mass is {mass:.9}; the deficit {deficit:.3e} exceeds {MASS_TOL:.0e}")]
    MassDeficit { mass: f64, deficit: f64 },
    #[error("offspring mean must be finite and positive, got {0}")]
    BadOffspringMean(f64),
    #[error(transparent)]
    Root(#[from] RootError),
}

// ── functions on a uniform time grid ──

/// Nonnegative function sampled on the uniform grid `0, dt, ..., n dt`,
/// evaluated in between by linear interpolation. Used both for lifetime
/// densities and for renewal solutions.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityOnGrid {
    dt: f64,
    values: Vec<f64>,
}

impl DensityOnGrid {
    pub fn new(dt: f64, values: Vec<f64>) -> Result<Self, RenewalError> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(RenewalError::BadStep(dt));
        }
        for &v in &values {
            if !v.is_finite() {
                return Err(RenewalError::BadValue(v));
            }
        }
        Ok(DensityOnGrid { dt, values })
    }

    pub fn from_fn(dt: f64, t_max: f64, f: impl Fn(f64) -> f64) -> Result<Self, RenewalError> {
        if !(dt > 0.0) || !dt.is_finite() || !(t_max >= dt) {
            return Err(RenewalError::BadStep(dt));
        }
        let n = (t_max / dt).round() as usize;
        let values = (0..=n).map(|i| f(i as f64 * dt)).collect();
        Self::new(dt, values)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t_max(&self) -> f64 {
        (self.values.len() - 1) as f64 * self.dt
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Linear interpolation; evaluation outside the grid is an error
    /// rather than a silent extension.
    pub fn eval(&self, t: f64) -> Result<f64, RenewalError> {
        let t_max = self.t_max();
        if !(0.0..=t_max * (1.0 + 1e-12)).contains(&t) {
            return Err(RenewalError::Extrapolation { t, t_max });
        }
        let pos = (t / self.dt).min((self.values.len() - 1) as f64);
        let i = pos.floor() as usize;
        if i + 1 >= self.values.len() {
            return Ok(*self.values.last().unwrap());
        }
        let w = pos - i as f64;
        Ok(self.values[i] * (1.0 - w) + self.values[i + 1] * w)
    }

    /// Trapezoid mass over the whole grid.
    pub fn mass(&self) -> f64 {
        trapezoid(&self.values, self.dt)
    }

    pub fn mass_deficit(&self) -> f64 {
        1.0 - self.mass()
    }

    fn require_normalized(&self) -> Result<(), RenewalError> {
        let mass = self.mass();
        let deficit = (1.0 - mass).abs();
        if deficit > MASS_TOL {
            return Err(RenewalError::MassDeficit { mass, deficit });
        }
        Ok(())
    }

    /// Trapezoid cumulative integral at every grid point.
    pub fn cumulative(&self) -> Vec<f64> {
        let mut acc = Vec::with_capacity(self.values.len());
        let mut s = 0.0;
        acc.push(0.0);
        for w in self.values.windows(2) {
            s += 0.5 * (w[0] + w[1]) * self.dt;
            acc.push(s);
        }
        acc
    }

    /// Causal trapezoid convolution, truncated to this grid's length.
    /// Values beyond either input's grid never influence values inside.
    pub fn convolve(&self, other: &DensityOnGrid) -> Result<DensityOnGrid, RenewalError> {
        if (self.dt - other.dt).abs() > 1e-12 * self.dt {
            return Err(RenewalError::StepMismatch(self.dt, other.dt));
        }
        let n = self.values.len();
        let f = &self.values;
        let g = &other.values;
        let mut out = vec![0.0; n];
        for (i, o) in out.iter_mut().enumerate().skip(1) {
            let mut s = 0.5 * (f[0] * g.get(i).copied().unwrap_or(0.0)
                + f.get(i).copied().unwrap_or(0.0) * g[0]);
            for j in 1..i {
                s += f[j] * g.get(i - j).copied().unwrap_or(0.0);
            }
            *o = s * self.dt;
        }
        DensityOnGrid::new(self.dt, out)
    }

    /// Trapezoid Laplace transform; requires the grid to carry the whole
    /// unit mass, since missing tails would bias the transform.
    pub fn laplace(&self, alpha: f64) -> Result<f64, RenewalError> {
        self.require_normalized()?;
        let weighted: Vec<f64> = self
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| (-alpha * i as f64 * self.dt).exp() * v)
            .collect();
        Ok(trapezoid(&weighted, self.dt))
    }
}

fn trapezoid(values: &[f64], dt: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let inner: f64 = values[1..values.len() - 1].iter().sum();
    (inner + 0.5 * (values[0] + values[values.len() - 1])) * dt
}

/// `n`-fold convolution power of a density on its own grid.
pub fn convolution_power(f: &DensityOnGrid, n: usize) -> Result<DensityOnGrid, RenewalError> {
    if n == 0 || n > MAX_CONV_POWER {
        return Err(RenewalError::PowerRange(n));
    }
    let mut acc = f.clone();
    for _ in 1..n {
        acc = acc.convolve(f)?;
    }
    Ok(acc)
}

// ── lifetime laws ──

/// Law of the time to the next division for a cell currently at age
/// `start_age`, under an age-only rate: density
/// `b(a + s) exp(-int_a^{a+s} b)` on `s >= 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct LifetimeLaw {
    rate: AgeRate,
    start_age: f64,
}

impl LifetimeLaw {
    pub fn from_rate(rate: AgeRate) -> Self {
        LifetimeLaw { rate, start_age: 0.0 }
    }

    pub fn at_age(rate: AgeRate, start_age: f64) -> Self {
        LifetimeLaw { rate, start_age }
    }

    pub fn rate(&self) -> &AgeRate {
        &self.rate
    }

    pub fn density(&self, s: f64) -> f64 {
        if s < 0.0 {
            return 0.0;
        }
        self.rate.eval(self.start_age + s) * self.survival(s)
    }

    pub fn survival(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 1.0;
        }
        (-self.rate.integral(self.start_age, s)).exp()
    }

    /// Horizon beyond which the survival drops below roughly `exp(-46)`.
    fn horizon(&self) -> f64 {
        let mut hi = 1.0;
        while self.rate.integral(self.start_age, hi) < 46.0 && hi < 1e9 {
            hi *= 2.0;
        }
        hi
    }

    /// Laplace transform of the lifetime density. Exact for the constant
    /// rate at any age and for the linear rate from age zero; adaptive
    /// quadrature with a negligible-tail horizon otherwise.
    pub fn laplace(&self, alpha: f64) -> f64 {
        match (&self.rate, self.start_age) {
            (AgeRate::Constant(c), _) => c / (c + alpha),
            (AgeRate::AgeLinear, a) if a == 0.0 && alpha < 20.0 => {
                let z = alpha / std::f64::consts::SQRT_2;
                1.0 - alpha
                    * (0.5 * std::f64::consts::PI).sqrt()
                    * (0.5 * alpha * alpha).exp()
                    * libm::erfc(z)
            }
            _ => {
                let hi = self.horizon();
                integrate(|s| (-alpha * s).exp() * self.density(s), 0.0, hi, 1e-12)
            }
        }
    }
}

/// Solve `laplace(alpha) = target` for `alpha >= 0`; the transform is
/// strictly decreasing, so a doubling bracket plus bisection suffices.
pub fn malthusian_root(law: &LifetimeLaw, target: f64) -> Result<f64, RenewalError> {
    debug_assert!(target > 0.0 && target <= 1.0);
    let g = |alpha: f64| law.laplace(alpha) - target;
    if g(0.0) <= 0.0 {
        return Ok(0.0);
    }
    let mut hi = 1.0;
    while g(hi) > 0.0 {
        hi *= 2.0;
        if hi > 1e9 {
            return Err(RenewalError::Root(RootError::NoBracket {
                lo: 0.0,
                hi,
                flo: g(0.0),
                fhi: g(hi),
            }));
        }
    }
    Ok(bisect(g, 0.0, hi, 1e-12, 0.0)?)
}

/// Same root solve for a lifetime density given only on a grid.
pub fn malthusian_root_grid(f: &DensityOnGrid, target: f64) -> Result<f64, RenewalError> {
    let g = |alpha: f64| f.laplace(alpha).unwrap() - target;
    f.laplace(0.0)?;
    if g(0.0) <= 0.0 {
        return Ok(0.0);
    }
    let mut hi = 1.0;
    while g(hi) > 0.0 {
        hi *= 2.0;
        if hi > 1e9 {
            return Err(RenewalError::Root(RootError::NoBracket {
                lo: 0.0,
                hi,
                flo: g(0.0),
                fhi: g(hi),
            }));
        }
    }
    Ok(bisect(g, 0.0, hi, 1e-12, 0.0)?)
}

// ── growth exponents for the renewal comparison ──

/// Growth exponent of the lower comparison process: the `alpha` with
/// `laplace(alpha) = (1 + eps0)^{-1/d}` for the lower rate from age zero.
pub fn solve_alpha(b_lower: &AgeRate, eps0: f64, d: u32) -> Result<f64, RenewalError> {
    let target = (1.0 + eps0).powf(-1.0 / d as f64);
    malthusian_root(&LifetimeLaw::from_rate(b_lower.clone()), target)
}

/// Decay exponent of the upper comparison process: the `beta` with
/// `laplace(beta) = 1 / (1 + eps1)` for the upper rate from age zero.
pub fn solve_beta(b_upper: &AgeRate, eps1: f64) -> Result<f64, RenewalError> {
    let target = 1.0 / (1.0 + eps1);
    malthusian_root(&LifetimeLaw::from_rate(b_upper.clone()), target)
}

/// Exponent comparison report: the growth and decay exponents, whether
/// they are strictly ordered, and the worst-case discounted division mass
/// over starting ages (which must stay positive for the comparison to
/// bite).
#[derive(Clone, Debug)]
pub struct OrderReport {
    pub alpha: f64,
    pub beta: f64,
    pub ordered: bool,
    pub uniform_margin: f64,
}

/// Compute both exponents and the infimum over starting ages in
/// `[0, a_max]` of the alpha-discounted division mass of the lower rate.
pub fn check_order(
    b_lower: &AgeRate,
    b_upper: &AgeRate,
    eps0: f64,
    d: u32,
    eps1: f64,
    a_max: f64,
) -> Result<OrderReport, RenewalError> {
    let alpha = solve_alpha(b_lower, eps0, d)?;
    let beta = solve_beta(b_upper, eps1)?;
    let mut margin = f64::INFINITY;
    let steps = 64;
    for i in 0..=steps {
        let a = a_max * i as f64 / steps as f64;
        let v = LifetimeLaw::at_age(b_lower.clone(), a).laplace(alpha);
        margin = margin.min(v);
    }
    Ok(OrderReport { alpha, beta, ordered: beta < alpha, uniform_margin: margin })
}

// ── Bellman-Harris mean growth ──

/// Mean population size of a Bellman-Harris process with the given
/// lifetime law and mean offspring count, on the grid `0, dt, ..., t_max`,
/// by forward stepping of the renewal equation
/// `m = survival + gamma (density * m)`.
pub fn bh_mean(
    law: &LifetimeLaw,
    offspring_mean: f64,
    t_max: f64,
    dt: f64,
) -> Result<DensityOnGrid, RenewalError> {
    if !(offspring_mean > 0.0) || !offspring_mean.is_finite() {
        return Err(RenewalError::BadOffspringMean(offspring_mean));
    }
    if !(dt > 0.0) || !(t_max >= dt) {
        return Err(RenewalError::BadStep(dt));
    }
    let n = (t_max / dt).round() as usize;
    let f: Vec<f64> = (0..=n).map(|i| law.density(i as f64 * dt)).collect();
    let surv: Vec<f64> = (0..=n).map(|i| law.survival(i as f64 * dt)).collect();
    let mut m = vec![0.0; n + 1];
    m[0] = 1.0;
    let g = offspring_mean;
    for i in 1..=n {
        let mut conv = 0.5 * f[i] * m[0];
        for j in 1..i {
            conv += f[j] * m[i - j];
        }
        m[i] = (surv[i] + g * dt * conv) / (1.0 - 0.5 * g * dt * f[0]);
    }
    DensityOnGrid::new(dt, m)
}

/// Partial series for the same mean: the sum over generation counts
/// `r < r_max` of `gamma^r` times the probability of exactly `r` completed
/// divisions by each grid time. Converges to the renewal solution as
/// `r_max` grows; useful as an independent cross-check at small times.
pub fn bh_mean_series(
    law: &LifetimeLaw,
    offspring_mean: f64,
    r_max: usize,
    t_max: f64,
    dt: f64,
) -> Result<DensityOnGrid, RenewalError> {
    if !(offspring_mean > 0.0) || !offspring_mean.is_finite() {
        return Err(RenewalError::BadOffspringMean(offspring_mean));
    }
    if r_max == 0 || r_max > MAX_CONV_POWER {
        return Err(RenewalError::PowerRange(r_max));
    }
    let f = DensityOnGrid::from_fn(dt, t_max, |s| law.density(s))?;
    let surv = DensityOnGrid::from_fn(dt, t_max, |s| law.survival(s))?;
    let mut total: Vec<f64> = surv.values().to_vec();
    let mut power = None::<DensityOnGrid>;
    for r in 1..r_max {
        let p = match power {
            None => f.clone(),
            Some(prev) => prev.convolve(&f)?,
        };
        let term = p.convolve(&surv)?;
        let weight = offspring_mean.powi(r as i32);
        for (t, &v) in total.iter_mut().zip(term.values()) {
            *t += weight * v;
        }
        power = Some(p);
    }
    DensityOnGrid::new(dt, total)
}

/// Largest absolute residual, over the grid, of the counting identity
/// that the first `n` occupation probabilities sum to the survival of the
/// `n`-th division time:
/// `sum_{r<n} (f^{*r} * survival)(t) = 1 - int_0^t f^{*n}`.
pub fn counting_identity_residual(
    law: &LifetimeLaw,
    n: usize,
    t_max: f64,
    dt: f64,
) -> Result<f64, RenewalError> {
    if n == 0 || n > MAX_CONV_POWER {
        return Err(RenewalError::PowerRange(n));
    }
    let f = DensityOnGrid::from_fn(dt, t_max, |s| law.density(s))?;
    let surv = DensityOnGrid::from_fn(dt, t_max, |s| law.survival(s))?;
    let mut lhs: Vec<f64> = surv.values().to_vec();
    let mut power = f.clone();
    for _ in 1..n {
        let term = power.convolve(&surv)?;
        for (l, &v) in lhs.iter_mut().zip(term.values()) {
            *l += v;
        }
        power = power.convolve(&f)?;
    }
    let tail: Vec<f64> = power.cumulative().iter().map(|&c| 1.0 - c).collect();
    let mut worst = 0.0f64;
    for (&l, &r) in lhs.iter().zip(&tail) {
        worst = worst.max((l - r).abs());
    }
    Ok(worst)
}

// ── monotone coupling of jump chains ──

/// Jump times of two renewal chains driven by the same uniforms, one per
/// jump. When the first rate is pointwise below the second, every jump of
/// the first chain happens no earlier than the matching jump of the
/// second.
pub fn coupled_jump_times(
    b_slow: &AgeRate,
    b_fast: &AgeRate,
    jumps: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, Vec<f64>) {
    let mut t_slow = Vec::with_capacity(jumps);
    let mut t_fast = Vec::with_capacity(jumps);
    let mut acc_slow = 0.0;
    let mut acc_fast = 0.0;
    for _ in 0..jumps {
        let u: f64 = rng.gen();
        acc_slow += b_slow.waiting_time_from_age(0.0, u);
        acc_fast += b_fast.waiting_time_from_age(0.0, u);
        t_slow.push(acc_slow);
        t_fast.push(acc_fast);
    }
    (t_slow, t_fast)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;
    use approx::assert_relative_eq;

    #[test]
    fn grid_eval_interpolates_and_rejects_extrapolation() {
        let f = DensityOnGrid::new(0.5, vec![0.0, 1.0, 4.0]).unwrap();
        assert_relative_eq!(f.eval(0.25).unwrap(), 0.5);
        assert_relative_eq!(f.eval(0.75).unwrap(), 2.5);
        assert_relative_eq!(f.eval(1.0).unwrap(), 4.0);
        assert!(matches!(f.eval(1.01), Err(RenewalError::Extrapolation { .. })));
        assert!(matches!(f.eval(-0.1), Err(RenewalError::Extrapolation { .. })));
    }

    #[test]
    fn grid_laplace_requires_full_mass() {
        let short = DensityOnGrid::from_fn(1e-3, 2.0, |s| (-s).exp()).unwrap();
        assert!(matches!(short.laplace(1.0), Err(RenewalError::MassDeficit { .. })));
        let full = DensityOnGrid::from_fn(1e-3, 30.0, |s| (-s).exp()).unwrap();
        assert_relative_eq!(full.laplace(1.0).unwrap(), 0.5, max_relative = 1e-6);
    }

    #[test]
    fn convolution_of_exponentials_gives_erlang() {
        let f = DensityOnGrid::from_fn(1e-3, 8.0, |s| (-s).exp()).unwrap();
        let f2 = convolution_power(&f, 2).unwrap();
        for t in [0.5, 1.0, 3.0, 7.0] {
            assert_relative_eq!(f2.eval(t).unwrap(), t * (-t).exp(), epsilon = 1e-6);
        }
        let f3 = convolution_power(&f, 3).unwrap();
        assert_relative_eq!(f3.eval(2.0).unwrap(), 2.0 * (-2.0f64).exp(), epsilon = 1e-6);
        assert!(matches!(convolution_power(&f, 0), Err(RenewalError::PowerRange(0))));
        assert!(matches!(convolution_power(&f, 11), Err(RenewalError::PowerRange(11))));
    }

    #[test]
    fn convolution_requires_matching_steps() {
        let a = DensityOnGrid::from_fn(1e-2, 1.0, |_| 1.0).unwrap();
        let b = DensityOnGrid::from_fn(2e-2, 1.0, |_| 1.0).unwrap();
        assert!(matches!(a.convolve(&b), Err(RenewalError::StepMismatch(..))));
    }

    #[test]
    fn laplace_closed_forms_match_quadrature() {
        let linear = LifetimeLaw::from_rate(AgeRate::AgeLinear);
        // Independently computed reference for the linear rate at alpha = 1.
        assert_relative_eq!(linear.laplace(1.0), 0.344320457581201, max_relative = 1e-12);
        let quad = integrate(|s| (-s).exp() * linear.density(s), 0.0, 40.0, 1e-13);
        assert_relative_eq!(linear.laplace(1.0), quad, max_relative = 1e-9);

        let constant = LifetimeLaw::from_rate(AgeRate::Constant(2.0));
        assert_relative_eq!(constant.laplace(3.0), 0.4);

        let aged = LifetimeLaw::at_age(AgeRate::AgeLinear, 1.5);
        let quad_aged = integrate(|s| (-0.7 * s).exp() * aged.density(s), 0.0, 40.0, 1e-13);
        assert_relative_eq!(aged.laplace(0.7), quad_aged, max_relative = 1e-9);
    }

    #[test]
    fn malthusian_root_inverts_the_transform() {
        let law = LifetimeLaw::from_rate(AgeRate::Constant(2.0));
        assert_relative_eq!(malthusian_root(&law, 1.0 / 3.0).unwrap(), 4.0, epsilon = 1e-10);

        let linear = LifetimeLaw::from_rate(AgeRate::AgeLinear);
        let alpha = malthusian_root(&linear, 0.344320457581201).unwrap();
        assert_relative_eq!(alpha, 1.0, epsilon = 1e-9);

        let f = DensityOnGrid::from_fn(1e-3, 35.0, |s| (-s).exp()).unwrap();
        let root = malthusian_root_grid(&f, 0.5).unwrap();
        assert_relative_eq!(root, 1.0, epsilon = 1e-4);
    }

    #[test]
    fn growth_exponent_matches_closed_form_for_constant_rates() {
        let b1 = 0.7;
        let eps0 = 1.410189182467;
        let d = 3;
        let alpha = solve_alpha(&AgeRate::Constant(b1), eps0, d).unwrap();
        let expected = b1 * ((1.0 + eps0).powf(1.0 / d as f64) - 1.0);
        assert_relative_eq!(alpha, expected, epsilon = 1e-10);

        let eps1 = 0.3;
        let beta = solve_beta(&AgeRate::Constant(2.0), eps1).unwrap();
        assert_relative_eq!(beta, 2.0 * eps1, epsilon = 1e-10);
    }

    #[test]
    fn order_report_for_bracketed_constant_rates() {
        let rep = check_order(
            &AgeRate::Constant(1.0),
            &AgeRate::Constant(2.0),
            1.0,
            1,
            0.2,
            50.0,
        )
        .unwrap();
        assert_relative_eq!(rep.alpha, 1.0, epsilon = 1e-10);
        assert_relative_eq!(rep.beta, 0.4, epsilon = 1e-10);
        assert!(rep.ordered);
        assert_relative_eq!(rep.uniform_margin, 0.5, epsilon = 1e-10);

        let bad = check_order(
            &AgeRate::Constant(1.0),
            &AgeRate::Constant(2.0),
            0.1,
            1,
            5.0,
            50.0,
        )
        .unwrap();
        assert!(!bad.ordered);
    }

    #[test]
    fn bh_mean_is_constant_at_unit_offspring() {
        let law = LifetimeLaw::from_rate(AgeRate::AgeLinear);
        let m = bh_mean(&law, 1.0, 4.0, 1e-3).unwrap();
        for &v in m.values() {
            assert!((v - 1.0).abs() < 1e-6, "m = {v}");
        }
    }

    #[test]
    fn bh_mean_matches_exponential_growth_for_constant_rate() {
        let law = LifetimeLaw::from_rate(AgeRate::Constant(1.0));
        let m = bh_mean(&law, 2.0, 5.0, 1e-3).unwrap();
        let mut worst = 0.0f64;
        for (i, &v) in m.values().iter().enumerate() {
            let t = i as f64 * 1e-3;
            worst = worst.max((v - t.exp()).abs() / t.exp());
        }
        assert!(worst < 1e-3, "worst relative error {worst}");
    }

    #[test]
    fn bh_series_agrees_with_renewal_solution_at_small_times() {
        let law = LifetimeLaw::from_rate(AgeRate::Constant(1.0));
        let dt = 1e-3;
        let m = bh_mean(&law, 2.0, 1.5, dt).unwrap();
        let s = bh_mean_series(&law, 2.0, 10, 1.5, dt).unwrap();
        let tail_m = m.eval(1.5).unwrap();
        let tail_s = s.eval(1.5).unwrap();
        assert_relative_eq!(tail_m, tail_s, max_relative = 1e-2);
        assert_relative_eq!(m.eval(0.5).unwrap(), s.eval(0.5).unwrap(), max_relative = 1e-6);
    }

    #[test]
    fn counting_identity_holds_on_the_grid() {
        let law = LifetimeLaw::from_rate(AgeRate::Constant(1.0));
        let res = counting_identity_residual(&law, 2, 4.0, 2e-3).unwrap();
        assert!(res < 1e-5, "residual {res}");
    }

    #[test]
    fn coupled_jumps_preserve_rate_order() {
        let slow = AgeRate::AgeLinear;
        let fast = AgeRate::Poly(vec![1.0, 1.0]);
        let mut rng = StreamKey::root(7).rng();
        for _ in 0..200 {
            let (t_slow, t_fast) = coupled_jump_times(&slow, &fast, 30, &mut rng);
            for (a, b) in t_slow.iter().zip(&t_fast) {
                assert!(a >= b, "slow chain jumped earlier: {a} < {b}");
            }
        }
    }
}
