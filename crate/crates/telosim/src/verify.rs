//! Numerical certificates for the two structural conditions behind the
//! growth theory: a multi-step expansion bound on a compact renewal box,
//! and a Lyapunov contraction bound for mass escaping a larger box. Both
//! are checked by unbiased Monte Carlo with three-standard-error margins;
//! the contraction factor has closed forms for the built-in presets.

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{CellState, ModelError, ModelSpec, PairLaw, Preset};
use crate::numerics::{bisect, mean_se_from_moments, RootError};
use crate::renewal::{solve_alpha, solve_beta, LifetimeLaw, RenewalError};
use crate::rng::{purpose, StreamKey};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("lambda0 must be positive and finite, got {0}")]
    BadLambda0(f64),
    #[error("return level must be at least 1, got {0}")]
    BadReturnLevel(f64),
    #[error("the escape box edge {box_hi} must exceed Delta + delta = {need}; the construction degenerates otherwise")]
    BoxTooSmall { box_hi: f64, need: f64 },
    #[error("the birth rate carries no age-only brackets, so the exponent comparison cannot run")]
    NoBrackets,
    #[error("no return level up to {0} brings the contraction factor under the target")]
    NoReturnLevel(f64),
    #[error("point has {got} coordinates, model needs {need}")]
    BadPoint { got: usize, need: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Renewal(#[from] RenewalError),
    #[error(transparent)]
    Root(#[from] RootError),
}

// ── the Lyapunov function ──

/// `V(x) = exp(lambda0 * sum_i max(x_i - kink, 0))`: equal to one on the
/// box `[0, kink]^{2k}` and exponentially growing beyond it.
#[derive(Clone, Copy, Debug)]
pub struct LyapunovFunction {
    lambda0: f64,
    kink: f64,
}

impl LyapunovFunction {
    pub fn log_eval(&self, x: &[f64]) -> f64 {
        self.lambda0 * x.iter().map(|&v| (v - self.kink).max(0.0)).sum::<f64>()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.log_eval(x).exp()
    }

    pub fn kink(&self) -> f64 {
        self.kink
    }

    pub fn lambda0(&self) -> f64 {
        self.lambda0
    }

    pub fn is_flat_at(&self, x: &[f64]) -> bool {
        x.iter().all(|&v| v <= self.kink)
    }
}

// ── the contraction factor ──

/// Worst-case mean exponential gain of one division over the coordinates
/// near the escape edge. `certified` says the value came from a closed
/// form rather than a finite search.
#[derive(Clone, Copy, Debug)]
pub struct CapitalLambda {
    pub value: f64,
    pub certified: bool,
}

/// Contraction factor at tilt `lambda` and return level `l`: the supremum
/// over pre-division states of the expected product, over lengthened
/// coordinates above `b_max l - 2 Delta - delta`, of the exponential
/// moment of their gain.
pub fn capital_lambda(model: &ModelSpec, lambda: f64, l: f64) -> Result<CapitalLambda, VerifyError> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(VerifyError::BadLambda0(lambda));
    }
    if !(l >= 1.0) {
        return Err(VerifyError::BadReturnLevel(l));
    }
    let dim = model.dim() as i32;
    let h = model.lengthening();
    let delta_cap = h.bound();
    let delta = model.shortening().bound();
    let edge = model.renewal().b_max * l - 2.0 * delta_cap - delta;
    match model.preset() {
        Preset::Model1 { .. } => {
            // All coordinates are lengthened and the gain shrinks with
            // length, so the supremum sits at the edge itself.
            let factor = h.mgf(edge.max(-1.0), lambda);
            Ok(CapitalLambda { value: factor.powi(dim), certified: true })
        }
        Preset::Model2 { q0, x_scale, p } => {
            let mgf = h.mgf(0.0, lambda);
            let q_sup = if edge > 0.0 {
                q0 * (1.0 + edge / x_scale).powf(-p)
            } else {
                *q0
            };
            Ok(CapitalLambda { value: (1.0 + q_sup * (mgf - 1.0)).powi(dim), certified: true })
        }
        Preset::Custom => {
            let value = search_capital_lambda(model, lambda, edge)?;
            Ok(CapitalLambda { value, certified: false })
        }
    }
}

/// Finite random search over pre-division state pairs; a lower bound on
/// the true supremum, reported as non-certified.
fn search_capital_lambda(model: &ModelSpec, lambda: f64, edge: f64) -> Result<f64, VerifyError> {
    use rand::Rng;
    let dim = model.dim();
    let h = model.lengthening();
    let delta_cap = h.bound();
    let mut rng = StreamKey::root(0xC0FFEE).child(purpose::VERIFY).rng();
    let mut best = 0.0f64;
    for _ in 0..512 {
        let r: Vec<f64> = (0..dim)
            .map(|_| edge - 2.0 * delta_cap + 8.0 * delta_cap * rng.gen::<f64>())
            .collect();
        let s: Vec<f64> = (0..dim)
            .map(|_| 2.0 * model.renewal().b_max * rng.gen::<f64>())
            .collect();
        let factors: Vec<f64> = r
            .iter()
            .map(|&ri| if ri > edge { h.mgf(ri, lambda) } else { 1.0 })
            .collect();
        let value = match model.pairs() {
            PairLaw::AllCoordinates => factors.iter().product(),
            PairLaw::PerCoordinate { q } => r
                .iter()
                .zip(&factors)
                .map(|(&ri, &f)| 1.0 + q(ri) * (f - 1.0))
                .product(),
            PairLaw::Custom { .. } => {
                let mut total = 0.0;
                for j_mask in 0..(1u64 << dim) {
                    let mut prod = 0.0;
                    for m_mask in 0..(1u64 << dim) {
                        prod += model.pairs().joint(j_mask, m_mask, &r, &s);
                    }
                    for (c, &f) in factors.iter().enumerate() {
                        if (j_mask >> c) & 1 == 1 {
                            prod *= f;
                        }
                    }
                    total += prod;
                }
                total
            }
        };
        best = best.max(value);
    }
    Ok(best)
}

// ── the contraction certificate ──

/// The Lyapunov function together with every constant the escape bound
/// needs: the tilt, the return level, the escape box edge, the achieved
/// contraction allowance `eps1`, and the local comparability constant.
#[derive(Clone, Debug)]
pub struct LyapunovCertificate {
    pub v: LyapunovFunction,
    pub lambda0: f64,
    pub l: f64,
    /// Upper corner of the escape box `[0, box_hi]^{2k}`.
    pub box_hi: f64,
    pub eps1: f64,
    pub v_min: f64,
    pub c_v: f64,
    pub lambda_factor: CapitalLambda,
    pub g_laplace: f64,
}

/// Assemble the Lyapunov certificate at tilt `lambda0` and return level
/// `l`. The escape box must leave room for one full division jump.
pub fn lyapunov_build(model: &ModelSpec, lambda0: f64, l: f64) -> Result<LyapunovCertificate, VerifyError> {
    if !(lambda0 > 0.0) || !lambda0.is_finite() {
        return Err(VerifyError::BadLambda0(lambda0));
    }
    if !(l >= 1.0) || !l.is_finite() {
        return Err(VerifyError::BadReturnLevel(l));
    }
    let delta = model.shortening().bound();
    let delta_cap = model.lengthening().bound();
    let box_hi = model.renewal().b_max * l;
    if box_hi <= delta_cap + delta {
        return Err(VerifyError::BoxTooSmall { box_hi, need: delta_cap + delta });
    }
    let lambda_factor = capital_lambda(model, lambda0, l)?;
    let g_laplace = model.shortening().laplace(lambda0);
    let eps1 = (1.0 + g_laplace) * lambda_factor.value - 1.0;
    let reach = delta.max(delta_cap);
    Ok(LyapunovCertificate {
        v: LyapunovFunction { lambda0, kink: box_hi - delta_cap - delta },
        lambda0,
        l,
        box_hi,
        eps1,
        v_min: 1.0,
        c_v: (model.dim() as f64 * lambda0 * reach).exp(),
        lambda_factor,
        g_laplace,
    })
}

impl LyapunovCertificate {
    /// Sampled check that moving any point by at most one jump reach in
    /// the sup norm changes the Lyapunov value by at most `c_v`. Returns
    /// the worst observed ratio.
    pub fn ratio_bound_check(&self, model: &ModelSpec, samples: usize, key: StreamKey) -> (f64, bool) {
        use rand::Rng;
        let reach = model.shortening().bound().max(model.lengthening().bound());
        let dim = model.dim();
        let mut rng = key.child(purpose::VERIFY).rng();
        let mut worst = 0.0f64;
        for _ in 0..samples {
            let x: Vec<f64> = (0..dim).map(|_| 2.0 * self.box_hi * rng.gen::<f64>()).collect();
            let y: Vec<f64> = x
                .iter()
                .map(|&v| (v + reach * (2.0 * rng.gen::<f64>() - 1.0)).max(0.0))
                .collect();
            let ratio = (self.v.log_eval(&y) - self.v.log_eval(&x)).exp();
            worst = worst.max(ratio);
        }
        (worst, worst <= self.c_v * (1.0 + 1e-12))
    }
}

// ── Monte Carlo expansion certificate ──

#[derive(Clone, Debug)]
pub struct ExpansionPoint {
    pub x: Vec<f64>,
    pub estimate: f64,
    pub se: f64,
}

/// Estimates of the `d`-step in-box mean offspring count, one per start
/// point, each required to clear `1 + eps0` by three standard errors.
#[derive(Clone, Debug)]
pub struct RenewalCertificate {
    pub points: Vec<ExpansionPoint>,
    pub d: u32,
    pub threshold: f64,
    pub weight_cap: f64,
    pub passed: bool,
}

/// Unbiased single-line estimator of the `d`-fold composition of the
/// in-box division kernel applied to the renewal box indicator: follow
/// one daughter per generation, weight `2^d`, kill the line when it
/// leaves `[0, b_max]^{2k}` or senesces.
pub fn verify_renewal_expansion(
    model: &ModelSpec,
    points: &[Vec<f64>],
    paths_per_point: usize,
    key: StreamKey,
) -> Result<RenewalCertificate, VerifyError> {
    let scheme = *model.renewal();
    let weight = (2.0f64).powi(scheme.d as i32);
    let base = key.child(purpose::VERIFY);
    let mut out = Vec::with_capacity(points.len());
    for (pi, x0) in points.iter().enumerate() {
        if x0.len() != model.dim() {
            return Err(VerifyError::BadPoint { got: x0.len(), need: model.dim() });
        }
        let point_key = base.child(pi as u64);
        let mut hits = 0u64;
        for path in 0..paths_per_point {
            let mut rng = point_key.child(path as u64).rng();
            if follow_in_box_line(model, x0, scheme.d, scheme.b_max, scheme.renew_hi, &mut rng)? {
                hits += 1;
            }
        }
        let p = hits as f64 / paths_per_point as f64;
        let se = weight * (p * (1.0 - p) / paths_per_point as f64).sqrt();
        out.push(ExpansionPoint { x: x0.clone(), estimate: weight * p, se });
    }
    let threshold = 1.0 + scheme.eps0;
    let passed = out.iter().all(|p| p.estimate - 3.0 * p.se >= threshold);
    Ok(RenewalCertificate { points: out, d: scheme.d, threshold, weight_cap: weight, passed })
}

fn follow_in_box_line(
    model: &ModelSpec,
    x0: &[f64],
    d: u32,
    b_max: f64,
    renew_hi: f64,
    rng: &mut ChaCha8Rng,
) -> Result<bool, VerifyError> {
    let mut x = x0.to_vec();
    for _ in 0..d {
        match model.kernel_sample_daughter(&x, rng)? {
            CellState::Alive { x: y, .. } => {
                if y.iter().any(|&c| c > b_max) {
                    return Ok(false);
                }
                x = y.as_slice().to_vec();
            }
            CellState::Senescent { .. } => return Ok(false),
        }
    }
    Ok(x.iter().all(|&c| c <= renew_hi))
}

/// Ten representative start points spanning the renewal box.
pub fn default_expansion_grid(model: &ModelSpec) -> Vec<Vec<f64>> {
    let r = model.renewal().renew_hi;
    let dim = model.dim();
    let diag = |c: f64| vec![c; dim];
    let single = |c: f64, at: usize| {
        let mut v = vec![0.0; dim];
        v[at] = c;
        v
    };
    let mut split = vec![r / 4.0; dim];
    for s in split.iter_mut().skip(dim / 2) {
        *s = 3.0 * r / 4.0;
    }
    vec![
        diag(0.0),
        diag(r / 4.0),
        diag(r / 2.0),
        diag(3.0 * r / 4.0),
        diag(r),
        single(r, 0),
        single(r, dim - 1),
        single(r / 2.0, 0),
        single(r / 2.0, dim - 1),
        split,
    ]
}

// ── Monte Carlo contraction check ──

#[derive(Clone, Debug)]
pub struct ContractionPoint {
    pub x: Vec<f64>,
    /// Estimate of the mean Lyapunov mass sent outside the escape box.
    pub lhs: f64,
    pub se: f64,
    pub v_x: f64,
    /// Whether the point sits deep enough that no single jump can leave
    /// the box, making the estimate exactly zero.
    pub no_escape: bool,
}

#[derive(Clone, Debug)]
pub struct ContractionReport {
    pub points: Vec<ContractionPoint>,
    pub eps1: f64,
    pub passed: bool,
}

impl ContractionReport {
    /// Would the bound hold with allowance `eps1`, judging every point by
    /// its estimate plus three standard errors?
    pub fn passes_with(&self, eps1: f64) -> bool {
        self.points
            .iter()
            .all(|p| p.lhs + 3.0 * p.se <= (1.0 + eps1) * p.v_x + 1e-12)
    }

    /// Is the bound with allowance `eps1` refuted by at least three
    /// standard errors somewhere?
    pub fn fails_decisively_with(&self, eps1: f64) -> bool {
        self.points.iter().any(|p| p.lhs - 3.0 * p.se > (1.0 + eps1) * p.v_x)
    }
}

/// Estimate, at each point, twice the expected Lyapunov value of an alive
/// daughter landing outside the escape box, and compare with
/// `(1 + eps1) V(x)`.
pub fn check_exit_contraction(
    model: &ModelSpec,
    cert: &LyapunovCertificate,
    points: &[Vec<f64>],
    paths_per_point: usize,
    key: StreamKey,
) -> Result<ContractionReport, VerifyError> {
    let base = key.child(purpose::VERIFY).child(1);
    let delta_cap = model.lengthening().bound();
    let mut out = Vec::with_capacity(points.len());
    for (pi, x0) in points.iter().enumerate() {
        if x0.len() != model.dim() {
            return Err(VerifyError::BadPoint { got: x0.len(), need: model.dim() });
        }
        let no_escape = x0.iter().all(|&c| c <= cert.box_hi - delta_cap);
        let point_key = base.child(pi as u64);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for path in 0..paths_per_point {
            let mut rng = point_key.child(path as u64).rng();
            let value = match model.kernel_sample_daughter(x0, &mut rng)? {
                CellState::Alive { x: y, .. } if y.iter().any(|&c| c > cert.box_hi) => {
                    2.0 * cert.v.eval(&y)
                }
                _ => 0.0,
            };
            sum += value;
            sum_sq += value * value;
        }
        let (mean, se) = mean_se_from_moments(paths_per_point as u64, sum, sum_sq);
        out.push(ContractionPoint { x: x0.clone(), lhs: mean, se, v_x: cert.v.eval(x0), no_escape });
    }
    let report = ContractionReport { points: out, eps1: cert.eps1, passed: false };
    let passed = report.passes_with(cert.eps1);
    Ok(ContractionReport { passed, ..report })
}

/// Points probing the flat region, the escape boundary, and states far
/// outside the box.
pub fn default_contraction_grid(model: &ModelSpec, cert: &LyapunovCertificate) -> Vec<Vec<f64>> {
    let dim = model.dim();
    let delta_cap = model.lengthening().bound();
    let hi = cert.box_hi;
    let diag = |c: f64| vec![c; dim];
    let mut mixed = vec![0.0; dim];
    mixed[0] = 2.0 * hi;
    vec![
        diag(0.0),
        diag((hi - delta_cap).max(0.0)),
        diag(hi - 0.5 * delta_cap),
        diag(hi),
        diag(hi + delta_cap),
        diag(2.0 * hi),
        mixed,
    ]
}

// ── exponent planning and the standard routes ──

/// Constants produced by the two-sided exponent construction: a growth
/// exponent for the lower comparison, a decay exponent strictly below it,
/// and the tilt and return level that realise the required allowance.
#[derive(Clone, Debug)]
pub struct ExponentPlan {
    pub alpha: f64,
    pub beta: f64,
    pub eps1_target: f64,
    pub eps1_achieved: f64,
    pub lambda0: f64,
    pub l: f64,
    pub certified: bool,
}

/// Pick `beta = beta_scale * alpha`, derive the allowance it needs, then
/// search for a tilt and a return level realising that allowance: the
/// tilt brings the shortening transform under `sqrt(1 + eps1) - 1` and
/// the return level brings the contraction factor under `sqrt(1 + eps1)`.
pub fn plan_exponents(model: &ModelSpec, beta_scale: f64) -> Result<ExponentPlan, VerifyError> {
    let birth = model.birth();
    let (lower, upper) = match (birth.lower(), birth.upper()) {
        (Some(lo), Some(hi)) => (lo.clone(), hi.clone()),
        _ => return Err(VerifyError::NoBrackets),
    };
    let scheme = model.renewal();
    let alpha = solve_alpha(&lower, scheme.eps0, scheme.d)?;
    let beta = beta_scale.clamp(1e-6, 1.0 - 1e-6) * alpha;
    let eps1_target = 1.0 / LifetimeLaw::from_rate(upper).laplace(beta) - 1.0;
    let half = (1.0 + eps1_target).sqrt();

    let g = model.shortening();
    let tilt_target = (0.95 * (half - 1.0)).min(0.999);
    let lambda0 = if g.laplace(1e-12) <= tilt_target {
        1e-12
    } else {
        let mut hi = 1.0;
        while g.laplace(hi) > tilt_target && hi < 1e12 {
            hi *= 2.0;
        }
        bisect(|lam| g.laplace(lam) - tilt_target, 1e-12, hi, 1e-12, 0.0)?
    };

    let mut l = 1.0;
    let mut factor = capital_lambda(model, lambda0, l)?;
    while !(factor.value < half) {
        l *= 2.0;
        if l > 1e100 {
            return Err(VerifyError::NoReturnLevel(l));
        }
        factor = capital_lambda(model, lambda0, l)?;
    }
    let eps1_achieved = (1.0 + g.laplace(lambda0)) * factor.value - 1.0;
    Ok(ExponentPlan {
        alpha,
        beta,
        eps1_target,
        eps1_achieved,
        lambda0,
        l,
        certified: factor.certified,
    })
}

/// How the standard sufficient conditions fare at a given tilt and return
/// level: the decay of the contraction factor along a doubling grid of
/// return levels, the division-rate-free product condition, and the
/// exponent comparison through the age-only brackets when present.
#[derive(Clone, Debug)]
pub struct CorollaryReport {
    pub decay: Vec<(f64, f64)>,
    pub decay_monotone: bool,
    pub product_condition: f64,
    pub product_threshold: f64,
    pub product_ok: bool,
    pub exponents: Option<ExponentPair>,
}

#[derive(Clone, Copy, Debug)]
pub struct ExponentPair {
    pub alpha: f64,
    pub beta: f64,
    pub ordered: bool,
}

pub fn check_corollaries(model: &ModelSpec, lambda0: f64, l: f64) -> Result<CorollaryReport, VerifyError> {
    let scheme = model.renewal();
    let mut decay = Vec::new();
    let mut level = l;
    for _ in 0..10 {
        decay.push((level, capital_lambda(model, lambda0, level)?.value));
        level *= 2.0;
    }
    let decay_monotone = decay.windows(2).all(|w| w[1].1 <= w[0].1 * (1.0 + 1e-12));

    let cert = lyapunov_build(model, lambda0, l)?;
    let product_condition = (1.0 + cert.g_laplace) * cert.lambda_factor.value;
    let product_threshold = (1.0 + scheme.eps0).powf(1.0 / scheme.d as f64);
    let product_ok = product_condition < product_threshold;

    let exponents = match (model.birth().lower(), model.birth().upper()) {
        (Some(lo), Some(hi)) => {
            let alpha = solve_alpha(lo, scheme.eps0, scheme.d)?;
            let beta = solve_beta(hi, cert.eps1)?;
            Some(ExponentPair { alpha, beta, ordered: beta < alpha })
        }
        _ => None,
    };

    Ok(CorollaryReport {
        decay,
        decay_monotone,
        product_condition,
        product_threshold,
        product_ok,
        exponents,
    })
}
