//! The weighted single-cell jump process and its consistency checks.
//!
//! Following one cell line through the tree, with the followed daughter
//! picked proportionally to her Lyapunov weight, gives a Markov jump
//! process on telomere vectors with an explicit rate, an explicit jump
//! type distribution over the shortened/lengthened coordinate sets, and a
//! cemetery state absorbing the weight lost at each division. Weighted
//! expectations over that single particle equal weighted sums over the
//! whole population up to an exponential normalization, which makes the
//! two simulations mutual oracles: this module simulates the particle,
//! exposes its ingredients, and checks the identity by Monte Carlo.

use std::collections::HashMap;
use std::sync::RwLock;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{
    ModelError, ModelSpec, PairLaw, ShorteningIndexSet, TelomereVector, REJECTION_BUDGET,
};
use crate::numerics::{adaptive_simpson, integrate, mean_se, mean_se_from_moments};
use crate::population::{simulate_tree_aged, PopulationError};
use crate::rng::{purpose, StreamKey};
use crate::verify::{LyapunovCertificate, LyapunovFunction};

/// Enumerating jump types over `(I, J)` pairs costs `2^{3k}` entries, so
/// the particle machinery is limited to small chromosome counts.
pub const MAX_ENUM_K: usize = 4;

const QUAD_TOL: f64 = 1e-11;

#[derive(Debug, Error)]
pub enum ParticleError {
    #[error("d_psi = {got} must be an integer of at least the birth envelope degree {need}")]
    DpsiTooSmall { got: u32, need: u32 },
    #[error("safety margin must be nonnegative and finite, got {0}")]
    BadMargin(f64),
    #[error("lambda_psi = {lambda_psi} fails the strict weight rate inequalities; need more than {need:.6}")]
    LambdaPsiTooSmall { lambda_psi: f64, need: f64 },
    #[error("initial particle state must be alive: {need} finite nonnegative coordinates and a nonnegative age")]
    BadInit { need: usize },
    #[error("horizon must be positive and finite, got {0}")]
    BadHorizon(f64),
    #[error("jump rate {rate:.6} at age {age:.6} is not positive; lambda_psi is too small for this model")]
    NonpositiveRate { rate: f64, age: f64 },
    #[error("jump type probability {value:.6e} falls outside [0, 1]; lambda_psi violates its invariant")]
    InvalidJumpProb { value: f64 },
    #[error("jump type enumeration needs k <= {max}, got k = {got}")]
    TooManyJumpTypes { got: usize, max: usize },
    #[error("custom pair laws need a jump weight cache; pass a DCache")]
    CacheRequired,
    #[error("rejection sampler for the {context} exhausted its budget of {attempts} attempts")]
    RejectionBudget { context: &'static str, attempts: u64 },
    #[error("{capped} of {total} population replicates hit the cell cap; raise the cap or shorten the horizon")]
    CappedTrees { capped: usize, total: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Population(#[from] PopulationError),
}

// ── the weight and its rate constant ──

/// Verification grid for age suprema: zero plus a geometric sweep over
/// nine decades.
fn age_grid() -> Vec<f64> {
    let mut grid = Vec::with_capacity(402);
    grid.push(0.0);
    for i in 0..=400 {
        grid.push(1e-3 * 10f64.powf(9.0 * i as f64 / 400.0));
    }
    grid
}

fn age_log_derivative(d_psi: u32, a: f64) -> f64 {
    let d = d_psi as f64;
    d * a.powi(d_psi as i32 - 1) / (1.0 + a.powi(d_psi as i32))
}

/// Analytic lower bound on the normalization rate: the age derivative
/// supremum plus twice the birth envelope against the age profile of the
/// weight, under both the mean growth allowance `eps1` and the weight
/// floor `v_min`. Suprema are taken numerically over [`age_grid`].
pub fn psi_rate_bound(b_tilde: f64, d_b: u32, d_psi: u32, eps1: f64, v_min: f64) -> f64 {
    let c_age = age_grid()
        .into_iter()
        .map(|a| age_log_derivative(d_psi, a))
        .fold(0.0, f64::max);
    let c_ratio = age_grid()
        .into_iter()
        .map(|a| (1.0 + a.powi(d_b as i32)) / (1.0 + a.powi(d_psi as i32)))
        .fold(0.0, f64::max);
    c_age + 2.0 * b_tilde * c_ratio * (1.0 + eps1).max(1.0 / v_min)
}

/// Mean weight carried by the divisions a particle triggers over its whole
/// life when the rate runs at `lambda` and the age at the first division
/// is at most `a_ref`; keeping this below one keeps the expected total
/// jump count finite.
pub fn expected_jump_weight(lambda: f64, b_tilde: f64, d_b: u32, eps1: f64, a_ref: f64) -> f64 {
    let mut integral = 1.0 / lambda;
    let mut factorial = 1.0;
    for j in 0..=d_b {
        if j > 0 {
            factorial *= j as f64;
        }
        let binom = (0..j).fold(1.0, |acc, i| acc * (d_b - i) as f64 / (i + 1) as f64);
        integral += binom * a_ref.powi((d_b - j) as i32) * factorial / lambda.powi(j as i32 + 1);
    }
    2.0 * b_tilde * (1.0 + eps1) * integral
}

/// Pick a normalization rate for the weight `(1 + a^{d_psi}) V(x)`: the
/// analytic bound times `1 + safety_margin`, then doubled until the mean
/// jump weight from [`expected_jump_weight`] at age `a_ref` drops below
/// one when `jump_count_age` is given.
pub fn compute_lambda_psi(
    model: &ModelSpec,
    cert: &LyapunovCertificate,
    d_psi: u32,
    safety_margin: f64,
    jump_count_age: Option<f64>,
) -> Result<f64, ParticleError> {
    let need = model.birth().d_b().max(1);
    if d_psi < need {
        return Err(ParticleError::DpsiTooSmall { got: d_psi, need });
    }
    if !(safety_margin >= 0.0) || !safety_margin.is_finite() {
        return Err(ParticleError::BadMargin(safety_margin));
    }
    let b_tilde = model.birth().b_tilde();
    let d_b = model.birth().d_b();
    let mut lambda = psi_rate_bound(b_tilde, d_b, d_psi, cert.eps1, cert.v_min) * (1.0 + safety_margin);
    if let Some(a_ref) = jump_count_age {
        if !(a_ref >= 0.0) || !a_ref.is_finite() {
            return Err(ParticleError::BadMargin(a_ref));
        }
        while expected_jump_weight(lambda, b_tilde, d_b, cert.eps1, a_ref) >= 1.0 {
            lambda *= 2.0;
        }
    }
    Ok(lambda)
}

/// The weight `psi(x, a) = (1 + a^{d_psi}) V(x)` attached to the particle,
/// with the normalization rate that keeps its jump construction a
/// probability distribution.
#[derive(Clone, Debug)]
pub struct PsiWeight {
    cert: LyapunovCertificate,
    d_psi: u32,
    lambda_psi: f64,
}

impl PsiWeight {
    /// Validate the rate against the strict grid form of the two weight
    /// inequalities and wrap everything up.
    pub fn new(
        model: &ModelSpec,
        cert: LyapunovCertificate,
        d_psi: u32,
        lambda_psi: f64,
    ) -> Result<Self, ParticleError> {
        let need = model.birth().d_b().max(1);
        if d_psi < need {
            return Err(ParticleError::DpsiTooSmall { got: d_psi, need });
        }
        let b_tilde = model.birth().b_tilde();
        let d_b = model.birth().d_b();
        let allowance = (1.0 + cert.eps1).max(1.0 / cert.v_min);
        let sup = age_grid()
            .into_iter()
            .map(|a| {
                age_log_derivative(d_psi, a)
                    + 2.0 * b_tilde * allowance * (1.0 + a.powi(d_b as i32))
                        / (1.0 + a.powi(d_psi as i32))
            })
            .fold(0.0, f64::max);
        if !(lambda_psi > sup) || !lambda_psi.is_finite() {
            return Err(ParticleError::LambdaPsiTooSmall { lambda_psi, need: sup });
        }
        Ok(PsiWeight { cert, d_psi, lambda_psi })
    }

    pub fn cert(&self) -> &LyapunovCertificate {
        &self.cert
    }

    pub fn v(&self) -> &LyapunovFunction {
        &self.cert.v
    }

    pub fn d_psi(&self) -> u32 {
        self.d_psi
    }

    pub fn lambda_psi(&self) -> f64 {
        self.lambda_psi
    }

    pub fn age_factor(&self, a: f64) -> f64 {
        1.0 + a.powi(self.d_psi as i32)
    }

    /// `d/da log(1 + a^{d_psi})`, the age part of the jump rate correction.
    pub fn age_log_derivative(&self, a: f64) -> f64 {
        age_log_derivative(self.d_psi, a)
    }

    pub fn eval(&self, x: &[f64], a: f64) -> f64 {
        self.age_factor(a) * self.cert.v.eval(x)
    }
}

// ── rate and no-jump survival ──

fn birth_integral(model: &ModelSpec, x: &[f64], a: f64, r: f64) -> f64 {
    match model.birth().age_only() {
        Some(rate) => rate.integral(a, r),
        None => integrate(|s| model.birth().eval(x, a + s), 0.0, r, 1e-10),
    }
}

/// Probability that a particle at state `x` and age `a` runs for another
/// `r` units of time without any event.
pub fn no_jump_survival(model: &ModelSpec, psi: &PsiWeight, x: &[f64], a: f64, r: f64) -> f64 {
    (psi.age_factor(a + r) / psi.age_factor(a))
        * (-birth_integral(model, x, a, r) - psi.lambda_psi * r).exp()
}

/// Total event rate of the particle: normalization plus division rate
/// minus the age drift of the weight.
pub fn jump_rate(
    model: &ModelSpec,
    psi: &PsiWeight,
    x: &[f64],
    a: f64,
) -> Result<f64, ParticleError> {
    let rate = psi.lambda_psi + model.birth().eval(x, a) - psi.age_log_derivative(a);
    if !(rate > 0.0) {
        return Err(ParticleError::NonpositiveRate { rate, age: a });
    }
    Ok(rate)
}

// ── jump type distribution ──

/// Weighted mass `d^{I,J}(x)` of one jump type: the mean Lyapunov weight
/// of an alive daughter shortened on `I` and lengthened on `J`, including
/// the `2^{-k}` chance of that shortened set and the conditional chance of
/// that lengthened set.
#[derive(Clone, Copy, Debug)]
pub struct JumpType {
    pub i_set: ShorteningIndexSet,
    pub j_mask: u64,
    pub d: f64,
    pub prob: f64,
}

#[derive(Clone, Debug)]
pub struct JumpTypeProbs {
    pub entries: Vec<JumpType>,
    pub cemetery: f64,
    /// Mean Lyapunov mass the division sends to both daughters combined.
    pub kernel_mass: f64,
    /// Largest Monte Carlo standard error among the `d` values; zero when
    /// every value came from quadrature.
    pub max_d_se: f64,
}

impl JumpTypeProbs {
    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.prob).sum()
    }

    /// Map a uniform draw to a jump type; `None` is the cemetery.
    pub fn sample(&self, u: f64) -> Option<(ShorteningIndexSet, u64)> {
        let mut acc = 0.0;
        for e in &self.entries {
            acc += e.prob;
            if u < acc {
                return Some((e.i_set, e.j_mask));
            }
        }
        None
    }
}

fn tilt_at(v: &LyapunovFunction, s: f64) -> f64 {
    if s < 0.0 {
        0.0
    } else {
        (v.lambda0() * (s - v.kink()).max(0.0)).exp()
    }
}

fn integrate_with_breaks(
    f: &dyn Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    breaks: &[f64],
    tol: f64,
) -> f64 {
    let mut cuts = vec![lo];
    let mut inner: Vec<f64> = breaks.iter().copied().filter(|b| *b > lo && *b < hi).collect();
    inner.sort_by(f64::total_cmp);
    cuts.extend(inner);
    cuts.push(hi);
    cuts.windows(2).map(|w| adaptive_simpson(f, w[0], w[1], tol)).sum()
}

/// Mean tilt of a lengthened coordinate at current length `s`:
/// `E[exp(lambda0 (s + beta - kink)_+) 1{s + beta >= 0}]` under the
/// lengthening law. Closed form for the uniform kinds.
fn lengthened_mass(model: &ModelSpec, v: &LyapunovFunction, s: f64) -> f64 {
    let h = model.lengthening();
    let w = h.width(s);
    if s >= 0.0 && s + w <= v.kink() {
        return 1.0;
    }
    if h.is_uniform() {
        let lam = v.lambda0();
        let floor = (-s).max(0.0);
        if floor >= w {
            return 0.0;
        }
        let to_kink = v.kink() - s;
        let flat = (w.min(to_kink) - floor).max(0.0);
        let tilt_lo = floor.max(to_kink);
        let tilted = if w > tilt_lo {
            ((lam * (s + w - v.kink())).exp() - (lam * (s + tilt_lo - v.kink())).exp()) / lam
        } else {
            0.0
        };
        (flat + tilted) / w
    } else {
        let scale = tilt_at(v, s + w).max(1.0);
        integrate_with_breaks(
            &|b| h.density(s, b) * tilt_at(v, s + b),
            0.0,
            w,
            &[-s, v.kink() - s],
            QUAD_TOL * scale,
        )
    }
}

/// Mean of `f` applied to the post-shortening length `xc - alpha`.
fn shortened_mass(model: &ModelSpec, v: &LyapunovFunction, f: &dyn Fn(f64) -> f64, xc: f64) -> f64 {
    let g = model.shortening();
    let delta = g.bound();
    let scale = tilt_at(v, xc + model.lengthening().bound()).max(1.0);
    integrate_with_breaks(
        &|al| g.density(al) * f(xc - al),
        0.0,
        delta,
        &[xc, xc - v.kink()],
        QUAD_TOL * scale,
    )
}

/// Per-coordinate weighted masses for the four membership classes of a
/// coordinate relative to `(I, J)`.
#[derive(Clone, Copy, Debug)]
struct CoordTable {
    both: f64,
    short_only: f64,
    long_only: f64,
    neither: f64,
}

fn coord_table(
    model: &ModelSpec,
    v: &LyapunovFunction,
    q: &dyn Fn(f64) -> f64,
    xc: f64,
) -> CoordTable {
    let qx = q(xc);
    CoordTable {
        both: shortened_mass(model, v, &|s| q(s) * lengthened_mass(model, v, s), xc),
        short_only: shortened_mass(model, v, &|s| (1.0 - q(s)) * tilt_at(v, s), xc),
        long_only: qx * lengthened_mass(model, v, xc),
        neither: (1.0 - qx) * tilt_at(v, xc),
    }
}

fn coord_tables(model: &ModelSpec, v: &LyapunovFunction, x: &[f64]) -> Vec<CoordTable> {
    let mut memo: Vec<(f64, CoordTable)> = Vec::with_capacity(x.len());
    let mut out = Vec::with_capacity(x.len());
    for &xc in x {
        if let Some((_, t)) = memo.iter().find(|(seen, _)| *seen == xc) {
            out.push(*t);
            continue;
        }
        let t = match model.pairs() {
            PairLaw::AllCoordinates => coord_table(model, v, &|_| 1.0, xc),
            PairLaw::PerCoordinate { q } => coord_table(model, v, &|s| q(s), xc),
            PairLaw::Custom { .. } => unreachable!("custom pair laws go through the cache"),
        };
        memo.push((xc, t));
        out.push(t);
    }
    out
}

/// Jump type distribution of the particle at `(x, age)`. Preset pair laws
/// factor over coordinates and are integrated exactly; custom laws need
/// `custom` for their Monte Carlo weight integrals.
pub fn jump_type_probs(
    model: &ModelSpec,
    psi: &PsiWeight,
    x: &[f64],
    age: f64,
    custom: Option<&DCache>,
) -> Result<JumpTypeProbs, ParticleError> {
    let k = model.k();
    let dim = model.dim();
    if k > MAX_ENUM_K {
        return Err(ParticleError::TooManyJumpTypes { got: k, max: MAX_ENUM_K });
    }
    let rate = jump_rate(model, psi, x, age)?;
    let weight = 2.0 * model.birth().eval(x, age) / (psi.eval(x, age) * rate);
    let scale = 0.5f64.powi(k as i32);

    let mut entries = Vec::with_capacity((1usize << k) << dim);
    let mut max_d_se = 0.0f64;
    let mut sum_d = 0.0;
    match model.pairs() {
        PairLaw::Custom { .. } => {
            let cache = custom.ok_or(ParticleError::CacheRequired)?;
            for i_bits in 0..(1u32 << k) {
                let i_set = ShorteningIndexSet::from_bits(k, i_bits);
                for j_mask in 0..(1u64 << dim) {
                    let (d, se) = cache.d_value(model, psi.v(), x, i_set, j_mask)?;
                    max_d_se = max_d_se.max(se);
                    sum_d += d;
                    entries.push(JumpType { i_set, j_mask, d, prob: weight * d });
                }
            }
        }
        _ => {
            let tables = coord_tables(model, psi.v(), x);
            for i_bits in 0..(1u32 << k) {
                let i_set = ShorteningIndexSet::from_bits(k, i_bits);
                for j_mask in 0..(1u64 << dim) {
                    let mut d = scale;
                    for (c, tab) in tables.iter().enumerate() {
                        let factor = match (i_set.contains(c), (j_mask >> c) & 1 == 1) {
                            (true, true) => tab.both,
                            (true, false) => tab.short_only,
                            (false, true) => tab.long_only,
                            (false, false) => tab.neither,
                        };
                        d *= factor;
                        if d == 0.0 {
                            break;
                        }
                    }
                    sum_d += d;
                    entries.push(JumpType { i_set, j_mask, d, prob: weight * d });
                }
            }
        }
    }

    let total: f64 = entries.iter().map(|e| e.prob).sum();
    for e in &entries {
        if !(e.prob >= 0.0) || e.prob > 1.0 + 1e-9 {
            return Err(ParticleError::InvalidJumpProb { value: e.prob });
        }
    }
    if total > 1.0 + 1e-9 {
        return Err(ParticleError::InvalidJumpProb { value: total });
    }
    Ok(JumpTypeProbs {
        entries,
        cemetery: (1.0 - total).max(0.0),
        kernel_mass: 2.0 * sum_d,
        max_d_se,
    })
}

// ── Monte Carlo weight cache for custom pair laws ──

#[derive(Clone, PartialEq, Eq, Hash)]
struct DKey {
    bins: Vec<i64>,
    i_bits: u32,
    j_mask: u64,
}

/// Memoized Monte Carlo estimates of the jump type weights `d^{I,J}` for
/// custom pair laws, binned over the state space. Entries are keyed by
/// their own stream, so concurrent writers race only to store identical
/// values.
pub struct DCache {
    key: StreamKey,
    bin_width: f64,
    target_rel_se: f64,
    map: RwLock<HashMap<DKey, (f64, f64)>>,
}

impl DCache {
    pub fn new(key: StreamKey, bin_width: f64, target_rel_se: f64) -> Self {
        assert!(bin_width > 0.0 && target_rel_se > 0.0);
        DCache { key, bin_width, target_rel_se, map: RwLock::new(HashMap::new()) }
    }

    pub fn len(&self) -> usize {
        self.map.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn d_value(
        &self,
        model: &ModelSpec,
        v: &LyapunovFunction,
        x: &[f64],
        i_set: ShorteningIndexSet,
        j_mask: u64,
    ) -> Result<(f64, f64), ParticleError> {
        let bins: Vec<i64> = x.iter().map(|&c| (c / self.bin_width).floor() as i64).collect();
        let dkey = DKey { bins, i_bits: i_set.bits(), j_mask };
        if let Some(&hit) = self.map.read().unwrap().get(&dkey) {
            return Ok(hit);
        }
        let center: Vec<f64> =
            dkey.bins.iter().map(|&b| ((b as f64 + 0.5) * self.bin_width).max(0.0)).collect();
        let mut stream = self
            .key
            .child(purpose::CACHE)
            .child(u64::from(dkey.i_bits))
            .child(dkey.j_mask)
            .child(dkey.bins.len() as u64);
        for &b in &dkey.bins {
            stream = stream.child(b as u64);
        }
        let mut rng = stream.rng();
        let scale = 0.5f64.powi(model.k() as i32);
        let (mut n, mut sum, mut sum_sq) = (0u64, 0.0f64, 0.0f64);
        loop {
            for _ in 0..512 {
                let (s1, s2) = model.shorten(&center, i_set, &mut rng)?;
                let w = model.pairs().marginal_a(j_mask, &s1, &s2)?;
                let y = model.lengthen(&s1, j_mask, &mut rng)?;
                let val =
                    if y.iter().all(|&c| c >= 0.0) { w * v.eval(&y) } else { 0.0 };
                n += 1;
                sum += val;
                sum_sq += val * val;
            }
            let (mean, se) = mean_se_from_moments(n, sum, sum_sq);
            if n >= 1 << 17 || se <= self.target_rel_se * mean.abs() {
                let out = (scale * mean, scale * se);
                self.map.write().unwrap().insert(dkey, out);
                return Ok(out);
            }
        }
    }
}

// ── jump value sampling ──

/// Draw the post-jump state for type `(I, J)` from the weighted jump
/// measure: propose from the division mechanics conditioned on that type,
/// then accept against the Lyapunov weight envelope.
pub fn sample_jump_value(
    model: &ModelSpec,
    psi: &PsiWeight,
    x: &[f64],
    i_set: ShorteningIndexSet,
    j_mask: u64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>, ParticleError> {
    let v = psi.v();
    let log_bound = v.log_eval(x) + psi.cert.c_v.ln();
    for _ in 0..REJECTION_BUDGET {
        let (s1, s2) = model.shorten(x, i_set, rng)?;
        let (j_prop, _m_mask) = model.pairs().sample(&s1, &s2, rng)?;
        if j_prop != j_mask {
            continue;
        }
        let y = model.lengthen(&s1, j_mask, rng)?;
        if y.iter().any(|&c| c < 0.0) {
            continue;
        }
        let log_accept = v.log_eval(&y) - log_bound;
        if log_accept >= 0.0 || rng.gen::<f64>() < log_accept.exp() {
            return Ok(y);
        }
    }
    Err(ParticleError::RejectionBudget { context: "jump value", attempts: REJECTION_BUDGET })
}

// ── the particle path ──

/// One realized trajectory: states between jumps, the jump times, the
/// coordinate sets of each jump, and the absorption record.
#[derive(Clone, Debug)]
pub struct ParticlePath {
    pub init_age: f64,
    pub horizon: f64,
    /// Times of the real jumps, strictly increasing.
    pub jump_times: Vec<f64>,
    /// Visited states; one more entry than `jump_times`.
    pub states: Vec<Vec<f64>>,
    /// Shortened and lengthened coordinate sets of each jump.
    pub labels: Vec<(ShorteningIndexSet, u64)>,
    pub absorbed: bool,
    /// Absorption time, when the path hit the cemetery before the horizon.
    pub tau: Option<f64>,
    /// First time every coordinate had taken part in some jump.
    pub t_all: Option<f64>,
}

impl ParticlePath {
    pub fn jumps(&self) -> usize {
        self.jump_times.len()
    }

    /// Age right after the `n`-th jump: the initial age for `n = 0`, zero
    /// afterwards because each jump replaces the cell by a newborn.
    pub fn age_after(&self, n: usize) -> f64 {
        if n == 0 {
            self.init_age
        } else {
            0.0
        }
    }

    /// State and age at time `t <= horizon`, or `None` when the particle
    /// is already absorbed.
    pub fn state_at(&self, t: f64) -> Option<(&[f64], f64)> {
        debug_assert!(t >= 0.0 && t <= self.horizon);
        if self.absorbed && self.tau.is_some_and(|tau| tau <= t) {
            return None;
        }
        let n = self.jump_times.iter().take_while(|&&s| s <= t).count();
        let age = if n == 0 { self.init_age + t } else { t - self.jump_times[n - 1] };
        Some((&self.states[n], age))
    }
}

/// Simulate the particle from `(x0, init_age)` up to `horizon`. Waiting
/// times come from thinning against the envelope rate (the age drift
/// correction only ever lowers the true rate), jump types from
/// [`jump_type_probs`], and jump values from [`sample_jump_value`].
pub fn simulate_particle(
    model: &ModelSpec,
    psi: &PsiWeight,
    x0: &[f64],
    init_age: f64,
    horizon: f64,
    key: StreamKey,
    custom: Option<&DCache>,
) -> Result<ParticlePath, ParticleError> {
    let dim = model.dim();
    if x0.len() != dim
        || x0.iter().any(|&c| !c.is_finite() || c < 0.0)
        || !init_age.is_finite()
        || init_age < 0.0
    {
        return Err(ParticleError::BadInit { need: dim });
    }
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(ParticleError::BadHorizon(horizon));
    }
    let mut rng = key.child(purpose::PARTICLE).rng();
    let full: u64 = (1u64 << dim) - 1;
    let window = 1.0;

    let mut x = x0.to_vec();
    let mut path = ParticlePath {
        init_age,
        horizon,
        jump_times: Vec::new(),
        states: vec![x0.to_vec()],
        labels: Vec::new(),
        absorbed: false,
        tau: None,
        t_all: None,
    };
    let mut coverage: u64 = 0;
    let mut last_event = 0.0f64;
    let mut age_origin = -init_age;

    'path: loop {
        let mut s = last_event;
        let mut window_end = last_event + window;
        let mut proposals = 0u64;
        let event_time = loop {
            proposals += 1;
            if proposals > REJECTION_BUDGET {
                return Err(ParticleError::RejectionBudget {
                    context: "waiting time",
                    attempts: proposals,
                });
            }
            let hi = psi.lambda_psi + model.birth().envelope_at(window_end - age_origin);
            let e = -rng.gen::<f64>().ln() / hi;
            if s + e > window_end {
                s = window_end;
                window_end += window;
                if s > horizon {
                    break 'path;
                }
                continue;
            }
            s += e;
            if s > horizon {
                break 'path;
            }
            let rate = jump_rate(model, psi, &x, s - age_origin)?;
            if rng.gen::<f64>() * hi <= rate {
                break s;
            }
        };

        let probs = jump_type_probs(model, psi, &x, event_time - age_origin, custom)?;
        match probs.sample(rng.gen()) {
            None => {
                path.absorbed = true;
                path.tau = Some(event_time);
                break;
            }
            Some((i_set, j_mask)) => {
                let y = sample_jump_value(model, psi, &x, i_set, j_mask, &mut rng)?;
                last_event = event_time;
                age_origin = event_time;
                coverage |= i_set.coord_mask() | j_mask;
                if path.t_all.is_none() && coverage == full {
                    path.t_all = Some(event_time);
                }
                path.jump_times.push(event_time);
                path.labels.push((i_set, j_mask));
                path.states.push(y.clone());
                x = y;
            }
        }
    }
    Ok(path)
}

// ── semigroup cross-validation ──

/// The two independent estimates of one weighted expectation and their
/// discrepancy in combined standard errors.
#[derive(Clone, Copy, Debug)]
pub struct SemigroupReport {
    pub particle_mean: f64,
    pub particle_se: f64,
    pub population_mean: f64,
    pub population_se: f64,
    pub z: f64,
}

impl SemigroupReport {
    pub fn consistent(&self) -> bool {
        self.z < 3.0
    }
}

fn z_score(a: f64, sa: f64, b: f64, sb: f64) -> f64 {
    let gap = (a - b).abs();
    let spread = (sa * sa + sb * sb).sqrt();
    if gap == 0.0 {
        0.0
    } else {
        gap / spread
    }
}

/// Estimate `E[f(particle state and age at t); alive]` from `paths`
/// particle runs, and the same quantity through the weighted population
/// average `e^{-lambda_psi t} M_t(f psi) / psi` from `trees` full tree
/// runs, and report their agreement.
#[allow(clippy::too_many_arguments)]
pub fn cross_validate_semigroup(
    model: &ModelSpec,
    psi: &PsiWeight,
    x0: &[f64],
    init_age: f64,
    f: &(dyn Fn(&[f64], f64) -> f64 + Sync),
    t: f64,
    paths: usize,
    trees: usize,
    max_cells: usize,
    key: StreamKey,
    custom: Option<&DCache>,
) -> Result<SemigroupReport, ParticleError> {
    let particle_values: Vec<f64> = (0..paths)
        .into_par_iter()
        .map(|i| {
            let path =
                simulate_particle(model, psi, x0, init_age, t, key.child(1).child(i as u64), custom)?;
            Ok(path.state_at(t).map_or(0.0, |(xs, a)| f(xs, a)))
        })
        .collect::<Result<_, ParticleError>>()?;
    let (particle_mean, particle_se) = mean_se(&particle_values);

    let initial = TelomereVector::new(model.k(), x0.to_vec())?;
    let raw: Vec<(f64, bool)> = (0..trees)
        .into_par_iter()
        .map(|i| {
            let run = simulate_tree_aged(
                model,
                &initial,
                init_age,
                t,
                max_cells,
                key.child(2).child(i as u64),
            )?;
            let mut total = 0.0;
            for cell in &run.alive {
                let age = t - cell.birth_time;
                total += f(cell.x.as_slice(), age) * psi.eval(cell.x.as_slice(), age);
            }
            Ok((total, run.capped))
        })
        .collect::<Result<_, ParticleError>>()?;
    let capped = raw.iter().filter(|(_, c)| *c).count();
    if capped > 0 {
        return Err(ParticleError::CappedTrees { capped, total: trees });
    }
    let norm = (-psi.lambda_psi * t).exp() / psi.eval(x0, init_age);
    let weighted: Vec<f64> = raw.into_iter().map(|(v, _)| v * norm).collect();
    let (population_mean, population_se) = mean_se(&weighted);

    Ok(SemigroupReport {
        particle_mean,
        particle_se,
        population_mean,
        population_se,
        z: z_score(particle_mean, particle_se, population_mean, population_se),
    })
}

// ── first-jump law check ──

/// Event asking the first jump to have a given label, land in a box, and
/// happen inside a time window, with no second event before `t`.
#[derive(Clone, Copy, Debug)]
pub struct OneJumpEvent {
    pub pair: (ShorteningIndexSet, u64),
    /// Per-coordinate interval for the post-jump state.
    pub value_lo: f64,
    pub value_hi: f64,
    /// Window for the first jump time.
    pub window: (f64, f64),
}

#[derive(Clone, Copy, Debug)]
pub struct OneJumpReport {
    pub path_estimate: f64,
    pub path_se: f64,
    pub oracle_estimate: f64,
    pub oracle_se: f64,
    pub z: f64,
}

/// Probability that the particle takes exactly one jump before `t`, of the
/// given type, into the given box, inside the given window, estimated
/// once from simulated paths and once from the explicit first-jump
/// density, with the discrepancy in combined standard errors.
#[allow(clippy::too_many_arguments)]
pub fn one_jump_law_check(
    model: &ModelSpec,
    psi: &PsiWeight,
    x0: &[f64],
    init_age: f64,
    t: f64,
    event: OneJumpEvent,
    n: usize,
    key: StreamKey,
    custom: Option<&DCache>,
) -> Result<OneJumpReport, ParticleError> {
    let (i_set, j_mask) = event.pair;
    let lo = event.value_lo.max(0.0);
    let hi = event.value_hi;

    let hits: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let path =
                simulate_particle(model, psi, x0, init_age, t, key.child(1).child(i as u64), custom)?;
            let ok = !path.absorbed
                && path.jumps() == 1
                && path.labels[0] == (i_set, j_mask)
                && path.jump_times[0] >= event.window.0
                && path.jump_times[0] <= event.window.1
                && path.states[1].iter().all(|&c| c >= lo && c <= hi);
            Ok(if ok { 1.0 } else { 0.0 })
        })
        .collect::<Result<_, ParticleError>>()?;
    let (path_estimate, path_se) = mean_se(&hits);

    let w_lo = event.window.0.max(0.0);
    let w_hi = event.window.1.min(t);
    let (oracle_estimate, oracle_se) = if w_hi <= w_lo {
        (0.0, 0.0)
    } else {
        let len = w_hi - w_lo;
        let scale = 0.5f64.powi(model.k() as i32);
        let psi_init = psi.eval(x0, init_age);
        let values: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = key.child(2).child(i as u64).rng();
                let s = w_lo + len * rng.gen::<f64>();
                let (s1, s2) = model.shorten(x0, i_set, &mut rng)?;
                let w = model.pairs().marginal_a(j_mask, &s1, &s2)?;
                let y = model.lengthen(&s1, j_mask, &mut rng)?;
                if y.iter().any(|&c| c < 0.0 || c < lo || c > hi) {
                    return Ok(0.0);
                }
                let first = 2.0 * model.birth().eval(x0, init_age + s) / psi_init
                    * (-birth_integral(model, x0, init_age, s) - psi.lambda_psi * s).exp();
                let survive = no_jump_survival(model, psi, &y, 0.0, t - s);
                Ok(len * first * scale * w * psi.v().eval(&y) * survive)
            })
            .collect::<Result<_, ParticleError>>()?;
        mean_se(&values)
    };

    Ok(OneJumpReport {
        path_estimate,
        path_se,
        oracle_estimate,
        oracle_se,
        z: z_score(path_estimate, path_se, oracle_estimate, oracle_se),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AgeRate, BirthRate, RenewalScheme, ShorteningLaw, LengtheningLaw};
    use crate::numerics::ks_statistic;
    use crate::verify::lyapunov_build;
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn model2_small() -> ModelSpec {
        ModelSpec::model2(1, 1.0, 100.0, 0.97, 50.0, 2.0, BirthRate::age_linear()).unwrap()
    }

    /// Weight on the tight certificate (return level 1), whose tilt region
    /// starts right above length 100.
    fn psi_tight() -> (ModelSpec, PsiWeight) {
        let m = model2_small();
        let cert = lyapunov_build(&m, 1e-3, 1.0).unwrap();
        let lambda = compute_lambda_psi(&m, &cert, 1, 0.05, None).unwrap();
        let psi = PsiWeight::new(&m, cert, 1, lambda).unwrap();
        (m, psi)
    }

    /// Weight on a roomy certificate (return level 4), flat far beyond the
    /// states the tests visit.
    fn psi_roomy() -> (ModelSpec, PsiWeight) {
        let m = model2_small();
        let cert = lyapunov_build(&m, 1e-3, 4.0).unwrap();
        let lambda = compute_lambda_psi(&m, &cert, 1, 0.05, None).unwrap();
        let psi = PsiWeight::new(&m, cert, 1, lambda).unwrap();
        (m, psi)
    }

    #[test]
    fn rate_bound_tracks_the_envelope_constants() {
        // Degree-zero envelope against a linear weight: both age suprema
        // sit at age zero, so the bound is 1 + 2 * 2 * 1.1 exactly.
        assert_relative_eq!(psi_rate_bound(1.0, 0, 1, 0.1, 1.0), 5.4, max_relative = 1e-12);
        // Equal degrees make the ratio one everywhere.
        assert_relative_eq!(psi_rate_bound(1.0, 1, 1, 0.0, 1.0), 3.0, max_relative = 1e-12);
        // Degree pair (1, 2): the age derivative tops out at 1 and the
        // ratio at (1 + sqrt(2)) / 2, both at interior ages the grid only
        // approximates.
        let expect = 1.0 + 2.0 * 1.5 * (1.0 + 2f64.sqrt()) / 2.0 * 1.2;
        let got = psi_rate_bound(1.5, 1, 2, 0.2, 1.0);
        assert!((got - expect).abs() < 2e-3 * expect, "got {got}, expected about {expect}");
        assert!(got <= expect * (1.0 + 1e-12));
    }

    #[test]
    fn lambda_psi_scales_with_margin_and_controls_jump_weight() {
        let m = model2_small();
        let cert = lyapunov_build(&m, 1e-3, 1.0).unwrap();
        let base = compute_lambda_psi(&m, &cert, 1, 0.0, None).unwrap();
        let mid = compute_lambda_psi(&m, &cert, 1, 0.1, None).unwrap();
        let high = compute_lambda_psi(&m, &cert, 1, 0.25, None).unwrap();
        assert_relative_eq!(base, psi_rate_bound(1.0, 1, 1, cert.eps1, cert.v_min));
        assert_relative_eq!(mid, base * 1.1, max_relative = 1e-12);
        assert!(base < mid && mid < high);

        let counted = compute_lambda_psi(&m, &cert, 1, 0.0, Some(4.0)).unwrap();
        assert!(counted >= base);
        assert!(expected_jump_weight(counted, 1.0, 1, cert.eps1, 4.0) < 1.0);

        assert!(matches!(
            compute_lambda_psi(&m, &cert, 0, 0.0, None),
            Err(ParticleError::DpsiTooSmall { .. })
        ));
        assert!(matches!(
            compute_lambda_psi(&m, &cert, 1, -0.5, None),
            Err(ParticleError::BadMargin(_))
        ));
    }

    #[test]
    fn weight_validation_is_strict() {
        let m = model2_small();
        let cert = lyapunov_build(&m, 1e-3, 1.0).unwrap();
        let bound = psi_rate_bound(1.0, 1, 1, cert.eps1, cert.v_min);
        let err = PsiWeight::new(&m, cert.clone(), 1, 0.5 * bound);
        match err {
            Err(ParticleError::LambdaPsiTooSmall { need, .. }) => {
                assert!(need <= bound * (1.0 + 1e-12));
            }
            other => panic!("expected LambdaPsiTooSmall, got {other:?}"),
        }
        assert!(matches!(
            PsiWeight::new(&m, cert.clone(), 0, 2.0 * bound),
            Err(ParticleError::DpsiTooSmall { .. })
        ));

        let psi = PsiWeight::new(&m, cert, 1, 1.01 * bound).unwrap();
        assert_relative_eq!(psi.eval(&[50.0, 50.0], 2.0), 3.0, max_relative = 1e-12);
        assert_relative_eq!(psi.age_log_derivative(0.0), 1.0);

        let m2 = model2_small();
        let cert2 = lyapunov_build(&m2, 1e-3, 1.0).unwrap();
        let lambda2 = compute_lambda_psi(&m2, &cert2, 2, 0.05, None).unwrap();
        let psi2 = PsiWeight::new(&m2, cert2, 2, lambda2).unwrap();
        assert_eq!(psi2.age_log_derivative(0.0), 0.0);
    }

    #[test]
    fn jump_rate_is_the_survival_log_derivative() {
        let (m, psi) = psi_tight();
        for (x, a) in [(vec![50.0, 50.0], 0.8), (vec![120.0, 30.0], 0.0)] {
            let direct = jump_rate(&m, &psi, &x, a + 0.3).unwrap();
            let expect = psi.lambda_psi() + (a + 0.3) - 1.0 / (1.0 + a + 0.3);
            assert_relative_eq!(direct, expect, max_relative = 1e-12);

            let h = 1e-6;
            let fd = (no_jump_survival(&m, &psi, &x, a, 0.3 - h).ln()
                - no_jump_survival(&m, &psi, &x, a, 0.3 + h).ln())
                / (2.0 * h);
            assert_relative_eq!(fd, direct, max_relative = 1e-6);
        }

        // A quadratic age factor has no drift at age zero, so the rate is
        // plainly the normalization plus the birth rate.
        let m2 = model2_small();
        let cert2 = lyapunov_build(&m2, 1e-3, 1.0).unwrap();
        let lam2 = compute_lambda_psi(&m2, &cert2, 2, 0.05, None).unwrap();
        let psi2 = PsiWeight::new(&m2, cert2, 2, lam2).unwrap();
        let rate = jump_rate(&m2, &psi2, &[40.0, 40.0], 0.0).unwrap();
        assert_relative_eq!(rate, psi2.lambda_psi(), max_relative = 1e-14);
    }

    #[test]
    fn no_jump_survival_uses_the_birth_integral() {
        let m = ModelSpec::model2(1, 1.0, 100.0, 0.97, 50.0, 2.0, BirthRate::constant(0.8).unwrap())
            .unwrap();
        let cert = lyapunov_build(&m, 1e-3, 1.0).unwrap();
        let lambda = compute_lambda_psi(&m, &cert, 1, 0.05, None).unwrap();
        let psi = PsiWeight::new(&m, cert, 1, lambda).unwrap();
        let (a, r) = (0.7, 1.9);
        let expect = (1.0 + a + r) / (1.0 + a) * (-(0.8 + lambda) * r).exp();
        assert_relative_eq!(no_jump_survival(&m, &psi, &[60.0, 60.0], a, r), expect, max_relative = 1e-12);

        // The same age-linear rate through the custom branch exercises the
        // numeric integral against the closed form.
        let custom_birth = BirthRate::custom(
            Arc::new(|_x: &[f64], age: f64| age),
            1.0,
            1,
            1.0,
            1.0,
            &[50.0, 50.0],
            Some(AgeRate::AgeLinear),
            Some(AgeRate::AgeLinear),
        )
        .unwrap();
        let mc = ModelSpec::model2(1, 1.0, 100.0, 0.97, 50.0, 2.0, custom_birth).unwrap();
        let (ma, psi_a) = psi_tight();
        let cert_c = lyapunov_build(&mc, 1e-3, 1.0).unwrap();
        let psi_c = PsiWeight::new(&mc, cert_c, 1, psi_a.lambda_psi()).unwrap();
        for (a, r) in [(0.0, 0.5), (1.3, 2.2)] {
            assert_relative_eq!(
                no_jump_survival(&mc, &psi_c, &[50.0, 50.0], a, r),
                no_jump_survival(&ma, &psi_a, &[50.0, 50.0], a, r),
                max_relative = 1e-9
            );
        }
    }

    #[test]
    fn lengthened_mass_matches_direct_quadrature() {
        let (m, psi) = psi_tight();
        let v = psi.v();
        let h = m.lengthening();
        for s in [-0.5, 0.0, 3.0, 55.0, 99.5, 130.0, 220.0] {
            let direct = adaptive_simpson(
                |b| h.density(s, b) * tilt_at(v, s + b),
                0.0,
                h.width(s),
                1e-12,
            );
            assert_relative_eq!(lengthened_mass(&m, v, s), direct, max_relative = 1e-8);
        }

        let m1 = ModelSpec::model1(1, 1.0, 100.0, 0.2, BirthRate::age_linear()).unwrap();
        let cert1 = lyapunov_build(&m1, 1e-3, 1.0).unwrap();
        let h1 = m1.lengthening();
        for s in [-0.5, 0.0, 10.0, 2150.0, 2250.0] {
            let direct = adaptive_simpson(
                |b| h1.density(s, b) * tilt_at(&cert1.v, s + b),
                0.0,
                h1.width(s),
                1e-13,
            );
            assert_relative_eq!(lengthened_mass(&m1, &cert1.v, s), direct, max_relative = 1e-8);
        }
    }

    #[test]
    fn type_probabilities_form_a_distribution() {
        let (m, psi) = psi_tight();
        let mut rng = StreamKey::root(0x7E57).child(purpose::VERIFY).rng();
        for _ in 0..100 {
            let x = [250.0 * rng.gen::<f64>(), 250.0 * rng.gen::<f64>()];
            let age = 3.0 * rng.gen::<f64>();
            let probs = jump_type_probs(&m, &psi, &x, age, None).unwrap();
            assert_eq!(probs.entries.len(), 8);
            assert_eq!(probs.max_d_se, 0.0);
            for e in &probs.entries {
                assert!((0.0..=1.0).contains(&e.prob), "prob {} at {:?}", e.prob, x);
            }
            let total = probs.total();
            assert!(total <= 1.0);
            assert!((total + probs.cemetery - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn flat_interior_type_masses_match_division_frequencies() {
        let (m, psi) = psi_roomy();
        let x = [50.0, 50.0];
        let probs = jump_type_probs(&m, &psi, &x, 0.7, None).unwrap();
        assert_relative_eq!(probs.kernel_mass, 2.0, max_relative = 1e-9);

        let total = probs.total();
        let n = 30_000usize;
        let mut rng = StreamKey::root(0xD1CE).child(purpose::VERIFY).rng();
        let mut counts: HashMap<(u32, u64), usize> = HashMap::new();
        for _ in 0..n {
            let out = m.sample_division(&x, &mut rng).unwrap();
            *counts.entry((out.shortened_a.bits(), out.lengthened_a)).or_default() += 1;
        }
        for e in &probs.entries {
            let p = e.prob / total;
            let freq = counts.get(&(e.i_set.bits(), e.j_mask)).copied().unwrap_or(0) as f64
                / n as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!(
                (freq - p).abs() <= 5.0 * se + 1e-12,
                "type ({:?}, {:#b}): frequency {freq:.5} vs probability {p:.5}",
                e.i_set.bits(),
                e.j_mask
            );
        }
    }

    #[test]
    fn paired_preset_lengthens_everything() {
        let m = ModelSpec::model1(1, 1.0, 100.0, 0.2, BirthRate::age_linear()).unwrap();
        let cert = lyapunov_build(&m, 1e-3, 1.0).unwrap();
        let lambda = compute_lambda_psi(&m, &cert, 1, 0.05, None).unwrap();
        let psi = PsiWeight::new(&m, cert, 1, lambda).unwrap();
        let probs = jump_type_probs(&m, &psi, &[500.0, 500.0], 1.0, None).unwrap();
        let full = 0b11u64;
        for e in &probs.entries {
            if e.j_mask != full {
                assert_eq!(e.prob, 0.0);
            }
        }
        let nonzero: Vec<&JumpType> =
            probs.entries.iter().filter(|e| e.prob > 0.0).collect();
        assert_eq!(nonzero.len(), 2);
        assert_relative_eq!(nonzero[0].prob, nonzero[1].prob, max_relative = 1e-12);
        assert_relative_eq!(probs.kernel_mass, 2.0, max_relative = 1e-9);
        assert!(probs.total() > 0.0 && probs.total() <= 1.0);
    }

    #[test]
    fn coordinate_masses_match_a_direct_monte_carlo() {
        // A state straddling the tilt edge, where every class integral is
        // nontrivial: weighted division draws are the oracle.
        let (m, psi) = psi_tight();
        let x = [150.0, 40.0];
        let probs = jump_type_probs(&m, &psi, &x, 0.5, None).unwrap();

        let n = 200_000usize;
        let mut rng = StreamKey::root(0xFAC7).child(purpose::VERIFY).rng();
        let mut acc: HashMap<(u32, u64), (u64, f64, f64)> = HashMap::new();
        let v = psi.v();
        for _ in 0..n {
            let out = m.sample_division(&x, &mut rng).unwrap();
            let val = if out.daughter_a.is_alive() { v.eval(out.daughter_a.lengths()) } else { 0.0 };
            let slot = acc.entry((out.shortened_a.bits(), out.lengthened_a)).or_default();
            slot.0 += 1;
            slot.1 += val;
            slot.2 += val * val;
        }
        for e in &probs.entries {
            let (_, sum, sum_sq) =
                acc.get(&(e.i_set.bits(), e.j_mask)).copied().unwrap_or((0, 0.0, 0.0));
            // Mean over all draws, zero outside the type, estimates d.
            let (mean, se) = mean_se_from_moments(n as u64, sum, sum_sq);
            assert!(
                (e.d - mean).abs() <= 4.5 * se + 1e-9,
                "type ({:#b}, {:#b}): quadrature {:.6} vs Monte Carlo {:.6} (se {:.2e})",
                e.i_set.bits(),
                e.j_mask,
                e.d,
                mean,
                se
            );
        }
    }

    #[test]
    fn jump_values_follow_the_conditional_kernel() {
        // Deep in the flat region the weighted jump law reduces to the
        // division kernel conditioned on the type; compare marginals by a
        // two-sample Kolmogorov-Smirnov distance.
        let (m, psi) = psi_roomy();
        let x = [50.0, 50.0];
        let i_set = ShorteningIndexSet::from_bits(1, 0);
        let j_mask = 0b11u64;

        let mut rng = StreamKey::root(0x5A3).child(purpose::PARTICLE).rng();
        let weighted: Vec<Vec<f64>> = (0..4000)
            .map(|_| sample_jump_value(&m, &psi, &x, i_set, j_mask, &mut rng).unwrap())
            .collect();

        let mut oracle = Vec::new();
        let mut rng2 = StreamKey::root(0x9B1).child(purpose::VERIFY).rng();
        while oracle.len() < 4000 {
            let out = m.sample_division(&x, &mut rng2).unwrap();
            if out.shortened_a == i_set && out.lengthened_a == j_mask && out.daughter_a.is_alive()
            {
                oracle.push(out.daughter_a.lengths().to_vec());
            }
        }
        for c in 0..2 {
            let sample: Vec<f64> = weighted.iter().map(|y| y[c]).collect();
            let mut reference: Vec<f64> = oracle.iter().map(|y| y[c]).collect();
            reference.sort_by(f64::total_cmp);
            let nref = reference.len() as f64;
            let cdf = |v: f64| reference.partition_point(|&r| r <= v) as f64 / nref;
            let d = ks_statistic(&sample, cdf);
            assert!(d < 0.05, "coordinate {c}: two-sample distance {d:.4}");
        }

        // Paired lengthening never produces a partial mask, so asking for
        // one exhausts the proposal budget.
        let m1 = ModelSpec::model1(1, 1.0, 100.0, 0.2, BirthRate::age_linear()).unwrap();
        let cert1 = lyapunov_build(&m1, 1e-3, 1.0).unwrap();
        let lambda1 = compute_lambda_psi(&m1, &cert1, 1, 0.05, None).unwrap();
        let psi1 = PsiWeight::new(&m1, cert1, 1, lambda1).unwrap();
        let mut rng3 = StreamKey::root(0x11).child(purpose::PARTICLE).rng();
        assert!(matches!(
            sample_jump_value(&m1, &psi1, &[500.0, 500.0], i_set, 0b01, &mut rng3),
            Err(ParticleError::RejectionBudget { .. })
        ));
    }

    #[test]
    fn particle_paths_satisfy_the_bookkeeping_invariants() {
        let (m, psi) = psi_tight();
        let x0 = [50.0, 50.0];
        let a0 = 0.4;
        let mut saw_absorption = false;
        let mut saw_jumps = false;
        for i in 0..300u64 {
            let key = StreamKey::root(0xBEEF).child(i);
            let path = simulate_particle(&m, &psi, &x0, a0, 3.0, key, None).unwrap();
            assert_eq!(path.states.len(), path.jumps() + 1);
            assert_eq!(path.labels.len(), path.jumps());
            assert!(path.jump_times.windows(2).all(|w| w[0] < w[1]));
            assert!(path.jump_times.iter().all(|&t| t <= path.horizon));
            if path.absorbed {
                saw_absorption = true;
                let tau = path.tau.unwrap();
                assert!(tau <= path.horizon);
                assert!(path.jump_times.last().is_none_or(|&last| last < tau));
            } else {
                assert!(path.tau.is_none());
            }
            if path.jumps() > 0 {
                saw_jumps = true;
            }

            let mut coverage = 0u64;
            let mut expected_t_all = None;
            for (n, (i_set, j_mask)) in path.labels.iter().enumerate() {
                coverage |= i_set.coord_mask() | j_mask;
                if expected_t_all.is_none() && coverage == 0b11 {
                    expected_t_all = Some(path.jump_times[n]);
                }
            }
            assert_eq!(path.t_all, expected_t_all);

            let (xs, age) = path.state_at(0.0).unwrap();
            assert_eq!(xs, &x0);
            assert_relative_eq!(age, a0);
            if let Some(&t1) = path.jump_times.first() {
                let probe = 0.5 * (t1 + path.jump_times.get(1).copied().unwrap_or(path.horizon));
                if !(path.absorbed && path.tau.unwrap() <= probe) {
                    let (xs, age) = path.state_at(probe).unwrap();
                    assert_eq!(xs, path.states[1].as_slice());
                    assert_relative_eq!(age, probe - t1, max_relative = 1e-12);
                }
            }
            if path.absorbed {
                assert!(path.state_at(path.tau.unwrap()).is_none());
            }
        }
        assert!(saw_absorption && saw_jumps);
    }

    #[test]
    fn first_coverage_time_vanishes_in_the_tail() {
        let (m, psi) = psi_tight();
        let x0 = [50.0, 50.0];
        let horizon = 8.0;
        let n = 10_000usize;
        let resolved: Vec<f64> = (0..n)
            .map(|i| {
                let key = StreamKey::root(0xCAFE).child(i as u64);
                let path = simulate_particle(&m, &psi, &x0, 0.0, horizon, key, None).unwrap();
                path.t_all
                    .unwrap_or(f64::INFINITY)
                    .min(path.tau.unwrap_or(f64::INFINITY))
            })
            .collect();
        let tail = |u: f64| resolved.iter().filter(|&&v| v > u).count() as f64 / n as f64;
        let mut last = 1.0;
        for step in 0..=8 {
            let now = tail(step as f64);
            assert!(now <= last + 1e-12);
            last = now;
        }
        assert!(tail(horizon) < 0.02, "tail at the horizon: {}", tail(horizon));
    }

    #[test]
    fn semigroup_sides_agree_for_the_independent_preset() {
        let (m, psi) = psi_tight();
        let x0 = [50.0, 50.0];
        let key = StreamKey::root(0xAB5);
        let all_ones = |_: &[f64], _: f64| 1.0;
        let report = cross_validate_semigroup(
            &m, &psi, &x0, 0.3, &all_ones, 1.0, 20_000, 20_000, 100_000, key, None,
        )
        .unwrap();
        assert!(report.particle_mean > 0.0);
        assert!(
            report.consistent(),
            "constant payoff: particle {:.5} ({:.1e}) vs population {:.5} ({:.1e}), z = {:.2}",
            report.particle_mean,
            report.particle_se,
            report.population_mean,
            report.population_se,
            report.z
        );

        let in_box = |xs: &[f64], _: f64| if xs.iter().all(|&c| c <= 80.0) { 1.0 } else { 0.0 };
        let report = cross_validate_semigroup(
            &m, &psi, &x0, 0.3, &in_box, 1.0, 20_000, 20_000, 100_000, StreamKey::root(0xAB6), None,
        )
        .unwrap();
        assert!(
            report.consistent(),
            "box payoff: particle {:.5} ({:.1e}) vs population {:.5} ({:.1e}), z = {:.2}",
            report.particle_mean,
            report.particle_se,
            report.population_mean,
            report.population_se,
            report.z
        );
    }

    #[test]
    fn one_jump_reports_are_consistent() {
        let (m, psi) = psi_tight();
        let x0 = [50.0, 50.0];
        let t = 0.6;
        let n = 20_000usize;

        // An empty window is impossible on both sides.
        let empty = OneJumpEvent {
            pair: (ShorteningIndexSet::from_bits(1, 0), 0b11),
            value_lo: 0.0,
            value_hi: f64::INFINITY,
            window: (0.2, 0.2),
        };
        let report =
            one_jump_law_check(&m, &psi, &x0, 0.0, t, empty, 2_000, StreamKey::root(3), None)
                .unwrap();
        assert_eq!(report.path_estimate, 0.0);
        assert_eq!(report.oracle_estimate, 0.0);
        assert_eq!(report.z, 0.0);

        // The full-window, full-box events over every label partition the
        // single-jump outcome, so each agrees and the totals agree.
        let mut path_total = 0.0;
        let mut oracle_total = 0.0;
        let mut oracle_var = 0.0;
        for i_bits in 0..2u32 {
            for j_mask in 0..4u64 {
                let event = OneJumpEvent {
                    pair: (ShorteningIndexSet::from_bits(1, i_bits), j_mask),
                    value_lo: 0.0,
                    value_hi: f64::INFINITY,
                    window: (0.0, t),
                };
                let report =
                    one_jump_law_check(&m, &psi, &x0, 0.0, t, event, n, StreamKey::root(77), None)
                        .unwrap();
                assert!(
                    report.z < 4.0,
                    "event ({i_bits:#b}, {j_mask:#b}): path {:.5} vs oracle {:.5}, z = {:.2}",
                    report.path_estimate,
                    report.oracle_estimate,
                    report.z
                );
                path_total += report.path_estimate;
                oracle_total += report.oracle_estimate;
                oracle_var += report.oracle_se * report.oracle_se;
            }
        }
        // The same key drives every call, so the path indicators add up to
        // the exact single-jump frequency of one shared batch.
        let single: Vec<f64> = (0..n)
            .map(|i| {
                let path = simulate_particle(
                    &m,
                    &psi,
                    &x0,
                    0.0,
                    t,
                    StreamKey::root(77).child(1).child(i as u64),
                    None,
                )
                .unwrap();
                if !path.absorbed && path.jumps() == 1 { 1.0 } else { 0.0 }
            })
            .collect();
        let (single_mean, single_se) = mean_se(&single);
        assert_relative_eq!(path_total, single_mean, max_relative = 1e-12);
        let z = (single_mean - oracle_total).abs()
            / (single_se * single_se + oracle_var).sqrt();
        assert!(z < 3.0, "partition total {single_mean:.5} vs oracle {oracle_total:.5}, z = {z:.2}");
    }

    #[test]
    fn custom_pair_laws_run_through_the_cache() {
        let renewal = RenewalScheme { d: 1, eps0: 0.4801, b_max: 201.0, renew_hi: 201.0 };
        let pmf = Arc::new(|j: u64, m_mask: u64, s1: &[f64], s2: &[f64]| {
            let flip = |mask: u64, dim: usize| 0.5f64.powi(dim as i32) * if mask >> dim == 0 { 1.0 } else { 0.0 };
            let _ = (s1, s2);
            flip(j, 2) * flip(m_mask, 2)
        });
        let custom_model = ModelSpec::custom(
            1,
            ShorteningLaw::uniform(1.0).unwrap(),
            LengtheningLaw::uniform_fixed(100.0).unwrap(),
            PairLaw::Custom { pmf },
            BirthRate::age_linear(),
            renewal,
        )
        .unwrap();
        let exact_model = ModelSpec::custom(
            1,
            ShorteningLaw::uniform(1.0).unwrap(),
            LengtheningLaw::uniform_fixed(100.0).unwrap(),
            PairLaw::PerCoordinate { q: Arc::new(|_| 0.5) },
            BirthRate::age_linear(),
            renewal,
        )
        .unwrap();

        let cert_c = lyapunov_build(&custom_model, 1e-3, 1.0).unwrap();
        let cert_e = lyapunov_build(&exact_model, 1e-3, 1.0).unwrap();
        let lam_c = compute_lambda_psi(&custom_model, &cert_c, 1, 0.05, None).unwrap();
        let lam_e = compute_lambda_psi(&exact_model, &cert_e, 1, 0.05, None).unwrap();
        let psi_c = PsiWeight::new(&custom_model, cert_c, 1, lam_c).unwrap();
        let psi_e = PsiWeight::new(&exact_model, cert_e, 1, lam_e).unwrap();

        let x = [60.0, 60.0];
        assert!(matches!(
            jump_type_probs(&custom_model, &psi_c, &x, 1.0, None),
            Err(ParticleError::CacheRequired)
        ));

        let cache = DCache::new(StreamKey::root(0xACE), 1.0, 1e-2);
        let cached = jump_type_probs(&custom_model, &psi_c, &x, 1.0, Some(&cache)).unwrap();
        let exact = jump_type_probs(&exact_model, &psi_e, &x, 1.0, None).unwrap();
        assert!(cache.len() >= 8);
        assert!(cached.max_d_se > 0.0);
        for (a, b) in cached.entries.iter().zip(&exact.entries) {
            assert_eq!((a.i_set, a.j_mask), (b.i_set, b.j_mask));
            assert!(
                (a.d - b.d).abs() <= 0.05 * b.d.max(1e-6),
                "type ({:#b}, {:#b}): cached {:.6} vs exact {:.6}",
                a.i_set.bits(),
                a.j_mask,
                a.d,
                b.d
            );
        }
        let again = jump_type_probs(&custom_model, &psi_c, &x, 1.0, Some(&cache)).unwrap();
        for (a, b) in cached.entries.iter().zip(&again.entries) {
            assert_eq!(a.prob, b.prob);
        }

        let path =
            simulate_particle(&custom_model, &psi_c, &x, 0.0, 2.0, StreamKey::root(5), Some(&cache))
                .unwrap();
        assert!(path.states.len() == path.jumps() + 1);

        let wide = ModelSpec::model2(5, 1.0, 100.0, 0.995, 50.0, 2.0, BirthRate::age_linear())
            .unwrap();
        let cert_w = lyapunov_build(&wide, 1e-3, 1.0).unwrap();
        let lam_w = compute_lambda_psi(&wide, &cert_w, 1, 0.05, None).unwrap();
        let psi_w = PsiWeight::new(&wide, cert_w, 1, lam_w).unwrap();
        assert!(matches!(
            jump_type_probs(&wide, &psi_w, &[50.0; 10], 1.0, None),
            Err(ParticleError::TooManyJumpTypes { .. })
        ));
    }
}
