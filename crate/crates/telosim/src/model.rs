//! Cell division model: telomere length vectors, shortening and lengthening
//! laws, age-dependent birth rates, and exact sampling of division outcomes.
//!
//! A cell carries `2k` telomere lengths, one per chromosome end. At division
//! each chromosome sends one end to daughter A for shortening and the other
//! end to daughter B, so the shortened coordinate sets of the daughters are
//! complementary. Shortened coordinates lose an independent amount drawn
//! from the shortening density; a random pair of coordinate subsets is then
//! lengthened, each selected coordinate gaining an amount drawn from the
//! lengthening density for its current length. A daughter whose minimum
//! coordinate is strictly below zero at birth is senescent; a coordinate at
//! exactly zero is still alive.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::numerics::{adaptive_simpson, bisect};

/// Enumeration of shortening sets is exponential in `k`.
pub const MAX_K: usize = 20;

/// Attempts allowed to any rejection sampler before it gives up.
pub const REJECTION_BUDGET: u64 = 1_000_000;

const DENSITY_MASS_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("k must lie in [1, {MAX_K}], got {0}")]
    BadK(usize),
    #[error("shortening bound delta must be positive and finite, got {0}")]
    BadDelta(f64),
    #[error("lengthening bound Delta = {big} must exceed delta = {small}")]
    BadDeltaOrder { big: f64, small: f64 },
    #[error("gamma must lie strictly inside (0, 1), got {0}")]
    BadGamma(f64),
    #[error(
        "size condition failed: ((Delta-delta)/Delta)^(2k^2+4k) = {got:.6} <= 1/4; \
         with k = {k} and delta = {delta} it needs Delta > {critical:.3}"
    )]
    SizeConditionPairedEnds { got: f64, k: usize, delta: f64, critical: f64 },
    #[error(
        "margin condition failed: (1-gamma)^(2k) * ((Delta-delta)/Delta)^(2k^2+4k) = {got:.6} <= 1/4; \
         gamma = {gamma} is too large for this geometry"
    )]
    GammaMargin { got: f64, gamma: f64 },
    #[error(
        "size condition failed: ((Delta-delta)/Delta)^(2k) = {got:.6} <= 1/2; \
         with k = {k} and delta = {delta} it needs Delta > {critical:.3}"
    )]
    SizeConditionIndependent { got: f64, k: usize, delta: f64, critical: f64 },
    #[error("lengthening probability q0 = {q0} is below the required floor {floor:.6}")]
    QFloor { q0: f64, floor: f64 },
    #[error("lengthening probability parameters must satisfy 0 < q0 <= 1, x_scale > 0, p > 0")]
    BadQParams,
    #[error("density mass on its support is {0}, expected 1 within 1e-9")]
    DensityMass(f64),
    #[error("density leaves its declared bounds: value {value:.6e} at {at:.6} not in [{min:.6e}, {max:.6e}]")]
    DensityBounds { value: f64, at: f64, min: f64, max: f64 },
    #[error("pair probabilities sum to {0}, expected 1 within 1e-9")]
    PairMass(f64),
    #[error("pair law symmetry violated: p(J,M|s1,s2) = {0:.6e} but p(M,J|s2,s1) = {1:.6e}")]
    PairSymmetry(f64, f64),
    #[error("pair law enumeration limited to 2k <= {max}, got 2k = {got}")]
    PairTooLarge { got: usize, max: usize },
    #[error("telomere vector needs {expected} coordinates, got {got}")]
    BadVectorLength { expected: usize, got: usize },
    #[error("telomere vector coordinates must be finite and nonnegative, got {0}")]
    BadCoordinate(f64),
    #[error("birth rate exceeds its envelope at age {age:.3}: b = {rate:.6} > {envelope:.6}")]
    EnvelopeViolated { age: f64, rate: f64, envelope: f64 },
    #[error("polynomial birth rate needs nonnegative coefficients with a positive sum")]
    BadPolynomial,
    #[error(transparent)]
    Root(#[from] crate::numerics::RootError),
    #[error(transparent)]
    Rejection(#[from] RejectionBudgetExhausted),
}

#[derive(Debug, Error)]
#[error("rejection sampler exhausted its budget of {0} attempts")]
pub struct RejectionBudgetExhausted(pub u64);

// ── telomere vectors and cell states ──

/// Vector of `2k` telomere lengths.
#[derive(Clone, Debug, PartialEq)]
pub struct TelomereVector(Vec<f64>);

impl TelomereVector {
    pub fn new(k: usize, values: Vec<f64>) -> Result<Self, ModelError> {
        if values.len() != 2 * k {
            return Err(ModelError::BadVectorLength { expected: 2 * k, got: values.len() });
        }
        for &v in &values {
            if !v.is_finite() || v < 0.0 {
                return Err(ModelError::BadCoordinate(v));
            }
        }
        Ok(TelomereVector(values))
    }

    /// All `2k` coordinates set to the same length.
    pub fn constant(k: usize, value: f64) -> Result<Self, ModelError> {
        Self::new(k, vec![value; 2 * k])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Deref for TelomereVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// State of a cell at birth or at a snapshot time. Senescent cells keep
/// their lengths but never divide again.
#[derive(Clone, Debug, PartialEq)]
pub enum CellState {
    Alive { x: TelomereVector, age: f64 },
    Senescent { lengths: Vec<f64> },
}

impl CellState {
    /// Classify a freshly built coordinate vector: senescent iff some
    /// coordinate is strictly negative, alive (age zero) otherwise.
    pub fn from_lengths(values: Vec<f64>) -> CellState {
        if values.iter().any(|&v| v < 0.0) {
            CellState::Senescent { lengths: values }
        } else {
            CellState::Alive { x: TelomereVector(values), age: 0.0 }
        }
    }

    pub fn is_alive(&self) -> bool {
        matches!(self, CellState::Alive { .. })
    }

    pub fn lengths(&self) -> &[f64] {
        match self {
            CellState::Alive { x, .. } => x.as_slice(),
            CellState::Senescent { lengths } => lengths,
        }
    }
}

// ── shortening index sets ──

/// One of the `2^k` admissible shortened-coordinate sets for daughter A.
///
/// Coordinates are indexed `0..2k`; chromosome `j` owns coordinates `j` and
/// `j + k`, and exactly one of the two is shortened per daughter. Bit `j` of
/// `bits` tells whether daughter A shortens the upper end `j + k` (bit set)
/// or the lower end `j` (bit clear).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ShorteningIndexSet {
    bits: u32,
    k: u8,
}

impl ShorteningIndexSet {
    pub fn from_bits(k: usize, bits: u32) -> Self {
        debug_assert!(k >= 1 && k <= MAX_K);
        debug_assert!(bits < (1u32 << k));
        ShorteningIndexSet { bits, k: k as u8 }
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn contains(&self, coord: usize) -> bool {
        let k = self.k as usize;
        debug_assert!(coord < 2 * k);
        let chromosome = coord % k;
        ((self.bits >> chromosome) & 1 == 1) == (coord >= k)
    }

    /// Shortened set of the sibling daughter.
    pub fn complement(&self) -> Self {
        ShorteningIndexSet { bits: self.bits ^ ((1u32 << self.k) - 1), k: self.k }
    }

    /// Member coordinates in increasing order.
    pub fn coords(&self) -> Vec<usize> {
        let k = self.k as usize;
        (0..2 * k).filter(|&c| self.contains(c)).collect()
    }

    /// Bitmask over coordinates `0..2k`.
    pub fn coord_mask(&self) -> u64 {
        let k = self.k as usize;
        let mut mask = 0u64;
        for j in 0..k {
            if (self.bits >> j) & 1 == 1 {
                mask |= 1u64 << (j + k);
            } else {
                mask |= 1u64 << j;
            }
        }
        mask
    }
}

impl fmt::Display for ShorteningIndexSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let coords = self.coords();
        write!(f, "{{")?;
        for (i, c) in coords.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, "}}")
    }
}

/// All `2^k` shortening sets. Errors for `k` beyond [`MAX_K`].
pub fn enumerate_shortening_sets(k: usize) -> Result<Vec<ShorteningIndexSet>, ModelError> {
    if k == 0 || k > MAX_K {
        return Err(ModelError::BadK(k));
    }
    Ok((0..(1u32 << k)).map(|bits| ShorteningIndexSet::from_bits(k, bits)).collect())
}

/// Uniform draw over the shortening sets from `k` fair bits; never
/// enumerates, so it stays cheap for any admissible `k`.
pub fn sample_shortening_set(k: usize, rng: &mut ChaCha8Rng) -> ShorteningIndexSet {
    debug_assert!(k >= 1 && k <= MAX_K);
    let bits = rng.gen::<u32>() & ((1u32 << k) - 1);
    ShorteningIndexSet::from_bits(k, bits)
}

// ── shortening law ──

type Density = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum ShorteningKind {
    Uniform,
    Custom { density: Density },
}

/// Law of the amount removed from each shortened coordinate, supported on
/// `[0, delta]`.
#[derive(Clone)]
pub struct ShorteningLaw {
    bound: f64,
    g_min: f64,
    g_max: f64,
    kind: ShorteningKind,
}

impl ShorteningLaw {
    pub fn uniform(delta: f64) -> Result<Self, ModelError> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(ModelError::BadDelta(delta));
        }
        Ok(ShorteningLaw {
            bound: delta,
            g_min: 1.0 / delta,
            g_max: 1.0 / delta,
            kind: ShorteningKind::Uniform,
        })
    }

    /// Custom density on `[0, delta]` with declared bounds. The mass is
    /// required to be 1 within 1e-9 and the bounds are spot-checked.
    pub fn custom(delta: f64, density: Density, g_min: f64, g_max: f64) -> Result<Self, ModelError> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(ModelError::BadDelta(delta));
        }
        let mass = adaptive_simpson(|u| density(u), 0.0, delta, 1e-12);
        if (mass - 1.0).abs() > DENSITY_MASS_TOL {
            return Err(ModelError::DensityMass(mass));
        }
        for i in 0..=200 {
            let u = delta * i as f64 / 200.0;
            let v = density(u);
            if v < g_min - 1e-12 || v > g_max + 1e-12 {
                return Err(ModelError::DensityBounds { value: v, at: u, min: g_min, max: g_max });
            }
        }
        Ok(ShorteningLaw { bound: delta, g_min, g_max, kind: ShorteningKind::Custom { density } })
    }

    /// Upper end of the support (the largest possible shortening).
    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn g_min(&self) -> f64 {
        self.g_min
    }

    pub fn g_max(&self) -> f64 {
        self.g_max
    }

    pub fn density(&self, u: f64) -> f64 {
        if !(0.0..=self.bound).contains(&u) {
            return 0.0;
        }
        match &self.kind {
            ShorteningKind::Uniform => 1.0 / self.bound,
            ShorteningKind::Custom { density } => density(u),
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Result<f64, RejectionBudgetExhausted> {
        match &self.kind {
            ShorteningKind::Uniform => Ok(self.bound * rng.gen::<f64>()),
            ShorteningKind::Custom { density } => {
                for _ in 0..REJECTION_BUDGET {
                    let u = self.bound * rng.gen::<f64>();
                    if rng.gen::<f64>() * self.g_max <= density(u) {
                        return Ok(u);
                    }
                }
                Err(RejectionBudgetExhausted(REJECTION_BUDGET))
            }
        }
    }

    /// Laplace transform `E[exp(-lambda U)]`.
    pub fn laplace(&self, lambda: f64) -> f64 {
        match &self.kind {
            ShorteningKind::Uniform => {
                if lambda.abs() < 1e-14 {
                    1.0
                } else {
                    (1.0 - (-lambda * self.bound).exp()) / (lambda * self.bound)
                }
            }
            ShorteningKind::Custom { density } => {
                adaptive_simpson(|u| (-lambda * u).exp() * density(u), 0.0, self.bound, 1e-12)
            }
        }
    }
}

// ── lengthening law ──

type ConditionalDensity = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum LengtheningKind {
    /// Uniform on `[0, Delta]` whatever the current length.
    UniformFixed,
    /// Uniform on `[0, Delta]` below zero and on `[0, Delta/(x+1)]` at
    /// length `x >= 0`, so long telomeres gain little.
    UniformShrinking,
    Custom { width: Density, density: ConditionalDensity, h_max: f64 },
}

/// Law of the amount added to a lengthened coordinate, conditional on its
/// current (post-shortening) length.
#[derive(Clone)]
pub struct LengtheningLaw {
    bound: f64,
    h_min: f64,
    kind: LengtheningKind,
}

impl LengtheningLaw {
    pub fn uniform_fixed(delta_cap: f64) -> Result<Self, ModelError> {
        if !(delta_cap > 0.0) || !delta_cap.is_finite() {
            return Err(ModelError::BadDelta(delta_cap));
        }
        Ok(LengtheningLaw { bound: delta_cap, h_min: 1.0 / delta_cap, kind: LengtheningKind::UniformFixed })
    }

    pub fn uniform_shrinking(delta_cap: f64) -> Result<Self, ModelError> {
        if !(delta_cap > 0.0) || !delta_cap.is_finite() {
            return Err(ModelError::BadDelta(delta_cap));
        }
        Ok(LengtheningLaw {
            bound: delta_cap,
            h_min: 1.0 / delta_cap,
            kind: LengtheningKind::UniformShrinking,
        })
    }

    /// Custom conditional density `density(x, y)` supported on
    /// `[0, width(x)]` with `width(x) <= delta_cap`. Mass is checked at a
    /// few representative lengths.
    pub fn custom(
        delta_cap: f64,
        width: Density,
        density: ConditionalDensity,
        h_min: f64,
        h_max: f64,
    ) -> Result<Self, ModelError> {
        if !(delta_cap > 0.0) || !delta_cap.is_finite() {
            return Err(ModelError::BadDelta(delta_cap));
        }
        for x in [-0.5, 0.0, 1.0, delta_cap, 10.0 * delta_cap] {
            let w = width(x);
            if !(w > 0.0) || w > delta_cap * (1.0 + 1e-12) {
                return Err(ModelError::BadDelta(w));
            }
            let mass = adaptive_simpson(|y| density(x, y), 0.0, w, 1e-12);
            if (mass - 1.0).abs() > DENSITY_MASS_TOL {
                return Err(ModelError::DensityMass(mass));
            }
        }
        Ok(LengtheningLaw { bound: delta_cap, h_min, kind: LengtheningKind::Custom { width, density, h_max } })
    }

    /// Upper bound on any lengthening jump.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn h_min(&self) -> f64 {
        self.h_min
    }

    /// Whether `h(x, .)` is uniform on `[0, width(x)]` for every `x`.
    pub fn is_uniform(&self) -> bool {
        !matches!(self.kind, LengtheningKind::Custom { .. })
    }

    /// Width of the support of `h(x, .)`.
    pub fn width(&self, x: f64) -> f64 {
        match &self.kind {
            LengtheningKind::UniformFixed => self.bound,
            LengtheningKind::UniformShrinking => {
                if x < 0.0 {
                    self.bound
                } else {
                    self.bound / (x + 1.0)
                }
            }
            LengtheningKind::Custom { width, .. } => width(x),
        }
    }

    pub fn density(&self, x: f64, y: f64) -> f64 {
        let w = self.width(x);
        if !(0.0..=w).contains(&y) {
            return 0.0;
        }
        match &self.kind {
            LengtheningKind::UniformFixed | LengtheningKind::UniformShrinking => 1.0 / w,
            LengtheningKind::Custom { density, .. } => density(x, y),
        }
    }

    pub fn sample(&self, x: f64, rng: &mut ChaCha8Rng) -> Result<f64, RejectionBudgetExhausted> {
        let w = self.width(x);
        match &self.kind {
            LengtheningKind::UniformFixed | LengtheningKind::UniformShrinking => Ok(w * rng.gen::<f64>()),
            LengtheningKind::Custom { density, h_max, .. } => {
                for _ in 0..REJECTION_BUDGET {
                    let y = w * rng.gen::<f64>();
                    if rng.gen::<f64>() * h_max <= density(x, y) {
                        return Ok(y);
                    }
                }
                Err(RejectionBudgetExhausted(REJECTION_BUDGET))
            }
        }
    }

    /// Moment generating function `E[exp(lambda V)]` of `h(x, .)`, the
    /// Laplace transform evaluated at `-lambda`.
    pub fn mgf(&self, x: f64, lambda: f64) -> f64 {
        match &self.kind {
            LengtheningKind::UniformFixed | LengtheningKind::UniformShrinking => {
                let w = self.width(x);
                if (lambda * w).abs() < 1e-14 {
                    1.0
                } else {
                    ((lambda * w).exp() - 1.0) / (lambda * w)
                }
            }
            LengtheningKind::Custom { width, density, .. } => {
                let w = width(x);
                adaptive_simpson(|y| (lambda * y).exp() * density(x, y), 0.0, w, 1e-12)
            }
        }
    }
}

// ── pair law for lengthened coordinate sets ──

type PairPmf = Arc<dyn Fn(u64, u64, &[f64], &[f64]) -> f64 + Send + Sync>;
type LengthenProb = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

const PAIR_ENUM_MAX_DIM: usize = 12;

/// Joint law of the lengthened coordinate subsets `(J, M)` of the two
/// daughters, conditional on their post-shortening lengths `(s1, s2)`.
/// Subsets are bitmasks over coordinates `0..2k`; empty sets are allowed.
#[derive(Clone)]
pub enum PairLaw {
    /// Every coordinate of both daughters is lengthened at every division.
    AllCoordinates,
    /// Each coordinate is lengthened independently with probability
    /// `q(current length)`.
    PerCoordinate { q: LengthenProb },
    /// Explicit joint probability mass function. Enumeration-based
    /// operations on it are limited to `2k <=` [`PAIR_ENUM_MAX_DIM`].
    Custom { pmf: PairPmf },
}

impl PairLaw {
    fn full_mask(dim: usize) -> u64 {
        (1u64 << dim) - 1
    }

    /// Probability of the pair `(j_mask, m_mask)` given post-shortening
    /// lengths.
    pub fn joint(&self, j_mask: u64, m_mask: u64, s1: &[f64], s2: &[f64]) -> f64 {
        let dim = s1.len();
        match self {
            PairLaw::AllCoordinates => {
                let full = Self::full_mask(dim);
                if j_mask == full && m_mask == full {
                    1.0
                } else {
                    0.0
                }
            }
            PairLaw::PerCoordinate { q } => {
                let mut p = 1.0;
                for c in 0..dim {
                    let qa = q(s1[c]);
                    let qb = q(s2[c]);
                    p *= if (j_mask >> c) & 1 == 1 { qa } else { 1.0 - qa };
                    p *= if (m_mask >> c) & 1 == 1 { qb } else { 1.0 - qb };
                }
                p
            }
            PairLaw::Custom { pmf } => pmf(j_mask, m_mask, s1, s2),
        }
    }

    /// Marginal probability that daughter A's lengthened set is `j_mask`.
    pub fn marginal_a(&self, j_mask: u64, s1: &[f64], s2: &[f64]) -> Result<f64, ModelError> {
        let dim = s1.len();
        match self {
            PairLaw::AllCoordinates => {
                Ok(if j_mask == Self::full_mask(dim) { 1.0 } else { 0.0 })
            }
            PairLaw::PerCoordinate { q } => {
                let mut p = 1.0;
                for c in 0..dim {
                    let qa = q(s1[c]);
                    p *= if (j_mask >> c) & 1 == 1 { qa } else { 1.0 - qa };
                }
                Ok(p)
            }
            PairLaw::Custom { pmf } => {
                if dim > PAIR_ENUM_MAX_DIM {
                    return Err(ModelError::PairTooLarge { got: dim, max: PAIR_ENUM_MAX_DIM });
                }
                let mut total = 0.0;
                for m_mask in 0..(1u64 << dim) {
                    total += pmf(j_mask, m_mask, s1, s2);
                }
                Ok(total)
            }
        }
    }

    pub fn sample(
        &self,
        s1: &[f64],
        s2: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Result<(u64, u64), ModelError> {
        let dim = s1.len();
        match self {
            PairLaw::AllCoordinates => {
                let full = Self::full_mask(dim);
                Ok((full, full))
            }
            PairLaw::PerCoordinate { q } => {
                let mut j_mask = 0u64;
                let mut m_mask = 0u64;
                for c in 0..dim {
                    if rng.gen::<f64>() < q(s1[c]) {
                        j_mask |= 1 << c;
                    }
                }
                for c in 0..dim {
                    if rng.gen::<f64>() < q(s2[c]) {
                        m_mask |= 1 << c;
                    }
                }
                Ok((j_mask, m_mask))
            }
            PairLaw::Custom { pmf } => {
                if dim > PAIR_ENUM_MAX_DIM {
                    return Err(ModelError::PairTooLarge { got: dim, max: PAIR_ENUM_MAX_DIM });
                }
                let target = rng.gen::<f64>();
                let mut acc = 0.0;
                let mut last = (0u64, 0u64);
                for j_mask in 0..(1u64 << dim) {
                    for m_mask in 0..(1u64 << dim) {
                        acc += pmf(j_mask, m_mask, s1, s2);
                        last = (j_mask, m_mask);
                        if target < acc {
                            return Ok(last);
                        }
                    }
                }
                Ok(last)
            }
        }
    }

    /// Exhaustive sum-to-one and symmetry validation at the given states.
    /// Structural variants pass trivially; custom laws are enumerated.
    pub fn validate(&self, states: &[(Vec<f64>, Vec<f64>)]) -> Result<(), ModelError> {
        let PairLaw::Custom { pmf } = self else {
            return Ok(());
        };
        for (s1, s2) in states {
            let dim = s1.len();
            if dim > PAIR_ENUM_MAX_DIM {
                return Err(ModelError::PairTooLarge { got: dim, max: PAIR_ENUM_MAX_DIM });
            }
            let mut total = 0.0;
            for j_mask in 0..(1u64 << dim) {
                for m_mask in 0..(1u64 << dim) {
                    let fwd = pmf(j_mask, m_mask, s1, s2);
                    let bwd = pmf(m_mask, j_mask, s2, s1);
                    if (fwd - bwd).abs() > 1e-9 * (1.0 + fwd.abs()) {
                        return Err(ModelError::PairSymmetry(fwd, bwd));
                    }
                    total += fwd;
                }
            }
            if (total - 1.0).abs() > 1e-9 {
                return Err(ModelError::PairMass(total));
            }
        }
        Ok(())
    }
}

// ── birth rates ──

/// Age-only rate used for the configurable birth kinds and for the renewal
/// comparisons. Polynomials have nonnegative coefficients, so every rate
/// here is nondecreasing in age.
#[derive(Clone, Debug, PartialEq)]
pub enum AgeRate {
    Constant(f64),
    /// `b(a) = a`.
    AgeLinear,
    /// `b(a) = sum coeffs[i] * a^i`.
    Poly(Vec<f64>),
}

impl AgeRate {
    pub fn eval(&self, age: f64) -> f64 {
        match self {
            AgeRate::Constant(c) => *c,
            AgeRate::AgeLinear => age,
            AgeRate::Poly(c) => {
                let mut acc = 0.0;
                for &ci in c.iter().rev() {
                    acc = acc * age + ci;
                }
                acc
            }
        }
    }

    /// `int_a^{a+s} b(u) du`.
    pub fn integral(&self, a: f64, s: f64) -> f64 {
        match self {
            AgeRate::Constant(c) => c * s,
            AgeRate::AgeLinear => a * s + 0.5 * s * s,
            AgeRate::Poly(c) => {
                let anti = |t: f64| -> f64 {
                    let mut acc = 0.0;
                    for (i, &ci) in c.iter().enumerate().rev() {
                        acc += ci / (i as f64 + 1.0) * t.powi(i as i32 + 1);
                    }
                    acc
                };
                anti(a + s) - anti(a)
            }
        }
    }

    /// Waiting time until the next event for a unit exponential quantile,
    /// i.e. the `u`-quantile of the law with survival
    /// `exp(-int_a^{a+s} b)`. Exact for the closed-form kinds, bisection
    /// for polynomials.
    pub fn waiting_time_from_age(&self, a: f64, u: f64) -> f64 {
        debug_assert!((0.0..1.0).contains(&u));
        let target = -(1.0 - u).ln();
        match self {
            AgeRate::Constant(c) => target / c,
            AgeRate::AgeLinear => (a * a + 2.0 * target).sqrt() - a,
            AgeRate::Poly(_) => {
                let mut hi = 1.0;
                while self.integral(a, hi) < target {
                    hi *= 2.0;
                    if hi > 1e12 {
                        break;
                    }
                }
                bisect(|s| self.integral(a, s) - target, 0.0, hi, 1e-12 * hi.max(1.0), 0.0)
                    .unwrap_or(hi)
            }
        }
    }

    /// Smallest degree `d` with `b(a) <= tilde * (1 + a^d)` for
    /// `tilde` = the coefficient sum, plus that coefficient sum.
    fn envelope(&self) -> (f64, u32) {
        match self {
            AgeRate::Constant(c) => (*c, 1),
            AgeRate::AgeLinear => (1.0, 1),
            AgeRate::Poly(c) => {
                let degree = c.len().saturating_sub(1).max(1) as u32;
                (c.iter().sum(), degree)
            }
        }
    }
}

#[derive(Clone)]
enum BirthKind {
    Age(AgeRate),
    Custom { rate: Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync> },
}

/// Division rate `b(x, a)` together with its polynomial envelope
/// `b <= b_tilde (1 + a^{d_b})` and the floor `b >= b_floor` for
/// `a >= a_floor`.
#[derive(Clone)]
pub struct BirthRate {
    kind: BirthKind,
    b_tilde: f64,
    d_b: u32,
    b_floor: f64,
    a_floor: f64,
    lower: Option<AgeRate>,
    upper: Option<AgeRate>,
}

impl BirthRate {
    pub fn constant(c: f64) -> Result<Self, ModelError> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(ModelError::BadPolynomial);
        }
        Ok(BirthRate {
            kind: BirthKind::Age(AgeRate::Constant(c)),
            b_tilde: c,
            d_b: 1,
            b_floor: c,
            a_floor: 0.0,
            lower: Some(AgeRate::Constant(c)),
            upper: Some(AgeRate::Constant(c)),
        })
    }

    pub fn age_linear() -> Self {
        BirthRate {
            kind: BirthKind::Age(AgeRate::AgeLinear),
            b_tilde: 1.0,
            d_b: 1,
            b_floor: 1.0,
            a_floor: 1.0,
            lower: Some(AgeRate::AgeLinear),
            upper: Some(AgeRate::AgeLinear),
        }
    }

    pub fn poly(coeffs: Vec<f64>) -> Result<Self, ModelError> {
        if coeffs.is_empty() || coeffs.iter().any(|&c| !(c >= 0.0) || !c.is_finite()) {
            return Err(ModelError::BadPolynomial);
        }
        let sum: f64 = coeffs.iter().sum();
        if !(sum > 0.0) {
            return Err(ModelError::BadPolynomial);
        }
        let rate = AgeRate::Poly(coeffs.clone());
        let (b_tilde, d_b) = rate.envelope();
        let (b_floor, a_floor) = if coeffs[0] > 0.0 { (coeffs[0], 0.0) } else { (rate.eval(1.0), 1.0) };
        Ok(BirthRate {
            kind: BirthKind::Age(rate.clone()),
            b_tilde,
            d_b,
            b_floor,
            a_floor,
            lower: Some(rate.clone()),
            upper: Some(rate),
        })
    }

    /// Fully custom rate with a declared envelope; the envelope is
    /// spot-checked at a reference trait over a wide age grid.
    pub fn custom(
        rate: Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>,
        b_tilde: f64,
        d_b: u32,
        b_floor: f64,
        a_floor: f64,
        reference_x: &[f64],
        lower: Option<AgeRate>,
        upper: Option<AgeRate>,
    ) -> Result<Self, ModelError> {
        if !(b_tilde > 0.0) || d_b == 0 {
            return Err(ModelError::BadPolynomial);
        }
        for i in 0..=400 {
            let age = 100.0 * i as f64 / 400.0;
            let b = rate(reference_x, age);
            let env = b_tilde * (1.0 + age.powi(d_b as i32));
            if b > env * (1.0 + 1e-12) {
                return Err(ModelError::EnvelopeViolated { age, rate: b, envelope: env });
            }
        }
        Ok(BirthRate { kind: BirthKind::Custom { rate }, b_tilde, d_b, b_floor, a_floor, lower, upper })
    }

    pub fn eval(&self, x: &[f64], age: f64) -> f64 {
        match &self.kind {
            BirthKind::Age(r) => r.eval(age),
            BirthKind::Custom { rate } => rate(x, age),
        }
    }

    pub fn b_tilde(&self) -> f64 {
        self.b_tilde
    }

    pub fn d_b(&self) -> u32 {
        self.d_b
    }

    pub fn b_floor(&self) -> f64 {
        self.b_floor
    }

    pub fn a_floor(&self) -> f64 {
        self.a_floor
    }

    /// Age-only law equal to the rate itself, when there is one.
    pub fn age_only(&self) -> Option<&AgeRate> {
        match &self.kind {
            BirthKind::Age(r) => Some(r),
            BirthKind::Custom { .. } => None,
        }
    }

    pub fn lower(&self) -> Option<&AgeRate> {
        self.lower.as_ref()
    }

    pub fn upper(&self) -> Option<&AgeRate> {
        self.upper.as_ref()
    }

    pub fn envelope_at(&self, age: f64) -> f64 {
        self.b_tilde * (1.0 + age.powi(self.d_b as i32))
    }
}

// ── the assembled model ──

/// Constants of the renewal scheme attached to a model: from any point of
/// the renewal box, the `d`-generation mean offspring count inside the box
/// `[0, b_max]^{2k}` is at least `1 + eps0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenewalScheme {
    pub d: u32,
    pub eps0: f64,
    pub b_max: f64,
    /// Upper corner of the renewal box `[0, renew_hi]^{2k}`.
    pub renew_hi: f64,
}

/// Which standard parameterisation built the model, with the parameters
/// needed for closed-form dispatch.
#[derive(Clone, Debug, PartialEq)]
pub enum Preset {
    /// Every coordinate lengthened at every division; lengthening support
    /// shrinks with length. `gamma` is the renewal margin parameter.
    Model1 { gamma: f64 },
    /// Independent per-coordinate lengthening with probability
    /// `q(x) = q0 min(1, (1 + x/x_scale)^{-p})`, constant `q0` below zero.
    Model2 { q0: f64, x_scale: f64, p: f64 },
    Custom,
}

/// Complete division model.
#[derive(Clone)]
pub struct ModelSpec {
    k: usize,
    shortening: ShorteningLaw,
    lengthening: LengtheningLaw,
    pairs: PairLaw,
    birth: BirthRate,
    renewal: RenewalScheme,
    preset: Preset,
}

/// Outcome of one division.
#[derive(Clone, Debug)]
pub struct DivisionOutcome {
    pub shortened_a: ShorteningIndexSet,
    pub lengthened_a: u64,
    pub lengthened_b: u64,
    pub daughter_a: CellState,
    pub daughter_b: CellState,
}

impl ModelSpec {
    /// Shrinking-lengthening preset: all coordinates lengthened, support
    /// width `Delta/(x+1)`, renewal margin `gamma`.
    pub fn model1(
        k: usize,
        delta: f64,
        delta_cap: f64,
        gamma: f64,
        birth: BirthRate,
    ) -> Result<Self, ModelError> {
        check_geometry(k, delta, delta_cap)?;
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(ModelError::BadGamma(gamma));
        }
        let e2 = 2 * k * k + 4 * k;
        let ratio_pow = ((delta_cap - delta) / delta_cap).powi(e2 as i32);
        if ratio_pow <= 0.25 {
            return Err(ModelError::SizeConditionPairedEnds {
                got: ratio_pow,
                k,
                delta,
                critical: delta / (1.0 - 0.25f64.powf(1.0 / e2 as f64)),
            });
        }
        let margin = (1.0 - gamma).powi(2 * k as i32) * ratio_pow;
        if margin <= 0.25 {
            return Err(ModelError::GammaMargin { got: margin, gamma });
        }
        let l = model1_box_size(k, delta, delta_cap, gamma)?;
        let d = k as u32 + 2;
        let renewal = RenewalScheme {
            d,
            eps0: 4.0 * margin - 1.0,
            b_max: l + d as f64 * delta_cap,
            renew_hi: l,
        };
        Ok(ModelSpec {
            k,
            shortening: ShorteningLaw::uniform(delta)?,
            lengthening: LengtheningLaw::uniform_shrinking(delta_cap)?,
            pairs: PairLaw::AllCoordinates,
            birth,
            renewal,
            preset: Preset::Model1 { gamma },
        })
    }

    /// Independent-lengthening preset with probability profile
    /// `(q0, x_scale, p)`.
    pub fn model2(
        k: usize,
        delta: f64,
        delta_cap: f64,
        q0: f64,
        x_scale: f64,
        p: f64,
        birth: BirthRate,
    ) -> Result<Self, ModelError> {
        check_geometry(k, delta, delta_cap)?;
        if !(q0 > 0.0 && q0 <= 1.0) || !(x_scale > 0.0) || !(p > 0.0) {
            return Err(ModelError::BadQParams);
        }
        let v = ((delta_cap - delta) / delta_cap).powi(2 * k as i32);
        if v <= 0.5 {
            return Err(ModelError::SizeConditionIndependent {
                got: v,
                k,
                delta,
                critical: delta / (1.0 - 0.5f64.powf(1.0 / (2 * k) as f64)),
            });
        }
        let floor = ((v + 0.5) / (2.0 * v)).powf(1.0 / (8 * k) as f64);
        if q0 < floor {
            return Err(ModelError::QFloor { q0, floor });
        }
        let q = model2_probability(q0, x_scale, p);
        // Truncation level: beyond b_max - Delta the lengthening
        // probability must leave room for the non-lengthened branch.
        let c_star = (v + 0.5) / (2.0 * v);
        let y_star = if q(0.0) <= 1.0 - c_star {
            0.0
        } else {
            bisect(|y| q(y) - (1.0 - c_star), 0.0, grow_until(&q, 1.0 - c_star), 1e-10, 0.0)?
        };
        let b_max = (2.0 * delta_cap + delta).max(y_star + delta_cap);
        let renewal = RenewalScheme { d: 1, eps0: v - 0.5, b_max, renew_hi: b_max };
        Ok(ModelSpec {
            k,
            shortening: ShorteningLaw::uniform(delta)?,
            lengthening: LengtheningLaw::uniform_fixed(delta_cap)?,
            pairs: PairLaw::PerCoordinate { q },
            birth,
            renewal,
            preset: Preset::Model2 { q0, x_scale, p },
        })
    }

    /// Fully custom model. The laws are validated here; the renewal scheme
    /// is taken on trust and can be checked with the certificate tools.
    pub fn custom(
        k: usize,
        shortening: ShorteningLaw,
        lengthening: LengtheningLaw,
        pairs: PairLaw,
        birth: BirthRate,
        renewal: RenewalScheme,
    ) -> Result<Self, ModelError> {
        if k == 0 || k > MAX_K {
            return Err(ModelError::BadK(k));
        }
        if lengthening.bound() <= shortening.bound() {
            return Err(ModelError::BadDeltaOrder {
                big: lengthening.bound(),
                small: shortening.bound(),
            });
        }
        let delta = shortening.bound();
        let states: Vec<(Vec<f64>, Vec<f64>)> = vec![
            (vec![0.0; 2 * k], vec![0.0; 2 * k]),
            (vec![-delta; 2 * k], vec![renewal.b_max; 2 * k]),
            (vec![renewal.b_max / 2.0; 2 * k], vec![delta; 2 * k]),
        ];
        pairs.validate(&states)?;
        Ok(ModelSpec { k, shortening, lengthening, pairs, birth, renewal, preset: Preset::Custom })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of telomere coordinates, `2k`.
    pub fn dim(&self) -> usize {
        2 * self.k
    }

    pub fn shortening(&self) -> &ShorteningLaw {
        &self.shortening
    }

    pub fn lengthening(&self) -> &LengtheningLaw {
        &self.lengthening
    }

    pub fn pairs(&self) -> &PairLaw {
        &self.pairs
    }

    pub fn birth(&self) -> &BirthRate {
        &self.birth
    }

    pub fn renewal(&self) -> &RenewalScheme {
        &self.renewal
    }

    /// Same model under a replacement renewal scheme, for running the
    /// certificates at user-chosen thresholds.
    pub fn with_renewal(&self, renewal: RenewalScheme) -> ModelSpec {
        ModelSpec { renewal, ..self.clone() }
    }

    pub fn preset(&self) -> &Preset {
        &self.preset
    }

    /// Time from the current age to the next division. Exact inversion for
    /// age-only rates; thinning against the polynomial envelope otherwise.
    pub fn sample_division_time(
        &self,
        x: &[f64],
        age: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<f64, RejectionBudgetExhausted> {
        match &self.birth.kind {
            BirthKind::Age(r) => Ok(r.waiting_time_from_age(age, rng.gen::<f64>())),
            BirthKind::Custom { rate } => {
                let window = 1.0;
                let mut s = 0.0;
                for _ in 0..REJECTION_BUDGET {
                    let hi = self.birth.b_tilde
                        * (1.0 + (age + s + window).powi(self.birth.d_b as i32));
                    let e = -rng.gen::<f64>().ln() / hi;
                    if e > window {
                        s += window;
                        continue;
                    }
                    s += e;
                    if rng.gen::<f64>() * hi <= rate(x, age + s) {
                        return Ok(s);
                    }
                }
                Err(RejectionBudgetExhausted(REJECTION_BUDGET))
            }
        }
    }

    /// Draw a full division outcome for a mother with lengths `x`.
    pub fn sample_division(
        &self,
        x: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Result<DivisionOutcome, ModelError> {
        debug_assert_eq!(x.len(), self.dim());
        let i_set = sample_shortening_set(self.k, rng);
        let (s1, s2) = self.shorten(x, i_set, rng)?;
        let (j_mask, m_mask) = self.pairs.sample(&s1, &s2, rng)?;
        let y1 = self.lengthen(&s1, j_mask, rng)?;
        let y2 = self.lengthen(&s2, m_mask, rng)?;
        Ok(DivisionOutcome {
            shortened_a: i_set,
            lengthened_a: j_mask,
            lengthened_b: m_mask,
            daughter_a: CellState::from_lengths(y1),
            daughter_b: CellState::from_lengths(y2),
        })
    }

    /// Draw daughter A alone, following the single-daughter marginal of the
    /// division kernel. The mean number of daughters landing in a set `C`
    /// is twice the probability that this draw is alive and in `C`.
    pub fn kernel_sample_daughter(
        &self,
        x: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Result<CellState, ModelError> {
        let i_set = sample_shortening_set(self.k, rng);
        let (s1, s2) = self.shorten(x, i_set, rng)?;
        let (j_mask, _m_mask) = self.pairs.sample(&s1, &s2, rng)?;
        let y1 = self.lengthen(&s1, j_mask, rng)?;
        Ok(CellState::from_lengths(y1))
    }

    /// Post-shortening lengths of both daughters for the shortened set
    /// `i_set`; each shortened coordinate loses its own independent draw.
    pub fn shorten(
        &self,
        x: &[f64],
        i_set: ShorteningIndexSet,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
        let mut s1 = x.to_vec();
        let mut s2 = x.to_vec();
        for c in 0..self.dim() {
            if i_set.contains(c) {
                s1[c] -= self.shortening.sample(rng)?;
            } else {
                s2[c] -= self.shortening.sample(rng)?;
            }
        }
        Ok((s1, s2))
    }

    /// Add a lengthening draw to every coordinate selected by `mask`.
    pub fn lengthen(
        &self,
        s: &[f64],
        mask: u64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>, ModelError> {
        let mut y = s.to_vec();
        for (c, yc) in y.iter_mut().enumerate() {
            if (mask >> c) & 1 == 1 {
                *yc += self.lengthening.sample(s[c], rng)?;
            }
        }
        Ok(y)
    }
}

fn check_geometry(k: usize, delta: f64, delta_cap: f64) -> Result<(), ModelError> {
    if k == 0 || k > MAX_K {
        return Err(ModelError::BadK(k));
    }
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(ModelError::BadDelta(delta));
    }
    if !(delta_cap > delta) || !delta_cap.is_finite() {
        return Err(ModelError::BadDeltaOrder { big: delta_cap, small: delta });
    }
    Ok(())
}

/// Lengthening probability profile of the independent preset.
pub fn model2_probability(q0: f64, x_scale: f64, p: f64) -> LengthenProb {
    Arc::new(move |x: f64| {
        if x <= 0.0 {
            q0
        } else {
            q0 * (1.0 + x / x_scale).powf(-p)
        }
    })
}

fn grow_until(q: &LengthenProb, target: f64) -> f64 {
    let mut hi = 1.0;
    while q(hi) > target && hi < 1e12 {
        hi *= 2.0;
    }
    hi
}

/// Renewal box size for the shrinking-lengthening preset.
///
/// With `f(x) = x - gamma delta + Delta/(x+1) + Delta/max(x-delta+1, 1)`,
/// the box edge must be beyond the point where `f` drops below
/// `x - gamma delta / 2`, beyond the region where `f` still decreases,
/// beyond the last crossing of the maximum of `f` over that region, and
/// large enough that `k Delta / (L - gamma delta/2 + 1) <= gamma delta/2`.
fn model1_box_size(k: usize, delta: f64, delta_cap: f64, gamma: f64) -> Result<f64, ModelError> {
    let gd = gamma * delta;
    let f = |x: f64| x - gd + delta_cap / (x + 1.0) + delta_cap / (x - delta + 1.0).max(1.0);
    let spare = |x: f64| delta_cap / (x + 1.0) + delta_cap / (x - delta + 1.0).max(1.0) - 0.5 * gd;
    let mut hi = delta.max(1.0);
    while spare(hi) > 0.0 && hi < 1e15 {
        hi *= 2.0;
    }
    let l0 = bisect(spare, 0.0, hi, 1e-9, 0.0)?;

    // Right derivative of f; increasing on each side of the kink at delta.
    let df = |x: f64| {
        let tail = if x >= delta { delta_cap / (x - delta + 1.0).powi(2) } else { 0.0 };
        1.0 - delta_cap / (x + 1.0).powi(2) - tail
    };
    let l1 = if df(delta) < 0.0 {
        let mut hi = (delta + 1.0).max(1.0);
        while df(hi) < 0.0 && hi < 1e15 {
            hi *= 2.0;
        }
        bisect(df, delta, hi, 1e-9, 0.0)?
    } else {
        (delta_cap.sqrt() - 1.0).clamp(0.0, delta)
    };

    // f is piecewise convex with a single kink, so its maximum over
    // [0, l1] sits at one of the three candidate points.
    let fmax = f(0.0).max(f(delta.min(l1))).max(f(l1));
    let l2 = if f(l1) >= fmax {
        l1
    } else {
        let mut hi = l1.max(1.0);
        while f(hi) < fmax && hi < 1e15 {
            hi *= 2.0;
        }
        bisect(|x| f(x) - fmax, l1, hi, 1e-9, 0.0)?
    };

    let base = delta_cap.max(l0).max(l1).max(l2) + 1.0;
    let spacing = 2.0 * k as f64 * delta_cap / gd + 0.5 * gd - 1.0;
    Ok(base.max(spacing))
}
