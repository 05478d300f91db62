//! Estimation of the stationary population profile and checks of its
//! predicted shape.
//!
//! The normalized distribution of (telomere vector, age) over the alive
//! population converges to a profile whose age part factorizes: within a
//! state bin the age density is proportional to
//! `exp(-lambda a - int_0^a b(x, s) ds)`. This module pools snapshots of
//! simulated populations into a histogram, compares the conditional age
//! law of each state bin against that target, and reports a factorization
//! metric for the state marginals, which has no known target.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use thiserror::Error;

use crate::model::{ModelError, ModelSpec, TelomereVector};
use crate::numerics::integrate;
use crate::population::{
    estimate_growth_rate, simulate_tree_aged, GrowthEstimate, PopulationError, SimulationResult,
};
use crate::rng::StreamKey;

pub const DEFAULT_X_BINS: usize = 32;
pub const DEFAULT_A_BINS: usize = 64;
/// State bins with fewer pooled samples than this are skipped by the
/// product-form check.
pub const MIN_BIN_SAMPLES: u64 = 500;
/// Joint factorization is enumerated over the full bin grid, so it is
/// limited to this many coordinates.
pub const FACTORIZATION_MAX_DIM: usize = 4;

const MAX_BINS: usize = 4096;

/// One pooled individual: telomere lengths and age at the snapshot.
pub type Sample = (Vec<f64>, f64);

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("need between 2 and {MAX_BINS} bins per axis, got {x_bins} state and {a_bins} age bins")]
    BadBins { x_bins: usize, a_bins: usize },
    #[error("snapshot window needs 0 <= t_burn < t_snapshot and finite, got ({t_burn}, {t_snapshot})")]
    BadWindow { t_burn: f64, t_snapshot: f64 },
    #[error("no replicates requested")]
    NoReplicates,
    #[error("no samples to bin")]
    NoSamples,
    #[error("sample {index} has the wrong dimension, a non-finite coordinate, or a bad age")]
    BadSample { index: usize },
    #[error("population was extinct in every replicate at the snapshot time")]
    Extinct,
    #[error("{capped} of {total} replicates hit the cell cap; raise the cap or lower t_snapshot")]
    Capped { capped: usize, total: usize },
    #[error("joint factorization is limited to {max} coordinates, the histogram has {got}")]
    TooManyCoordinates { got: usize, max: usize },
    #[error("growth rate {0} is not finite")]
    BadGrowthRate(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Population(#[from] PopulationError),
}

/// Index of one histogram cell: per-coordinate state bin plus age bin.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct BinId {
    pub x: Vec<u16>,
    pub a: u16,
}

#[derive(Clone, Copy, Debug)]
pub struct BinMass {
    pub count: u64,
    pub weight: f64,
}

/// Normalized joint histogram of (state, age) over pooled alive
/// individuals, with the snapshot time and the growth rate estimate that
/// produced it.
#[derive(Clone, Debug)]
pub struct ProfileHistogram {
    x_edges: Vec<Vec<f64>>,
    a_edges: Vec<f64>,
    cells: BTreeMap<BinId, BinMass>,
    samples: u64,
    effective_replicates: f64,
    t_snapshot: f64,
    lambda_hat: f64,
}

impl ProfileHistogram {
    /// Bin one batch of samples.
    pub fn from_samples(
        samples: &[Sample],
        x_bins: usize,
        a_bins: usize,
        t_snapshot: f64,
        lambda_hat: f64,
    ) -> Result<Self, ProfileError> {
        Self::build(&[samples], x_bins, a_bins, t_snapshot, lambda_hat)
    }

    /// Bin several replicate batches pooled together; the effective
    /// replicate count reflects how evenly they contributed.
    pub fn from_groups(
        groups: &[Vec<Sample>],
        x_bins: usize,
        a_bins: usize,
        t_snapshot: f64,
        lambda_hat: f64,
    ) -> Result<Self, ProfileError> {
        let slices: Vec<&[Sample]> = groups.iter().map(|g| g.as_slice()).collect();
        Self::build(&slices, x_bins, a_bins, t_snapshot, lambda_hat)
    }

    fn build(
        groups: &[&[Sample]],
        x_bins: usize,
        a_bins: usize,
        t_snapshot: f64,
        lambda_hat: f64,
    ) -> Result<Self, ProfileError> {
        if !(2..=MAX_BINS).contains(&x_bins) || !(2..=MAX_BINS).contains(&a_bins) {
            return Err(ProfileError::BadBins { x_bins, a_bins });
        }
        let total: usize = groups.iter().map(|g| g.len()).sum();
        if total == 0 {
            return Err(ProfileError::NoSamples);
        }
        let dim = groups.iter().find(|g| !g.is_empty()).unwrap()[0].0.len();

        let mut index = 0usize;
        let mut x_lo = vec![f64::INFINITY; dim];
        let mut x_hi = vec![f64::NEG_INFINITY; dim];
        let mut a_hi = 0.0f64;
        for group in groups {
            for (x, a) in group.iter() {
                if x.len() != dim
                    || x.iter().any(|c| !c.is_finite())
                    || !a.is_finite()
                    || *a < 0.0
                {
                    return Err(ProfileError::BadSample { index });
                }
                for c in 0..dim {
                    x_lo[c] = x_lo[c].min(x[c]);
                    x_hi[c] = x_hi[c].max(x[c]);
                }
                a_hi = a_hi.max(*a);
                index += 1;
            }
        }
        for c in 0..dim {
            if !(x_hi[c] > x_lo[c]) {
                x_lo[c] -= 0.5;
                x_hi[c] += 0.5;
            }
        }
        if a_hi <= 0.0 {
            a_hi = 1.0;
        }

        let edges = |lo: f64, hi: f64, n: usize| -> Vec<f64> {
            (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
        };
        let x_edges: Vec<Vec<f64>> =
            (0..dim).map(|c| edges(x_lo[c], x_hi[c], x_bins)).collect();
        let a_edges = edges(0.0, a_hi, a_bins);

        let locate = |v: f64, lo: f64, hi: f64, n: usize| -> u16 {
            (((v - lo) / (hi - lo) * n as f64) as usize).min(n - 1) as u16
        };
        let mut counts: BTreeMap<BinId, u64> = BTreeMap::new();
        for group in groups {
            for (x, a) in group.iter() {
                let id = BinId {
                    x: (0..dim).map(|c| locate(x[c], x_lo[c], x_hi[c], x_bins)).collect(),
                    a: locate(*a, 0.0, a_hi, a_bins),
                };
                *counts.entry(id).or_default() += 1;
            }
        }

        let mut cells: BTreeMap<BinId, BinMass> = counts
            .into_iter()
            .map(|(id, count)| {
                (id, BinMass { count, weight: count as f64 / total as f64 })
            })
            .collect();
        let mut sum = 0.0f64;
        let mut comp = 0.0f64;
        for mass in cells.values() {
            let y = mass.weight - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
        }
        for mass in cells.values_mut() {
            mass.weight /= sum;
        }

        let sq: f64 = groups.iter().map(|g| (g.len() as f64).powi(2)).sum();
        Ok(ProfileHistogram {
            x_edges,
            a_edges,
            cells,
            samples: total as u64,
            effective_replicates: (total as f64).powi(2) / sq,
            t_snapshot,
            lambda_hat,
        })
    }

    pub fn dim(&self) -> usize {
        self.x_edges.len()
    }

    pub fn x_bins(&self) -> usize {
        self.x_edges[0].len() - 1
    }

    pub fn a_bins(&self) -> usize {
        self.a_edges.len() - 1
    }

    pub fn x_edges(&self) -> &[Vec<f64>] {
        &self.x_edges
    }

    pub fn a_edges(&self) -> &[f64] {
        &self.a_edges
    }

    pub fn samples(&self) -> u64 {
        self.samples
    }

    /// `(sum n_r)^2 / sum n_r^2` over the replicate batch sizes: equals the
    /// batch count when balanced, drops toward 1 when one batch dominates.
    pub fn effective_replicates(&self) -> f64 {
        self.effective_replicates
    }

    pub fn t_snapshot(&self) -> f64 {
        self.t_snapshot
    }

    pub fn lambda_hat(&self) -> f64 {
        self.lambda_hat
    }

    pub fn cells(&self) -> impl Iterator<Item = (&BinId, &BinMass)> {
        self.cells.iter()
    }

    pub fn occupied(&self) -> usize {
        self.cells.len()
    }

    pub fn weight(&self, id: &BinId) -> f64 {
        self.cells.get(id).map_or(0.0, |m| m.weight)
    }

    pub fn total_weight(&self) -> f64 {
        self.cells.values().map(|m| m.weight).sum()
    }

    pub fn x_center(&self, coord: usize, bin: usize) -> f64 {
        0.5 * (self.x_edges[coord][bin] + self.x_edges[coord][bin + 1])
    }

    pub fn a_center(&self, bin: usize) -> f64 {
        0.5 * (self.a_edges[bin] + self.a_edges[bin + 1])
    }

    fn x_centers_of(&self, id: &BinId) -> Vec<f64> {
        id.x.iter().enumerate().map(|(c, &i)| self.x_center(c, i as usize)).collect()
    }

    /// Cell containing the point, or `None` outside the covered range.
    pub fn bin_of(&self, x: &[f64], a: f64) -> Option<BinId> {
        if x.len() != self.dim() {
            return None;
        }
        let locate = |v: f64, edges: &[f64]| -> Option<u16> {
            let lo = edges[0];
            let hi = edges[edges.len() - 1];
            if v < lo || v > hi {
                return None;
            }
            let n = edges.len() - 1;
            Some((((v - lo) / (hi - lo) * n as f64) as usize).min(n - 1) as u16)
        };
        let mut xi = Vec::with_capacity(x.len());
        for (c, &v) in x.iter().enumerate() {
            xi.push(locate(v, &self.x_edges[c])?);
        }
        Some(BinId { x: xi, a: locate(a, &self.a_edges)? })
    }

    /// Total weight of cells whose centers satisfy the predicate.
    pub fn mass_where(&self, pred: impl Fn(&[f64], f64) -> bool) -> f64 {
        self.cells
            .iter()
            .filter(|(id, _)| pred(&self.x_centers_of(id), self.a_center(id.a as usize)))
            .map(|(_, m)| m.weight)
            .sum()
    }

    pub fn age_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.a_bins()];
        for (id, m) in &self.cells {
            out[id.a as usize] += m.weight;
        }
        out
    }

    pub fn coordinate_marginal(&self, coord: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.x_bins()];
        for (id, m) in &self.cells {
            out[id.x[coord] as usize] += m.weight;
        }
        out
    }

    /// Joint state marginal, summed over age bins.
    pub fn x_joint_marginal(&self) -> BTreeMap<Vec<u16>, f64> {
        let mut out: BTreeMap<Vec<u16>, f64> = BTreeMap::new();
        for (id, m) in &self.cells {
            *out.entry(id.x.clone()).or_default() += m.weight;
        }
        out
    }
}

// ── snapshot pooling ──

/// Pooled alive individuals per replicate at the snapshot time, plus the
/// growth rate fitted to the alive counts over `[t_burn, t_snapshot]`.
#[derive(Clone, Debug)]
pub struct StationarySnapshot {
    pub groups: Vec<Vec<Sample>>,
    pub lambda_hat: f64,
    pub growth: GrowthEstimate,
}

/// Alive (non-senescent, undivided) cell count at each grid time,
/// reconstructed from the event log. `root_birth` is the birth time of
/// the root cell, negative when it started with a positive age.
pub fn alive_counts_on_grid(result: &SimulationResult, root_birth: f64, grid: &[f64]) -> Vec<f64> {
    let division_time: HashMap<&str, f64> =
        result.events.iter().map(|e| (e.mother.as_str(), e.time)).collect();
    let birth_of = |label: &str| match label.rfind('.') {
        Some(pos) => division_time[&label[..pos]],
        None => root_birth,
    };
    grid.iter()
        .map(|&t| {
            let standing =
                result.alive.iter().filter(|cell| cell.birth_time <= t).count();
            let later_mothers = result
                .events
                .iter()
                .filter(|e| e.time > t && birth_of(&e.mother) <= t)
                .count();
            (standing + later_mothers) as f64
        })
        .collect()
}

/// Run replicate trees to `t_snapshot` and pool every alive individual,
/// fitting the growth rate to the mean alive count over the window.
#[allow(clippy::too_many_arguments)]
pub fn snapshot_population(
    model: &ModelSpec,
    init: &TelomereVector,
    init_age: f64,
    t_burn: f64,
    t_snapshot: f64,
    n_replicates: usize,
    cap: usize,
    key: StreamKey,
) -> Result<StationarySnapshot, ProfileError> {
    if !(t_burn >= 0.0) || !(t_snapshot > t_burn) || !t_snapshot.is_finite() {
        return Err(ProfileError::BadWindow { t_burn, t_snapshot });
    }
    if n_replicates == 0 {
        return Err(ProfileError::NoReplicates);
    }
    let results: Vec<SimulationResult> = (0..n_replicates)
        .into_par_iter()
        .map(|i| {
            simulate_tree_aged(model, init, init_age, t_snapshot, cap, key.child(i as u64))
        })
        .collect::<Result<_, PopulationError>>()?;

    let capped = results.iter().filter(|r| r.capped).count();
    if capped > 0 {
        return Err(ProfileError::Capped { capped, total: n_replicates });
    }

    let grid: Vec<f64> =
        (0..=16).map(|j| t_burn + (t_snapshot - t_burn) * j as f64 / 16.0).collect();
    let mut mean_counts = vec![0.0; grid.len()];
    for r in &results {
        for (slot, c) in
            mean_counts.iter_mut().zip(alive_counts_on_grid(r, -init_age, &grid))
        {
            *slot += c / n_replicates as f64;
        }
    }
    let growth = estimate_growth_rate(&grid, &mean_counts, 0.0)?;

    let groups: Vec<Vec<Sample>> = results
        .iter()
        .map(|r| {
            r.alive
                .iter()
                .map(|cell| (cell.x.as_slice().to_vec(), t_snapshot - cell.birth_time))
                .collect()
        })
        .collect();
    if groups.iter().all(|g| g.is_empty()) {
        return Err(ProfileError::Extinct);
    }
    Ok(StationarySnapshot { groups, lambda_hat: growth.rate, growth })
}

/// Snapshot the population and bin it.
#[allow(clippy::too_many_arguments)]
pub fn estimate_stationary(
    model: &ModelSpec,
    init: &TelomereVector,
    init_age: f64,
    t_burn: f64,
    t_snapshot: f64,
    n_replicates: usize,
    x_bins: usize,
    a_bins: usize,
    cap: usize,
    key: StreamKey,
) -> Result<ProfileHistogram, ProfileError> {
    let snap = snapshot_population(
        model,
        init,
        init_age,
        t_burn,
        t_snapshot,
        n_replicates,
        cap,
        key,
    )?;
    ProfileHistogram::from_groups(&snap.groups, x_bins, a_bins, t_snapshot, snap.lambda_hat)
}

// ── product form check ──

#[derive(Clone, Debug)]
pub struct ProductFormBin {
    pub x_center: Vec<f64>,
    pub count: u64,
    pub ks: f64,
}

#[derive(Clone, Debug)]
pub struct ProductFormReport {
    /// Per state-bin distances, in bin order; only bins with at least
    /// [`MIN_BIN_SAMPLES`] pooled samples are scored.
    pub bins: Vec<ProductFormBin>,
    /// Occupied state bins below the sample floor.
    pub skipped: usize,
}

impl ProductFormReport {
    pub fn max_ks(&self) -> f64 {
        self.bins.iter().map(|b| b.ks).fold(0.0, f64::max)
    }

    /// Sample-weighted mean distance over the scored bins.
    pub fn mean_ks(&self) -> f64 {
        let total: u64 = self.bins.iter().map(|b| b.count).sum();
        if total == 0 {
            return 0.0;
        }
        self.bins.iter().map(|b| b.ks * b.count as f64).sum::<f64>() / total as f64
    }
}

fn birth_integral_from_zero(model: &ModelSpec, x: &[f64], a: f64) -> f64 {
    match model.birth().age_only() {
        Some(rate) => rate.integral(0.0, a),
        None => integrate(|s| model.birth().eval(x, s), 0.0, a, 1e-10),
    }
}

/// Normalizer of the predicted age density at state `x`:
/// `int_0^inf exp(-lambda a - int_0^a b(x, s) ds) da`.
fn age_profile_normalizer(model: &ModelSpec, lambda_hat: f64, x: &[f64], from: f64) -> f64 {
    let density = |a: f64| (-lambda_hat * a - birth_integral_from_zero(model, x, a)).exp();
    let mut hi = from.max(1.0);
    while lambda_hat * hi + birth_integral_from_zero(model, x, hi) < 45.0 && hi < 1e9 {
        hi *= 2.0;
    }
    integrate(&density, from, hi, 1e-12)
}

/// Predicted conditional age CDF at the given edges for state center `x`.
fn conditional_age_cdf(
    model: &ModelSpec,
    lambda_hat: f64,
    x: &[f64],
    a_edges: &[f64],
) -> Vec<f64> {
    let density = |a: f64| (-lambda_hat * a - birth_integral_from_zero(model, x, a)).exp();
    let mut cum = Vec::with_capacity(a_edges.len());
    cum.push(0.0);
    for w in a_edges.windows(2) {
        let panel = integrate(&density, w[0], w[1], 1e-12);
        cum.push(cum.last().unwrap() + panel);
    }
    let z = cum.last().unwrap()
        + age_profile_normalizer(model, lambda_hat, x, a_edges[a_edges.len() - 1]);
    cum.into_iter().map(|v| v / z).collect()
}

/// Compare each sufficiently populated state bin's conditional age law
/// against the predicted profile shape under growth rate `lambda_hat`.
pub fn check_product_form(
    hist: &ProfileHistogram,
    model: &ModelSpec,
    lambda_hat: f64,
) -> Result<ProductFormReport, ProfileError> {
    if !lambda_hat.is_finite() {
        return Err(ProfileError::BadGrowthRate(lambda_hat));
    }
    let a_bins = hist.a_bins();
    let mut by_state: BTreeMap<&[u16], Vec<(u16, u64)>> = BTreeMap::new();
    for (id, m) in hist.cells() {
        by_state.entry(&id.x).or_default().push((id.a, m.count));
    }

    let mut bins = Vec::new();
    let mut skipped = 0usize;
    for (xi, ages) in by_state {
        let total: u64 = ages.iter().map(|(_, c)| c).sum();
        if total < MIN_BIN_SAMPLES {
            skipped += 1;
            continue;
        }
        let x_center: Vec<f64> = xi
            .iter()
            .enumerate()
            .map(|(c, &i)| hist.x_center(c, i as usize))
            .collect();
        let target = conditional_age_cdf(model, lambda_hat, &x_center, hist.a_edges());
        let mut counts = vec![0u64; a_bins];
        for &(a_idx, c) in &ages {
            counts[a_idx as usize] = c;
        }
        let mut ks = 0.0f64;
        let mut cum = 0u64;
        for (i, &c) in counts.iter().enumerate() {
            cum += c;
            let empirical = cum as f64 / total as f64;
            ks = ks.max((empirical - target[i + 1]).abs());
        }
        bins.push(ProductFormBin { x_center, count: total, ks });
    }
    Ok(ProductFormReport { bins, skipped })
}

// ── marginal factorization ──

/// Total variation distance between the joint state marginal and the
/// product of its per-coordinate marginals. Exploratory: there is no
/// predicted value.
pub fn marginal_factorization_report(hist: &ProfileHistogram) -> Result<f64, ProfileError> {
    let dim = hist.dim();
    if dim > FACTORIZATION_MAX_DIM {
        return Err(ProfileError::TooManyCoordinates { got: dim, max: FACTORIZATION_MAX_DIM });
    }
    let marginals: Vec<Vec<f64>> = (0..dim).map(|c| hist.coordinate_marginal(c)).collect();
    let joint = hist.x_joint_marginal();
    let mut occupied_gap = 0.0;
    let mut occupied_product = 0.0;
    for (xi, joint_mass) in &joint {
        let product: f64 =
            xi.iter().enumerate().map(|(c, &i)| marginals[c][i as usize]).product();
        occupied_gap += (joint_mass - product).abs();
        occupied_product += product;
    }
    Ok(0.5 * (occupied_gap + (1.0 - occupied_product).max(0.0)))
}
