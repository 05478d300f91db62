//! Event-driven simulation of the branching cell population and the
//! estimators built on it: mean population size over replicates and the
//! exponential growth rate from the log tail of the alive-count curve.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::model::{CellState, ModelError, ModelSpec, RejectionBudgetExhausted, TelomereVector};
use crate::numerics::{mean_se, ols_line};
use crate::rng::{purpose, StreamKey};

#[derive(Debug, Error)]
pub enum PopulationError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Rejection(#[from] RejectionBudgetExhausted),
    #[error("horizon must be positive and finite, got {0}")]
    BadHorizon(f64),
    #[error("cell cap must be at least 1")]
    BadCap,
    #[error("all {0} replicates hit the cell cap; nothing to average")]
    AllCapped(usize),
    #[error("need at least {need} positive counts in the fitting window, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("initial age must be nonnegative and finite, got {0}")]
    BadAge(f64),
}

/// One division: when it happened, who divided, and the raw daughter
/// length vectors (senescence is the sign of the minimum).
#[derive(Clone, Debug)]
pub struct PopulationEvent {
    pub time: f64,
    pub mother: String,
    pub daughter_a: Vec<f64>,
    pub daughter_b: Vec<f64>,
}

/// A cell alive when the simulation stopped.
#[derive(Clone, Debug)]
pub struct AliveCell {
    pub label: String,
    pub birth_time: f64,
    pub x: TelomereVector,
}

/// Everything a tree simulation produced. Counts satisfy
/// `total = 1 + 2 * events.len()` and
/// `alive.len() + senescent + events.len() = total`: every cell ever
/// labelled is exactly one of alive, senescent, or divided.
#[derive(Clone, Debug)]
pub struct SimulationResult {
    pub t_end: f64,
    /// Time at which the run actually stopped (before `t_end` if capped).
    pub stop_time: f64,
    pub capped: bool,
    pub events: Vec<PopulationEvent>,
    pub alive: Vec<AliveCell>,
    pub senescent: usize,
    pub total: usize,
}

impl SimulationResult {
    pub fn divisions(&self) -> usize {
        self.events.len()
    }

    /// Number of alive cells just after each time in `times` (which must
    /// be nondecreasing). Events are chronological, so one scan suffices.
    pub fn alive_count_series(&self, times: &[f64]) -> Vec<usize> {
        let mut out = Vec::with_capacity(times.len());
        let mut count = 1i64;
        let mut next = 0usize;
        for &t in times {
            while next < self.events.len() && self.events[next].time <= t {
                let e = &self.events[next];
                let living = [&e.daughter_a, &e.daughter_b]
                    .iter()
                    .filter(|d| d.iter().all(|&v| v >= 0.0))
                    .count() as i64;
                count += living - 1;
                next += 1;
            }
            out.push(count.max(0) as usize);
        }
        out
    }
}

struct Scheduled {
    time: f64,
    seq: u64,
    label: String,
    birth: f64,
    x: TelomereVector,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.seq == other.seq
    }
}
impl Eq for Scheduled {}
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; invert so the earliest event pops first,
        // with the creation sequence as a deterministic tie-break.
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Simulate the full division tree from one root cell until `t_end`,
/// stopping early (and flagging it) when the number of cells ever created
/// would exceed `max_cells`.
///
/// Randomness is keyed by cell label, so the result is independent of
/// event processing order and identical across runs with the same key.
pub fn simulate_tree(
    model: &ModelSpec,
    initial: &TelomereVector,
    t_end: f64,
    max_cells: usize,
    key: StreamKey,
) -> Result<SimulationResult, PopulationError> {
    simulate_tree_aged(model, initial, 0.0, t_end, max_cells, key)
}

/// Same as [`simulate_tree`], but the root cell starts with age
/// `initial_age` at time zero. Its recorded birth time is `-initial_age`,
/// so `t - birth_time` is the age of any alive cell at time `t`.
pub fn simulate_tree_aged(
    model: &ModelSpec,
    initial: &TelomereVector,
    initial_age: f64,
    t_end: f64,
    max_cells: usize,
    key: StreamKey,
) -> Result<SimulationResult, PopulationError> {
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(PopulationError::BadHorizon(t_end));
    }
    if !(initial_age >= 0.0) || !initial_age.is_finite() {
        return Err(PopulationError::BadAge(initial_age));
    }
    if max_cells == 0 {
        return Err(PopulationError::BadCap);
    }
    let base = key.child(purpose::DIVISION);
    let mut queue = BinaryHeap::new();
    let mut events = Vec::new();
    let mut senescent = 0usize;
    let mut total = 1usize;
    let mut seq = 0u64;
    let mut capped = false;
    let mut stop_time = t_end;

    let schedule = |label: String,
                    birth: f64,
                    age_now: f64,
                    x: TelomereVector,
                    seq: &mut u64,
                    queue: &mut BinaryHeap<Scheduled>|
     -> Result<(), PopulationError> {
        let mut rng = base.child_bytes(label.as_bytes()).child(0).rng();
        let wait = model.sample_division_time(&x, age_now, &mut rng)?;
        *seq += 1;
        queue.push(Scheduled { time: birth + age_now + wait, seq: *seq, label, birth, x });
        Ok(())
    };

    schedule("1".to_string(), -initial_age, initial_age, initial.clone(), &mut seq, &mut queue)?;

    while let Some(cell) = queue.peek() {
        if cell.time > t_end {
            break;
        }
        if total + 2 > max_cells {
            capped = true;
            stop_time = cell.time;
            break;
        }
        let cell = queue.pop().unwrap();
        let mut rng = base.child_bytes(cell.label.as_bytes()).child(1).rng();
        let outcome = model.sample_division(&cell.x, &mut rng)?;
        total += 2;
        events.push(PopulationEvent {
            time: cell.time,
            mother: cell.label.clone(),
            daughter_a: outcome.daughter_a.lengths().to_vec(),
            daughter_b: outcome.daughter_b.lengths().to_vec(),
        });
        for (suffix, daughter) in [("1", outcome.daughter_a), ("2", outcome.daughter_b)] {
            match daughter {
                CellState::Alive { x, .. } => {
                    let label = format!("{}.{}", cell.label, suffix);
                    schedule(label, cell.time, 0.0, x, &mut seq, &mut queue)?;
                }
                CellState::Senescent { .. } => senescent += 1,
            }
        }
    }

    let mut alive: Vec<AliveCell> = queue
        .into_sorted_vec()
        .into_iter()
        .map(|c| AliveCell { label: c.label, birth_time: c.birth, x: c.x })
        .collect();
    alive.sort_by(|a, b| a.label.cmp(&b.label));

    Ok(SimulationResult { t_end, stop_time, capped, events, alive, senescent, total })
}

/// Mean and standard error of the alive-cell count at the horizon across
/// replicates. Capped replicates are excluded but counted; if every
/// replicate capped there is nothing to average and that is an error.
#[derive(Clone, Copy, Debug)]
pub struct MtEstimate {
    pub mean: f64,
    pub se: f64,
    pub used: usize,
    pub capped: usize,
}

pub fn estimate_m_t(results: &[SimulationResult]) -> Result<MtEstimate, PopulationError> {
    let counts: Vec<f64> =
        results.iter().filter(|r| !r.capped).map(|r| r.alive.len() as f64).collect();
    let capped = results.len() - counts.len();
    if counts.is_empty() {
        return Err(PopulationError::AllCapped(results.len()));
    }
    let (mean, se) = mean_se(&counts);
    Ok(MtEstimate { mean, se, used: counts.len(), capped })
}

/// Exponential growth rate fitted by least squares to the logarithm of
/// the counts over the tail window `[tail_from * t_max, t_max]`.
#[derive(Clone, Copy, Debug)]
pub struct GrowthEstimate {
    pub rate: f64,
    pub rate_se: f64,
    pub log_intercept: f64,
    pub points: usize,
}

pub fn estimate_growth_rate(
    times: &[f64],
    counts: &[f64],
    tail_from: f64,
) -> Result<GrowthEstimate, PopulationError> {
    debug_assert_eq!(times.len(), counts.len());
    let t_max = times.last().copied().unwrap_or(0.0);
    let cut = t_max * tail_from.clamp(0.0, 1.0);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&t, &c) in times.iter().zip(counts) {
        if t >= cut && c > 0.0 {
            xs.push(t);
            ys.push(c.ln());
        }
    }
    if xs.len() < 3 {
        return Err(PopulationError::TooFewPoints { need: 3, got: xs.len() });
    }
    let (slope, intercept, slope_se) = ols_line(&xs, &ys);
    Ok(GrowthEstimate { rate: slope, rate_se: slope_se, log_intercept: intercept, points: xs.len() })
}
