//! Minimal-distance counterfactual search.
//!
//! Starting from a small box around the query, the box is grown
//! geometrically (`delta <- delta * growth`) and re-encoded until the solver
//! finds a point that the forest classifies differently. The satisfying
//! assignment is decoded into per-feature intervals and turned into a
//! concrete point that sits just past every threshold that had to be crossed.

use std::collections::BTreeSet;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encode::{
    decode_assignment, encode, DecodeError, EncodeError, FeatureInterval, NeighborhoodBox,
    ThresholdMap,
};
use crate::forest::{Forest, Instance};
use crate::sat::{solve_with_budget, SolveBudget, SolveError, SolveStats, SolveStatus};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CounterfactualError {
    #[error(
        "no counterfactual within delta = {max_delta} (last unsatisfiable delta {last_delta})"
    )]
    Unreachable { last_delta: f64, max_delta: f64 },
    #[error("solver budget exhausted at delta = {delta} after {} conflicts", .stats.conflicts)]
    SolverBudget { delta: f64, stats: SolveStats },
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("percent change undefined: feature {0} has zero range")]
    ZeroRange(usize),
    #[error("concretized point keeps the original class {0}")]
    FlipCheckFailed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualQuery {
    pub instance: Instance,
    pub delta0: f64,
    pub growth: f64,
    pub frozen_features: BTreeSet<usize>,
    pub epsilon_fraction: f64,
    pub max_delta: f64,
    /// Let the box leave the training feature ranges.
    pub extrapolate: bool,
    /// Per-solve conflict budget.
    pub max_conflicts: Option<u64>,
    #[serde(skip)]
    pub deadline: Option<Instant>,
}

impl CounterfactualQuery {
    pub fn new(instance: Instance) -> Self {
        CounterfactualQuery {
            instance,
            delta0: 0.01,
            growth: 1.01,
            frozen_features: BTreeSet::new(),
            epsilon_fraction: 1e-6,
            max_delta: 1.0,
            extrapolate: false,
            max_conflicts: None,
            deadline: None,
        }
    }

    fn validate(&self, forest: &Forest) -> Result<(), CounterfactualError> {
        let bad = |m: String| Err(CounterfactualError::InvalidQuery(m));
        if self.instance.len() != forest.n_features() {
            return bad(format!(
                "instance has {} values, model expects {}",
                self.instance.len(),
                forest.n_features()
            ));
        }
        if !(self.delta0 > 0.0 && self.delta0.is_finite()) {
            return bad(format!("delta0 must be positive, got {}", self.delta0));
        }
        if !(self.growth > 1.0 && self.growth.is_finite()) {
            return bad(format!("growth must exceed 1, got {}", self.growth));
        }
        if !(self.epsilon_fraction > 0.0 && self.epsilon_fraction < 1.0) {
            return bad(format!(
                "epsilon_fraction must lie in (0, 1), got {}",
                self.epsilon_fraction
            ));
        }
        if !(self.max_delta >= self.delta0 && self.max_delta.is_finite()) {
            return bad(format!(
                "max_delta {} must be finite and at least delta0 {}",
                self.max_delta, self.delta0
            ));
        }
        if let Some(&f) = self
            .frozen_features
            .iter()
            .find(|&&f| f >= forest.n_features())
        {
            return bad(format!("frozen feature {f} does not exist"));
        }
        Ok(())
    }

    fn budget(&self) -> SolveBudget {
        SolveBudget {
            max_conflicts: self.max_conflicts,
            deadline: self.deadline,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureChange {
    pub feature_index: usize,
    pub name: String,
    pub original_value: f64,
    pub new_value: f64,
    pub crossed_thresholds: Vec<f64>,
    pub percent_change_of_range: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualResult {
    pub original_class: usize,
    pub new_class: usize,
    pub final_delta: f64,
    pub iterations: usize,
    pub changes: Vec<FeatureChange>,
    pub counterexample: Instance,
}

/// Outcome of a single encode-and-solve round.
#[derive(Debug, Clone)]
pub enum Probe {
    Unsat,
    Sat(Vec<FeatureInterval>),
}

/// Encodes and solves once at a fixed `delta`.
pub fn probe(
    forest: &Forest,
    tmap: &ThresholdMap,
    q: &CounterfactualQuery,
    original_class: usize,
    delta: f64,
) -> Result<Probe, CounterfactualError> {
    if q.deadline.is_some_and(|d| Instant::now() >= d) {
        return Err(CounterfactualError::SolverBudget {
            delta,
            stats: SolveStats::default(),
        });
    }
    let bx = NeighborhoodBox::new(
        forest,
        &q.instance,
        delta,
        &q.frozen_features,
        q.extrapolate,
    )?;
    let cnf = encode(forest, tmap, &bx, original_class)?;
    let result =
        solve_with_budget(&cnf, q.budget()).map_err(|SolveError::BudgetExhausted { stats }| {
            CounterfactualError::SolverBudget { delta, stats }
        })?;
    match result.status {
        SolveStatus::Unsat => Ok(Probe::Unsat),
        SolveStatus::Sat(a) => Ok(Probe::Sat(decode_assignment(&cnf, &a, tmap, &bx)?)),
    }
}

/// Grows the box from `delta0` by `growth` until a prediction flip exists.
/// The last round is clamped to `max_delta` so the full allowed box is always
/// tried before giving up.
pub fn find_min_counterfactual(
    forest: &Forest,
    tmap: &ThresholdMap,
    q: &CounterfactualQuery,
) -> Result<CounterfactualResult, CounterfactualError> {
    q.validate(forest)?;
    let original_class = forest.predict(q.instance.values());
    let mut delta = q.delta0;
    let mut iterations = 0;
    let intervals = loop {
        iterations += 1;
        match probe(forest, tmap, q, original_class, delta)? {
            Probe::Sat(iv) => break iv,
            Probe::Unsat => {
                if delta >= q.max_delta {
                    return Err(CounterfactualError::Unreachable {
                        last_delta: delta,
                        max_delta: q.max_delta,
                    });
                }
                delta = (delta * q.growth).min(q.max_delta);
            }
        }
    };

    let counterexample = concretize(&intervals, &q.instance, forest, q.epsilon_fraction);
    let new_class = forest.predict(counterexample.values());
    if new_class == original_class {
        return Err(CounterfactualError::FlipCheckFailed(original_class));
    }
    let mut changes = Vec::new();
    for (f, (&old, &new)) in q
        .instance
        .values()
        .iter()
        .zip(counterexample.values())
        .enumerate()
    {
        if old == new {
            continue;
        }
        let (lo, hi) = if old < new { (old, new) } else { (new, old) };
        let crossed = tmap
            .of(f)
            .iter()
            .copied()
            .filter(|&t| lo <= t && t < hi)
            .collect();
        changes.push(FeatureChange {
            feature_index: f,
            name: forest.feature_names()[f].clone(),
            original_value: old,
            new_value: new,
            crossed_thresholds: crossed,
            percent_change_of_range: percent_change(old, new, forest.range_width(f))
                .ok_or(CounterfactualError::ZeroRange(f))?,
        });
    }
    Ok(CounterfactualResult {
        original_class,
        new_class,
        final_delta: delta,
        iterations,
        changes,
        counterexample,
    })
}

/// Runs many queries in parallel, one solver per query.
pub fn find_min_counterfactuals(
    forest: &Forest,
    tmap: &ThresholdMap,
    queries: &[CounterfactualQuery],
) -> Vec<Result<CounterfactualResult, CounterfactualError>> {
    queries
        .par_iter()
        .map(|q| find_min_counterfactual(forest, tmap, q))
        .collect()
}

/// Picks a concrete point inside the decoded intervals. Features whose
/// interval contains the original value keep it; the others move to
/// `epsilon_fraction * range` past the crossed boundary. When that overshoots
/// the interval the interval midpoint is used instead.
pub fn concretize(
    intervals: &[FeatureInterval],
    original: &Instance,
    forest: &Forest,
    epsilon_fraction: f64,
) -> Instance {
    let values = intervals
        .iter()
        .zip(original.values())
        .enumerate()
        .map(|(f, (iv, &x))| {
            if iv.contains(x) {
                return x;
            }
            let eps = epsilon_fraction * forest.range_width(f);
            let candidate = if x <= iv.lower {
                iv.lower + eps
            } else {
                iv.upper - eps
            };
            if iv.contains(candidate) {
                candidate
            } else {
                iv.lower + iv.width() / 2.0
            }
        })
        .collect();
    Instance::new(values).expect("interval bounds are finite")
}

/// Signed change as a percentage of the feature's range; `None` for a
/// zero-width range.
pub fn percent_change(original: f64, new: f64, range: f64) -> Option<f64> {
    (range > 0.0).then(|| 100.0 * (new - original) / range)
}
