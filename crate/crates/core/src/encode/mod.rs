//! Compiles a forest, a query box and a forbidden class into CNF, and decodes
//! satisfying assignments back into per-feature intervals.
//!
//! Feature values are order-encoded: for every distinct threshold `T_f[k]`
//! used on feature `f` there is one variable meaning `x_f <= T_f[k]`. A model
//! of the formula therefore fixes, for each feature, which interval between
//! consecutive thresholds the counterexample lies in, and every point of that
//! interval (within the box) is a valid counterexample.

pub mod cardinality;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cnf::{CnfFormula, VarRole};
use crate::forest::{Forest, Instance, TreeNode};

pub use cardinality::cardinality_at_least;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncodeError {
    #[error("the encoder supports at most two classes, model has {0}")]
    UnsupportedClassCount(usize),
    #[error("instance has {found} values, model expects {expected}")]
    InstanceLengthMismatch { expected: usize, found: usize },
    #[error("feature {0} does not exist")]
    UnknownFeature(usize),
    #[error("neighborhood size must be finite and non-negative, got {0}")]
    InvalidDelta(f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecodeError {
    #[error("assignment violates the order axioms of feature {feature} at threshold {index}")]
    InconsistentAssignment { feature: usize, index: usize },
    #[error("assignment covers {found} variables, formula has {expected}")]
    AssignmentLength { expected: usize, found: usize },
}

/// Sorted, deduplicated split thresholds per feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMap {
    pub thresholds: Vec<Vec<f64>>,
}

impl ThresholdMap {
    pub fn n_features(&self) -> usize {
        self.thresholds.len()
    }

    pub fn of(&self, feature: usize) -> &[f64] {
        &self.thresholds[feature]
    }

    pub fn total(&self) -> usize {
        self.thresholds.iter().map(Vec::len).sum()
    }

    /// Index of `threshold` in feature `f`'s list.
    pub fn index_of(&self, f: usize, threshold: f64) -> Option<usize> {
        let t = &self.thresholds[f];
        let i = t.partition_point(|&v| v < threshold);
        (i < t.len() && t[i] == threshold).then_some(i)
    }

    /// Interval index of `value`: the number of thresholds strictly below it.
    /// Index `j` is the cell `(T[j-1], T[j]]`.
    pub fn cell(&self, f: usize, value: f64) -> usize {
        self.thresholds[f].partition_point(|&t| t < value)
    }

    pub fn cells(&self, x: &[f64]) -> Vec<usize> {
        x.iter()
            .enumerate()
            .map(|(f, &v)| self.cell(f, v))
            .collect()
    }

    /// Smallest gap between consecutive thresholds of any feature.
    pub fn min_gap(&self) -> Option<f64> {
        self.thresholds
            .iter()
            .flat_map(|t| t.windows(2).map(|w| w[1] - w[0]))
            .min_by(|a, b| a.total_cmp(b))
    }
}

pub fn extract_thresholds(forest: &Forest) -> ThresholdMap {
    let mut thresholds = vec![Vec::new(); forest.n_features()];
    for tree in forest.trees() {
        for node in tree {
            if let TreeNode::Internal {
                feature, threshold, ..
            } = *node
            {
                thresholds[feature].push(threshold);
            }
        }
    }
    for t in &mut thresholds {
        t.sort_by(|a, b| a.total_cmp(b));
        t.dedup();
    }
    ThresholdMap { thresholds }
}

/// Axis-aligned search region around a query: feature `f` may move within
/// `[x_f - delta * range_f, x_f + delta * range_f]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodBox {
    pub center: Instance,
    pub delta: f64,
    pub frozen: BTreeSet<usize>,
    /// Closed interval per feature after clipping and freezing.
    pub intervals: Vec<(f64, f64)>,
}

impl NeighborhoodBox {
    /// Builds the box. Unless `extrapolate` is set, each interval is clipped to
    /// the training range widened just enough to contain the center.
    pub fn new(
        forest: &Forest,
        center: &Instance,
        delta: f64,
        frozen: &BTreeSet<usize>,
        extrapolate: bool,
    ) -> Result<Self, EncodeError> {
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(EncodeError::InvalidDelta(delta));
        }
        if center.len() != forest.n_features() {
            return Err(EncodeError::InstanceLengthMismatch {
                expected: forest.n_features(),
                found: center.len(),
            });
        }
        if let Some(&f) = frozen.iter().find(|&&f| f >= forest.n_features()) {
            return Err(EncodeError::UnknownFeature(f));
        }
        let intervals = center
            .values()
            .iter()
            .enumerate()
            .map(|(f, &x)| {
                if frozen.contains(&f) {
                    return (x, x);
                }
                let half = delta * forest.range_width(f);
                let (mut lo, mut hi) = (x - half, x + half);
                if !extrapolate {
                    let (rmin, rmax) = forest.feature_ranges()[f];
                    lo = lo.max(rmin.min(x));
                    hi = hi.min(rmax.max(x));
                }
                (lo, hi)
            })
            .collect();
        Ok(NeighborhoodBox {
            center: center.clone(),
            delta,
            frozen: frozen.clone(),
            intervals,
        })
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(&self.intervals)
            .all(|(&v, &(lo, hi))| lo <= v && v <= hi)
    }
}

/// Lookup from `(feature, threshold index)` to order variable.
fn order_vars(formula: &CnfFormula, tmap: &ThresholdMap) -> Vec<Vec<i32>> {
    let mut vars: Vec<Vec<i32>> = tmap.thresholds.iter().map(|t| vec![0; t.len()]).collect();
    for (i, role) in formula.var_meta.iter().enumerate() {
        if let VarRole::Order { feature, index } = *role {
            vars[feature][index] = i as i32 + 1;
        }
    }
    vars
}

/// Builds a CNF that is satisfiable iff some point of `bx` is classified
/// differently from `forbidden_class`.
pub fn encode(
    forest: &Forest,
    tmap: &ThresholdMap,
    bx: &NeighborhoodBox,
    forbidden_class: usize,
) -> Result<CnfFormula, EncodeError> {
    if forest.n_classes() > 2 {
        return Err(EncodeError::UnsupportedClassCount(forest.n_classes()));
    }
    let mut cnf = CnfFormula::new();

    // order variables, axioms and box clamps
    let mut order: Vec<Vec<i32>> = Vec::with_capacity(tmap.n_features());
    for (f, ts) in tmap.thresholds.iter().enumerate() {
        let vars: Vec<i32> = (0..ts.len())
            .map(|index| cnf.new_var(VarRole::Order { feature: f, index }))
            .collect();
        order.push(vars);
    }
    for (f, ts) in tmap.thresholds.iter().enumerate() {
        let vars = &order[f];
        for w in vars.windows(2) {
            cnf.add_clause(vec![-w[0], w[1]]);
        }
        let (lo, hi) = bx.intervals[f];
        for (k, &t) in ts.iter().enumerate() {
            if t < lo {
                cnf.add_clause(vec![-vars[k]]);
            } else if t >= hi {
                cnf.add_clause(vec![vars[k]]);
            }
        }
    }

    // leaf variables and path semantics
    let mut leaves: Vec<Vec<(i32, usize)>> = Vec::with_capacity(forest.n_trees());
    for (t, tree) in forest.trees().iter().enumerate() {
        let mut tree_leaves = Vec::new();
        let mut stack: Vec<(usize, Vec<i32>)> = vec![(0, Vec::new())];
        let mut paths = Vec::new();
        while let Some((node, path)) = stack.pop() {
            match tree[node] {
                TreeNode::Leaf { class } => paths.push((node, class, path)),
                TreeNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let k = tmap
                        .index_of(feature, threshold)
                        .expect("threshold map built from this forest");
                    let b = order[feature][k];
                    let mut lp = path.clone();
                    lp.push(b);
                    let mut rp = path;
                    rp.push(-b);
                    stack.push((right, rp));
                    stack.push((left, lp));
                }
            }
        }
        paths.sort_by_key(|p| p.0);
        for (node, class, mut path) in paths {
            let leaf = cnf.new_var(VarRole::Leaf { tree: t, node });
            path.sort_unstable();
            path.dedup();
            let contradictory = path.iter().any(|l| path.binary_search(&-l).is_ok());
            for &l in &path {
                cnf.add_clause(vec![-leaf, l]);
            }
            if !contradictory {
                let mut back: Vec<i32> = path.iter().map(|l| -l).collect();
                back.push(leaf);
                cnf.add_clause(back);
            }
            tree_leaves.push((leaf, class));
        }
        cnf.add_clause(tree_leaves.iter().map(|&(l, _)| l).collect());
        leaves.push(tree_leaves);
    }

    // vote variables
    let mut votes: [Vec<i32>; 2] = [Vec::new(), Vec::new()];
    for (t, tree_leaves) in leaves.iter().enumerate() {
        for (class, class_votes) in votes.iter_mut().enumerate() {
            let v = cnf.new_var(VarRole::Vote { tree: t, class });
            let mut any = vec![-v];
            for &(leaf, c) in tree_leaves {
                if c == class {
                    cnf.add_clause(vec![-leaf, v]);
                    any.push(leaf);
                }
            }
            cnf.add_clause(any);
            class_votes.push(v);
        }
    }

    // plurality with ties to class 0: class 1 needs a strict majority
    let n = forest.n_trees();
    let (target, k) = if forbidden_class == 0 {
        (1, n / 2 + 1)
    } else {
        (0, n - n / 2)
    };
    for c in cardinality_at_least(&mut cnf, &votes[target], k, 0) {
        cnf.add_clause(c);
    }
    Ok(cnf)
}

/// One feature's admissible values under a satisfying assignment:
/// `(lower, upper]` when `lower_open`, else `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureInterval {
    pub lower: f64,
    pub lower_open: bool,
    pub upper: f64,
}

impl FeatureInterval {
    pub fn contains(&self, v: f64) -> bool {
        let above = if self.lower_open {
            v > self.lower
        } else {
            v >= self.lower
        };
        above && v <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Reads the order variables of a satisfying assignment back into one
/// interval per feature, intersected with the box.
pub fn decode_assignment(
    formula: &CnfFormula,
    assignment: &[bool],
    tmap: &ThresholdMap,
    bx: &NeighborhoodBox,
) -> Result<Vec<FeatureInterval>, DecodeError> {
    if assignment.len() != formula.n_vars {
        return Err(DecodeError::AssignmentLength {
            expected: formula.n_vars,
            found: assignment.len(),
        });
    }
    let vars = order_vars(formula, tmap);
    let mut out = Vec::with_capacity(tmap.n_features());
    for (f, ts) in tmap.thresholds.iter().enumerate() {
        let bits: Vec<bool> = vars[f]
            .iter()
            .map(|&v| assignment[v as usize - 1])
            .collect();
        if let Some(k) = bits.windows(2).position(|w| w[0] && !w[1]) {
            return Err(DecodeError::InconsistentAssignment {
                feature: f,
                index: k + 1,
            });
        }
        let j = bits.iter().position(|&b| b).unwrap_or(ts.len());
        let (lo, hi) = bx.intervals[f];
        let (lower, lower_open) = match j.checked_sub(1).map(|i| ts[i]) {
            Some(t) if t >= lo => (t, true),
            _ => (lo, false),
        };
        let upper = match ts.get(j) {
            Some(&t) if t <= hi => t,
            _ => hi,
        };
        let iv = FeatureInterval {
            lower,
            lower_open,
            upper,
        };
        let empty = if lower_open {
            lower >= upper
        } else {
            lower > upper
        };
        if empty {
            return Err(DecodeError::InconsistentAssignment {
                feature: f,
                index: j,
            });
        }
        out.push(iv);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::tests::{forest_of, leaf, split, stump};
    use crate::sat::solve;

    fn boxed(forest: &Forest, x: &[f64], delta: f64) -> NeighborhoodBox {
        NeighborhoodBox::new(
            forest,
            &Instance::new(x.to_vec()).unwrap(),
            delta,
            &BTreeSet::new(),
            false,
        )
        .unwrap()
    }

    #[test]
    fn thresholds_dedup_and_sort() {
        let f = forest_of(vec![stump(0, 0.5, 0, 1)], 2);
        let t = extract_thresholds(&f);
        assert_eq!(t.thresholds, vec![vec![0.5], vec![]]);
        let f = forest_of(
            vec![
                stump(1, 0.5, 0, 1),
                stump(1, 0.5, 1, 0),
                stump(1, 0.2, 0, 1),
            ],
            2,
        );
        assert_eq!(extract_thresholds(&f).thresholds[1], vec![0.2, 0.5]);
    }

    #[test]
    fn stump_box_too_small_is_unsat() {
        let f = forest_of(vec![stump(0, 0.5, 0, 1)], 1);
        let tm = extract_thresholds(&f);
        let bx = boxed(&f, &[0.3], 0.15);
        assert!(bx.intervals[0].1 < 0.5);
        let cnf = encode(&f, &tm, &bx, 0).unwrap();
        assert!(!solve(&cnf).unwrap().is_sat());
    }

    #[test]
    fn stump_box_reaching_past_threshold() {
        let f = forest_of(vec![stump(0, 0.5, 0, 1)], 1);
        let tm = extract_thresholds(&f);
        let bx = boxed(&f, &[0.3], 0.25);
        let cnf = encode(&f, &tm, &bx, 0).unwrap();
        let r = solve(&cnf).unwrap();
        let iv = decode_assignment(&cnf, r.assignment().unwrap(), &tm, &bx).unwrap();
        assert_eq!(
            iv[0],
            FeatureInterval {
                lower: 0.5,
                lower_open: true,
                upper: 0.3 + 0.25
            }
        );
    }

    #[test]
    fn stump_variable_and_clause_counts() {
        let f = forest_of(vec![stump(0, 0.5, 0, 1)], 1);
        let tm = extract_thresholds(&f);
        let bx = boxed(&f, &[0.3], 0.25);
        let cnf = encode(&f, &tm, &bx, 0).unwrap();
        // 1 order + 2 leaves + 2 votes + 1 counter register
        assert_eq!(cnf.n_vars, 6);
        // leaves 2+2, coverage 1, votes 2+2, counter 2, no clamps
        assert_eq!(cnf.n_clauses(), 11);
        let bx = boxed(&f, &[0.3], 0.1);
        // threshold 0.5 >= box max 0.4 adds one clamp
        assert_eq!(encode(&f, &tm, &bx, 0).unwrap().n_clauses(), 12);
    }

    #[test]
    fn inconsistent_assignment_detected() {
        let f = forest_of(
            vec![vec![
                split(0, 0.3, 1, 2),
                leaf(0),
                split(0, 0.6, 3, 4),
                leaf(1),
                leaf(0),
            ]],
            1,
        );
        let tm = extract_thresholds(&f);
        let bx = boxed(&f, &[0.1], 1.0);
        let cnf = encode(&f, &tm, &bx, 0).unwrap();
        let mut a = vec![false; cnf.n_vars];
        a[0] = true; // x <= 0.3
        a[1] = false; // !(x <= 0.6)
        assert!(matches!(
            decode_assignment(&cnf, &a, &tm, &bx),
            Err(DecodeError::InconsistentAssignment {
                feature: 0,
                index: 1
            })
        ));
    }

    #[test]
    fn frozen_feature_is_degenerate() {
        let f = forest_of(vec![stump(0, 0.5, 0, 1), stump(1, 0.5, 0, 1)], 2);
        let frozen: BTreeSet<usize> = [0].into();
        let bx = NeighborhoodBox::new(
            &f,
            &Instance::new(vec![0.3, 0.3]).unwrap(),
            0.5,
            &frozen,
            false,
        )
        .unwrap();
        assert_eq!(bx.intervals[0], (0.3, 0.3));
        assert_eq!(bx.intervals[1], (0.0, 0.8));
    }

    #[test]
    fn multiclass_rejected() {
        let f = Forest::new(
            vec![vec![leaf(2)]],
            1,
            3,
            vec!["a".into()],
            vec![(0.0, 1.0)],
        )
        .unwrap();
        let tm = extract_thresholds(&f);
        let bx = boxed(&f, &[0.5], 0.1);
        assert_eq!(
            encode(&f, &tm, &bx, 2).unwrap_err(),
            EncodeError::UnsupportedClassCount(3)
        );
    }

    #[test]
    fn center_outside_training_range_stays_in_box() {
        let f = forest_of(vec![stump(0, 0.5, 0, 1)], 1);
        let bx = boxed(&f, &[1.2], 0.1);
        assert!(bx.contains(&[1.2]));
        assert!((bx.intervals[0].0 - 1.1).abs() < 1e-12);
        assert_eq!(bx.intervals[0].1, 1.2);
    }

    #[test]
    fn dimacs_export_reparses() {
        let f = forest_of(vec![stump(0, 0.5, 0, 1), stump(0, 0.25, 1, 0)], 1);
        let tm = extract_thresholds(&f);
        let cnf = encode(&f, &tm, &boxed(&f, &[0.4], 0.2), 0).unwrap();
        let back = crate::cnf::parse_dimacs(&cnf.to_dimacs()).unwrap();
        assert_eq!(back, cnf);
    }
}
