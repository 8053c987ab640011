//! Brute-force reference implementations. They share no code with the
//! library beyond the model types.
#![allow(dead_code)]

use forestsat::cnf::CnfFormula;
use forestsat::forest::{Forest, TreeNode};

fn eval(tree: &[TreeNode], node: usize, x: &[f64]) -> usize {
    match tree[node] {
        TreeNode::Leaf { class } => class,
        TreeNode::Internal {
            feature,
            threshold,
            left,
            right,
        } => eval(tree, if x[feature] <= threshold { left } else { right }, x),
    }
}

/// Plurality vote, ties to the smallest class.
pub fn predict(forest: &Forest, x: &[f64]) -> usize {
    let mut tally = vec![0usize; forest.n_classes()];
    for t in forest.trees() {
        tally[eval(t, 0, x)] += 1;
    }
    let best = *tally.iter().max().unwrap();
    tally.iter().position(|&c| c == best).unwrap()
}

pub fn class1_fraction(forest: &Forest, x: &[f64]) -> f64 {
    let ones = forest.trees().iter().filter(|t| eval(t, 0, x) == 1).count();
    ones as f64 / forest.n_trees() as f64
}

/// Sorted distinct thresholds per feature.
pub fn thresholds(forest: &Forest) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new(); forest.n_features()];
    for t in forest.trees() {
        for n in t {
            if let TreeNode::Internal {
                feature, threshold, ..
            } = *n
            {
                out[feature].push(threshold);
            }
        }
    }
    for v in &mut out {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v.dedup();
    }
    out
}

/// One point per threshold cell meeting `[lo, hi]`: every cell `(t, t']`
/// that meets the interval contains `min(t', hi)`.
pub fn cell_points(ts: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let mut pts: Vec<f64> = ts.iter().copied().filter(|&t| lo <= t && t <= hi).collect();
    pts.push(hi);
    pts.dedup();
    pts
}

/// Visits every index tuple of the cartesian product until `visit` says stop.
fn for_each_index(lens: &[usize], mut visit: impl FnMut(&[usize]) -> bool) -> bool {
    if lens.contains(&0) {
        return false;
    }
    let mut idx = vec![0usize; lens.len()];
    loop {
        if visit(&idx) {
            return true;
        }
        let mut k = 0;
        loop {
            if k == lens.len() {
                return false;
            }
            idx[k] += 1;
            if idx[k] < lens[k] {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

fn product(axes: &[Vec<f64>], mut visit: impl FnMut(&[f64]) -> bool) -> bool {
    let lens: Vec<usize> = axes.iter().map(Vec::len).collect();
    for_each_index(&lens, |idx| {
        let x: Vec<f64> = idx.iter().zip(axes).map(|(&i, a)| a[i]).collect();
        visit(&x)
    })
}

/// Exact: is there a point of the box the forest labels other than `class`?
pub fn box_has_flip(forest: &Forest, intervals: &[(f64, f64)], class: usize) -> bool {
    let ts = thresholds(forest);
    let axes: Vec<Vec<f64>> = intervals
        .iter()
        .zip(&ts)
        .map(|(&(lo, hi), t)| cell_points(t, lo, hi))
        .collect();
    product(&axes, |x| predict(forest, x) != class)
}

fn grid(lo: f64, hi: f64, h: f64) -> Vec<f64> {
    let n = ((hi - lo) / h).ceil() as usize;
    let mut g: Vec<f64> = (0..n).map(|i| lo + i as f64 * h).collect();
    g.push(hi);
    g
}

/// Same question on a uniform grid of spacing at most `h`; exact once `h`
/// is below half the smallest gap between thresholds of a feature.
pub fn grid_box_has_flip(forest: &Forest, intervals: &[(f64, f64)], class: usize, h: f64) -> bool {
    let axes: Vec<Vec<f64>> = intervals.iter().map(|&(lo, hi)| grid(lo, hi, h)).collect();
    product(&axes, |x| predict(forest, x) != class)
}

/// Smallest gap between distinct thresholds of the same feature, or between
/// a threshold and the feature's range ends.
pub fn min_gap(forest: &Forest) -> f64 {
    let ts = thresholds(forest);
    let mut gap = f64::INFINITY;
    for (f, t) in ts.iter().enumerate() {
        let (a, b) = forest.feature_ranges()[f];
        let mut pts = vec![a];
        pts.extend(t.iter().copied().filter(|&v| a < v && v < b));
        pts.push(b);
        for w in pts.windows(2) {
            gap = gap.min(w[1] - w[0]);
        }
    }
    gap
}

/// Exact infimum of `delta` such that `[x - delta*range, x + delta*range]`,
/// clipped to the range, contains a point labelled differently from `x`.
pub fn min_flip_radius(forest: &Forest, x: &[f64]) -> Option<f64> {
    let class = predict(forest, x);
    let ts = thresholds(forest);
    // per feature: (normalized distance, representative point) of each cell
    let axes: Vec<Vec<(f64, f64)>> = ts
        .iter()
        .enumerate()
        .map(|(f, t)| {
            let (rmin, rmax) = forest.feature_ranges()[f];
            let (a, b) = (rmin.min(x[f]), rmax.max(x[f]));
            let w = rmax - rmin;
            let mut bounds = vec![f64::NEG_INFINITY];
            bounds.extend(t);
            bounds.push(f64::INFINITY);
            bounds
                .windows(2)
                .filter_map(|c| {
                    let (lower, upper) = (c[0].max(a), c[1].min(b));
                    let nonempty = if c[0] >= a {
                        lower < upper
                    } else {
                        lower <= upper
                    };
                    nonempty.then(|| {
                        let d = (lower - x[f]).max(x[f] - upper).max(0.0);
                        (d / w, upper)
                    })
                })
                .collect()
        })
        .collect();
    let mut best: Option<f64> = None;
    let lens: Vec<usize> = axes.iter().map(Vec::len).collect();
    for_each_index(&lens, |idx| {
        let z: Vec<f64> = idx.iter().zip(&axes).map(|(&i, a)| a[i].1).collect();
        if predict(forest, &z) != class {
            let d = idx
                .iter()
                .zip(&axes)
                .map(|(&i, a)| a[i].0)
                .fold(0.0, f64::max);
            best = Some(best.map_or(d, |b: f64| b.min(d)));
        }
        false
    });
    best
}

/// Grid estimate of [`min_flip_radius`]: overestimates by at most `h / range`.
pub fn grid_min_flip_radius(forest: &Forest, x: &[f64], h: f64) -> Option<f64> {
    let class = predict(forest, x);
    let axes: Vec<Vec<f64>> = (0..x.len())
        .map(|f| {
            let (rmin, rmax) = forest.feature_ranges()[f];
            grid(rmin.min(x[f]), rmax.max(x[f]), h)
        })
        .collect();
    let mut best: Option<f64> = None;
    product(&axes, |z| {
        if predict(forest, z) != class {
            let d = (0..x.len())
                .map(|f| (z[f] - x[f]).abs() / forest.range_width(f))
                .fold(0.0, f64::max);
            best = Some(best.map_or(d, |b: f64| b.min(d)));
        }
        false
    });
    best
}

/// Satisfiability by enumerating all assignments.
pub fn truth_table_sat(f: &CnfFormula) -> bool {
    assert!(f.n_vars <= 20);
    (0u32..1 << f.n_vars).any(|m| {
        f.clauses.iter().all(|c| {
            c.iter().any(|&l| {
                let v = m >> (l.unsigned_abs() - 1) & 1 == 1;
                if l > 0 {
                    v
                } else {
                    !v
                }
            })
        })
    })
}

/// Shapley values by averaging over every ordering of the features, with
/// the interventional value function evaluated naively.
pub fn shapley_all_orderings(forest: &Forest, x: &[f64], bg: &[Vec<f64>]) -> Vec<f64> {
    let m = x.len();
    let value: Vec<f64> = (0..1usize << m)
        .map(|mask| {
            bg.iter()
                .map(|row| {
                    let z: Vec<f64> = (0..m)
                        .map(|f| if mask >> f & 1 == 1 { x[f] } else { row[f] })
                        .collect();
                    class1_fraction(forest, &z)
                })
                .sum::<f64>()
                / bg.len() as f64
        })
        .collect();
    let mut phi = vec![0.0; m];
    let mut perm: Vec<usize> = (0..m).collect();
    let mut count = 0usize;
    loop {
        let mut mask = 0usize;
        for &f in &perm {
            let before = value[mask];
            mask |= 1 << f;
            phi[f] += value[mask] - before;
        }
        count += 1;
        if !next_permutation(&mut perm) {
            break;
        }
    }
    phi.iter().map(|p| p / count as f64).collect()
}

fn next_permutation(p: &mut [usize]) -> bool {
    let Some(i) = (1..p.len()).rev().find(|&i| p[i - 1] < p[i]) else {
        return false;
    };
    let j = (i..p.len()).rev().find(|&j| p[j] > p[i - 1]).unwrap();
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}
