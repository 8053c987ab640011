//! Data-centric attribution baselines: Shapley values with an interventional
//! value function (exact and permutation-sampled), a local linear surrogate,
//! and top-n rank stability across a test set.
//!
//! The model output explained everywhere is the class-1 vote fraction.

use nalgebra::{DMatrix, DVector};
use rand_core::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forest::Forest;
use crate::rng::SplitMix64;

/// Largest feature count accepted by [`shapley_exact`].
pub const MAX_EXACT_FEATURES: usize = 15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttributionError {
    #[error("exact Shapley values need at most {MAX_EXACT_FEATURES} features, model has {0}; use the sampling estimator")]
    TooManyFeatures(usize),
    #[error("background data is empty")]
    EmptyBackground,
    #[error("weighted design matrix is rank deficient (rank {rank} of {cols})")]
    SingularFit { rank: usize, cols: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributionMethod {
    ShapleyExact,
    ShapleyMc,
    LimeLite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionResult {
    pub method: AttributionMethod,
    pub phi: Vec<f64>,
    /// Shapley: mean output over the background. Surrogate: its intercept.
    pub baseline: f64,
    /// Model output at the explained point.
    pub output: f64,
    /// Features by decreasing `|phi|`, ties by index.
    pub ranking: Vec<usize>,
    /// Per-feature standard error, for sampled estimates.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub std_errors: Option<Vec<f64>>,
}

pub fn rank_by_magnitude(phi: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..phi.len()).collect();
    idx.sort_by(|&a, &b| phi[b].abs().total_cmp(&phi[a].abs()).then(a.cmp(&b)));
    idx
}

impl AttributionResult {
    fn new(
        method: AttributionMethod,
        phi: Vec<f64>,
        baseline: f64,
        output: f64,
        std_errors: Option<Vec<f64>>,
    ) -> Self {
        AttributionResult {
            method,
            ranking: rank_by_magnitude(&phi),
            phi,
            baseline,
            output,
            std_errors,
        }
    }
}

/// Expected vote fraction when features with `mask[f] = true` are taken from
/// `x` and the rest from each background row.
pub fn value_function(forest: &Forest, x: &[f64], mask: &[bool], background: &[Vec<f64>]) -> f64 {
    let mut z = vec![0.0; x.len()];
    let total: f64 = background
        .iter()
        .map(|row| {
            for f in 0..x.len() {
                z[f] = if mask[f] { x[f] } else { row[f] };
            }
            forest.vote_fraction(&z)
        })
        .sum();
    total / background.len() as f64
}

fn check_inputs(
    forest: &Forest,
    x: &[f64],
    background: &[Vec<f64>],
) -> Result<(), AttributionError> {
    if background.is_empty() {
        return Err(AttributionError::EmptyBackground);
    }
    if x.len() != forest.n_features() || background.iter().any(|r| r.len() != x.len()) {
        return Err(AttributionError::InvalidArgument(format!(
            "expected {} features per row",
            forest.n_features()
        )));
    }
    Ok(())
}

/// Shapley weight `s! (m - s - 1)! / m!`.
fn shapley_weight(s: usize, m: usize) -> f64 {
    // (m-1 choose s) * m, inverted, avoids large factorials
    let mut binom = 1.0;
    for i in 0..s {
        binom = binom * (m - 1 - i) as f64 / (i + 1) as f64;
    }
    1.0 / (m as f64 * binom)
}

/// Exact Shapley values by enumerating all `2^m` coalitions.
pub fn shapley_exact(
    forest: &Forest,
    x: &[f64],
    background: &[Vec<f64>],
) -> Result<AttributionResult, AttributionError> {
    check_inputs(forest, x, background)?;
    let m = x.len();
    if m > MAX_EXACT_FEATURES {
        return Err(AttributionError::TooManyFeatures(m));
    }
    let n_sets = 1usize << m;
    let values: Vec<f64> = (0..n_sets)
        .map(|set| {
            let mask: Vec<bool> = (0..m).map(|f| set >> f & 1 == 1).collect();
            value_function(forest, x, &mask, background)
        })
        .collect();
    let weights: Vec<f64> = (0..m).map(|s| shapley_weight(s, m)).collect();
    let phi = (0..m)
        .map(|i| {
            let bit = 1usize << i;
            (0..n_sets)
                .filter(|set| set & bit == 0)
                .map(|set| weights[set.count_ones() as usize] * (values[set | bit] - values[set]))
                .sum()
        })
        .collect();
    Ok(AttributionResult::new(
        AttributionMethod::ShapleyExact,
        phi,
        values[0],
        values[n_sets - 1],
        None,
    ))
}

/// Average marginal contributions over the given feature orderings. Returns
/// `(phi, std_errors, baseline, output)`.
pub fn shapley_over_permutations(
    forest: &Forest,
    x: &[f64],
    background: &[Vec<f64>],
    permutations: &[Vec<usize>],
) -> (Vec<f64>, Vec<f64>, f64, f64) {
    let m = x.len();
    let empty = value_function(forest, x, &vec![false; m], background);
    let full = value_function(forest, x, &vec![true; m], background);
    let mut sum = vec![0.0; m];
    let mut sum_sq = vec![0.0; m];
    for perm in permutations {
        let mut mask = vec![false; m];
        let mut prev = empty;
        for (k, &f) in perm.iter().enumerate() {
            mask[f] = true;
            let v = if k + 1 == m {
                full
            } else {
                value_function(forest, x, &mask, background)
            };
            let d = v - prev;
            sum[f] += d;
            sum_sq[f] += d * d;
            prev = v;
        }
    }
    let n = permutations.len() as f64;
    let phi: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let se = sum_sq
        .iter()
        .zip(&phi)
        .map(|(&sq, &mean)| {
            if permutations.len() < 2 {
                return 0.0;
            }
            let var = ((sq - n * mean * mean) / (n - 1.0)).max(0.0);
            (var / n).sqrt()
        })
        .collect();
    (phi, se, empty, full)
}

/// Uniform random permutation via Fisher-Yates on a SplitMix64 stream.
pub fn random_permutation(m: usize, rng: &mut SplitMix64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..m).collect();
    for i in (1..m).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        p.swap(i, j);
    }
    p
}

/// Monte-Carlo Shapley estimate from `n_permutations` sampled orderings.
pub fn shapley_mc(
    forest: &Forest,
    x: &[f64],
    background: &[Vec<f64>],
    n_permutations: usize,
    seed: u64,
) -> Result<AttributionResult, AttributionError> {
    check_inputs(forest, x, background)?;
    if n_permutations == 0 {
        return Err(AttributionError::InvalidArgument(
            "n_permutations must be >= 1".into(),
        ));
    }
    let mut rng = SplitMix64::stream(seed, 0);
    let perms: Vec<Vec<usize>> = (0..n_permutations)
        .map(|_| random_permutation(x.len(), &mut rng))
        .collect();
    let (phi, se, baseline, output) = shapley_over_permutations(forest, x, background, &perms);
    Ok(AttributionResult::new(
        AttributionMethod::ShapleyMc,
        phi,
        baseline,
        output,
        Some(se),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimeConfig {
    pub n_samples: usize,
    /// `None` means `0.75 * sqrt(n_features)`.
    pub kernel_width: Option<f64>,
    pub seed: u64,
    /// Per-feature perturbation scale; `None` means 1 (unit variance, i.e.
    /// standardized data).
    pub scales: Option<Vec<f64>>,
}

impl Default for LimeConfig {
    fn default() -> Self {
        LimeConfig {
            n_samples: 5000,
            kernel_width: None,
            seed: 0,
            scales: None,
        }
    }
}

pub fn default_kernel_width(n_features: usize) -> f64 {
    0.75 * (n_features as f64).sqrt()
}

/// Local linear surrogate: Gaussian perturbations around `x`, exponential
/// kernel weights `exp(-d^2 / width^2)` on the scaled distance, and a
/// weighted least-squares fit whose slopes are the attributions.
pub fn lime_lite(
    forest: &Forest,
    x: &[f64],
    cfg: &LimeConfig,
) -> Result<AttributionResult, AttributionError> {
    let d = x.len();
    if d != forest.n_features() {
        return Err(AttributionError::InvalidArgument(format!(
            "expected {} features",
            forest.n_features()
        )));
    }
    if cfg.n_samples < d + 1 {
        return Err(AttributionError::InvalidArgument(format!(
            "need at least {} samples, got {}",
            d + 1,
            cfg.n_samples
        )));
    }
    let scales = cfg.scales.clone().unwrap_or_else(|| vec![1.0; d]);
    if scales.len() != d || scales.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(AttributionError::InvalidArgument(
            "bad perturbation scales".into(),
        ));
    }
    let width = cfg.kernel_width.unwrap_or_else(|| default_kernel_width(d));
    if !(width > 0.0 && width.is_finite()) {
        return Err(AttributionError::InvalidArgument(format!(
            "bad kernel width {width}"
        )));
    }

    let mut rng = SplitMix64::stream(cfg.seed, 0);
    let n = cfg.n_samples;
    let mut samples = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    for _ in 0..n {
        let noise: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let z: Vec<f64> = (0..d).map(|f| x[f] + scales[f] * noise[f]).collect();
        let dist2: f64 = (0..d)
            .map(|f| {
                let u = if scales[f] > 0.0 {
                    (z[f] - x[f]) / scales[f]
                } else {
                    0.0
                };
                u * u
            })
            .sum();
        y.push(forest.vote_fraction(&z));
        w.push((-dist2 / (width * width)).exp());
        samples.push(z);
    }
    let output = forest.vote_fraction(x);

    let wsum: f64 = w.iter().sum();
    let y_mean = y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / wsum;
    if y.iter().all(|&v| v == y[0]) {
        return Ok(AttributionResult::new(
            AttributionMethod::LimeLite,
            vec![0.0; d],
            y[0],
            output,
            None,
        ));
    }
    let x_mean: Vec<f64> = (0..d)
        .map(|f| samples.iter().zip(&w).map(|(s, wi)| s[f] * wi).sum::<f64>() / wsum)
        .collect();
    let a = DMatrix::from_fn(n, d, |i, f| w[i].sqrt() * (samples[i][f] - x_mean[f]));
    let b = DVector::from_fn(n, |i, _| w[i].sqrt() * (y[i] - y_mean));
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * (n.max(d) as f64) * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < d {
        return Err(AttributionError::SingularFit { rank, cols: d });
    }
    let beta = svd
        .solve(&b, tol)
        .map_err(|_| AttributionError::SingularFit { rank, cols: d })?;
    let phi: Vec<f64> = beta.iter().copied().collect();
    let intercept = y_mean - phi.iter().zip(&x_mean).map(|(p, m)| p * m).sum::<f64>();
    Ok(AttributionResult::new(
        AttributionMethod::LimeLite,
        phi,
        intercept,
        output,
        None,
    ))
}

/// For each feature, the fraction of results whose top-`n` ranking contains
/// it.
pub fn rank_stability(results: &[AttributionResult], n: usize) -> Vec<f64> {
    let m = results.first().map_or(0, |r| r.ranking.len());
    let mut hits = vec![0usize; m];
    for r in results {
        for &f in r.ranking.iter().take(n) {
            hits[f] += 1;
        }
    }
    hits.iter()
        .map(|&h| h as f64 / results.len().max(1) as f64)
        .collect()
}

/// Stability for every `n` in `1..=n_features`; `curves[n - 1][f]`.
pub fn rank_stability_curves(results: &[AttributionResult]) -> Vec<Vec<f64>> {
    let m = results.first().map_or(0, |r| r.ranking.len());
    (1..=m).map(|n| rank_stability(results, n)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::tests::{forest_of, stump};
    use crate::forest::TreeNode;

    fn background(rows: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = SplitMix64::stream(seed, 0);
        (0..rows)
            .map(|_| {
                (0..d)
                    .map(|_| (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64)
                    .collect()
            })
            .collect()
    }

    // Naive double loop over background rows and trees.
    fn value_oracle(forest: &Forest, x: &[f64], mask: &[bool], bg: &[Vec<f64>]) -> f64 {
        let mut ones = 0usize;
        for row in bg {
            let z: Vec<f64> = (0..x.len())
                .map(|f| if mask[f] { x[f] } else { row[f] })
                .collect();
            for tree in forest.trees() {
                let mut i = 0;
                while let TreeNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } = tree[i]
                {
                    i = if z[feature] <= threshold { left } else { right };
                }
                if tree[i] == (TreeNode::Leaf { class: 1 }) {
                    ones += 1;
                }
            }
        }
        ones as f64 / (bg.len() * forest.n_trees()) as f64
    }

    #[test]
    fn value_function_endpoints_and_oracle() {
        let f = forest_of(
            vec![
                stump(0, 0.5, 0, 1),
                stump(1, 0.3, 1, 0),
                stump(0, 0.7, 0, 1),
            ],
            2,
        );
        let bg = background(40, 2, 1);
        let x = [0.6, 0.2];
        assert!((value_function(&f, &x, &[true, true], &bg) - f.vote_fraction(&x)).abs() < 1e-15);
        let base = bg.iter().map(|r| f.vote_fraction(r)).sum::<f64>() / bg.len() as f64;
        assert!((value_function(&f, &x, &[false, false], &bg) - base).abs() < 1e-15);
        for mask in [[true, false], [false, true]] {
            let a = value_function(&f, &x, &mask, &bg);
            assert!((a - value_oracle(&f, &x, &mask, &bg)).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_match_factorials() {
        let fact = |n: usize| (1..=n).product::<usize>() as f64;
        for m in 1..=10 {
            for s in 0..m {
                let w = fact(s) * fact(m - s - 1) / fact(m);
                assert!((shapley_weight(s, m) - w).abs() < 1e-15 * w.max(1.0));
            }
        }
    }

    #[test]
    fn dummy_feature_gets_zero() {
        let f = forest_of(vec![stump(0, 0.5, 0, 1), stump(2, 0.4, 1, 0)], 3);
        let r = shapley_exact(&f, &[0.8, 0.1, 0.9], &background(30, 3, 2)).unwrap();
        assert_eq!(r.phi[1], 0.0);
    }

    #[test]
    fn symmetric_features_get_equal_values() {
        let f = forest_of(vec![stump(0, 0.5, 0, 1), stump(1, 0.5, 0, 1)], 2);
        let bg: Vec<Vec<f64>> = background(30, 1, 3)
            .into_iter()
            .map(|r| vec![r[0], r[0]])
            .collect();
        let r = shapley_exact(&f, &[0.9, 0.9], &bg).unwrap();
        assert!((r.phi[0] - r.phi[1]).abs() < 1e-12);
        assert!(r.phi[0] > 0.0);
    }

    #[test]
    fn exhaustive_permutations_equal_exact() {
        let f = forest_of(
            vec![
                stump(0, 0.5, 0, 1),
                stump(1, 0.3, 1, 0),
                vec![
                    TreeNode::Internal {
                        feature: 2,
                        threshold: 0.4,
                        left: 1,
                        right: 2,
                    },
                    TreeNode::Leaf { class: 0 },
                    TreeNode::Internal {
                        feature: 0,
                        threshold: 0.2,
                        left: 3,
                        right: 4,
                    },
                    TreeNode::Leaf { class: 0 },
                    TreeNode::Leaf { class: 1 },
                ],
            ],
            3,
        );
        let bg = background(25, 3, 4);
        let x = [0.7, 0.1, 0.9];
        let exact = shapley_exact(&f, &x, &bg).unwrap();
        let perms = vec![
            vec![0, 1, 2],
            vec![0, 2, 1],
            vec![1, 0, 2],
            vec![1, 2, 0],
            vec![2, 0, 1],
            vec![2, 1, 0],
        ];
        let (phi, _, base, out) = shapley_over_permutations(&f, &x, &bg, &perms);
        for (a, b) in phi.iter().zip(&exact.phi) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(base, exact.baseline);
        assert_eq!(out, exact.output);
    }

    #[test]
    fn too_many_features() {
        let f = forest_of(vec![stump(0, 0.5, 0, 1)], 16);
        assert_eq!(
            shapley_exact(&f, &[0.0; 16], &[vec![0.0; 16]]).unwrap_err(),
            AttributionError::TooManyFeatures(16)
        );
    }

    #[test]
    fn mc_is_deterministic_per_seed() {
        let f = forest_of(vec![stump(0, 0.5, 0, 1), stump(1, 0.3, 1, 0)], 2);
        let bg = background(20, 2, 5);
        let a = shapley_mc(&f, &[0.6, 0.6], &bg, 50, 11).unwrap();
        let b = shapley_mc(&f, &[0.6, 0.6], &bg, 50, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn lime_constant_region() {
        let f = forest_of(vec![stump(0, 100.0, 0, 1)], 3);
        let r = lime_lite(
            &f,
            &[0.0, 0.0, 0.0],
            &LimeConfig {
                n_samples: 200,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(r.phi, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn lime_deterministic_and_singular() {
        let f = forest_of(vec![stump(0, 0.0, 0, 1), stump(1, 0.2, 1, 0)], 2);
        let cfg = LimeConfig {
            n_samples: 300,
            seed: 9,
            ..Default::default()
        };
        assert_eq!(
            lime_lite(&f, &[0.1, 0.1], &cfg).unwrap(),
            lime_lite(&f, &[0.1, 0.1], &cfg).unwrap()
        );
        let cfg = LimeConfig {
            n_samples: 300,
            scales: Some(vec![1.0, 0.0]),
            ..Default::default()
        };
        assert!(matches!(
            lime_lite(&f, &[0.1, 0.1], &cfg),
            Err(AttributionError::SingularFit { rank: 1, cols: 2 })
        ));
    }

    #[test]
    fn stability_edge_cases() {
        let r = AttributionResult::new(
            AttributionMethod::ShapleyExact,
            vec![0.1, -0.5, 0.3],
            0.0,
            0.0,
            None,
        );
        assert_eq!(r.ranking, vec![1, 2, 0]);
        assert_eq!(rank_stability(std::slice::from_ref(&r), 3), vec![1.0; 3]);
        assert_eq!(
            rank_stability(std::slice::from_ref(&r), 2),
            vec![0.0, 1.0, 1.0]
        );
        let tie = rank_by_magnitude(&[0.2, -0.2, 0.2]);
        assert_eq!(tie, vec![0, 1, 2]);
    }
}
