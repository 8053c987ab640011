//! Greedy CART training (Gini impurity) and bootstrap random forests.

use rand_core::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::forest::{Forest, ModelError, Tree, TreeNode};
use crate::rng::SplitMix64;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub bootstrap: bool,
    /// Candidate features per split; `None` means `ceil(sqrt(n_features))`.
    pub features_per_split: Option<usize>,
    pub seed: u64,
    pub min_samples_leaf: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_trees: 10,
            max_depth: 10,
            bootstrap: true,
            features_per_split: None,
            seed: 0,
            min_samples_leaf: 1,
        }
    }
}

impl TrainConfig {
    pub fn features_per_split_for(&self, n_features: usize) -> usize {
        self.features_per_split
            .unwrap_or_else(|| (n_features as f64).sqrt().ceil() as usize)
    }

    fn check(&self, n_features: usize) -> Result<(), TrainError> {
        let k = self.features_per_split_for(n_features);
        if self.n_trees == 0 {
            return Err(TrainError::InvalidConfig("n_trees must be >= 1".into()));
        }
        if self.max_depth == 0 {
            return Err(TrainError::InvalidConfig("max_depth must be >= 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(TrainError::InvalidConfig(
                "min_samples_leaf must be >= 1".into(),
            ));
        }
        if k == 0 || k > n_features {
            return Err(TrainError::InvalidConfig(format!(
                "features_per_split = {k} not in 1..={n_features}"
            )));
        }
        Ok(())
    }
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    n_classes: usize,
    cfg: &'a TrainConfig,
    k_features: usize,
    nodes: Tree,
}

struct Split {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

fn majority(counts: &[usize]) -> usize {
    let mut best = 0;
    for (c, &v) in counts.iter().enumerate() {
        if v > counts[best] {
            best = c;
        }
    }
    best
}

impl Builder<'_> {
    fn counts(&self, idx: &[usize]) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &i in idx {
            counts[self.y[i]] += 1;
        }
        counts
    }

    fn build(&mut self, idx: &mut [usize], depth: usize, rng: &mut SplitMix64) -> usize {
        let id = self.nodes.len();
        let counts = self.counts(idx);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || depth >= self.cfg.max_depth || idx.len() < 2 * self.cfg.min_samples_leaf {
            self.nodes.push(TreeNode::Leaf {
                class: majority(&counts),
            });
            return id;
        }
        let Some(split) = self.best_split(idx, rng) else {
            self.nodes.push(TreeNode::Leaf {
                class: majority(&counts),
            });
            return id;
        };
        debug_assert!(split.impurity.is_finite());
        self.nodes.push(TreeNode::Leaf { class: 0 });
        let (f, t) = (split.feature, split.threshold);
        let mid = partition(idx, |i| self.x[i][f] <= t);
        let (l_idx, r_idx) = idx.split_at_mut(mid);
        let left = self.build(l_idx, depth + 1, rng);
        let right = self.build(r_idx, depth + 1, rng);
        self.nodes[id] = TreeNode::Internal {
            feature: f,
            threshold: t,
            left,
            right,
        };
        id
    }

    /// Evaluates features in a random order until `k_features` non-constant
    /// ones have been scored; returns the lowest weighted child impurity.
    fn best_split(&self, idx: &[usize], rng: &mut SplitMix64) -> Option<Split> {
        let n_features = self.x[0].len();
        let mut order: Vec<usize> = (0..n_features).collect();
        let mut best: Option<Split> = None;
        let mut scored = 0;
        let mut values: Vec<(f64, usize)> = Vec::with_capacity(idx.len());
        for pos in 0..n_features {
            if scored == self.k_features {
                break;
            }
            let j = pos + (rng.next_u64() % (n_features - pos) as u64) as usize;
            order.swap(pos, j);
            let f = order[pos];

            values.clear();
            values.extend(idx.iter().map(|&i| (self.x[i][f], self.y[i])));
            values.sort_by(|a, b| a.0.total_cmp(&b.0));
            if values[0].0 == values[values.len() - 1].0 {
                continue;
            }
            scored += 1;

            let n = values.len();
            let mut left = vec![0usize; self.n_classes];
            let mut right = vec![0usize; self.n_classes];
            for &(_, c) in &values {
                right[c] += 1;
            }
            let leaf_min = self.cfg.min_samples_leaf;
            for s in 1..n {
                let c = values[s - 1].1;
                left[c] += 1;
                right[c] -= 1;
                if values[s - 1].0 == values[s].0 || s < leaf_min || n - s < leaf_min {
                    continue;
                }
                let impurity =
                    (s as f64 * gini(&left, s) + (n - s) as f64 * gini(&right, n - s)) / n as f64;
                if best.as_ref().is_none_or(|b| impurity < b.impurity) {
                    let (a, b) = (values[s - 1].0, values[s].0);
                    let mut threshold = a + (b - a) / 2.0;
                    if threshold >= b {
                        threshold = a;
                    }
                    best = Some(Split {
                        feature: f,
                        threshold,
                        impurity,
                    });
                }
            }
        }
        best
    }
}

/// In-place partition; returns the number of elements satisfying `pred`,
/// which end up first. Relative order is preserved on both sides.
fn partition(idx: &mut [usize], pred: impl Fn(usize) -> bool) -> usize {
    let (yes, no): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| pred(i));
    let mid = yes.len();
    for (slot, v) in idx.iter_mut().zip(yes.into_iter().chain(no)) {
        *slot = v;
    }
    mid
}

fn grow(data: &Dataset, cfg: &TrainConfig, sample: &mut [usize], rng: &mut SplitMix64) -> Tree {
    let mut b = Builder {
        x: &data.features,
        y: &data.labels,
        n_classes: data.n_classes().max(1),
        cfg,
        k_features: cfg.features_per_split_for(data.n_features()),
        nodes: Vec::new(),
    };
    b.build(sample, 0, rng);
    b.nodes
}

/// Trains one tree on every row of `data` (no resampling).
pub fn train_tree(
    data: &Dataset,
    cfg: &TrainConfig,
    rng: &mut SplitMix64,
) -> Result<Tree, TrainError> {
    if data.n_samples() == 0 {
        return Err(TrainError::EmptyDataset);
    }
    cfg.check(data.n_features())?;
    let mut sample: Vec<usize> = (0..data.n_samples()).collect();
    Ok(grow(data, cfg, &mut sample, rng))
}

/// Trains `cfg.n_trees` trees; tree `t` draws from `SplitMix64::stream(seed, t)`
/// (bootstrap indices first, then split-feature sampling), so the model does
/// not depend on how rayon schedules the work.
pub fn train_forest(data: &Dataset, cfg: &TrainConfig) -> Result<Forest, TrainError> {
    if data.n_samples() == 0 {
        return Err(TrainError::EmptyDataset);
    }
    cfg.check(data.n_features())?;
    let n = data.n_samples();
    let trees: Vec<Tree> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = SplitMix64::stream(cfg.seed, t as u64);
            let mut sample: Vec<usize> = if cfg.bootstrap {
                (0..n)
                    .map(|_| (rng.next_u64() % n as u64) as usize)
                    .collect()
            } else {
                (0..n).collect()
            };
            grow(data, cfg, &mut sample, &mut rng)
        })
        .collect();
    let forest = Forest::new(
        trees,
        data.n_features(),
        data.n_classes().max(2),
        data.feature_names.clone(),
        data.feature_ranges(),
    )?;
    Ok(forest)
}

pub fn accuracy(forest: &Forest, data: &Dataset) -> f64 {
    if data.n_samples() == 0 {
        return 0.0;
    }
    let correct = data
        .features
        .iter()
        .zip(&data.labels)
        .filter(|(x, &y)| forest.predict(x) == y)
        .count();
    correct as f64 / data.n_samples() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::predict_tree;
    use rand_core::SeedableRng;

    fn dataset(rows: &[(&[f64], usize)]) -> Dataset {
        let d = rows[0].0.len();
        let n_classes = rows.iter().map(|r| r.1).max().unwrap() + 1;
        Dataset {
            features: rows.iter().map(|r| r.0.to_vec()).collect(),
            labels: rows.iter().map(|r| r.1).collect(),
            feature_names: (0..d).map(|i| format!("f{i}")).collect(),
            class_names: (0..n_classes.max(2)).map(|c| c.to_string()).collect(),
            label_column: "y".into(),
            standardization: None,
        }
    }

    #[test]
    fn separable_stump() {
        let d = dataset(&[(&[0.1], 0), (&[0.2], 0), (&[0.8], 1), (&[0.9], 1)]);
        let t = train_tree(
            &d,
            &TrainConfig::default(),
            &mut SplitMix64::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!(t.len(), 3);
        match t[0] {
            TreeNode::Internal {
                threshold, feature, ..
            } => {
                assert_eq!(feature, 0);
                assert!((threshold - 0.5).abs() < 1e-12);
            }
            _ => panic!("expected a split"),
        }
    }

    #[test]
    fn pure_data_is_a_leaf() {
        let d = dataset(&[(&[0.1], 0), (&[0.2], 0), (&[0.3], 0)]);
        let t = train_tree(
            &d,
            &TrainConfig::default(),
            &mut SplitMix64::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!(t, vec![TreeNode::Leaf { class: 0 }]);
    }

    #[test]
    fn xor_at_depth_two() {
        let d = dataset(&[
            (&[0.0, 0.0], 0),
            (&[0.0, 1.0], 1),
            (&[1.0, 0.0], 1),
            (&[1.0, 1.0], 0),
        ]);
        let cfg = TrainConfig {
            max_depth: 2,
            features_per_split: Some(2),
            ..Default::default()
        };
        let t = train_tree(&d, &cfg, &mut SplitMix64::seed_from_u64(1)).unwrap();
        for (x, &y) in d.features.iter().zip(&d.labels) {
            assert_eq!(predict_tree(&t, x), y);
        }
    }

    #[test]
    fn empty_dataset() {
        let mut d = dataset(&[(&[0.1], 0)]);
        d.features.clear();
        d.labels.clear();
        assert!(matches!(
            train_forest(&d, &TrainConfig::default()),
            Err(TrainError::EmptyDataset)
        ));
    }

    #[test]
    fn bad_config() {
        let d = dataset(&[(&[0.1], 0), (&[0.2], 1)]);
        let cfg = TrainConfig {
            features_per_split: Some(3),
            ..Default::default()
        };
        assert!(matches!(
            train_forest(&d, &cfg),
            Err(TrainError::InvalidConfig(_))
        ));
    }

    #[test]
    fn min_samples_leaf_respected() {
        let d = dataset(&[
            (&[0.1], 0),
            (&[0.2], 1),
            (&[0.3], 0),
            (&[0.4], 1),
            (&[0.5], 0),
        ]);
        let cfg = TrainConfig {
            min_samples_leaf: 2,
            bootstrap: false,
            n_trees: 1,
            ..Default::default()
        };
        let f = train_forest(&d, &cfg).unwrap();
        let tree = &f.trees()[0];
        let mut reach = vec![0usize; tree.len()];
        for x in &d.features {
            reach[crate::forest::leaf_index(tree, x)] += 1;
        }
        for (i, node) in tree.iter().enumerate() {
            if node.is_leaf() {
                assert!(reach[i] >= 2, "leaf {i} holds {} samples", reach[i]);
            }
        }
    }
}
