//! Random-forest model: flat-array trees, validation, inference and the JSON
//! interchange format.
//!
//! Trees are stored as node arrays with the root at index 0. An internal node
//! sends a point left when `x[feature] <= threshold` and right otherwise. The
//! forest predicts by plurality vote with ties going to the smallest class
//! index, which is the rule the CNF encoding reproduces.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Depth limit applied when loading models that do not come from the trainer.
pub const DEFAULT_MAX_DEPTH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TreeNode {
    Internal {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        class: usize,
    },
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        matches!(self, TreeNode::Leaf { .. })
    }
}

/// A single decision tree. Index 0 is the root.
pub type Tree = Vec<TreeNode>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("forest has no trees")]
    EmptyForest,
    #[error("tree {tree} has no nodes")]
    EmptyTree { tree: usize },
    #[error("tree {tree}, node {node}: child {child} does not come after its parent")]
    CyclicTree {
        tree: usize,
        node: usize,
        child: usize,
    },
    #[error("tree {tree}, node {node}: child index {child} is out of bounds ({len} nodes)")]
    DanglingChildIndex {
        tree: usize,
        node: usize,
        child: usize,
        len: usize,
    },
    #[error(
        "tree {tree}, node {node}: feature {feature} out of range (n_features = {n_features})"
    )]
    FeatureIndexOutOfRange {
        tree: usize,
        node: usize,
        feature: usize,
        n_features: usize,
    },
    #[error("tree {tree}, node {node}: depth {depth} exceeds maximum {max_depth}")]
    DepthExceeded {
        tree: usize,
        node: usize,
        depth: usize,
        max_depth: usize,
    },
    #[error("tree {tree}, node {node}: class {class} out of range (n_classes = {n_classes})")]
    ClassOutOfRange {
        tree: usize,
        node: usize,
        class: usize,
        n_classes: usize,
    },
    #[error("tree {tree}, node {node}: {reason}")]
    MalformedTree {
        tree: usize,
        node: usize,
        reason: &'static str,
    },
    #[error("feature {feature}: invalid range [{min}, {max}]")]
    InvalidRange { feature: usize, min: f64, max: f64 },
    #[error("{what}: expected {expected} entries, found {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("model must have at least one feature and one class")]
    EmptyShape,
    #[error("model JSON: {0}")]
    Json(String),
    #[error("model file {path}: {message}")]
    Io { path: String, message: String },
}

/// Model description exactly as it appears on disk, before validation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawForest {
    pub n_features: usize,
    pub n_classes: usize,
    pub feature_names: Vec<String>,
    pub feature_ranges: Vec<[f64; 2]>,
    pub trees: Vec<Tree>,
}

/// A validated random forest. Immutable once constructed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawForest", into = "RawForest")]
pub struct Forest {
    trees: Vec<Tree>,
    n_features: usize,
    n_classes: usize,
    feature_names: Vec<String>,
    feature_ranges: Vec<(f64, f64)>,
}

impl TryFrom<RawForest> for Forest {
    type Error = ModelError;

    fn try_from(raw: RawForest) -> Result<Self, Self::Error> {
        validate_model(raw, DEFAULT_MAX_DEPTH)
    }
}

impl From<Forest> for RawForest {
    fn from(f: Forest) -> Self {
        RawForest {
            n_features: f.n_features,
            n_classes: f.n_classes,
            feature_names: f.feature_names,
            feature_ranges: f.feature_ranges.into_iter().map(|(a, b)| [a, b]).collect(),
            trees: f.trees,
        }
    }
}

/// Checks every structural invariant of a raw model and returns the forest.
pub fn validate_model(raw: RawForest, max_depth: usize) -> Result<Forest, ModelError> {
    if raw.n_features == 0 || raw.n_classes == 0 {
        return Err(ModelError::EmptyShape);
    }
    if raw.trees.is_empty() {
        return Err(ModelError::EmptyForest);
    }
    if raw.feature_names.len() != raw.n_features {
        return Err(ModelError::LengthMismatch {
            what: "feature_names",
            expected: raw.n_features,
            found: raw.feature_names.len(),
        });
    }
    if raw.feature_ranges.len() != raw.n_features {
        return Err(ModelError::LengthMismatch {
            what: "feature_ranges",
            expected: raw.n_features,
            found: raw.feature_ranges.len(),
        });
    }
    for (feature, &[min, max]) in raw.feature_ranges.iter().enumerate() {
        if !(min.is_finite() && max.is_finite() && min <= max) {
            return Err(ModelError::InvalidRange { feature, min, max });
        }
    }
    for (t, tree) in raw.trees.iter().enumerate() {
        validate_tree(t, tree, raw.n_features, raw.n_classes, max_depth)?;
    }
    Ok(Forest {
        trees: raw.trees,
        n_features: raw.n_features,
        n_classes: raw.n_classes,
        feature_names: raw.feature_names,
        feature_ranges: raw
            .feature_ranges
            .into_iter()
            .map(|[a, b]| (a, b))
            .collect(),
    })
}

fn validate_tree(
    t: usize,
    tree: &[TreeNode],
    n_features: usize,
    n_classes: usize,
    max_depth: usize,
) -> Result<(), ModelError> {
    if tree.is_empty() {
        return Err(ModelError::EmptyTree { tree: t });
    }
    let len = tree.len();
    let mut parent_seen = vec![false; len];
    let mut depth = vec![0usize; len];
    for (i, node) in tree.iter().enumerate() {
        if i > 0 && !parent_seen[i] {
            return Err(ModelError::MalformedTree {
                tree: t,
                node: i,
                reason: "node is not reachable from the root",
            });
        }
        match *node {
            TreeNode::Leaf { class } => {
                if class >= n_classes {
                    return Err(ModelError::ClassOutOfRange {
                        tree: t,
                        node: i,
                        class,
                        n_classes,
                    });
                }
            }
            TreeNode::Internal {
                feature,
                threshold,
                left,
                right,
            } => {
                if feature >= n_features {
                    return Err(ModelError::FeatureIndexOutOfRange {
                        tree: t,
                        node: i,
                        feature,
                        n_features,
                    });
                }
                if !threshold.is_finite() {
                    return Err(ModelError::MalformedTree {
                        tree: t,
                        node: i,
                        reason: "threshold is not finite",
                    });
                }
                if left == right {
                    return Err(ModelError::MalformedTree {
                        tree: t,
                        node: i,
                        reason: "left and right children coincide",
                    });
                }
                for child in [left, right] {
                    if child <= i {
                        return Err(ModelError::CyclicTree {
                            tree: t,
                            node: i,
                            child,
                        });
                    }
                    if child >= len {
                        return Err(ModelError::DanglingChildIndex {
                            tree: t,
                            node: i,
                            child,
                            len,
                        });
                    }
                    if parent_seen[child] {
                        return Err(ModelError::MalformedTree {
                            tree: t,
                            node: child,
                            reason: "node has more than one parent",
                        });
                    }
                    parent_seen[child] = true;
                    depth[child] = depth[i] + 1;
                    if depth[child] > max_depth {
                        return Err(ModelError::DepthExceeded {
                            tree: t,
                            node: child,
                            depth: depth[child],
                            max_depth,
                        });
                    }
                }
            }
        }
    }
    Ok(())
}

/// Returns the index of the leaf reached by `x`.
pub fn leaf_index(tree: &[TreeNode], x: &[f64]) -> usize {
    let mut i = 0;
    loop {
        match tree[i] {
            TreeNode::Leaf { .. } => return i,
            TreeNode::Internal {
                feature,
                threshold,
                left,
                right,
            } => {
                i = if x[feature] <= threshold { left } else { right };
            }
        }
    }
}

pub fn predict_tree(tree: &[TreeNode], x: &[f64]) -> usize {
    match tree[leaf_index(tree, x)] {
        TreeNode::Leaf { class } => class,
        TreeNode::Internal { .. } => unreachable!("leaf_index returns a leaf"),
    }
}

/// Depth of the deepest leaf.
pub fn tree_depth(tree: &[TreeNode]) -> usize {
    let mut depth = vec![0usize; tree.len()];
    let mut max = 0;
    for (i, node) in tree.iter().enumerate() {
        if let TreeNode::Internal { left, right, .. } = *node {
            depth[left] = depth[i] + 1;
            depth[right] = depth[i] + 1;
            max = max.max(depth[i] + 1);
        }
    }
    max
}

impl Forest {
    /// Builds and validates a forest in one step.
    pub fn new(
        trees: Vec<Tree>,
        n_features: usize,
        n_classes: usize,
        feature_names: Vec<String>,
        feature_ranges: Vec<(f64, f64)>,
    ) -> Result<Self, ModelError> {
        validate_model(
            RawForest {
                n_features,
                n_classes,
                feature_names,
                feature_ranges: feature_ranges.into_iter().map(|(a, b)| [a, b]).collect(),
                trees,
            },
            DEFAULT_MAX_DEPTH,
        )
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn feature_ranges(&self) -> &[(f64, f64)] {
        &self.feature_ranges
    }

    /// `max - min` of the training range of feature `f`.
    pub fn range_width(&self, f: usize) -> f64 {
        let (lo, hi) = self.feature_ranges[f];
        hi - lo
    }

    pub fn max_depth(&self) -> usize {
        self.trees.iter().map(|t| tree_depth(t)).max().unwrap_or(0)
    }

    /// Per-class vote counts for `x`.
    pub fn votes(&self, x: &[f64]) -> Vec<usize> {
        let mut votes = vec![0usize; self.n_classes];
        for tree in &self.trees {
            votes[predict_tree(tree, x)] += 1;
        }
        votes
    }

    /// Plurality vote; ties go to the smallest class index.
    pub fn predict(&self, x: &[f64]) -> usize {
        let votes = self.votes(x);
        let mut best = 0;
        for (c, &v) in votes.iter().enumerate() {
            if v > votes[best] {
                best = c;
            }
        }
        best
    }

    /// Fraction of trees voting for class 1. The real-valued model output used
    /// by the attribution methods.
    pub fn vote_fraction(&self, x: &[f64]) -> f64 {
        let ones = self
            .trees
            .iter()
            .filter(|t| predict_tree(t, x) == 1)
            .count();
        ones as f64 / self.trees.len() as f64
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("forest serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        serde_json::from_str(text).map_err(|e| ModelError::Json(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ModelError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| ModelError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

pub fn predict_forest(forest: &Forest, x: &Instance) -> usize {
    forest.predict(x.values())
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InstanceError {
    #[error("instance value {index} is not finite")]
    NonFinite { index: usize },
    #[error("instance has {found} values, model expects {expected}")]
    InstanceLengthMismatch { expected: usize, found: usize },
}

/// A query point in standardized units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InstanceRepr")]
pub struct Instance {
    values: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum InstanceRepr {
    Wrapped { values: Vec<f64> },
    Bare(Vec<f64>),
}

impl TryFrom<InstanceRepr> for Instance {
    type Error = InstanceError;

    fn try_from(r: InstanceRepr) -> Result<Self, Self::Error> {
        match r {
            InstanceRepr::Wrapped { values } | InstanceRepr::Bare(values) => Instance::new(values),
        }
    }
}

impl Instance {
    pub fn new(values: Vec<f64>) -> Result<Self, InstanceError> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(InstanceError::NonFinite { index });
        }
        Ok(Instance { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn check_len(&self, n_features: usize) -> Result<(), InstanceError> {
        if self.values.len() != n_features {
            return Err(InstanceError::InstanceLengthMismatch {
                expected: n_features,
                found: self.values.len(),
            });
        }
        Ok(())
    }
}

impl fmt::Display for Instance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, v) in self.values.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, "]")
    }
}
