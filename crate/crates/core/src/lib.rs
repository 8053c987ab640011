//! Minimal-distance counterfactual explanations for random-forest classifiers.
//!
//! A forest is compiled to CNF over order-encoded threshold variables, and a
//! CDCL solver searches a growing L∞ box around the query point for an input
//! the forest labels differently. Shapley and local-surrogate attributions are
//! provided for comparison.

pub mod api;
pub mod attribution;
pub mod cnf;
pub mod counterfactual;
pub mod data;
pub mod encode;
pub mod forest;
pub mod report;
pub mod rng;
pub mod sat;
pub mod synth;
pub mod train;

pub use api::{ApiError, Engine};
pub use attribution::{AttributionError, AttributionMethod, AttributionResult, LimeConfig};
pub use cnf::{CnfFormula, VarRole};
pub use counterfactual::{
    find_min_counterfactual, CounterfactualError, CounterfactualQuery, CounterfactualResult,
    FeatureChange,
};
pub use data::{DataError, Dataset, Standardizer};
pub use encode::{encode, extract_thresholds, FeatureInterval, NeighborhoodBox, ThresholdMap};
pub use forest::{Forest, Instance, ModelError, Tree, TreeNode};
pub use report::Report;
pub use rng::SplitMix64;
pub use sat::{
    solve, solve_with_budget, verify, SolveBudget, SolveError, SolveResult, SolveStatus,
};
pub use train::{train_forest, TrainConfig};
