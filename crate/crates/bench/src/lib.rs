//! Shared fixtures for the benchmarks.

use forestsat::data::{load_csv, split, Dataset};
use forestsat::forest::Forest;
use forestsat::train::{train_forest, TrainConfig};

pub const DATA: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/breast_cancer.csv");

/// Breast-cancer split (50/50, seed 0) and a 10-tree, depth-10 forest.
pub fn breast_cancer() -> (Dataset, Dataset, Forest) {
    let (train, test) = split(&load_csv(DATA, "diagnosis").expect("bundled data"), 0.5, 0);
    let forest = train_forest(&train, &TrainConfig::default()).expect("training succeeds");
    (train, test, forest)
}
