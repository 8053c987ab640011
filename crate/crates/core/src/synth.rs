//! Random forests and CNF instances for tests and benchmarks.

use rand_core::RngCore;

use crate::cnf::{CnfFormula, VarRole};
use crate::forest::{Forest, Tree, TreeNode};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthForest {
    pub n_features: usize,
    pub n_trees: usize,
    /// Every root-to-leaf path has exactly this many splits.
    pub depth: usize,
    /// Thresholds are drawn from `{1/lattice, ..., (lattice-1)/lattice}`.
    pub lattice: u32,
}

impl SynthForest {
    pub fn new(n_features: usize, n_trees: usize, depth: usize) -> Self {
        SynthForest {
            n_features,
            n_trees,
            depth,
            lattice: 16,
        }
    }
}

pub fn uniform(rng: &mut SplitMix64) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn below(rng: &mut SplitMix64, n: usize) -> usize {
    (rng.next_u64() % n as u64) as usize
}

fn grow(shape: &SynthForest, rng: &mut SplitMix64, depth: usize, nodes: &mut Tree) -> usize {
    let id = nodes.len();
    if depth == 0 {
        nodes.push(TreeNode::Leaf {
            class: below(rng, 2),
        });
        return id;
    }
    let feature = below(rng, shape.n_features);
    let threshold = (1 + below(rng, shape.lattice as usize - 1)) as f64 / shape.lattice as f64;
    nodes.push(TreeNode::Leaf { class: 0 });
    let left = grow(shape, rng, depth - 1, nodes);
    let right = grow(shape, rng, depth - 1, nodes);
    nodes[id] = TreeNode::Internal {
        feature,
        threshold,
        left,
        right,
    };
    id
}

pub fn random_tree(shape: &SynthForest, rng: &mut SplitMix64) -> Tree {
    let mut nodes = Vec::new();
    grow(shape, rng, shape.depth, &mut nodes);
    nodes
}

/// Binary forest over `[0, 1]^n_features`.
pub fn random_forest(shape: &SynthForest, rng: &mut SplitMix64) -> Forest {
    assert!(shape.lattice >= 2, "lattice must be at least 2");
    let trees = (0..shape.n_trees)
        .map(|_| random_tree(shape, rng))
        .collect();
    Forest::new(
        trees,
        shape.n_features,
        2,
        (0..shape.n_features).map(|i| format!("x{i}")).collect(),
        vec![(0.0, 1.0); shape.n_features],
    )
    .expect("generated forest is well formed")
}

/// Uniform random k-SAT with distinct variables in each clause.
pub fn random_ksat(n_vars: usize, n_clauses: usize, k: usize, rng: &mut SplitMix64) -> CnfFormula {
    assert!(k <= n_vars);
    let mut f = CnfFormula::new();
    for _ in 0..n_vars {
        f.new_var(VarRole::Free);
    }
    for _ in 0..n_clauses {
        let mut vars: Vec<usize> = Vec::with_capacity(k);
        while vars.len() < k {
            let v = below(rng, n_vars);
            if !vars.contains(&v) {
                vars.push(v);
            }
        }
        let clause = vars
            .into_iter()
            .map(|v| {
                let lit = v as i32 + 1;
                if rng.next_u64() & 1 == 1 {
                    -lit
                } else {
                    lit
                }
            })
            .collect();
        f.add_clause(clause);
    }
    f
}
