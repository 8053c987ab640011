//! CNF formulas with a role for every variable, plus DIMACS text I/O.
//!
//! Literals use the DIMACS convention: variable ids start at 1 and a negative
//! integer is the negated variable.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// What a propositional variable stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum VarRole {
    /// `x[feature] <= thresholds[feature][index]`.
    Order { feature: usize, index: usize },
    /// Tree `tree` routes the point to leaf node `node`.
    Leaf { tree: usize, node: usize },
    /// Tree `tree` votes for `class`.
    Vote { tree: usize, class: usize },
    /// Sequential-counter register: at least `count` of the first `prefix`
    /// inputs of counter `counter` are true.
    Counter {
        counter: usize,
        prefix: usize,
        count: usize,
    },
    /// No known meaning (e.g. read from a plain DIMACS file).
    Free,
}

impl fmt::Display for VarRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            VarRole::Order { feature, index } => write!(f, "order {feature} {index}"),
            VarRole::Leaf { tree, node } => write!(f, "leaf {tree} {node}"),
            VarRole::Vote { tree, class } => write!(f, "vote {tree} {class}"),
            VarRole::Counter {
                counter,
                prefix,
                count,
            } => write!(f, "counter {counter} {prefix} {count}"),
            VarRole::Free => write!(f, "free"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CnfFormula {
    pub n_vars: usize,
    pub clauses: Vec<Vec<i32>>,
    /// `var_meta[v - 1]` describes variable `v`.
    pub var_meta: Vec<VarRole>,
}

impl CnfFormula {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn new_var(&mut self, role: VarRole) -> i32 {
        self.n_vars += 1;
        self.var_meta.push(role);
        self.n_vars as i32
    }

    pub fn add_clause(&mut self, clause: Vec<i32>) {
        debug_assert!(!clause.is_empty(), "empty clause");
        debug_assert!(clause
            .iter()
            .all(|&l| l != 0 && l.unsigned_abs() as usize <= self.n_vars));
        self.clauses.push(clause);
    }

    pub fn role(&self, var: i32) -> VarRole {
        self.var_meta[var.unsigned_abs() as usize - 1]
    }

    pub fn n_clauses(&self) -> usize {
        self.clauses.len()
    }

    /// Standard DIMACS CNF text. Variable roles are emitted as `c var` comment
    /// lines ahead of the header.
    pub fn to_dimacs(&self) -> String {
        let mut out = String::new();
        for (i, role) in self.var_meta.iter().enumerate() {
            if *role != VarRole::Free {
                writeln!(out, "c var {} {}", i + 1, role).unwrap();
            }
        }
        writeln!(out, "p cnf {} {}", self.n_vars, self.clauses.len()).unwrap();
        for clause in &self.clauses {
            for lit in clause {
                write!(out, "{lit} ").unwrap();
            }
            out.push_str("0\n");
        }
        out
    }
}

pub fn to_dimacs(formula: &CnfFormula) -> String {
    formula.to_dimacs()
}

#[derive(Debug, Error, PartialEq)]
#[error("dimacs line {line}: {message}")]
pub struct DimacsError {
    pub line: usize,
    pub message: String,
}

fn parse_role(words: &[&str]) -> Option<VarRole> {
    let nums: Vec<usize> = words[1..]
        .iter()
        .map(|w| w.parse().ok())
        .collect::<Option<_>>()?;
    match (words[0], nums.as_slice()) {
        ("order", &[feature, index]) => Some(VarRole::Order { feature, index }),
        ("leaf", &[tree, node]) => Some(VarRole::Leaf { tree, node }),
        ("vote", &[tree, class]) => Some(VarRole::Vote { tree, class }),
        ("counter", &[counter, prefix, count]) => Some(VarRole::Counter {
            counter,
            prefix,
            count,
        }),
        ("free", &[]) => Some(VarRole::Free),
        _ => None,
    }
}

/// Parses DIMACS CNF. Clauses may span lines; `c var` comments written by
/// [`to_dimacs`] restore variable roles.
pub fn parse_dimacs(text: &str) -> Result<CnfFormula, DimacsError> {
    let mut header: Option<(usize, usize)> = None;
    let mut roles: Vec<(usize, VarRole)> = Vec::new();
    let mut clauses = Vec::new();
    let mut current = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let err = |message: String| DimacsError {
            line: line_no,
            message,
        };
        let line = line.trim();
        if line.is_empty() || line == "%" {
            continue;
        }
        if let Some(rest) = line.strip_prefix('c') {
            let words: Vec<&str> = rest.split_whitespace().collect();
            if words.len() >= 3 && words[0] == "var" {
                if let (Ok(v), Some(role)) = (words[1].parse::<usize>(), parse_role(&words[2..])) {
                    roles.push((v, role));
                }
            }
            continue;
        }
        if let Some(rest) = line.strip_prefix('p') {
            if header.is_some() {
                return Err(err("duplicate header".into()));
            }
            let words: Vec<&str> = rest.split_whitespace().collect();
            if words.len() != 3 || words[0] != "cnf" {
                return Err(err(format!("malformed header {line:?}")));
            }
            let n_vars = words[1]
                .parse()
                .map_err(|_| err("bad variable count".into()))?;
            let n_clauses = words[2]
                .parse()
                .map_err(|_| err("bad clause count".into()))?;
            header = Some((n_vars, n_clauses));
            continue;
        }
        let Some((n_vars, _)) = header else {
            return Err(err("clause before header".into()));
        };
        for tok in line.split_whitespace() {
            let lit: i64 = tok
                .parse()
                .map_err(|_| err(format!("bad literal {tok:?}")))?;
            if lit == 0 {
                if current.is_empty() {
                    return Err(err("empty clause".into()));
                }
                clauses.push(std::mem::take(&mut current));
            } else {
                if lit.unsigned_abs() as usize > n_vars {
                    return Err(err(format!("literal {lit} exceeds {n_vars} variables")));
                }
                current.push(lit as i32);
            }
        }
    }
    let Some((n_vars, n_clauses)) = header else {
        return Err(DimacsError {
            line: 0,
            message: "missing header".into(),
        });
    };
    if !current.is_empty() {
        clauses.push(current);
    }
    if clauses.len() != n_clauses {
        return Err(DimacsError {
            line: 0,
            message: format!(
                "header declares {n_clauses} clauses, found {}",
                clauses.len()
            ),
        });
    }
    let mut var_meta = vec![VarRole::Free; n_vars];
    for (v, role) in roles {
        if (1..=n_vars).contains(&v) {
            var_meta[v - 1] = role;
        }
    }
    Ok(CnfFormula {
        n_vars,
        clauses,
        var_meta,
    })
}
