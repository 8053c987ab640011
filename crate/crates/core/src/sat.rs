//! Conflict-driven clause-learning SAT solver.
//!
//! Two-watched-literal propagation, first-UIP learning, VSIDS branching with
//! phase saving and geometric restarts. Branching ties go to the lowest
//! variable id so a formula always produces the same run.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cnf::CnfFormula;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolveStats {
    pub decisions: u64,
    pub propagations: u64,
    pub conflicts: u64,
    pub learned_clauses: u64,
    pub restarts: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SolveStatus {
    /// `assignment[v - 1]` is the value of variable `v`.
    Sat(Vec<bool>),
    Unsat,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub stats: SolveStats,
}

impl SolveResult {
    pub fn is_sat(&self) -> bool {
        matches!(self.status, SolveStatus::Sat(_))
    }

    pub fn assignment(&self) -> Option<&[bool]> {
        match &self.status {
            SolveStatus::Sat(a) => Some(a),
            SolveStatus::Unsat => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SolveError {
    #[error("solver budget exhausted after {} conflicts", .stats.conflicts)]
    BudgetExhausted { stats: SolveStats },
}

/// Limits on a single `solve` call.
#[derive(Debug, Clone, Copy, Default)]
pub struct SolveBudget {
    pub max_conflicts: Option<u64>,
    pub deadline: Option<Instant>,
}

impl SolveBudget {
    pub fn unlimited() -> Self {
        Self::default()
    }

    pub fn conflicts(max: u64) -> Self {
        SolveBudget {
            max_conflicts: Some(max),
            deadline: None,
        }
    }
}

pub fn solve(formula: &CnfFormula) -> Result<SolveResult, SolveError> {
    solve_with_budget(formula, SolveBudget::unlimited())
}

pub fn solve_with_budget(
    formula: &CnfFormula,
    budget: SolveBudget,
) -> Result<SolveResult, SolveError> {
    Solver::new(formula.n_vars, &formula.clauses).run(budget)
}

/// True iff every clause has a literal made true by `assignment`.
pub fn verify(formula: &CnfFormula, assignment: &[bool]) -> bool {
    formula.clauses.iter().all(|clause| {
        clause.iter().any(|&lit| {
            let v = lit.unsigned_abs() as usize;
            v <= assignment.len() && assignment[v - 1] == (lit > 0)
        })
    })
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
struct Lit(u32);

impl Lit {
    fn from_dimacs(l: i32) -> Lit {
        let v = l.unsigned_abs() - 1;
        Lit(2 * v + u32::from(l < 0))
    }
    #[inline]
    fn var(self) -> usize {
        (self.0 >> 1) as usize
    }
    #[inline]
    fn neg(self) -> Lit {
        Lit(self.0 ^ 1)
    }
    #[inline]
    fn idx(self) -> usize {
        self.0 as usize
    }
    #[inline]
    fn positive(self) -> bool {
        self.0 & 1 == 0
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Value {
    True,
    False,
    Unassigned,
}

const NO_REASON: usize = usize::MAX;

/// Max-heap over variables keyed by (activity, -var).
struct VarHeap {
    heap: Vec<usize>,
    pos: Vec<usize>,
}

const NOT_IN_HEAP: usize = usize::MAX;

impl VarHeap {
    fn new(n: usize) -> Self {
        VarHeap {
            heap: Vec::with_capacity(n),
            pos: vec![NOT_IN_HEAP; n],
        }
    }

    #[inline]
    fn before(act: &[f64], a: usize, b: usize) -> bool {
        act[a] > act[b] || (act[a] == act[b] && a < b)
    }

    fn contains(&self, v: usize) -> bool {
        self.pos[v] != NOT_IN_HEAP
    }

    fn push(&mut self, v: usize, act: &[f64]) {
        if self.contains(v) {
            return;
        }
        self.pos[v] = self.heap.len();
        self.heap.push(v);
        self.sift_up(self.heap.len() - 1, act);
    }

    fn pop(&mut self, act: &[f64]) -> Option<usize> {
        let top = *self.heap.first()?;
        let last = self.heap.pop().unwrap();
        self.pos[top] = NOT_IN_HEAP;
        if !self.heap.is_empty() {
            self.heap[0] = last;
            self.pos[last] = 0;
            self.sift_down(0, act);
        }
        Some(top)
    }

    fn bumped(&mut self, v: usize, act: &[f64]) {
        if self.contains(v) {
            self.sift_up(self.pos[v], act);
        }
    }

    fn sift_up(&mut self, mut i: usize, act: &[f64]) {
        let v = self.heap[i];
        while i > 0 {
            let p = (i - 1) / 2;
            if !Self::before(act, v, self.heap[p]) {
                break;
            }
            self.heap[i] = self.heap[p];
            self.pos[self.heap[i]] = i;
            i = p;
        }
        self.heap[i] = v;
        self.pos[v] = i;
    }

    fn sift_down(&mut self, mut i: usize, act: &[f64]) {
        let v = self.heap[i];
        let n = self.heap.len();
        loop {
            let l = 2 * i + 1;
            if l >= n {
                break;
            }
            let r = l + 1;
            let c = if r < n && Self::before(act, self.heap[r], self.heap[l]) {
                r
            } else {
                l
            };
            if !Self::before(act, self.heap[c], v) {
                break;
            }
            self.heap[i] = self.heap[c];
            self.pos[self.heap[i]] = i;
            i = c;
        }
        self.heap[i] = v;
        self.pos[v] = i;
    }
}

struct Solver {
    clauses: Vec<Vec<Lit>>,
    watches: Vec<Vec<usize>>,
    values: Vec<Value>,
    level: Vec<usize>,
    reason: Vec<usize>,
    phase: Vec<bool>,
    trail: Vec<Lit>,
    trail_lim: Vec<usize>,
    qhead: usize,
    activity: Vec<f64>,
    var_inc: f64,
    order: VarHeap,
    seen: Vec<bool>,
    stats: SolveStats,
    /// Set when the input already contains a contradiction at level 0.
    trivially_unsat: bool,
}

const VAR_DECAY: f64 = 0.95;
const RESTART_FIRST: f64 = 100.0;
const RESTART_GROWTH: f64 = 1.5;

impl Solver {
    fn new(n_vars: usize, input: &[Vec<i32>]) -> Self {
        let mut s = Solver {
            clauses: Vec::with_capacity(input.len()),
            watches: vec![Vec::new(); 2 * n_vars],
            values: vec![Value::Unassigned; n_vars],
            level: vec![0; n_vars],
            reason: vec![NO_REASON; n_vars],
            phase: vec![false; n_vars],
            trail: Vec::with_capacity(n_vars),
            trail_lim: Vec::new(),
            qhead: 0,
            activity: vec![0.0; n_vars],
            var_inc: 1.0,
            order: VarHeap::new(n_vars),
            seen: vec![false; n_vars],
            stats: SolveStats::default(),
            trivially_unsat: false,
        };
        for v in 0..n_vars {
            s.order.push(v, &s.activity);
        }
        for clause in input {
            if !s.add_input_clause(clause) {
                s.trivially_unsat = true;
                break;
            }
        }
        s
    }

    /// Adds a clause at level 0. Returns false on a top-level contradiction.
    fn add_input_clause(&mut self, clause: &[i32]) -> bool {
        let mut lits: Vec<Lit> = clause.iter().map(|&l| Lit::from_dimacs(l)).collect();
        lits.sort_by_key(|l| l.0);
        lits.dedup();
        // tautology
        if lits.windows(2).any(|w| w[0].var() == w[1].var()) {
            return true;
        }
        if lits.iter().any(|&l| self.value(l) == Value::True) {
            return true;
        }
        lits.retain(|&l| self.value(l) != Value::False);
        match lits.len() {
            0 => false,
            1 => {
                self.enqueue(lits[0], NO_REASON);
                self.propagate().is_none()
            }
            _ => {
                self.attach(lits);
                true
            }
        }
    }

    fn attach(&mut self, lits: Vec<Lit>) -> usize {
        let ci = self.clauses.len();
        self.watches[lits[0].idx()].push(ci);
        self.watches[lits[1].idx()].push(ci);
        self.clauses.push(lits);
        ci
    }

    #[inline]
    fn value(&self, l: Lit) -> Value {
        match self.values[l.var()] {
            Value::Unassigned => Value::Unassigned,
            Value::True if l.positive() => Value::True,
            Value::False if !l.positive() => Value::True,
            _ => Value::False,
        }
    }

    fn decision_level(&self) -> usize {
        self.trail_lim.len()
    }

    fn enqueue(&mut self, l: Lit, reason: usize) {
        let v = l.var();
        self.values[v] = if l.positive() {
            Value::True
        } else {
            Value::False
        };
        self.level[v] = self.decision_level();
        self.reason[v] = reason;
        self.trail.push(l);
    }

    /// Returns the index of a conflicting clause, if any.
    fn propagate(&mut self) -> Option<usize> {
        while self.qhead < self.trail.len() {
            let p = self.trail[self.qhead];
            self.qhead += 1;
            self.stats.propagations += 1;
            let false_lit = p.neg();
            let mut ws = std::mem::take(&mut self.watches[false_lit.idx()]);
            let mut i = 0;
            let mut j = 0;
            let mut conflict = None;
            while i < ws.len() {
                let ci = ws[i];
                i += 1;
                let clause = &mut self.clauses[ci];
                if clause[0] == false_lit {
                    clause.swap(0, 1);
                }
                let first = clause[0];
                if self.values[first.var()] != Value::Unassigned
                    && (self.values[first.var()] == Value::True) == first.positive()
                {
                    ws[j] = ci;
                    j += 1;
                    continue;
                }
                let mut moved = false;
                for k in 2..clause.len() {
                    let l = clause[k];
                    let val = self.values[l.var()];
                    if val == Value::Unassigned || (val == Value::True) == l.positive() {
                        clause.swap(1, k);
                        self.watches[clause[1].idx()].push(ci);
                        moved = true;
                        break;
                    }
                }
                if moved {
                    continue;
                }
                ws[j] = ci;
                j += 1;
                if self.value(first) == Value::False {
                    conflict = Some(ci);
                    while i < ws.len() {
                        ws[j] = ws[i];
                        j += 1;
                        i += 1;
                    }
                } else {
                    self.enqueue(first, ci);
                }
            }
            ws.truncate(j);
            self.watches[false_lit.idx()] = ws;
            if conflict.is_some() {
                self.qhead = self.trail.len();
                return conflict;
            }
        }
        None
    }

    fn bump(&mut self, v: usize) {
        self.activity[v] += self.var_inc;
        if self.activity[v] > 1e100 {
            for a in &mut self.activity {
                *a *= 1e-100;
            }
            self.var_inc *= 1e-100;
        }
        self.order.bumped(v, &self.activity);
    }

    /// First-UIP conflict analysis. Returns the learned clause (asserting
    /// literal first, highest remaining level second) and the backjump level.
    fn analyze(&mut self, mut confl: usize) -> (Vec<Lit>, usize) {
        let mut learnt = vec![Lit(0)];
        let mut path = 0usize;
        let mut p: Option<Lit> = None;
        let mut idx = self.trail.len();
        let current = self.decision_level();
        loop {
            let start = usize::from(p.is_some());
            for k in start..self.clauses[confl].len() {
                let q = self.clauses[confl][k];
                let v = q.var();
                if !self.seen[v] && self.level[v] > 0 {
                    self.seen[v] = true;
                    self.bump(v);
                    if self.level[v] >= current {
                        path += 1;
                    } else {
                        learnt.push(q);
                    }
                }
            }
            loop {
                idx -= 1;
                if self.seen[self.trail[idx].var()] {
                    break;
                }
            }
            let lit = self.trail[idx];
            self.seen[lit.var()] = false;
            path -= 1;
            p = Some(lit);
            if path == 0 {
                break;
            }
            confl = self.reason[lit.var()];
            debug_assert_ne!(confl, NO_REASON);
        }
        learnt[0] = p.unwrap().neg();
        for l in &learnt[1..] {
            self.seen[l.var()] = false;
        }
        let mut back = 0;
        if learnt.len() > 1 {
            let mut max_i = 1;
            for k in 2..learnt.len() {
                if self.level[learnt[k].var()] > self.level[learnt[max_i].var()] {
                    max_i = k;
                }
            }
            learnt.swap(1, max_i);
            back = self.level[learnt[1].var()];
        }
        (learnt, back)
    }

    fn backtrack(&mut self, level: usize) {
        if self.decision_level() <= level {
            return;
        }
        let lim = self.trail_lim[level];
        for k in (lim..self.trail.len()).rev() {
            let l = self.trail[k];
            let v = l.var();
            self.phase[v] = l.positive();
            self.values[v] = Value::Unassigned;
            self.reason[v] = NO_REASON;
            self.order.push(v, &self.activity);
        }
        self.trail.truncate(lim);
        self.trail_lim.truncate(level);
        self.qhead = lim;
    }

    fn pick_branch(&mut self) -> Option<Lit> {
        while let Some(v) = self.order.pop(&self.activity) {
            if self.values[v] == Value::Unassigned {
                let l = Lit(2 * v as u32);
                return Some(if self.phase[v] { l } else { l.neg() });
            }
        }
        None
    }

    fn out_of_budget(&self, budget: &SolveBudget) -> bool {
        if let Some(max) = budget.max_conflicts {
            if self.stats.conflicts >= max {
                return true;
            }
        }
        if let Some(deadline) = budget.deadline {
            if self.stats.conflicts.is_multiple_of(64) && Instant::now() >= deadline {
                return true;
            }
        }
        false
    }

    fn run(mut self, budget: SolveBudget) -> Result<SolveResult, SolveError> {
        let unsat = |stats| {
            Ok(SolveResult {
                status: SolveStatus::Unsat,
                stats,
            })
        };
        if self.trivially_unsat || self.propagate().is_some() {
            return unsat(self.stats);
        }
        let mut restart_limit = RESTART_FIRST;
        let mut conflicts_since_restart = 0u64;
        loop {
            if let Some(confl) = self.propagate() {
                self.stats.conflicts += 1;
                conflicts_since_restart += 1;
                if self.decision_level() == 0 {
                    return unsat(self.stats);
                }
                let (learnt, back) = self.analyze(confl);
                self.backtrack(back);
                if learnt.len() == 1 {
                    self.enqueue(learnt[0], NO_REASON);
                } else {
                    let asserting = learnt[0];
                    let ci = self.attach(learnt);
                    self.enqueue(asserting, ci);
                }
                self.stats.learned_clauses += 1;
                self.var_inc /= VAR_DECAY;
                if self.out_of_budget(&budget) {
                    return Err(SolveError::BudgetExhausted { stats: self.stats });
                }
            } else {
                if conflicts_since_restart as f64 >= restart_limit {
                    self.stats.restarts += 1;
                    conflicts_since_restart = 0;
                    restart_limit *= RESTART_GROWTH;
                    self.backtrack(0);
                    continue;
                }
                match self.pick_branch() {
                    None => {
                        let assignment = self.values.iter().map(|&v| v == Value::True).collect();
                        return Ok(SolveResult {
                            status: SolveStatus::Sat(assignment),
                            stats: self.stats,
                        });
                    }
                    Some(l) => {
                        self.stats.decisions += 1;
                        self.trail_lim.push(self.trail.len());
                        self.enqueue(l, NO_REASON);
                    }
                }
            }
        }
    }
}
