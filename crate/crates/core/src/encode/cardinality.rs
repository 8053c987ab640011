//! Sequential-counter encoding of "at least k of these literals are true".

use crate::cnf::{CnfFormula, VarRole};

/// Allocates counter registers `s[i][j]` ("at least `j` of the first `i`
/// inputs are true", `1 <= j <= min(i, k)`) in `formula` and returns the
/// clauses that, together with the final unit `s[n][k]`, force at least `k`
/// of `vars` to be true. The returned clauses are not added to `formula`.
///
/// Clauses per register:
/// - `!s[i][j] | s[i-1][j] | x_i` (the `s[i-1][j]` literal is dropped when
///   `j == i`, where it is constantly false)
/// - `!s[i][j] | s[i-1][j-1]` for `j >= 2`
pub fn cardinality_at_least(
    formula: &mut CnfFormula,
    vars: &[i32],
    k: usize,
    counter: usize,
) -> Vec<Vec<i32>> {
    let n = vars.len();
    assert!(k <= n, "at-least-{k} over {n} literals is unsatisfiable");
    if k == 0 {
        return Vec::new();
    }
    let mut clauses = Vec::new();
    // prev[j - 1] = s[i-1][j]
    let mut prev: Vec<i32> = Vec::new();
    for (i, &x) in vars.iter().enumerate() {
        let prefix = i + 1;
        // registers that can still reach k by the end are the only ones needed
        let lo = k.saturating_sub(n - prefix).max(1);
        let hi = prefix.min(k);
        let mut cur = vec![0i32; hi];
        for j in lo..=hi {
            let s = formula.new_var(VarRole::Counter {
                counter,
                prefix,
                count: j,
            });
            cur[j - 1] = s;
            let mut c = vec![-s, x];
            if j <= prev.len() && prev[j - 1] != 0 {
                c.push(prev[j - 1]);
            }
            clauses.push(c);
            if j >= 2 {
                let below = prev.get(j - 2).copied().unwrap_or(0);
                if below != 0 {
                    clauses.push(vec![-s, below]);
                } else {
                    // s[i-1][j-1] was never allocated because it cannot be true
                    clauses.push(vec![-s]);
                }
            }
        }
        prev = cur;
    }
    clauses.push(vec![prev[k - 1]]);
    clauses
}
