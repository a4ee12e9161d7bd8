//! Top-b selection over a fixed score sequence as a bounded-cache computation.
//!
//! A selection trace lists, for every prefix length `m = 1..=n`, the indices
//! (0-based) a policy holds after seeing the first `m` items. A trace solves a
//! cache problem with budget `b` when every set has at most `b` members and
//! an index, once dropped, never comes back.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::top_b_indices;

/// `trace[m - 1]` is the sorted index set held after `m` items.
pub type SelectionTrace = Vec<Vec<usize>>;

/// Streaming top-b: each step keeps the best `b` of the previous set plus
/// the new index, ranking by `(score, index)` descending.
pub fn topb_selection_trace(scores: &[f64], b: usize) -> Result<SelectionTrace> {
    if b == 0 {
        return Err(Error::config("budget must be at least 1"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::data("score sequence must be finite"));
    }
    let mut held: Vec<usize> = Vec::new();
    let mut trace = Vec::with_capacity(scores.len());
    for m in 0..scores.len() {
        held.push(m);
        let vals: Vec<f64> = held.iter().map(|&i| scores[i]).collect();
        held = top_b_indices(&vals, b).into_iter().map(|r| held[r]).collect();
        trace.push(held.clone());
    }
    Ok(trace)
}

pub fn check_budget_condition(trace: &SelectionTrace, b: usize) -> bool {
    trace.iter().all(|s| s.len() <= b)
}

/// For all `m1 < m2`, indices in `Sel(m2)` but not `Sel(m1)` arrived after `m1`.
pub fn check_monotone_eviction(trace: &SelectionTrace) -> bool {
    for (a, s1) in trace.iter().enumerate() {
        let m1 = a + 1;
        for s2 in &trace[a + 1..] {
            if s2
                .iter()
                .any(|i| *i < m1 && s1.binary_search(i).is_err())
            {
                return false;
            }
        }
    }
    true
}

/// Negative control: item `k`'s score after `m` items is `Σ_{q=k}^{m-1} a[q][k]`,
/// an attention-style sum that keeps changing as the sequence grows, and
/// each step re-selects globally among all items seen.
pub fn suffix_dependent_trace(weights: &[Vec<f64>], b: usize) -> SelectionTrace {
    let n = weights.len();
    let mut acc = vec![0.0; n];
    let mut trace = Vec::with_capacity(n);
    for m in 0..n {
        for k in 0..=m {
            acc[k] += weights[m][k];
        }
        trace.push(top_b_indices(&acc[..=m], b));
    }
    trace
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub trials: usize,
    pub violations_topb: usize,
    pub violations_control: usize,
    pub exhaustive_cases: usize,
}

/// Random instances with `n ≤ max_n`, `b ≤ max_b`, plus every sequence of
/// length ≤ 6 over `{1, 2, 3}` with `b ∈ {1, 2, 3}`.
pub fn theorem_check(trials: usize, max_n: usize, max_b: usize, seed: u64) -> Result<TheoremReport> {
    if trials == 0 || max_n == 0 || max_b == 0 {
        return Err(Error::config("trials, max_n and max_b must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations_topb = 0;
    let mut violations_control = 0;
    for _ in 0..trials {
        let n = rng.random_range(1..=max_n);
        let b = rng.random_range(1..=max_b);
        let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let t = topb_selection_trace(&scores, b)?;
        if !(check_budget_condition(&t, b) && check_monotone_eviction(&t)) {
            violations_topb += 1;
        }
        let w: Vec<Vec<f64>> = (0..n)
            .map(|q| (0..n).map(|k| if k <= q { rng.random::<f64>() } else { 0.0 }).collect())
            .collect();
        let c = suffix_dependent_trace(&w, b);
        if !(check_budget_condition(&c, b) && check_monotone_eviction(&c)) {
            violations_control += 1;
        }
    }
    let mut exhaustive_cases = 0;
    for len in 1..=6u32 {
        for code in 0..3usize.pow(len) {
            let mut x = code;
            let scores: Vec<f64> = (0..len)
                .map(|_| {
                    let v = (x % 3 + 1) as f64;
                    x /= 3;
                    v
                })
                .collect();
            for b in 1..=3 {
                let t = topb_selection_trace(&scores, b)?;
                if !(check_budget_condition(&t, b) && check_monotone_eviction(&t)) {
                    violations_topb += 1;
                }
                exhaustive_cases += 1;
            }
        }
    }
    Ok(TheoremReport {
        trials,
        violations_topb,
        violations_control,
        exhaustive_cases,
    })
}
