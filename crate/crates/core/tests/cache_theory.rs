use proptest::prelude::*;
use retainkv::cache_theory::{
    check_budget_condition, check_monotone_eviction, suffix_dependent_trace, theorem_check,
    topb_selection_trace,
};

/// Top `b` of the first `m` items by a full sort, larger index first on ties.
fn sorted_prefix_top(scores: &[f64], m: usize, b: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&x, &y| scores[y].partial_cmp(&scores[x]).unwrap().then(y.cmp(&x)));
    idx.truncate(b);
    idx.sort_unstable();
    idx
}

proptest! {
    #[test]
    fn streaming_matches_full_sort(
        scores in prop::collection::vec(prop_oneof![(-5i32..5).prop_map(f64::from), -1e3f64..1e3], 1..48),
        b in 1usize..12,
    ) {
        let t = topb_selection_trace(&scores, b).unwrap();
        prop_assert_eq!(t.len(), scores.len());
        for (m, set) in t.iter().enumerate() {
            prop_assert_eq!(set, &sorted_prefix_top(&scores, m + 1, b));
        }
        prop_assert!(check_budget_condition(&t, b));
        prop_assert!(check_monotone_eviction(&t));
    }

    #[test]
    fn monotone_check_matches_definition(
        sets in prop::collection::vec(prop::collection::btree_set(0usize..8, 0..5), 1..8),
    ) {
        // keep only indices already seen so the trace is well formed
        let trace: Vec<Vec<usize>> = sets
            .iter()
            .enumerate()
            .map(|(m, s)| s.iter().copied().filter(|&i| i <= m).collect())
            .collect();
        let mut ok = true;
        for m1 in 0..trace.len() {
            for m2 in m1 + 1..trace.len() {
                for i in &trace[m2] {
                    if *i <= m1 && !trace[m1].contains(i) {
                        ok = false;
                    }
                }
            }
        }
        prop_assert_eq!(check_monotone_eviction(&trace), ok);
    }
}

#[test]
fn control_scorer_readmits() {
    // item 0 collects most of its weight from the third query
    let a = vec![vec![0.1, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![5.0, 0.0, 0.2]];
    let t = suffix_dependent_trace(&a, 1);
    assert_eq!(t, vec![vec![0], vec![1], vec![0]]);
    assert!(check_budget_condition(&t, 1));
    assert!(!check_monotone_eviction(&t));
}

#[test]
fn report_is_reproducible() {
    let a = theorem_check(300, 32, 8, 5).unwrap();
    assert_eq!(a, theorem_check(300, 32, 8, 5).unwrap());
    assert_eq!(a.violations_topb, 0);
    assert!(a.violations_control > 0);
    assert_eq!(a.exhaustive_cases, 3276);
    assert!(theorem_check(0, 4, 4, 0).is_err());
}

#[test]
fn non_finite_scores_rejected() {
    assert!(topb_selection_trace(&[1.0, f64::NAN], 1).is_err());
    assert!(topb_selection_trace(&[f64::INFINITY], 1).is_err());
}
