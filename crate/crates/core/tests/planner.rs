mod common;

use common::props;

#[test]
fn robust_plan_matches_brute_force() {
    for seed in 0..40 {
        props::planner_oracle(seed).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
    }
}

#[test]
fn lagrangian_matches_fine_grid() {
    for seed in 0..3 {
        let gap = props::lagrangian_grid_gap(seed).unwrap();
        assert!(gap <= 1e-3, "seed {seed}: gap {gap}");
    }
}

#[test]
fn singleton_transitions_reduce_to_known() {
    for seed in 0..10 {
        let diff = props::singleton_reduction(seed).unwrap();
        assert!(diff <= 1e-12, "seed {seed}: {diff}");
    }
}
