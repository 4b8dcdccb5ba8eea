use freehand::analysis::{
    constant_estimator, instance_pair_kl, lower_bound_instance, minimax_risk_eval, prop2_instance, BoundKind, PairCase,
};
use freehand::mdp::{trajectory_distribution, PolicyKind, DEFAULT_ENUMERATION_CAP as CAP};
use freehand::planner::greedy_plan;

#[test]
fn oracle_estimator_risk_is_exact() {
    for kind in [BoundKind::St, BoundKind::Tr] {
        for c in [1.5, 4.0] {
            let pair = lower_bound_instance(kind, c, 2, 50).unwrap();
            let (pi, _, _) = greedy_plan(&pair.mdp, &pair.reward1, PolicyKind::MarkovDet, CAP).unwrap();
            let mass = trajectory_distribution(&pair.mdp, &pi, CAP).unwrap().prob(pair.star);
            let est = constant_estimator(pi);
            let r = minimax_risk_eval(&*est, &pair, 50, 4, 1, true).unwrap();
            assert!(r.risk[0].abs() < 1e-12, "{kind:?} C={c}: {:?}", r.risk);
            assert!((r.risk[1] - pair.x * mass).abs() < 1e-12, "{kind:?} C={c}: {:?}", r.risk);
            assert_eq!(r.std_err, [0.0, 0.0]);
            let expected_mass = if pair.case == PairCase::OneState { 1.0 } else { c - 1.0 };
            assert!((mass - expected_mass).abs() < 1e-12);
        }
    }
}

#[test]
fn kl_matches_closed_form_on_one_state_pairs() {
    // Only the (τ*, τ†) comparisons carry information there, and the
    // per-comparison KL is x·tanh(x/2).
    let pair = lower_bound_instance(BoundKind::Tr, 4.0, 2, 30).unwrap();
    let p_star = pair.mu.prob(pair.star);
    let informative = 2.0 * p_star * (1.0 - p_star);
    let expected = informative * pair.x * (pair.x / 2.0).tanh();
    assert!((instance_pair_kl(&pair) - expected).abs() < 1e-12);
}

#[test]
fn total_kl_stays_bounded_as_rate_shrinks() {
    let mut last_rate = f64::INFINITY;
    for n in [10, 100, 1000] {
        let pair = lower_bound_instance(BoundKind::St, 3.0, 2, n).unwrap();
        let total = instance_pair_kl(&pair) * n as f64;
        assert!(total <= pair.kl_bound() * n as f64);
        assert!(pair.minimax_rate() < last_rate);
        last_rate = pair.minimax_rate();
    }
}

#[test]
fn constructed_coefficients_are_exact() {
    for (c, h) in [(2.0, 3), (1.5, 4), (3.0, 2), (1.0, 1)] {
        let (st, tr) = prop2_instance(3, 2, h, c, None, None).unwrap().coefficients().unwrap();
        assert!((st - c).abs() < 1e-9 && (tr - c.powi(h as i32)).abs() < 1e-9, "C={c} H={h}: {st} {tr}");
    }
    assert!(prop2_instance(2, 2, 2, 0.5, None, None).is_err());
}

#[test]
fn risk_curve_tracks_the_pair_gap() {
    let pair = lower_bound_instance(BoundKind::Tr, 2.5, 2, 10).unwrap();
    let (pi, _, _) = greedy_plan(&pair.mdp, &pair.reward1, PolicyKind::MarkovDet, CAP).unwrap();
    let est = constant_estimator(pi);
    let curve = freehand::analysis::risk_curve(&*est, BoundKind::Tr, 2.5, 2, &[10, 40, 160], 2, 0, false).unwrap();
    for (n, r) in &curve {
        let x = lower_bound_instance(BoundKind::Tr, 2.5, 2, *n).unwrap().x;
        assert!((r.max - x).abs() < 1e-12);
    }
    let csv = freehand::analysis::risk_csv(&curve);
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with(freehand::analysis::RISK_HEADER));
}
