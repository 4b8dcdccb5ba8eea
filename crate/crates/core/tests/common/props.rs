//! Seed-driven invariant checks shared by the proptest suite and the
//! acceptance run. Each returns `Err(description)` on the first violation.

use freehand::action::greedy_from_advantage;
use freehand::classes::{odometer, RewardClass, TabularGrid};
use freehand::confidence::{
    build_reward_confidence, reward_confidence_with_slack, squared_difference_radius, ConfidenceSet, TransitionConfidenceSet,
};
use freehand::mdp::{
    enumerate_policies, evaluate_policy, policy_q_values, trajectory_distribution, visitation, Policy, PolicyKind,
    RewardFunction, TabularMdp, TrajectoryDist, DEFAULT_ENUMERATION_CAP as CAP,
};
use freehand::mle::{loglik_reward, loglik_reward_gradient, MleOptions};
use freehand::planner::{
    greedy_plan, inner_min_grid, inner_min_lagrangian, objective_direction, robust_plan_known, robust_plan_unknown, InnerMethod,
    PlanRequest,
};
use freehand::preference::{generate_preference_dataset, Link};
use rand::Rng;

use super::*;

pub type Check = std::result::Result<(), String>;

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=3))
}

fn close(a: f64, b: f64, tol: f64, what: &str) -> Check {
    if (a - b).abs() <= tol {
        Ok(())
    } else {
        Err(format!("{what}: {a} vs {b} (tol {tol})"))
    }
}

/// Laws, marginals and visitations sum to one; data laws too.
pub fn normalization(seed: u64) -> Check {
    let mut rng = rng(seed);
    let (h, s, a) = dims(&mut rng);
    let mdp = random_mdp(&mut rng, h, s, a);
    for pi in [random_det(&mut rng, &mdp), random_stochastic(&mut rng, &mdp), Policy::uniform(&mdp)] {
        let d = trajectory_distribution(&mdp, &pi, CAP).map_err(|e| e.to_string())?;
        close(d.entries().iter().map(|e| e.1).sum(), 1.0, 1e-10, "trajectory law mass")?;
        for step in 0..h {
            close(d.marginal(step).iter().sum(), 1.0, 1e-10, "marginal mass")?;
            let v = visitation(&mdp, &pi, step, CAP).map_err(|e| e.to_string())?;
            close(v.iter().sum(), 1.0, 1e-10, "visitation mass")?;
            for (x, y) in v.iter().zip(d.marginal(step)) {
                close(*x, y, 1e-10, "visitation vs marginal")?;
            }
        }
    }
    let space = mdp.space();
    let k = space.size(CAP).unwrap();
    let mu0 = trajectory_distribution(&mdp, &Policy::uniform(&mdp), CAP).unwrap();
    let mu1 = trajectory_distribution(&mdp, &random_stochastic(&mut rng, &mdp), CAP).unwrap();
    let reward = RewardFunction::Trajectory { table: random_table(&mut rng, k, 1.0) };
    let ds = generate_preference_dataset(&mdp, &reward, &Link::Sigmoid, &mu0, &mu1, 25, &mut rng).unwrap();
    close(ds.mu0_empirical().entries().iter().map(|e| e.1).sum(), 1.0, 1e-10, "empirical mu0 mass")?;
    close(ds.mu1_empirical().entries().iter().map(|e| e.1).sum(), 1.0, 1e-10, "empirical mu1 mass")?;
    let pairs: f64 = ds.pair_counts().iter().map(|p| p.ones + p.zeros).sum();
    close(pairs, 25.0, 0.0, "pair counts")
}

/// `J(π') - J(π) = Σ_h E_{d^{π'}_h}[Q^π_h(s, a)] - E_{d^{π'}_h}[V^π_h(s)]`.
pub fn performance_difference(seed: u64) -> Check {
    let mut rng = rng(seed);
    let (h, s, a) = dims(&mut rng);
    let mdp = random_mdp(&mut rng, h, s, a);
    let reward = random_sa_reward(&mut rng, &mdp);
    let pi = random_det(&mut rng, &mdp);
    let pi2 = if rng.gen_bool(0.5) { random_det(&mut rng, &mdp) } else { random_stochastic(&mut rng, &mdp) };
    let lhs = evaluate_policy(&mdp, &pi2, &reward, CAP).unwrap() - evaluate_policy(&mdp, &pi, &reward, CAP).unwrap();
    let q = policy_q_values(&mdp, &reward, &pi).unwrap();
    let Policy::MarkovDeterministic { actions } = &pi else { unreachable!() };
    let mut rhs = 0.0;
    for step in 0..h {
        let d = visitation(&mdp, &pi2, step, CAP).unwrap();
        for st in 0..s {
            for ac in 0..a {
                let i = st * a + ac;
                rhs += d[i] * (q[step][i] - q[step][st * a + actions[step][st]]);
            }
        }
    }
    close(lhs, rhs, 1e-9, "performance difference")
}

/// `|J(π; r, P*) - J(π; r, P)| ≤ r_max Σ_h E_{d^π_h}‖P*_h - P_h‖₁`.
pub fn simulation_bound(seed: u64) -> Check {
    let mut rng = rng(seed);
    let (h, s, a) = dims(&mut rng);
    let h = h.max(2);
    let s = s.max(2);
    let mdp = random_mdp(&mut rng, h, s, a);
    let eps = rng.gen_range(0.0..1.0);
    let other = perturb_transitions(&mut rng, &mdp, eps);
    let k = mdp.space().size(CAP).unwrap();
    let reward = RewardFunction::Trajectory { table: random_table(&mut rng, k, mdp.r_max()) };
    let pi = if rng.gen_bool(0.5) { random_det(&mut rng, &mdp) } else { random_stochastic(&mut rng, &mdp) };
    let gap = (evaluate_policy(&mdp, &pi, &reward, CAP).unwrap() - evaluate_policy(&other, &pi, &reward, CAP).unwrap()).abs();
    let mut bound = 0.0;
    for step in 0..h - 1 {
        let d = visitation(&mdp, &pi, step, CAP).unwrap();
        for row in 0..s * a {
            let l1: f64 = (0..s).map(|j| (mdp.transitions()[step][row * s + j] - other.transitions()[step][row * s + j]).abs()).sum();
            bound += d[row] * l1;
        }
    }
    bound *= mdp.r_max();
    if gap <= bound + 1e-12 {
        Ok(())
    } else {
        Err(format!("simulation bound violated: {gap} > {bound}"))
    }
}

/// Analytic log-likelihood gradient against central differences.
pub fn gradient(seed: u64) -> Check {
    let mut rng = rng(seed);
    let (h, s, a) = dims(&mut rng);
    let mdp = random_mdp(&mut rng, h.min(2), s.min(2), a);
    let k = mdp.space().size(CAP).unwrap();
    let reward = RewardFunction::Trajectory { table: random_table(&mut rng, k, 1.0) };
    let mu = trajectory_distribution(&mdp, &Policy::uniform(&mdp), CAP).unwrap();
    let ds = generate_preference_dataset(&mdp, &reward, &Link::Sigmoid, &mu, &mu, 40, &mut rng).unwrap();
    let table = random_table(&mut rng, k, 2.0);
    let g = loglik_reward_gradient(&table, &ds, &Link::Sigmoid);
    let step = 1e-6;
    for i in 0..k {
        let mut up = table.clone();
        let mut down = table.clone();
        up[i] += step;
        down[i] -= step;
        let fd = (loglik_reward(&up, &ds, &Link::Sigmoid) - loglik_reward(&down, &ds, &Link::Sigmoid)) / (2.0 * step);
        if (g[i] - fd).abs() > 1e-4 * g[i].abs().max(1.0) {
            return Err(format!("gradient entry {i}: analytic {} vs finite difference {fd}", g[i]));
        }
    }
    Ok(())
}

/// Deterministic dynamics so policy values are exact table entries.
fn deterministic_mdp(rng: &mut ChaCha8Rng, h: usize, s: usize, a: usize) -> TabularMdp {
    let mut one_hot = |n: usize| {
        let mut v = vec![0.0; n];
        v[rng.gen_range(0..n)] = 1.0;
        v
    };
    let initial = one_hot(s);
    let transitions = (1..h).map(|_| (0..s * a).flat_map(|_| one_hot(s)).collect()).collect();
    TabularMdp::new(h, s, a, initial, transitions, 4.0).unwrap()
}

fn dyadic(rng: &mut ChaCha8Rng, max: u32) -> f64 {
    rng.gen_range(0..=max) as f64 / 16.0
}

/// Argmax decisions ignore reward offsets: constant shifts of trajectory
/// rewards, per-state shifts of advantages, and shifts inside the
/// difference-based radius.
pub fn gauge(seed: u64) -> Check {
    let mut rng = rng(seed);
    let (h, s, a) = dims(&mut rng);
    let mdp = deterministic_mdp(&mut rng, h, s, a);
    let k = mdp.space().size(CAP).unwrap();
    let table: Vec<f64> = (0..k).map(|_| dyadic(&mut rng, 32)).collect();
    let shift = dyadic(&mut rng, 16);
    let shifted: Vec<f64> = table.iter().map(|v| v + shift).collect();
    let (_, i0, _) = greedy_plan(&mdp, &table, PolicyKind::MarkovDet, CAP).unwrap();
    let (_, i1, _) = greedy_plan(&mdp, &shifted, PolicyKind::MarkovDet, CAP).unwrap();
    if i0 != i1 {
        return Err(format!("greedy policy moved under a constant shift: {i0} -> {i1}"));
    }

    let adv: Vec<Vec<f64>> = (0..h).map(|_| (0..s * a).map(|_| dyadic(&mut rng, 16)).collect()).collect();
    let moved: Vec<Vec<f64>> = adv
        .iter()
        .map(|t| t.chunks(a).flat_map(|row| {
            let c = dyadic(&mut rng, 16);
            row.iter().map(|v| v - c).collect::<Vec<_>>()
        }).collect())
        .collect();
    if greedy_from_advantage(&adv, a) != greedy_from_advantage(&moved, a) {
        return Err("advantage argmax moved under per-state shifts".into());
    }

    let space = mdp.space();
    let idx: Vec<usize> = (0..k).collect();
    let mu0 = random_mixture(&mut rng, space, &idx);
    let mu1 = random_mixture(&mut rng, space, &idx);
    let r = squared_difference_radius(&shifted, &mu0, &mu1, &table);
    if r != 0.0 {
        return Err(format!("radius of a shifted truth is {r}"));
    }
    Ok(())
}

/// `ζ₁ ≤ ζ₂` implies membership in the smaller set carries over; the MLE is
/// always a member.
pub fn nesting(seed: u64) -> Check {
    let mut rng = rng(seed);
    let mdp = random_mdp(&mut rng, 2, 1, 2);
    let space = mdp.space();
    let grid = TabularGrid::full(space, 0.5, 1.0, CAP).unwrap();
    let class = RewardClass::TabularGrid(grid.clone());
    let truth: Vec<f64> = (0..4).map(|_| dyadic(&mut rng, 2) * 8.0).collect();
    let reward = RewardFunction::Trajectory { table: truth };
    let mu = TrajectoryDist::uniform(space, &[0, 1, 2, 3]).unwrap();
    let n = rng.gen_range(5..60);
    let ds = generate_preference_dataset(&mdp, &reward, &Link::Sigmoid, &mu, &mu, n, &mut rng).unwrap();
    let set = build_reward_confidence(&ds, &class, &Link::Sigmoid, 0.1, 0.5, &MleOptions::default()).unwrap();
    if !set.contains(&set.mle.table) {
        return Err("MLE outside its own set".into());
    }
    let z1 = rng.gen_range(0.0..3.0);
    let z2 = z1 + rng.gen_range(0.0..3.0);
    let (small, large) = (set.with_slack(z1), set.with_slack(z2));
    let members = class.enumerate_members(0.5, CAP).unwrap();
    for m in &members {
        if small.contains(&m.table) && !large.contains(&m.table) {
            return Err(format!("member {:?} in the ζ={z1} set but not the ζ={z2} set", m.table));
        }
    }
    let d1 = small.discretize(0.5, CAP).unwrap();
    let d2 = large.discretize(0.5, CAP).unwrap();
    if d1.iter().any(|m| !d2.contains(m)) {
        return Err("discretized sets not nested".into());
    }
    Ok(())
}

/// Brute-force planner oracle: enumerated policies against an explicit
/// member list. Values within a relative 1e-12 of the best count as tied
/// and go to the lowest index.
pub fn brute_force_plan(mdp: &TabularMdp, members: &[Vec<f64>], mu_ref: &TrajectoryDist) -> (usize, f64) {
    let values: Vec<f64> = enumerate_policies(mdp, PolicyKind::MarkovDet, CAP)
        .unwrap()
        .map(|pi| {
            let d = trajectory_distribution(mdp, &pi, CAP).unwrap();
            members.iter().map(|t| d.expect_table(t) - mu_ref.expect_table(t)).fold(f64::INFINITY, f64::min)
        })
        .collect();
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let i = values.iter().position(|&v| v >= best - 1e-12 * (1.0 + best.abs())).unwrap();
    (i, values[i])
}

/// Two actions, two steps and a grid on `support`. With one state there
/// are four deterministic policies and four trajectories.
fn tiny_set(rng: &mut ChaCha8Rng, states: usize, spacing: f64, support: Vec<usize>) -> (TabularMdp, ConfidenceSet, TrajectoryDist) {
    let mdp = random_mdp(rng, 2, states, 2);
    let space = mdp.space();
    let fill = 0.5 * rng.gen_range(0..=2) as f64;
    let grid = TabularGrid::new(space, support, spacing, 1.0, fill).unwrap();
    let levels = grid.levels();
    let values: Vec<f64> = grid.support.iter().map(|_| levels[rng.gen_range(0..levels.len())]).collect();
    let reward = RewardFunction::Trajectory { table: grid.table(&values) };
    let mu0 = trajectory_distribution(&mdp, &random_stochastic(rng, &mdp), CAP).unwrap();
    let mu1 = trajectory_distribution(&mdp, &random_stochastic(rng, &mdp), CAP).unwrap();
    let n = rng.gen_range(10..80);
    let ds = generate_preference_dataset(&mdp, &reward, &Link::Sigmoid, &mu0, &mu1, n, rng).unwrap();
    let zeta = rng.gen_range(0.2..4.0);
    let class = RewardClass::TabularGrid(grid);
    let set = reward_confidence_with_slack(&ds, &class, &Link::Sigmoid, zeta, &MleOptions::default()).unwrap();
    (mdp, set, mu1)
}

/// Robust planning against the exhaustive policy × member search, with
/// the member list rebuilt here from the likelihood threshold.
pub fn planner_oracle(seed: u64) -> Check {
    let mut rng = rng(seed);
    let (mdp, set, mu_ref) = tiny_set(&mut rng, 1, 0.5, vec![0, 1, 2]);
    let RewardClass::TabularGrid(grid) = &set.class else { unreachable!() };
    let levels = grid.levels();
    let threshold = loglik_reward(&set.mle.table, &set.dataset, &set.link) - set.zeta;
    let mut members: Vec<Vec<f64>> = odometer(3, levels.len())
        .map(|k| grid.table(&k.iter().map(|&i| levels[i]).collect::<Vec<_>>()))
        .filter(|t| loglik_reward(t, &set.dataset, &set.link) >= threshold)
        .collect();
    members.push(set.mle.table.clone());
    if members.len() > 28 {
        return Err(format!("{} members", members.len()));
    }
    let (idx, value) = brute_force_plan(&mdp, &members, &mu_ref);
    let res = robust_plan_known(&mdp, &set, &mu_ref, &PlanRequest::default()).map_err(|e| e.to_string())?;
    if res.diagnostics.policies_evaluated > 4 {
        return Err(format!("{} policies", res.diagnostics.policies_evaluated));
    }
    close(res.value, value, 1e-9, "robust value")?;
    if res.policy_index != idx {
        return Err(format!("planner chose policy {} but brute force chose {idx}", res.policy_index));
    }
    Ok(())
}

/// Largest `|grid - lagrangian|` inner minimum over the four policies, on
/// a two-coordinate grid at spacing 1e-3 standing in for the continuum.
pub fn lagrangian_grid_gap(seed: u64) -> std::result::Result<f64, String> {
    let mut rng = rng(seed);
    let (mdp, set, mu_ref) = tiny_set(&mut rng, 1, 1e-3, vec![0, 3]);
    let req = PlanRequest { member_cap: 2_000_000, ..PlanRequest::default() };
    let members = set.discretize(0.0, req.member_cap).map_err(|e| e.to_string())?;
    let mut gap: f64 = 0.0;
    for pi in enumerate_policies(&mdp, PolicyKind::MarkovDet, CAP).unwrap() {
        let c = objective_direction(&mdp, &pi, &mu_ref, CAP).unwrap();
        let grid = inner_min_grid(&members, &c).value;
        let lag = inner_min_lagrangian(&set, &c, &req).map_err(|e| e.to_string())?.value;
        gap = gap.max((grid - lag).abs());
    }
    let by = |method| {
        let r = PlanRequest { method: Some(method), ..req.clone() };
        robust_plan_known(&mdp, &set, &mu_ref, &r).map(|p| p.value).map_err(|e| e.to_string())
    };
    let (g, l) = (by(InnerMethod::Grid { resolution: 0.0 })?, by(InnerMethod::Lagrangian)?);
    Ok(gap.max((g - l).abs()))
}

/// Unknown-transition planning over singleton transition sets against
/// known-transition planning; returns the value difference.
pub fn singleton_reduction(seed: u64) -> std::result::Result<f64, String> {
    let mut rng = rng(seed);
    let (mdp, set, mu_ref) = tiny_set(&mut rng, 2, 0.5, vec![0, 5, 10]);
    let req = PlanRequest::default();
    let known = robust_plan_known(&mdp, &set, &mu_ref, &req).map_err(|e| e.to_string())?;
    let unknown = robust_plan_unknown(&mdp, &set, &TransitionConfidenceSet::singleton(&mdp), &mu_ref, &req)
        .map_err(|e| e.to_string())?;
    if known.policy_index != unknown.policy_index {
        return Err(format!("policies {} vs {}", known.policy_index, unknown.policy_index));
    }
    Ok((known.value - unknown.value).abs())
}
