//! Robust planning: exhaustive outer maximisation over deterministic
//! policies, inner minimisation over reward (and transition) confidence
//! sets.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classes::{RewardClass, RewardModel, TransitionClass};
use crate::confidence::{ConfidenceSet, StepTransitionSet, TransitionConfidenceSet, TransitionScope};
use crate::error::{Error, Result};
use crate::mdp::{
    enumerate_policies, evaluate_policy, trajectory_distribution, Policy, PolicyKind, RewardFunction, TabularMdp,
    TrajectoryDist, DEFAULT_ENUMERATION_CAP,
};
use crate::mle::{reward_domain, transition_loglik, Domain, MleOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InnerMethod {
    /// Exact minimum over the discretised set at this resolution
    /// (ignored for tabular grids, which are enumerated exactly).
    Grid { resolution: f64 },
    /// Multiplier bisection on the convex superlevel set.
    Lagrangian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanRequest {
    pub policy_kind: PolicyKind,
    /// `None` selects grid for tabular classes and Lagrangian for linear.
    pub method: Option<InnerMethod>,
    pub policy_cap: usize,
    pub enumeration_cap: usize,
    pub member_cap: usize,
    /// Stop bisecting once `|ℓ(r) - (ℓ̂ - ζ)|` is below this.
    pub constraint_tol: f64,
    pub max_bisections: usize,
    pub max_alternations: usize,
    pub alternation_tol: f64,
    pub mle: MleOptions,
}

impl Default for PlanRequest {
    fn default() -> Self {
        Self {
            policy_kind: PolicyKind::MarkovDet,
            method: None,
            policy_cap: DEFAULT_ENUMERATION_CAP,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
            member_cap: DEFAULT_ENUMERATION_CAP,
            constraint_tol: 1e-6,
            max_bisections: 200,
            max_alternations: 50,
            alternation_tol: 1e-10,
            mle: MleOptions::default(),
        }
    }
}

impl PlanRequest {
    pub fn method_for(&self, class: &RewardClass) -> InnerMethod {
        self.method.clone().unwrap_or(match class {
            RewardClass::TabularGrid(_) => InnerMethod::Grid { resolution: 0.0 },
            RewardClass::Linear(_) => InnerMethod::Lagrangian,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InnerMin {
    pub value: f64,
    pub reward: RewardModel,
    pub iterations: usize,
    /// `ℓ(r) - (ℓ̂ - ζ)` at the returned point (Lagrangian only).
    pub constraint_gap: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PlanDiagnostics {
    pub policies_evaluated: usize,
    pub inner_iterations: usize,
    pub alternations: usize,
    pub method: String,
    pub members: Option<usize>,
    pub constraint_gap: Option<f64>,
    /// Objective after each accepted block update (unknown transitions).
    pub objective_trace: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobustPlanResult {
    pub policy: Policy,
    pub policy_index: usize,
    pub value: f64,
    pub worst_reward: RewardModel,
    pub worst_transitions: Option<Vec<Vec<f64>>>,
    pub diagnostics: PlanDiagnostics,
    /// Robust value of every enumerated policy, in enumeration order.
    pub values: Vec<f64>,
}

impl RobustPlanResult {
    /// `policy_index,robust_value` rows.
    pub fn values_csv(&self) -> String {
        let mut out = String::from("policy_index,robust_value\n");
        for (i, v) in self.values.iter().enumerate() {
            out.push_str(&format!("{i},{v}\n"));
        }
        out
    }
}

/// `J(π; r, P) - E_{μ_ref}[r]`.
pub fn pessimistic_objective(mdp: &TabularMdp, policy: &Policy, reward: &RewardFunction, mu_ref: &TrajectoryDist, cap: usize) -> Result<f64> {
    let space = mdp.space();
    Ok(evaluate_policy(mdp, policy, reward, cap)? - mu_ref.expect(|i| reward.value(&space, i)))
}

/// Dense `d^π - μ_ref`, the linear functional the inner problem minimises.
pub fn objective_direction(mdp: &TabularMdp, policy: &Policy, mu_ref: &TrajectoryDist, cap: usize) -> Result<Vec<f64>> {
    let n = mdp.space().size(cap)?;
    let mut c = trajectory_distribution(mdp, policy, cap)?.to_dense(n);
    for &(i, p) in mu_ref.entries() {
        c[i] -= p;
    }
    Ok(c)
}

/// The functional `c·table` written in class parameters: `coef·params + constant`.
fn parameter_functional(class: &RewardClass, c: &[f64]) -> (Vec<f64>, f64) {
    match class {
        RewardClass::TabularGrid(g) => {
            let coef: Vec<f64> = g.support.iter().map(|&i| c[i]).collect();
            let total: f64 = c.iter().sum();
            (coef.clone(), g.fill * (total - coef.iter().sum::<f64>()))
        }
        RewardClass::Linear(l) => {
            let mut coef = vec![0.0; l.dim()];
            for (f, &ci) in l.features.iter().zip(c) {
                if ci != 0.0 {
                    coef.iter_mut().zip(f).for_each(|(a, b)| *a += ci * b);
                }
            }
            (coef, 0.0)
        }
    }
}

fn table_dot(c: &[f64], table: &[f64]) -> f64 {
    crate::mdp::dot(c, table)
}

/// Minimum of `c·table` over a precomputed member list; first wins ties.
pub fn inner_min_grid(members: &[RewardModel], c: &[f64]) -> InnerMin {
    let mut best = 0;
    let mut best_v = f64::INFINITY;
    for (i, m) in members.iter().enumerate() {
        let v = table_dot(c, &m.table);
        if v < best_v {
            best_v = v;
            best = i;
        }
    }
    InnerMin { value: best_v, reward: members[best].clone(), iterations: members.len(), constraint_gap: None }
}

/// Minimise `c·r` over `{ℓ(r) ≥ ℓ̂ - ζ}` (continuous relaxation of the
/// class domain) by bisection on the multiplier of the penalised problem
/// `max ℓ(x) - t·⟨coef, x⟩`. Returns the feasible endpoint.
pub fn inner_min_lagrangian(set: &ConfidenceSet, c: &[f64], req: &PlanRequest) -> Result<InnerMin> {
    let (coef, constant) = parameter_functional(&set.class, c);
    let obj = &set.objective;
    let domain = reward_domain(&set.class);
    let target = set.threshold();
    let finish = |x: Vec<f64>, iters: usize| {
        let value = crate::mdp::dot(&coef, &x) + constant;
        let gap = obj.loglik(&x) - target;
        InnerMin { value, reward: set.class.model(x), iterations: iters, constraint_gap: Some(gap) }
    };
    let cnorm = crate::classes::norm(&coef);
    if cnorm == 0.0 {
        return Ok(finish(set.mle.params.clone(), 0));
    }
    let free: Vec<f64> = match domain {
        Domain::Ball { radius } => coef.iter().map(|v| -radius * v / cnorm).collect(),
        Domain::Box { lo, hi } => coef
            .iter()
            .zip(&set.mle.params)
            .map(|(&v, &m)| if v > 0.0 { lo } else if v < 0.0 { hi } else { m })
            .collect(),
        Domain::Free => return Err(Error::InvalidParams("unbounded domain".into())),
    };
    if obj.loglik(&free) >= target {
        return Ok(finish(free, 0));
    }
    let mut iters = 0;
    let mut solve = |t: f64, x0: &[f64]| -> Result<(Vec<f64>, f64)> {
        let sol = obj.maximize_penalized(&coef, t, &domain, x0, &req.mle)?;
        iters += sol.iterations;
        let l = obj.loglik(&sol.x);
        Ok((sol.x, l))
    };
    let mut x_lo = set.mle.params.clone();
    let mut l_lo = obj.loglik(&x_lo);
    let (mut t_lo, mut t_hi) = (0.0, 1.0 / cnorm);
    let mut bracketed = false;
    for _ in 0..200 {
        let (x, l) = solve(t_hi, &x_lo)?;
        if l < target {
            bracketed = true;
            break;
        }
        t_lo = t_hi;
        x_lo = x;
        l_lo = l;
        if l_lo - target <= req.constraint_tol {
            return Ok(finish(x_lo, iters));
        }
        t_hi *= 2.0;
    }
    if !bracketed {
        return Ok(finish(x_lo, iters));
    }
    for _ in 0..req.max_bisections {
        if l_lo - target <= req.constraint_tol || t_hi - t_lo <= 1e-15 * t_hi {
            break;
        }
        let t = 0.5 * (t_lo + t_hi);
        let (x, l) = solve(t, &x_lo)?;
        if l >= target {
            t_lo = t;
            x_lo = x;
            l_lo = l;
        } else {
            t_hi = t;
        }
    }
    Ok(finish(x_lo, iters))
}

/// Inner minimum of the pessimistic objective for one direction `c`.
pub fn inner_min_reward(set: &ConfidenceSet, c: &[f64], method: &InnerMethod, members: Option<&[RewardModel]>, req: &PlanRequest) -> Result<InnerMin> {
    match method {
        InnerMethod::Grid { resolution } => match members {
            Some(m) => Ok(inner_min_grid(m, c)),
            None => Ok(inner_min_grid(&set.discretize(*resolution, req.member_cap)?, c)),
        },
        InnerMethod::Lagrangian => inner_min_lagrangian(set, c, req),
    }
}

fn collect_policies(mdp: &TabularMdp, req: &PlanRequest) -> Result<Vec<Policy>> {
    Ok(enumerate_policies(mdp, req.policy_kind, req.policy_cap)?.collect())
}

/// Relative gap under which two policy values count as tied.
pub const POLICY_TIE_RTOL: f64 = 1e-12;

/// First index within `POLICY_TIE_RTOL` of the maximum, so that values
/// tied up to rounding resolve to the lowest index.
pub fn first_argmax(values: &[f64]) -> usize {
    let best = values[crate::mdp::argmax(values)];
    let floor = best - POLICY_TIE_RTOL * (1.0 + best.abs());
    values.iter().position(|&v| v >= floor).unwrap_or(0)
}

/// `argmax_π min_{r ∈ set} J(π; r, P) - E_{μ_ref}[r]`.
pub fn robust_plan_known(mdp: &TabularMdp, set: &ConfidenceSet, mu_ref: &TrajectoryDist, req: &PlanRequest) -> Result<RobustPlanResult> {
    let policies = collect_policies(mdp, req)?;
    let method = req.method_for(&set.class);
    let members = match &method {
        InnerMethod::Grid { resolution } => Some(set.discretize(*resolution, req.member_cap)?),
        InnerMethod::Lagrangian => None,
    };
    let inner: Vec<InnerMin> = policies
        .par_iter()
        .map(|pi| {
            let c = objective_direction(mdp, pi, mu_ref, req.enumeration_cap)?;
            inner_min_reward(set, &c, &method, members.as_deref(), req)
        })
        .collect::<Result<_>>()?;
    let values: Vec<f64> = inner.iter().map(|m| m.value).collect();
    let best = first_argmax(&values);
    let chosen = inner[best].clone();
    Ok(RobustPlanResult {
        policy: policies[best].clone(),
        policy_index: best,
        value: chosen.value,
        worst_reward: chosen.reward.clone(),
        worst_transitions: None,
        diagnostics: PlanDiagnostics {
            policies_evaluated: policies.len(),
            inner_iterations: inner.iter().map(|m| m.iterations).sum(),
            method: format!("{method:?}"),
            members: members.as_ref().map(Vec::len),
            constraint_gap: chosen.constraint_gap,
            ..Default::default()
        },
        values,
    })
}

/// `argmax_π J(π; r, P)` for a fixed reward table; first policy wins ties.
pub fn greedy_plan(mdp: &TabularMdp, table: &[f64], kind: PolicyKind, cap: usize) -> Result<(Policy, usize, f64)> {
    let policies: Vec<Policy> = enumerate_policies(mdp, kind, cap)?.collect();
    let reward = RewardFunction::Trajectory { table: table.to_vec() };
    let values: Vec<f64> = policies
        .par_iter()
        .map(|p| evaluate_policy(mdp, p, &reward, cap))
        .collect::<Result<_>>()?;
    let best = first_argmax(&values);
    Ok((policies[best].clone(), best, values[best]))
}

/// Coefficients `w` with `J(π; r, P) = Σ w[(s*A+a)*S+s'] P_h(s'|s,a)` when
/// every other step is held fixed.
pub fn step_coefficients(mdp: &TabularMdp, policy: &Policy, table: &[f64], h: usize) -> Vec<f64> {
    let (s_len, a_len) = (mdp.num_states(), mdp.num_actions());
    let mut w = vec![0.0; s_len * a_len * s_len];
    #[allow(clippy::too_many_arguments)]
    fn walk(
        mdp: &TabularMdp,
        policy: &Policy,
        table: &[f64],
        target: usize,
        step: usize,
        prefix: u64,
        s: usize,
        mass: f64,
        slot: Option<usize>,
        w: &mut [f64],
    ) {
        let (s_len, a_len) = (mdp.num_states(), mdp.num_actions());
        for a in 0..a_len {
            let p = mass * policy.action_prob(step, prefix, s, a, s_len);
            if p == 0.0 {
                continue;
            }
            let code = prefix * (s_len * a_len) as u64 + (s * a_len + a) as u64;
            if step + 1 == mdp.horizon() {
                if let Some(k) = slot {
                    w[k] += p * table[code as usize];
                }
                continue;
            }
            for next in 0..s_len {
                if step == target {
                    let k = (s * a_len + a) * s_len + next;
                    walk(mdp, policy, table, target, step + 1, code, next, p, Some(k), w);
                } else {
                    let q = mdp.transition_row(step, s, a)[next];
                    if q > 0.0 {
                        walk(mdp, policy, table, target, step + 1, code, next, p * q, slot, w);
                    }
                }
            }
        }
    }
    for (s, &p) in mdp.initial().iter().enumerate() {
        if p > 0.0 {
            walk(mdp, policy, table, h, 0, 0, s, p, None, &mut w);
        }
    }
    w
}

/// Minimiser of `Σ n_j log p_j - t Σ w_j p_j` over the simplex.
fn penalized_row(counts: &[f64], w: &[f64], t: f64, fallback: &[f64]) -> Vec<f64> {
    let k = counts.len();
    let total: f64 = counts.iter().sum();
    let argmin_among = |pred: &dyn Fn(usize) -> bool| {
        (0..k).filter(|&j| pred(j)).fold(None, |best: Option<usize>, j| match best {
            Some(b) if w[b] <= w[j] => Some(b),
            _ => Some(j),
        })
    };
    if total == 0.0 {
        if t == 0.0 {
            return fallback.to_vec();
        }
        let j = argmin_among(&|_| true).expect("row nonempty");
        let mut p = vec![0.0; k];
        p[j] = 1.0;
        return p;
    }
    if t == 0.0 {
        return counts.iter().map(|n| n / total).collect();
    }
    let w_pos_min = (0..k).filter(|&j| counts[j] > 0.0).map(|j| w[j]).fold(f64::INFINITY, f64::min);
    let g = |lam: f64| -> f64 { (0..k).filter(|&j| counts[j] > 0.0).map(|j| counts[j] / (lam + t * w[j])).sum() };
    let mut lo = -t * w_pos_min;
    let mut hi = total - t * w_pos_min;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut lam = hi;
    let zero_min = argmin_among(&|j| counts[j] == 0.0);
    let mut p = vec![0.0; k];
    if let Some(j0) = zero_min {
        if lam < -t * w[j0] {
            lam = -t * w[j0];
            for j in 0..k {
                if counts[j] > 0.0 {
                    p[j] = counts[j] / (lam + t * w[j]);
                }
            }
            let rest = 1.0 - p.iter().sum::<f64>();
            p[j0] = rest.max(0.0);
            return normalize(p);
        }
    }
    for j in 0..k {
        if counts[j] > 0.0 {
            p[j] = counts[j] / (lam + t * w[j]);
        }
    }
    normalize(p)
}

fn normalize(mut p: Vec<f64>) -> Vec<f64> {
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

/// Penalised rows for one block of rows at multiplier `t`.
fn penalized_table(set: &StepTransitionSet, w: &[f64], t: f64, rows: &[usize], base: &[f64]) -> Vec<f64> {
    let s = set.num_states();
    let mut out = base.to_vec();
    for &r in rows {
        let span = r * s..(r + 1) * s;
        let row = penalized_row(&set.counts[span.clone()], &w[span.clone()], t, &set.mle[span.clone()]);
        out[span].copy_from_slice(&row);
    }
    out
}

/// Minimise `w·P` over one likelihood block (all rows or one row) by
/// bisection on the multiplier.
fn min_block(set: &StepTransitionSet, w: &[f64], rows: &[usize], base: &[f64], req: &PlanRequest) -> Vec<f64> {
    let s = set.num_states();
    let ll = |table: &[f64]| -> f64 {
        rows.iter()
            .map(|&r| transition_loglik(&table[r * s..(r + 1) * s], &set.counts[r * s..(r + 1) * s]))
            .sum()
    };
    let target = ll(&set.mle) - set.zeta;
    let far = penalized_table(set, w, f64::MAX / 1e10, rows, base);
    if ll(&far) >= target {
        return far;
    }
    let mut lo_table = penalized_table(set, w, 0.0, rows, base);
    let (mut t_lo, mut t_hi) = (0.0, 1.0);
    let mut bracketed = false;
    for _ in 0..400 {
        let cand = penalized_table(set, w, t_hi, rows, base);
        if ll(&cand) < target {
            bracketed = true;
            break;
        }
        t_lo = t_hi;
        lo_table = cand;
        t_hi *= 2.0;
    }
    if bracketed {
        for _ in 0..req.max_bisections {
            if ll(&lo_table) - target <= req.constraint_tol || t_hi - t_lo <= 1e-15 * t_hi {
                break;
            }
            let t = 0.5 * (t_lo + t_hi);
            let cand = penalized_table(set, w, t, rows, base);
            if ll(&cand) >= target {
                t_lo = t;
                lo_table = cand;
            } else {
                t_hi = t;
            }
        }
    }
    lo_table
}

/// Minimise `w·P_h` over the step's confidence set.
pub fn min_transition_step(set: &StepTransitionSet, w: &[f64], req: &PlanRequest) -> Result<Vec<f64>> {
    match &set.class {
        TransitionClass::Candidates { .. } => {
            let members = set.discretize(1.0, req.member_cap)?;
            let mut best = 0;
            let mut best_v = f64::INFINITY;
            for (i, m) in members.iter().enumerate() {
                let v = crate::mdp::dot(m, w);
                if v < best_v {
                    best_v = v;
                    best = i;
                }
            }
            Ok(members[best].clone())
        }
        TransitionClass::FullSimplex { num_states, num_actions } => {
            let rows: Vec<usize> = (0..num_states * num_actions).collect();
            Ok(match set.scope {
                TransitionScope::PerStep => min_block(set, w, &rows, &set.mle, req),
                TransitionScope::PerRow => {
                    let mut table = set.mle.clone();
                    for r in rows {
                        table = min_block(set, w, &[r], &table, req);
                    }
                    table
                }
            })
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointMin {
    pub value: f64,
    pub reward: RewardModel,
    pub transitions: Vec<Vec<f64>>,
    pub alternations: usize,
    pub trace: Vec<f64>,
    pub iterations: usize,
}

/// Block-coordinate descent on `min_{r, P} J(π; r, P) - E_{μ_ref}[r]`:
/// reward block, then each step's transition block, until a full sweep
/// stops improving. Blocks are only accepted when they do not increase the
/// objective, so the trace is nonincreasing.
pub fn inner_min_joint(
    mdp: &TabularMdp,
    policy: &Policy,
    reward_set: &ConfidenceSet,
    trans: &TransitionConfidenceSet,
    mu_ref: &TrajectoryDist,
    method: &InnerMethod,
    members: Option<&[RewardModel]>,
    req: &PlanRequest,
) -> Result<JointMin> {
    let mut p_tables = trans.mle_tables();
    let mut current = mdp.with_transitions(p_tables.clone())?;
    let ref_term = |table: &[f64]| mu_ref.expect_table(table);
    let objective = |m: &TabularMdp, table: &[f64]| -> Result<f64> {
        let d = trajectory_distribution(m, policy, req.enumeration_cap)?;
        Ok(d.expect_table(table) - ref_term(table))
    };
    let mut reward = reward_set.mle.clone();
    let mut value = objective(&current, &reward.table)?;
    let mut trace = vec![value];
    let mut alternations = 0;
    let mut iterations = 0;
    for _ in 0..req.max_alternations {
        alternations += 1;
        let start = value;
        let c = objective_direction(&current, policy, mu_ref, req.enumeration_cap)?;
        let r_step = inner_min_reward(reward_set, &c, method, members, req)?;
        iterations += r_step.iterations;
        if r_step.value <= value {
            reward = r_step.reward;
            value = r_step.value;
            trace.push(value);
        }
        for (h, set) in trans.steps.iter().enumerate() {
            let w = step_coefficients(&current, policy, &reward.table, h);
            let cand = min_transition_step(set, &w, req)?;
            let cand_mdp = current.with_step(h, cand.clone())?;
            let v = objective(&cand_mdp, &reward.table)?;
            if v < value {
                value = v;
                p_tables[h] = cand;
                current = cand_mdp;
                trace.push(value);
            }
        }
        if start - value <= req.alternation_tol {
            break;
        }
    }
    Ok(JointMin { value, reward, transitions: p_tables, alternations, trace, iterations })
}

/// Robust planning with unknown transitions; `mdp` supplies the initial
/// distribution and shape, its transitions are replaced by set members.
pub fn robust_plan_unknown(
    mdp: &TabularMdp,
    reward_set: &ConfidenceSet,
    trans: &TransitionConfidenceSet,
    mu_ref: &TrajectoryDist,
    req: &PlanRequest,
) -> Result<RobustPlanResult> {
    if trans.steps.len() + 1 != mdp.horizon() {
        return Err(Error::InvalidParams("one transition set per step is required".into()));
    }
    let policies = collect_policies(mdp, req)?;
    let method = req.method_for(&reward_set.class);
    let members = match &method {
        InnerMethod::Grid { resolution } => Some(reward_set.discretize(*resolution, req.member_cap)?),
        InnerMethod::Lagrangian => None,
    };
    let inner: Vec<JointMin> = policies
        .par_iter()
        .map(|pi| inner_min_joint(mdp, pi, reward_set, trans, mu_ref, &method, members.as_deref(), req))
        .collect::<Result<_>>()?;
    let values: Vec<f64> = inner.iter().map(|m| m.value).collect();
    let best = first_argmax(&values);
    let chosen = inner[best].clone();
    Ok(RobustPlanResult {
        policy: policies[best].clone(),
        policy_index: best,
        value: chosen.value,
        worst_reward: chosen.reward,
        worst_transitions: Some(chosen.transitions),
        diagnostics: PlanDiagnostics {
            policies_evaluated: policies.len(),
            inner_iterations: inner.iter().map(|m| m.iterations).sum(),
            alternations: chosen.alternations,
            method: format!("{method:?}"),
            members: members.as_ref().map(Vec::len),
            constraint_gap: None,
            objective_trace: chosen.trace,
        },
        values,
    })
}

/// Exhaustive joint minimum over finite reward and per-step transition
/// member lists, used to check the alternating solver on tiny instances.
pub fn joint_min_exhaustive(
    mdp: &TabularMdp,
    policy: &Policy,
    rewards: &[RewardModel],
    transitions: &[Vec<Vec<f64>>],
    mu_ref: &TrajectoryDist,
    cap: usize,
) -> Result<f64> {
    let mut best = f64::INFINITY;
    let sizes: Vec<usize> = transitions.iter().map(Vec::len).collect();
    let mut idx = vec![0usize; sizes.len()];
    loop {
        let tables: Vec<Vec<f64>> = idx.iter().zip(transitions).map(|(&i, l)| l[i].clone()).collect();
        let m = mdp.with_transitions(tables)?;
        let c = objective_direction(&m, policy, mu_ref, cap)?;
        for r in rewards {
            best = best.min(table_dot(&c, &r.table));
        }
        let mut pos = sizes.len();
        loop {
            if pos == 0 {
                return Ok(best);
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < sizes[pos] {
                break;
            }
            idx[pos] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classes::TabularGrid;
    use crate::confidence::reward_confidence_with_slack;
    use crate::mdp::TrajectorySpace;
    use crate::preference::{Link, PreferenceDataset, PreferenceRecord};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_state(h: usize) -> TabularMdp {
        TabularMdp::new(h, 1, 2, vec![1.0], vec![vec![1.0; 2]; h - 1], 1.0).unwrap()
    }

    #[test]
    fn objective_vanishes_for_matching_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mdp = TabularMdp::random(2, 2, 2, 1.0, &mut rng);
        let pi = Policy::uniform(&mdp);
        let mu = trajectory_distribution(&mdp, &pi, 100).unwrap();
        let r = RewardFunction::Trajectory { table: (0..16).map(|_| rng.gen()).collect() };
        assert!(pessimistic_objective(&mdp, &pi, &r, &mu, 100).unwrap().abs() < 1e-12);
        let constant = RewardFunction::Trajectory { table: vec![0.4; 16] };
        let other = trajectory_distribution(&mdp, &Policy::constant(&mdp, 1), 100).unwrap();
        assert!(pessimistic_objective(&mdp, &pi, &constant, &other, 100).unwrap().abs() < 1e-12);
    }

    #[test]
    fn step_coefficients_reconstruct_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mdp = TabularMdp::random(3, 2, 2, 1.0, &mut rng);
        let table: Vec<f64> = (0..64).map(|_| rng.gen()).collect();
        let pi = Policy::uniform(&mdp);
        let j = evaluate_policy(&mdp, &pi, &RewardFunction::Trajectory { table: table.clone() }, 1000).unwrap();
        for h in 0..2 {
            let w = step_coefficients(&mdp, &pi, &table, h);
            assert!((crate::mdp::dot(&w, &mdp.transitions()[h]) - j).abs() < 1e-12);
        }
    }

    #[test]
    fn singleton_set_is_greedy() {
        let mdp = one_state(1);
        let space = mdp.space();
        let recs = (0..30).map(|i| PreferenceRecord { tau0: 0, tau1: 1, label: i % 3 != 0 }).collect();
        let ds = PreferenceDataset::new(space, recs).unwrap();
        let class = RewardClass::TabularGrid(TabularGrid::full(space, 0.5, 1.0, 10).unwrap());
        let set = reward_confidence_with_slack(&ds, &class, &Link::Sigmoid, 0.0, &MleOptions::default()).unwrap();
        let mu = TrajectoryDist::point(space, 0);
        let res = robust_plan_known(&mdp, &set, &mu, &PlanRequest::default()).unwrap();
        let (greedy, _, _) = greedy_plan(&mdp, &set.mle.table, PolicyKind::MarkovDet, 100).unwrap();
        assert_eq!(res.policy, greedy);
        let _ = TrajectorySpace::new(1, 1, 2);
    }

    #[test]
    fn penalized_row_limits() {
        let p = penalized_row(&[3.0, 1.0, 0.0], &[1.0, 0.0, 2.0], 0.0, &[1.0 / 3.0; 3]);
        assert_eq!(p, vec![0.75, 0.25, 0.0]);
        let p = penalized_row(&[0.0, 0.0], &[1.0, 0.0], 1.0, &[0.5, 0.5]);
        assert_eq!(p, vec![0.0, 1.0]);
        let p = penalized_row(&[2.0, 2.0, 0.0], &[1.0, 1.0, -5.0], 3.0, &[1.0 / 3.0; 3]);
        assert!(p[2] > 0.0 && (p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
