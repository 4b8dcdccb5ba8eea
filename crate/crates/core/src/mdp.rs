//! Episodic tabular MDPs: trajectories, policies, rewards, exact evaluation
//! and policy enumeration.
//!
//! Steps are zero-based throughout: `h = 0` is the first decision. A
//! trajectory of horizon `H` is encoded as a base-`S*A` integer whose most
//! significant digit is the first `(state, action)` pair.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{too_large, Error, Result};

/// Default cap on enumerated trajectories and policies.
pub const DEFAULT_ENUMERATION_CAP: usize = 1_000_000;
/// Tolerance for representation invariants (simplex rows, rewards).
pub const SIMPLEX_TOL: f64 = 1e-12;
/// Tolerance for mixture normalisation.
pub const MIXTURE_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrajectorySpace {
    pub horizon: usize,
    pub num_states: usize,
    pub num_actions: usize,
}

impl TrajectorySpace {
    pub fn new(horizon: usize, num_states: usize, num_actions: usize) -> Self {
        Self { horizon, num_states, num_actions }
    }

    pub fn pairs(&self) -> usize {
        self.num_states * self.num_actions
    }

    /// `(S*A)^H` as a float, safe for any size.
    pub fn count(&self) -> f64 {
        (self.pairs() as f64).powi(self.horizon as i32)
    }

    /// Number of trajectories, or `EnumerationTooLarge` above `cap`.
    pub fn size(&self, cap: usize) -> Result<usize> {
        match (self.pairs() as u64).checked_pow(self.horizon as u32) {
            Some(n) if n <= cap as u64 => Ok(n as usize),
            _ => Err(too_large("trajectories", self.count(), cap)),
        }
    }

    pub fn encode(&self, steps: &[(usize, usize)]) -> usize {
        steps
            .iter()
            .fold(0, |acc, &(s, a)| acc * self.pairs() + s * self.num_actions + a)
    }

    pub fn decode(&self, idx: usize) -> Trajectory {
        Trajectory {
            steps: (0..self.horizon).map(|h| self.step(idx, h)).collect(),
        }
    }

    /// The `(state, action)` pair at step `h` of trajectory `idx`.
    pub fn step(&self, idx: usize, h: usize) -> (usize, usize) {
        let shift = self.pairs().pow((self.horizon - 1 - h) as u32);
        let digit = (idx / shift) % self.pairs();
        (digit / self.num_actions, digit % self.num_actions)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<(usize, usize)>,
}

impl Trajectory {
    pub fn new(steps: Vec<(usize, usize)>) -> Self {
        Self { steps }
    }

    pub fn validate(&self, space: &TrajectorySpace) -> Result<()> {
        if self.steps.len() != space.horizon {
            return Err(Error::InvalidParams(format!(
                "trajectory has {} steps, horizon is {}",
                self.steps.len(),
                space.horizon
            )));
        }
        for &(s, a) in &self.steps {
            if s >= space.num_states || a >= space.num_actions {
                return Err(Error::InvalidParams(format!("pair ({s}, {a}) out of range")));
            }
        }
        Ok(())
    }
}

fn check_simplex(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(Error::InvalidMdp(format!("{what} has a negative or non-finite entry")));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidMdp(format!("{what} sums to {total}")));
    }
    Ok(())
}

/// Finite-horizon MDP. Transitions are stored per step as flat tables
/// indexed `[(s * A + a) * S + s']`; there are `H - 1` of them.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularMdp {
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    initial: Vec<f64>,
    transitions: Vec<Vec<f64>>,
    r_max: f64,
}

impl TabularMdp {
    pub fn new(
        horizon: usize,
        num_states: usize,
        num_actions: usize,
        initial: Vec<f64>,
        transitions: Vec<Vec<f64>>,
        r_max: f64,
    ) -> Result<Self> {
        if horizon == 0 || num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidMdp("H, S and A must be positive".into()));
        }
        if !(r_max >= 0.0) || !r_max.is_finite() {
            return Err(Error::InvalidMdp(format!("r_max must be finite and nonnegative, got {r_max}")));
        }
        if initial.len() != num_states {
            return Err(Error::InvalidMdp("initial distribution has wrong length".into()));
        }
        check_simplex(&initial, "initial distribution")?;
        if transitions.len() != horizon - 1 {
            return Err(Error::InvalidMdp(format!(
                "expected {} transition tables, got {}",
                horizon - 1,
                transitions.len()
            )));
        }
        for (h, table) in transitions.iter().enumerate() {
            if table.len() != num_states * num_actions * num_states {
                return Err(Error::InvalidMdp(format!("transition table {h} has wrong size")));
            }
            for (row_idx, row) in table.chunks(num_states).enumerate() {
                check_simplex(row, &format!("transition row (h={h}, sa={row_idx})"))?;
            }
        }
        Ok(Self { horizon, num_states, num_actions, initial, transitions, r_max })
    }

    /// Transitions that ignore the action and follow `chain[h][s * S + s']`.
    pub fn from_chain(
        horizon: usize,
        num_actions: usize,
        initial: Vec<f64>,
        chain: &[Vec<f64>],
        r_max: f64,
    ) -> Result<Self> {
        let s_count = initial.len();
        let transitions = chain
            .iter()
            .map(|c| {
                let mut t = Vec::with_capacity(s_count * num_actions * s_count);
                for s in 0..s_count {
                    for _ in 0..num_actions {
                        t.extend_from_slice(&c[s * s_count..(s + 1) * s_count]);
                    }
                }
                t
            })
            .collect();
        Self::new(horizon, s_count, num_actions, initial, transitions, r_max)
    }

    /// Random instance with strictly positive initial and transition rows.
    pub fn random<R: Rng>(horizon: usize, num_states: usize, num_actions: usize, r_max: f64, rng: &mut R) -> Self {
        let mut simplex = |n: usize| -> Vec<f64> {
            let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
            let total: f64 = w.iter().sum();
            let mut p: Vec<f64> = w.iter().map(|x| x / total).collect();
            let head: f64 = p[..n - 1].iter().sum();
            p[n - 1] = 1.0 - head;
            p
        };
        let initial = simplex(num_states);
        let transitions = (1..horizon)
            .map(|_| (0..num_states * num_actions).flat_map(|_| simplex(num_states)).collect())
            .collect();
        Self::new(horizon, num_states, num_actions, initial, transitions, r_max)
            .expect("random rows are valid simplices")
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn num_states(&self) -> usize {
        self.num_states
    }
    pub fn num_actions(&self) -> usize {
        self.num_actions
    }
    pub fn r_max(&self) -> f64 {
        self.r_max
    }
    pub fn initial(&self) -> &[f64] {
        &self.initial
    }
    pub fn transitions(&self) -> &[Vec<f64>] {
        &self.transitions
    }
    pub fn space(&self) -> TrajectorySpace {
        TrajectorySpace::new(self.horizon, self.num_states, self.num_actions)
    }

    /// Next-state distribution from `(s, a)` at step `h` (`h < H - 1`).
    pub fn transition_row(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.transitions[h][start..start + self.num_states]
    }

    /// Copy with step `h` transitions replaced.
    pub fn with_step(&self, h: usize, table: Vec<f64>) -> Result<Self> {
        let mut transitions = self.transitions.clone();
        transitions[h] = table;
        self.with_transitions(transitions)
    }

    pub fn with_transitions(&self, transitions: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(self.horizon, self.num_states, self.num_actions, self.initial.clone(), transitions, self.r_max)
    }

    pub fn with_r_max(&self, r_max: f64) -> Result<Self> {
        Self::new(self.horizon, self.num_states, self.num_actions, self.initial.clone(), self.transitions.clone(), r_max)
    }

    /// Probability of the state sequence of trajectory `idx` ignoring actions.
    pub fn dynamics_prob(&self, idx: usize) -> f64 {
        let space = self.space();
        let mut p = self.initial[space.step(idx, 0).0];
        for h in 0..self.horizon - 1 {
            let (s, a) = space.step(idx, h);
            let (next, _) = space.step(idx, h + 1);
            p *= self.transition_row(h, s, a)[next];
            if p == 0.0 {
                break;
            }
        }
        p
    }
}

/// Kind of deterministic policy class to enumerate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    #[default]
    MarkovDet,
    HistoryDet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    /// `actions[h][s]`.
    MarkovDeterministic { actions: Vec<Vec<usize>> },
    /// `probs[h][s][a]`.
    MarkovStochastic { probs: Vec<Vec<Vec<f64>>> },
    /// `table[h]` maps a history key to an action. The key is
    /// `prefix * S + s` where `prefix` encodes the earlier pairs the same
    /// way trajectories are encoded. Histories without an entry are
    /// unreachable and fall back to action 0.
    HistoryDeterministic { table: Vec<BTreeMap<u64, usize>> },
    /// Explicit law over trajectories.
    TrajectoryMixture { mixture: TrajectoryDist },
}

impl Policy {
    pub fn uniform(mdp: &TabularMdp) -> Self {
        let a = mdp.num_actions();
        Policy::MarkovStochastic {
            probs: vec![vec![vec![1.0 / a as f64; a]; mdp.num_states()]; mdp.horizon()],
        }
    }

    pub fn constant(mdp: &TabularMdp, action: usize) -> Self {
        Policy::MarkovDeterministic { actions: vec![vec![action; mdp.num_states()]; mdp.horizon()] }
    }

    pub fn is_markov(&self) -> bool {
        matches!(self, Policy::MarkovDeterministic { .. } | Policy::MarkovStochastic { .. })
    }

    /// `π_h(a | history)`; `prefix` is the encoded earlier pairs.
    pub fn action_prob(&self, h: usize, prefix: u64, s: usize, a: usize, num_states: usize) -> f64 {
        match self {
            Policy::MarkovDeterministic { actions } => (actions[h][s] == a) as u8 as f64,
            Policy::MarkovStochastic { probs } => probs[h][s][a],
            Policy::HistoryDeterministic { table } => {
                let key = prefix * num_states as u64 + s as u64;
                (table[h].get(&key).copied().unwrap_or(0) == a) as u8 as f64
            }
            Policy::TrajectoryMixture { .. } => {
                panic!("action_prob is undefined for trajectory mixtures")
            }
        }
    }

    pub fn validate(&self, mdp: &TabularMdp) -> Result<()> {
        let (h_len, s_len, a_len) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
        let bad = |m: &str| Err(Error::InvalidPolicy(m.to_string()));
        match self {
            Policy::MarkovDeterministic { actions } => {
                if actions.len() != h_len || actions.iter().any(|r| r.len() != s_len || r.iter().any(|&a| a >= a_len)) {
                    return bad("deterministic table has wrong shape or action out of range");
                }
            }
            Policy::MarkovStochastic { probs } => {
                if probs.len() != h_len || probs.iter().any(|r| r.len() != s_len) {
                    return bad("stochastic table has wrong shape");
                }
                for row in probs.iter().flatten() {
                    if row.len() != a_len {
                        return bad("stochastic row has wrong length");
                    }
                    check_simplex(row, "policy row").map_err(|e| Error::InvalidPolicy(e.to_string()))?;
                }
            }
            Policy::HistoryDeterministic { table } => {
                if table.len() != h_len || table.iter().flat_map(|m| m.values()).any(|&a| a >= a_len) {
                    return bad("history table has wrong length or action out of range");
                }
            }
            Policy::TrajectoryMixture { mixture } => mixture.check_consistent(mdp)?,
        }
        Ok(())
    }
}

/// Sparse law over trajectories, sorted by index, strictly positive entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDist {
    pub space: TrajectorySpace,
    entries: Vec<(usize, f64)>,
}

impl TrajectoryDist {
    pub fn new(space: TrajectorySpace, entries: Vec<(usize, f64)>) -> Result<Self> {
        let mut merged: BTreeMap<usize, f64> = BTreeMap::new();
        let limit = space.count();
        for (idx, p) in entries {
            if !(p >= 0.0) || !p.is_finite() {
                return Err(Error::InvalidPolicy(format!("mixture weight {p} is invalid")));
            }
            if idx as f64 >= limit {
                return Err(Error::InvalidPolicy(format!("trajectory index {idx} out of range")));
            }
            *merged.entry(idx).or_insert(0.0) += p;
        }
        let entries: Vec<(usize, f64)> = merged.into_iter().filter(|&(_, p)| p > 0.0).collect();
        let total: f64 = entries.iter().map(|e| e.1).sum();
        if (total - 1.0).abs() > MIXTURE_TOL {
            return Err(Error::InvalidPolicy(format!("mixture sums to {total}")));
        }
        Ok(Self { space, entries })
    }

    pub fn point(space: TrajectorySpace, idx: usize) -> Self {
        Self { space, entries: vec![(idx, 1.0)] }
    }

    pub fn uniform(space: TrajectorySpace, indices: &[usize]) -> Result<Self> {
        let w = 1.0 / indices.len() as f64;
        Self::new(space, indices.iter().map(|&i| (i, w)).collect())
    }

    /// Empirical law of a sample of trajectory indices.
    pub fn empirical(space: TrajectorySpace, sample: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        let mut n = 0usize;
        for idx in sample {
            *counts.entry(idx).or_insert(0) += 1;
            n += 1;
        }
        if n == 0 {
            return Err(Error::InvalidDataset("empty sample".into()));
        }
        Self::new(space, counts.into_iter().map(|(i, c)| (i, c as f64 / n as f64)).collect())
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn prob(&self, idx: usize) -> f64 {
        self.entries
            .binary_search_by_key(&idx, |e| e.0)
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }

    pub fn expect(&self, f: impl Fn(usize) -> f64) -> f64 {
        self.entries.iter().map(|&(i, p)| p * f(i)).sum()
    }

    pub fn expect_table(&self, table: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, p)| p * table[i]).sum()
    }

    /// Dense vector over all trajectories.
    pub fn to_dense(&self, len: usize) -> Vec<f64> {
        let mut d = vec![0.0; len];
        for &(i, p) in &self.entries {
            d[i] = p;
        }
        d
    }

    /// Step-`h` marginal indexed `[s * A + a]`.
    pub fn marginal(&self, h: usize) -> Vec<f64> {
        let mut m = vec![0.0; self.space.pairs()];
        for &(i, p) in &self.entries {
            let (s, a) = self.space.step(i, h);
            m[s * self.space.num_actions + a] += p;
        }
        m
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        self.sampler().sample(rng)
    }

    pub fn sampler(&self) -> MixtureSampler<'_> {
        let weights = WeightedIndex::new(self.entries.iter().map(|e| e.1)).expect("mixture has positive mass");
        MixtureSampler { dist: self, weights }
    }

    /// Every supported trajectory must have positive dynamics probability.
    pub fn check_consistent(&self, mdp: &TabularMdp) -> Result<()> {
        if self.space != mdp.space() {
            return Err(Error::InvalidPolicy("mixture space differs from the MDP".into()));
        }
        for &(i, _) in &self.entries {
            if mdp.dynamics_prob(i) <= 0.0 {
                return Err(Error::InvalidPolicy(format!(
                    "trajectory {i} is not dynamically consistent"
                )));
            }
        }
        Ok(())
    }
}

pub struct MixtureSampler<'a> {
    dist: &'a TrajectoryDist,
    weights: WeightedIndex<f64>,
}

impl MixtureSampler<'_> {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        self.dist.entries[self.weights.sample(rng)].0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardFunction {
    /// Dense table over all trajectory indices.
    Trajectory { table: Vec<f64> },
    /// `tables[h][s * A + a]`; the trajectory reward is the sum over steps.
    StateAction { tables: Vec<Vec<f64>> },
}

impl RewardFunction {
    pub fn value(&self, space: &TrajectorySpace, idx: usize) -> f64 {
        match self {
            RewardFunction::Trajectory { table } => table[idx],
            RewardFunction::StateAction { tables } => (0..space.horizon)
                .map(|h| {
                    let (s, a) = space.step(idx, h);
                    tables[h][s * space.num_actions + a]
                })
                .sum(),
        }
    }

    /// Dense trajectory table.
    pub fn to_table(&self, space: &TrajectorySpace, cap: usize) -> Result<Vec<f64>> {
        match self {
            RewardFunction::Trajectory { table } => Ok(table.clone()),
            RewardFunction::StateAction { .. } => {
                let n = space.size(cap)?;
                Ok((0..n).map(|i| self.value(space, i)).collect())
            }
        }
    }

    pub fn validate(&self, mdp: &TabularMdp) -> Result<()> {
        let r_max = mdp.r_max();
        let space = mdp.space();
        match self {
            RewardFunction::Trajectory { table } => {
                if table.len() as f64 != space.count() {
                    return Err(Error::InvalidReward("trajectory table has wrong length".into()));
                }
                if let Some(v) = table.iter().find(|&&v| !(v >= -SIMPLEX_TOL && v <= r_max + SIMPLEX_TOL)) {
                    return Err(Error::InvalidReward(format!("value {v} outside [0, {r_max}]")));
                }
            }
            RewardFunction::StateAction { tables } => {
                if tables.len() != space.horizon || tables.iter().any(|t| t.len() != space.pairs()) {
                    return Err(Error::InvalidReward("state-action tables have wrong shape".into()));
                }
                let cap = r_max / space.horizon as f64 + SIMPLEX_TOL;
                if let Some(v) = tables.iter().flatten().find(|&&v| !(v >= -SIMPLEX_TOL && v <= cap)) {
                    return Err(Error::InvalidReward(format!("per-step value {v} outside [0, r_max/H]")));
                }
            }
        }
        Ok(())
    }

    fn state_action(&self) -> Result<&[Vec<f64>]> {
        match self {
            RewardFunction::StateAction { tables } => Ok(tables),
            RewardFunction::Trajectory { .. } => Err(Error::RewardKindMismatch(
                "a state-action reward is required".into(),
            )),
        }
    }
}

/// Law over trajectories induced by `policy`; mixtures are returned as is.
pub fn trajectory_distribution(mdp: &TabularMdp, policy: &Policy, cap: usize) -> Result<TrajectoryDist> {
    if let Policy::TrajectoryMixture { mixture } = policy {
        if mixture.space != mdp.space() {
            return Err(Error::InvalidPolicy("mixture space differs from the MDP".into()));
        }
        return Ok(mixture.clone());
    }
    let space = mdp.space();
    space.size(cap)?;
    let mut entries = Vec::new();
    // Depth-first in digit order, so entries come out sorted by index.
    fn walk(
        mdp: &TabularMdp,
        policy: &Policy,
        h: usize,
        prefix: u64,
        s: usize,
        mass: f64,
        out: &mut Vec<(usize, f64)>,
    ) {
        let (s_len, a_len) = (mdp.num_states(), mdp.num_actions());
        for a in 0..a_len {
            let p = mass * policy.action_prob(h, prefix, s, a, s_len);
            if p == 0.0 {
                continue;
            }
            let code = prefix * (s_len * a_len) as u64 + (s * a_len + a) as u64;
            if h + 1 == mdp.horizon() {
                out.push((code as usize, p));
            } else {
                for (next, &q) in mdp.transition_row(h, s, a).iter().enumerate() {
                    if q > 0.0 {
                        walk(mdp, policy, h + 1, code, next, p * q, out);
                    }
                }
            }
        }
    }
    for (s, &p) in mdp.initial().iter().enumerate() {
        if p > 0.0 {
            walk(mdp, policy, 0, 0, s, p, &mut entries);
        }
    }
    let total: f64 = entries.iter().map(|e| e.1).sum();
    if (total - 1.0).abs() > MIXTURE_TOL {
        return Err(Error::InvalidPolicy(format!("policy law sums to {total}")));
    }
    Ok(TrajectoryDist { space, entries })
}

/// State distribution at each step under a Markov policy, `[h][s]`.
fn state_marginals(mdp: &TabularMdp, policy: &Policy) -> Vec<Vec<f64>> {
    let (s_len, a_len) = (mdp.num_states(), mdp.num_actions());
    let mut out = vec![mdp.initial().to_vec()];
    for h in 0..mdp.horizon() - 1 {
        let cur = &out[h];
        let mut next = vec![0.0; s_len];
        for s in 0..s_len {
            if cur[s] == 0.0 {
                continue;
            }
            for a in 0..a_len {
                let w = cur[s] * policy.action_prob(h, 0, s, a, s_len);
                if w == 0.0 {
                    continue;
                }
                for (n, &q) in mdp.transition_row(h, s, a).iter().enumerate() {
                    next[n] += w * q;
                }
            }
        }
        out.push(next);
    }
    out
}

/// `d_h(s, a)` indexed `[s * A + a]`.
pub fn visitation(mdp: &TabularMdp, policy: &Policy, h: usize, cap: usize) -> Result<Vec<f64>> {
    if h >= mdp.horizon() {
        return Err(Error::InvalidParams(format!("step {h} beyond horizon")));
    }
    if policy.is_markov() {
        let states = state_marginals(mdp, policy);
        let (s_len, a_len) = (mdp.num_states(), mdp.num_actions());
        let mut d = vec![0.0; s_len * a_len];
        for s in 0..s_len {
            for a in 0..a_len {
                d[s * a_len + a] = states[h][s] * policy.action_prob(h, 0, s, a, s_len);
            }
        }
        Ok(d)
    } else {
        Ok(trajectory_distribution(mdp, policy, cap)?.marginal(h))
    }
}

/// `J(π; r, P)`. State-action rewards with Markov policies use backward
/// recursion and need no enumeration.
pub fn evaluate_policy(mdp: &TabularMdp, policy: &Policy, reward: &RewardFunction, cap: usize) -> Result<f64> {
    match reward {
        RewardFunction::StateAction { tables } if policy.is_markov() => {
            let (s_len, a_len) = (mdp.num_states(), mdp.num_actions());
            let mut v = vec![0.0; s_len];
            for h in (0..mdp.horizon()).rev() {
                let mut nv = vec![0.0; s_len];
                for s in 0..s_len {
                    for a in 0..a_len {
                        let p = policy.action_prob(h, 0, s, a, s_len);
                        if p == 0.0 {
                            continue;
                        }
                        let mut q = tables[h][s * a_len + a];
                        if h + 1 < mdp.horizon() {
                            q += dot(mdp.transition_row(h, s, a), &v);
                        }
                        nv[s] += p * q;
                    }
                }
                v = nv;
            }
            Ok(dot(mdp.initial(), &v))
        }
        RewardFunction::Trajectory { table } => {
            let dist = trajectory_distribution(mdp, policy, cap)?;
            if table.len() as f64 != mdp.space().count() {
                return Err(Error::InvalidReward("trajectory table has wrong length".into()));
            }
            Ok(dist.expect_table(table))
        }
        RewardFunction::StateAction { .. } => {
            let dist = trajectory_distribution(mdp, policy, cap)?;
            let space = mdp.space();
            Ok(dist.expect(|i| reward.value(&space, i)))
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn draw<R: Rng>(probs: impl Iterator<Item = f64>, rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

pub fn sample_trajectory<R: Rng>(mdp: &TabularMdp, policy: &Policy, rng: &mut R) -> Trajectory {
    let space = mdp.space();
    if let Policy::TrajectoryMixture { mixture } = policy {
        return space.decode(mixture.sample(rng));
    }
    let (s_len, a_len) = (mdp.num_states(), mdp.num_actions());
    let mut steps = Vec::with_capacity(mdp.horizon());
    let mut s = draw(mdp.initial().iter().copied(), rng);
    let mut prefix = 0u64;
    for h in 0..mdp.horizon() {
        let a = draw((0..a_len).map(|a| policy.action_prob(h, prefix, s, a, s_len)), rng);
        steps.push((s, a));
        prefix = prefix * (s_len * a_len) as u64 + (s * a_len + a) as u64;
        if h + 1 < mdp.horizon() {
            s = draw(mdp.transition_row(h, s, a).iter().copied(), rng);
        }
    }
    Trajectory { steps }
}

/// Optimal `Q*`, `V*` and `A* = Q* - V*`, indexed `[h][s * A + a]` / `[h][s]`.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimalValues {
    pub q: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub advantage: Vec<Vec<f64>>,
    pub num_actions: usize,
}

impl OptimalValues {
    /// Greedy action, lowest index on ties.
    pub fn optimal_action(&self, h: usize, s: usize) -> usize {
        argmax(&self.q[h][s * self.num_actions..(s + 1) * self.num_actions])
    }

    pub fn greedy_policy(&self) -> Policy {
        let s_len = self.v[0].len();
        Policy::MarkovDeterministic {
            actions: (0..self.q.len())
                .map(|h| (0..s_len).map(|s| self.optimal_action(h, s)).collect())
                .collect(),
        }
    }
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn optimal_values(mdp: &TabularMdp, reward: &RewardFunction) -> Result<OptimalValues> {
    let tables = reward.state_action()?;
    let (s_len, a_len, h_len) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    let mut q = vec![vec![0.0; s_len * a_len]; h_len];
    let mut v = vec![vec![0.0; s_len]; h_len];
    for h in (0..h_len).rev() {
        for s in 0..s_len {
            for a in 0..a_len {
                let mut val = tables[h][s * a_len + a];
                if h + 1 < h_len {
                    val += dot(mdp.transition_row(h, s, a), &v[h + 1]);
                }
                q[h][s * a_len + a] = val;
            }
            let row = &q[h][s * a_len..(s + 1) * a_len];
            v[h][s] = row[argmax(row)];
        }
    }
    let advantage = (0..h_len)
        .map(|h| (0..s_len * a_len).map(|i| q[h][i] - v[h][i / a_len]).collect())
        .collect();
    Ok(OptimalValues { q, v, advantage, num_actions: a_len })
}

/// `Q^π_h(s, a)` for a Markov policy and state-action reward.
pub fn policy_q_values(mdp: &TabularMdp, reward: &RewardFunction, policy: &Policy) -> Result<Vec<Vec<f64>>> {
    let tables = reward.state_action()?;
    if !policy.is_markov() {
        return Err(Error::InvalidPolicy("Q^π needs a Markov policy".into()));
    }
    let (s_len, a_len, h_len) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    let mut q = vec![vec![0.0; s_len * a_len]; h_len];
    let mut v_next = vec![0.0; s_len];
    for h in (0..h_len).rev() {
        let mut v = vec![0.0; s_len];
        for s in 0..s_len {
            for a in 0..a_len {
                let mut val = tables[h][s * a_len + a];
                if h + 1 < h_len {
                    val += dot(mdp.transition_row(h, s, a), &v_next);
                }
                q[h][s * a_len + a] = val;
                v[s] += policy.action_prob(h, 0, s, a, s_len) * val;
            }
        }
        v_next = v;
    }
    Ok(q)
}

/// History keys reachable at each step under some policy.
pub fn reachable_histories(mdp: &TabularMdp) -> Vec<Vec<u64>> {
    let (s_len, a_len) = (mdp.num_states() as u64, mdp.num_actions() as u64);
    let mut out: Vec<Vec<u64>> = vec![(0..s_len).filter(|&s| mdp.initial()[s as usize] > 0.0).collect()];
    for h in 0..mdp.horizon() - 1 {
        let mut next = Vec::new();
        for &key in &out[h] {
            let (prefix, s) = (key / s_len, key % s_len);
            for a in 0..a_len {
                let code = prefix * s_len * a_len + s * a_len + a;
                for (n, &q) in mdp.transition_row(h, s as usize, a as usize).iter().enumerate() {
                    if q > 0.0 {
                        next.push(code * s_len + n as u64);
                    }
                }
            }
        }
        out.push(next);
    }
    out
}

/// Exhaustive, duplicate-free iterator over deterministic policies.
/// Policies come in lexicographic order of their decision slots, so the
/// first one plays action 0 everywhere.
pub struct PolicyIter {
    kind: PolicyKind,
    shape: (usize, usize),
    slots: Vec<(usize, u64)>,
    digits: Vec<usize>,
    num_actions: usize,
    remaining: usize,
}

impl PolicyIter {
    pub fn total(&self) -> usize {
        self.remaining
    }
}

pub fn policy_count(mdp: &TabularMdp, kind: PolicyKind) -> f64 {
    let a = mdp.num_actions() as f64;
    match kind {
        PolicyKind::MarkovDet => a.powi((mdp.num_states() * mdp.horizon()) as i32),
        PolicyKind::HistoryDet => {
            let slots: usize = reachable_histories(mdp).iter().map(Vec::len).sum();
            a.powi(slots as i32)
        }
    }
}

pub fn enumerate_policies(mdp: &TabularMdp, kind: PolicyKind, cap: usize) -> Result<PolicyIter> {
    let count = policy_count(mdp, kind);
    if count > cap as f64 {
        return Err(too_large("policies", count, cap));
    }
    let slots: Vec<(usize, u64)> = match kind {
        PolicyKind::MarkovDet => (0..mdp.horizon())
            .flat_map(|h| (0..mdp.num_states() as u64).map(move |s| (h, s)))
            .collect(),
        PolicyKind::HistoryDet => reachable_histories(mdp)
            .into_iter()
            .enumerate()
            .flat_map(|(h, keys)| keys.into_iter().map(move |k| (h, k)))
            .collect(),
    };
    Ok(PolicyIter {
        kind,
        shape: (mdp.horizon(), mdp.num_states()),
        digits: vec![0; slots.len()],
        slots,
        num_actions: mdp.num_actions(),
        remaining: count.round() as usize,
    })
}

impl Iterator for PolicyIter {
    type Item = Policy;

    fn next(&mut self) -> Option<Policy> {
        if self.remaining == 0 {
            return None;
        }
        let policy = match self.kind {
            PolicyKind::MarkovDet => {
                let mut actions = vec![vec![0; self.shape.1]; self.shape.0];
                for (&(h, s), &a) in self.slots.iter().zip(&self.digits) {
                    actions[h][s as usize] = a;
                }
                Policy::MarkovDeterministic { actions }
            }
            PolicyKind::HistoryDet => {
                let mut table = vec![BTreeMap::new(); self.shape.0];
                for (&(h, key), &a) in self.slots.iter().zip(&self.digits) {
                    table[h].insert(key, a);
                }
                Policy::HistoryDeterministic { table }
            }
        };
        self.remaining -= 1;
        for d in self.digits.iter_mut().rev() {
            *d += 1;
            if *d < self.num_actions {
                break;
            }
            *d = 0;
        }
        Some(policy)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining, Some(self.remaining))
    }
}

impl ExactSizeIterator for PolicyIter {}

/// On-disk instance: `P[h][s][a][s']`, trajectory rewards keyed by index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    #[serde(rename = "H")]
    pub horizon: usize,
    #[serde(rename = "S")]
    pub num_states: usize,
    #[serde(rename = "A")]
    pub num_actions: usize,
    pub rho: Vec<f64>,
    #[serde(rename = "P")]
    pub transitions: Vec<Vec<Vec<Vec<f64>>>>,
    pub r_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<RewardSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardSpec {
    /// Keys are decimal trajectory indices; missing indices are zero.
    Trajectory { table: BTreeMap<String, f64> },
    /// `table[h][s][a]`.
    StateAction { table: Vec<Vec<Vec<f64>>> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub mdp: TabularMdp,
    pub reward: Option<RewardFunction>,
}

impl Instance {
    pub fn to_file(&self) -> InstanceFile {
        let m = &self.mdp;
        let (s_len, a_len) = (m.num_states(), m.num_actions());
        let transitions = (0..m.horizon() - 1)
            .map(|h| {
                (0..s_len)
                    .map(|s| (0..a_len).map(|a| m.transition_row(h, s, a).to_vec()).collect())
                    .collect()
            })
            .collect();
        let reward = self.reward.as_ref().map(|r| match r {
            RewardFunction::Trajectory { table } => RewardSpec::Trajectory {
                table: table.iter().enumerate().filter(|e| *e.1 != 0.0).map(|(i, &v)| (i.to_string(), v)).collect(),
            },
            RewardFunction::StateAction { tables } => RewardSpec::StateAction {
                table: tables.iter().map(|t| t.chunks(a_len).map(<[f64]>::to_vec).collect()).collect(),
            },
        });
        InstanceFile {
            horizon: m.horizon(),
            num_states: s_len,
            num_actions: a_len,
            rho: m.initial().to_vec(),
            transitions,
            r_max: m.r_max(),
            reward,
        }
    }

    pub fn from_file(file: InstanceFile, cap: usize) -> Result<Self> {
        let (s_len, a_len) = (file.num_states, file.num_actions);
        let mut tables = Vec::with_capacity(file.transitions.len());
        for step in &file.transitions {
            if step.len() != s_len || step.iter().any(|r| r.len() != a_len) {
                return Err(Error::InvalidMdp("P has wrong nesting".into()));
            }
            tables.push(step.iter().flatten().flatten().copied().collect());
        }
        let mdp = TabularMdp::new(file.horizon, s_len, a_len, file.rho, tables, file.r_max)?;
        let reward = match file.reward {
            None => None,
            Some(RewardSpec::Trajectory { table }) => {
                let n = mdp.space().size(cap)?;
                let mut dense = vec![0.0; n];
                for (key, v) in table {
                    let i: usize = key
                        .parse()
                        .map_err(|_| Error::InvalidReward(format!("bad trajectory index {key:?}")))?;
                    if i >= n {
                        return Err(Error::InvalidReward(format!("trajectory index {i} out of range")));
                    }
                    dense[i] = v;
                }
                Some(RewardFunction::Trajectory { table: dense })
            }
            Some(RewardSpec::StateAction { table }) => Some(RewardFunction::StateAction {
                tables: table.into_iter().map(|t| t.into_iter().flatten().collect()).collect(),
            }),
        };
        if let Some(r) = &reward {
            r.validate(&mdp)?;
        }
        Ok(Self { mdp, reward })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("instance serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(text)?, DEFAULT_ENUMERATION_CAP)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_state(h: usize, a: usize) -> TabularMdp {
        TabularMdp::new(h, 1, a, vec![1.0], vec![vec![1.0; a]; h - 1], 1.0).unwrap()
    }

    #[test]
    fn encoding_round_trips() {
        let space = TrajectorySpace::new(3, 2, 3);
        for idx in 0..space.size(1000).unwrap() {
            assert_eq!(space.encode(&space.decode(idx).steps), idx);
        }
        assert_eq!(space.encode(&[(1, 0), (0, 0), (0, 0)]), 3 * 36);
    }

    #[test]
    fn uniform_policy_one_step() {
        let mdp = one_state(1, 2);
        let d = trajectory_distribution(&mdp, &Policy::uniform(&mdp), 100).unwrap();
        assert_eq!(d.entries(), &[(0, 0.5), (1, 0.5)]);
    }

    #[test]
    fn deterministic_policy_single_trajectory() {
        let mdp = one_state(3, 2);
        let d = trajectory_distribution(&mdp, &Policy::constant(&mdp, 1), 100).unwrap();
        assert_eq!(d.entries().len(), 1);
        assert_eq!(d.entries()[0].1, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = sample_trajectory(&mdp, &Policy::constant(&mdp, 1), &mut rng);
        assert_eq!(t.steps, vec![(0, 1); 3]);
    }

    #[test]
    fn one_step_expectation() {
        let mdp = one_state(1, 2);
        let r = RewardFunction::StateAction { tables: vec![vec![0.9, 0.1]] };
        let pi = Policy::MarkovStochastic { probs: vec![vec![vec![0.3, 0.7]]] };
        assert!((evaluate_policy(&mdp, &pi, &r, 100).unwrap() - 0.34).abs() < 1e-15);
        let zero = RewardFunction::Trajectory { table: vec![0.0; 2] };
        assert_eq!(evaluate_policy(&mdp, &pi, &zero, 100).unwrap(), 0.0);
    }

    #[test]
    fn first_step_visitation_is_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mdp = TabularMdp::random(3, 2, 2, 1.0, &mut rng);
        let pi = Policy::MarkovStochastic { probs: vec![vec![vec![0.2, 0.8], vec![0.6, 0.4]]; 3] };
        let d = visitation(&mdp, &pi, 0, 1000).unwrap();
        assert_eq!(d[1], mdp.initial()[0] * 0.8);
        assert_eq!(d[2], mdp.initial()[1] * 0.6);
    }

    #[test]
    fn policy_counts() {
        assert_eq!(enumerate_policies(&one_state(2, 2), PolicyKind::MarkovDet, 100).unwrap().count(), 4);
        let two = TabularMdp::new(2, 2, 2, vec![0.5, 0.5], vec![vec![0.5; 8]], 1.0).unwrap();
        assert_eq!(policy_count(&two, PolicyKind::HistoryDet), 1024.0);
        assert_eq!(enumerate_policies(&one_state(3, 1), PolicyKind::HistoryDet, 10).unwrap().count(), 1);
        assert!(matches!(
            enumerate_policies(&two, PolicyKind::HistoryDet, 1000),
            Err(Error::EnumerationTooLarge { .. })
        ));
    }

    #[test]
    fn first_policy_is_all_zero() {
        let mdp = one_state(2, 3);
        let first = enumerate_policies(&mdp, PolicyKind::MarkovDet, 100).unwrap().next().unwrap();
        assert_eq!(first, Policy::constant(&mdp, 0));
    }

    #[test]
    fn advantage_max_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mdp = TabularMdp::random(3, 3, 2, 1.0, &mut rng);
        let r = RewardFunction::StateAction {
            tables: (0..3).map(|_| (0..6).map(|_| rng.gen_range(0.0..1.0 / 3.0)).collect()).collect(),
        };
        let ov = optimal_values(&mdp, &r).unwrap();
        for h in 0..3 {
            for s in 0..3 {
                let row = &ov.advantage[h][s * 2..s * 2 + 2];
                assert_eq!(row.iter().cloned().fold(f64::MIN, f64::max), 0.0);
            }
        }
        let j = evaluate_policy(&mdp, &ov.greedy_policy(), &r, 1000).unwrap();
        assert!((j - dot(mdp.initial(), &ov.v[0])).abs() < 1e-9);
    }

    #[test]
    fn trajectory_reward_rejected_for_optimal_values() {
        let mdp = one_state(1, 2);
        let r = RewardFunction::Trajectory { table: vec![0.0, 1.0] };
        assert!(matches!(optimal_values(&mdp, &r), Err(Error::RewardKindMismatch(_))));
    }

    #[test]
    fn cap_is_enforced() {
        let mdp = one_state(4, 4);
        assert!(matches!(
            trajectory_distribution(&mdp, &Policy::uniform(&mdp), 100),
            Err(Error::EnumerationTooLarge { .. })
        ));
    }

    #[test]
    fn json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mdp = TabularMdp::random(2, 2, 2, 1.0, &mut rng);
        let mut table = vec![0.0; 16];
        table[3] = 0.25;
        table[11] = 1.0;
        let inst = Instance { mdp, reward: Some(RewardFunction::Trajectory { table }) };
        let back = Instance::from_json(&inst.to_json()).unwrap();
        assert_eq!(back, inst);
    }

    #[test]
    fn invalid_rows_rejected() {
        assert!(TabularMdp::new(2, 1, 1, vec![1.0], vec![vec![0.9]], 1.0).is_err());
        assert!(TabularMdp::new(1, 2, 1, vec![1.2, -0.2], vec![], 1.0).is_err());
    }
}
