//! Concentrability coefficients, the per-step vs per-trajectory gap
//! construction, and hard instance pairs for the lower bounds.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classes::{RewardClass, TransitionClass};
use crate::error::{Error, Result};
use crate::harness::derive_seed;
use crate::mdp::{
    evaluate_policy, trajectory_distribution, Policy, PolicyKind, RewardFunction, TabularMdp, TrajectoryDist,
    DEFAULT_ENUMERATION_CAP,
};
use crate::mle::{fit_reward_mle, MleOptions};
use crate::planner::greedy_plan;
use crate::preference::{generate_preference_dataset, Link, PreferenceDataset};

/// `num / den` with `0/0 = 0` and `positive/0 = +∞`.
pub fn safe_ratio(num: f64, den: f64) -> f64 {
    if num <= 0.0 {
        if den == 0.0 {
            0.0
        } else {
            num / den
        }
    } else if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Coefficient {
    pub value: f64,
    pub resolution: f64,
    pub members: usize,
}

fn pair_sum(p: &TrajectoryDist, q: &TrajectoryDist, f: impl Fn(usize, usize) -> f64) -> f64 {
    p.entries().iter().map(|&(i, a)| a * q.entries().iter().map(|&(j, b)| b * f(i, j)).sum::<f64>()).sum()
}

/// `C_r`: sup over enumerated members `r` of
/// `E_{tar×ref}[Δ* - Δr] / sqrt(E_{μ0×μ1}[(Δ* - Δr)²])`, floored at 0.
pub fn concentrability_reward(
    class: &RewardClass,
    target: &TrajectoryDist,
    mu_ref: &TrajectoryDist,
    mu0: &TrajectoryDist,
    mu1: &TrajectoryDist,
    truth: &[f64],
    resolution: f64,
    cap: usize,
) -> Result<Coefficient> {
    let members = class.enumerate_members(resolution, cap)?;
    let mut value: f64 = 0.0;
    for m in &members {
        let g: Vec<f64> = truth.iter().zip(&m.table).map(|(a, b)| a - b).collect();
        // Pairwise sums of differences vanish exactly when `g` is constant.
        let num = pair_sum(target, mu_ref, |a, b| g[a] - g[b]);
        let den = pair_sum(mu1, mu0, |a, b| (g[a] - g[b]).powi(2));
        value = value.max(safe_ratio(num, den.sqrt()));
    }
    Ok(Coefficient { value, resolution, members: members.len() })
}

/// `C'_r`: as [`concentrability_reward`] with the denominator averaged over
/// the dataset's pairs.
pub fn concentrability_reward_empirical(
    class: &RewardClass,
    target: &TrajectoryDist,
    mu_ref: &TrajectoryDist,
    dataset: &PreferenceDataset,
    truth: &[f64],
    resolution: f64,
    cap: usize,
) -> Result<Coefficient> {
    let members = class.enumerate_members(resolution, cap)?;
    let pairs = dataset.pair_counts();
    let n = dataset.len() as f64;
    let mut value: f64 = 0.0;
    for m in &members {
        let g: Vec<f64> = truth.iter().zip(&m.table).map(|(a, b)| a - b).collect();
        let num = pair_sum(target, mu_ref, |a, b| g[a] - g[b]);
        let den: f64 = pairs
            .iter()
            .map(|p| (p.ones + p.zeros) * (g[p.tau0] - g[p.tau1]).powi(2))
            .sum::<f64>()
            / n;
        value = value.max(safe_ratio(num, den.sqrt()));
    }
    Ok(Coefficient { value, resolution, members: members.len() })
}

/// `C_tr = max_τ d_tar(τ) / μ0(τ)`.
pub fn concentrability_per_trajectory(target: &TrajectoryDist, mu0: &TrajectoryDist) -> f64 {
    target.entries().iter().map(|&(i, p)| safe_ratio(p, mu0.prob(i))).fold(0.0, f64::max)
}

/// `C_st = max_{h,s,a} d_tar,h(s,a) / μ0,h(s,a)`.
pub fn concentrability_per_step(target: &TrajectoryDist, mu0: &TrajectoryDist, horizon: usize) -> f64 {
    let mut best: f64 = 0.0;
    for h in 0..horizon {
        let (d, m) = (target.marginal(h), mu0.marginal(h));
        for (p, q) in d.iter().zip(&m) {
            if *p > 0.0 {
                best = best.max(safe_ratio(*p, *q));
            }
        }
    }
    best
}

/// `C_P`: max over steps and enumerated members of
/// `E_{d_tar,h}‖P_h - P*_h‖₁ / sqrt(E_{(μ0,h+μ1,h)/2}‖P_h - P*_h‖₁²)`.
/// `classes[h]` covers the transition out of step `h`; `initial` optionally
/// lists candidate initial distributions for the extra initial slot, which
/// contributes 1 whenever a candidate differs from the truth.
#[allow(clippy::too_many_arguments)]
pub fn concentrability_transition(
    classes: &[TransitionClass],
    mdp: &TabularMdp,
    target: &TrajectoryDist,
    mu0: &TrajectoryDist,
    mu1: &TrajectoryDist,
    initial: Option<&[Vec<f64>]>,
    resolution: f64,
    cap: usize,
) -> Result<Coefficient> {
    if classes.len() + 1 != mdp.horizon() {
        return Err(Error::InvalidParams("one transition class per step is required".into()));
    }
    let (s_len, a_len) = (mdp.num_states(), mdp.num_actions());
    let mut value: f64 = 0.0;
    let mut count = 0;
    if let Some(cands) = initial {
        count += cands.len();
        if cands.iter().any(|c| c.iter().zip(mdp.initial()).any(|(a, b)| a != b)) {
            value = 1.0;
        }
    }
    for (h, class) in classes.iter().enumerate() {
        let d = target.marginal(h);
        let mix: Vec<f64> = mu0.marginal(h).iter().zip(mu1.marginal(h)).map(|(a, b)| 0.5 * (a + b)).collect();
        let truth = &mdp.transitions()[h];
        for table in class.enumerate_members(resolution, cap)? {
            count += 1;
            let (mut num, mut den) = (0.0, 0.0);
            for row in 0..s_len * a_len {
                let l1: f64 = (0..s_len).map(|j| (table[row * s_len + j] - truth[row * s_len + j]).abs()).sum();
                num += d[row] * l1;
                den += mix[row] * l1 * l1;
            }
            value = value.max(safe_ratio(num, den.sqrt()));
        }
    }
    Ok(Coefficient { value, resolution, members: count })
}

/// `sup_{h,s,a} d_tar,h(s,a) / ((μ0,h + μ1,h)(s,a)/2)`, an upper bound on `C_P`.
pub fn transition_density_bound(target: &TrajectoryDist, mu0: &TrajectoryDist, mu1: &TrajectoryDist, horizon: usize) -> f64 {
    let mut best: f64 = 0.0;
    for h in 0..horizon {
        let (d, m0, m1) = (target.marginal(h), mu0.marginal(h), mu1.marginal(h));
        for i in 0..d.len() {
            if d[i] > 0.0 {
                best = best.max(safe_ratio(d[i], 0.5 * (m0[i] + m1[i])));
            }
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prop2Instance {
    pub mdp: TabularMdp,
    pub target: Policy,
    pub behavior: Policy,
    pub c: f64,
}

impl Prop2Instance {
    pub fn target_law(&self) -> Result<TrajectoryDist> {
        trajectory_distribution(&self.mdp, &self.target, DEFAULT_ENUMERATION_CAP)
    }

    pub fn behavior_law(&self) -> Result<TrajectoryDist> {
        trajectory_distribution(&self.mdp, &self.behavior, DEFAULT_ENUMERATION_CAP)
    }

    /// `(C_st, C_tr)` computed from the two laws.
    pub fn coefficients(&self) -> Result<(f64, f64)> {
        let (d, mu) = (self.target_law()?, self.behavior_law()?);
        Ok((concentrability_per_step(&d, &mu, self.mdp.horizon()), concentrability_per_trajectory(&d, &mu)))
    }
}

/// Action-independent dynamics from a Markov chain (uniform by default),
/// and a behavior policy that moves `1 - 1/C` of the target's mass on
/// action 0 to action 1.
pub fn prop2_instance(
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    c: f64,
    target: Option<Policy>,
    chain: Option<Vec<Vec<f64>>>,
) -> Result<Prop2Instance> {
    if !(c >= 1.0) || num_actions < 2 || num_states == 0 || horizon == 0 {
        return Err(Error::InvalidParams("need C ≥ 1, A ≥ 2, S ≥ 1, H ≥ 1".into()));
    }
    let uniform_row = vec![1.0 / num_states as f64; num_states];
    let chain = chain.unwrap_or_else(|| vec![uniform_row.repeat(num_states); horizon - 1]);
    if chain.len() + 1 != horizon || chain.iter().any(|t| t.len() != num_states * num_states) {
        return Err(Error::InvalidParams("chain needs H-1 tables of S×S".into()));
    }
    let tables = chain
        .iter()
        .map(|t| {
            (0..num_states)
                .flat_map(|s| (0..num_actions).flat_map(move |_| t[s * num_states..(s + 1) * num_states].iter().copied()))
                .collect()
        })
        .collect();
    let mdp = TabularMdp::new(horizon, num_states, num_actions, uniform_row, tables, 1.0)?;
    let target = target.unwrap_or_else(|| Policy::uniform(&mdp));
    target.validate(&mdp)?;
    if !target.is_markov() {
        return Err(Error::InvalidParams("target must be Markov".into()));
    }
    let mut probs = vec![vec![vec![0.0; num_actions]; num_states]; horizon];
    for h in 0..horizon {
        for s in 0..num_states {
            let row: Vec<f64> = (0..num_actions).map(|a| target.action_prob(h, 0, s, a, num_states)).collect();
            if row[0] <= 0.0 {
                return Err(Error::InvalidParams("target must put mass on action 0".into()));
            }
            let b = &mut probs[h][s];
            b.copy_from_slice(&row);
            b[0] = row[0] / c;
            b[1] = row[1] + (1.0 - 1.0 / c) * row[0];
        }
    }
    Ok(Prop2Instance { mdp, target, behavior: Policy::MarkovStochastic { probs }, c })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    /// Per-step coverage class.
    St,
    /// Per-trajectory coverage class.
    Tr,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairCase {
    /// `C ≥ 2`: one state.
    OneState,
    /// `1 < C < 2`: two absorbing states.
    TwoState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstancePair {
    pub kind: BoundKind,
    pub case: PairCase,
    pub c: f64,
    pub horizon: usize,
    pub n: usize,
    pub x: f64,
    pub mdp: TabularMdp,
    /// `½ + x` on `star`, `½` elsewhere.
    pub reward1: Vec<f64>,
    /// `½ - x` on `star`, `½` elsewhere.
    pub reward2: Vec<f64>,
    /// Shared data law, `μ0 = μ1`.
    pub mu: TrajectoryDist,
    pub star: usize,
}

impl InstancePair {
    pub fn reward(&self, which: usize) -> RewardFunction {
        RewardFunction::Trajectory { table: if which == 0 { self.reward1.clone() } else { self.reward2.clone() } }
    }

    /// The closed-form per-sample KL bound from the construction.
    pub fn kl_bound(&self) -> f64 {
        let (c, x2, e) = (self.c, self.x * self.x, 0.5f64.exp());
        match (self.kind, self.case) {
            (BoundKind::St, PairCase::OneState) => 2.0 * e * x2 / c.powi(self.horizon as i32),
            (BoundKind::St, PairCase::TwoState) => 4.0 * (c - 1.0) * e * x2 / (2f64.powi(self.horizon as i32) * c),
            (BoundKind::Tr, PairCase::OneState) => 2.0 * e * x2 / c,
            (BoundKind::Tr, PairCase::TwoState) => 2.0 * (c - 1.0) * e * x2 / c,
        }
    }

    /// The rate the lower bound is stated at, without its constant.
    pub fn minimax_rate(&self) -> f64 {
        let (c, n) = (self.c, self.n as f64);
        match self.kind {
            BoundKind::Tr => (c - 1.0).min(((c - 1.0) / n).sqrt()),
            BoundKind::St => (c - 1.0).min((c.max(2.0).powi(self.horizon as i32 - 1) * (c - 1.0) / n).sqrt()),
        }
    }

    /// Coverage coefficient of the pair against the optimal policy of
    /// `reward1` (`C_st` or `C_tr` according to the kind).
    pub fn coverage(&self) -> Result<f64> {
        let (pi, _, _) = greedy_plan(&self.mdp, &self.reward1, PolicyKind::MarkovDet, DEFAULT_ENUMERATION_CAP)?;
        let d = trajectory_distribution(&self.mdp, &pi, DEFAULT_ENUMERATION_CAP)?;
        Ok(match self.kind {
            BoundKind::St => concentrability_per_step(&d, &self.mu, self.horizon),
            BoundKind::Tr => concentrability_per_trajectory(&d, &self.mu),
        })
    }
}

/// The hard pair for the given coverage kind, `C` and `H`, with `x` set
/// from `N` as in the construction.
pub fn lower_bound_instance(kind: BoundKind, c: f64, horizon: usize, n: usize) -> Result<InstancePair> {
    if !(c > 1.0) || !c.is_finite() || horizon == 0 || n == 0 {
        return Err(Error::InvalidParams("need C > 1, H ≥ 1, N ≥ 1".into()));
    }
    let case = if c >= 2.0 { PairCase::OneState } else { PairCase::TwoState };
    let e = 0.5f64.exp();
    let nf = n as f64;
    let hp = horizon as i32;
    let x_arg = match (kind, case) {
        (BoundKind::St, PairCase::OneState) => c.powi(hp) / (2.0 * e * nf),
        (BoundKind::St, PairCase::TwoState) => 2f64.powi(hp) * c / (4.0 * e * (c - 1.0) * nf),
        (BoundKind::Tr, PairCase::OneState) => c / (2.0 * e * nf),
        (BoundKind::Tr, PairCase::TwoState) => c / (2.0 * e * (c - 1.0) * nf),
    };
    let x = 0.5f64.min(x_arg.sqrt());
    let (mdp, s_star) = match case {
        PairCase::OneState => (TabularMdp::new(horizon, 1, 2, vec![1.0], vec![vec![1.0; 2]; horizon - 1], 1.0)?, 0),
        PairCase::TwoState => {
            let stay = vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0];
            (TabularMdp::new(horizon, 2, 2, vec![c - 1.0, 2.0 - c], vec![stay; horizon - 1], 1.0)?, 0)
        }
    };
    let space = mdp.space();
    let n_traj = space.size(DEFAULT_ENUMERATION_CAP)?;
    let constant_path = |s: usize, a: usize| space.encode(&vec![(s, a); horizon]);
    let star = constant_path(s_star, 0);
    let mu = match (kind, case) {
        (BoundKind::St, PairCase::OneState) => {
            let entries = (0..n_traj)
                .map(|i| {
                    let ones = (0..horizon).filter(|&h| space.step(i, h).1 == 0).count() as i32;
                    (i, (1.0 / c).powi(ones) * (1.0 - 1.0 / c).powi(hp - ones))
                })
                .collect();
            TrajectoryDist::new(space, entries)?
        }
        (BoundKind::St, PairCase::TwoState) => {
            let mut entries: Vec<(usize, f64)> = (0..n_traj)
                .filter(|&i| (0..horizon).all(|h| space.step(i, h).0 == 0))
                .map(|i| (i, 2.0 * (c - 1.0) / c / 2f64.powi(hp)))
                .collect();
            entries.push((constant_path(1, 0), (2.0 - c) / c));
            TrajectoryDist::new(space, entries)?
        }
        (BoundKind::Tr, PairCase::OneState) => {
            TrajectoryDist::new(space, vec![(star, 1.0 / c), (constant_path(0, 1), 1.0 - 1.0 / c)])?
        }
        (BoundKind::Tr, PairCase::TwoState) => TrajectoryDist::new(
            space,
            vec![
                (star, (c - 1.0) / c),
                (constant_path(0, 1), (c - 1.0) / c),
                (constant_path(1, 0), (2.0 - c) / c),
            ],
        )?,
    };
    let mut reward1 = vec![0.5; n_traj];
    let mut reward2 = vec![0.5; n_traj];
    reward1[star] = 0.5 + x;
    reward2[star] = 0.5 - x;
    Ok(InstancePair { kind, case, c, horizon, n, x, mdp, reward1, reward2, mu, star })
}

fn bernoulli_kl(p: f64, q: f64) -> f64 {
    let term = |a: f64, b: f64| if a == 0.0 { 0.0 } else { a * (a / b).ln() };
    term(p, q) + term(1.0 - p, 1.0 - q)
}

/// Exact per-sample `KL(μ0⊗μ1⊗P_{r¹} ‖ μ0⊗μ1⊗P_{r²})` under the sigmoid link.
pub fn instance_pair_kl(pair: &InstancePair) -> f64 {
    let link = Link::Sigmoid;
    let mut kl = 0.0;
    for &(i, p) in pair.mu.entries() {
        for &(j, q) in pair.mu.entries() {
            let p1 = link.prob(pair.reward1[j] - pair.reward1[i]);
            let p2 = link.prob(pair.reward2[j] - pair.reward2[i]);
            kl += p * q * bernoulli_kl(p1, p2);
        }
    }
    kl
}

/// Data an estimator may use besides the dataset.
#[derive(Clone, Debug)]
pub struct EstimatorContext<'a> {
    pub mdp: &'a TabularMdp,
    pub mu1: &'a TrajectoryDist,
    pub mu0: Option<&'a TrajectoryDist>,
}

pub type Estimator<'e> = dyn Fn(&PreferenceDataset, &EstimatorContext) -> Result<Policy> + Sync + 'e;

/// Fit the reward MLE over `class` and act greedily on it.
pub fn greedy_mle_estimator(class: RewardClass, link: Link, opts: MleOptions) -> Box<Estimator<'static>> {
    Box::new(move |ds, ctx| {
        let fit = fit_reward_mle(&class, ds, &link, &opts)?;
        Ok(greedy_plan(ctx.mdp, &fit.model.table, PolicyKind::MarkovDet, DEFAULT_ENUMERATION_CAP)?.0)
    })
}

/// Ignore the data and return a fixed policy.
pub fn constant_estimator(policy: Policy) -> Box<Estimator<'static>> {
    Box::new(move |_, _| Ok(policy.clone()))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RiskEstimate {
    pub risk: [f64; 2],
    pub std_err: [f64; 2],
    pub max: f64,
    pub reps: usize,
}

/// Monte-Carlo risk `E_D[J(π*_i) - J(π̂)]` under each member of the pair,
/// with per-(member, rep) derived RNG streams. `mu0_visible` controls
/// whether the estimator sees `μ0`.
pub fn minimax_risk_eval(
    estimator: &Estimator,
    pair: &InstancePair,
    n: usize,
    reps: usize,
    seed: u64,
    mu0_visible: bool,
) -> Result<RiskEstimate> {
    if reps < 2 {
        return Err(Error::InvalidParams("need at least two repetitions".into()));
    }
    let link = Link::Sigmoid;
    let mut risk = [0.0; 2];
    let mut std_err = [0.0; 2];
    for which in 0..2 {
        let reward = pair.reward(which);
        let table = if which == 0 { &pair.reward1 } else { &pair.reward2 };
        let (_, _, best) = greedy_plan(&pair.mdp, table, PolicyKind::MarkovDet, DEFAULT_ENUMERATION_CAP)?;
        let losses: Vec<f64> = (0..reps)
            .into_par_iter()
            .map(|rep| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, which as u64, rep as u64));
                let ds = generate_preference_dataset(&pair.mdp, &reward, &link, &pair.mu, &pair.mu, n, &mut rng)?;
                let ctx = EstimatorContext { mdp: &pair.mdp, mu1: &pair.mu, mu0: mu0_visible.then_some(&pair.mu) };
                let pi = estimator(&ds, &ctx)?;
                Ok(best - evaluate_policy(&pair.mdp, &pi, &reward, DEFAULT_ENUMERATION_CAP)?)
            })
            .collect::<Result<_>>()?;
        let mean = losses.iter().sum::<f64>() / reps as f64;
        let var = losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        risk[which] = mean;
        std_err[which] = (var / reps as f64).sqrt();
    }
    Ok(RiskEstimate { risk, std_err, max: risk[0].max(risk[1]), reps })
}

/// Risk of `estimator` on the hard pair built for each `N` in `ns`.
pub fn risk_curve(
    estimator: &Estimator,
    kind: BoundKind,
    c: f64,
    horizon: usize,
    ns: &[usize],
    reps: usize,
    seed: u64,
    mu0_visible: bool,
) -> Result<Vec<(usize, RiskEstimate)>> {
    ns.iter()
        .map(|&n| {
            let pair = lower_bound_instance(kind, c, horizon, n)?;
            Ok((n, minimax_risk_eval(estimator, &pair, n, reps, seed, mu0_visible)?))
        })
        .collect()
}

pub const RISK_HEADER: &str = "n,risk1,risk2,se1,se2,max_risk";

pub fn risk_csv(curve: &[(usize, RiskEstimate)]) -> String {
    let mut out = format!("{RISK_HEADER}\n");
    for (n, r) in curve {
        out.push_str(&format!("{n},{},{},{},{},{}\n", r.risk[0], r.risk[1], r.std_err[0], r.std_err[1], r.max));
    }
    out
}
