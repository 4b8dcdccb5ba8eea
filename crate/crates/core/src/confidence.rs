//! Likelihood-slack confidence sets for rewards and transitions.

use serde::{Deserialize, Serialize};

use crate::classes::{RewardClass, RewardModel, TransitionClass};
use crate::error::{Error, Result};
use crate::mdp::{TabularMdp, TrajectoryDist};
use crate::mle::{fit_reward_mle, fit_transition_mle, loglik_reward, reward_objective, transition_loglik, ComparisonObjective, MleOptions};
use crate::preference::{kappa, Link, PreferenceDataset};

/// Reward slack constant picked by `calibrate_c_mle` on the coverage
/// reference instance (smallest ladder value reaching 90% coverage).
pub const DEFAULT_C_MLE: f64 = 0.5;
/// Transition slack constant; same ladder and pilot rule as `c_mle`.
pub const DEFAULT_C_P: f64 = 0.5;
/// Candidate values tried by the calibration pilot, in order.
pub const C_LADDER: [f64; 4] = [0.5, 1.0, 2.0, 4.0];
/// Coverage the pilot must reach.
pub const CALIBRATION_TARGET: f64 = 0.9;

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidDelta(delta))
    }
}

/// `ζ = c_mle (log N(1/N) + log(1/δ))`.
pub fn slack_reward(class: &RewardClass, n: usize, delta: f64, c_mle: f64) -> Result<f64> {
    check_delta(delta)?;
    if n == 0 {
        return Err(Error::InvalidParams("N must be at least 1".into()));
    }
    Ok(c_mle * (class.log_bracket_number(1.0 / n as f64)? + (1.0 / delta).ln()))
}

/// `ζ_P = c_P log(H N_P(1/N) / δ)`.
pub fn slack_transition(class: &TransitionClass, n: usize, delta: f64, horizon: usize, c_p: f64) -> Result<f64> {
    check_delta(delta)?;
    if n == 0 || horizon == 0 {
        return Err(Error::InvalidParams("N and H must be at least 1".into()));
    }
    Ok(c_p * (class.log_bracket_number(1.0 / n as f64)? + (horizon as f64).ln() + (1.0 / delta).ln()))
}

/// `{r ∈ class : ℓ(r) ≥ ℓ(r̂) - ζ}`.
#[derive(Clone, Debug)]
pub struct ConfidenceSet {
    pub class: RewardClass,
    pub mle: RewardModel,
    pub mle_loglik: f64,
    pub zeta: f64,
    pub dataset: PreferenceDataset,
    pub link: Link,
    pub objective: ComparisonObjective,
}

impl ConfidenceSet {
    pub fn threshold(&self) -> f64 {
        self.mle_loglik - self.zeta
    }

    /// Membership by exact likelihood recomputation.
    pub fn contains(&self, table: &[f64]) -> bool {
        loglik_reward(table, &self.dataset, &self.link) >= self.threshold()
    }

    /// Same set with a different slack.
    pub fn with_slack(&self, zeta: f64) -> Self {
        Self { zeta, ..self.clone() }
    }

    /// Class members (grid, or ε-net for linear classes) inside the set,
    /// preceded by the MLE point when it is not itself enumerated.
    pub fn discretize(&self, resolution: f64, cap: usize) -> Result<Vec<RewardModel>> {
        let mut members: Vec<RewardModel> = self
            .class
            .enumerate_members(resolution, cap)?
            .into_iter()
            .filter(|m| self.contains(&m.table))
            .collect();
        if !members.iter().any(|m| m.table == self.mle.table) {
            members.insert(0, self.mle.clone());
        }
        Ok(members)
    }
}

pub fn reward_confidence_with_slack(
    dataset: &PreferenceDataset,
    class: &RewardClass,
    link: &Link,
    zeta: f64,
    opts: &MleOptions,
) -> Result<ConfidenceSet> {
    if !(zeta >= 0.0) {
        return Err(Error::InvalidParams(format!("slack must be nonnegative, got {zeta}")));
    }
    let fit = fit_reward_mle(class, dataset, link, opts)?;
    let mle_loglik = loglik_reward(&fit.model.table, dataset, link);
    Ok(ConfidenceSet {
        class: class.clone(),
        mle: fit.model,
        mle_loglik,
        zeta,
        dataset: dataset.clone(),
        link: link.clone(),
        objective: reward_objective(class, dataset, link),
    })
}

pub fn build_reward_confidence(
    dataset: &PreferenceDataset,
    class: &RewardClass,
    link: &Link,
    delta: f64,
    c_mle: f64,
    opts: &MleOptions,
) -> Result<ConfidenceSet> {
    let zeta = slack_reward(class, dataset.len(), delta, c_mle)?;
    reward_confidence_with_slack(dataset, class, link, zeta, opts)
}

/// Whether the likelihood constraint couples all rows of a step or each
/// `(s, a)` row separately.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TransitionScope {
    #[default]
    PerStep,
    PerRow,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepTransitionSet {
    pub class: TransitionClass,
    pub mle: Vec<f64>,
    pub mle_loglik: f64,
    pub zeta: f64,
    pub counts: Vec<f64>,
    pub scope: TransitionScope,
}

impl StepTransitionSet {
    pub fn num_states(&self) -> usize {
        self.class.shape().0
    }

    pub fn row_loglik(&self, table: &[f64], row: usize) -> f64 {
        let s = self.num_states();
        transition_loglik(&table[row * s..(row + 1) * s], &self.counts[row * s..(row + 1) * s])
    }

    pub fn contains(&self, table: &[f64]) -> bool {
        if !self.class.contains(table) {
            return false;
        }
        match self.scope {
            TransitionScope::PerStep => transition_loglik(table, &self.counts) >= self.mle_loglik - self.zeta,
            TransitionScope::PerRow => {
                let rows = self.counts.len() / self.num_states();
                (0..rows).all(|i| self.row_loglik(table, i) >= self.row_loglik(&self.mle, i) - self.zeta)
            }
        }
    }

    /// Enumerated class members inside the set; the MLE is always listed.
    pub fn discretize(&self, resolution: f64, cap: usize) -> Result<Vec<Vec<f64>>> {
        let mut members: Vec<Vec<f64>> = self
            .class
            .enumerate_members(resolution, cap)?
            .into_iter()
            .filter(|t| self.contains(t))
            .collect();
        if !members.contains(&self.mle) {
            members.insert(0, self.mle.clone());
        }
        Ok(members)
    }
}

/// One set per transition step `h = 0..H-2`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionConfidenceSet {
    pub steps: Vec<StepTransitionSet>,
}

impl TransitionConfidenceSet {
    /// Singleton sets holding the true transitions.
    pub fn singleton(mdp: &TabularMdp) -> Self {
        let (s, a) = (mdp.num_states(), mdp.num_actions());
        let steps = mdp
            .transitions()
            .iter()
            .map(|t| StepTransitionSet {
                class: TransitionClass::Candidates { num_states: s, num_actions: a, tables: vec![t.clone()] },
                mle: t.clone(),
                mle_loglik: 0.0,
                zeta: 0.0,
                counts: vec![0.0; t.len()],
                scope: TransitionScope::PerStep,
            })
            .collect();
        Self { steps }
    }

    pub fn contains(&self, mdp: &TabularMdp) -> bool {
        self.steps.iter().zip(mdp.transitions()).all(|(set, t)| set.contains(t))
    }

    pub fn mle_tables(&self) -> Vec<Vec<f64>> {
        self.steps.iter().map(|s| s.mle.clone()).collect()
    }
}

pub fn build_transition_confidence(
    dataset: &PreferenceDataset,
    classes: &[TransitionClass],
    delta: f64,
    c_p: f64,
    smoothing: f64,
    scope: TransitionScope,
) -> Result<TransitionConfidenceSet> {
    let horizon = dataset.space.horizon;
    if classes.len() + 1 != horizon {
        return Err(Error::InvalidParams(format!("need {} transition classes", horizon - 1)));
    }
    let steps = classes
        .iter()
        .enumerate()
        .map(|(h, class)| {
            let fit = fit_transition_mle(class, dataset, h, smoothing)?;
            Ok(StepTransitionSet {
                class: class.clone(),
                mle_loglik: fit.loglik,
                mle: fit.table,
                zeta: slack_transition(class, dataset.len(), delta, horizon, c_p)?,
                counts: fit.counts,
                scope,
            })
        })
        .collect::<Result<_>>()?;
    Ok(TransitionConfidenceSet { steps })
}

/// `E_{τ⁰~μ₀, τ¹~μ₁} [((r*(τ¹) - r*(τ⁰)) - (r(τ¹) - r(τ⁰)))²]` by enumeration.
pub fn squared_difference_radius(table: &[f64], mu0: &TrajectoryDist, mu1: &TrajectoryDist, truth: &[f64]) -> f64 {
    let mut total = 0.0;
    for &(t0, p0) in mu0.entries() {
        for &(t1, p1) in mu1.entries() {
            let d = (truth[t1] - truth[t0]) - (table[t1] - table[t0]);
            total += p0 * p1 * d * d;
        }
    }
    total
}

/// Largest `radius(r) · N / (κ² (ζ + ln 1/δ))` over `members`, i.e. the
/// constant a bound `radius ≤ c κ² (ζ + ln 1/δ) / N` would need on this
/// dataset. Reported as a diagnostic, never asserted.
pub fn implied_radius_constant(
    set: &ConfidenceSet,
    members: &[RewardModel],
    mu0: &TrajectoryDist,
    mu1: &TrajectoryDist,
    truth: &[f64],
    delta: f64,
) -> Result<f64> {
    check_delta(delta)?;
    let k = kappa(&set.link, set.class.r_max())?;
    let scale = k * k * (set.zeta + (1.0 / delta).ln()) / set.dataset.len() as f64;
    let worst = members.iter().map(|m| squared_difference_radius(&m.table, mu0, mu1, truth)).fold(0.0, f64::max);
    Ok(if worst == 0.0 { 0.0 } else { worst / scale })
}

/// Smallest ladder value whose pilot coverage reaches the target; the
/// largest value if none does. Returns the chosen constant and every
/// `(c, coverage)` the pilot evaluated.
pub fn calibrate_constant(mut pilot: impl FnMut(f64) -> Result<f64>) -> Result<(f64, Vec<(f64, f64)>)> {
    let mut seen = Vec::new();
    for &c in &C_LADDER {
        let cov = pilot(c)?;
        seen.push((c, cov));
        if cov >= CALIBRATION_TARGET {
            return Ok((c, seen));
        }
    }
    Ok((*C_LADDER.last().expect("ladder nonempty"), seen))
}
