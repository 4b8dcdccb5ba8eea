//! Action-comparison variant: per-step advantage MLE, greedy extraction,
//! margin profiles and the action concentrability coefficient.

use serde::Serialize;

use crate::classes::AdvantageClass;
use crate::error::{Error, Result};
use crate::mdp::{argmax, evaluate_policy, optimal_values, visitation, OptimalValues, Policy, RewardFunction, TabularMdp};
use crate::mle::{fit_advantage_mle, MleOptions};
use crate::preference::{kappa, ActionPreferenceDataset, ActionSamplingLaw, Link};

/// Gaps at or below this are treated as exact ties.
pub const GAP_TOL: f64 = 1e-12;

/// `π̂_h(s) = argmax_a Â_h(s, a)`, lowest index on ties.
pub fn greedy_from_advantage(tables: &[Vec<f64>], num_actions: usize) -> Policy {
    let actions = tables.iter().map(|t| t.chunks(num_actions).map(argmax).collect()).collect();
    Policy::MarkovDeterministic { actions }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActionRun {
    pub advantage: Vec<Vec<f64>>,
    pub policy: Policy,
    pub optimal_value: f64,
    pub value: f64,
    pub suboptimality: f64,
}

/// Fit `Â_h` for every step, act greedily, and score the result exactly
/// against the true reward.
pub fn run_freehand_action(
    mdp: &TabularMdp,
    reward: &RewardFunction,
    dataset: &ActionPreferenceDataset,
    classes: &[AdvantageClass],
    link: &Link,
    opts: &MleOptions,
) -> Result<ActionRun> {
    if !matches!(reward, RewardFunction::StateAction { .. }) {
        return Err(Error::RewardKindMismatch("the action variant needs a state-action reward".into()));
    }
    let advantage = fit_advantage_mle(classes, dataset, link, opts)?;
    let policy = greedy_from_advantage(&advantage, mdp.num_actions());
    let opt = optimal_values(mdp, reward)?;
    let optimal_value = crate::mdp::dot(mdp.initial(), &opt.v[0]);
    let value = evaluate_policy(mdp, &policy, reward, 0)?;
    Ok(ActionRun { advantage, policy, optimal_value, value, suboptimality: (optimal_value - value).max(0.0) })
}

/// `κ_A`: the link's κ over `[-b_max, b_max]`.
pub fn kappa_advantage(link: &Link, b_max: f64) -> Result<f64> {
    kappa(link, b_max)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MarginProfile {
    pub alphas: Vec<f64>,
    /// `per_action[h * A + a][i]` at `alphas[i]`.
    pub per_action: Vec<Vec<f64>>,
    /// Max over `(h, a)`.
    pub m: Vec<f64>,
    /// `f64::INFINITY` for a hard margin.
    pub beta: f64,
    pub alpha0: f64,
    pub fit_points: usize,
}

impl MarginProfile {
    /// The fitted `β`; infinite for a hard margin, an error when fewer than
    /// two grid points have `0 < m < 1`.
    pub fn exponent(&self) -> Result<f64> {
        if self.beta.is_nan() {
            return Err(Error::DegenerateProfile(format!("{} usable points in (0, 1)", self.fit_points)));
        }
        Ok(self.beta)
    }

    /// `alpha,m` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha,m\n");
        for (a, m) in self.alphas.iter().zip(&self.m) {
            out.push_str(&format!("{a},{m}\n"));
        }
        out
    }
}

/// State law of `π*` at every step.
fn optimal_state_laws(mdp: &TabularMdp, opt: &OptimalValues) -> Result<Vec<Vec<f64>>> {
    let pi = opt.greedy_policy();
    let a_len = mdp.num_actions();
    (0..mdp.horizon())
        .map(|h| Ok(visitation(mdp, &pi, h, 0)?.chunks(a_len).map(|r| r.iter().sum()).collect()))
        .collect()
}

/// `|Q*_h(s, π*(s)) - Q*_h(s, a)|` for every `(h, s, a)`.
fn optimal_gaps(opt: &OptimalValues) -> Vec<Vec<f64>> {
    let a_len = opt.num_actions;
    opt.q
        .iter()
        .map(|q| {
            q.chunks(a_len)
                .flat_map(|row| {
                    let best = row[argmax(row)];
                    row.iter().map(move |v| (best - v).abs())
                })
                .collect()
        })
        .collect()
}

/// Exact soft-margin profile of `π*`, aggregated by the max over `(h, a)`,
/// and a log-log fit `log m = β log α - β log α₀` over points with
/// `0 < m < 1`.
pub fn margin_profile(mdp: &TabularMdp, reward: &RewardFunction, alphas: &[f64]) -> Result<MarginProfile> {
    if alphas.iter().any(|&a| !(a > 0.0)) {
        return Err(Error::InvalidParams("margin grid must be positive".into()));
    }
    let opt = optimal_values(mdp, reward)?;
    let laws = optimal_state_laws(mdp, &opt)?;
    let gaps = optimal_gaps(&opt);
    let (s_len, a_len) = (mdp.num_states(), mdp.num_actions());
    let mut per_action = Vec::with_capacity(mdp.horizon() * a_len);
    for h in 0..mdp.horizon() {
        for a in 0..a_len {
            per_action.push(
                alphas
                    .iter()
                    .map(|&alpha| {
                        (0..s_len)
                            .filter(|&s| {
                                let g = gaps[h][s * a_len + a];
                                g > GAP_TOL && g < alpha
                            })
                            .map(|s| laws[h][s])
                            .sum::<f64>()
                            .min(1.0)
                    })
                    .collect::<Vec<f64>>(),
            );
        }
    }
    let m: Vec<f64> = (0..alphas.len()).map(|i| per_action.iter().map(|r| r[i]).fold(0.0, f64::max)).collect();
    if m.iter().all(|&v| v == 0.0) {
        return Ok(MarginProfile { alphas: alphas.to_vec(), per_action, m, beta: f64::INFINITY, alpha0: f64::NAN, fit_points: 0 });
    }
    let pts: Vec<(f64, f64)> = alphas
        .iter()
        .zip(&m)
        .filter(|(_, &v)| v > 0.0 && v < 1.0)
        .map(|(a, v)| (a.ln(), v.ln()))
        .collect();
    if pts.len() < 2 {
        return Ok(MarginProfile { alphas: alphas.to_vec(), per_action, m, beta: f64::NAN, alpha0: f64::NAN, fit_points: pts.len() });
    }
    let (slope, intercept) = ols(&pts);
    Ok(MarginProfile {
        alphas: alphas.to_vec(),
        per_action,
        m,
        beta: slope,
        alpha0: (-intercept / slope).exp(),
        fit_points: pts.len(),
    })
}

/// Least-squares line through `(x, y)` points: `(slope, intercept)`.
pub(crate) fn ols(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

/// Squared error of advantage differences, `|(A* - A)(s,a⁰) - (A* - A)(s,a¹)|²`.
fn diff_loss(truth: &[f64], table: &[f64], base: usize, a0: usize, a1: usize) -> f64 {
    let d = (truth[base + a0] - table[base + a0]) - (truth[base + a1] - table[base + a1]);
    d * d
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ActionConcentrability {
    pub value: f64,
    pub product_bound: f64,
    pub resolution: f64,
    pub members: usize,
}

/// `C_act`: sup over steps and enumerated class members of the expected
/// squared advantage-difference error under `(d^{π*}_h, π*, Unif)` over the
/// same under the data law. Also reports the three-factor product bound.
pub fn concentrability_action(
    classes: &[AdvantageClass],
    mdp: &TabularMdp,
    reward: &RewardFunction,
    law: &ActionSamplingLaw,
    resolution: f64,
    cap: usize,
) -> Result<ActionConcentrability> {
    law.validate(mdp)?;
    if classes.len() != mdp.horizon() {
        return Err(Error::InvalidParams("one advantage class per step is required".into()));
    }
    let opt = optimal_values(mdp, reward)?;
    let pi = opt.greedy_policy();
    let (s_len, a_len) = (mdp.num_states(), mdp.num_actions());
    let unif = 1.0 / a_len as f64;
    let mut value: f64 = 0.0;
    let mut members = 0;
    for (h, class) in classes.iter().enumerate() {
        let target = visitation(mdp, &pi, h, 0)?;
        let truth = &opt.advantage[h];
        for table in class.enumerate_members(resolution, cap)? {
            members += 1;
            let mut num = 0.0;
            let mut den = 0.0;
            for s in 0..s_len {
                let base = s * a_len;
                for a0 in 0..a_len {
                    for a1 in 0..a_len {
                        let l = diff_loss(truth, &table, base, a0, a1);
                        num += target[base + a0] * unif * l;
                        den += law.states[h][s] * law.arm0[h][s][a0] * law.arm1[h][s][a1] * l;
                    }
                }
            }
            value = value.max(ratio(num, den));
        }
    }
    let (mut f_state, mut f_arm0, mut f_arm1): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for h in 0..mdp.horizon() {
        let target = visitation(mdp, &pi, h, 0)?;
        for s in 0..s_len {
            let d: f64 = target[s * a_len..(s + 1) * a_len].iter().sum();
            f_state = f_state.max(ratio(d, law.states[h][s]));
            for a in 0..a_len {
                let star = pi.action_prob(h, 0, s, a, s_len);
                f_arm0 = f_arm0.max(ratio(star, law.arm0[h][s][a]));
                f_arm1 = f_arm1.max(ratio(1.0, law.arm1[h][s][a]));
            }
        }
    }
    Ok(ActionConcentrability { value, product_bound: f_state * f_arm0 * f_arm1 * unif, resolution, members })
}
