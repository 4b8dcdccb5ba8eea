use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{AdvantageClassSpec, InstanceSpec, LawSpec, RewardClassSpec, SupportSpec, TransitionClassSpec};
use crate::analysis::{lower_bound_instance, prop2_instance};
use crate::classes::{AdvantageClass, LinearClass, RewardClass, TabularGrid, TransitionClass};
use crate::error::{Error, Result};
use crate::mdp::{
    optimal_values, trajectory_distribution, Instance, Policy, PolicyKind, RewardFunction, TabularMdp, TrajectoryDist,
    DEFAULT_ENUMERATION_CAP,
};
use crate::planner::greedy_plan;
use crate::preference::{generate_preference_dataset, ActionSamplingLaw, Link, PreferenceDataset};

/// Everything a sweep cell needs besides the sample size and seed.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentInstance {
    pub mdp: TabularMdp,
    pub reward: RewardFunction,
    pub mu0: TrajectoryDist,
    pub mu1: TrajectoryDist,
    /// Comparator in the suboptimality `J(π_tar) - J(π̂)`.
    pub target: Policy,
    pub action_law: Option<ActionSamplingLaw>,
}

impl ExperimentInstance {
    pub fn truth_table(&self) -> Result<Vec<f64>> {
        self.reward.to_table(&self.mdp.space(), DEFAULT_ENUMERATION_CAP)
    }

    /// The preference dataset of the `(n, seed)` sweep cell.
    pub fn sample_preferences(&self, link: &Link, n: usize, seed: u64) -> Result<PreferenceDataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(super::derive_seed(seed, n as u64, 0));
        generate_preference_dataset(&self.mdp, &self.reward, link, &self.mu0, &self.mu1, n, &mut rng)
    }
}

fn law(mdp: &TabularMdp, spec: &LawSpec) -> Result<TrajectoryDist> {
    match spec {
        LawSpec::UniformPolicy => trajectory_distribution(mdp, &Policy::uniform(mdp), DEFAULT_ENUMERATION_CAP),
        LawSpec::Policy(p) => {
            p.validate(mdp)?;
            trajectory_distribution(mdp, p, DEFAULT_ENUMERATION_CAP)
        }
        LawSpec::Mixture(entries) => TrajectoryDist::new(mdp.space(), entries.clone()),
    }
}

fn optimal_policy(mdp: &TabularMdp, reward: &RewardFunction) -> Result<Policy> {
    match reward {
        RewardFunction::StateAction { .. } => Ok(optimal_values(mdp, reward)?.greedy_policy()),
        RewardFunction::Trajectory { table } => {
            Ok(greedy_plan(mdp, table, PolicyKind::MarkovDet, DEFAULT_ENUMERATION_CAP)?.0)
        }
    }
}

/// States sampled from `d^{π*}_h`, both arms uniform.
fn optimal_state_law(mdp: &TabularMdp, target: &Policy) -> Result<ActionSamplingLaw> {
    let a_len = mdp.num_actions();
    let states = (0..mdp.horizon())
        .map(|h| {
            Ok(crate::mdp::visitation(mdp, target, h, DEFAULT_ENUMERATION_CAP)?
                .chunks(a_len)
                .map(|r| r.iter().sum())
                .collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(ActionSamplingLaw::uniform_arms(states, a_len))
}

pub fn build_instance(spec: &InstanceSpec) -> Result<ExperimentInstance> {
    match spec {
        InstanceSpec::DenseArms { arms, horizon, r_max, shuffle_seed } => {
            if *arms < 2 || *horizon == 0 {
                return Err(Error::InvalidParams("dense arms need at least two actions and one step".into()));
            }
            let mdp = TabularMdp::new(*horizon, 1, *arms, vec![1.0], vec![vec![1.0; *arms]; horizon - 1], *r_max)?;
            let k = mdp.space().size(DEFAULT_ENUMERATION_CAP)?;
            let mut ranks: Vec<usize> = (0..k).collect();
            ranks.shuffle(&mut ChaCha8Rng::seed_from_u64(*shuffle_seed));
            let table: Vec<f64> = ranks.iter().map(|&j| r_max * (1.0 - j as f64 / (k - 1) as f64)).collect();
            let reward = RewardFunction::Trajectory { table };
            let uniform = TrajectoryDist::uniform(mdp.space(), &(0..k).collect::<Vec<_>>())?;
            let target = optimal_policy(&mdp, &reward)?;
            Ok(ExperimentInstance { mdp, reward, mu0: uniform.clone(), mu1: uniform, target, action_law: None })
        }
        InstanceSpec::CoverageReference { high, low } => {
            let mdp = TabularMdp::new(2, 1, 2, vec![1.0], vec![vec![1.0; 2]], 1.0)?;
            let space = mdp.space();
            let (a, b) = (space.encode(&[(0, 0), (0, 0)]), space.encode(&[(0, 1), (0, 1)]));
            let mut table = vec![0.0; 4];
            table[a] = *high;
            table[b] = *low;
            let reward = RewardFunction::Trajectory { table };
            let mu = TrajectoryDist::uniform(space, &[a, b])?;
            let target = optimal_policy(&mdp, &reward)?;
            Ok(ExperimentInstance { mdp, reward, mu0: mu.clone(), mu1: mu, target, action_law: None })
        }
        InstanceSpec::MarginLadder { states, gap } => {
            if *states == 0 || !(*gap > 0.0 && *gap <= 1.0) {
                return Err(Error::InvalidParams("ladder needs states and a gap in (0, 1]".into()));
            }
            let weights: Vec<f64> = (0..*states).map(|j| 0.5f64.powi(j as i32)).collect();
            let total: f64 = weights.iter().sum();
            let rho: Vec<f64> = weights.iter().map(|w| w / total).collect();
            let mdp = TabularMdp::new(1, *states, 2, rho, vec![], 1.0)?;
            let reward = RewardFunction::StateAction { tables: vec![(0..*states).flat_map(|_| [1.0 - gap, 1.0]).collect()] };
            let target = optimal_policy(&mdp, &reward)?;
            let mu = trajectory_distribution(&mdp, &Policy::uniform(&mdp), DEFAULT_ENUMERATION_CAP)?;
            let action_law = Some(optimal_state_law(&mdp, &target)?);
            Ok(ExperimentInstance { mdp, reward, mu0: mu.clone(), mu1: mu, target, action_law })
        }
        InstanceSpec::TransitionReference { states, actions, horizon, spacing, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mdp = TabularMdp::random(*horizon, *states, *actions, 1.0, &mut rng);
            let k = mdp.space().size(DEFAULT_ENUMERATION_CAP)?;
            let levels = (1.0 / spacing).round() as u32;
            let table = (0..k).map(|_| rng.gen_range(0..=levels) as f64 * spacing).collect();
            let reward = RewardFunction::Trajectory { table };
            let mu = trajectory_distribution(&mdp, &Policy::uniform(&mdp), DEFAULT_ENUMERATION_CAP)?;
            let target = optimal_policy(&mdp, &reward)?;
            Ok(ExperimentInstance { mdp, reward, mu0: mu.clone(), mu1: mu, target, action_law: None })
        }
        InstanceSpec::Prop2 { states, actions, horizon, c } => {
            let inst = prop2_instance(*states, *actions, *horizon, *c, None, None)?;
            let mu = inst.behavior_law()?;
            let space = inst.mdp.space();
            let k = space.size(DEFAULT_ENUMERATION_CAP)?;
            // Fraction of steps taking action 0.
            let table = (0..k)
                .map(|i| (0..*horizon).filter(|&h| space.step(i, h).1 == 0).count() as f64 / *horizon as f64)
                .collect();
            Ok(ExperimentInstance {
                mdp: inst.mdp,
                reward: RewardFunction::Trajectory { table },
                mu0: mu.clone(),
                mu1: mu,
                target: inst.target,
                action_law: None,
            })
        }
        InstanceSpec::LowerBound { kind, c, horizon, n, member } => {
            let pair = lower_bound_instance(*kind, *c, *horizon, *n)?;
            if *member > 1 {
                return Err(Error::InvalidParams("pair member is 0 or 1".into()));
            }
            let reward = pair.reward(*member);
            let target = optimal_policy(&pair.mdp, &reward)?;
            Ok(ExperimentInstance { mdp: pair.mdp, reward, mu0: pair.mu.clone(), mu1: pair.mu, target, action_law: None })
        }
        InstanceSpec::Inline { instance, mu0, mu1, target } => {
            let inst = Instance::from_file(instance.clone(), DEFAULT_ENUMERATION_CAP)?;
            let reward = inst.reward.ok_or_else(|| Error::InvalidReward("inline instance needs a reward".into()))?;
            reward.validate(&inst.mdp)?;
            let target = match target {
                Some(p) => {
                    p.validate(&inst.mdp)?;
                    p.clone()
                }
                None => optimal_policy(&inst.mdp, &reward)?,
            };
            let action_law = match reward {
                RewardFunction::StateAction { .. } => Some(optimal_state_law(&inst.mdp, &target)?),
                RewardFunction::Trajectory { .. } => None,
            };
            Ok(ExperimentInstance {
                mu0: law(&inst.mdp, mu0)?,
                mu1: law(&inst.mdp, mu1)?,
                mdp: inst.mdp,
                reward,
                target,
                action_law,
            })
        }
    }
}

pub fn build_reward_class(spec: &RewardClassSpec, inst: &ExperimentInstance, c_geom: f64) -> Result<RewardClass> {
    let space = inst.mdp.space();
    let r_max = inst.mdp.r_max();
    Ok(match spec {
        RewardClassSpec::TabularGrid { spacing, support, fill } => {
            let support = match support {
                SupportSpec::All => (0..space.size(DEFAULT_ENUMERATION_CAP)?).collect(),
                SupportSpec::DataSupport => {
                    let mut s: Vec<usize> = inst.mu0.entries().iter().chain(inst.mu1.entries()).map(|e| e.0).collect();
                    s.sort_unstable();
                    s.dedup();
                    s
                }
                SupportSpec::List(v) => v.clone(),
            };
            RewardClass::TabularGrid(TabularGrid::new(space, support, *spacing, r_max, *fill)?)
        }
        RewardClassSpec::OneHot { radius } => {
            let mut l = LinearClass::one_hot(space, r_max, DEFAULT_ENUMERATION_CAP)?;
            if let Some(r) = radius {
                l.radius = *r;
            }
            l.c_geom = c_geom;
            RewardClass::Linear(l)
        }
        RewardClassSpec::Linear { features, radius } => {
            let mut l = LinearClass::new(space, features.clone(), *radius, r_max)?;
            l.c_geom = c_geom;
            RewardClass::Linear(l)
        }
    })
}

pub fn build_transition_classes(spec: &TransitionClassSpec, mdp: &TabularMdp) -> Result<Vec<TransitionClass>> {
    let (s, a) = (mdp.num_states(), mdp.num_actions());
    let steps = mdp.horizon() - 1;
    Ok(match spec {
        TransitionClassSpec::FullSimplex => vec![TransitionClass::FullSimplex { num_states: s, num_actions: a }; steps],
        TransitionClassSpec::Candidates { tables } => {
            if tables.len() != steps {
                return Err(Error::InvalidParams(format!("need candidates for {steps} steps")));
            }
            tables
                .iter()
                .map(|t| TransitionClass::Candidates { num_states: s, num_actions: a, tables: t.clone() })
                .collect()
        }
        TransitionClassSpec::Truth => mdp
            .transitions()
            .iter()
            .map(|t| TransitionClass::Candidates { num_states: s, num_actions: a, tables: vec![t.clone()] })
            .collect(),
    })
}

pub fn build_advantage_classes(spec: &AdvantageClassSpec, mdp: &TabularMdp, c_geom: f64) -> Vec<AdvantageClass> {
    let (num_states, num_actions) = (mdp.num_states(), mdp.num_actions());
    let one = match spec {
        AdvantageClassSpec::TabularGrid { spacing, b_max } => {
            AdvantageClass::TabularGrid { num_states, num_actions, spacing: *spacing, b_max: *b_max }
        }
        AdvantageClassSpec::Linear { features, radius, b_max } => AdvantageClass::Linear {
            num_states,
            num_actions,
            features: features.clone(),
            radius: *radius,
            b_max: *b_max,
            c_geom,
        },
    };
    vec![one; mdp.horizon()]
}
