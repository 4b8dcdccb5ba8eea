use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::BoundKind;
use crate::classes::DEFAULT_C_GEOM;
use crate::confidence::{TransitionScope, DEFAULT_C_MLE, DEFAULT_C_P};
use crate::error::{Error, Result};
use crate::mdp::{InstanceFile, Policy};
use crate::mle::MleOptions;
use crate::planner::PlanRequest;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Freehand,
    FreehandTransition,
    FreehandAction,
    GreedyMleBaseline,
}

/// A trajectory law: a policy's law under the instance dynamics, or an
/// explicit `(index, probability)` list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LawSpec {
    UniformPolicy,
    Policy(Policy),
    Mixture(Vec<(usize, f64)>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
pub enum InstanceSpec {
    /// One state, `arms` actions per step; every trajectory is an arm with
    /// a distinct reward on a shuffled linear ladder. Both data arms are
    /// uniform over trajectories.
    DenseArms { arms: usize, horizon: usize, r_max: f64, shuffle_seed: u64 },
    /// One state, two actions, two steps; the reward lives on the two
    /// constant-action trajectories, which both data arms sample uniformly.
    CoverageReference { high: f64, low: f64 },
    /// One step, `states` states with mass `∝ 2^{-j}`, two actions; action 1
    /// is better by `gap` everywhere.
    MarginLadder { states: usize, gap: f64 },
    /// Random dynamics and a random reward on the `spacing` grid; data from
    /// the uniform policy.
    TransitionReference { states: usize, actions: usize, horizon: usize, spacing: f64, seed: u64 },
    Prop2 { states: usize, actions: usize, horizon: usize, c: f64 },
    LowerBound { kind: BoundKind, c: f64, horizon: usize, n: usize, member: usize },
    Inline { instance: InstanceFile, mu0: LawSpec, mu1: LawSpec, target: Option<Policy> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportSpec {
    All,
    /// Trajectories charged by either data law.
    DataSupport,
    List(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardClassSpec {
    TabularGrid { spacing: f64, support: SupportSpec, #[serde(default)] fill: f64 },
    /// Indicator features; the radius defaults to `r_max·sqrt(#trajectories)`.
    OneHot { radius: Option<f64> },
    Linear { features: Vec<Vec<f64>>, radius: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransitionClassSpec {
    FullSimplex,
    /// `tables[h]` lists the step-`h` candidates.
    Candidates { tables: Vec<Vec<Vec<f64>>> },
    /// The true transitions only.
    Truth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdvantageClassSpec {
    TabularGrid { spacing: f64, b_max: f64 },
    Linear { features: Vec<Vec<f64>>, radius: f64, b_max: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuRef {
    Mu1Empirical,
    Mu1Exact,
    Custom(Vec<(usize, f64)>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Constants {
    pub c_mle: f64,
    pub c_p: f64,
    pub c_geom: f64,
}

impl Default for Constants {
    fn default() -> Self {
        Self { c_mle: DEFAULT_C_MLE, c_p: DEFAULT_C_P, c_geom: DEFAULT_C_GEOM }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    List(Vec<u64>),
    Range { first: u64, count: u64 },
}

impl SeedSpec {
    pub fn seeds(&self) -> Vec<u64> {
        match self {
            SeedSpec::List(v) => v.clone(),
            SeedSpec::Range { first, count } => (*first..first + count).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub instance: InstanceSpec,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub reward_class: Option<RewardClassSpec>,
    #[serde(default)]
    pub transition_class: Option<TransitionClassSpec>,
    #[serde(default)]
    pub advantage_class: Option<AdvantageClassSpec>,
    /// Only `"sigmoid"` is expressible in a config file.
    #[serde(default = "default_link")]
    pub link: String,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub constants: Constants,
    pub n_schedule: Vec<usize>,
    pub seeds: SeedSpec,
    #[serde(default = "default_mu_ref")]
    pub mu_ref: MuRef,
    #[serde(default)]
    pub plan: PlanRequest,
    #[serde(default)]
    pub mle: MleOptions,
    #[serde(default)]
    pub transition_smoothing: f64,
    #[serde(default)]
    pub transition_scope: TransitionScope,
}

fn default_link() -> String {
    "sigmoid".into()
}

fn default_delta() -> f64 {
    0.1
}

fn default_mu_ref() -> MuRef {
    MuRef::Mu1Empirical
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(format!("config: {m}")));
        if self.n_schedule.is_empty() || self.n_schedule.windows(2).any(|w| w[0] >= w[1]) {
            return bad("N schedule must be nonempty and strictly increasing");
        }
        if self.n_schedule[0] == 0 {
            return bad("N must be positive");
        }
        let mut seeds = self.seeds.seeds();
        if seeds.is_empty() {
            return bad("no seeds");
        }
        seeds.sort_unstable();
        if seeds.windows(2).any(|w| w[0] == w[1]) {
            return bad("seeds must be distinct");
        }
        if self.link != "sigmoid" {
            return bad("only the sigmoid link can be configured");
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::InvalidDelta(self.delta));
        }
        let needs = |ok: bool, what: &str| if ok { Ok(()) } else { bad(what) };
        match self.algorithm {
            Algorithm::Freehand | Algorithm::GreedyMleBaseline => needs(self.reward_class.is_some(), "reward_class required"),
            Algorithm::FreehandTransition => {
                needs(self.reward_class.is_some() && self.transition_class.is_some(), "reward_class and transition_class required")
            }
            Algorithm::FreehandAction => needs(self.advantage_class.is_some(), "advantage_class required"),
        }
    }

    /// Hex SHA-256 of the canonical JSON form, truncated to 16 digits.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serialises");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
