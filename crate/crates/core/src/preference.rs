//! Link functions, preference probabilities and synthetic comparison data.
//!
//! A label `o = 1` means the second trajectory (or action) of the pair was
//! preferred: `P(o = 1 | τ⁰, τ¹) = Φ(r(τ¹) - r(τ⁰))`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{optimal_values, RewardFunction, TabularMdp, TrajectoryDist, TrajectorySpace, DEFAULT_ENUMERATION_CAP};

/// Probabilities are clamped to at least this before taking logs.
pub const LOG_PROB_FLOOR: f64 = 1e-300;
/// Grid size used when locating the minimum of `Φ'`.
pub const KAPPA_GRID: usize = 10_000;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct CustomLink {
    pub name: String,
    pub forward: ScalarFn,
    pub derivative: ScalarFn,
}

/// Monotone link `Φ` mapping a reward difference to a preference probability.
#[derive(Clone, Default)]
pub enum Link {
    #[default]
    Sigmoid,
    Custom(CustomLink),
}

impl fmt::Debug for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Link({})", self.name())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log σ(x)` without overflow.
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

impl Link {
    pub fn custom(
        name: impl Into<String>,
        forward: impl Fn(f64) -> f64 + Send + Sync + 'static,
        derivative: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Link::Custom(CustomLink { name: name.into(), forward: Arc::new(forward), derivative: Arc::new(derivative) })
    }

    pub fn name(&self) -> &str {
        match self {
            Link::Sigmoid => "sigmoid",
            Link::Custom(c) => &c.name,
        }
    }

    pub fn prob(&self, x: f64) -> f64 {
        match self {
            Link::Sigmoid => sigmoid(x),
            Link::Custom(c) => (c.forward)(x),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Link::Sigmoid => {
                let p = sigmoid(x);
                p * (1.0 - p)
            }
            Link::Custom(c) => (c.derivative)(x),
        }
    }

    /// `log P(o | x)` with `P(o = 1 | x) = Φ(x)`, clamped at `LOG_PROB_FLOOR`.
    pub fn log_prob(&self, x: f64, label: bool) -> f64 {
        let floor = LOG_PROB_FLOOR.ln();
        match self {
            Link::Sigmoid => log_sigmoid(if label { x } else { -x }).max(floor),
            Link::Custom(_) => {
                let p = self.prob(x);
                (if label { p } else { 1.0 - p }).max(LOG_PROB_FLOOR).ln()
            }
        }
    }

    /// Derivative of `log_prob` in `x`.
    pub fn dlog_prob(&self, x: f64, label: bool) -> f64 {
        match self {
            Link::Sigmoid => {
                if label {
                    sigmoid(-x)
                } else {
                    -sigmoid(x)
                }
            }
            Link::Custom(_) => {
                let p = self.prob(x);
                let d = self.derivative(x);
                if label {
                    d / p.max(LOG_PROB_FLOOR)
                } else {
                    -d / (1.0 - p).max(LOG_PROB_FLOOR)
                }
            }
        }
    }
}

/// `1 / min Φ'` over `[-bound, bound]`, located on a uniform grid plus both
/// endpoints.
pub fn kappa(link: &Link, bound: f64) -> Result<f64> {
    if !(bound >= 0.0) || !bound.is_finite() {
        return Err(Error::InvalidParams(format!("range bound must be nonnegative, got {bound}")));
    }
    let mut min = link.derivative(-bound).min(link.derivative(bound));
    for i in 0..=KAPPA_GRID {
        let x = -bound + 2.0 * bound * i as f64 / KAPPA_GRID as f64;
        min = min.min(link.derivative(x));
    }
    if !(min > LOG_PROB_FLOOR) {
        return Err(Error::DegenerateLink(min));
    }
    Ok(1.0 / min)
}

/// `P(o = 1 | τ⁰, τ¹) = Φ(r(τ¹) - r(τ⁰))`.
pub fn pref_prob(link: &Link, reward: &RewardFunction, space: &TrajectorySpace, tau0: usize, tau1: usize) -> f64 {
    link.prob(reward.value(space, tau1) - reward.value(space, tau0))
}

/// `P(o = 1 | s, a⁰, a¹) = Φ(v(a¹) - v(a⁰))` where `values` is the row of
/// `Q*_h(s, ·)` or `A*_h(s, ·)`.
pub fn action_pref_prob(link: &Link, values: &[f64], a0: usize, a1: usize) -> f64 {
    link.prob(values[a1] - values[a0])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub tau0: usize,
    pub tau1: usize,
    pub label: bool,
}

/// Label counts for one ordered trajectory pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairCount {
    pub tau0: usize,
    pub tau1: usize,
    pub ones: f64,
    pub zeros: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreferenceDataset {
    pub space: TrajectorySpace,
    pub records: Vec<PreferenceRecord>,
    pub mu0: Option<TrajectoryDist>,
    pub mu1: Option<TrajectoryDist>,
}

impl PreferenceDataset {
    pub fn new(space: TrajectorySpace, records: Vec<PreferenceRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InvalidDataset("a dataset needs at least one record".into()));
        }
        let limit = space.count();
        if let Some(r) = records.iter().find(|r| r.tau0 as f64 >= limit || r.tau1 as f64 >= limit) {
            return Err(Error::InvalidDataset(format!("record {r:?} outside the trajectory space")));
        }
        Ok(Self { space, records, mu0: None, mu1: None })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Sample-average law of the second arm.
    pub fn mu1_empirical(&self) -> TrajectoryDist {
        TrajectoryDist::empirical(self.space, self.records.iter().map(|r| r.tau1)).expect("dataset is nonempty")
    }

    pub fn mu0_empirical(&self) -> TrajectoryDist {
        TrajectoryDist::empirical(self.space, self.records.iter().map(|r| r.tau0)).expect("dataset is nonempty")
    }

    /// Records grouped by ordered pair, sorted by `(tau0, tau1)`.
    pub fn pair_counts(&self) -> Vec<PairCount> {
        let mut map: BTreeMap<(usize, usize), (f64, f64)> = BTreeMap::new();
        for r in &self.records {
            let e = map.entry((r.tau0, r.tau1)).or_insert((0.0, 0.0));
            if r.label {
                e.0 += 1.0;
            } else {
                e.1 += 1.0;
            }
        }
        map.into_iter()
            .map(|((tau0, tau1), (ones, zeros))| PairCount { tau0, tau1, ones, zeros })
            .collect()
    }

    /// Line format: a `# H S A` comment, the header `tau0,tau1,o`, then one
    /// record per line with trajectories as space-separated `s a s a ...`.
    pub fn to_text(&self) -> String {
        let sp = &self.space;
        let mut out = format!("# H={} S={} A={}\ntau0,tau1,o\n", sp.horizon, sp.num_states, sp.num_actions);
        let fmt_traj = |idx: usize| {
            sp.decode(idx)
                .steps
                .iter()
                .map(|(s, a)| format!("{s} {a}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        for r in &self.records {
            out.push_str(&format!("{},{},{}\n", fmt_traj(r.tau0), fmt_traj(r.tau1), r.label as u8));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let head = lines.next().ok_or_else(|| Error::Parse("empty dataset file".into()))?;
        let space = parse_space_comment(head)?;
        if lines.next().map(str::trim) != Some("tau0,tau1,o") {
            return Err(Error::Parse("expected header tau0,tau1,o".into()));
        }
        let parse_traj = |field: &str| -> Result<usize> {
            let nums: Vec<usize> = field
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad index {t:?}"))))
                .collect::<Result<_>>()?;
            if nums.len() != 2 * space.horizon {
                return Err(Error::Parse(format!("trajectory {field:?} has wrong length")));
            }
            let steps: Vec<(usize, usize)> = nums.chunks(2).map(|c| (c[0], c[1])).collect();
            crate::mdp::Trajectory::new(steps.clone()).validate(&space)?;
            Ok(space.encode(&steps))
        };
        let mut records = Vec::new();
        for line in lines {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(Error::Parse(format!("expected 3 fields in {line:?}")));
            }
            let label = match fields[2].trim() {
                "0" => false,
                "1" => true,
                other => return Err(Error::Parse(format!("label must be 0 or 1, got {other:?}"))),
            };
            records.push(PreferenceRecord { tau0: parse_traj(fields[0])?, tau1: parse_traj(fields[1])?, label });
        }
        Self::new(space, records)
    }
}

fn parse_space_comment(line: &str) -> Result<TrajectorySpace> {
    let mut vals = [0usize; 3];
    let body = line.trim().strip_prefix('#').ok_or_else(|| Error::Parse("missing # H= S= A= line".into()))?;
    for (slot, key) in ["H=", "S=", "A="].iter().enumerate() {
        let tok = body
            .split_whitespace()
            .find_map(|t| t.strip_prefix(key))
            .ok_or_else(|| Error::Parse(format!("missing {key}")))?;
        vals[slot] = tok.parse().map_err(|_| Error::Parse(format!("bad value for {key}")))?;
    }
    Ok(TrajectorySpace::new(vals[0], vals[1], vals[2]))
}

/// Draws `n` labelled pairs with `τ⁰ ~ μ₀`, `τ¹ ~ μ₁` independently.
pub fn generate_preference_dataset<R: Rng>(
    mdp: &TabularMdp,
    reward: &RewardFunction,
    link: &Link,
    mu0: &TrajectoryDist,
    mu1: &TrajectoryDist,
    n: usize,
    rng: &mut R,
) -> Result<PreferenceDataset> {
    mu0.check_consistent(mdp)?;
    mu1.check_consistent(mdp)?;
    let space = mdp.space();
    let table = reward.to_table(&space, DEFAULT_ENUMERATION_CAP)?;
    let (s0, s1) = (mu0.sampler(), mu1.sampler());
    let records = (0..n)
        .map(|_| {
            let tau0 = s0.sample(rng);
            let tau1 = s1.sample(rng);
            let p = link.prob(table[tau1] - table[tau0]);
            PreferenceRecord { tau0, tau1, label: rng.gen::<f64>() < p }
        })
        .collect();
    let mut ds = PreferenceDataset::new(space, records)?;
    ds.mu0 = Some(mu0.clone());
    ds.mu1 = Some(mu1.clone());
    Ok(ds)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub state: usize,
    pub a0: usize,
    pub a1: usize,
    pub label: bool,
}

/// Per-step sampling law for action comparisons: `states[h][s]`,
/// `arm0[h][s][a]`, `arm1[h][s][a]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionSamplingLaw {
    pub states: Vec<Vec<f64>>,
    pub arm0: Vec<Vec<Vec<f64>>>,
    pub arm1: Vec<Vec<Vec<f64>>>,
}

impl ActionSamplingLaw {
    /// Given state laws with both arms uniform over actions.
    pub fn uniform_arms(states: Vec<Vec<f64>>, num_actions: usize) -> Self {
        let arm: Vec<Vec<Vec<f64>>> = states
            .iter()
            .map(|row| vec![vec![1.0 / num_actions as f64; num_actions]; row.len()])
            .collect();
        Self { states, arm0: arm.clone(), arm1: arm }
    }

    pub fn validate(&self, mdp: &TabularMdp) -> Result<()> {
        let (h, s, a) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
        let bad = |m: &str| Err(Error::InvalidParams(format!("action sampling law: {m}")));
        if self.states.len() != h || self.arm0.len() != h || self.arm1.len() != h {
            return bad("wrong number of steps");
        }
        let ok_simplex = |row: &[f64], n: usize| {
            row.len() == n && row.iter().all(|&p| p >= 0.0) && (row.iter().sum::<f64>() - 1.0).abs() <= 1e-10
        };
        for step in 0..h {
            if !ok_simplex(&self.states[step], s) {
                return bad("state law is not a distribution");
            }
            for arm in [&self.arm0[step], &self.arm1[step]] {
                if arm.len() != s || !arm.iter().all(|r| ok_simplex(r, a)) {
                    return bad("arm law is not a distribution");
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActionPreferenceDataset {
    pub num_states: usize,
    pub num_actions: usize,
    /// `steps[h]` holds the step-`h` records.
    pub steps: Vec<Vec<ActionRecord>>,
    pub law: Option<ActionSamplingLaw>,
}

impl ActionPreferenceDataset {
    pub fn new(num_states: usize, num_actions: usize, steps: Vec<Vec<ActionRecord>>) -> Result<Self> {
        if steps.is_empty() || steps.iter().any(Vec::is_empty) {
            return Err(Error::InvalidDataset("every step needs at least one record".into()));
        }
        let bad = steps
            .iter()
            .flatten()
            .any(|r| r.state >= num_states || r.a0 >= num_actions || r.a1 >= num_actions);
        if bad {
            return Err(Error::InvalidDataset("action record index out of range".into()));
        }
        Ok(Self { num_states, num_actions, steps, law: None })
    }

    /// Header `# S A`, then `h,s,a0,a1,o` lines.
    pub fn to_text(&self) -> String {
        let mut out = format!("# S={} A={}\nh,s,a0,a1,o\n", self.num_states, self.num_actions);
        for (h, recs) in self.steps.iter().enumerate() {
            for r in recs {
                out.push_str(&format!("{h},{},{},{},{}\n", r.state, r.a0, r.a1, r.label as u8));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let head = lines.next().ok_or_else(|| Error::Parse("empty dataset file".into()))?;
        let body = head.trim().strip_prefix('#').ok_or_else(|| Error::Parse("missing # S= A= line".into()))?;
        let field = |key: &str| -> Result<usize> {
            body.split_whitespace()
                .find_map(|t| t.strip_prefix(key))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Parse(format!("missing {key}")))
        };
        let (s_len, a_len) = (field("S=")?, field("A=")?);
        if lines.next().map(str::trim) != Some("h,s,a0,a1,o") {
            return Err(Error::Parse("expected header h,s,a0,a1,o".into()));
        }
        let mut steps: Vec<Vec<ActionRecord>> = Vec::new();
        for line in lines {
            let v: Vec<usize> = line
                .split(',')
                .map(|t| t.trim().parse().map_err(|_| Error::Parse(format!("bad field in {line:?}"))))
                .collect::<Result<_>>()?;
            if v.len() != 5 || v[4] > 1 {
                return Err(Error::Parse(format!("malformed record {line:?}")));
            }
            if steps.len() <= v[0] {
                steps.resize(v[0] + 1, Vec::new());
            }
            steps[v[0]].push(ActionRecord { state: v[1], a0: v[2], a1: v[3], label: v[4] == 1 });
        }
        Self::new(s_len, a_len, steps)
    }
}

/// Draws `n` comparisons per step, labelled through `Φ(Q*(s,a¹) - Q*(s,a⁰))`.
pub fn generate_action_dataset<R: Rng>(
    mdp: &TabularMdp,
    reward: &RewardFunction,
    link: &Link,
    law: &ActionSamplingLaw,
    n: usize,
    rng: &mut R,
) -> Result<ActionPreferenceDataset> {
    let values = optimal_values(mdp, reward)?;
    law.validate(mdp)?;
    let a_len = mdp.num_actions();
    let mut steps = Vec::with_capacity(mdp.horizon());
    for h in 0..mdp.horizon() {
        let states = WeightedIndex::new(&law.states[h]).map_err(|e| Error::InvalidParams(e.to_string()))?;
        let arm = |rows: &[Vec<f64>]| -> Vec<Option<WeightedIndex<f64>>> {
            rows.iter().map(|r| WeightedIndex::new(r).ok()).collect()
        };
        let (arm0, arm1) = (arm(&law.arm0[h]), arm(&law.arm1[h]));
        let mut recs = Vec::with_capacity(n);
        for _ in 0..n {
            let s = states.sample(rng);
            let a0 = arm0[s].as_ref().expect("visited state has an arm law").sample(rng);
            let a1 = arm1[s].as_ref().expect("visited state has an arm law").sample(rng);
            let p = action_pref_prob(link, &values.q[h][s * a_len..(s + 1) * a_len], a0, a1);
            recs.push(ActionRecord { state: s, a0, a1, label: rng.gen::<f64>() < p });
        }
        steps.push(recs);
    }
    let mut ds = ActionPreferenceDataset::new(mdp.num_states(), a_len, steps)?;
    ds.law = Some(law.clone());
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(1.0) - 0.7310585786300049).abs() < 1e-15);
        for x in [-30.0, -2.5, 0.3, 7.0] {
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn logit_identity() {
        let l = Link::Sigmoid;
        for x in [-5.0, -0.7, 0.0, 0.2, 3.3] {
            assert!((l.log_prob(x, true) - l.log_prob(x, false) - x).abs() < 1e-10);
        }
        assert!(l.log_prob(-1e6, true).is_finite());
    }

    #[test]
    fn kappa_values() {
        assert!((kappa(&Link::Sigmoid, 0.0).unwrap() - 4.0).abs() < 1e-12);
        let s1 = sigmoid(1.0);
        assert!((kappa(&Link::Sigmoid, 1.0).unwrap() - 1.0 / (s1 * (1.0 - s1))).abs() < 1e-9);
        assert!((kappa(&Link::Sigmoid, 1.0).unwrap() - 5.0862).abs() < 1e-4);
        let flat = Link::custom("flat", |_| 0.5, |_| 0.0);
        assert!(matches!(kappa(&flat, 1.0), Err(Error::DegenerateLink(_))));
    }

    #[test]
    fn custom_link_matches_sigmoid() {
        let l = Link::custom("logistic", sigmoid, |x| sigmoid(x) * (1.0 - sigmoid(x)));
        for x in [-2.0, 0.0, 1.5] {
            assert!((l.log_prob(x, true) - Link::Sigmoid.log_prob(x, true)).abs() < 1e-12);
            assert!((l.dlog_prob(x, false) - Link::Sigmoid.dlog_prob(x, false)).abs() < 1e-12);
        }
    }

    #[test]
    fn pref_prob_basics() {
        let space = TrajectorySpace::new(1, 1, 2);
        let r = RewardFunction::Trajectory { table: vec![0.0, 1.0] };
        let l = Link::Sigmoid;
        assert!((pref_prob(&l, &r, &space, 0, 1) - sigmoid(1.0)).abs() < 1e-15);
        assert_eq!(pref_prob(&l, &r, &space, 0, 1) + pref_prob(&l, &r, &space, 1, 0), 1.0);
        assert_eq!(pref_prob(&l, &r, &space, 1, 1), 0.5);
        assert_eq!(action_pref_prob(&l, &[0.3, -0.2], 1, 1), 0.5);
    }

    #[test]
    fn dataset_text_round_trip() {
        let mdp = TabularMdp::new(2, 2, 2, vec![0.5, 0.5], vec![vec![0.5; 8]], 1.0).unwrap();
        let mu = crate::mdp::trajectory_distribution(&mdp, &crate::mdp::Policy::uniform(&mdp), 100).unwrap();
        let r = RewardFunction::Trajectory { table: (0..16).map(|i| i as f64 / 16.0).collect() };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ds = generate_preference_dataset(&mdp, &r, &Link::Sigmoid, &mu, &mu, 50, &mut rng).unwrap();
        let back = PreferenceDataset::from_text(&ds.to_text()).unwrap();
        assert_eq!(back.records, ds.records);
        assert!(PreferenceDataset::from_text("# H=1 S=1 A=2\ntau0,tau1,o\n0 0,0 5,1\n").is_err());
    }

    #[test]
    fn seeded_generation_replays() {
        let mdp = TabularMdp::new(1, 1, 2, vec![1.0], vec![], 1.0).unwrap();
        let r = RewardFunction::StateAction { tables: vec![vec![0.2, 0.9]] };
        let law = ActionSamplingLaw::uniform_arms(vec![vec![1.0]], 2);
        let gen = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            generate_action_dataset(&mdp, &r, &Link::Sigmoid, &law, 30, &mut rng).unwrap()
        };
        assert_eq!(gen(4), gen(4));
        let text = gen(4).to_text();
        assert_eq!(ActionPreferenceDataset::from_text(&text).unwrap().steps, gen(4).steps);
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(PreferenceDataset::new(TrajectorySpace::new(1, 1, 2), vec![]).is_err());
    }
}
