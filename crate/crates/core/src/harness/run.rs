use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{Algorithm, ExperimentConfig, MuRef};
use super::derive_seed;
use super::instances::{build_advantage_classes, build_instance, build_reward_class, build_transition_classes, ExperimentInstance};
use crate::action::run_freehand_action;
use crate::confidence::{build_reward_confidence, build_transition_confidence};
use crate::error::{Error, Result};
use crate::mdp::{evaluate_policy, Policy, RewardFunction, TrajectoryDist, DEFAULT_ENUMERATION_CAP};
use crate::mle::fit_reward_mle;
use crate::planner::{greedy_plan, robust_plan_known, robust_plan_unknown};
use crate::preference::{generate_action_dataset, Link, PreferenceDataset};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// One `(N, rep)` cell of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultRow {
    pub config_hash: String,
    pub version: String,
    pub algorithm: String,
    pub n: usize,
    pub rep: usize,
    pub seed: u64,
    pub suboptimality: Option<f64>,
    pub covered: Option<bool>,
    pub robust_value: Option<f64>,
    pub policy_index: Option<usize>,
    pub target_value: Option<f64>,
    pub policy_value: Option<f64>,
    pub mu1_value: Option<f64>,
    /// Reward confidence-set slack, MLE log-likelihood and, for grid inner
    /// minimisation, the number of enumerated members.
    pub zeta: Option<f64>,
    pub mle_loglik: Option<f64>,
    pub set_members: Option<usize>,
    pub status: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
    /// Wall time per row in milliseconds, kept apart so `rows` replays
    /// byte-identically.
    pub wall_ms: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
struct CellOutcome {
    suboptimality: f64,
    covered: Option<bool>,
    robust_value: Option<f64>,
    policy_index: Option<usize>,
    target_value: f64,
    policy_value: f64,
    mu1_value: f64,
    zeta: Option<f64>,
    mle_loglik: Option<f64>,
    set_members: Option<usize>,
}

fn threads() -> Option<usize> {
    std::env::var("FREEHAND_THREADS").ok()?.parse().ok().filter(|&n| n > 0)
}

/// Runs every `(N, seed)` cell. Failed cells are recorded with their error
/// and never abort the sweep.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultTable> {
    cfg.validate()?;
    let inst = build_instance(&cfg.instance)?;
    let hash = cfg.hash();
    let algorithm = serde_json::to_value(cfg.algorithm)?.as_str().unwrap_or_default().to_string();
    let seeds = cfg.seeds.seeds();
    let cells: Vec<(usize, usize, u64)> = cfg
        .n_schedule
        .iter()
        .flat_map(|&n| seeds.iter().enumerate().map(move |(rep, &s)| (n, rep, s)))
        .collect();
    let work = || -> Vec<(ResultRow, f64)> {
        cells
            .par_iter()
            .map(|&(n, rep, seed)| {
                let start = Instant::now();
                let outcome = run_cell(cfg, &inst, n, seed);
                let ms = start.elapsed().as_secs_f64() * 1e3;
                let mut row = ResultRow {
                    config_hash: hash.clone(),
                    version: VERSION.into(),
                    algorithm: algorithm.clone(),
                    n,
                    rep,
                    seed,
                    suboptimality: None,
                    covered: None,
                    robust_value: None,
                    policy_index: None,
                    target_value: None,
                    policy_value: None,
                    mu1_value: None,
                    zeta: None,
                    mle_loglik: None,
                    set_members: None,
                    status: "ok".into(),
                };
                match outcome {
                    Ok(o) => {
                        row.suboptimality = Some(o.suboptimality);
                        row.covered = o.covered;
                        row.robust_value = o.robust_value;
                        row.policy_index = o.policy_index;
                        row.target_value = Some(o.target_value);
                        row.policy_value = Some(o.policy_value);
                        row.mu1_value = Some(o.mu1_value);
                        row.zeta = o.zeta;
                        row.mle_loglik = o.mle_loglik;
                        row.set_members = o.set_members;
                    }
                    Err(e) => row.status = format!("error: {e}"),
                }
                (row, ms)
            })
            .collect()
    };
    let out = match threads() {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::InvalidParams(e.to_string()))?
            .install(work),
        None => work(),
    };
    let (rows, wall_ms) = out.into_iter().unzip();
    Ok(ResultTable { rows, wall_ms })
}

/// Generates the cell's dataset from its derived stream.
pub fn cell_dataset(cfg: &ExperimentConfig, inst: &ExperimentInstance, n: usize, seed: u64) -> Result<PreferenceDataset> {
    inst.sample_preferences(&link(cfg)?, n, seed)
}

fn link(cfg: &ExperimentConfig) -> Result<Link> {
    match cfg.link.as_str() {
        "sigmoid" => Ok(Link::Sigmoid),
        other => Err(Error::InvalidParams(format!("unknown link {other}"))),
    }
}

pub fn reference_law(cfg: &ExperimentConfig, inst: &ExperimentInstance, ds: &PreferenceDataset) -> Result<TrajectoryDist> {
    match &cfg.mu_ref {
        MuRef::Mu1Empirical => Ok(ds.mu1_empirical()),
        MuRef::Mu1Exact => Ok(inst.mu1.clone()),
        MuRef::Custom(entries) => TrajectoryDist::new(inst.mdp.space(), entries.clone()),
    }
}

fn run_cell(cfg: &ExperimentConfig, inst: &ExperimentInstance, n: usize, seed: u64) -> Result<CellOutcome> {
    let cap = DEFAULT_ENUMERATION_CAP.min(cfg.plan.enumeration_cap);
    let link = link(cfg)?;
    let target_value = evaluate_policy(&inst.mdp, &inst.target, &inst.reward, cap)?;
    let mu1_value = match &inst.reward {
        RewardFunction::Trajectory { table } => inst.mu1.expect_table(table),
        r => {
            let space = inst.mdp.space();
            inst.mu1.expect(|i| r.value(&space, i))
        }
    };
    let score = |policy: &Policy| -> Result<(f64, f64)> {
        let v = evaluate_policy(&inst.mdp, policy, &inst.reward, cap)?;
        Ok((target_value - v, v))
    };
    let mut out = CellOutcome { target_value, mu1_value, ..Default::default() };
    match cfg.algorithm {
        Algorithm::FreehandAction => {
            let law = inst
                .action_law
                .as_ref()
                .ok_or_else(|| Error::InvalidParams("instance has no action sampling law".into()))?;
            let spec = cfg.advantage_class.as_ref().expect("validated");
            let classes = build_advantage_classes(spec, &inst.mdp, cfg.constants.c_geom);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, n as u64, 0));
            let ds = generate_action_dataset(&inst.mdp, &inst.reward, &link, law, n, &mut rng)?;
            let run = run_freehand_action(&inst.mdp, &inst.reward, &ds, &classes, &link, &cfg.mle)?;
            (out.suboptimality, out.policy_value) = score(&run.policy)?;
        }
        Algorithm::GreedyMleBaseline => {
            let class = build_reward_class(cfg.reward_class.as_ref().expect("validated"), inst, cfg.constants.c_geom)?;
            let ds = cell_dataset(cfg, inst, n, seed)?;
            let fit = fit_reward_mle(&class, &ds, &link, &cfg.mle)?;
            let (policy, index, _) = greedy_plan(&inst.mdp, &fit.model.table, cfg.plan.policy_kind, cfg.plan.policy_cap)?;
            out.policy_index = Some(index);
            (out.suboptimality, out.policy_value) = score(&policy)?;
        }
        Algorithm::Freehand | Algorithm::FreehandTransition => {
            let class = build_reward_class(cfg.reward_class.as_ref().expect("validated"), inst, cfg.constants.c_geom)?;
            let ds = cell_dataset(cfg, inst, n, seed)?;
            let set = build_reward_confidence(&ds, &class, &link, cfg.delta, cfg.constants.c_mle, &cfg.mle)?;
            let truth = inst.truth_table()?;
            let reward_covered = class.contains_truth(&inst.reward) && set.contains(&truth);
            let mu_ref = reference_law(cfg, inst, &ds)?;
            let result = if cfg.algorithm == Algorithm::Freehand {
                out.covered = Some(reward_covered);
                robust_plan_known(&inst.mdp, &set, &mu_ref, &cfg.plan)?
            } else {
                let spec = cfg.transition_class.as_ref().expect("validated");
                let classes = build_transition_classes(spec, &inst.mdp)?;
                let trans = build_transition_confidence(
                    &ds,
                    &classes,
                    cfg.delta,
                    cfg.constants.c_p,
                    cfg.transition_smoothing,
                    cfg.transition_scope,
                )?;
                out.covered = Some(reward_covered && trans.contains(&inst.mdp));
                robust_plan_unknown(&inst.mdp, &set, &trans, &mu_ref, &cfg.plan)?
            };
            out.robust_value = Some(result.value);
            out.zeta = Some(set.zeta);
            out.mle_loglik = Some(set.mle_loglik);
            out.set_members = result.diagnostics.members;
            out.policy_index = Some(result.policy_index);
            (out.suboptimality, out.policy_value) = score(&result.policy)?;
        }
    }
    Ok(out)
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(T::to_string).unwrap_or_default()
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub const RESULTS_HEADER: &str =
    "config_hash,version,algorithm,n,rep,seed,suboptimality,covered,robust_value,policy_index,target_value,policy_value,mu1_value,zeta,mle_loglik,set_members,status";

impl ResultTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(RESULTS_HEADER);
        out.push('\n');
        for r in &self.rows {
            let fields = [
                r.config_hash.clone(),
                r.version.clone(),
                r.algorithm.clone(),
                r.n.to_string(),
                r.rep.to_string(),
                r.seed.to_string(),
                opt(&r.suboptimality),
                opt(&r.covered),
                opt(&r.robust_value),
                opt(&r.policy_index),
                opt(&r.target_value),
                opt(&r.policy_value),
                opt(&r.mu1_value),
                opt(&r.zeta),
                opt(&r.mle_loglik),
                opt(&r.set_members),
                quote(&r.status),
            ];
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    pub fn timings_csv(&self) -> String {
        let mut out = String::from("config_hash,version,n,rep,seed,wall_ms\n");
        for (r, ms) in self.rows.iter().zip(&self.wall_ms) {
            out.push_str(&format!("{},{},{},{},{},{ms:.3}\n", r.config_hash, r.version, r.n, r.rep, r.seed));
        }
        out
    }

    /// `(N, suboptimality)` for successful cells.
    pub fn points(&self) -> Vec<(usize, f64)> {
        self.rows.iter().filter_map(|r| r.suboptimality.map(|s| (r.n, s))).collect()
    }

    /// Reads the `n` and `suboptimality` columns back from a results CSV.
    pub fn points_from_csv(text: &str) -> Result<Vec<(usize, f64)>> {
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().ok_or_else(|| Error::Parse("empty CSV".into()))?.split(',').collect();
        let col = |name: &str| {
            header.iter().position(|h| *h == name).ok_or_else(|| Error::Parse(format!("missing column {name}")))
        };
        let (ni, si) = (col("n")?, col("suboptimality")?);
        let mut pts = Vec::new();
        for (k, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            let get = |i: usize| f.get(i).copied().ok_or_else(|| Error::Parse(format!("row {}: short", k + 2)));
            let s = get(si)?;
            if s.is_empty() {
                continue;
            }
            let n = get(ni)?.parse().map_err(|_| Error::Parse(format!("row {}: bad n", k + 2)))?;
            let v = s.parse().map_err(|_| Error::Parse(format!("row {}: bad suboptimality", k + 2)))?;
            pts.push((n, v));
        }
        Ok(pts)
    }
}
