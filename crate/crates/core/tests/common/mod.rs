#![allow(dead_code)]

pub mod props;

use freehand::mdp::{Policy, RewardFunction, TabularMdp, TrajectoryDist, TrajectorySpace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_mdp(rng: &mut ChaCha8Rng, h: usize, s: usize, a: usize) -> TabularMdp {
    TabularMdp::random(h, s, a, 1.0, rng)
}

/// Per-step rewards in `[0, r_max/H]`.
pub fn random_sa_reward(rng: &mut ChaCha8Rng, mdp: &TabularMdp) -> RewardFunction {
    let cap = mdp.r_max() / mdp.horizon() as f64;
    let pairs = mdp.num_states() * mdp.num_actions();
    RewardFunction::StateAction {
        tables: (0..mdp.horizon()).map(|_| (0..pairs).map(|_| rng.gen_range(0.0..=cap)).collect()).collect(),
    }
}

pub fn random_table(rng: &mut ChaCha8Rng, len: usize, r_max: f64) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(0.0..=r_max)).collect()
}

pub fn random_det(rng: &mut ChaCha8Rng, mdp: &TabularMdp) -> Policy {
    Policy::MarkovDeterministic {
        actions: (0..mdp.horizon())
            .map(|_| (0..mdp.num_states()).map(|_| rng.gen_range(0..mdp.num_actions())).collect())
            .collect(),
    }
}

pub fn random_stochastic(rng: &mut ChaCha8Rng, mdp: &TabularMdp) -> Policy {
    let a = mdp.num_actions();
    Policy::MarkovStochastic {
        probs: (0..mdp.horizon())
            .map(|_| {
                (0..mdp.num_states())
                    .map(|_| {
                        let w: Vec<f64> = (0..a).map(|_| rng.gen_range(0.05..1.0)).collect();
                        let t: f64 = w.iter().sum();
                        w.iter().map(|x| x / t).collect()
                    })
                    .collect()
            })
            .collect(),
    }
}

/// Random mixture charging every trajectory in `support`.
pub fn random_mixture(rng: &mut ChaCha8Rng, space: TrajectorySpace, support: &[usize]) -> TrajectoryDist {
    let w: Vec<f64> = support.iter().map(|_| rng.gen_range(0.1..1.0)).collect();
    let t: f64 = w.iter().sum();
    TrajectoryDist::new(space, support.iter().zip(&w).map(|(&i, x)| (i, x / t)).collect()).unwrap()
}

/// Perturbed copy of every transition step, mixing each row with a random
/// simplex point by weight `eps`.
pub fn perturb_transitions(rng: &mut ChaCha8Rng, mdp: &TabularMdp, eps: f64) -> TabularMdp {
    let s = mdp.num_states();
    let steps = mdp
        .transitions()
        .iter()
        .map(|t| {
            t.chunks(s)
                .flat_map(|row| {
                    let w: Vec<f64> = (0..s).map(|_| rng.gen_range(0.0..1.0)).collect();
                    let tot: f64 = w.iter().sum();
                    let mut out: Vec<f64> = row.iter().zip(&w).map(|(p, q)| (1.0 - eps) * p + eps * q / tot).collect();
                    let head: f64 = out[..s - 1].iter().sum();
                    out[s - 1] = 1.0 - head;
                    out
                })
                .collect()
        })
        .collect();
    mdp.with_transitions(steps).unwrap()
}
