//! Maximum-likelihood fits for rewards, transitions and advantages.
//!
//! Every comparison likelihood here has the form `Σ log P(o | x)` where
//! each pair's argument `x` is an affine function of the parameters, so a
//! single concave objective type and one projected gradient solver serve
//! all three fits.

use serde::{Deserialize, Serialize};

use crate::classes::{norm, odometer, AdvantageClass, RewardClass, RewardModel, TransitionClass};
use crate::error::{Error, Result};
use crate::preference::{ActionPreferenceDataset, ActionRecord, Link, PreferenceDataset, LOG_PROB_FLOOR};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MleOptions {
    pub max_iters: usize,
    /// Tolerance on the gradient-mapping norm of the mean log-likelihood.
    pub grad_tol: f64,
    pub restarts: usize,
    pub initial_step: f64,
    /// Grids with at most this many members are scanned exhaustively.
    pub grid_cap: usize,
    pub keep_trace: bool,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self { max_iters: 20_000, grad_tol: 1e-8, restarts: 1, initial_step: 1.0, grid_cap: 1_000_000, keep_trace: false }
    }
}

impl MleOptions {
    fn check(&self) -> Result<()> {
        if self.max_iters == 0 || !(self.grad_tol > 0.0) || self.restarts == 0 {
            return Err(Error::InvalidParams("max_iters, grad_tol and restarts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub grad_norm: f64,
}

pub const TRACE_HEADER: &str = "iteration,objective,grad_norm";

pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut out = format!("{TRACE_HEADER}\n");
    for t in trace {
        out.push_str(&format!("{},{},{}\n", t.iteration, t.objective, t.grad_norm));
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub trace: Vec<TraceRow>,
}

/// Feasible region for the parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum Domain {
    Ball { radius: f64 },
    Box { lo: f64, hi: f64 },
    Free,
}

impl Domain {
    pub fn project(&self, x: &mut [f64]) {
        match *self {
            Domain::Ball { radius } => {
                let n = norm(x);
                if n > radius {
                    x.iter_mut().for_each(|v| *v *= radius / n);
                }
            }
            Domain::Box { lo, hi } => x.iter_mut().for_each(|v| *v = v.clamp(lo, hi)),
            Domain::Free => {}
        }
    }
}

const STALL_WINDOW: usize = 50;
const STALL_RTOL: f64 = 1e-14;

/// Projected gradient ascent with Barzilai-Borwein trial steps and
/// backtracking by halving. Stops when `‖x - P(x + ∇f(x))‖ ≤ grad_tol`.
/// If halving can no longer produce ascent, or the objective gains less
/// than `STALL_RTOL` (relative) over `STALL_WINDOW` iterations, the iterate
/// is at the limit of floating-point resolution and is returned as
/// converged.
pub fn maximize(
    f: &dyn Fn(&[f64]) -> (f64, Vec<f64>),
    domain: &Domain,
    x0: &[f64],
    opts: &MleOptions,
) -> Result<Solution> {
    opts.check()?;
    let mut x = x0.to_vec();
    domain.project(&mut x);
    let (mut fx, mut g) = f(&x);
    let mut step = opts.initial_step;
    let mut trace = Vec::new();
    let gm_norm = |x: &[f64], g: &[f64]| {
        let mut y: Vec<f64> = x.iter().zip(g).map(|(a, b)| a + b).collect();
        domain.project(&mut y);
        x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    };
    let mut anchor = fx;
    for it in 0..opts.max_iters {
        let gm = gm_norm(&x, &g);
        if opts.keep_trace {
            trace.push(TraceRow { iteration: it, objective: fx, grad_norm: gm });
        }
        if gm <= opts.grad_tol {
            return Ok(Solution { x, value: fx, iterations: it, grad_norm: gm, trace });
        }
        if it > 0 && it % STALL_WINDOW == 0 {
            if fx - anchor <= STALL_RTOL * (1.0 + fx.abs()) {
                return Ok(Solution { x, value: fx, iterations: it, grad_norm: gm, trace });
            }
            anchor = fx;
        }
        let mut accepted = None;
        for _ in 0..80 {
            let mut y: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + step * b).collect();
            domain.project(&mut y);
            let d: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
            let dd: f64 = d.iter().map(|v| v * v).sum();
            if dd == 0.0 {
                break;
            }
            let (fy, gy) = f(&y);
            let model = fx + crate::mdp::dot(&g, &d) - dd / (2.0 * step);
            if fy >= model && fy.is_finite() {
                accepted = Some((y, fy, gy, d));
                break;
            }
            step *= 0.5;
        }
        let Some((y, fy, gy, d)) = accepted else {
            return Ok(Solution { x, value: fx, iterations: it, grad_norm: gm, trace });
        };
        let dg: f64 = d.iter().zip(gy.iter().zip(&g)).map(|(s, (a, b))| s * (a - b)).sum();
        let ss: f64 = d.iter().map(|v| v * v).sum();
        step = if dg < 0.0 { (ss / -dg).clamp(1e-12, 1e12) } else { (step * 2.0).min(1e12) };
        x = y;
        fx = fy;
        g = gy;
    }
    let gm = gm_norm(&x, &g);
    if gm <= opts.grad_tol {
        Ok(Solution { x, value: fx, iterations: opts.max_iters, grad_norm: gm, trace })
    } else {
        Err(Error::DidNotConverge { iters: opts.max_iters, grad_norm: gm })
    }
}

/// One aggregated comparison: argument `Σ coef·θ + offset` with label counts.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinePair {
    pub coef: Vec<(usize, f64)>,
    pub offset: f64,
    pub ones: f64,
    pub zeros: f64,
}

/// `Σ_pairs ones·log Φ(x) + zeros·log(1 - Φ(x))` over affine arguments.
#[derive(Clone, Debug)]
pub struct ComparisonObjective {
    pub dim: usize,
    pub pairs: Vec<AffinePair>,
    pub link: Link,
    pub count: f64,
}

impl ComparisonObjective {
    fn arg(&self, p: &AffinePair, x: &[f64]) -> f64 {
        p.offset + p.coef.iter().map(|&(i, c)| c * x[i]).sum::<f64>()
    }

    pub fn loglik(&self, x: &[f64]) -> f64 {
        self.pairs
            .iter()
            .map(|p| {
                let z = self.arg(p, x);
                let mut v = 0.0;
                if p.ones > 0.0 {
                    v += p.ones * self.link.log_prob(z, true);
                }
                if p.zeros > 0.0 {
                    v += p.zeros * self.link.log_prob(z, false);
                }
                v
            })
            .sum()
    }

    pub fn loglik_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let mut g = vec![0.0; self.dim];
        let mut total = 0.0;
        for p in &self.pairs {
            let z = self.arg(p, x);
            let mut w = 0.0;
            if p.ones > 0.0 {
                total += p.ones * self.link.log_prob(z, true);
                w += p.ones * self.link.dlog_prob(z, true);
            }
            if p.zeros > 0.0 {
                total += p.zeros * self.link.log_prob(z, false);
                w += p.zeros * self.link.dlog_prob(z, false);
            }
            for &(i, c) in &p.coef {
                g[i] += w * c;
            }
        }
        (total, g)
    }

    /// Maximise `(ℓ(x) - t·⟨c, x⟩) / count` over the domain.
    pub fn maximize_penalized(&self, c: &[f64], t: f64, domain: &Domain, x0: &[f64], opts: &MleOptions) -> Result<Solution> {
        let scale = 1.0 / self.count.max(1.0);
        let f = |x: &[f64]| {
            let (v, mut g) = self.loglik_grad(x);
            g.iter_mut().zip(c).for_each(|(gi, ci)| *gi = (*gi - t * ci) * scale);
            ((v - t * crate::mdp::dot(c, x)) * scale, g)
        };
        maximize(&f, domain, x0, opts)
    }

    pub fn maximize_loglik(&self, domain: &Domain, x0: &[f64], opts: &MleOptions) -> Result<Solution> {
        let zero = vec![0.0; self.dim];
        self.maximize_penalized(&zero, 0.0, domain, x0, opts)
    }
}

/// Affine reward-difference objective for a reward class.
pub fn reward_objective(class: &RewardClass, dataset: &PreferenceDataset, link: &Link) -> ComparisonObjective {
    let pairs = dataset
        .pair_counts()
        .into_iter()
        .map(|pc| {
            let (coef, offset) = match class {
                RewardClass::TabularGrid(g) => {
                    let pos = |t: usize| g.support.iter().position(|&i| i == t);
                    let mut coef = Vec::new();
                    let mut offset = 0.0;
                    if pc.tau0 != pc.tau1 {
                        match pos(pc.tau1) {
                            Some(i) => coef.push((i, 1.0)),
                            None => offset += g.fill,
                        }
                        match pos(pc.tau0) {
                            Some(i) => coef.push((i, -1.0)),
                            None => offset -= g.fill,
                        }
                    }
                    (coef, offset)
                }
                RewardClass::Linear(l) => {
                    let coef = l.features[pc.tau1]
                        .iter()
                        .zip(&l.features[pc.tau0])
                        .enumerate()
                        .filter_map(|(i, (a, b))| (a != b).then_some((i, a - b)))
                        .collect();
                    (coef, 0.0)
                }
            };
            AffinePair { coef, offset, ones: pc.ones, zeros: pc.zeros }
        })
        .collect();
    ComparisonObjective { dim: class.num_params(), pairs, link: link.clone(), count: dataset.len() as f64 }
}

/// Parameter domain used by continuous solvers for a reward class.
pub fn reward_domain(class: &RewardClass) -> Domain {
    match class {
        RewardClass::TabularGrid(g) => Domain::Box { lo: 0.0, hi: g.r_max },
        RewardClass::Linear(l) => Domain::Ball { radius: l.radius },
    }
}

/// `Σ_n log P_r(o^n | τ^{n,0}, τ^{n,1})`, summed record by record.
pub fn loglik_reward(table: &[f64], dataset: &PreferenceDataset, link: &Link) -> f64 {
    dataset
        .records
        .iter()
        .map(|r| link.log_prob(table[r.tau1] - table[r.tau0], r.label))
        .sum()
}

/// Gradient of `loglik_reward` with respect to every table entry.
pub fn loglik_reward_gradient(table: &[f64], dataset: &PreferenceDataset, link: &Link) -> Vec<f64> {
    let mut g = vec![0.0; table.len()];
    for r in &dataset.records {
        let w = link.dlog_prob(table[r.tau1] - table[r.tau0], r.label);
        g[r.tau1] += w;
        g[r.tau0] -= w;
    }
    g
}

#[derive(Clone, Debug, PartialEq)]
pub struct RewardFit {
    pub model: RewardModel,
    pub loglik: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub trace: Vec<TraceRow>,
}

/// Exhaustive scan over `levels^dim` points, first maximiser wins.
fn grid_scan(obj: &ComparisonObjective, levels: &[f64]) -> (Vec<f64>, f64) {
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    for digits in odometer(obj.dim, levels.len()) {
        let x: Vec<f64> = digits.iter().map(|&k| levels[k]).collect();
        let v = obj.loglik(&x);
        if v > best.1 {
            best = (x, v);
        }
    }
    best
}

/// Coordinate search over neighbouring grid levels until no single move
/// improves the likelihood.
fn grid_polish(obj: &ComparisonObjective, levels: &[f64], x: &mut [f64]) -> f64 {
    let idx_of = |v: f64| {
        levels
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - v).abs().partial_cmp(&(b.1 - v).abs()).expect("finite"))
            .map(|e| e.0)
            .expect("levels nonempty")
    };
    let mut ks: Vec<usize> = x.iter().map(|&v| idx_of(v)).collect();
    for (xi, &k) in x.iter_mut().zip(&ks) {
        *xi = levels[k];
    }
    let mut best = obj.loglik(x);
    loop {
        let mut improved = false;
        for i in 0..x.len() {
            for k in [ks[i].wrapping_sub(1), ks[i] + 1] {
                if k >= levels.len() {
                    continue;
                }
                let old = x[i];
                x[i] = levels[k];
                let v = obj.loglik(x);
                if v > best {
                    best = v;
                    ks[i] = k;
                    improved = true;
                } else {
                    x[i] = old;
                }
            }
        }
        if !improved {
            return best;
        }
    }
}

fn solve_with_restarts(obj: &ComparisonObjective, domain: &Domain, opts: &MleOptions) -> Result<Solution> {
    let mut best: Option<Solution> = None;
    for k in 0..opts.restarts {
        let mut x0 = vec![0.0; obj.dim];
        if k > 0 && obj.dim > 0 {
            x0[(k - 1) % obj.dim] = match *domain {
                Domain::Ball { radius } => radius * 0.5,
                Domain::Box { lo, hi } => lo + (hi - lo) * 0.5,
                Domain::Free => 1.0,
            };
        }
        let sol = obj.maximize_loglik(domain, &x0, opts)?;
        if best.as_ref().map_or(true, |b| sol.value > b.value) {
            best = Some(sol);
        }
    }
    Ok(best.expect("at least one restart"))
}

pub fn fit_reward_mle(class: &RewardClass, dataset: &PreferenceDataset, link: &Link, opts: &MleOptions) -> Result<RewardFit> {
    opts.check()?;
    if dataset.is_empty() {
        return Err(Error::InvalidDataset("empty dataset".into()));
    }
    let obj = reward_objective(class, dataset, link);
    match class {
        RewardClass::TabularGrid(g) => {
            let levels = g.levels();
            if g.member_count() <= opts.grid_cap as f64 {
                let (x, loglik) = grid_scan(&obj, &levels);
                return Ok(RewardFit { model: class.model(x), loglik, iterations: 0, grad_norm: 0.0, trace: vec![] });
            }
            let sol = solve_with_restarts(&obj, &reward_domain(class), opts)?;
            let mut x = sol.x.clone();
            let closed = dataset.records.iter().all(|r| g.support.contains(&r.tau0) && g.support.contains(&r.tau1));
            if closed {
                let min = x.iter().copied().fold(f64::INFINITY, f64::min);
                x.iter_mut().for_each(|v| *v -= min);
            }
            let loglik = grid_polish(&obj, &levels, &mut x);
            Ok(RewardFit { model: class.model(x), loglik, iterations: sol.iterations, grad_norm: sol.grad_norm, trace: sol.trace })
        }
        RewardClass::Linear(_) => {
            let sol = solve_with_restarts(&obj, &reward_domain(class), opts)?;
            let loglik = obj.loglik(&sol.x);
            Ok(RewardFit { model: class.model(sol.x), loglik, iterations: sol.iterations, grad_norm: sol.grad_norm, trace: sol.trace })
        }
    }
}

/// Transition counts at step `h` from both arms, `[(s*A + a)*S + s']`.
pub fn transition_counts(dataset: &PreferenceDataset, h: usize) -> Vec<f64> {
    let sp = &dataset.space;
    let mut counts = vec![0.0; sp.pairs() * sp.num_states];
    for r in &dataset.records {
        for tau in [r.tau0, r.tau1] {
            let (s, a) = sp.step(tau, h);
            let (next, _) = sp.step(tau, h + 1);
            counts[(s * sp.num_actions + a) * sp.num_states + next] += 1.0;
        }
    }
    counts
}

/// `Σ n(s,a,s') log P(s'|s,a)` with the log clamp.
pub fn transition_loglik(table: &[f64], counts: &[f64]) -> f64 {
    table
        .iter()
        .zip(counts)
        .filter(|(_, &n)| n > 0.0)
        .map(|(&p, &n)| n * p.max(LOG_PROB_FLOOR).ln())
        .sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransitionFit {
    pub table: Vec<f64>,
    pub loglik: f64,
    pub counts: Vec<f64>,
}

/// Empirical frequencies with additive smoothing (unvisited rows uniform)
/// for the full simplex, exact argmax for candidate lists.
pub fn fit_transition_mle(class: &TransitionClass, dataset: &PreferenceDataset, h: usize, smoothing: f64) -> Result<TransitionFit> {
    let sp = &dataset.space;
    if h + 1 >= sp.horizon {
        return Err(Error::InvalidParams(format!("no transition after step {h}")));
    }
    if class.shape() != (sp.num_states, sp.num_actions) {
        return Err(Error::InvalidParams("transition class shape differs from the data".into()));
    }
    let counts = transition_counts(dataset, h);
    let s_len = sp.num_states;
    let table = match class {
        TransitionClass::FullSimplex { .. } => counts
            .chunks(s_len)
            .flat_map(|row| {
                let total: f64 = row.iter().sum::<f64>() + smoothing * s_len as f64;
                if total > 0.0 {
                    row.iter().map(|&n| (n + smoothing) / total).collect::<Vec<_>>()
                } else {
                    vec![1.0 / s_len as f64; s_len]
                }
            })
            .collect(),
        TransitionClass::Candidates { tables, .. } => {
            let mut best = (0, f64::NEG_INFINITY);
            for (i, t) in tables.iter().enumerate() {
                let v = transition_loglik(t, &counts);
                if v > best.1 {
                    best = (i, v);
                }
            }
            tables
                .get(best.0)
                .cloned()
                .ok_or_else(|| Error::InvalidParams("empty candidate list".into()))?
        }
    };
    let loglik = transition_loglik(&table, &counts);
    Ok(TransitionFit { table, loglik, counts })
}

/// Per-step advantage comparison objective over the full `S·A` table, or
/// over `θ` for linear classes.
pub fn advantage_objective(class: &AdvantageClass, records: &[ActionRecord], link: &Link) -> ComparisonObjective {
    let (_, a_len) = class.shape();
    let mut agg: std::collections::BTreeMap<(usize, usize, usize), (f64, f64)> = Default::default();
    for r in records {
        let e = agg.entry((r.state, r.a0, r.a1)).or_insert((0.0, 0.0));
        if r.label {
            e.0 += 1.0;
        } else {
            e.1 += 1.0;
        }
    }
    let pairs = agg
        .into_iter()
        .map(|((s, a0, a1), (ones, zeros))| {
            let coef = if a0 == a1 {
                Vec::new()
            } else {
                match class {
                    AdvantageClass::TabularGrid { .. } => vec![(s * a_len + a1, 1.0), (s * a_len + a0, -1.0)],
                    AdvantageClass::Linear { features, .. } => features[s * a_len + a1]
                        .iter()
                        .zip(&features[s * a_len + a0])
                        .enumerate()
                        .filter_map(|(i, (x, y))| (x != y).then_some((i, x - y)))
                        .collect(),
                }
            };
            AffinePair { coef, offset: 0.0, ones, zeros }
        })
        .collect();
    let dim = match class {
        AdvantageClass::TabularGrid { num_states, num_actions, .. } => num_states * num_actions,
        AdvantageClass::Linear { features, .. } => features[0].len(),
    };
    ComparisonObjective { dim, pairs, link: link.clone(), count: records.len() as f64 }
}

/// Subtract the row maximum so that `max_a A(s, a) = 0` for every state.
pub fn gauge_fix(table: &mut [f64], num_actions: usize) {
    for row in table.chunks_mut(num_actions) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.iter_mut().for_each(|v| *v -= m);
    }
}

/// Per-step advantage MLE, returned gauge-fixed, `[h][s * A + a]`.
/// Tabular grids decouple across states, so each state's row is scanned
/// exhaustively when `levels^A` fits the grid cap.
pub fn fit_advantage_mle(
    classes: &[AdvantageClass],
    dataset: &ActionPreferenceDataset,
    link: &Link,
    opts: &MleOptions,
) -> Result<Vec<Vec<f64>>> {
    opts.check()?;
    if classes.len() != dataset.steps.len() {
        return Err(Error::InvalidParams("one advantage class per step is required".into()));
    }
    let a_len = dataset.num_actions;
    let mut out = Vec::with_capacity(classes.len());
    for (class, records) in classes.iter().zip(&dataset.steps) {
        if records.is_empty() {
            return Err(Error::InvalidDataset("empty step in action dataset".into()));
        }
        if class.shape() != (dataset.num_states, a_len) {
            return Err(Error::InvalidParams("advantage class shape differs from the data".into()));
        }
        let mut table = match class {
            AdvantageClass::TabularGrid { .. } => {
                let levels = class.levels();
                let mut table = vec![0.0; dataset.num_states * a_len];
                for s in 0..dataset.num_states {
                    let local: Vec<ActionRecord> = records
                        .iter()
                        .filter(|r| r.state == s)
                        .map(|r| ActionRecord { state: 0, ..*r })
                        .collect();
                    let one_state = AdvantageClass::TabularGrid {
                        num_states: 1,
                        num_actions: a_len,
                        spacing: 1.0,
                        b_max: class.b_max(),
                    };
                    let obj = advantage_objective(&one_state, &local, link);
                    let row = if (levels.len() as f64).powi(a_len as i32) <= opts.grid_cap as f64 {
                        grid_scan(&obj, &levels).0
                    } else {
                        let b = class.b_max();
                        let mut x = obj.maximize_loglik(&Domain::Box { lo: -b, hi: b }, &vec![0.0; a_len], opts)?.x;
                        grid_polish(&obj, &levels, &mut x);
                        x
                    };
                    table[s * a_len..(s + 1) * a_len].copy_from_slice(&row);
                }
                table
            }
            AdvantageClass::Linear { features, radius, .. } => {
                let obj = advantage_objective(class, records, link);
                let sol = solve_with_restarts(&obj, &Domain::Ball { radius: *radius }, opts)?;
                AdvantageClass::linear_table(features, &sol.x)
            }
        };
        gauge_fix(&mut table, a_len);
        out.push(table);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classes::{LinearClass, TabularGrid};
    use crate::mdp::TrajectorySpace;
    use crate::preference::PreferenceRecord;

    fn two_arm(records: Vec<(usize, usize, bool)>) -> PreferenceDataset {
        let recs = records.into_iter().map(|(tau0, tau1, label)| PreferenceRecord { tau0, tau1, label }).collect();
        PreferenceDataset::new(TrajectorySpace::new(1, 1, 2), recs).unwrap()
    }

    #[test]
    fn constant_reward_loglik() {
        let ds = two_arm(vec![(0, 1, true)]);
        assert!((loglik_reward(&[0.3, 0.3], &ds, &Link::Sigmoid) - 0.5f64.ln()).abs() < 1e-15);
        let double = two_arm(vec![(0, 1, true), (0, 1, true)]);
        assert_eq!(loglik_reward(&[0.1, 0.7], &double, &Link::Sigmoid), 2.0 * loglik_reward(&[0.1, 0.7], &ds, &Link::Sigmoid));
    }

    #[test]
    fn always_preferred_picks_largest_margin() {
        let space = TrajectorySpace::new(1, 1, 2);
        let class = RewardClass::TabularGrid(TabularGrid::new(space, vec![1], 1.0, 1.0, 0.5).unwrap());
        let ds = two_arm(vec![(0, 1, true); 10]);
        let fit = fit_reward_mle(&class, &ds, &Link::Sigmoid, &MleOptions::default()).unwrap();
        assert_eq!(fit.model.table, vec![0.5, 1.0]);
    }

    #[test]
    fn symmetric_data_gives_zero_difference() {
        let space = TrajectorySpace::new(1, 1, 2);
        let class = RewardClass::Linear(LinearClass::new(space, vec![vec![0.0], vec![1.0]], 2.0, 1.0).unwrap());
        let ds = two_arm(vec![(0, 1, true), (0, 1, false), (1, 0, true), (1, 0, false)]);
        let fit = fit_reward_mle(&class, &ds, &Link::Sigmoid, &MleOptions::default()).unwrap();
        assert!((fit.model.table[1] - fit.model.table[0]).abs() < 1e-7);
    }

    #[test]
    fn ninety_percent_gap() {
        let mut recs: Vec<ActionRecord> = Vec::new();
        for i in 0..10_000 {
            recs.push(ActionRecord { state: 0, a0: 0, a1: 1, label: i % 10 != 0 });
        }
        let ds = ActionPreferenceDataset::new(1, 2, vec![recs]).unwrap();
        let class = AdvantageClass::TabularGrid { num_states: 1, num_actions: 2, spacing: 0.001, b_max: 3.0 };
        let a = fit_advantage_mle(&[class], &ds, &Link::Sigmoid, &MleOptions::default()).unwrap();
        let gap = a[0][1] - a[0][0];
        assert!((gap - 9f64.ln()).abs() < 0.15, "gap {gap}");
        assert_eq!(a[0][1], 0.0);
    }

    #[test]
    fn unvisited_rows_are_uniform() {
        let space = TrajectorySpace::new(2, 2, 1);
        let recs = vec![PreferenceRecord { tau0: space.encode(&[(0, 0), (1, 0)]), tau1: space.encode(&[(0, 0), (1, 0)]), label: true }];
        let ds = PreferenceDataset::new(space, recs).unwrap();
        let fit = fit_transition_mle(&TransitionClass::FullSimplex { num_states: 2, num_actions: 1 }, &ds, 0, 0.0).unwrap();
        assert_eq!(fit.table, vec![0.0, 1.0, 0.5, 0.5]);
        assert_eq!(fit.counts, vec![0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn solver_reports_nonconvergence() {
        let f = |x: &[f64]| (-(x[0] - 3.0).powi(2), vec![-2.0 * (x[0] - 3.0)]);
        let opts = MleOptions { max_iters: 1, initial_step: 1e-6, ..Default::default() };
        assert!(matches!(maximize(&f, &Domain::Free, &[0.0], &opts), Err(Error::DidNotConverge { .. })));
        let sol = maximize(&f, &Domain::Box { lo: -1.0, hi: 1.0 }, &[0.0], &MleOptions::default()).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-12);
    }
}
