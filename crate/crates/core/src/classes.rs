//! Reward, transition and advantage function classes with complexity
//! accounting and member enumeration.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{too_large, Error, Result};
use crate::mdp::{RewardFunction, TrajectorySpace, SIMPLEX_TOL};

/// Ball-covering constant in `log N(ε) = d log(BR/ε) + d log(c_geom)`.
pub const DEFAULT_C_GEOM: f64 = 3.0;
/// Relative tolerance when deciding whether a value sits on a grid point.
pub const GRID_SNAP_TOL: f64 = 1e-9;
/// Slack for boundedness checks on emitted members.
pub const BOUND_TOL: f64 = 1e-9;

fn default_c_geom() -> f64 {
    DEFAULT_C_GEOM
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidEpsilon(eps))
    }
}

/// A member of a reward class: its parameters and dense trajectory table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardModel {
    pub params: Vec<f64>,
    pub table: Vec<f64>,
}

impl RewardModel {
    pub fn to_function(&self) -> RewardFunction {
        RewardFunction::Trajectory { table: self.table.clone() }
    }
}

/// Uniform grid `{0, g, 2g, ...} ∩ [0, r_max]` on the trajectories listed in
/// `support`; every other trajectory is pinned at `fill`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularGrid {
    pub space: TrajectorySpace,
    pub support: Vec<usize>,
    pub spacing: f64,
    pub r_max: f64,
    #[serde(default)]
    pub fill: f64,
}

impl TabularGrid {
    pub fn new(space: TrajectorySpace, support: Vec<usize>, spacing: f64, r_max: f64, fill: f64) -> Result<Self> {
        if !(spacing > 0.0) || !(r_max >= 0.0) {
            return Err(Error::InvalidParams("grid spacing must be positive and r_max nonnegative".into()));
        }
        if !(0.0..=r_max).contains(&fill) {
            return Err(Error::InvalidParams("fill value outside [0, r_max]".into()));
        }
        let mut sorted = support.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != support.len() || support.iter().any(|&i| i as f64 >= space.count()) {
            return Err(Error::InvalidParams("support must list distinct in-range trajectories".into()));
        }
        Ok(Self { space, support, spacing, r_max, fill })
    }

    /// Grid over every trajectory.
    pub fn full(space: TrajectorySpace, spacing: f64, r_max: f64, cap: usize) -> Result<Self> {
        Self::new(space, (0..space.size(cap)?).collect(), spacing, r_max, 0.0)
    }

    pub fn levels(&self) -> Vec<f64> {
        let k = (self.r_max / self.spacing * (1.0 + GRID_SNAP_TOL)).floor() as usize;
        (0..=k).map(|i| i as f64 * self.spacing).collect()
    }

    pub fn member_count(&self) -> f64 {
        (self.levels().len() as f64).powi(self.support.len() as i32)
    }

    pub fn table(&self, values: &[f64]) -> Vec<f64> {
        let n = self.space.count() as usize;
        let mut t = vec![self.fill; n];
        for (&i, &v) in self.support.iter().zip(values) {
            t[i] = v;
        }
        t
    }

    fn on_grid(&self, v: f64) -> bool {
        let k = (v / self.spacing).round();
        k >= 0.0 && (v - k * self.spacing).abs() <= GRID_SNAP_TOL * self.spacing.max(1.0) && v <= self.r_max + BOUND_TOL
    }

    /// Nearest grid value.
    pub fn snap(&self, v: f64) -> f64 {
        let levels = self.levels();
        let k = (v / self.spacing).round().clamp(0.0, (levels.len() - 1) as f64);
        levels[k as usize]
    }
}

/// `r(τ) = ⟨φ(τ), θ⟩` with `‖θ‖₂ ≤ radius`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearClass {
    pub space: TrajectorySpace,
    /// `features[τ]` for every trajectory index.
    pub features: Vec<Vec<f64>>,
    pub radius: f64,
    pub r_max: f64,
    #[serde(default = "default_c_geom")]
    pub c_geom: f64,
}

impl LinearClass {
    pub fn new(space: TrajectorySpace, features: Vec<Vec<f64>>, radius: f64, r_max: f64) -> Result<Self> {
        let d = features.first().map(Vec::len).unwrap_or(0);
        if features.len() as f64 != space.count() || d == 0 || features.iter().any(|f| f.len() != d) {
            return Err(Error::InvalidParams("need one feature vector of common dimension per trajectory".into()));
        }
        if !(radius > 0.0) {
            return Err(Error::InvalidParams("parameter radius must be positive".into()));
        }
        Ok(Self { space, features, radius, r_max, c_geom: DEFAULT_C_GEOM })
    }

    /// Indicator features, one per trajectory, with the smallest ball that
    /// holds every table in `[0, r_max]`.
    pub fn one_hot(space: TrajectorySpace, r_max: f64, cap: usize) -> Result<Self> {
        let n = space.size(cap)?;
        let features = (0..n).map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect()).collect();
        Self::new(space, features, r_max * (n as f64).sqrt(), r_max)
    }

    pub fn dim(&self) -> usize {
        self.features[0].len()
    }

    /// `R = max_τ ‖φ(τ)‖₂`.
    pub fn feature_bound(&self) -> f64 {
        self.features.iter().map(|f| norm(f)).fold(0.0, f64::max)
    }

    pub fn table(&self, theta: &[f64]) -> Vec<f64> {
        self.features.iter().map(|f| crate::mdp::dot(f, theta)).collect()
    }

    pub fn in_range(&self, table: &[f64]) -> bool {
        table.iter().all(|&v| v >= -BOUND_TOL && v <= self.r_max + BOUND_TOL)
    }

    /// Minimum-norm least-squares parameter for a target table.
    pub fn recover(&self, target: &[f64]) -> Option<(Vec<f64>, f64)> {
        let n = self.features.len();
        let phi = DMatrix::from_fn(n, self.dim(), |i, j| self.features[i][j]);
        let y = DVector::from_column_slice(target);
        let theta = phi.clone().svd(true, true).solve(&y, 1e-12).ok()?;
        let resid = (&phi * &theta - y).amax();
        Some((theta.iter().copied().collect(), resid))
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Deterministic ε-net of the radius-`radius` ball in `d` dimensions: the
/// cubic lattice of spacing `2ε/√d` inside the `(radius + ε)` ball,
/// projected radially onto the ball. Every ball point is within `ε` of a
/// net point because projection onto a convex set is nonexpansive.
pub fn ball_net(d: usize, radius: f64, eps: f64, cap: usize) -> Result<Vec<Vec<f64>>> {
    if !(eps > 0.0) {
        return Err(Error::InvalidEpsilon(eps));
    }
    let step = 2.0 * eps / (d as f64).sqrt();
    let k_max = ((radius + eps) / step).floor() as i64;
    let per_axis = (2 * k_max + 1) as f64;
    let count = per_axis.powi(d as i32);
    if count > cap as f64 {
        return Err(too_large("epsilon-net lattice points", count, cap));
    }
    let mut out = Vec::new();
    let mut idx = vec![-k_max; d];
    loop {
        let p: Vec<f64> = idx.iter().map(|&k| k as f64 * step).collect();
        let n = norm(&p);
        if n <= radius + eps {
            if n > radius {
                out.push(p.iter().map(|v| v * radius / n).collect());
            } else {
                out.push(p);
            }
        }
        let mut pos = d;
        loop {
            if pos == 0 {
                out.sort_by(|a: &Vec<f64>, b| a.partial_cmp(b).expect("finite"));
                out.dedup();
                return Ok(out);
            }
            pos -= 1;
            if idx[pos] < k_max {
                idx[pos] += 1;
                break;
            }
            idx[pos] = -k_max;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardClass {
    TabularGrid(TabularGrid),
    Linear(LinearClass),
}

impl RewardClass {
    pub fn space(&self) -> TrajectorySpace {
        match self {
            RewardClass::TabularGrid(g) => g.space,
            RewardClass::Linear(l) => l.space,
        }
    }

    pub fn r_max(&self) -> f64 {
        match self {
            RewardClass::TabularGrid(g) => g.r_max,
            RewardClass::Linear(l) => l.r_max,
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            RewardClass::TabularGrid(g) => g.support.len(),
            RewardClass::Linear(l) => l.dim(),
        }
    }

    pub fn model(&self, params: Vec<f64>) -> RewardModel {
        let table = match self {
            RewardClass::TabularGrid(g) => g.table(&params),
            RewardClass::Linear(l) => l.table(&params),
        };
        RewardModel { params, table }
    }

    pub fn log_bracket_number(&self, eps: f64) -> Result<f64> {
        check_eps(eps)?;
        Ok(match self {
            RewardClass::TabularGrid(g) => g.support.len() as f64 * (g.levels().len() as f64).ln(),
            RewardClass::Linear(l) => {
                let d = l.dim() as f64;
                d * (l.radius * l.feature_bound() / eps).ln() + d * l.c_geom.ln()
            }
        })
    }

    /// Exact membership for grids; parameter recovery for linear classes.
    pub fn contains_truth(&self, truth: &RewardFunction) -> bool {
        let space = self.space();
        let Ok(table) = truth.to_table(&space, crate::mdp::DEFAULT_ENUMERATION_CAP) else {
            return false;
        };
        if table.len() as f64 != space.count() {
            return false;
        }
        match self {
            RewardClass::TabularGrid(g) => {
                let mut on_support = vec![false; table.len()];
                for &i in &g.support {
                    on_support[i] = true;
                }
                table.iter().enumerate().all(|(i, &v)| {
                    if on_support[i] {
                        g.on_grid(v)
                    } else {
                        (v - g.fill).abs() <= SIMPLEX_TOL
                    }
                })
            }
            RewardClass::Linear(l) => match l.recover(&table) {
                Some((theta, resid)) => resid <= 1e-9 && norm(&theta) <= l.radius + BOUND_TOL,
                None => false,
            },
        }
    }

    /// All grid members (lexicographic in the support values, lowest first),
    /// or an ε-net of the linear parameter ball restricted to members whose
    /// tables lie in `[0, r_max]`.
    pub fn enumerate_members(&self, resolution: f64, cap: usize) -> Result<Vec<RewardModel>> {
        match self {
            RewardClass::TabularGrid(g) => {
                let count = g.member_count();
                if count > cap as f64 {
                    return Err(too_large("reward class members", count, cap));
                }
                let levels = g.levels();
                Ok(odometer(g.support.len(), levels.len())
                    .map(|digits| self.model(digits.iter().map(|&k| levels[k]).collect()))
                    .collect())
            }
            RewardClass::Linear(l) => Ok(ball_net(l.dim(), l.radius, resolution, cap)?
                .into_iter()
                .map(|theta| self.model(theta))
                .filter(|m| l.in_range(&m.table))
                .collect()),
        }
    }
}

/// All digit vectors of a given length and base, last digit fastest.
pub fn odometer(len: usize, base: usize) -> impl Iterator<Item = Vec<usize>> {
    let total = if base == 0 { 0 } else { (base as u128).pow(len as u32) };
    let mut digits = vec![0usize; len];
    let mut emitted: u128 = 0;
    std::iter::from_fn(move || {
        if emitted == total {
            return None;
        }
        let out = digits.clone();
        emitted += 1;
        for d in digits.iter_mut().rev() {
            *d += 1;
            if *d < base {
                break;
            }
            *d = 0;
        }
        Some(out)
    })
}

/// Per-step transition class. Tables use the MDP layout `[(s*A + a)*S + s']`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransitionClass {
    FullSimplex { num_states: usize, num_actions: usize },
    Candidates { num_states: usize, num_actions: usize, tables: Vec<Vec<f64>> },
}

impl TransitionClass {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            TransitionClass::FullSimplex { num_states, num_actions }
            | TransitionClass::Candidates { num_states, num_actions, .. } => (*num_states, *num_actions),
        }
    }

    /// Full simplex: `d log(c_geom/ε)` with `d = S·A·(S-1)` free coordinates.
    pub fn log_bracket_number(&self, eps: f64) -> Result<f64> {
        check_eps(eps)?;
        Ok(match self {
            TransitionClass::FullSimplex { num_states, num_actions } => {
                let d = (num_states * num_actions * (num_states - 1)) as f64;
                d * (DEFAULT_C_GEOM / eps).ln()
            }
            TransitionClass::Candidates { tables, .. } => (tables.len() as f64).ln(),
        })
    }

    pub fn contains(&self, table: &[f64]) -> bool {
        let (s, a) = self.shape();
        match self {
            TransitionClass::FullSimplex { .. } => {
                table.len() == s * a * s
                    && table.chunks(s).all(|r| {
                        r.iter().all(|&p| p >= 0.0) && (r.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOL
                    })
            }
            TransitionClass::Candidates { tables, .. } => tables.iter().any(|t| {
                t.len() == table.len() && t.iter().zip(table).all(|(x, y)| (x - y).abs() <= SIMPLEX_TOL)
            }),
        }
    }

    /// Candidate list, or for the full simplex every table whose rows lie
    /// on the lattice `{k·resolution}` of the simplex.
    pub fn enumerate_members(&self, resolution: f64, cap: usize) -> Result<Vec<Vec<f64>>> {
        match self {
            TransitionClass::Candidates { tables, .. } => {
                if tables.len() > cap {
                    return Err(too_large("transition candidates", tables.len() as f64, cap));
                }
                Ok(tables.clone())
            }
            TransitionClass::FullSimplex { num_states, num_actions } => {
                let m = (1.0 / resolution).round() as usize;
                if m == 0 {
                    return Err(Error::InvalidParams("simplex resolution must be at most 1".into()));
                }
                let rows = simplex_lattice(*num_states, m);
                let count = (rows.len() as f64).powi((num_states * num_actions) as i32);
                if count > cap as f64 {
                    return Err(too_large("transition lattice members", count, cap));
                }
                Ok(odometer(num_states * num_actions, rows.len())
                    .map(|digits| digits.iter().flat_map(|&k| rows[k].iter().copied()).collect())
                    .collect())
            }
        }
    }
}

/// Points of the `n`-simplex with coordinates in `{0, 1/m, ..., 1}`.
fn simplex_lattice(n: usize, m: usize) -> Vec<Vec<f64>> {
    fn rec(n: usize, left: usize, m: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if cur.len() + 1 == n {
            cur.push(left);
            out.push(cur.iter().map(|&k| k as f64 / m as f64).collect());
            cur.pop();
            return;
        }
        for k in 0..=left {
            cur.push(k);
            rec(n, left - k, m, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, m, m, &mut Vec::new(), &mut out);
    out
}

/// Per-step advantage class with `|A_h(s, a)| ≤ b_max`. Tables are indexed
/// `[s * A + a]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdvantageClass {
    /// Values on `{-b_max + k·spacing} ∩ [-b_max, b_max]`.
    TabularGrid { num_states: usize, num_actions: usize, spacing: f64, b_max: f64 },
    /// `A(s, a) = ⟨φ(s, a), θ⟩`, `‖θ‖₂ ≤ radius`; `features[s * A + a]`.
    Linear {
        num_states: usize,
        num_actions: usize,
        features: Vec<Vec<f64>>,
        radius: f64,
        b_max: f64,
        #[serde(default = "default_c_geom")]
        c_geom: f64,
    },
}

impl AdvantageClass {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            AdvantageClass::TabularGrid { num_states, num_actions, .. }
            | AdvantageClass::Linear { num_states, num_actions, .. } => (*num_states, *num_actions),
        }
    }

    pub fn b_max(&self) -> f64 {
        match self {
            AdvantageClass::TabularGrid { b_max, .. } | AdvantageClass::Linear { b_max, .. } => *b_max,
        }
    }

    /// Grid values, ascending.
    pub fn levels(&self) -> Vec<f64> {
        match self {
            AdvantageClass::TabularGrid { spacing, b_max, .. } => {
                let k = (2.0 * b_max / spacing * (1.0 + GRID_SNAP_TOL)).floor() as usize;
                (0..=k).map(|i| -b_max + i as f64 * spacing).collect()
            }
            AdvantageClass::Linear { .. } => Vec::new(),
        }
    }

    pub fn log_bracket_number(&self, eps: f64) -> Result<f64> {
        check_eps(eps)?;
        let (s, a) = self.shape();
        Ok(match self {
            AdvantageClass::TabularGrid { .. } => (s * a) as f64 * (self.levels().len() as f64).ln(),
            AdvantageClass::Linear { features, radius, c_geom, .. } => {
                let d = features[0].len() as f64;
                let r = features.iter().map(|f| norm(f)).fold(0.0, f64::max);
                d * (radius * r / eps).ln() + d * c_geom.ln()
            }
        })
    }

    pub fn linear_table(features: &[Vec<f64>], theta: &[f64]) -> Vec<f64> {
        features.iter().map(|f| crate::mdp::dot(f, theta)).collect()
    }

    pub fn contains(&self, table: &[f64]) -> bool {
        let (s, a) = self.shape();
        if table.len() != s * a || table.iter().any(|v| v.abs() > self.b_max() + BOUND_TOL) {
            return false;
        }
        match self {
            AdvantageClass::TabularGrid { spacing, b_max, .. } => table.iter().all(|&v| {
                let k = ((v + b_max) / spacing).round();
                (v + b_max - k * spacing).abs() <= GRID_SNAP_TOL * spacing.max(1.0)
            }),
            AdvantageClass::Linear { features, radius, .. } => {
                let phi = DMatrix::from_fn(features.len(), features[0].len(), |i, j| features[i][j]);
                let y = DVector::from_column_slice(table);
                match phi.clone().svd(true, true).solve(&y, 1e-12) {
                    Ok(theta) => (&phi * &theta - y).amax() <= 1e-9 && theta.norm() <= radius + BOUND_TOL,
                    Err(_) => false,
                }
            }
        }
    }

    pub fn enumerate_members(&self, resolution: f64, cap: usize) -> Result<Vec<Vec<f64>>> {
        let (s, a) = self.shape();
        match self {
            AdvantageClass::TabularGrid { .. } => {
                let levels = self.levels();
                let count = (levels.len() as f64).powi((s * a) as i32);
                if count > cap as f64 {
                    return Err(too_large("advantage class members", count, cap));
                }
                Ok(odometer(s * a, levels.len())
                    .map(|digits| digits.iter().map(|&k| levels[k]).collect())
                    .collect())
            }
            AdvantageClass::Linear { features, radius, b_max, .. } => Ok(ball_net(features[0].len(), *radius, resolution, cap)?
                .into_iter()
                .map(|theta| Self::linear_table(features, &theta))
                .filter(|t| t.iter().all(|v| v.abs() <= b_max + BOUND_TOL))
                .collect()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_traj() -> TrajectorySpace {
        TrajectorySpace::new(1, 1, 2)
    }

    #[test]
    fn grid_bracket_is_log_count() {
        let g = RewardClass::TabularGrid(TabularGrid::full(two_traj(), 0.5, 1.0, 100).unwrap());
        assert!((g.log_bracket_number(0.1).unwrap() - 9f64.ln()).abs() < 1e-12);
        assert_eq!(g.enumerate_members(0.0, 100).unwrap().len(), 9);
        assert!(matches!(g.log_bracket_number(0.0), Err(Error::InvalidEpsilon(_))));
    }

    #[test]
    fn linear_bracket_formula() {
        let space = TrajectorySpace::new(1, 1, 2);
        let l = LinearClass::new(space, vec![vec![1.0, 0.0], vec![0.0, 1.0]], 1.0, 1.0).unwrap();
        let c = RewardClass::Linear(l);
        assert!((c.log_bracket_number(1.0).unwrap() - 2.0 * 3f64.ln()).abs() < 1e-12);
        assert!(c.log_bracket_number(0.5).unwrap() > c.log_bracket_number(1.0).unwrap());
    }

    #[test]
    fn candidate_list_of_one() {
        let t = TransitionClass::Candidates { num_states: 1, num_actions: 1, tables: vec![vec![1.0]] };
        assert_eq!(t.log_bracket_number(0.5).unwrap(), 0.0);
    }

    #[test]
    fn grid_membership() {
        let space = TrajectorySpace::new(1, 1, 1);
        let g = RewardClass::TabularGrid(TabularGrid::full(space, 1.0, 1.0, 10).unwrap());
        assert_eq!(g.enumerate_members(0.0, 10).unwrap().len(), 2);
        assert!(g.enumerate_members(0.0, 1).is_err());
        let g = RewardClass::TabularGrid(TabularGrid::full(two_traj(), 0.5, 1.0, 10).unwrap());
        assert!(g.contains_truth(&RewardFunction::Trajectory { table: vec![0.5, 1.0] }));
        assert!(!g.contains_truth(&RewardFunction::Trajectory { table: vec![0.25, 1.0] }));
    }

    #[test]
    fn linear_membership() {
        let space = TrajectorySpace::new(1, 1, 3);
        let feats = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]];
        let l = RewardClass::Linear(LinearClass::new(space, feats, 1.0, 1.0).unwrap());
        assert!(l.contains_truth(&RewardFunction::Trajectory { table: vec![0.6, 0.2, 0.4] }));
        assert!(!l.contains_truth(&RewardFunction::Trajectory { table: vec![0.6, 0.2, 0.9] }));
        assert!(!l.contains_truth(&RewardFunction::Trajectory { table: vec![0.9, 0.9, 0.9] }));
    }

    #[test]
    fn lattice_rows_are_simplices() {
        let c = TransitionClass::FullSimplex { num_states: 2, num_actions: 1 };
        let members = c.enumerate_members(0.5, 100).unwrap();
        assert_eq!(members.len(), 9);
        assert!(members.iter().all(|m| c.contains(m)));
    }

    #[test]
    fn advantage_grid_levels() {
        let c = AdvantageClass::TabularGrid { num_states: 1, num_actions: 2, spacing: 0.5, b_max: 1.0 };
        assert_eq!(c.levels(), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert_eq!(c.enumerate_members(0.0, 100).unwrap().len(), 25);
        assert!(c.contains(&[0.0, -0.5]));
        assert!(!c.contains(&[0.0, -0.3]));
    }
}
