use serde::Serialize;

use crate::error::{Error, Result};

pub const MIN_LEVELS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelStat {
    pub n: usize,
    pub count: usize,
    pub mean: f64,
    /// Normal-approximation 95% interval of the mean.
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// 95% interval for the slope from the OLS standard error.
    pub slope_ci: (f64, f64),
    pub levels: Vec<LevelStat>,
}

impl RateFit {
    /// The fitted curve `e^b · N^slope`.
    pub fn predict(&self, n: f64) -> f64 {
        (self.intercept + self.slope * n.ln()).exp()
    }
}

/// Two-sided 97.5% Student-t quantiles for 1..=30 degrees of freedom.
const T975: [f64; 30] = [
    12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179, 2.160, 2.145, 2.131, 2.120,
    2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042,
];

fn t_quantile(df: usize) -> f64 {
    if df == 0 {
        f64::INFINITY
    } else {
        T975.get(df - 1).copied().unwrap_or(1.96)
    }
}

/// Per-`N` means with 95% intervals, ordered by `N`.
pub fn level_stats(points: &[(usize, f64)]) -> Vec<LevelStat> {
    let mut ns: Vec<usize> = points.iter().map(|p| p.0).collect();
    ns.sort_unstable();
    ns.dedup();
    ns.into_iter()
        .map(|n| {
            let ys: Vec<f64> = points.iter().filter(|p| p.0 == n).map(|p| p.1).collect();
            let k = ys.len() as f64;
            let mean = ys.iter().sum::<f64>() / k;
            let half = if ys.len() > 1 {
                let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (k - 1.0);
                1.96 * (var / k).sqrt()
            } else {
                0.0
            };
            LevelStat { n, count: ys.len(), mean, ci_low: mean - half, ci_high: mean + half }
        })
        .collect()
}

/// OLS of `ln mean` on `ln N` over levels with positive means.
pub fn fit_levels(levels: Vec<LevelStat>) -> Result<RateFit> {
    let pts: Vec<(f64, f64)> = levels.iter().filter(|l| l.mean > 0.0).map(|l| ((l.n as f64).ln(), l.mean.ln())).collect();
    if pts.len() < MIN_LEVELS {
        return Err(Error::InsufficientLevels { needed: MIN_LEVELS, got: pts.len() });
    }
    let (slope, intercept) = crate::action::ols(&pts);
    let m = pts.len() as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) };
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let se = (ss_res / (m - 2.0) / sxx).sqrt();
    let half = t_quantile(pts.len() - 2) * se;
    Ok(RateFit { slope, intercept, r_squared, slope_ci: (slope - half, slope + half), levels })
}

/// Fits `mean suboptimality ∝ N^slope` from `(N, value)` points.
pub fn fit_rate(points: &[(usize, f64)]) -> Result<RateFit> {
    fit_levels(level_stats(points))
}

pub const RATES_HEADER: &str = "n,count,mean,ci_low,ci_high";

pub fn rates_csv(levels: &[LevelStat]) -> String {
    let mut out = format!("{RATES_HEADER}\n");
    for l in levels {
        out.push_str(&format!("{},{},{},{},{}\n", l.n, l.count, l.mean, l.ci_low, l.ci_high));
    }
    out
}

pub fn levels_from_csv(text: &str) -> Result<Vec<LevelStat>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(RATES_HEADER) {
        return Err(Error::Parse(format!("rates CSV must start with `{RATES_HEADER}`")));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Parse(format!("rates CSV row {}", i + 2));
            if f.len() != 5 {
                return Err(bad());
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
            Ok(LevelStat {
                n: f[0].trim().parse().map_err(|_| bad())?,
                count: f[1].trim().parse().map_err(|_| bad())?,
                mean: num(f[2])?,
                ci_low: num(f[3])?,
                ci_high: num(f[4])?,
            })
        })
        .collect()
}
