//! Evaluation metrics and the one-sided Wilcoxon signed-rank test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::datagen::Dataset;
use crate::erm::{CostParams, DecisionFunction};
use crate::error::{invalid, Result};

/// Largest number of nonzero pairs handled by the exact null distribution.
pub const WILCOXON_EXACT_MAX: usize = 20;
const TIE_TOL: f64 = 1e-12;

/// Cost of ordering `q` when demand is `d`.
pub fn unit_cost(q: f64, d: f64, costs: &CostParams) -> f64 {
    costs.b * (d - q).max(0.0) + costs.h * (q - d).max(0.0)
}

/// Mean newsvendor cost of `beta` on `data`; orders are not clipped.
pub fn newsvendor_cost(beta: &DecisionFunction, data: &Dataset, costs: &CostParams) -> Result<f64> {
    newsvendor_cost_with(beta, data, costs, false)
}

/// As [`newsvendor_cost`], optionally clipping orders at zero.
pub fn newsvendor_cost_with(beta: &DecisionFunction, data: &Dataset, costs: &CostParams, clip: bool) -> Result<f64> {
    if beta.beta.len() != data.m + 1 {
        return Err(invalid(format!("beta has {} entries for m = {}", beta.beta.len(), data.m)));
    }
    if data.n() == 0 {
        return Err(invalid("cost of an empty dataset"));
    }
    let total: f64 = data
        .features
        .iter()
        .zip(&data.demands)
        .map(|(x, &d)| {
            let q = beta.order(x);
            let q = if clip { q.max(0.0) } else { q };
            unit_cost(q, d, costs)
        })
        .sum();
    Ok(total / data.n() as f64)
}

/// Share of the `m` non-intercept features whose selection matches.
pub fn accuracy(z_hat: &[bool], z_star: &[bool]) -> Result<f64> {
    if z_hat.len() != z_star.len() || z_hat.is_empty() {
        return Err(invalid(format!("accuracy over {} vs {} features", z_hat.len(), z_star.len())));
    }
    let hits = z_hat.iter().zip(z_star).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / z_hat.len() as f64)
}

/// Percentage deviation of `c_method` from the reference cost.
pub fn test_cost_deviation(c_method: f64, c_ref: f64) -> Result<f64> {
    if !(c_ref > 0.0) {
        return Err(invalid(format!("reference cost must be positive, got {c_ref}")));
    }
    Ok(100.0 * (c_method - c_ref) / c_ref)
}

/// Signed ranks of the nonzero differences, average ranks for ties.
/// Returns `(ranks, positive)`.
pub fn signed_ranks(diffs: &[f64]) -> (Vec<f64>, Vec<bool>) {
    let mut nz: Vec<(f64, bool)> = diffs.iter().filter(|d| d.abs() > TIE_TOL).map(|&d| (d.abs(), d > 0.0)).collect();
    nz.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut ranks = vec![0.0; nz.len()];
    let mut i = 0;
    while i < nz.len() {
        let mut j = i + 1;
        while j < nz.len() && nz[j].0 - nz[i].0 <= TIE_TOL * nz[i].0.max(1.0) {
            j += 1;
        }
        // positions i..j share the average of ranks i+1..=j
        let avg = (i + 1 + j) as f64 / 2.0;
        for r in &mut ranks[i..j] {
            *r = avg;
        }
        i = j;
    }
    (ranks, nz.iter().map(|p| p.1).collect())
}

/// One-sided p-value `P(W+ >= observed)` under the symmetric null, where
/// `W+` sums the ranks of positive differences. Exact for up to 20 nonzero
/// pairs, normal approximation with tie and continuity correction beyond.
pub fn wilcoxon_one_sided(diffs: &[f64]) -> Result<f64> {
    let (ranks, pos) = signed_ranks(diffs);
    if ranks.len() < 5 {
        return Err(invalid(format!("Wilcoxon test needs >= 5 nonzero differences, got {}", ranks.len())));
    }
    if ranks.len() <= WILCOXON_EXACT_MAX {
        Ok(wilcoxon_exact(&ranks, &pos))
    } else {
        Ok(wilcoxon_normal(&ranks, &pos))
    }
}

/// Exact upper tail from the null distribution of `W+`, computed by dynamic
/// programming over doubled (integer) ranks.
pub fn wilcoxon_exact(ranks: &[f64], positive: &[bool]) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let observed: usize = doubled.iter().zip(positive).filter(|(_, p)| **p).map(|(r, _)| r).sum();
    // counts[s] = number of sign patterns with doubled W+ = s, scaled by 2^-k
    let mut counts = vec![0.0f64; total + 1];
    counts[0] = 1.0;
    for &r in &doubled {
        for s in (r..=total).rev() {
            counts[s] = 0.5 * counts[s] + 0.5 * counts[s - r];
        }
        for c in &mut counts[..r] {
            *c *= 0.5;
        }
    }
    counts[observed..].iter().sum::<f64>().min(1.0)
}

pub fn wilcoxon_normal(ranks: &[f64], positive: &[bool]) -> f64 {
    let n = ranks.len() as f64;
    let w: f64 = ranks.iter().zip(positive).filter(|(_, p)| **p).map(|(r, _)| r).sum();
    let mean = n * (n + 1.0) / 4.0;
    // tie groups share one rank value
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < ranks.len() {
        let mut j = i + 1;
        while j < ranks.len() && ranks[j] == ranks[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return if w > mean { 0.0 } else { 1.0 };
    }
    let z = (w - mean - 0.5) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    1.0 - normal.cdf(z)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub instance: String,
    pub mean_cost: f64,
    pub accuracy: f64,
    /// Percent; `None` for the reference method itself or when undefined.
    pub deviation: Option<f64>,
}
