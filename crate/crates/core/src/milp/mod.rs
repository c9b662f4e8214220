//! Binary mixed-integer programs solved by LP-based branch and bound.
//!
//! Indicator constraints `z = t => a'v = 0` are compiled to a pair of big-M
//! rows before the search. The compiled model remembers the original
//! indicators so incumbents can be re-checked against the exact semantics.

mod bnb;
mod restrict;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{LinearProgram, Relation};

pub use bnb::{solve_milp, solve_milp_with, MilpRun};

/// Integrality tolerance on binaries.
pub const INT_TOL: f64 = 1e-6;

/// `z = trigger => coeffs'v = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Indicator {
    pub binary: usize,
    pub trigger: bool,
    pub coeffs: Vec<(usize, f64)>,
    /// Bound on `|coeffs'v|` over the feasible region, used when compiling.
    pub big_m: Option<f64>,
    /// Set when `big_m` is a proven bound; proven rows skip the
    /// active-at-M check.
    pub proven: bool,
}

/// An indicator that has been replaced by big-M rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompiledIndicator {
    pub indicator: Indicator,
    pub big_m: f64,
    /// Indices of the `<=` and `>=` rows in the base program.
    pub rows: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedIntegerProgram {
    pub base: LinearProgram,
    pub binaries: Vec<usize>,
    /// Indicators still to be compiled.
    pub indicators: Vec<Indicator>,
    /// Indicators already written into `base`.
    pub compiled: Vec<CompiledIndicator>,
}

impl MixedIntegerProgram {
    pub fn new(base: LinearProgram) -> Self {
        MixedIntegerProgram { base, binaries: Vec::new(), indicators: Vec::new(), compiled: Vec::new() }
    }

    /// Adds a binary variable and returns its index.
    pub fn add_binary(&mut self, name: Option<&str>, cost: f64) -> usize {
        let j = match name {
            Some(n) => self.base.add_named_var(n, cost, 0.0, 1.0),
            None => self.base.add_var(cost, 0.0, 1.0),
        };
        self.binaries.push(j);
        j
    }

    pub fn is_binary(&self, j: usize) -> bool {
        self.binaries.contains(&j)
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        let n = self.base.num_vars;
        for &j in &self.binaries {
            if j >= n {
                return Err(Error::Malformed(format!("binary index {j} out of range")));
            }
            let (lo, hi) = self.base.var_bounds[j];
            if lo < 0.0 || hi > 1.0 {
                return Err(Error::Malformed(format!("binary {j} has bounds [{lo}, {hi}] outside [0, 1]")));
            }
        }
        let all = self.indicators.iter().chain(self.compiled.iter().map(|c| &c.indicator));
        for ind in all {
            if !self.is_binary(ind.binary) {
                return Err(Error::Malformed(format!("indicator trigger {} is not binary", ind.binary)));
            }
            for &(j, _) in &ind.coeffs {
                if j >= n {
                    return Err(Error::Malformed(format!("indicator references variable {j} >= {n}")));
                }
                if self.is_binary(j) {
                    return Err(Error::Malformed(format!("indicator row references binary {j}")));
                }
            }
        }
        Ok(())
    }

    /// Largest violation of the exact indicator semantics at `x`, scaled by
    /// the row magnitude.
    pub fn indicator_violation(&self, x: &[f64]) -> f64 {
        let all = self.indicators.iter().chain(self.compiled.iter().map(|c| &c.indicator));
        let mut worst = 0.0f64;
        for ind in all {
            let z = x[ind.binary] > 0.5;
            if z != ind.trigger {
                continue;
            }
            let (act, scale) = ind
                .coeffs
                .iter()
                .fold((0.0, 0.0), |(s, t), &(j, a)| (s + a * x[j], t + (a * x[j]).abs()));
            worst = worst.max(act.abs() / scale.max(1.0));
        }
        worst
    }

    /// Unproven compiled indicators whose big-M row is within `1e-4` of its
    /// bound at `x` while the indicator is switched off.
    pub fn active_big_m(&self, x: &[f64]) -> Vec<usize> {
        let mut hits = Vec::new();
        for (k, c) in self.compiled.iter().enumerate() {
            let ind = &c.indicator;
            if ind.proven || (x[ind.binary] > 0.5) == ind.trigger {
                continue;
            }
            let act: f64 = ind.coeffs.iter().map(|&(j, a)| a * x[j]).sum();
            if act.abs() >= c.big_m - 1e-4 * c.big_m.max(1.0) {
                hits.push(k);
            }
        }
        hits
    }
}

/// Replaces every pending indicator by big-M rows. `bounds[k]` overrides the
/// stored `big_m` of indicator `k` when present.
pub fn compile_indicators(mip: &MixedIntegerProgram, bounds: &[Option<f64>]) -> Result<MixedIntegerProgram> {
    if !bounds.is_empty() && bounds.len() != mip.indicators.len() {
        return Err(Error::Validation(format!(
            "{} big-M values for {} indicators",
            bounds.len(),
            mip.indicators.len()
        )));
    }
    mip.validate()?;
    let mut out = mip.clone();
    out.indicators.clear();
    for (k, ind) in mip.indicators.iter().enumerate() {
        let m = bounds.get(k).copied().flatten().or(ind.big_m).ok_or_else(|| {
            Error::Validation(format!("indicator {k} has no big-M value"))
        })?;
        if !(m.is_finite() && m > 0.0) {
            return Err(Error::Validation(format!("big-M for indicator {k} must be finite and positive, got {m}")));
        }
        // a'v <= M (1 - [z = t]) and a'v >= -M (1 - [z = t])
        let z = ind.binary;
        let (le, ge) = if ind.trigger {
            let mut le = ind.coeffs.clone();
            le.push((z, m));
            let mut ge = ind.coeffs.clone();
            ge.push((z, -m));
            (
                out.base.add_row(le, Relation::Le, m),
                out.base.add_row(ge, Relation::Ge, -m),
            )
        } else {
            let mut le = ind.coeffs.clone();
            le.push((z, -m));
            let mut ge = ind.coeffs.clone();
            ge.push((z, m));
            (
                out.base.add_row(le, Relation::Le, 0.0),
                out.base.add_row(ge, Relation::Ge, 0.0),
            )
        };
        let mut indicator = ind.clone();
        indicator.big_m = Some(m);
        out.compiled.push(CompiledIndicator { indicator, big_m: m, rows: (le, ge) });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveLimits {
    /// Seconds; `f64::INFINITY` disables the limit.
    pub time_limit: f64,
    pub gap_tol: f64,
    pub node_limit: Option<usize>,
}

impl Default for SolveLimits {
    fn default() -> Self {
        SolveLimits { time_limit: 900.0, gap_tol: 1e-6, node_limit: None }
    }
}

impl SolveLimits {
    pub fn unlimited() -> Self {
        SolveLimits { time_limit: f64::INFINITY, gap_tol: 1e-6, node_limit: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.time_limit.is_nan() || self.time_limit < 0.0 || !(self.gap_tol >= 0.0) {
            return Err(Error::Validation("solve limits must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MilpStatus {
    Optimal,
    /// Stopped by the time or node limit with an incumbent in hand.
    FeasibleTimeLimit,
    /// Proven infeasible.
    Infeasible,
    /// Stopped by a limit before any incumbent was found.
    NoIncumbent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilpSolution {
    pub status: MilpStatus,
    /// Incumbent values with binaries exactly 0 or 1; empty without one.
    pub primal: Vec<f64>,
    pub objective: f64,
    pub bound: f64,
    /// `(objective - bound) / max(|objective|, 1)`.
    pub gap: f64,
    pub nodes: usize,
    pub lp_iterations: usize,
    pub wall_time: f64,
    /// Unproven compiled indicators active at their big-M in the incumbent.
    pub m_bound_suspect: Vec<usize>,
}

impl MilpSolution {
    pub fn has_incumbent(&self) -> bool {
        !self.primal.is_empty()
    }
}

pub(crate) fn relative_gap(incumbent: f64, bound: f64) -> f64 {
    if !incumbent.is_finite() {
        return f64::INFINITY;
    }
    ((incumbent - bound) / incumbent.abs().max(1.0)).max(0.0)
}
