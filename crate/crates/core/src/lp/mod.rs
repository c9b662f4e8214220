//! Dense-interface linear programming with primal and dual certificates.
//!
//! Every program is a minimization
//!
//! ```text
//!     min  c'x   s.t.  a_i'x  (<= | >= | =)  b_i,   l <= x <= u
//! ```
//!
//! Dual sign convention (used everywhere in this crate): the row dual `y_i`
//! satisfies `c - A'y = d` with reduced costs `d`. At an optimum `y_i >= 0`
//! on `>=` rows, `y_i <= 0` on `<=` rows and `y_i` is free on `=` rows. A
//! variable resting at its lower bound has `d_j >= 0`, at its upper bound
//! `d_j <= 0`. The dual objective is `b'y + sum_j bound_j(d_j)` where the
//! bound term is `l_j d_j` for positive and `u_j d_j` for negative reduced
//! costs.

mod factor;
mod format;
mod simplex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use format::write_lp_format;
pub(crate) use simplex::{Simplex, WarmBasis};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

/// One constraint row. Coefficients are stored sparsely as `(variable, value)`
/// pairs; absent variables have coefficient zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub rows: Vec<Row>,
    /// Per-variable `[lower, upper]`; infinities allowed.
    pub var_bounds: Vec<(f64, f64)>,
    pub var_names: Option<Vec<String>>,
}

impl LinearProgram {
    /// Empty program with `num_vars` variables, zero costs and bounds `[0, inf)`.
    pub fn new(num_vars: usize) -> Self {
        LinearProgram {
            num_vars,
            objective: vec![0.0; num_vars],
            rows: Vec::new(),
            var_bounds: vec![(0.0, f64::INFINITY); num_vars],
            var_names: None,
        }
    }

    /// Appends a variable and returns its index.
    pub fn add_var(&mut self, cost: f64, lower: f64, upper: f64) -> usize {
        self.objective.push(cost);
        self.var_bounds.push((lower, upper));
        if let Some(names) = &mut self.var_names {
            names.push(format!("x{}", self.num_vars));
        }
        self.num_vars += 1;
        self.num_vars - 1
    }

    pub fn add_named_var(&mut self, name: impl Into<String>, cost: f64, lower: f64, upper: f64) -> usize {
        let names = self
            .var_names
            .get_or_insert_with(|| (0..self.num_vars).map(|j| format!("x{j}")).collect());
        names.push(name.into());
        self.objective.push(cost);
        self.var_bounds.push((lower, upper));
        self.num_vars += 1;
        self.num_vars - 1
    }

    /// Appends a row and returns its index.
    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, relation: Relation, rhs: f64) -> usize {
        self.rows.push(Row { coeffs, relation, rhs });
        self.rows.len() - 1
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn var_name(&self, j: usize) -> String {
        match &self.var_names {
            Some(names) => names[j].clone(),
            None => format!("x{j}"),
        }
    }

    /// Checks the structural invariants of the program.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars;
        if self.objective.len() != n {
            return Err(Error::Malformed(format!(
                "objective has {} entries for {} variables",
                self.objective.len(),
                n
            )));
        }
        if self.var_bounds.len() != n {
            return Err(Error::Malformed(format!(
                "{} bounds for {} variables",
                self.var_bounds.len(),
                n
            )));
        }
        if let Some(names) = &self.var_names {
            if names.len() != n {
                return Err(Error::Malformed("variable name count mismatch".into()));
            }
        }
        for (j, &c) in self.objective.iter().enumerate() {
            if !c.is_finite() {
                return Err(Error::Malformed(format!("objective coefficient {j} is not finite")));
            }
        }
        for (j, &(lo, hi)) in self.var_bounds.iter().enumerate() {
            if lo.is_nan() || hi.is_nan() || lo > hi || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
                return Err(Error::Malformed(format!("variable {j} has bounds [{lo}, {hi}]")));
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(Error::Malformed(format!("row {i} has non-finite rhs")));
            }
            for &(j, a) in &row.coeffs {
                if j >= n {
                    return Err(Error::Malformed(format!("row {i} references variable {j} >= {n}")));
                }
                if !a.is_finite() {
                    return Err(Error::Malformed(format!("row {i} has a non-finite coefficient")));
                }
            }
        }
        Ok(())
    }

    /// Row activities `a_i'x`.
    pub fn row_activity(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.coeffs.iter().map(|&(j, a)| a * x[j]).sum())
            .collect()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation of any row or bound at `x`.
    pub fn primal_infeasibility(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for (row, act) in self.rows.iter().zip(self.row_activity(x)) {
            let v = match row.relation {
                Relation::Le => act - row.rhs,
                Relation::Ge => row.rhs - act,
                Relation::Eq => (act - row.rhs).abs(),
            };
            worst = worst.max(v);
        }
        for (&(lo, hi), &v) in self.var_bounds.iter().zip(x) {
            worst = worst.max(lo - v).max(v - hi);
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Empty unless `status == Optimal`.
    pub primal: Vec<f64>,
    /// Row duals, empty unless optimal.
    pub duals: Vec<f64>,
    /// Reduced costs `c - A'y`, empty unless optimal.
    pub reduced_costs: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

impl LpSolution {
    pub(crate) fn without_values(status: LpStatus, iterations: usize) -> Self {
        let objective = match status {
            LpStatus::Unbounded => f64::NEG_INFINITY,
            _ => f64::INFINITY,
        };
        LpSolution {
            status,
            primal: Vec::new(),
            duals: Vec::new(),
            reduced_costs: Vec::new(),
            objective,
            iterations,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

/// Which basis factorization the simplex uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Factorization {
    /// Dense for small bases, Markowitz-ordered sparse LU otherwise.
    Auto,
    Dense,
    Sparse,
}

#[derive(Debug, Clone)]
pub struct LpOptions {
    pub feas_tol: f64,
    pub opt_tol: f64,
    pub pivot_tol: f64,
    /// `None` selects `50 * (rows + cols) + 1000`.
    pub max_iterations: Option<usize>,
    pub deadline: Option<std::time::Instant>,
    pub refactor_interval: usize,
    pub factorization: Factorization,
}

impl Default for LpOptions {
    fn default() -> Self {
        LpOptions {
            feas_tol: 1e-7,
            opt_tol: 1e-7,
            pivot_tol: 1e-9,
            max_iterations: None,
            deadline: None,
            refactor_interval: 100,
            factorization: Factorization::Auto,
        }
    }
}

/// Solves `lp` from a slack basis with default options.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution> {
    solve_lp_with(lp, &LpOptions::default())
}

pub fn solve_lp_with(lp: &LinearProgram, opts: &LpOptions) -> Result<LpSolution> {
    lp.validate()?;
    let mut simplex = Simplex::new(lp, opts.clone());
    simplex.solve(None)
}

/// `|c'x - (b'y + sum_j bound_j(d_j))|` using the solution's own duals and
/// reduced costs.
pub fn duality_residual(lp: &LinearProgram, sol: &LpSolution) -> Result<f64> {
    if sol.status != LpStatus::Optimal {
        return Err(Error::Contract(format!(
            "duality residual needs an optimal solution, got {:?}",
            sol.status
        )));
    }
    if sol.primal.len() != lp.num_vars || sol.duals.len() != lp.rows.len() {
        return Err(Error::Contract("solution does not match program dimensions".into()));
    }
    let primal = lp.objective_value(&sol.primal);
    Ok((primal - dual_objective(lp, sol)).abs())
}

pub(crate) fn dual_objective(lp: &LinearProgram, sol: &LpSolution) -> f64 {
    let mut dual: f64 = lp.rows.iter().zip(&sol.duals).map(|(r, y)| r.rhs * y).sum();
    for (j, &(lo, hi)) in lp.var_bounds.iter().enumerate() {
        let d = sol.reduced_costs.get(j).copied().unwrap_or(0.0);
        if d > 0.0 && lo.is_finite() {
            dual += lo * d;
        } else if d < 0.0 && hi.is_finite() {
            dual += hi * d;
        }
    }
    dual
}

/// Largest complementary-slackness product over rows and variables.
pub fn complementary_slackness(lp: &LinearProgram, sol: &LpSolution) -> Result<f64> {
    if sol.status != LpStatus::Optimal {
        return Err(Error::Contract("complementary slackness needs an optimal solution".into()));
    }
    let mut worst = 0.0f64;
    for ((row, act), y) in lp.rows.iter().zip(lp.row_activity(&sol.primal)).zip(&sol.duals) {
        worst = worst.max(((act - row.rhs) * y).abs());
    }
    for (j, &(lo, hi)) in lp.var_bounds.iter().enumerate() {
        let x = sol.primal[j];
        let d = sol.reduced_costs[j];
        let gap = if d > 0.0 {
            x - lo
        } else if d < 0.0 {
            hi - x
        } else {
            0.0
        };
        if gap.is_finite() {
            worst = worst.max((gap * d).abs());
        } else if d != 0.0 {
            return Ok(f64::INFINITY);
        }
    }
    Ok(worst)
}

/// Largest violation of dual feasibility: sign conditions on row duals and
/// reduced costs, and consistency `d = c - A'y`.
pub fn dual_infeasibility(lp: &LinearProgram, sol: &LpSolution) -> Result<f64> {
    if sol.status != LpStatus::Optimal {
        return Err(Error::Contract("dual infeasibility needs an optimal solution".into()));
    }
    let mut worst = 0.0f64;
    for (row, &y) in lp.rows.iter().zip(&sol.duals) {
        let v = match row.relation {
            Relation::Ge => -y,
            Relation::Le => y,
            Relation::Eq => 0.0,
        };
        worst = worst.max(v);
    }
    let mut aty = vec![0.0; lp.num_vars];
    for (row, &y) in lp.rows.iter().zip(&sol.duals) {
        for &(j, a) in &row.coeffs {
            aty[j] += a * y;
        }
    }
    for j in 0..lp.num_vars {
        let d = sol.reduced_costs[j];
        worst = worst.max((lp.objective[j] - aty[j] - d).abs());
        let (lo, hi) = lp.var_bounds[j];
        if lo == f64::NEG_INFINITY {
            worst = worst.max(d);
        }
        if hi == f64::INFINITY {
            worst = worst.max(-d);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests;
