//! Bounded-variable revised simplex (primal phases 1/2 and dual phase 2).
//!
//! Internally every row `i` gets a logical column `e_i` so that
//! `A x + s = b`; the logical's bounds encode the relation (`<=`: `s >= 0`,
//! `>=`: `s <= 0`, `=`: `s = 0`). Columns `0..n` are structural and
//! `n..n+m` logical.

use std::time::Instant;

use super::factor::{LuFactor, Strategy};
use super::{Factorization, LinearProgram, LpOptions, LpSolution, LpStatus, Relation};
use crate::error::{Error, Result};

const DENSE_MAX_ROWS: usize = 48;
const HARRIS_TOL: f64 = 1e-9;
const SNAP_TOL: f64 = 1e-9;
/// Relative bound widening applied once a primal run stalls.
const PERTURB: f64 = 1e-6;
/// Non-improving primal iterations tolerated before perturbing.
const PERTURB_AFTER: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum VarStatus {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic free variable resting at zero.
    Free,
}

/// A basis that can seed a later solve of the same program shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct WarmBasis {
    status: Vec<VarStatus>,
    head: Vec<usize>,
}

enum PrimalOutcome {
    Optimal,
    Infeasible,
    Unbounded,
}

enum DualOutcome {
    Feasible,
    Infeasible,
    GaveUp,
}

pub(crate) struct Simplex {
    m: usize,
    n: usize,
    col_start: Vec<usize>,
    col_idx: Vec<usize>,
    col_val: Vec<f64>,
    row_start: Vec<usize>,
    row_idx: Vec<usize>,
    row_val: Vec<f64>,
    cost: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    rhs: Vec<f64>,
    x: Vec<f64>,
    status: Vec<VarStatus>,
    head: Vec<usize>,
    factor: LuFactor,
    opts: LpOptions,
    iterations: usize,
    max_iterations: usize,
    perturbed: bool,
    // scratch
    buf_m: Vec<f64>,
    buf_m2: Vec<f64>,
    buf_n: Vec<f64>,
}

impl Simplex {
    pub fn new(lp: &LinearProgram, opts: LpOptions) -> Self {
        let n = lp.num_vars;
        let m = lp.rows.len();
        let mut counts = vec![0usize; n];
        for row in &lp.rows {
            for &(j, a) in &row.coeffs {
                if a != 0.0 {
                    counts[j] += 1;
                }
            }
        }
        let mut col_start = vec![0usize; n + 1];
        for j in 0..n {
            col_start[j + 1] = col_start[j] + counts[j];
        }
        let nnz = col_start[n];
        let mut fill = col_start.clone();
        let mut col_idx = vec![0usize; nnz];
        let mut col_val = vec![0.0; nnz];
        let mut row_start = Vec::with_capacity(m + 1);
        let mut row_idx = Vec::with_capacity(nnz);
        let mut row_val = Vec::with_capacity(nnz);
        row_start.push(0);
        for (i, row) in lp.rows.iter().enumerate() {
            // merge duplicate entries within a row
            let mut entries: Vec<(usize, f64)> = row.coeffs.iter().copied().filter(|e| e.1 != 0.0).collect();
            entries.sort_by_key(|e| e.0);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
            for (j, a) in entries {
                match merged.last_mut() {
                    Some(last) if last.0 == j => last.1 += a,
                    _ => merged.push((j, a)),
                }
            }
            for (j, a) in merged {
                col_idx[fill[j]] = i;
                col_val[fill[j]] = a;
                fill[j] += 1;
                row_idx.push(j);
                row_val.push(a);
            }
            row_start.push(row_idx.len());
        }
        // duplicate merging may leave unused tail slots in a column; compact
        let mut cs = vec![0usize; n + 1];
        let mut ci = Vec::with_capacity(nnz);
        let mut cv = Vec::with_capacity(nnz);
        for j in 0..n {
            for t in col_start[j]..fill[j] {
                ci.push(col_idx[t]);
                cv.push(col_val[t]);
            }
            cs[j + 1] = ci.len();
        }

        let mut cost = lp.objective.clone();
        cost.extend(std::iter::repeat_n(0.0, m));
        let mut lo: Vec<f64> = lp.var_bounds.iter().map(|b| b.0).collect();
        let mut hi: Vec<f64> = lp.var_bounds.iter().map(|b| b.1).collect();
        for row in &lp.rows {
            let (l, h) = match row.relation {
                Relation::Le => (0.0, f64::INFINITY),
                Relation::Ge => (f64::NEG_INFINITY, 0.0),
                Relation::Eq => (0.0, 0.0),
            };
            lo.push(l);
            hi.push(h);
        }
        let rhs = lp.rows.iter().map(|r| r.rhs).collect();
        let max_iterations = opts.max_iterations.unwrap_or(50 * (n + m) + 1000);
        let mut s = Simplex {
            m,
            n,
            col_start: cs,
            col_idx: ci,
            col_val: cv,
            row_start,
            row_idx,
            row_val,
            cost,
            lo,
            hi,
            rhs,
            x: vec![0.0; n + m],
            status: vec![VarStatus::AtLower; n + m],
            head: Vec::new(),
            factor: LuFactor::default(),
            opts,
            iterations: 0,
            max_iterations,
            perturbed: false,
            buf_m: vec![0.0; m],
            buf_m2: vec![0.0; m],
            buf_n: vec![0.0; n],
        };
        s.install_slack_basis();
        s
    }

    /// Changes the bounds of structural variable `j`. Nonbasic variables are
    /// moved onto the new bound; basic ones are left for the next solve to
    /// repair.
    pub fn set_bounds(&mut self, j: usize, lo: f64, hi: f64) {
        self.lo[j] = lo;
        self.hi[j] = hi;
        if self.status[j] != VarStatus::Basic {
            self.place_nonbasic(j);
        }
    }

    /// Changes the right-hand side of row `i`.
    pub fn set_rhs(&mut self, i: usize, v: f64) {
        self.rhs[i] = v;
    }

    /// Discards the current basis in favor of the all-logical one.
    pub fn reset_to_slack(&mut self) {
        self.install_slack_basis();
    }

    pub fn basis(&self) -> WarmBasis {
        WarmBasis { status: self.status.clone(), head: self.head.clone() }
    }

    fn install_slack_basis(&mut self) {
        let (n, m) = (self.n, self.m);
        for j in 0..n {
            self.status[j] = VarStatus::AtLower;
            self.place_nonbasic(j);
        }
        self.head = (n..n + m).collect();
        for j in n..n + m {
            self.status[j] = VarStatus::Basic;
        }
    }

    /// Puts nonbasic `j` on a bound consistent with its status, adjusting the
    /// status when the bound it names is infinite.
    fn place_nonbasic(&mut self, j: usize) {
        let (lo, hi) = (self.lo[j], self.hi[j]);
        let st = match self.status[j] {
            VarStatus::AtUpper if hi.is_finite() => VarStatus::AtUpper,
            VarStatus::Free if !lo.is_finite() && !hi.is_finite() => VarStatus::Free,
            _ if lo.is_finite() => VarStatus::AtLower,
            _ if hi.is_finite() => VarStatus::AtUpper,
            _ => VarStatus::Free,
        };
        self.status[j] = st;
        self.x[j] = match st {
            VarStatus::AtLower => lo,
            VarStatus::AtUpper => hi,
            _ => 0.0,
        };
    }

    fn install(&mut self, warm: &WarmBasis) -> bool {
        if warm.status.len() != self.n + self.m || warm.head.len() != self.m {
            return false;
        }
        if warm.head.iter().any(|&j| warm.status[j] != VarStatus::Basic)
            || warm.status.iter().filter(|s| **s == VarStatus::Basic).count() != self.m
        {
            return false;
        }
        self.status.clone_from(&warm.status);
        self.head.clone_from(&warm.head);
        for j in 0..self.n + self.m {
            if self.status[j] != VarStatus::Basic {
                self.place_nonbasic(j);
            }
        }
        true
    }

    #[inline]
    fn dot_col(&self, y: &[f64], j: usize) -> f64 {
        if j < self.n {
            let mut s = 0.0;
            for t in self.col_start[j]..self.col_start[j + 1] {
                s += self.col_val[t] * y[self.col_idx[t]];
            }
            s
        } else {
            y[j - self.n]
        }
    }

    fn scatter_col(&self, j: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        if j < self.n {
            for t in self.col_start[j]..self.col_start[j + 1] {
                out[self.col_idx[t]] = self.col_val[t];
            }
        } else {
            out[j - self.n] = 1.0;
        }
    }

    fn col_entries(&self, j: usize) -> Vec<(usize, f64)> {
        if j < self.n {
            (self.col_start[j]..self.col_start[j + 1]).map(|t| (self.col_idx[t], self.col_val[t])).collect()
        } else {
            vec![(j - self.n, 1.0)]
        }
    }

    fn strategy(&self) -> Strategy {
        match self.opts.factorization {
            Factorization::Dense => Strategy::DensePartialPivot,
            Factorization::Sparse => Strategy::Markowitz,
            Factorization::Auto if self.m <= DENSE_MAX_ROWS => Strategy::DensePartialPivot,
            Factorization::Auto => Strategy::Markowitz,
        }
    }

    /// Factorizes the current basis, swapping in logicals for any positions
    /// that turn out to be linearly dependent.
    fn refactor(&mut self) -> Result<()> {
        for _attempt in 0..=self.m {
            let cols: Vec<Vec<(usize, f64)>> = self.head.iter().map(|&j| self.col_entries(j)).collect();
            match LuFactor::factorize(self.m, &cols, self.strategy()) {
                Ok(f) => {
                    self.factor = f;
                    return Ok(());
                }
                Err(sing) => {
                    log::debug!("singular basis: repairing {} positions", sing.positions.len());
                    for (&row, &pos) in sing.rows.iter().zip(&sing.positions) {
                        let out = self.head[pos];
                        let logical = self.n + row;
                        if self.status[logical] == VarStatus::Basic {
                            continue;
                        }
                        self.status[out] = VarStatus::AtLower;
                        self.place_nonbasic(out);
                        self.head[pos] = logical;
                        self.status[logical] = VarStatus::Basic;
                    }
                }
            }
        }
        Err(Error::Numerical("basis repair did not converge".into()))
    }

    /// Recomputes basic values from the nonbasic ones.
    fn compute_xb(&mut self) {
        let mut r = std::mem::take(&mut self.buf_m);
        r.copy_from_slice(&self.rhs);
        for j in 0..self.n {
            if self.status[j] != VarStatus::Basic {
                let xj = self.x[j];
                if xj != 0.0 {
                    for t in self.col_start[j]..self.col_start[j + 1] {
                        r[self.col_idx[t]] -= self.col_val[t] * xj;
                    }
                }
            }
        }
        for i in 0..self.m {
            let j = self.n + i;
            if self.status[j] != VarStatus::Basic {
                r[i] -= self.x[j];
            }
        }
        let mut xb = std::mem::take(&mut self.buf_m2);
        self.factor.ftran(&mut r, &mut xb);
        for p in 0..self.m {
            self.x[self.head[p]] = xb[p];
        }
        self.buf_m = r;
        self.buf_m2 = xb;
    }

    fn infeasibility(&self, j: usize) -> f64 {
        let v = self.x[j];
        (self.lo[j] - v).max(v - self.hi[j]).max(0.0)
    }

    fn max_basic_infeasibility(&self) -> f64 {
        self.head.iter().map(|&j| self.infeasibility(j)).fold(0.0, f64::max)
    }

    fn check_limits(&self) -> Result<()> {
        if self.iterations >= self.max_iterations {
            return Err(Error::IterationLimit(self.iterations));
        }
        if self.iterations % 32 == 0 {
            if let Some(d) = self.opts.deadline {
                if Instant::now() >= d {
                    return Err(Error::TimeLimit);
                }
            }
        }
        Ok(())
    }

    /// Row duals for the given per-position basic costs.
    fn duals_for(&self, cb: &mut [f64], y: &mut [f64]) {
        self.factor.btran(cb, y);
    }

    /// Reduced cost of column `j` for duals `y` and cost vector `c`.
    #[inline]
    fn reduced_cost(&self, c: f64, y: &[f64], j: usize) -> f64 {
        c - self.dot_col(y, j)
    }

    fn dual_feasible(&self, y: &[f64]) -> bool {
        let tol = self.opts.opt_tol;
        (0..self.n + self.m).all(|j| {
            let d = self.reduced_cost(self.cost[j], y, j);
            match self.status[j] {
                VarStatus::Basic => true,
                _ if self.lo[j] == self.hi[j] => true,
                VarStatus::AtLower => d >= -tol,
                VarStatus::AtUpper => d <= tol,
                VarStatus::Free => d.abs() <= tol,
            }
        })
    }

    fn phase2_duals(&mut self) -> Vec<f64> {
        let mut cb: Vec<f64> = self.head.iter().map(|&j| self.cost[j]).collect();
        let mut y = vec![0.0; self.m];
        self.duals_for(&mut cb, &mut y);
        y
    }

    /// Full solve: optional warm start, dual simplex when the start is dual
    /// feasible, primal simplex otherwise.
    pub fn solve(&mut self, warm: Option<&WarmBasis>) -> Result<LpSolution> {
        self.iterations = 0;
        self.perturbed = false;
        if let Some(w) = warm {
            if !self.install(w) {
                self.install_slack_basis();
            }
        }
        if self.m == 0 {
            return self.solve_without_rows();
        }
        self.refactor()?;
        self.compute_xb();

        for _round in 0..4 {
            if self.max_basic_infeasibility() > self.opts.feas_tol {
                let y = self.phase2_duals();
                if self.dual_feasible(&y) {
                    match self.dual_simplex()? {
                        DualOutcome::Infeasible => {
                            return Ok(LpSolution::without_values(LpStatus::Infeasible, self.iterations))
                        }
                        DualOutcome::Feasible | DualOutcome::GaveUp => {}
                    }
                }
            }
            match self.primal()? {
                PrimalOutcome::Infeasible => {
                    return Ok(LpSolution::without_values(LpStatus::Infeasible, self.iterations))
                }
                PrimalOutcome::Unbounded => {
                    return Ok(LpSolution::without_values(LpStatus::Unbounded, self.iterations))
                }
                PrimalOutcome::Optimal => {}
            }
            // clean finish from a fresh factorization
            self.refactor()?;
            self.compute_xb();
            self.snap_basics();
            if self.max_basic_infeasibility() <= self.opts.feas_tol {
                let y = self.phase2_duals();
                if self.dual_feasible(&y) {
                    return Ok(self.extract(y));
                }
            }
        }
        Err(Error::Numerical("simplex failed to reach a clean optimum".into()))
    }

    fn solve_without_rows(&mut self) -> Result<LpSolution> {
        for j in 0..self.n {
            let c = self.cost[j];
            let (lo, hi) = (self.lo[j], self.hi[j]);
            if c > 0.0 {
                if !lo.is_finite() {
                    return Ok(LpSolution::without_values(LpStatus::Unbounded, 0));
                }
                self.x[j] = lo;
            } else if c < 0.0 {
                if !hi.is_finite() {
                    return Ok(LpSolution::without_values(LpStatus::Unbounded, 0));
                }
                self.x[j] = hi;
            } else {
                self.place_nonbasic(j);
            }
        }
        Ok(self.extract(Vec::new()))
    }

    fn snap_basics(&mut self) {
        for p in 0..self.m {
            let j = self.head[p];
            let v = self.x[j];
            let (lo, hi) = (self.lo[j], self.hi[j]);
            if lo.is_finite() && (v - lo).abs() <= SNAP_TOL * lo.abs().max(1.0) {
                self.x[j] = lo;
            } else if hi.is_finite() && (v - hi).abs() <= SNAP_TOL * hi.abs().max(1.0) {
                self.x[j] = hi;
            }
        }
    }

    fn extract(&self, y: Vec<f64>) -> LpSolution {
        let n = self.n;
        let primal: Vec<f64> = self.x[..n].to_vec();
        let reduced_costs: Vec<f64> = (0..n)
            .map(|j| if self.status[j] == VarStatus::Basic { 0.0 } else { self.reduced_cost(self.cost[j], &y, j) })
            .collect();
        let objective = primal.iter().zip(&self.cost).map(|(x, c)| x * c).sum();
        LpSolution {
            status: LpStatus::Optimal,
            primal,
            duals: y,
            reduced_costs,
            objective,
            iterations: self.iterations,
        }
    }

    /// Widens every non-fixed finite bound by a small deterministic amount
    /// and returns the original bounds.
    fn perturb_bounds(&mut self) -> (Vec<f64>, Vec<f64>) {
        let saved = (self.lo.clone(), self.hi.clone());
        for j in 0..self.n + self.m {
            let (l, h) = (self.lo[j], self.hi[j]);
            if l == h {
                continue;
            }
            let u = (j as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 11;
            let w = PERTURB * (1.0 + u as f64 / (1u64 << 53) as f64);
            if l.is_finite() {
                self.lo[j] = l - w * (1.0 + l.abs());
            }
            if h.is_finite() {
                self.hi[j] = h + w * (1.0 + h.abs());
            }
        }
        self.replace_nonbasics();
        saved
    }

    /// Shifts nonbasic costs away from zero reduced cost, keeping the basis
    /// dual feasible; returns the original costs.
    fn perturb_costs(&mut self) -> Vec<f64> {
        let saved = self.cost.clone();
        for j in 0..self.n + self.m {
            if self.lo[j] == self.hi[j] {
                continue;
            }
            let u = (j as u64 ^ 0x5bd1_e995).wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 11;
            let w = PERTURB * (1.0 + u as f64 / (1u64 << 53) as f64) * (1.0 + self.cost[j].abs());
            match self.status[j] {
                VarStatus::AtLower => self.cost[j] += w,
                VarStatus::AtUpper => self.cost[j] -= w,
                _ => {}
            }
        }
        saved
    }

    fn restore_bounds(&mut self, saved: (Vec<f64>, Vec<f64>)) {
        (self.lo, self.hi) = saved;
        self.replace_nonbasics();
    }

    fn replace_nonbasics(&mut self) {
        for j in 0..self.n + self.m {
            if self.status[j] != VarStatus::Basic {
                self.place_nonbasic(j);
            }
        }
        self.compute_xb();
    }

    fn maybe_refactor(&mut self) -> Result<()> {
        if self.factor.num_updates() >= self.opts.refactor_interval
            || self.factor.eta_nnz() > 4 * self.factor.factor_nnz() + 10 * self.m
        {
            self.refactor()?;
            self.compute_xb();
        }
        Ok(())
    }

    /// Phase-aware primal simplex. Phase 1 minimizes the sum of bound
    /// violations of basic variables; phase 2 the true objective.
    fn primal(&mut self) -> Result<PrimalOutcome> {
        let (n, m) = (self.n, self.m);
        let ftol = self.opts.feas_tol;
        let dtol = self.opts.opt_tol;
        let ptol = self.opts.pivot_tol;
        let stall_limit = 2 * m + 10;
        let mut cb = vec![0.0; m];
        let mut y = vec![0.0; m];
        let mut col = vec![0.0; m];
        let mut alpha = vec![0.0; m];
        let mut best_obj = f64::INFINITY;
        let mut best_phase1 = true;
        let mut stall = 0usize;
        let mut bland = false;
        let mut rejected: Vec<usize> = Vec::new();
        let mut saved: Option<(Vec<f64>, Vec<f64>)> = None;

        let outcome = loop {
            self.check_limits()?;
            self.maybe_refactor()?;

            // phase and basic costs
            let mut infeas_sum = 0.0;
            let mut phase1 = false;
            for p in 0..m {
                let j = self.head[p];
                let v = self.x[j];
                cb[p] = if v < self.lo[j] - ftol {
                    phase1 = true;
                    infeas_sum += self.lo[j] - v;
                    -1.0
                } else if v > self.hi[j] + ftol {
                    phase1 = true;
                    infeas_sum += v - self.hi[j];
                    1.0
                } else {
                    0.0
                };
            }
            if !phase1 {
                for p in 0..m {
                    cb[p] = self.cost[self.head[p]];
                }
            }
            let obj = if phase1 {
                infeas_sum
            } else {
                (0..n).map(|j| self.cost[j] * self.x[j]).sum()
            };
            if phase1 != best_phase1 {
                best_phase1 = phase1;
                best_obj = f64::INFINITY;
                stall = 0;
                bland = false;
            }
            if obj < best_obj - 1e-12 * best_obj.abs().max(1.0) {
                best_obj = obj;
                stall = 0;
                bland = false;
            } else {
                stall += 1;
                if stall > PERTURB_AFTER && !self.perturbed {
                    self.perturbed = true;
                    saved = Some(self.perturb_bounds());
                    best_obj = f64::INFINITY;
                    stall = 0;
                    continue;
                }
                if stall > stall_limit {
                    bland = true;
                }
            }

            self.duals_for(&mut cb, &mut y);

            // pricing
            let mut enter: Option<(usize, f64)> = None;
            let mut best_score = 0.0;
            for j in 0..n + m {
                let st = self.status[j];
                if st == VarStatus::Basic || self.lo[j] == self.hi[j] {
                    continue;
                }
                let c = if phase1 { 0.0 } else { self.cost[j] };
                let d = self.reduced_cost(c, &y, j);
                let eligible = match st {
                    VarStatus::AtLower => d < -dtol,
                    VarStatus::AtUpper => d > dtol,
                    VarStatus::Free => d.abs() > dtol,
                    VarStatus::Basic => false,
                };
                if !eligible || rejected.contains(&j) {
                    continue;
                }
                if bland {
                    enter = Some((j, d));
                    break;
                }
                if d.abs() > best_score {
                    best_score = d.abs();
                    enter = Some((j, d));
                }
            }
            let Some((q, dq)) = enter else {
                if phase1 {
                    if rejected.is_empty() {
                        break PrimalOutcome::Infeasible;
                    }
                } else if rejected.is_empty() {
                    break PrimalOutcome::Optimal;
                }
                // rejected candidates existed: refresh the factorization and retry them
                rejected.clear();
                self.refactor()?;
                self.compute_xb();
                self.iterations += 1;
                continue;
            };
            let dir = if dq < 0.0 { 1.0 } else { -1.0 };

            self.scatter_col(q, &mut col);
            self.factor.ftran(&mut col, &mut alpha);

            // ratio test
            let mut t_max = f64::INFINITY;
            let mut blocks: Vec<(usize, f64, f64, f64)> = Vec::new(); // (pos, dist, |rate|, target)
            for p in 0..m {
                let a = alpha[p];
                if a.abs() < ptol {
                    continue;
                }
                let j = self.head[p];
                let v = self.x[j];
                let rate = -dir * a;
                let (l, u) = (self.lo[j], self.hi[j]);
                let block = if rate < 0.0 {
                    if phase1 && v > u + ftol {
                        Some((v - u, u))
                    } else if v >= l - ftol && l.is_finite() {
                        Some(((v - l).max(0.0), l))
                    } else {
                        None
                    }
                } else if phase1 && v < l - ftol {
                    Some((l - v, l))
                } else if v <= u + ftol && u.is_finite() {
                    Some(((u - v).max(0.0), u))
                } else {
                    None
                };
                if let Some((dist, target)) = block {
                    let r = rate.abs();
                    t_max = t_max.min((dist + HARRIS_TOL) / r);
                    blocks.push((p, dist, r, target));
                }
            }
            let range = self.hi[q] - self.lo[q];
            let mut leave: Option<(usize, f64, f64)> = None; // (pos, step, target)
            if bland {
                let mut best = f64::INFINITY;
                for &(p, dist, r, target) in &blocks {
                    let ratio = dist / r;
                    let better = ratio < best - 1e-12
                        || (ratio <= best + 1e-12 && leave.is_some_and(|(bp, _, _)| self.head[p] < self.head[bp]));
                    if better {
                        best = best.min(ratio);
                        leave = Some((p, ratio, target));
                    }
                }
            } else {
                let mut best_abs = 0.0;
                for &(p, dist, r, target) in &blocks {
                    if dist / r <= t_max && alpha[p].abs() > best_abs {
                        best_abs = alpha[p].abs();
                        leave = Some((p, dist / r, target));
                    }
                }
            }

            let flip = range.is_finite() && leave.is_none_or(|(_, step, _)| range <= step);
            if flip {
                let t = range;
                for p in 0..m {
                    let j = self.head[p];
                    self.x[j] -= dir * alpha[p] * t;
                }
                if dir > 0.0 {
                    self.x[q] = self.hi[q];
                    self.status[q] = VarStatus::AtUpper;
                } else {
                    self.x[q] = self.lo[q];
                    self.status[q] = VarStatus::AtLower;
                }
                self.iterations += 1;
                rejected.clear();
                continue;
            }
            let Some((r, step, target)) = leave else {
                if phase1 {
                    // numerically empty column; skip it for now
                    rejected.push(q);
                    self.iterations += 1;
                    continue;
                }
                break PrimalOutcome::Unbounded;
            };
            if alpha[r].abs() < 1e-7 && !bland {
                // weak pivot: try to confirm against a fresh factorization
                if !rejected.contains(&q) && self.factor.num_updates() > 0 {
                    self.refactor()?;
                    self.compute_xb();
                    self.iterations += 1;
                    continue;
                }
            }
            let t = step.max(0.0);
            for p in 0..m {
                let j = self.head[p];
                self.x[j] -= dir * alpha[p] * t;
            }
            self.x[q] += dir * t;
            let out = self.head[r];
            self.x[out] = target;
            self.status[out] = if target == self.lo[out] { VarStatus::AtLower } else { VarStatus::AtUpper };
            self.head[r] = q;
            self.status[q] = VarStatus::Basic;
            self.factor.update(r, &alpha);
            self.iterations += 1;
            rejected.clear();
        };
        // the perturbed program is a relaxation, so its verdicts carry over
        if let Some(b) = saved {
            self.restore_bounds(b);
        }
        Ok(outcome)
    }

    /// Reduced costs of every column for the current costs; zero for basics.
    fn all_reduced_costs(&self) -> Vec<f64> {
        let mut cb: Vec<f64> = self.head.iter().map(|&j| self.cost[j]).collect();
        let mut y = vec![0.0; self.m];
        self.factor.btran(&mut cb, &mut y);
        (0..self.n + self.m)
            .map(|j| if self.status[j] == VarStatus::Basic { 0.0 } else { self.reduced_cost(self.cost[j], &y, j) })
            .collect()
    }

    /// Dual simplex from a dual-feasible basis until primal feasibility.
    /// Rows are priced by dual steepest edge, with reference weights of one
    /// at entry; reduced costs are updated along the pivot row and refreshed
    /// at each refactorization.
    fn dual_simplex(&mut self) -> Result<DualOutcome> {
        let (n, m) = (self.n, self.m);
        let ftol = self.opts.feas_tol;
        let ptol = self.opts.pivot_tol;
        let dtol = self.opts.opt_tol;
        let budget = self.iterations + 20 * (n + m) + 1000;
        let mut rho = vec![0.0; m];
        let mut e = vec![0.0; m];
        let mut col = vec![0.0; m];
        let mut alpha = vec![0.0; m];
        let mut tau = vec![0.0; m];
        let mut row_alpha = std::mem::take(&mut self.buf_n);
        let saved_cost = self.perturb_costs();
        let mut weights = vec![1.0; m];
        let mut d = self.all_reduced_costs();
        let mut cands: Vec<(usize, f64, f64)> = Vec::new(); // (j, |d|, |alpha|)

        let outcome = loop {
            if self.iterations >= budget {
                break DualOutcome::GaveUp;
            }
            self.check_limits()?;
            let updates = self.factor.num_updates();
            self.maybe_refactor()?;
            if self.factor.num_updates() < updates {
                d = self.all_reduced_costs();
            }

            // leaving row: largest squared violation relative to its weight
            let mut leave: Option<(usize, f64, bool)> = None; // (pos, score, to_lower)
            for p in 0..m {
                let j = self.head[p];
                let v = self.x[j];
                let (below, above) = (self.lo[j] - v, v - self.hi[j]);
                let (viol, to_lower) = if below > ftol {
                    (below, true)
                } else if above > ftol {
                    (above, false)
                } else {
                    continue;
                };
                let score = viol * viol / weights[p];
                if leave.is_none_or(|l| score > l.1) {
                    leave = Some((p, score, to_lower));
                }
            }
            let Some((r, _, to_lower)) = leave else { break DualOutcome::Feasible };
            let out = self.head[r];
            let target = if to_lower { self.lo[out] } else { self.hi[out] };

            e.iter_mut().for_each(|v| *v = 0.0);
            e[r] = 1.0;
            self.factor.btran(&mut e, &mut rho);

            // pivot row over structurals via the row-wise matrix
            row_alpha.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..m {
                let ri = rho[i];
                if ri != 0.0 {
                    for t in self.row_start[i]..self.row_start[i + 1] {
                        row_alpha[self.row_idx[t]] += ri * self.row_val[t];
                    }
                }
            }

            // dual ratio test (Harris two-pass)
            cands.clear();
            let mut t_max = f64::INFINITY;
            for j in 0..n + m {
                let st = self.status[j];
                if st == VarStatus::Basic || self.lo[j] == self.hi[j] {
                    continue;
                }
                let a = if j < n { row_alpha[j] } else { rho[j - n] };
                if a.abs() < ptol {
                    continue;
                }
                // x_r changes by -a * dx_j; it must move toward `target`
                let ok = match (st, to_lower) {
                    (VarStatus::AtLower, true) => a < 0.0,
                    (VarStatus::AtUpper, true) => a > 0.0,
                    (VarStatus::AtLower, false) => a > 0.0,
                    (VarStatus::AtUpper, false) => a < 0.0,
                    (VarStatus::Free, _) => true,
                    (VarStatus::Basic, _) => false,
                };
                if !ok {
                    continue;
                }
                let dj = d[j];
                let dabs = match st {
                    VarStatus::AtLower => dj.max(0.0),
                    VarStatus::AtUpper => (-dj).max(0.0),
                    _ => dj.abs(),
                };
                t_max = t_max.min((dabs + dtol) / a.abs());
                cands.push((j, dabs, a.abs()));
            }
            let mut enter: Option<usize> = None;
            let mut best_abs = 0.0;
            for &(j, dabs, aabs) in &cands {
                if dabs / aabs <= t_max && aabs > best_abs {
                    best_abs = aabs;
                    enter = Some(j);
                }
            }
            let Some(q) = enter else { break DualOutcome::Infeasible };

            self.scatter_col(q, &mut col);
            self.factor.ftran(&mut col, &mut alpha);
            let arq = alpha[r];
            if arq.abs() < ptol {
                if self.factor.num_updates() > 0 {
                    self.refactor()?;
                    self.compute_xb();
                    d = self.all_reduced_costs();
                    self.iterations += 1;
                    continue;
                }
                break DualOutcome::GaveUp;
            }

            // reduced costs along the pivot row
            let a_rq = if q < n { row_alpha[q] } else { rho[q - n] };
            let theta = d[q] / a_rq;
            if theta != 0.0 {
                for j in 0..n + m {
                    if self.status[j] == VarStatus::Basic {
                        continue;
                    }
                    let a = if j < n { row_alpha[j] } else { rho[j - n] };
                    if a != 0.0 {
                        d[j] -= theta * a;
                    }
                }
            }
            d[q] = 0.0;
            d[out] = -theta;

            // steepest-edge weights
            let w_r: f64 = rho.iter().map(|v| v * v).sum();
            col.copy_from_slice(&rho);
            self.factor.ftran(&mut col, &mut tau);
            for p in 0..m {
                if p == r {
                    continue;
                }
                let ratio = alpha[p] / arq;
                if ratio != 0.0 {
                    weights[p] = (weights[p] - 2.0 * ratio * tau[p] + ratio * ratio * w_r).max(1e-8);
                }
            }
            weights[r] = (w_r / (arq * arq)).max(1e-8);

            let dx = (self.x[out] - target) / arq;
            for p in 0..m {
                let j = self.head[p];
                self.x[j] -= alpha[p] * dx;
            }
            self.x[q] += dx;
            self.x[out] = target;
            self.status[out] = if to_lower { VarStatus::AtLower } else { VarStatus::AtUpper };
            self.head[r] = q;
            self.status[q] = VarStatus::Basic;
            self.factor.update(r, &alpha);
            self.iterations += 1;
        };
        self.buf_n = row_alpha;
        self.cost = saved_cost;
        Ok(outcome)
    }
}
