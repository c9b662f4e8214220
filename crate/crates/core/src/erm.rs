//! Empirical risk minimization for the feature-based newsvendor.
//!
//! The order is `q = beta'x` and the training objective is the mean cost
//! `(1/|T|) sum b u_i + h o_i` with shortage `u_i >= d_i - beta'x_i` and
//! surplus `o_i >= beta'x_i - d_i`. Regularized variants add `lambda |beta|_1`
//! (an LP) or `lambda |z|_0` with `beta_j = 0` whenever `z_j = 0` (a MILP).
//! [`grid_search`] calibrates `lambda` on a validation set or on
//! cross-validation splits.

use serde::{Deserialize, Serialize};

use crate::datagen::{CvSplits, Dataset};
use crate::error::{invalid, Error, Result};
use crate::lp::{solve_lp, LinearProgram, LpStatus, Relation};
use crate::metrics::newsvendor_cost;
use crate::milp::{solve_milp_with, Indicator, MilpRun, MilpStatus, MixedIntegerProgram, SolveLimits};
use crate::par::{self, Exec};

/// Coefficients with magnitude at or below `1e-6 * max(1, |beta|_inf)` count
/// as unselected.
pub const SELECT_REL_TOL: f64 = 1e-6;
/// Retries of an unproven coefficient bound, each multiplying it by 10.
pub const BETA_BOUND_RETRIES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub b: f64,
    pub h: f64,
}

impl CostParams {
    pub fn new(b: f64, h: f64) -> Result<Self> {
        let c = CostParams { b, h };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b > 0.0 && self.h > 0.0 && self.b.is_finite() && self.h.is_finite()) {
            return Err(invalid(format!("costs must be positive, got b = {}, h = {}", self.b, self.h)));
        }
        Ok(())
    }

    /// `b / (b + h)`.
    pub fn critical_ratio(&self) -> f64 {
        self.b / (self.b + self.h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionFunction {
    pub beta: Vec<f64>,
}

impl DecisionFunction {
    pub fn zeros(m: usize) -> Self {
        DecisionFunction { beta: vec![0.0; m + 1] }
    }

    pub fn order(&self, x: &[f64]) -> f64 {
        self.beta.iter().zip(x).map(|(b, v)| b * v).sum()
    }
}

/// Selection over all `m + 1` coefficients; slot 0 is the intercept.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureMask {
    pub z: Vec<bool>,
}

impl FeatureMask {
    pub fn full(m: usize) -> Self {
        FeatureMask { z: vec![true; m + 1] }
    }

    pub fn intercept_only(m: usize) -> Self {
        let mut z = vec![false; m + 1];
        z[0] = true;
        FeatureMask { z }
    }

    /// Bit `j` of `bits` selects coefficient `j`.
    pub fn from_bits(m: usize, bits: u64) -> Self {
        FeatureMask { z: (0..=m).map(|j| bits >> j & 1 == 1).collect() }
    }

    pub fn m(&self) -> usize {
        self.z.len() - 1
    }

    /// Selection over the non-intercept features `1..=m`.
    pub fn features(&self) -> &[bool] {
        &self.z[1..]
    }

    pub fn count(&self) -> usize {
        self.z.iter().filter(|v| **v).count()
    }

    /// Mask of the coefficients of `beta` that are numerically nonzero.
    pub fn from_beta(beta: &[f64]) -> Self {
        let scale = beta.iter().fold(1.0f64, |a, b| a.max(b.abs()));
        FeatureMask { z: beta.iter().map(|b| b.abs() > SELECT_REL_TOL * scale).collect() }
    }
}

/// A built ERM program and where each quantity lives in it.
#[derive(Debug, Clone)]
pub struct ErmProgram {
    pub lp: LinearProgram,
    /// Column of `beta_j`, `None` when masked out.
    pub beta_cols: Vec<Option<usize>>,
    pub u_cols: Vec<usize>,
    pub o_cols: Vec<usize>,
    /// Row index of the shortage and surplus rows per training point.
    pub u_rows: Vec<usize>,
    pub o_rows: Vec<usize>,
}

impl ErmProgram {
    pub fn beta_from(&self, x: &[f64]) -> DecisionFunction {
        DecisionFunction { beta: self.beta_cols.iter().map(|c| c.map_or(0.0, |c| x[c])).collect() }
    }
}

fn check_train(t: &Dataset) -> Result<()> {
    if t.n() == 0 {
        return Err(invalid("training set is empty"));
    }
    Ok(())
}

/// Plain ERM, with masked-out coefficients removed from the program.
pub fn build_erm_lp(t: &Dataset, costs: &CostParams, mask: Option<&FeatureMask>) -> Result<ErmProgram> {
    check_train(t)?;
    costs.validate()?;
    if let Some(mk) = mask {
        if mk.z.len() != t.m + 1 {
            return Err(invalid(format!("mask has {} slots for m = {}", mk.z.len(), t.m)));
        }
    }
    let n = t.n() as f64;
    let mut lp = LinearProgram::new(0);
    let beta_cols: Vec<Option<usize>> = (0..=t.m)
        .map(|j| {
            let on = mask.is_none_or(|mk| mk.z[j]);
            on.then(|| lp.add_named_var(format!("beta{j}"), 0.0, f64::NEG_INFINITY, f64::INFINITY))
        })
        .collect();
    let u_cols: Vec<usize> =
        (0..t.n()).map(|i| lp.add_named_var(format!("u{i}"), costs.b / n, 0.0, f64::INFINITY)).collect();
    let o_cols: Vec<usize> =
        (0..t.n()).map(|i| lp.add_named_var(format!("o{i}"), costs.h / n, 0.0, f64::INFINITY)).collect();
    let mut u_rows = Vec::with_capacity(t.n());
    let mut o_rows = Vec::with_capacity(t.n());
    for (i, (x, &d)) in t.features.iter().zip(&t.demands).enumerate() {
        let bx: Vec<(usize, f64)> =
            beta_cols.iter().zip(x).filter_map(|(c, &v)| c.filter(|_| v != 0.0).map(|c| (c, v))).collect();
        let mut row = vec![(u_cols[i], 1.0)];
        row.extend(bx.iter().copied());
        u_rows.push(lp.add_row(row, Relation::Ge, d));
        let mut row = vec![(o_cols[i], 1.0)];
        row.extend(bx.iter().map(|&(c, v)| (c, -v)));
        o_rows.push(lp.add_row(row, Relation::Ge, -d));
    }
    Ok(ErmProgram { lp, beta_cols, u_cols, o_cols, u_rows, o_rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErmFit {
    pub function: DecisionFunction,
    pub mask: FeatureMask,
    /// Optimal training objective, penalty included.
    pub objective: f64,
    /// Mean newsvendor cost on the training data.
    pub train_cost: f64,
    /// MILP gap for the L0 model, `None` for LP fits.
    pub gap: Option<f64>,
}

fn solved_lp(lp: &LinearProgram) -> Result<crate::lp::LpSolution> {
    let sol = solve_lp(lp)?;
    match sol.status {
        LpStatus::Optimal => Ok(sol),
        s => Err(Error::NoSolution(format!("ERM LP ended {s:?}"))),
    }
}

/// Masked plain ERM; masked coefficients are exact zeros.
pub fn fit_erm(t: &Dataset, costs: &CostParams, mask: Option<&FeatureMask>) -> Result<ErmFit> {
    let prog = build_erm_lp(t, costs, mask)?;
    let sol = solved_lp(&prog.lp)?;
    let function = prog.beta_from(&sol.primal);
    let train_cost = newsvendor_cost(&function, t, costs)?;
    let mask = match mask {
        Some(mk) => mk.clone(),
        None => FeatureMask::full(t.m),
    };
    Ok(ErmFit { function, mask, objective: sol.objective, train_cost, gap: None })
}

/// ERM with `lambda * sum_j t_j`, `t_j >= |beta_j|`.
pub fn build_erm_l1(t: &Dataset, costs: &CostParams, lambda: f64, penalize_intercept: bool) -> Result<ErmProgram> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(invalid(format!("lambda must be finite and nonnegative, got {lambda}")));
    }
    let mut prog = build_erm_lp(t, costs, None)?;
    for j in 0..=t.m {
        if j == 0 && !penalize_intercept {
            continue;
        }
        let b = prog.beta_cols[j].expect("unmasked");
        let tj = prog.lp.add_named_var(format!("t{j}"), lambda, 0.0, f64::INFINITY);
        prog.lp.add_row(vec![(tj, 1.0), (b, -1.0)], Relation::Ge, 0.0);
        prog.lp.add_row(vec![(tj, 1.0), (b, 1.0)], Relation::Ge, 0.0);
    }
    Ok(prog)
}

pub fn fit_erm_l1(t: &Dataset, costs: &CostParams, lambda: f64, penalize_intercept: bool) -> Result<ErmFit> {
    let prog = build_erm_l1(t, costs, lambda, penalize_intercept)?;
    let sol = solved_lp(&prog.lp)?;
    let function = prog.beta_from(&sol.primal);
    let train_cost = newsvendor_cost(&function, t, costs)?;
    let mask = FeatureMask::from_beta(&function.beta);
    Ok(ErmFit { function, mask, objective: sol.objective, train_cost, gap: None })
}

/// Default bound on `|beta_j|` for indicator rows:
/// `10 max|d| / max(1, smallest nonzero column scale)`, the column scale
/// being `max_i |x_ij|`.
pub fn default_beta_bound(t: &Dataset) -> f64 {
    let dmax = t.demands.iter().fold(0.0f64, |a, d| a.max(d.abs()));
    let min_scale = (0..=t.m)
        .map(|j| t.features.iter().fold(0.0f64, |a, x| a.max(x[j].abs())))
        .filter(|s| *s > 0.0)
        .fold(f64::INFINITY, f64::min);
    let min_scale = if min_scale.is_finite() { min_scale } else { 1.0 };
    (10.0 * dmax / min_scale.max(1.0)).max(1.0)
}

/// ERM with `lambda * sum_j z_j` and `beta_j = 0` whenever `z_j = 0`.
/// Binaries are columns `zs`; see [`ErmProgram`] for the rest.
pub fn build_erm_l0(
    t: &Dataset,
    costs: &CostParams,
    lambda: f64,
    beta_bound: f64,
    penalize_intercept: bool,
) -> Result<(MixedIntegerProgram, ErmProgram, Vec<usize>)> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(invalid(format!("lambda must be finite and nonnegative, got {lambda}")));
    }
    if !(beta_bound.is_finite() && beta_bound > 0.0) {
        return Err(invalid(format!("beta bound must be finite and positive, got {beta_bound}")));
    }
    let prog = build_erm_lp(t, costs, None)?;
    let mut mip = MixedIntegerProgram::new(prog.lp.clone());
    let mut zs = Vec::with_capacity(t.m + 1);
    for j in 0..=t.m {
        let cost = if j == 0 && !penalize_intercept { 0.0 } else { lambda };
        let z = mip.add_binary(Some(&format!("z{j}")), cost);
        zs.push(z);
        mip.indicators.push(Indicator {
            binary: z,
            trigger: false,
            coeffs: vec![(prog.beta_cols[j].expect("unmasked"), 1.0)],
            big_m: Some(beta_bound),
            proven: false,
        });
    }
    Ok((mip, prog, zs))
}

#[derive(Debug, Clone)]
pub struct L0Options {
    pub limits: SolveLimits,
    /// `None` selects [`default_beta_bound`].
    pub beta_bound: Option<f64>,
    pub penalize_intercept: bool,
    /// Optional starting mask for the MILP.
    pub start: Option<FeatureMask>,
}

impl Default for L0Options {
    fn default() -> Self {
        L0Options { limits: SolveLimits::default(), beta_bound: None, penalize_intercept: true, start: None }
    }
}

/// Solves ERM-L0, widening the coefficient bound when it turns out active.
pub fn fit_erm_l0(t: &Dataset, costs: &CostParams, lambda: f64, opts: &L0Options) -> Result<ErmFit> {
    let mut bound = opts.beta_bound.unwrap_or_else(|| default_beta_bound(t));
    for attempt in 0..=BETA_BOUND_RETRIES {
        let (mip, prog, zs) = build_erm_l0(t, costs, lambda, bound, opts.penalize_intercept)?;
        let mut run = MilpRun::new(opts.limits);
        if let Some(start) = &opts.start {
            run.starts.push(start.z.clone());
        }
        run.starts.push(vec![true; zs.len()]);
        let sol = solve_milp_with(&mip, run)?;
        match sol.status {
            MilpStatus::Optimal | MilpStatus::FeasibleTimeLimit => {}
            s => return Err(Error::NoSolution(format!("ERM-L0 MILP ended {s:?}"))),
        }
        if !sol.m_bound_suspect.is_empty() {
            if attempt == BETA_BOUND_RETRIES {
                return Err(Error::MBoundSuspect { bound, retries: attempt });
            }
            log::debug!("ERM-L0 coefficient bound {bound} active; retrying with {}", bound * 10.0);
            bound *= 10.0;
            continue;
        }
        let function = prog.beta_from(&sol.primal);
        let z: Vec<bool> = zs.iter().map(|&c| sol.primal[c] > 0.5).collect();
        let nz = FeatureMask::from_beta(&function.beta);
        let mask = FeatureMask { z: z.iter().zip(&nz.z).map(|(a, b)| *a && *b).collect() };
        let train_cost = newsvendor_cost(&function, t, costs)?;
        return Ok(ErmFit { function, mask, objective: sol.objective, train_cost, gap: Some(sol.gap) });
    }
    unreachable!("retry loop returns")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regularizer {
    L0,
    L1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrid {
    pub values: Vec<f64>,
}

impl LambdaGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("lambda grid is empty"));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("lambda grid must be nonnegative and strictly increasing"));
        }
        Ok(LambdaGrid { values })
    }

    /// `0` followed by `points` log-spaced values on
    /// `[1e-4 lambda_max, lambda_max]`, where
    /// `lambda_max = max(b, h) / |T| * sum_i |x_i|_inf`.
    pub fn data_scaled(t: &Dataset, costs: &CostParams, points: usize) -> Result<Self> {
        check_train(t)?;
        let sum_inf: f64 = t.features.iter().map(|x| x.iter().fold(0.0f64, |a, v| a.max(v.abs()))).sum();
        let top = costs.b.max(costs.h) / t.n() as f64 * sum_inf;
        let lo = 1e-4 * top;
        let mut values = vec![0.0];
        if points == 1 {
            values.push(top);
        } else {
            let step = (top / lo).ln() / (points - 1) as f64;
            values.extend((0..points).map(|k| lo * (step * k as f64).exp()));
        }
        LambdaGrid::new(values)
    }
}

/// Where validation costs come from.
#[derive(Debug, Clone, Copy)]
pub enum Validation<'a> {
    Holdout { train: &'a Dataset, validation: &'a Dataset },
    /// Splits index into `sample`.
    Cv { sample: &'a Dataset, splits: &'a CvSplits },
}

#[derive(Debug, Clone)]
pub struct GridOptions {
    /// The time limit is shared evenly across grid points (and splits).
    pub limits: SolveLimits,
    pub exec: Exec,
    pub penalize_intercept: bool,
    pub beta_bound: Option<f64>,
}

impl Default for GridOptions {
    fn default() -> Self {
        GridOptions { limits: SolveLimits::default(), exec: Exec::default(), penalize_intercept: true, beta_bound: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lambda: f64,
    pub validation_cost: Option<f64>,
    pub selected: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub model: Regularizer,
    pub lambda_star: f64,
    /// Fit at `lambda_star` on the training set (hold-out) or on the whole
    /// sample (cross-validation).
    pub fit: ErmFit,
    pub validation_cost: f64,
    pub points: Vec<GridPoint>,
}

/// One regularized fit.
pub fn fit_regularized(
    t: &Dataset,
    costs: &CostParams,
    model: Regularizer,
    lambda: f64,
    limits: SolveLimits,
    penalize_intercept: bool,
    beta_bound: Option<f64>,
) -> Result<ErmFit> {
    match model {
        Regularizer::L1 => fit_erm_l1(t, costs, lambda, penalize_intercept),
        Regularizer::L0 => {
            let opts = L0Options { limits, beta_bound, penalize_intercept, start: None };
            fit_erm_l0(t, costs, lambda, &opts)
        }
    }
}

/// Evaluates every grid value and returns the one with the lowest validation
/// cost (ties go to the smaller lambda). Failed points are recorded and
/// skipped.
pub fn grid_search(
    data: Validation<'_>,
    costs: &CostParams,
    model: Regularizer,
    grid: &LambdaGrid,
    opts: &GridOptions,
) -> Result<GridResult> {
    costs.validate()?;
    opts.limits.validate()?;
    let splits: Vec<(Dataset, Dataset)> = match data {
        Validation::Holdout { train, validation } => vec![(train.clone(), validation.clone())],
        Validation::Cv { sample, splits } => {
            if splits.splits.is_empty() {
                return Err(invalid("no cross-validation splits"));
            }
            splits.splits.iter().map(|(t, v)| (sample.subset(t), sample.subset(v))).collect()
        }
    };
    let per_fit = SolveLimits {
        time_limit: opts.limits.time_limit / (grid.values.len() * splits.len()) as f64,
        ..opts.limits
    };
    let evaluate = |&lambda: &f64| -> Result<(f64, usize)> {
        let mut total = 0.0;
        let mut selected = 0;
        for (t, v) in &splits {
            let fit = fit_regularized(t, costs, model, lambda, per_fit, opts.penalize_intercept, opts.beta_bound)?;
            total += newsvendor_cost(&fit.function, v, costs)?;
            selected = fit.mask.count();
        }
        Ok((total / splits.len() as f64, selected))
    };
    let outcomes = par::map(opts.exec, &grid.values, evaluate);

    let mut points = Vec::with_capacity(grid.values.len());
    let mut best: Option<(f64, f64)> = None;
    let mut last_err = String::new();
    for (&lambda, out) in grid.values.iter().zip(outcomes) {
        match out {
            Ok((cost, selected)) => {
                if best.is_none_or(|(_, c)| cost < c - 1e-12 * c.abs().max(1.0)) {
                    best = Some((lambda, cost));
                }
                points.push(GridPoint { lambda, validation_cost: Some(cost), selected: Some(selected), error: None });
            }
            Err(e) => {
                log::warn!("grid point lambda = {lambda} failed: {e}");
                last_err = e.to_string();
                points.push(GridPoint { lambda, validation_cost: None, selected: None, error: Some(last_err.clone()) });
            }
        }
    }
    let Some((lambda_star, validation_cost)) = best else {
        return Err(Error::AllGridPointsFailed(last_err));
    };
    let fit_on = match data {
        Validation::Holdout { train, .. } => train,
        Validation::Cv { sample, .. } => sample,
    };
    let fit_limits = SolveLimits { time_limit: per_fit.time_limit.max(1.0), ..opts.limits };
    let fit = fit_regularized(fit_on, costs, model, lambda_star, fit_limits, opts.penalize_intercept, opts.beta_bound)?;
    Ok(GridResult { model, lambda_star, fit, validation_cost, points })
}
