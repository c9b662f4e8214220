//! Bilevel feature selection.
//!
//! The upper level picks a mask `z` minimizing validation cost; the lower
//! level fits masked ERM on the training rows. Replacing the lower level by
//! its optimality conditions gives a single MILP per block `(T, V)`:
//!
//! ```text
//! min  (1/|V|) sum_V b u_i + h o_i
//!      u_i + beta'x_i >= d_i,  o_i - beta'x_i >= -d_i        (i in T and V)
//!      (1/|T|) sum_T b u_i + h o_i <= sum_T (gamma_i - mu_i) d_i
//!      -b/|T| <= mu_i <= 0,  -h/|T| <= gamma_i <= 0
//!      z_j = 1  =>  sum_T (mu_i - gamma_i) x_ij = 0
//!      z_j = 0  =>  beta_j = 0
//! ```
//!
//! `mu_i` and `gamma_i` are the negated duals of the lower-level shortage and
//! surplus rows. The cross-validated model stacks `K` blocks sharing `z` and
//! averages their objectives.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::datagen::{CvSplits, Dataset};
use crate::erm::{default_beta_bound, fit_erm, CostParams, DecisionFunction, BETA_BOUND_RETRIES};
pub use crate::erm::FeatureMask;
use crate::error::{invalid, Error, Result};
use crate::lp::{solve_lp, LinearProgram, LpStatus, Relation};
use crate::metrics::newsvendor_cost;
use crate::milp::{solve_milp_with, Indicator, MilpRun, MilpSolution, MilpStatus, MixedIntegerProgram, SolveLimits};
use crate::par::{self, Exec};

/// Largest `m` accepted by the exhaustive oracle (`2^(m+1)` masks).
pub const BRUTE_FORCE_MAX_M: usize = 12;

/// `M_j = max(b, h)/|T| * sum_i |x_ij|`, a valid bound on
/// `|sum_T (mu_i - gamma_i) x_ij|` because `mu_i - gamma_i` lies in
/// `[-b/|T|, h/|T|]`.
pub fn derive_dual_big_m(t: &Dataset, costs: &CostParams) -> Result<Vec<f64>> {
    if t.n() == 0 {
        return Err(invalid("training set is empty"));
    }
    let w = costs.b.max(costs.h) / t.n() as f64;
    Ok((0..=t.m).map(|j| w * t.features.iter().map(|x| x[j].abs()).sum::<f64>()).collect())
}

/// Column indices of one `(T, V)` block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockLayout {
    pub beta: Vec<usize>,
    pub u_train: Vec<usize>,
    pub o_train: Vec<usize>,
    pub u_val: Vec<usize>,
    pub o_val: Vec<usize>,
    pub mu: Vec<usize>,
    pub gamma: Vec<usize>,
    pub gap_row: usize,
}

#[derive(Debug, Clone)]
pub struct BfsModel {
    pub mip: MixedIntegerProgram,
    pub z: Vec<usize>,
    pub blocks: Vec<BlockLayout>,
    pub beta_bound: f64,
}

fn check_pair(t: &Dataset, v: &Dataset) -> Result<()> {
    if t.n() == 0 || v.n() == 0 {
        return Err(invalid("training and validation sets must be nonempty"));
    }
    if t.m != v.m {
        return Err(invalid("training and validation sets differ in m"));
    }
    Ok(())
}

fn shortage_rows(
    mip: &mut MixedIntegerProgram,
    data: &Dataset,
    beta: &[usize],
    u: &[usize],
    o: &[usize],
) {
    for (i, (x, &d)) in data.features.iter().zip(&data.demands).enumerate() {
        let bx: Vec<(usize, f64)> = beta.iter().zip(x).filter(|(_, v)| **v != 0.0).map(|(&c, &v)| (c, v)).collect();
        let mut row = vec![(u[i], 1.0)];
        row.extend(bx.iter().copied());
        mip.base.add_row(row, Relation::Ge, d);
        let mut row = vec![(o[i], 1.0)];
        row.extend(bx.iter().map(|&(c, v)| (c, -v)));
        mip.base.add_row(row, Relation::Ge, -d);
    }
}

fn add_block(
    mip: &mut MixedIntegerProgram,
    z: &[usize],
    k: usize,
    t: &Dataset,
    v: &Dataset,
    costs: &CostParams,
    beta_bound: f64,
    weight: f64,
) -> Result<BlockLayout> {
    check_pair(t, v)?;
    let (nt, nv) = (t.n() as f64, v.n() as f64);
    let lp = &mut mip.base;
    let beta: Vec<usize> =
        (0..=t.m).map(|j| lp.add_named_var(format!("beta{j}_{k}"), 0.0, f64::NEG_INFINITY, f64::INFINITY)).collect();
    let u_train: Vec<usize> = (0..t.n()).map(|i| lp.add_named_var(format!("uT{i}_{k}"), 0.0, 0.0, f64::INFINITY)).collect();
    let o_train: Vec<usize> = (0..t.n()).map(|i| lp.add_named_var(format!("oT{i}_{k}"), 0.0, 0.0, f64::INFINITY)).collect();
    let u_val: Vec<usize> = (0..v.n())
        .map(|i| lp.add_named_var(format!("uV{i}_{k}"), weight * costs.b / nv, 0.0, f64::INFINITY))
        .collect();
    let o_val: Vec<usize> = (0..v.n())
        .map(|i| lp.add_named_var(format!("oV{i}_{k}"), weight * costs.h / nv, 0.0, f64::INFINITY))
        .collect();
    let mu: Vec<usize> = (0..t.n()).map(|i| lp.add_named_var(format!("mu{i}_{k}"), 0.0, -costs.b / nt, 0.0)).collect();
    let gamma: Vec<usize> =
        (0..t.n()).map(|i| lp.add_named_var(format!("gamma{i}_{k}"), 0.0, -costs.h / nt, 0.0)).collect();

    shortage_rows(mip, v, &beta, &u_val, &o_val);
    shortage_rows(mip, t, &beta, &u_train, &o_train);

    // lower-level primal objective <= dual objective
    let mut gap = Vec::with_capacity(4 * t.n());
    for i in 0..t.n() {
        gap.push((u_train[i], costs.b / nt));
        gap.push((o_train[i], costs.h / nt));
        let d = t.demands[i];
        if d != 0.0 {
            gap.push((gamma[i], -d));
            gap.push((mu[i], d));
        }
    }
    let gap_row = mip.base.add_row(gap, Relation::Le, 0.0);

    let dual_m = derive_dual_big_m(t, costs)?;
    for j in 0..=t.m {
        mip.indicators.push(Indicator {
            binary: z[j],
            trigger: false,
            coeffs: vec![(beta[j], 1.0)],
            big_m: Some(beta_bound),
            proven: false,
        });
        if dual_m[j] > 0.0 {
            let mut coeffs = Vec::with_capacity(2 * t.n());
            for (i, x) in t.features.iter().enumerate() {
                if x[j] != 0.0 {
                    coeffs.push((mu[i], x[j]));
                    coeffs.push((gamma[i], -x[j]));
                }
            }
            mip.indicators.push(Indicator { binary: z[j], trigger: true, coeffs, big_m: Some(dual_m[j]), proven: true });
        }
    }
    Ok(BlockLayout { beta, u_train, o_train, u_val, o_val, mu, gamma, gap_row })
}

fn build_blocks(pairs: &[(Dataset, Dataset)], costs: &CostParams, beta_bound: f64) -> Result<BfsModel> {
    costs.validate()?;
    if pairs.is_empty() {
        return Err(invalid("at least one training/validation pair is needed"));
    }
    if !(beta_bound.is_finite() && beta_bound > 0.0) {
        return Err(invalid(format!("beta bound must be finite and positive, got {beta_bound}")));
    }
    let m = pairs[0].0.m;
    let mut mip = MixedIntegerProgram::new(LinearProgram::new(0));
    let z: Vec<usize> = (0..=m).map(|j| mip.add_binary(Some(&format!("z{j}")), 0.0)).collect();
    let weight = 1.0 / pairs.len() as f64;
    let mut blocks = Vec::with_capacity(pairs.len());
    for (k, (t, v)) in pairs.iter().enumerate() {
        if t.m != m {
            return Err(invalid("all splits must share m"));
        }
        blocks.push(add_block(&mut mip, &z, k, t, v, costs, beta_bound, weight)?);
    }
    Ok(BfsModel { mip, z, blocks, beta_bound })
}

/// Hold-out model with uncompiled indicators.
pub fn build_bfs_single_level(t: &Dataset, v: &Dataset, costs: &CostParams, beta_bound: f64) -> Result<BfsModel> {
    build_blocks(&[(t.clone(), v.clone())], costs, beta_bound)
}

fn split_pairs(sample: &Dataset, splits: &CvSplits) -> Result<Vec<(Dataset, Dataset)>> {
    if splits.splits.is_empty() {
        return Err(invalid("CV needs K >= 1 splits"));
    }
    let n = sample.n();
    for (t, v) in &splits.splits {
        if t.iter().chain(v).any(|&i| i >= n) {
            return Err(invalid("split index out of range"));
        }
    }
    Ok(splits.splits.iter().map(|(t, v)| (sample.subset(t), sample.subset(v))).collect())
}

/// Cross-validated model: one block per split, shared `z`.
pub fn build_bfs_cv(sample: &Dataset, splits: &CvSplits, costs: &CostParams, beta_bound: f64) -> Result<BfsModel> {
    build_blocks(&split_pairs(sample, splits)?, costs, beta_bound)
}

#[derive(Debug, Clone, Default)]
pub struct BfsOptions {
    pub limits: SolveLimits,
    /// `None` selects [`default_beta_bound`] on the pooled training rows.
    pub beta_bound: Option<f64>,
    /// Masks tried as incumbents before branching.
    pub starts: Vec<FeatureMask>,
    /// Appends the branch-and-bound node log (JSON lines) to this file.
    pub log_path: Option<PathBuf>,
}

/// Lower-level optimality evidence for one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// Training cost of the block's coefficients.
    pub lower_objective: f64,
    /// `sum_T (gamma_i - mu_i) d_i`.
    pub dual_objective: f64,
    pub duality_residual: f64,
    /// Largest `|sum_T (mu_i - gamma_i) x_ij|` over selected `j`.
    pub stationarity_residual: f64,
    /// Largest excursion of the raw solver duals outside their boxes, before
    /// projection onto them.
    pub raw_box_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDuals {
    pub mu: Vec<f64>,
    pub gamma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BfsSolution {
    pub mask: FeatureMask,
    /// Lower-level coefficients per block.
    pub beta_lower: Vec<DecisionFunction>,
    /// Model objective at the incumbent (mean validation cost, averaged over
    /// blocks).
    pub validation_cost: f64,
    pub duals: Vec<SplitDuals>,
    pub certificates: Vec<Certificate>,
    /// Solver summary; `primal` is cleared.
    pub solver: MilpSolution,
    pub beta_bound: f64,
    pub retries: usize,
}

impl BfsSolution {
    pub fn max_duality_residual(&self) -> f64 {
        self.certificates.iter().map(|c| c.duality_residual).fold(0.0, f64::max)
    }

    pub fn max_stationarity_residual(&self) -> f64 {
        self.certificates.iter().map(|c| c.stationarity_residual).fold(0.0, f64::max)
    }

    /// Dual boxes hold exactly for every block.
    pub fn boxes_hold(&self, costs: &CostParams) -> bool {
        self.duals.iter().all(|d| {
            let nt = d.mu.len() as f64;
            d.mu.iter().all(|&v| (-costs.b / nt..=0.0).contains(&v))
                && d.gamma.iter().all(|&v| (-costs.h / nt..=0.0).contains(&v))
        })
    }
}

fn extract(
    model: &BfsModel,
    pairs: &[(Dataset, Dataset)],
    costs: &CostParams,
    sol: MilpSolution,
    retries: usize,
) -> Result<BfsSolution> {
    let x = &sol.primal;
    let mask = FeatureMask { z: model.z.iter().map(|&c| x[c] > 0.5).collect() };
    let mut beta_lower = Vec::with_capacity(pairs.len());
    let mut duals = Vec::with_capacity(pairs.len());
    let mut certificates = Vec::with_capacity(pairs.len());
    for (blk, (t, _)) in model.blocks.iter().zip(pairs) {
        let nt = t.n() as f64;
        // indicator semantics were verified by the MILP layer; snap to zero
        let beta: Vec<f64> =
            blk.beta.iter().zip(&mask.z).map(|(&c, &on)| if on { x[c] } else { 0.0 }).collect();
        let function = DecisionFunction { beta };
        let (lo_mu, lo_gamma) = (-costs.b / nt, -costs.h / nt);
        let mut raw_box_violation = 0.0f64;
        let mut project = |v: f64, lo: f64| {
            raw_box_violation = raw_box_violation.max(lo - v).max(v);
            v.clamp(lo, 0.0)
        };
        let mu: Vec<f64> = blk.mu.iter().map(|&c| project(x[c], lo_mu)).collect();
        let gamma: Vec<f64> = blk.gamma.iter().map(|&c| project(x[c], lo_gamma)).collect();
        let lower_objective = newsvendor_cost(&function, t, costs)?;
        let dual_objective: f64 = (0..t.n()).map(|i| (gamma[i] - mu[i]) * t.demands[i]).sum();
        let mut stationarity_residual = 0.0f64;
        for j in (0..=t.m).filter(|&j| mask.z[j]) {
            let s: f64 = t.features.iter().enumerate().map(|(i, xi)| (mu[i] - gamma[i]) * xi[j]).sum();
            stationarity_residual = stationarity_residual.max(s.abs());
        }
        certificates.push(Certificate {
            lower_objective,
            dual_objective,
            duality_residual: (lower_objective - dual_objective).abs(),
            stationarity_residual,
            raw_box_violation,
        });
        beta_lower.push(function);
        duals.push(SplitDuals { mu, gamma });
    }
    let validation_cost = sol.objective;
    let solver = MilpSolution { primal: Vec::new(), ..sol };
    Ok(BfsSolution {
        mask,
        beta_lower,
        validation_cost,
        duals,
        certificates,
        solver,
        beta_bound: model.beta_bound,
        retries,
    })
}

fn solve_pairs(pairs: &[(Dataset, Dataset)], costs: &CostParams, opts: &BfsOptions) -> Result<BfsSolution> {
    let started = Instant::now();
    let mut bound = match opts.beta_bound {
        Some(b) => b,
        None => {
            let pooled = pairs.iter().skip(1).try_fold(pairs[0].0.clone(), |acc, (t, _)| acc.concat(t))?;
            default_beta_bound(&pooled)
        }
    };
    // masks whose lower-level optimum leaves the box would be cut off silently
    let m = pairs[0].0.m;
    let mut probes = vec![FeatureMask::full(m)];
    probes.extend(opts.starts.iter().filter(|s| s.z.len() == m + 1).cloned());
    let mut needed = 0.0f64;
    for mask in &probes {
        for (t, _) in pairs {
            let f = fit_erm(t, costs, Some(mask))?;
            needed = f.function.beta.iter().fold(needed, |a, v| a.max(v.abs()));
        }
    }
    let mut first_attempt = 0;
    while needed >= bound * (1.0 - 1e-4) {
        if first_attempt == BETA_BOUND_RETRIES {
            return Err(Error::MBoundSuspect { bound, retries: first_attempt });
        }
        log::info!("coefficient bound {bound} below a lower-level optimum of size {needed}; widening");
        bound *= 10.0;
        first_attempt += 1;
    }
    let mut log = match &opts.log_path {
        Some(p) => Some(BufWriter::new(File::options().create(true).append(true).open(p)?)),
        None => None,
    };
    for attempt in first_attempt..=BETA_BOUND_RETRIES {
        let model = build_blocks(pairs, costs, bound)?;
        let elapsed = started.elapsed().as_secs_f64();
        let limits = SolveLimits { time_limit: (opts.limits.time_limit - elapsed).max(0.0), ..opts.limits };
        let mut run = MilpRun::new(limits);
        for s in &opts.starts {
            if s.z.len() == model.z.len() {
                run.starts.push(s.z.clone());
            }
        }
        run.starts.push(vec![true; model.z.len()]);
        run.starts.push(FeatureMask::intercept_only(model.z.len() - 1).z);
        if let Some(w) = log.as_mut() {
            run.log = Some(w);
        }
        let sol = solve_milp_with(&model.mip, run)?;
        match sol.status {
            MilpStatus::Optimal | MilpStatus::FeasibleTimeLimit => {}
            MilpStatus::Infeasible => return Err(Error::NoSolution("BFS model reported infeasible".into())),
            MilpStatus::NoIncumbent => return Err(Error::NoSolution("no incumbent within the limits".into())),
        }
        if !sol.m_bound_suspect.is_empty() {
            if attempt == BETA_BOUND_RETRIES {
                return Err(Error::MBoundSuspect { bound, retries: attempt });
            }
            log::info!("coefficient bound {bound} active at the incumbent; retrying with {}", bound * 10.0);
            bound *= 10.0;
            continue;
        }
        return extract(&model, pairs, costs, sol, attempt);
    }
    unreachable!("retry loop returns")
}

/// Hold-out bilevel feature selection.
pub fn solve_bfs(t: &Dataset, v: &Dataset, costs: &CostParams, opts: &BfsOptions) -> Result<BfsSolution> {
    check_pair(t, v)?;
    solve_pairs(&[(t.clone(), v.clone())], costs, opts)
}

/// Cross-validated bilevel feature selection over `splits` of `sample`.
pub fn solve_bfs_cv(sample: &Dataset, splits: &CvSplits, costs: &CostParams, opts: &BfsOptions) -> Result<BfsSolution> {
    let pairs = split_pairs(sample, splits)?;
    solve_pairs(&pairs, costs, opts)
}

/// Masked plain ERM on the full sample; the deployed decision function.
pub fn refit_final(s: &Dataset, costs: &CostParams, mask: &FeatureMask) -> Result<DecisionFunction> {
    Ok(fit_erm(s, costs, Some(mask))?.function)
}

/// Best validation cost among lower-level optima for a fixed mask: first
/// the masked training optimum, then the validation cost minimized over
/// coefficients that keep the training cost at that optimum.
pub fn optimistic_mask_cost(t: &Dataset, v: &Dataset, costs: &CostParams, mask: &FeatureMask) -> Result<(f64, DecisionFunction)> {
    let lower = fit_erm(t, costs, Some(mask))?;
    let (nt, nv) = (t.n() as f64, v.n() as f64);
    let mut lp = LinearProgram::new(0);
    let beta: Vec<Option<usize>> = mask
        .z
        .iter()
        .map(|&on| on.then(|| lp.add_var(0.0, f64::NEG_INFINITY, f64::INFINITY)))
        .collect();
    let add = |lp: &mut LinearProgram, data: &Dataset, cu: f64, co: f64| -> (Vec<usize>, Vec<usize>) {
        let mut us = Vec::new();
        let mut os = Vec::new();
        for (x, &d) in data.features.iter().zip(&data.demands) {
            let u = lp.add_var(cu, 0.0, f64::INFINITY);
            let o = lp.add_var(co, 0.0, f64::INFINITY);
            let bx: Vec<(usize, f64)> = beta.iter().zip(x).filter_map(|(c, &xv)| c.map(|c| (c, xv))).collect();
            let mut row = vec![(u, 1.0)];
            row.extend(bx.iter().copied());
            lp.add_row(row, Relation::Ge, d);
            let mut row = vec![(o, 1.0)];
            row.extend(bx.iter().map(|&(c, xv)| (c, -xv)));
            lp.add_row(row, Relation::Ge, -d);
            us.push(u);
            os.push(o);
        }
        (us, os)
    };
    let (ut, ot) = add(&mut lp, t, 0.0, 0.0);
    add(&mut lp, v, costs.b / nv, costs.h / nv);
    let mut row: Vec<(usize, f64)> = ut.iter().map(|&u| (u, costs.b / nt)).collect();
    row.extend(ot.iter().map(|&o| (o, costs.h / nt)));
    let slack = 1e-12 * lower.objective.abs().max(1.0);
    lp.add_row(row, Relation::Le, lower.objective + slack);
    let sol = solve_lp(&lp)?;
    if sol.status != LpStatus::Optimal {
        // the training optimum itself is feasible, so fall back to it
        let cost = newsvendor_cost(&lower.function, v, costs)?;
        return Ok((cost, lower.function));
    }
    let function = DecisionFunction { beta: beta.iter().map(|c| c.map_or(0.0, |c| sol.primal[c])).collect() };
    Ok((sol.objective, function))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BruteForceResult {
    pub mask: FeatureMask,
    /// Mean over blocks of the optimistic validation cost.
    pub validation_cost: f64,
    pub beta_lower: Vec<DecisionFunction>,
    /// Cost of every mask, indexed by its bit pattern.
    pub mask_costs: Vec<f64>,
}

fn mask_order(a: &FeatureMask, b: &FeatureMask) -> std::cmp::Ordering {
    a.count().cmp(&b.count()).then_with(|| a.z.cmp(&b.z))
}

fn brute_force_pairs(pairs: &[(Dataset, Dataset)], costs: &CostParams, exec: Exec) -> Result<BruteForceResult> {
    costs.validate()?;
    let m = pairs[0].0.m;
    if m > BRUTE_FORCE_MAX_M {
        return Err(Error::TooManyFeatures { m, limit: BRUTE_FORCE_MAX_M });
    }
    let total = 1usize << (m + 1);
    let evaluated = par::map_range(exec, total, |bits| -> Result<(f64, Vec<DecisionFunction>)> {
        let mask = FeatureMask::from_bits(m, bits as u64);
        let mut sum = 0.0;
        let mut betas = Vec::with_capacity(pairs.len());
        for (t, v) in pairs {
            let (c, f) = optimistic_mask_cost(t, v, costs, &mask)?;
            sum += c;
            betas.push(f);
        }
        Ok((sum / pairs.len() as f64, betas))
    });
    let mut mask_costs = Vec::with_capacity(total);
    let mut best: Option<(usize, f64)> = None;
    let mut results = Vec::with_capacity(total);
    for (bits, r) in evaluated.into_iter().enumerate() {
        let (c, betas) = r?;
        mask_costs.push(c);
        results.push(betas);
        let better = match best {
            None => true,
            Some((bb, bc)) => {
                if c < bc - 1e-9 {
                    true
                } else if c <= bc + 1e-9 {
                    mask_order(&FeatureMask::from_bits(m, bits as u64), &FeatureMask::from_bits(m, bb as u64)).is_lt()
                } else {
                    false
                }
            }
        };
        if better {
            best = Some((bits, c));
        }
    }
    let (bits, validation_cost) = best.expect("at least one mask");
    Ok(BruteForceResult {
        mask: FeatureMask::from_bits(m, bits as u64),
        validation_cost,
        beta_lower: results.swap_remove(bits),
        mask_costs,
    })
}

/// Exhaustive hold-out oracle over all `2^(m+1)` masks. Ties go to the
/// smaller mask, then the lexicographically smaller one.
pub fn brute_force_bfs(t: &Dataset, v: &Dataset, costs: &CostParams, exec: Exec) -> Result<BruteForceResult> {
    check_pair(t, v)?;
    brute_force_pairs(&[(t.clone(), v.clone())], costs, exec)
}

/// Exhaustive cross-validated oracle: `K` optimistic masked fits per mask.
pub fn brute_force_bfs_cv(sample: &Dataset, splits: &CvSplits, costs: &CostParams, exec: Exec) -> Result<BruteForceResult> {
    brute_force_pairs(&split_pairs(sample, splits)?, costs, exec)
}
