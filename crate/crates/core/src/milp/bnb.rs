use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::io::Write;
use std::rc::Rc;
use std::time::{Duration, Instant};

use serde_json::json;

use super::restrict::Restriction;
use super::{compile_indicators, relative_gap, MilpSolution, MilpStatus, MixedIntegerProgram, SolveLimits, INT_TOL};
use crate::error::{Error, Result};
use crate::lp::{LpOptions, LpSolution, LpStatus, Simplex, WarmBasis};

/// Extra inputs for a branch-and-bound run.
pub struct MilpRun<'a> {
    pub limits: SolveLimits,
    /// Candidate binary assignments (in `binaries` order) tried before the
    /// search starts.
    pub starts: Vec<Vec<bool>>,
    /// Receives one JSON object per processed node.
    pub log: Option<&'a mut dyn Write>,
    pub lp_options: LpOptions,
}

impl<'a> MilpRun<'a> {
    pub fn new(limits: SolveLimits) -> Self {
        MilpRun { limits, starts: Vec::new(), log: None, lp_options: LpOptions::default() }
    }
}

pub fn solve_milp(mip: &MixedIntegerProgram, limits: SolveLimits) -> Result<MilpSolution> {
    solve_milp_with(mip, MilpRun::new(limits))
}

/// Best-bound branch and bound with an initial depth-first dive.
pub fn solve_milp_with(mip: &MixedIntegerProgram, run: MilpRun<'_>) -> Result<MilpSolution> {
    let started = Instant::now();
    run.limits.validate()?;
    let compiled;
    let mip = if mip.indicators.is_empty() {
        mip
    } else {
        compiled = compile_indicators(mip, &[])?;
        &compiled
    };
    mip.validate()?;
    let deadline = if run.limits.time_limit.is_finite() {
        Some(started + Duration::from_secs_f64(run.limits.time_limit))
    } else {
        None
    };
    let mut opts = run.lp_options.clone();
    opts.deadline = deadline;
    let mut search = Search {
        mip,
        restriction: Restriction::new(mip, &opts),
        lp: Simplex::new(&mip.base, opts),
        root: mip.binaries.iter().map(|&j| mip.base.var_bounds[j]).collect(),
        limits: run.limits,
        log: run.log,
        deadline,
        incumbent: None,
        tried: HashSet::new(),
        heap: BinaryHeap::new(),
        seq: 0,
        nodes: 0,
        lp_iterations: 0,
        best_bound: f64::NEG_INFINITY,
        lost_bound: f64::INFINITY,
    };
    for start in &run.starts {
        if start.len() != mip.binaries.len() {
            return Err(Error::Validation("start assignment has the wrong length".into()));
        }
        match search.try_assignment(start) {
            Err(Error::TimeLimit) => break,
            other => other?,
        }
    }
    let limit_hit = search.run()?;
    Ok(search.finish(limit_hit, started.elapsed().as_secs_f64()))
}

struct Node {
    fix: Vec<(usize, bool)>,
    bound: f64,
    depth: usize,
    basis: Option<Rc<WarmBasis>>,
    seq: usize,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // BinaryHeap pops the greatest: lowest bound, then deepest, then oldest.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(self.depth.cmp(&other.depth))
            .then(other.seq.cmp(&self.seq))
    }
}

enum Processed {
    Done,
    Dive(Node),
}

struct Search<'m, 'a> {
    mip: &'m MixedIntegerProgram,
    lp: Simplex,
    restriction: Restriction,
    root: Vec<(f64, f64)>,
    limits: SolveLimits,
    log: Option<&'a mut dyn Write>,
    deadline: Option<Instant>,
    incumbent: Option<(Vec<f64>, f64)>,
    tried: HashSet<Vec<bool>>,
    heap: BinaryHeap<Node>,
    seq: usize,
    nodes: usize,
    lp_iterations: usize,
    best_bound: f64,
    /// Smallest bound among nodes dropped after an unrecoverable LP failure.
    lost_bound: f64,
}

impl Search<'_, '_> {
    fn cutoff(&self) -> f64 {
        match &self.incumbent {
            Some((_, obj)) => obj - self.limits.gap_tol * obj.abs().max(1.0),
            None => f64::INFINITY,
        }
    }

    fn global_bound(&self, pending: Option<&Node>) -> f64 {
        let open = self.heap.peek().map_or(f64::INFINITY, |n| n.bound);
        let pend = pending.map_or(f64::INFINITY, |n| n.bound);
        let inc = self.incumbent.as_ref().map_or(f64::INFINITY, |(_, o)| *o);
        open.min(pend).min(self.lost_bound).min(inc)
    }

    fn note_bound(&mut self, pending: Option<&Node>) {
        let b = self.global_bound(pending);
        if b > self.best_bound {
            self.best_bound = b;
        }
    }

    fn next_seq(&mut self) -> usize {
        self.seq += 1;
        self.seq
    }

    /// Returns whether a limit stopped the search.
    fn run(&mut self) -> Result<bool> {
        let root = Node { fix: Vec::new(), bound: f64::NEG_INFINITY, depth: 0, basis: None, seq: 0 };
        let mut next = Some(root);
        loop {
            let node = match next.take() {
                Some(n) => n,
                None => match self.heap.pop() {
                    Some(n) => n,
                    None => break,
                },
            };
            if node.bound >= self.cutoff() {
                continue;
            }
            let out_of_time = self.deadline.is_some_and(|d| Instant::now() >= d);
            let out_of_nodes = self.limits.node_limit.is_some_and(|l| self.nodes >= l);
            if out_of_time || out_of_nodes {
                self.heap.push(node);
                self.note_bound(None);
                return Ok(true);
            }
            self.note_bound(Some(&node));
            match self.process(&node) {
                Ok(Processed::Done) => {}
                Ok(Processed::Dive(child)) => next = Some(child),
                Err(Error::TimeLimit) => {
                    self.heap.push(node);
                    self.note_bound(None);
                    return Ok(true);
                }
                Err(e) => return Err(e),
            }
        }
        self.note_bound(None);
        Ok(false)
    }

    fn apply_bounds(&mut self, fix: &[(usize, bool)]) {
        for (k, &j) in self.mip.binaries.iter().enumerate() {
            let (lo, hi) = self.root[k];
            self.lp.set_bounds(j, lo, hi);
        }
        for &(k, v) in fix {
            let j = self.mip.binaries[k];
            let v = if v { 1.0 } else { 0.0 };
            self.lp.set_bounds(j, v, v);
        }
    }

    /// Solves the current LP, retrying once from a slack basis after a
    /// numerical failure. `Ok(None)` means the LP could not be solved.
    fn solve_lp(&mut self, warm: Option<&WarmBasis>) -> Result<Option<LpSolution>> {
        match self.lp.solve(warm) {
            Ok(sol) => {
                self.lp_iterations += sol.iterations;
                Ok(Some(sol))
            }
            Err(Error::TimeLimit) => Err(Error::TimeLimit),
            Err(e) => {
                log::debug!("node LP failed ({e}); retrying from a slack basis");
                self.lp.reset_to_slack();
                match self.lp.solve(None) {
                    Ok(sol) => {
                        self.lp_iterations += sol.iterations;
                        Ok(Some(sol))
                    }
                    Err(Error::TimeLimit) => Err(Error::TimeLimit),
                    Err(e) => {
                        log::warn!("node LP failed twice: {e}");
                        Ok(None)
                    }
                }
            }
        }
    }

    fn log_node(&mut self, node: &Node, lp_bound: f64, outcome: &str) {
        let global = self.best_bound;
        let inc = self.incumbent.as_ref().map(|(_, o)| *o);
        let nodes = self.nodes;
        if let Some(w) = self.log.as_mut() {
            let line = json!({
                "node": nodes,
                "depth": node.depth,
                "bound": finite_or_null(lp_bound),
                "global_bound": finite_or_null(global),
                "incumbent": inc,
                "outcome": outcome,
            });
            let _ = writeln!(w, "{line}");
        }
    }

    fn process(&mut self, node: &Node) -> Result<Processed> {
        self.apply_bounds(&node.fix);
        let sol = self.solve_lp(node.basis.as_deref())?;
        self.nodes += 1;
        let Some(sol) = sol else {
            self.lost_bound = self.lost_bound.min(node.bound);
            self.log_node(node, node.bound, "lp_failed");
            return Ok(Processed::Done);
        };
        match sol.status {
            LpStatus::Infeasible => {
                self.log_node(node, f64::INFINITY, "infeasible");
                return Ok(Processed::Done);
            }
            LpStatus::Unbounded => {
                return Err(Error::Validation("LP relaxation is unbounded".into()));
            }
            LpStatus::Optimal => {}
        }
        let bound = sol.objective.max(node.bound);
        if bound >= self.cutoff() {
            self.log_node(node, bound, "pruned");
            return Ok(Processed::Done);
        }

        // most fractional binary, lowest index on ties
        let mut branch: Option<(usize, f64)> = None;
        for (k, &j) in self.mip.binaries.iter().enumerate() {
            let v = sol.primal[j];
            let frac = (v - v.floor()).min(v.ceil() - v);
            if frac > INT_TOL && branch.is_none_or(|(_, f)| frac > f) {
                branch = Some((k, frac));
            }
        }
        let rounded: Vec<bool> = self.mip.binaries.iter().map(|&j| sol.primal[j] > 0.5).collect();
        let basis = Rc::new(self.lp.basis());

        let Some((k, _)) = branch else {
            self.try_assignment(&rounded)?;
            let accepted = self.incumbent.as_ref().is_some_and(|(_, o)| *o <= bound + 1e-9 * bound.abs().max(1.0));
            if !accepted {
                // integral relaxation whose fixed re-solve was rejected
                self.lost_bound = self.lost_bound.min(bound);
            }
            self.log_node(node, bound, "integral");
            return Ok(Processed::Done);
        };

        self.try_assignment(&rounded)?;
        if bound >= self.cutoff() {
            self.log_node(node, bound, "pruned");
            return Ok(Processed::Done);
        }
        self.log_node(node, bound, "branched");

        let up_first = sol.primal[self.mip.binaries[k]] > 0.5;
        let mut children = Vec::with_capacity(2);
        for v in [up_first, !up_first] {
            let mut fix = node.fix.clone();
            fix.push((k, v));
            let seq = self.next_seq();
            children.push(Node { fix, bound, depth: node.depth + 1, basis: Some(basis.clone()), seq });
        }
        let second = children.pop().expect("two children");
        let first = children.pop().expect("two children");
        self.heap.push(second);
        if self.incumbent.is_none() {
            Ok(Processed::Dive(first))
        } else {
            self.heap.push(first);
            Ok(Processed::Done)
        }
    }

    /// Fixes every binary to `assign`, re-solves the continuous part and keeps
    /// the result if it improves the incumbent. Each assignment is tried once.
    fn try_assignment(&mut self, assign: &[bool]) -> Result<()> {
        if !self.tried.insert(assign.to_vec()) {
            return Ok(());
        }
        for (k, &v) in assign.iter().enumerate() {
            let (lo, hi) = self.root[k];
            let val = if v { 1.0 } else { 0.0 };
            if val < lo || val > hi {
                return Ok(());
            }
        }
        let (x, iterations) = self.restriction.solve(assign)?;
        self.lp_iterations += iterations;
        let Some(mut x) = x else {
            return Ok(());
        };
        for (k, &j) in self.mip.binaries.iter().enumerate() {
            x[j] = if assign[k] { 1.0 } else { 0.0 };
        }
        let infeas = self.mip.base.primal_infeasibility(&x);
        let ind = self.mip.indicator_violation(&x);
        if infeas > 1e-6 || ind > 1e-6 {
            log::debug!("rejecting candidate: infeasibility {infeas:e}, indicator violation {ind:e}");
            return Ok(());
        }
        let obj = self.mip.base.objective_value(&x);
        if self.incumbent.as_ref().is_none_or(|(_, o)| obj < *o) {
            log::trace!("new incumbent {obj}");
            self.incumbent = Some((x, obj));
        }
        Ok(())
    }

    fn finish(self, limit_hit: bool, wall_time: f64) -> MilpSolution {
        let bound = self.best_bound.max(self.global_bound(None));
        let (primal, objective) = match &self.incumbent {
            Some((x, o)) => (x.clone(), *o),
            None => (Vec::new(), f64::INFINITY),
        };
        let bound = if self.incumbent.is_some() { bound.min(objective) } else { bound };
        let gap = relative_gap(objective, bound);
        let status = match (&self.incumbent, limit_hit) {
            (Some(_), _) if gap <= self.limits.gap_tol => MilpStatus::Optimal,
            (Some(_), _) => MilpStatus::FeasibleTimeLimit,
            (None, false) if self.lost_bound == f64::INFINITY => MilpStatus::Infeasible,
            (None, _) => MilpStatus::NoIncumbent,
        };
        let m_bound_suspect = if primal.is_empty() { Vec::new() } else { self.mip.active_big_m(&primal) };
        MilpSolution {
            status,
            primal,
            objective,
            bound,
            gap,
            nodes: self.nodes,
            lp_iterations: self.lp_iterations,
            wall_time,
            m_bound_suspect,
        }
    }
}

fn finite_or_null(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}
