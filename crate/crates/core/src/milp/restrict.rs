//! The continuous restriction left after fixing every binary. It is split
//! into connected components (columns linked through shared rows), each
//! solved by its own simplex instance that keeps its basis between calls.

use super::MixedIntegerProgram;
use crate::error::{Error, Result};
use crate::lp::{LinearProgram, LpOptions, LpStatus, Simplex};

struct Part {
    cols: Vec<usize>,
    simplex: Simplex,
    base_rhs: Vec<f64>,
    /// Per local row: `(binary position, coefficient)`.
    bin_terms: Vec<Vec<(usize, f64)>>,
}

pub(crate) struct Restriction {
    parts: Vec<Part>,
    /// Continuous columns in no row, with their cost-minimizing value.
    loose: Vec<(usize, Option<f64>)>,
    n: usize,
}

fn find(parent: &mut [usize], mut a: usize) -> usize {
    while parent[a] != a {
        parent[a] = parent[parent[a]];
        a = parent[a];
    }
    a
}

impl Restriction {
    pub fn new(mip: &MixedIntegerProgram, opts: &LpOptions) -> Self {
        let lp = &mip.base;
        let n = lp.num_vars;
        let mut bin_pos = vec![None; n];
        for (k, &j) in mip.binaries.iter().enumerate() {
            bin_pos[j] = Some(k);
        }
        let mut parent: Vec<usize> = (0..n).collect();
        let mut in_row = vec![false; n];
        for row in &lp.rows {
            let mut first = None;
            for &(j, a) in &row.coeffs {
                if a == 0.0 || bin_pos[j].is_some() {
                    continue;
                }
                in_row[j] = true;
                match first {
                    None => first = Some(j),
                    Some(f) => {
                        let (ra, rb) = (find(&mut parent, f), find(&mut parent, j));
                        if ra != rb {
                            parent[rb] = ra;
                        }
                    }
                }
            }
        }
        // group columns and rows by component root, in index order
        let mut part_of_root = vec![usize::MAX; n];
        let mut groups: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
        let mut loose = Vec::new();
        for j in 0..n {
            if bin_pos[j].is_some() {
                continue;
            }
            if !in_row[j] {
                let (lo, hi) = lp.var_bounds[j];
                let c = lp.objective[j];
                let v = if c > 0.0 || (c == 0.0 && lo.is_finite()) {
                    lo.is_finite().then_some(lo)
                } else if c < 0.0 || hi.is_finite() {
                    hi.is_finite().then_some(hi)
                } else {
                    Some(0.0)
                };
                loose.push((j, v));
                continue;
            }
            let r = find(&mut parent, j);
            if part_of_root[r] == usize::MAX {
                part_of_root[r] = groups.len();
                groups.push((Vec::new(), Vec::new()));
            }
            groups[part_of_root[r]].0.push(j);
        }
        for (i, row) in lp.rows.iter().enumerate() {
            if let Some(&(j, _)) = row.coeffs.iter().find(|&&(j, a)| a != 0.0 && bin_pos[j].is_none()) {
                let r = find(&mut parent, j);
                groups[part_of_root[r]].1.push(i);
            }
        }
        let parts = groups
            .into_iter()
            .map(|(cols, rows)| {
                let mut local = vec![usize::MAX; n];
                for (l, &j) in cols.iter().enumerate() {
                    local[j] = l;
                }
                let mut sub = LinearProgram::new(0);
                for &j in &cols {
                    let (lo, hi) = lp.var_bounds[j];
                    sub.add_var(lp.objective[j], lo, hi);
                }
                let mut base_rhs = Vec::with_capacity(rows.len());
                let mut bin_terms = Vec::with_capacity(rows.len());
                for &i in &rows {
                    let row = &lp.rows[i];
                    let mut coeffs = Vec::new();
                    let mut terms = Vec::new();
                    for &(j, a) in &row.coeffs {
                        match bin_pos[j] {
                            Some(k) => terms.push((k, a)),
                            None => coeffs.push((local[j], a)),
                        }
                    }
                    sub.add_row(coeffs, row.relation, row.rhs);
                    base_rhs.push(row.rhs);
                    bin_terms.push(terms);
                }
                Part { cols, simplex: Simplex::new(&sub, opts.clone()), base_rhs, bin_terms }
            })
            .collect();
        Restriction { parts, loose, n }
    }

    /// Solves every component under `assign`. Returns the continuous values
    /// (binaries left at zero) when all components are optimal, plus the
    /// simplex iterations spent.
    pub fn solve(&mut self, assign: &[bool]) -> Result<(Option<Vec<f64>>, usize)> {
        let mut x = vec![0.0; self.n];
        let mut iterations = 0;
        for &(j, v) in &self.loose {
            match v {
                Some(v) => x[j] = v,
                None => return Ok((None, 0)),
            }
        }
        for part in &mut self.parts {
            for (i, terms) in part.bin_terms.iter().enumerate() {
                let shift: f64 = terms.iter().filter(|(k, _)| assign[*k]).map(|(_, a)| a).sum();
                part.simplex.set_rhs(i, part.base_rhs[i] - shift);
            }
            let sol = match part.simplex.solve(None) {
                Ok(s) => s,
                Err(Error::TimeLimit) => return Err(Error::TimeLimit),
                Err(e) => {
                    log::debug!("restricted LP failed ({e}); retrying from a slack basis");
                    part.simplex.reset_to_slack();
                    match part.simplex.solve(None) {
                        Ok(s) => s,
                        Err(Error::TimeLimit) => return Err(Error::TimeLimit),
                        Err(_) => return Ok((None, iterations)),
                    }
                }
            };
            iterations += sol.iterations;
            if sol.status != LpStatus::Optimal {
                return Ok((None, iterations));
            }
            for (l, &j) in part.cols.iter().enumerate() {
                x[j] = sol.primal[l];
            }
        }
        Ok((Some(x), iterations))
    }
}
