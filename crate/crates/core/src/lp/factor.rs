//! LU factorization of a simplex basis with product-form updates.
//!
//! The factor records the elimination as a sequence of steps. Step `k`
//! pivots on row `piv_row[k]` and basis position `piv_col[k]`; its L part is
//! the list of row multipliers applied to the remaining rows and its U part
//! is the pivot row restricted to positions that are pivoted later. Both the
//! dense partial-pivoting and the sparse Markowitz strategy produce this same
//! layout, so FTRAN/BTRAN are shared.

const DROP_TOL: f64 = 1e-14;
const SINGULAR_TOL: f64 = 1e-11;
const MARKOWITZ_THRESHOLD: f64 = 0.1;
const MARKOWITZ_SEARCH_COLS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Strategy {
    DensePartialPivot,
    Markowitz,
}

/// Positions and rows left without an acceptable pivot.
#[derive(Debug)]
pub(crate) struct Singular {
    pub rows: Vec<usize>,
    pub positions: Vec<usize>,
}

#[derive(Debug, Default)]
pub(crate) struct LuFactor {
    m: usize,
    piv_row: Vec<usize>,
    piv_col: Vec<usize>,
    l_start: Vec<usize>,
    l_idx: Vec<usize>,
    l_val: Vec<f64>,
    u_start: Vec<usize>,
    u_idx: Vec<usize>,
    u_val: Vec<f64>,
    u_diag: Vec<f64>,
    eta_pos: Vec<usize>,
    eta_piv: Vec<f64>,
    eta_start: Vec<usize>,
    eta_idx: Vec<usize>,
    eta_val: Vec<f64>,
}

impl LuFactor {
    pub fn num_updates(&self) -> usize {
        self.eta_pos.len()
    }

    pub fn eta_nnz(&self) -> usize {
        self.eta_idx.len()
    }

    pub fn factor_nnz(&self) -> usize {
        self.l_idx.len() + self.u_idx.len() + self.m
    }

    /// Factorizes the `m x m` matrix whose column at position `p` is `cols[p]`
    /// given as `(row, value)` pairs.
    pub fn factorize(m: usize, cols: &[Vec<(usize, f64)>], strategy: Strategy) -> Result<Self, Singular> {
        let mut f = LuFactor {
            m,
            l_start: vec![0],
            u_start: vec![0],
            eta_start: vec![0],
            ..Default::default()
        };
        match strategy {
            Strategy::DensePartialPivot => f.dense(cols)?,
            Strategy::Markowitz => f.markowitz(cols)?,
        }
        Ok(f)
    }

    fn push_step(&mut self, row: usize, col: usize, diag: f64) {
        self.piv_row.push(row);
        self.piv_col.push(col);
        self.u_diag.push(diag);
        self.l_start.push(self.l_idx.len());
        self.u_start.push(self.u_idx.len());
    }

    fn dense(&mut self, cols: &[Vec<(usize, f64)>]) -> Result<(), Singular> {
        let m = self.m;
        // row-major working copy
        let mut a = vec![0.0; m * m];
        for (p, col) in cols.iter().enumerate() {
            for &(i, v) in col {
                a[i * m + p] += v;
            }
        }
        let mut row_done = vec![false; m];
        let mut bad = Vec::new();
        for p in 0..m {
            let mut best = None;
            let mut best_abs = SINGULAR_TOL;
            for i in 0..m {
                if !row_done[i] && a[i * m + p].abs() > best_abs {
                    best_abs = a[i * m + p].abs();
                    best = Some(i);
                }
            }
            let Some(r) = best else {
                bad.push(p);
                continue;
            };
            row_done[r] = true;
            let diag = a[r * m + p];
            for i in 0..m {
                if row_done[i] {
                    continue;
                }
                let v = a[i * m + p];
                if v == 0.0 {
                    continue;
                }
                let l = v / diag;
                a[i * m + p] = 0.0;
                for c in p + 1..m {
                    let u = a[r * m + c];
                    if u != 0.0 {
                        a[i * m + c] -= l * u;
                    }
                }
                self.l_idx.push(i);
                self.l_val.push(l);
            }
            for c in p + 1..m {
                let u = a[r * m + c];
                if u.abs() > DROP_TOL {
                    self.u_idx.push(c);
                    self.u_val.push(u);
                }
            }
            self.push_step(r, p, diag);
        }
        if !bad.is_empty() {
            let rows = (0..m).filter(|&i| !row_done[i]).collect();
            return Err(Singular { rows, positions: bad });
        }
        Ok(())
    }

    fn markowitz(&mut self, cols: &[Vec<(usize, f64)>]) -> Result<(), Singular> {
        let m = self.m;
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
        let mut col_rows: Vec<Vec<usize>> = vec![Vec::new(); m];
        for (p, col) in cols.iter().enumerate() {
            for &(i, v) in col {
                if v != 0.0 {
                    rows[i].push((p, v));
                    col_rows[p].push(i);
                }
            }
        }
        let mut col_count: Vec<usize> = col_rows.iter().map(Vec::len).collect();
        let mut row_active = vec![true; m];
        let mut col_active = vec![true; m];
        let mut work = vec![0.0; m];
        let mut mark = vec![usize::MAX; m];
        let mut entries: Vec<(usize, f64)> = Vec::new();
        let mut candidates: Vec<usize> = Vec::with_capacity(MARKOWITZ_SEARCH_COLS);

        for step in 0..m {
            // Candidate columns: the few active columns with smallest counts.
            candidates.clear();
            for c in 0..m {
                if !col_active[c] {
                    continue;
                }
                let pos = candidates
                    .iter()
                    .position(|&k| (col_count[c], c) < (col_count[k], k))
                    .unwrap_or(candidates.len());
                if pos < MARKOWITZ_SEARCH_COLS {
                    candidates.insert(pos, c);
                    candidates.truncate(MARKOWITZ_SEARCH_COLS);
                }
                if col_count[c] == 1 {
                    // a column singleton has Markowitz cost zero
                    candidates.clear();
                    candidates.push(c);
                    break;
                }
            }

            let mut best: Option<(usize, usize, f64)> = None;
            let mut best_key = (usize::MAX, 0.0f64);
            for &c in &candidates {
                // gather live entries of column c
                entries.clear();
                col_rows[c].retain(|&i| row_active[i]);
                col_rows[c].sort_unstable();
                col_rows[c].dedup();
                for &i in &col_rows[c] {
                    if let Some(&(_, v)) = rows[i].iter().find(|e| e.0 == c) {
                        entries.push((i, v));
                    }
                }
                col_count[c] = entries.len();
                let colmax = entries.iter().fold(0.0f64, |acc, e| acc.max(e.1.abs()));
                if colmax <= SINGULAR_TOL {
                    continue;
                }
                for &(i, v) in &entries {
                    if v.abs() < MARKOWITZ_THRESHOLD * colmax {
                        continue;
                    }
                    let cost = (rows[i].len() - 1) * (entries.len() - 1);
                    let better = cost < best_key.0 || (cost == best_key.0 && v.abs() > best_key.1);
                    if better {
                        best_key = (cost, v.abs());
                        best = Some((i, c, v));
                    }
                }
            }
            let Some((pr, pc, pv)) = best else {
                // Either the candidates are numerically empty or a full scan is needed.
                match self.markowitz_fallback(&rows, &col_active, &row_active) {
                    Some((pr, pc, pv)) => {
                        self.eliminate(pr, pc, pv, &mut rows, &mut col_rows, &mut col_count, &mut row_active, &mut col_active, &mut work, &mut mark, step);
                        continue;
                    }
                    None => {
                        let rows_left = (0..m).filter(|&i| row_active[i]).collect();
                        let pos_left = (0..m).filter(|&c| col_active[c]).collect();
                        return Err(Singular { rows: rows_left, positions: pos_left });
                    }
                }
            };
            self.eliminate(pr, pc, pv, &mut rows, &mut col_rows, &mut col_count, &mut row_active, &mut col_active, &mut work, &mut mark, step);
        }
        Ok(())
    }

    /// Largest-magnitude pivot over the whole active submatrix.
    fn markowitz_fallback(
        &self,
        rows: &[Vec<(usize, f64)>],
        col_active: &[bool],
        row_active: &[bool],
    ) -> Option<(usize, usize, f64)> {
        let mut best: Option<(usize, usize, f64)> = None;
        let mut best_abs = SINGULAR_TOL;
        for (i, row) in rows.iter().enumerate() {
            if !row_active[i] {
                continue;
            }
            for &(c, v) in row {
                if col_active[c] && v.abs() > best_abs {
                    best_abs = v.abs();
                    best = Some((i, c, v));
                }
            }
        }
        best
    }

    #[allow(clippy::too_many_arguments)]
    fn eliminate(
        &mut self,
        pr: usize,
        pc: usize,
        pv: f64,
        rows: &mut [Vec<(usize, f64)>],
        col_rows: &mut [Vec<usize>],
        col_count: &mut [usize],
        row_active: &mut [bool],
        col_active: &mut [bool],
        work: &mut [f64],
        mark: &mut [usize],
        step: usize,
    ) {
        row_active[pr] = false;
        col_active[pc] = false;
        let prow = std::mem::take(&mut rows[pr]);
        for &(c, v) in &prow {
            if c == pc {
                continue;
            }
            col_count[c] = col_count[c].saturating_sub(1);
            work[c] = v;
            mark[c] = step;
            self.u_idx.push(c);
            self.u_val.push(v);
        }
        let targets: Vec<usize> = col_rows[pc].iter().copied().filter(|&i| row_active[i]).collect();
        for i in targets {
            let row = &mut rows[i];
            let Some(k) = row.iter().position(|e| e.0 == pc) else { continue };
            let l = row[k].1 / pv;
            row.swap_remove(k);
            self.l_idx.push(i);
            self.l_val.push(l);
            // update existing entries; `mark` flips to usize::MAX - 1 once hit
            for e in row.iter_mut() {
                if mark[e.0] == step {
                    e.1 -= l * work[e.0];
                    mark[e.0] = usize::MAX - 1;
                }
            }
            // fill-in
            for &(c, v) in &prow {
                if c == pc {
                    continue;
                }
                if mark[c] == usize::MAX - 1 {
                    mark[c] = step;
                    continue;
                }
                row.push((c, -l * v));
                col_rows[c].push(i);
                col_count[c] += 1;
            }
            // dropped entries leave stale column patterns; counts are refreshed on gather
            row.retain(|e| e.1.abs() > DROP_TOL);
        }
        for &(c, _) in &prow {
            mark[c] = usize::MAX;
        }
        self.push_step(pr, pc, pv);
    }

    /// Solves `B x = rhs`. `rhs` is indexed by row and consumed; the result is
    /// indexed by basis position.
    pub fn ftran(&self, rhs: &mut [f64], out: &mut [f64]) {
        let m = self.m;
        for k in 0..m {
            let bp = rhs[self.piv_row[k]];
            if bp != 0.0 {
                for t in self.l_start[k]..self.l_start[k + 1] {
                    rhs[self.l_idx[t]] -= self.l_val[t] * bp;
                }
            }
        }
        for k in (0..m).rev() {
            let mut s = rhs[self.piv_row[k]];
            for t in self.u_start[k]..self.u_start[k + 1] {
                s -= self.u_val[t] * out[self.u_idx[t]];
            }
            out[self.piv_col[k]] = s / self.u_diag[k];
        }
        for e in 0..self.eta_pos.len() {
            let r = self.eta_pos[e];
            let xr = out[r] / self.eta_piv[e];
            out[r] = xr;
            if xr != 0.0 {
                for t in self.eta_start[e]..self.eta_start[e + 1] {
                    out[self.eta_idx[t]] -= self.eta_val[t] * xr;
                }
            }
        }
    }

    /// Solves `y' B = c'`. `c` is indexed by basis position and consumed; the
    /// result is indexed by row.
    pub fn btran(&self, c: &mut [f64], out: &mut [f64]) {
        let m = self.m;
        for e in (0..self.eta_pos.len()).rev() {
            let r = self.eta_pos[e];
            let mut s = c[r];
            for t in self.eta_start[e]..self.eta_start[e + 1] {
                s -= c[self.eta_idx[t]] * self.eta_val[t];
            }
            c[r] = s / self.eta_piv[e];
        }
        for k in 0..m {
            let wk = c[self.piv_col[k]] / self.u_diag[k];
            out[self.piv_row[k]] = wk;
            if wk != 0.0 {
                for t in self.u_start[k]..self.u_start[k + 1] {
                    c[self.u_idx[t]] -= wk * self.u_val[t];
                }
            }
        }
        for k in (0..m).rev() {
            let pr = self.piv_row[k];
            let mut s = out[pr];
            for t in self.l_start[k]..self.l_start[k + 1] {
                s -= self.l_val[t] * out[self.l_idx[t]];
            }
            out[pr] = s;
        }
    }

    /// Records the replacement of basis position `r` by a column whose FTRAN
    /// image is `alpha`.
    pub fn update(&mut self, r: usize, alpha: &[f64]) {
        self.eta_pos.push(r);
        self.eta_piv.push(alpha[r]);
        for (i, &a) in alpha.iter().enumerate() {
            if i != r && a.abs() > DROP_TOL {
                self.eta_idx.push(i);
                self.eta_val.push(a);
            }
        }
        self.eta_start.push(self.eta_idx.len());
    }
}
