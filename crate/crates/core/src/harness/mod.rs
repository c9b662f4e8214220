//! Configuration-driven experiment runner.
//!
//! A sweep is the cartesian product of the configured sample sizes, feature
//! counts, demand kinds, noise levels and cost pairs, times the replication
//! count. Each (coordinate, replication) cell draws one instance and runs
//! every configured method on it. Finished cells are appended to a JSON-lines
//! journal as they complete; finalizing sorts and deduplicates the journal
//! into `results.csv` (deterministic columns only) and `timings.csv`.

pub mod report;

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bfs::{refit_final, solve_bfs, solve_bfs_cv, BfsOptions};
use crate::datagen::{instance_seed, instance_splits, make_instance, CvSplits, DemandKind, DemandModelSpec, InstanceBundle};
use crate::erm::{
    fit_regularized, grid_search, CostParams, DecisionFunction, FeatureMask, GridOptions, LambdaGrid, Regularizer,
    Validation,
};
use crate::error::{invalid, Error, Result};
use crate::metrics::{accuracy, newsvendor_cost, test_cost_deviation};
use crate::milp::{MilpStatus, SolveLimits};
use crate::par::{self, Exec};

/// Current configuration schema version.
pub const SCHEMA_VERSION: u32 = 1;

pub const RESULTS_FILE: &str = "results.csv";
pub const TIMINGS_FILE: &str = "timings.csv";
pub const JOURNAL_FILE: &str = "journal.jsonl";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "BFS")]
    Bfs,
    #[serde(rename = "BFS-CV")]
    BfsCv,
    #[serde(rename = "ERM-l0")]
    ErmL0,
    #[serde(rename = "ERM-l0-CV")]
    ErmL0Cv,
    #[serde(rename = "ERM-l1")]
    ErmL1,
    #[serde(rename = "ERM-l1-CV")]
    ErmL1Cv,
}

impl Method {
    pub const ALL: [Method; 6] =
        [Method::Bfs, Method::BfsCv, Method::ErmL0, Method::ErmL0Cv, Method::ErmL1, Method::ErmL1Cv];

    pub fn name(self) -> &'static str {
        match self {
            Method::Bfs => "BFS",
            Method::BfsCv => "BFS-CV",
            Method::ErmL0 => "ERM-l0",
            Method::ErmL0Cv => "ERM-l0-CV",
            Method::ErmL1 => "ERM-l1",
            Method::ErmL1Cv => "ERM-l1-CV",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        let norm = |t: &str| t.to_lowercase().replace('ℓ', "l").replace(['-', '_', ' '], "");
        Method::ALL
            .into_iter()
            .find(|m| norm(m.name()) == norm(s))
            .ok_or_else(|| invalid(format!("unknown method '{s}'")))
    }

    pub fn uses_cv(self) -> bool {
        matches!(self, Method::BfsCv | Method::ErmL0Cv | Method::ErmL1Cv)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Noise level, either directly or as a coefficient of variation of the
/// noiseless base demand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Noise {
    Sigma(f64),
    Cv(f64),
}

impl Noise {
    pub fn sigma(self, kind: DemandKind) -> f64 {
        match self {
            Noise::Sigma(s) => s,
            Noise::Cv(c) => c * kind.base_level(),
        }
    }
}

/// Which coefficients are evaluated on the test set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Deploy {
    /// Refit on the whole sample with the selected mask or lambda.
    #[default]
    Refit,
    /// Hold-out methods keep the coefficients fitted on the training half.
    /// Cross-validated methods always refit.
    LowerLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub n: Vec<usize>,
    pub m: Vec<usize>,
    pub kinds: Vec<DemandKind>,
    pub noise: Vec<Noise>,
    pub costs: Vec<CostParams>,
    pub replications: usize,
    pub methods: Vec<Method>,
    /// Cross-validation splits.
    pub k: usize,
    /// Shared per-method limits.
    pub limits: SolveLimits,
    /// Log-spaced lambda values besides zero.
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub deploy: Deploy,
    #[serde(default = "default_true")]
    pub penalize_intercept: bool,
}

fn default_grid_points() -> usize {
    50
}

fn default_true() -> bool {
    true
}

impl ExperimentConfig {
    /// Desk-scale sweep: linear demand, unit noise, `b = 2`, `h = 1`.
    pub fn desk_default() -> Self {
        ExperimentConfig {
            version: SCHEMA_VERSION,
            n: vec![40, 100, 200, 500],
            m: vec![4, 6, 8],
            kinds: vec![DemandKind::Linear],
            noise: vec![Noise::Sigma(1.0)],
            costs: vec![CostParams { b: 2.0, h: 1.0 }],
            replications: 10,
            methods: Method::ALL.to_vec(),
            k: 10,
            limits: SolveLimits { time_limit: 60.0, ..SolveLimits::default() },
            grid_points: 50,
            master_seed: 20_240_601,
            deploy: Deploy::Refit,
            penalize_intercept: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != SCHEMA_VERSION {
            return Err(invalid(format!("config version {} is not supported (expected {SCHEMA_VERSION})", self.version)));
        }
        if self.n.is_empty() || self.m.is_empty() || self.kinds.is_empty() || self.noise.is_empty() || self.costs.is_empty() {
            return Err(invalid("every sweep axis needs at least one value"));
        }
        if self.methods.is_empty() {
            return Err(invalid("no methods configured"));
        }
        if self.replications == 0 {
            return Err(invalid("replications must be >= 1"));
        }
        if self.k == 0 {
            return Err(invalid("k must be >= 1"));
        }
        if let Some(&n) = self.n.iter().find(|&&n| n < 4) {
            return Err(invalid(format!("n = {n} is too small (need >= 4)")));
        }
        if let Some(&m) = self.m.iter().find(|&&m| m < 4) {
            return Err(invalid(format!("m = {m} is too small (the ground truth needs >= 4)")));
        }
        for c in &self.costs {
            c.validate()?;
        }
        for nz in &self.noise {
            let v = match nz {
                Noise::Sigma(v) | Noise::Cv(v) => *v,
            };
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("noise level must be finite and positive, got {v}")));
            }
        }
        if !self.limits.time_limit.is_finite() {
            return Err(invalid("the configured time limit must be finite"));
        }
        self.limits.validate()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n")?;
        Ok(())
    }

    /// Every (coordinate, replication) cell in sweep order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &n in &self.n {
            for &m in &self.m {
                for &kind in &self.kinds {
                    for &noise in &self.noise {
                        for &costs in &self.costs {
                            for rep in 0..self.replications {
                                let sigma_eps = noise.sigma(kind);
                                let seed = instance_seed(self.master_seed, n, m, kind, sigma_eps, rep);
                                out.push(Cell { n, m, kind, sigma_eps, costs, rep, seed });
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Settings shared by every method run.
    pub fn method_settings(&self) -> MethodSettings {
        MethodSettings {
            limits: self.limits,
            k: self.k,
            grid_points: self.grid_points,
            deploy: self.deploy,
            penalize_intercept: self.penalize_intercept,
            exec: Exec::Sequential,
        }
    }
}

/// One instance of the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub n: usize,
    pub m: usize,
    pub kind: DemandKind,
    pub sigma_eps: f64,
    pub costs: CostParams,
    pub rep: usize,
    pub seed: u64,
}

impl Cell {
    pub fn instance(&self) -> Result<InstanceBundle> {
        make_instance(self.n, self.m, DemandModelSpec { kind: self.kind, sigma_eps: self.sigma_eps }, self.seed)
    }

    /// Stable directory-friendly identifier.
    pub fn id(&self) -> String {
        format!(
            "n{}_m{}_{}_s{}_b{}_h{}_r{}",
            self.n,
            self.m,
            self.kind.tag(),
            self.sigma_eps,
            self.costs.b,
            self.costs.h,
            self.rep
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodSettings {
    pub limits: SolveLimits,
    pub k: usize,
    pub grid_points: usize,
    pub deploy: Deploy,
    pub penalize_intercept: bool,
    /// Parallelism inside one method run (grid points).
    pub exec: Exec,
}

/// What one method produced on one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: Method,
    pub mask: FeatureMask,
    pub deployed: DecisionFunction,
    /// Objective the method minimized when selecting (validation cost).
    pub validation_cost: f64,
    /// `optimal`, `time_limit` or `ok` (pure LP methods).
    pub status: String,
    pub gap: Option<f64>,
    pub lambda: Option<f64>,
}

fn milp_status(s: MilpStatus) -> &'static str {
    match s {
        MilpStatus::Optimal => "optimal",
        MilpStatus::FeasibleTimeLimit => "time_limit",
        MilpStatus::Infeasible => "infeasible",
        MilpStatus::NoIncumbent => "no_incumbent",
    }
}

/// Runs `method` on `bundle`; `splits` must index into `bundle.in_sample()`.
pub fn run_method(
    method: Method,
    bundle: &InstanceBundle,
    splits: &CvSplits,
    costs: &CostParams,
    settings: &MethodSettings,
) -> Result<MethodOutcome> {
    let sample = bundle.in_sample();
    let (train, validation) = (&bundle.train, &bundle.validation);
    match method {
        Method::Bfs | Method::BfsCv => {
            let opts = BfsOptions { limits: settings.limits, ..BfsOptions::default() };
            let sol = if method == Method::Bfs {
                solve_bfs(train, validation, costs, &opts)?
            } else {
                solve_bfs_cv(&sample, splits, costs, &opts)?
            };
            let deployed = if method == Method::Bfs && settings.deploy == Deploy::LowerLevel {
                sol.beta_lower[0].clone()
            } else {
                refit_final(&sample, costs, &sol.mask)?
            };
            Ok(MethodOutcome {
                method,
                mask: sol.mask,
                deployed,
                validation_cost: sol.validation_cost,
                status: milp_status(sol.solver.status).into(),
                gap: Some(sol.solver.gap),
                lambda: None,
            })
        }
        Method::ErmL0 | Method::ErmL0Cv | Method::ErmL1 | Method::ErmL1Cv => {
            let model = if matches!(method, Method::ErmL0 | Method::ErmL0Cv) { Regularizer::L0 } else { Regularizer::L1 };
            let data = if method.uses_cv() {
                Validation::Cv { sample: &sample, splits }
            } else {
                Validation::Holdout { train, validation }
            };
            let grid = LambdaGrid::data_scaled(train, costs, settings.grid_points)?;
            let opts = GridOptions {
                limits: settings.limits,
                exec: settings.exec,
                penalize_intercept: settings.penalize_intercept,
                beta_bound: None,
            };
            let res = grid_search(data, costs, model, &grid, &opts)?;
            let fit = if method.uses_cv() || settings.deploy == Deploy::LowerLevel {
                res.fit
            } else {
                let limits = SolveLimits {
                    time_limit: (settings.limits.time_limit / (settings.grid_points + 1) as f64).max(1.0),
                    ..settings.limits
                };
                fit_regularized(&sample, costs, model, res.lambda_star, limits, settings.penalize_intercept, None)?
            };
            let status = match (model, fit.gap) {
                (Regularizer::L1, _) => "ok",
                (_, Some(g)) if g <= settings.limits.gap_tol => "optimal",
                _ => "time_limit",
            };
            Ok(MethodOutcome {
                method,
                mask: fit.mask,
                deployed: fit.function,
                validation_cost: res.validation_cost,
                status: status.into(),
                gap: fit.gap,
                lambda: Some(res.lambda_star),
            })
        }
    }
}

/// One row of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsRecord {
    pub n: usize,
    pub m: usize,
    pub kind: DemandKind,
    pub sigma_eps: f64,
    pub b: f64,
    pub h: f64,
    pub rep: usize,
    pub method: Method,
    pub seed: u64,
    pub status: String,
    /// Selection over the `m` features as a 0/1 string; the intercept is
    /// excluded.
    pub mask: Option<String>,
    pub selected: Option<usize>,
    pub accuracy: Option<f64>,
    pub lambda: Option<f64>,
    pub train_cost: Option<f64>,
    pub validation_cost: Option<f64>,
    pub test_cost: Option<f64>,
    /// Percent deviation of the test cost from BFS-CV on the same cell.
    pub deviation: Option<f64>,
    pub gap: Option<f64>,
    pub error: Option<String>,
}

/// Sort and identity key of a record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordKey {
    pub n: usize,
    pub m: usize,
    pub kind: DemandKind,
    pub sigma_eps: f64,
    pub b: f64,
    pub h: f64,
    pub rep: usize,
    pub method: Method,
}

impl ResultsRecord {
    pub fn key(&self) -> RecordKey {
        RecordKey {
            n: self.n,
            m: self.m,
            kind: self.kind,
            sigma_eps: self.sigma_eps,
            b: self.b,
            h: self.h,
            rep: self.rep,
            method: self.method,
        }
    }

    fn key_string(&self) -> String {
        format!(
            "{}|{}|{}|{}|{}|{}|{}|{}",
            self.n,
            self.m,
            self.kind.tag(),
            self.sigma_eps,
            self.b,
            self.h,
            self.rep,
            self.method
        )
    }

    fn blank(cell: &Cell, method: Method) -> Self {
        ResultsRecord {
            n: cell.n,
            m: cell.m,
            kind: cell.kind,
            sigma_eps: cell.sigma_eps,
            b: cell.costs.b,
            h: cell.costs.h,
            rep: cell.rep,
            method,
            seed: cell.seed,
            status: "error".into(),
            mask: None,
            selected: None,
            accuracy: None,
            lambda: None,
            train_cost: None,
            validation_cost: None,
            test_cost: None,
            deviation: None,
            gap: None,
            error: None,
        }
    }
}

fn kind_rank(k: DemandKind) -> u8 {
    match k {
        DemandKind::Linear => 0,
        DemandKind::NonlinearHomoscedastic => 1,
        DemandKind::NonlinearHeteroscedastic => 2,
    }
}

fn compare_keys(a: &RecordKey, b: &RecordKey) -> std::cmp::Ordering {
    a.n.cmp(&b.n)
        .then(a.m.cmp(&b.m))
        .then(kind_rank(a.kind).cmp(&kind_rank(b.kind)))
        .then(a.sigma_eps.total_cmp(&b.sigma_eps))
        .then(a.b.total_cmp(&b.b))
        .then(a.h.total_cmp(&b.h))
        .then(a.rep.cmp(&b.rep))
        .then(a.method.cmp(&b.method))
}

/// Wall time of one method run, kept apart from the deterministic results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub n: usize,
    pub m: usize,
    pub kind: DemandKind,
    pub sigma_eps: f64,
    pub b: f64,
    pub h: f64,
    pub rep: usize,
    pub method: Method,
    pub wall_time: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct JournalEntry {
    record: ResultsRecord,
    wall_time: f64,
}

fn mask_string(mask: &FeatureMask) -> String {
    mask.features().iter().map(|&z| if z { '1' } else { '0' }).collect()
}

/// Runs every configured method on one cell.
pub fn run_cell(cell: &Cell, methods: &[Method], settings: &MethodSettings) -> Vec<(ResultsRecord, f64)> {
    let prepared = cell.instance().and_then(|b| {
        let s = instance_splits(&b, settings.k)?;
        Ok((b, s))
    });
    let (bundle, splits) = match prepared {
        Ok(p) => p,
        Err(e) => {
            return methods
                .iter()
                .map(|&m| {
                    let mut r = ResultsRecord::blank(cell, m);
                    r.error = Some(e.to_string());
                    (r, 0.0)
                })
                .collect()
        }
    };
    let sample = bundle.in_sample();
    let mut rows: Vec<(ResultsRecord, f64)> = Vec::with_capacity(methods.len());
    for &method in methods {
        let started = Instant::now();
        let outcome = run_method(method, &bundle, &splits, &cell.costs, settings);
        let wall = started.elapsed().as_secs_f64();
        let mut r = ResultsRecord::blank(cell, method);
        let evaluated = outcome.and_then(|o| {
            let acc = accuracy(o.mask.features(), &bundle.truth.z_star)?;
            let train = newsvendor_cost(&o.deployed, &sample, &cell.costs)?;
            let test = newsvendor_cost(&o.deployed, &bundle.test, &cell.costs)?;
            Ok((o, acc, train, test))
        });
        match evaluated {
            Ok((o, acc, train, test)) => {
                r.status = o.status;
                r.mask = Some(mask_string(&o.mask));
                r.selected = Some(o.mask.features().iter().filter(|z| **z).count());
                r.accuracy = Some(acc);
                r.lambda = o.lambda;
                r.train_cost = Some(train);
                r.validation_cost = Some(o.validation_cost);
                r.test_cost = Some(test);
                r.gap = o.gap;
            }
            Err(e) => {
                log::warn!("{} on {}: {e}", method, cell.id());
                r.error = Some(e.to_string());
            }
        }
        rows.push((r, wall));
    }
    let reference = rows.iter().find(|(r, _)| r.method == Method::BfsCv).and_then(|(r, _)| r.test_cost);
    if let Some(c_ref) = reference {
        for (r, _) in rows.iter_mut() {
            if r.method != Method::BfsCv {
                r.deviation = r.test_cost.and_then(|c| test_cost_deviation(c, c_ref).ok());
            }
        }
    }
    rows
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Keep the existing journal and skip finished cells.
    pub resume: bool,
    /// Worker threads; `0` uses the global pool.
    pub jobs: usize,
    pub exec: Exec,
    /// Stop after this many newly computed cells (the run is left resumable).
    pub max_cells: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub cells: usize,
    pub computed: usize,
    pub skipped: usize,
    pub rows: usize,
    pub complete: bool,
    pub results: PathBuf,
}

fn read_journal(path: &Path) -> Result<Vec<JournalEntry>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        // a crash can leave a torn final line
        match serde_json::from_str::<JournalEntry>(&line) {
            Ok(e) => out.push(e),
            Err(e) => log::warn!("skipping unreadable journal line: {e}"),
        }
    }
    Ok(out)
}

/// Cuts a partial last line left by an interrupted append.
fn drop_torn_tail(path: &Path) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let bytes = fs::read(path)?;
    let keep = bytes.iter().rposition(|&c| c == b'\n').map_or(0, |i| i + 1);
    if keep < bytes.len() {
        File::options().write(true).open(path)?.set_len(keep as u64)?;
    }
    Ok(())
}

/// Runs the sweep into `out_dir`, then finalizes the result files.
pub fn run_experiment(config: &ExperimentConfig, out_dir: impl AsRef<Path>, opts: &RunOptions) -> Result<RunSummary> {
    config.validate()?;
    let out = out_dir.as_ref();
    fs::create_dir_all(out)?;
    let cfg_path = out.join(CONFIG_FILE);
    let journal_path = out.join(JOURNAL_FILE);
    if opts.resume && cfg_path.exists() {
        let previous = ExperimentConfig::load(&cfg_path)?;
        if &previous != config {
            return Err(invalid("cannot resume: the configuration differs from the one in the output directory"));
        }
    }
    if !opts.resume && journal_path.exists() {
        fs::remove_file(&journal_path)?;
    }
    config.save(&cfg_path)?;
    drop_torn_tail(&journal_path)?;

    let done: HashSet<String> = read_journal(&journal_path)?.iter().map(|e| e.record.key_string()).collect();
    let cells = config.cells();
    let mut pending: Vec<Cell> = cells
        .iter()
        .filter(|c| {
            config.methods.iter().any(|&m| !done.contains(&ResultsRecord::blank(c, m).key_string()))
        })
        .copied()
        .collect();
    let skipped = cells.len() - pending.len();
    if let Some(cap) = opts.max_cells {
        pending.truncate(cap);
    }
    let settings = config.method_settings();
    let writer = Mutex::new(BufWriter::new(File::options().create(true).append(true).open(&journal_path)?));
    let write_err: Mutex<Option<Error>> = Mutex::new(None);
    let work = || {
        par::map(opts.exec, &pending, |cell| {
            let rows = run_cell(cell, &config.methods, &settings);
            let mut w = writer.lock().expect("journal writer");
            let res: Result<()> = (|| {
                for (record, wall_time) in rows {
                    if done.contains(&record.key_string()) {
                        continue;
                    }
                    let line = serde_json::to_string(&JournalEntry { record, wall_time })?;
                    writeln!(w, "{line}")?;
                }
                w.flush()?;
                Ok(())
            })();
            if let Err(e) = res {
                write_err.lock().expect("error slot").get_or_insert(e);
            }
        })
    };
    par::with_jobs(opts.jobs, work);
    if let Some(e) = write_err.into_inner().expect("error slot") {
        return Err(e);
    }
    let computed = pending.len();
    let (rows, complete) = finalize(config, out)?;
    Ok(RunSummary { cells: cells.len(), computed, skipped, rows, complete, results: out.join(RESULTS_FILE) })
}

/// Rewrites `results.csv` and `timings.csv` from the journal: first entry
/// per key wins, rows sorted by coordinate, replication and method. Returns
/// the row count and whether every expected row is present.
pub fn finalize(config: &ExperimentConfig, out_dir: &Path) -> Result<(usize, bool)> {
    let mut seen = HashSet::new();
    let mut entries: Vec<JournalEntry> = read_journal(&out_dir.join(JOURNAL_FILE))?
        .into_iter()
        .filter(|e| seen.insert(e.record.key_string()))
        .collect();
    entries.sort_by(|a, b| compare_keys(&a.record.key(), &b.record.key()));
    let expected = config.cells().len() * config.methods.len();
    let records: Vec<ResultsRecord> = entries.iter().map(|e| e.record.clone()).collect();
    write_csv_atomic(&out_dir.join(RESULTS_FILE), &records)?;
    let timings: Vec<TimingRecord> = entries
        .iter()
        .map(|e| TimingRecord {
            n: e.record.n,
            m: e.record.m,
            kind: e.record.kind,
            sigma_eps: e.record.sigma_eps,
            b: e.record.b,
            h: e.record.h,
            rep: e.record.rep,
            method: e.record.method,
            wall_time: e.wall_time,
        })
        .collect();
    write_csv_atomic(&out_dir.join(TIMINGS_FILE), &timings)?;
    Ok((records.len(), records.len() == expected))
}

/// Writes `rows` to a sibling temporary file, then renames it over `path`.
pub fn write_csv_atomic<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    {
        let mut w = csv::Writer::from_path(&tmp)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ResultsRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for r in rdr.deserialize() {
        out.push(r?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            n: vec![24],
            m: vec![4],
            replications: 3,
            methods: vec![Method::Bfs, Method::ErmL1],
            k: 2,
            limits: SolveLimits { time_limit: 30.0, ..SolveLimits::default() },
            grid_points: 4,
            ..ExperimentConfig::desk_default()
        }
    }

    #[test]
    fn config_round_trips_and_validates() {
        let cfg = ExperimentConfig::desk_default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert!(cfg.validate().is_ok());
        assert!(ExperimentConfig { replications: 0, ..cfg.clone() }.validate().is_err());
        assert!(ExperimentConfig { n: vec![], ..cfg.clone() }.validate().is_err());
        assert!(ExperimentConfig { version: 99, ..cfg.clone() }.validate().is_err());
        assert!(serde_json::from_str::<ExperimentConfig>(&text.replace("\"k\"", "\"kk\"")).is_err());
    }

    #[test]
    fn method_names_parse() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.name()).unwrap(), m);
        }
        assert_eq!(Method::parse("bfs_cv").unwrap(), Method::BfsCv);
        assert_eq!(Method::parse("erm-ℓ1").unwrap(), Method::ErmL1);
        assert!(Method::parse("lasso").is_err());
    }

    #[test]
    fn cells_count_and_seed_independence_from_costs() {
        let cfg = ExperimentConfig {
            costs: vec![CostParams { b: 2.0, h: 1.0 }, CostParams { b: 1.0, h: 3.0 }],
            ..tiny()
        };
        let cells = cfg.cells();
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[0].seed, cells[3].seed);
        assert_ne!(cells[0].seed, cells[1].seed);
    }

    #[test]
    fn cv_noise_scales_with_base_level() {
        assert_eq!(Noise::Cv(0.2).sigma(DemandKind::Linear), 1.0);
        assert_eq!(Noise::Cv(0.2).sigma(DemandKind::NonlinearHomoscedastic), 2.0);
        assert_eq!(Noise::Sigma(0.5).sigma(DemandKind::NonlinearHeteroscedastic), 0.5);
    }

    #[test]
    fn sweep_counts_rows_and_reruns_identically() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny();
        let opts = RunOptions { exec: Exec::Sequential, ..RunOptions::default() };
        let s = run_experiment(&cfg, dir.path(), &opts).unwrap();
        assert_eq!(s.rows, 6);
        assert!(s.complete);
        let first = fs::read(dir.path().join(RESULTS_FILE)).unwrap();
        let rows = read_results(dir.path().join(RESULTS_FILE)).unwrap();
        assert!(rows.iter().all(|r| r.error.is_none() && r.accuracy.is_some()));
        run_experiment(&cfg, dir.path(), &opts).unwrap();
        assert_eq!(fs::read(dir.path().join(RESULTS_FILE)).unwrap(), first);
    }

    #[test]
    fn interrupted_sweep_resumes_to_the_same_file() {
        let cfg = tiny();
        let full = tempfile::tempdir().unwrap();
        run_experiment(&cfg, full.path(), &RunOptions { exec: Exec::Sequential, ..RunOptions::default() }).unwrap();

        let part = tempfile::tempdir().unwrap();
        let first = RunOptions { exec: Exec::Sequential, max_cells: Some(1), ..RunOptions::default() };
        let s = run_experiment(&cfg, part.path(), &first).unwrap();
        assert!(!s.complete);
        // a torn trailing line, as left by a crash mid-write
        let mut j = File::options().append(true).open(part.path().join(JOURNAL_FILE)).unwrap();
        write!(j, "{{\"record\": {{\"n\": 24").unwrap();
        drop(j);
        let resume = RunOptions { exec: Exec::Sequential, resume: true, ..RunOptions::default() };
        let s = run_experiment(&cfg, part.path(), &resume).unwrap();
        assert_eq!(s.skipped, 1);
        assert!(s.complete);
        assert_eq!(
            fs::read(part.path().join(RESULTS_FILE)).unwrap(),
            fs::read(full.path().join(RESULTS_FILE)).unwrap()
        );
    }

    #[test]
    fn resume_rejects_a_changed_config() {
        let dir = tempfile::tempdir().unwrap();
        let opts = RunOptions { exec: Exec::Sequential, max_cells: Some(0), ..RunOptions::default() };
        run_experiment(&tiny(), dir.path(), &opts).unwrap();
        let other = ExperimentConfig { master_seed: 1, ..tiny() };
        let resume = RunOptions { resume: true, ..opts };
        assert!(run_experiment(&other, dir.path(), &resume).is_err());
    }

    #[test]
    fn deviation_is_relative_to_bfs_cv() {
        let cfg = ExperimentConfig { replications: 1, methods: vec![Method::BfsCv, Method::ErmL1Cv], ..tiny() };
        let rows = run_cell(&cfg.cells()[0], &cfg.methods, &cfg.method_settings());
        let (bfs, l1) = (&rows[0].0, &rows[1].0);
        assert!(bfs.deviation.is_none());
        let expect = 100.0 * (l1.test_cost.unwrap() - bfs.test_cost.unwrap()) / bfs.test_cost.unwrap();
        assert!((l1.deviation.unwrap() - expect).abs() < 1e-12);
    }
}
