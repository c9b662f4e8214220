//! Figure data, significance tables and solver-gap summaries computed from
//! `results.csv` rows.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{write_csv_atomic, Method, ResultsRecord};
use crate::datagen::DemandKind;
use crate::error::{invalid, Error, Result};
use crate::metrics::wilcoxon_one_sided;

/// Quantity on the vertical axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Accuracy,
    Deviation,
}

/// Swept coordinate on the horizontal axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    N,
    M,
    Noise,
    /// Critical ratio `b / (b + h)`.
    Ratio,
    /// Shortage cost with `h = 1`.
    Shortage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Figure {
    pub id: &'static str,
    pub measure: Measure,
    pub axis: Axis,
    /// Restrict to the largest configured `n`.
    pub largest_n: bool,
}

pub const FIGURES: [Figure; 9] = [
    Figure { id: "accuracy-n", measure: Measure::Accuracy, axis: Axis::N, largest_n: false },
    Figure { id: "deviation-n", measure: Measure::Deviation, axis: Axis::N, largest_n: false },
    Figure { id: "accuracy-m", measure: Measure::Accuracy, axis: Axis::M, largest_n: false },
    Figure { id: "deviation-m", measure: Measure::Deviation, axis: Axis::M, largest_n: true },
    Figure { id: "accuracy-noise", measure: Measure::Accuracy, axis: Axis::Noise, largest_n: false },
    Figure { id: "deviation-noise", measure: Measure::Deviation, axis: Axis::Noise, largest_n: true },
    Figure { id: "accuracy-ratio", measure: Measure::Accuracy, axis: Axis::Ratio, largest_n: false },
    Figure { id: "deviation-shortage", measure: Measure::Deviation, axis: Axis::Shortage, largest_n: true },
    Figure { id: "deviation-largest", measure: Measure::Deviation, axis: Axis::N, largest_n: true },
];

pub fn figure(id: &str) -> Result<Figure> {
    FIGURES
        .iter()
        .copied()
        .find(|f| f.id == id)
        .ok_or_else(|| invalid(format!("unknown figure '{id}'; known: {}", figure_ids().join(", "))))
}

pub fn figure_ids() -> Vec<&'static str> {
    FIGURES.iter().map(|f| f.id).collect()
}

/// One tidy row: summary of one method at one x-value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureRow {
    pub figure: String,
    pub kind: DemandKind,
    pub x: f64,
    pub method: Method,
    pub count: usize,
    pub mean: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
    /// Subset note, e.g. `n=500 (largest configured)`.
    pub subset: String,
}

/// Linear-interpolation quantile of sorted data (`p` in `[0, 1]`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn x_value(r: &ResultsRecord, axis: Axis) -> f64 {
    match axis {
        Axis::N => r.n as f64,
        Axis::M => r.m as f64,
        Axis::Noise => r.sigma_eps,
        Axis::Ratio => r.b / (r.b + r.h),
        Axis::Shortage => r.b,
    }
}

fn measure_value(r: &ResultsRecord, m: Measure) -> Option<f64> {
    match m {
        Measure::Accuracy => r.accuracy,
        Measure::Deviation => r.deviation,
    }
}

fn applicable(fig: &Figure, method: Method) -> bool {
    fig.measure == Measure::Accuracy || method != Method::BfsCv
}

/// Rows feeding `fig`, with the subset label.
fn subset<'a>(results: &'a [ResultsRecord], fig: &Figure) -> (Vec<&'a ResultsRecord>, String) {
    let mut rows: Vec<&ResultsRecord> = results.iter().collect();
    let mut label = String::new();
    if fig.largest_n {
        if let Some(n_max) = rows.iter().map(|r| r.n).max() {
            rows.retain(|r| r.n == n_max);
            label = format!("n={n_max} (largest configured)");
        }
    }
    if fig.axis == Axis::Shortage {
        rows.retain(|r| r.h == 1.0);
        label = if label.is_empty() { "h=1".into() } else { format!("{label}, h=1") };
    }
    (rows, label)
}

type Groups = BTreeMap<(u8, u64, Method), (DemandKind, f64, Vec<f64>)>;

fn kind_rank(k: DemandKind) -> u8 {
    match k {
        DemandKind::Linear => 0,
        DemandKind::NonlinearHomoscedastic => 1,
        DemandKind::NonlinearHeteroscedastic => 2,
    }
}

// x-values are finite, so the bit pattern of a nonnegative float orders
// like the float itself
fn x_key(x: f64) -> u64 {
    x.to_bits()
}

/// Summaries for `fig`. Every (kind, x, method) combination present in the
/// subset must have at least one usable value, otherwise a coverage error
/// names the empty cells.
pub fn emit_figure_data(results: &[ResultsRecord], fig: &Figure) -> Result<Vec<FigureRow>> {
    let (rows, label) = subset(results, fig);
    if rows.is_empty() {
        return Err(Error::Coverage(format!("figure {}: no results in range", fig.id)));
    }
    let mut groups: Groups = BTreeMap::new();
    for r in rows.iter().filter(|r| applicable(fig, r.method)) {
        let x = x_value(r, fig.axis);
        let e = groups.entry((kind_rank(r.kind), x_key(x), r.method)).or_insert((r.kind, x, Vec::new()));
        if let Some(v) = measure_value(r, fig.measure) {
            e.2.push(v);
        }
    }
    let missing: Vec<String> = groups
        .iter()
        .filter(|(_, (_, _, v))| v.is_empty())
        .map(|((_, _, m), (k, x, _))| format!("{} x={x} {m}", k.tag()))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Coverage(format!("figure {}: no usable values for {}", fig.id, missing.join("; "))));
    }
    if groups.is_empty() {
        return Err(Error::Coverage(format!("figure {}: no applicable methods", fig.id)));
    }
    Ok(groups
        .into_iter()
        .map(|((_, _, method), (kind, x, mut v))| {
            v.sort_by(f64::total_cmp);
            FigureRow {
                figure: fig.id.to_string(),
                kind,
                x,
                method,
                count: v.len(),
                mean: v.iter().sum::<f64>() / v.len() as f64,
                q1: quantile_sorted(&v, 0.25),
                median: quantile_sorted(&v, 0.5),
                q3: quantile_sorted(&v, 0.75),
                min: v[0],
                max: v[v.len() - 1],
                subset: label.clone(),
            }
        })
        .collect())
}

/// One entry of the significance table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueRow {
    pub figure: String,
    pub method: Method,
    pub pairs: usize,
    /// One-sided p-value for "BFS-CV is better"; `None` when fewer than five
    /// pairs differ.
    pub p_value: Option<f64>,
}

/// Paired differences, positive when BFS-CV is better, over the figure's
/// subset.
pub fn paired_differences(results: &[ResultsRecord], fig: &Figure, method: Method) -> Vec<f64> {
    let (rows, _) = subset(results, fig);
    match fig.measure {
        Measure::Deviation => rows.iter().filter(|r| r.method == method).filter_map(|r| r.deviation).collect(),
        Measure::Accuracy => {
            let reference: BTreeMap<String, f64> = rows
                .iter()
                .filter(|r| r.method == Method::BfsCv)
                .filter_map(|r| r.accuracy.map(|a| (cell_key(r), a)))
                .collect();
            rows.iter()
                .filter(|r| r.method == method)
                .filter_map(|r| Some(reference.get(&cell_key(r))? - r.accuracy?))
                .collect()
        }
    }
}

fn cell_key(r: &ResultsRecord) -> String {
    format!("{}|{}|{}|{}|{}|{}|{}", r.n, r.m, r.kind.tag(), r.sigma_eps, r.b, r.h, r.rep)
}

/// One-sided Wilcoxon p-values of BFS-CV against every other method present,
/// for every figure id given.
pub fn p_value_table(results: &[ResultsRecord], figures: &[Figure]) -> Vec<PValueRow> {
    let mut methods: Vec<Method> = results.iter().map(|r| r.method).filter(|m| *m != Method::BfsCv).collect();
    methods.sort();
    methods.dedup();
    let mut out = Vec::new();
    for &method in &methods {
        for fig in figures {
            let d = paired_differences(results, fig, method);
            out.push(PValueRow {
                figure: fig.id.to_string(),
                method,
                pairs: d.len(),
                p_value: wilcoxon_one_sided(&d).ok(),
            });
        }
    }
    out
}

/// Per-method solver status counts and gap distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub method: Method,
    pub runs: usize,
    pub optimal: usize,
    pub time_limit: usize,
    pub failed: usize,
    pub median_gap: Option<f64>,
    pub max_gap: Option<f64>,
    /// Share of runs with a reported gap below 5%.
    pub below_5pct: Option<f64>,
    /// All reported gaps are finite.
    pub finite: bool,
}

pub fn gap_report(results: &[ResultsRecord]) -> Vec<GapRow> {
    let mut by_method: BTreeMap<Method, Vec<&ResultsRecord>> = BTreeMap::new();
    for r in results {
        by_method.entry(r.method).or_default().push(r);
    }
    by_method
        .into_iter()
        .map(|(method, rows)| {
            let mut gaps: Vec<f64> = rows.iter().filter_map(|r| r.gap).collect();
            gaps.sort_by(f64::total_cmp);
            let (median_gap, max_gap, below) = if gaps.is_empty() {
                (None, None, None)
            } else {
                let below = gaps.iter().filter(|g| **g < 0.05).count() as f64 / gaps.len() as f64;
                (Some(quantile_sorted(&gaps, 0.5)), gaps.last().copied(), Some(below))
            };
            GapRow {
                method,
                runs: rows.len(),
                optimal: rows.iter().filter(|r| r.status == "optimal").count(),
                time_limit: rows.iter().filter(|r| r.status == "time_limit").count(),
                failed: rows.iter().filter(|r| r.error.is_some()).count(),
                median_gap,
                max_gap,
                below_5pct: below,
                finite: gaps.iter().all(|g| g.is_finite()),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    pub figures_written: Vec<String>,
    /// Figures skipped for lack of coverage, with the reason.
    pub coverage_gaps: Vec<(String, String)>,
}

/// Writes `figure-<id>.csv` for every figure the results cover, plus
/// `pvalues.csv`, `gaps.csv` and `coverage.txt` into `out_dir`.
pub fn write_report(results: &[ResultsRecord], figures: &[Figure], out_dir: &Path) -> Result<ReportSummary> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let mut gaps = Vec::new();
    let mut covered = Vec::new();
    for fig in figures {
        match emit_figure_data(results, fig) {
            Ok(rows) => {
                write_csv_atomic(&out_dir.join(format!("figure-{}.csv", fig.id)), &rows)?;
                written.push(fig.id.to_string());
                covered.push(*fig);
            }
            Err(Error::Coverage(msg)) => gaps.push((fig.id.to_string(), msg)),
            Err(e) => return Err(e),
        }
    }
    write_csv_atomic(&out_dir.join("pvalues.csv"), &p_value_table(results, &covered))?;
    write_csv_atomic(&out_dir.join("gaps.csv"), &gap_report(results))?;
    let mut text = String::new();
    for (id, msg) in &gaps {
        text.push_str(&format!("{id}: {msg}\n"));
    }
    std::fs::write(out_dir.join("coverage.txt"), text)?;
    Ok(ReportSummary { figures_written: written, coverage_gaps: gaps })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(n: usize, rep: usize, method: Method, acc: f64, dev: Option<f64>) -> ResultsRecord {
        ResultsRecord {
            n,
            m: 4,
            kind: DemandKind::Linear,
            sigma_eps: 1.0,
            b: 2.0,
            h: 1.0,
            rep,
            method,
            seed: 0,
            status: "optimal".into(),
            mask: Some("1100".into()),
            selected: Some(2),
            accuracy: Some(acc),
            lambda: None,
            train_cost: Some(1.0),
            validation_cost: Some(1.0),
            test_cost: Some(1.0),
            deviation: dev,
            gap: Some(0.0),
            error: None,
        }
    }

    fn sweep() -> Vec<ResultsRecord> {
        let mut out = Vec::new();
        for n in [40, 100] {
            for rep in 0..8 {
                out.push(rec(n, rep, Method::BfsCv, 1.0, None));
                out.push(rec(n, rep, Method::ErmL1, 0.5 + 0.05 * rep as f64, Some(rep as f64 - 1.5)));
            }
        }
        out
    }

    #[test]
    fn accuracy_figure_has_one_row_per_x_and_method() {
        let rows = emit_figure_data(&sweep(), &figure("accuracy-n").unwrap()).unwrap();
        assert_eq!(rows.len(), 2 * 2);
        assert_eq!((rows[0].x, rows[0].method), (40.0, Method::BfsCv));
        assert_eq!(rows[0].mean, 1.0);
        assert_eq!(rows[1].count, 8);
    }

    #[test]
    fn quartiles_match_direct_recomputation() {
        let rows = emit_figure_data(&sweep(), &figure("deviation-largest").unwrap()).unwrap();
        assert_eq!(rows.len(), 1);
        let r = &rows[0];
        assert_eq!(r.subset, "n=100 (largest configured)");
        // values -1.5, -0.5, ..., 5.5: position 7p between consecutive points
        let v: Vec<f64> = (0..8).map(|i| i as f64 - 1.5).collect();
        let direct = |p: f64| {
            let pos = 7.0 * p;
            let i = pos as usize;
            v[i] + (pos - i as f64) * (v[(i + 1).min(7)] - v[i])
        };
        assert!((r.q1 - direct(0.25)).abs() < 1e-12);
        assert!((r.median - 2.0).abs() < 1e-12);
        assert!((r.q3 - direct(0.75)).abs() < 1e-12);
        assert_eq!((r.min, r.max), (-1.5, 5.5));
    }

    #[test]
    fn missing_values_are_a_coverage_error() {
        let mut rows = sweep();
        for r in rows.iter_mut().filter(|r| r.method == Method::ErmL1 && r.n == 40) {
            r.accuracy = None;
        }
        match emit_figure_data(&rows, &figure("accuracy-n").unwrap()) {
            Err(Error::Coverage(msg)) => assert!(msg.contains("x=40") && msg.contains("ERM-l1")),
            other => panic!("expected a coverage error, got {other:?}"),
        }
        assert!(matches!(emit_figure_data(&[], &FIGURES[0]), Err(Error::Coverage(_))));
    }

    #[test]
    fn p_values_match_the_metrics_routine() {
        let results = sweep();
        let figs = [figure("accuracy-n").unwrap(), figure("deviation-n").unwrap()];
        let table = p_value_table(&results, &figs);
        assert_eq!(table.len(), 2);
        let acc_diffs: Vec<f64> = results
            .iter()
            .filter(|r| r.method == Method::ErmL1)
            .map(|r| 1.0 - r.accuracy.unwrap())
            .collect();
        assert_eq!(table[0].pairs, 16);
        assert_eq!(table[0].p_value, Some(wilcoxon_one_sided(&acc_diffs).unwrap()));
        let devs: Vec<f64> = results.iter().filter_map(|r| r.deviation).collect();
        assert_eq!(table[1].p_value, Some(wilcoxon_one_sided(&devs).unwrap()));
    }

    #[test]
    fn gap_report_counts_statuses() {
        let mut rows = sweep();
        rows[0].status = "time_limit".into();
        rows[0].gap = Some(0.1);
        let g = gap_report(&rows);
        let bfs = g.iter().find(|r| r.method == Method::BfsCv).unwrap();
        assert_eq!((bfs.runs, bfs.optimal, bfs.time_limit), (16, 15, 1));
        assert_eq!(bfs.max_gap, Some(0.1));
        assert!(bfs.finite);
    }

    #[test]
    fn report_writes_covered_figures_and_lists_the_rest() {
        let dir = tempfile::tempdir().unwrap();
        let s = write_report(&sweep(), &FIGURES, dir.path()).unwrap();
        assert!(s.figures_written.contains(&"accuracy-n".to_string()));
        assert!(dir.path().join("figure-accuracy-n.csv").exists());
        assert!(dir.path().join("pvalues.csv").exists());
        assert!(s.coverage_gaps.is_empty());
        assert_eq!(figure_ids().len(), FIGURES.len());
        assert!(figure("nope").is_err());
    }
}
