use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use nvselect::datagen::{instance_splits, load_instance, make_instance, save_instance, DemandKind, DemandModelSpec};
use nvselect::erm::CostParams;
use nvselect::harness::report::{figure, write_report, FIGURES};
use nvselect::harness::{
    read_results, run_experiment, run_method, Deploy, ExperimentConfig, Method, MethodSettings, RunOptions,
    RESULTS_FILE,
};
use nvselect::metrics::{accuracy, newsvendor_cost};
use nvselect::milp::SolveLimits;
use nvselect::par::Exec;

#[derive(Parser)]
#[command(name = "nvselect", version, about = "Feature selection for the feature-based newsvendor")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Linear,
    Homoscedastic,
    Heteroscedastic,
}

impl From<Kind> for DemandKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Linear => DemandKind::Linear,
            Kind::Homoscedastic => DemandKind::NonlinearHomoscedastic,
            Kind::Heteroscedastic => DemandKind::NonlinearHeteroscedastic,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Draw one instance and write it to a directory.
    Generate {
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 10)]
        m: usize,
        #[arg(long, value_enum, default_value_t = Kind::Linear)]
        kind: Kind,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also store K cross-validation splits.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one method on a stored instance and print a JSON fit report.
    Solve {
        /// Directory written by `generate`.
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        method: String,
        #[arg(long, default_value_t = 2.0)]
        b: f64,
        #[arg(long, default_value_t = 1.0)]
        h: f64,
        /// Splits used when the instance has none stored.
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 900.0)]
        time_limit: f64,
        #[arg(long, default_value_t = 50)]
        grid_points: usize,
        /// Keep the lower-level coefficients of hold-out methods instead of
        /// refitting on the whole sample.
        #[arg(long)]
        lower_level: bool,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a configured sweep.
    Experiment {
        /// JSON configuration; the desk-scale default when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the per-method time limit in seconds.
        #[arg(long)]
        time_limit: Option<f64>,
        /// Worker threads (0 = all cores).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Continue an interrupted sweep in the same directory.
        #[arg(long)]
        resume: bool,
    },
    /// Emit figure data, p-values and gap summaries from a results file.
    Report {
        /// A results CSV or an experiment directory.
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Restrict to these figure ids (repeatable).
        #[arg(long = "figure")]
        figures: Vec<String>,
    },
    /// Print the default experiment configuration as JSON.
    DefaultConfig,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Generate { n, m, kind, sigma, seed, k, out } => {
            let bundle = make_instance(n, m, DemandModelSpec { kind: kind.into(), sigma_eps: sigma }, seed)?;
            let splits = k.map(|k| instance_splits(&bundle, k)).transpose()?;
            save_instance(&out, &bundle, splits.as_ref())?;
            println!(
                "wrote {} train / {} validation / {} test rows to {}",
                bundle.train.n(),
                bundle.validation.n(),
                bundle.test.n(),
                out.display()
            );
        }
        Command::Solve { instance, method, b, h, k, time_limit, grid_points, lower_level, out } => {
            let method = Method::parse(&method)?;
            let costs = CostParams::new(b, h)?;
            let (bundle, stored) = load_instance(&instance)
                .with_context(|| format!("reading instance from {}", instance.display()))?;
            let splits = match stored {
                Some(s) => s,
                None => instance_splits(&bundle, k)?,
            };
            let settings = MethodSettings {
                limits: SolveLimits { time_limit, ..SolveLimits::default() },
                k: splits.k,
                grid_points,
                deploy: if lower_level { Deploy::LowerLevel } else { Deploy::Refit },
                penalize_intercept: true,
                exec: Exec::Parallel,
            };
            let o = run_method(method, &bundle, &splits, &costs, &settings)?;
            let report = json!({
                "method": method.name(),
                "lambda": o.lambda,
                "beta": o.deployed.beta,
                "mask": o.mask.features(),
                "intercept_selected": o.mask.z[0],
                "accuracy": accuracy(o.mask.features(), &bundle.truth.z_star)?,
                "train_cost": newsvendor_cost(&o.deployed, &bundle.in_sample(), &costs)?,
                "validation_cost": o.validation_cost,
                "test_cost": newsvendor_cost(&o.deployed, &bundle.test, &costs)?,
                "status": o.status,
                "gap": o.gap,
            });
            let text = serde_json::to_string_pretty(&report)?;
            match out {
                Some(p) => std::fs::write(&p, text + "\n")?,
                None => println!("{text}"),
            }
        }
        Command::Experiment { config, out, seed, time_limit, jobs, resume } => {
            let mut cfg = match &config {
                Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
                None => ExperimentConfig::desk_default(),
            };
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            if let Some(t) = time_limit {
                cfg.limits.time_limit = t;
            }
            let opts = RunOptions { resume, jobs, exec: Exec::Parallel, max_cells: None };
            let s = run_experiment(&cfg, &out, &opts)?;
            println!(
                "{} cells ({} computed, {} already done), {} rows in {}",
                s.cells,
                s.computed,
                s.skipped,
                s.rows,
                s.results.display()
            );
            if !s.complete {
                bail!("results are incomplete; rerun with --resume");
            }
        }
        Command::Report { results, out, figures } => {
            let path = if results.is_dir() { results.join(RESULTS_FILE) } else { results };
            let rows = read_results(&path).with_context(|| format!("reading {}", path.display()))?;
            let figs = if figures.is_empty() {
                FIGURES.to_vec()
            } else {
                figures.iter().map(|f| figure(f)).collect::<Result<Vec<_>, _>>()?
            };
            let s = write_report(&rows, &figs, &out)?;
            println!("wrote {} figure files to {}", s.figures_written.len(), out.display());
            for (id, why) in &s.coverage_gaps {
                println!("skipped {id}: {why}");
            }
        }
        Command::DefaultConfig => {
            println!("{}", serde_json::to_string_pretty(&ExperimentConfig::desk_default())?);
        }
    }
    Ok(())
}
