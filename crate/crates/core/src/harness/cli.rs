use std::ffi::OsString;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::table::{
    compare_designs, emit_csv, emit_fig1, emit_fig2, emit_fig3, write_csv, write_fig1, BOOTSTRAP_RESAMPLES,
};
use super::{
    default_workers, replicate_seed, run_design, run_experiment, DataSource, DesignId, DesignParams, DgpId,
    ExperimentConfig,
};
use crate::designs::{kk14_cutoff, packing_policy, Kk14Config, PackingConfig};
use crate::engine::run_stream;
use crate::error::{Error, Result};
use crate::estimators::{conditional_variance_moments, exact_variance_oracle_moments, UnitMoments};
use crate::numerics::{chisq_quantile, euclidean, f_cdf, f_quantile};
use crate::rng::{RandomSource, DATA_STREAM};

#[derive(Debug, Parser)]
#[command(
    name = "reservoir",
    version,
    about = "Reservoir matched-pair designs for online A/B tests"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the replicate grid and write one CSV row per replicate and design.
    Simulate(RunArgs),
    /// One long run per design; writes the per-step reservoir size and mean
    /// intra-pair distance.
    Diagnose(RunArgs),
    /// Semi-synthetic pipeline on a Criteo file (`--data`), or on the
    /// generated surrogate when no file is given.
    Criteo(RunArgs),
    /// Quick oracle checks of the variance formula, quantiles, the KK14
    /// cutoff and the packing invariant.
    Selftest,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// setting1, setting2, criteo or surrogate.
    #[arg(long)]
    dgp: Option<String>,
    /// iid, kk14, packing, oracle-g, bai or all; repeatable.
    #[arg(long)]
    design: Vec<String>,
    /// Sample size; repeatable. Accepts forms like 1e5.
    #[arg(long = "T", value_parser = parse_size)]
    sizes: Vec<usize>,
    /// Replicates per (design, T) cell.
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Packing exponent δ.
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    /// KK14 F-quantile level.
    #[arg(long = "kk-lambda", default_value_t = 0.1)]
    kk_lambda: f64,
    /// KK14 burn-in (default: the covariate dimension).
    #[arg(long = "burn-in")]
    burn_in: Option<usize>,
    /// Worker threads (default: $RESERVOIR_WORKERS or all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Output CSV (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Criteo data file.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Criteo schema file of key = value lines.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Directory for the figure CSVs.
    #[arg(long)]
    figures: Option<PathBuf>,
}

fn parse_size(s: &str) -> std::result::Result<usize, String> {
    if let Ok(n) = s.parse::<usize>() {
        return Ok(n);
    }
    match s.parse::<f64>() {
        Ok(v) if v >= 1.0 && v.fract() == 0.0 && v <= 1e15 => Ok(v as usize),
        _ => Err(format!("{s:?} is not a positive integer")),
    }
}

struct Defaults {
    dgp: DgpId,
    designs: Vec<DesignId>,
    sizes: Vec<usize>,
    replicates: usize,
}

impl RunArgs {
    fn config(self, defaults: Defaults) -> Result<(ExperimentConfig, Option<PathBuf>)> {
        let dgp = match &self.dgp {
            Some(s) => s.parse()?,
            None => defaults.dgp,
        };
        let mut designs = Vec::new();
        for s in &self.design {
            for d in DesignId::parse_list(s)? {
                if !designs.contains(&d) {
                    designs.push(d);
                }
            }
        }
        if designs.is_empty() {
            designs = defaults.designs;
        }
        let cfg = ExperimentConfig {
            dgp,
            data: self.data,
            schema: self.schema,
            designs,
            params: DesignParams {
                delta: self.delta,
                kk_lambda: self.kk_lambda,
                burn_in: self.burn_in,
            },
            sizes: if self.sizes.is_empty() {
                defaults.sizes
            } else {
                self.sizes
            },
            replicates: self.reps.unwrap_or(defaults.replicates),
            seed: self.seed,
            workers: self.workers.unwrap_or_else(default_workers),
            out: self.out,
        };
        cfg.validate()?;
        Ok((cfg, self.figures))
    }
}

/// Parse `argv` (program name first), run, and return the process exit
/// code: 0 on success, 1 on usage or configuration errors, 2 on runtime
/// errors.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if is_config_error(&e) {
                1
            } else {
                2
            }
        }
    }
}

fn is_config_error(e: &Error) -> bool {
    match e {
        Error::Config(_) => true,
        Error::Replicate { source, .. } => is_config_error(source),
        _ => false,
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Simulate(args) => {
            let (cfg, figures) = args.config(Defaults {
                dgp: DgpId::Setting1,
                designs: DesignId::ALL.to_vec(),
                sizes: vec![100, 1000, 10_000],
                replicates: 500,
            })?;
            simulate(&cfg, figures.as_deref())
        }
        Command::Diagnose(args) => {
            let (cfg, _) = args.config(Defaults {
                dgp: DgpId::Setting2,
                designs: vec![DesignId::Packing, DesignId::Kk14],
                sizes: vec![100_000],
                replicates: 1,
            })?;
            diagnose(&cfg)
        }
        Command::Criteo(args) => {
            let default_dgp = if args.data.is_some() {
                DgpId::Criteo
            } else {
                DgpId::Surrogate
            };
            let (cfg, figures) = args.config(Defaults {
                dgp: default_dgp,
                designs: vec![DesignId::Iid, DesignId::Kk14, DesignId::Packing],
                sizes: vec![1000, 10_000, 100_000],
                replicates: 200,
            })?;
            if !matches!(cfg.dgp, DgpId::Criteo | DgpId::Surrogate) {
                return Err(Error::Config(
                    "the criteo command needs --dgp criteo or surrogate".into(),
                ));
            }
            simulate(&cfg, figures.as_deref())
        }
        Command::Selftest => Ok(selftest()),
    }
}

fn simulate(cfg: &ExperimentConfig, figures: Option<&Path>) -> Result<i32> {
    let table = run_experiment(cfg)?;
    match &cfg.out {
        Some(path) => emit_csv(&table, path)?,
        None => write_csv(&table, io::stdout().lock())?,
    }
    let has_iid = cfg.designs.contains(&DesignId::Iid);
    let comparisons = if has_iid && cfg.replicates >= 2 {
        Some(compare_designs(&table, BOOTSTRAP_RESAMPLES, cfg.seed)?)
    } else {
        None
    };
    if let Some(dir) = figures {
        std::fs::create_dir_all(dir)?;
        emit_fig2(&table, &dir.join("fig2.csv"))?;
        if let Some(c) = &comparisons {
            emit_fig3(c, &dir.join("fig3.csv"))?;
        }
    }
    // the summary goes to stderr when the table itself is on stdout
    let mut summary: Box<dyn Write> = if cfg.out.is_some() {
        Box::new(io::stdout().lock())
    } else {
        Box::new(io::stderr().lock())
    };
    if let Some(c) = &comparisons {
        writeln!(
            summary,
            "{:<10} {:>8} {:<9} {:>14} {:>8} {:>8}",
            "dgp", "T", "design", "variance", "ratio", "se"
        )?;
        for row in c {
            writeln!(
                summary,
                "{:<10} {:>8} {:<9} {:>14.6e} {:>8.4} {:>8.4}",
                row.dgp, row.t, row.design, row.variance, row.ratio, row.ratio_se
            )?;
        }
    }
    Ok(0)
}

fn diagnose(cfg: &ExperimentConfig) -> Result<i32> {
    let source = DataSource::prepare(cfg)?;
    for w in source.warnings() {
        eprintln!("warning: {w}");
    }
    let t = cfg.sizes.iter().copied().max().expect("validated");
    let seed = replicate_seed(cfg.seed, source.dgp(), t, 0);
    let experiment = source.generate(&mut RandomSource::new(seed, DATA_STREAM), t)?;
    let mut traces = Vec::new();
    for &design in &cfg.designs {
        let run = run_design(
            design,
            &cfg.params,
            &experiment,
            &mut RandomSource::new(seed, 1 + design as u64),
        )?;
        match run.trace {
            Some(trace) => traces.push((design.label().to_string(), trace)),
            None => eprintln!("note: {design} is offline and has no per-step trace"),
        }
    }
    match &cfg.out {
        Some(path) => emit_fig1(&traces, path)?,
        None => write_fig1(&traces, io::stdout().lock())?,
    }
    Ok(0)
}

type Check = fn() -> std::result::Result<(), String>;

/// Runs a fast subset of the oracle suites; returns the exit code.
fn selftest() -> i32 {
    let checks: [(&str, Check); 4] = [
        ("variance formula vs enumeration", check_variance_formula),
        ("quantile round-trips", check_quantiles),
        ("KK14 cutoff limit", check_kk14_limit),
        ("packing separation", check_packing_separation),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        match check() {
            Ok(()) => println!("PASS  {name}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL  {name}: {msg}");
            }
        }
    }
    if failed == 0 {
        0
    } else {
        2
    }
}

fn check_variance_formula() -> std::result::Result<(), String> {
    use rand::seq::SliceRandom;
    use rand::Rng;
    let mut rng = RandomSource::new(1, 0);
    for _ in 0..200 {
        let t = rng.random_range(1..=12);
        let units: Vec<UnitMoments> = (0..t)
            .map(|_| UnitMoments {
                mu1: rng.random_range(-3.0..3.0),
                mu0: rng.random_range(-3.0..3.0),
                var1: rng.random_range(0.0..2.0),
                var0: rng.random_range(0.0..2.0),
            })
            .collect();
        let mut idx: Vec<usize> = (1..=t).collect();
        idx.shuffle(&mut rng);
        let n_pairs = rng.random_range(0..=t / 2);
        let pairs: Vec<(usize, usize)> = idx.chunks_exact(2).take(n_pairs).map(|c| (c[0], c[1])).collect();
        let a = conditional_variance_moments(&units, &pairs).map_err(|e| e.to_string())?;
        let b = exact_variance_oracle_moments(&units, &pairs).map_err(|e| e.to_string())?;
        if (a - b).abs() >= 1e-12 {
            return Err(format!("formula {a} vs enumeration {b}"));
        }
    }
    Ok(())
}

fn check_quantiles() -> std::result::Result<(), String> {
    for d1 in 1..=10u64 {
        for d2 in [1u64, 3, 10, 100, 10_000] {
            for k in 1..=99 {
                let p = k as f64 / 100.0;
                let q = f_quantile(p, d1, d2).map_err(|e| e.to_string())?;
                let back = f_cdf(q, d1 as f64, d2 as f64);
                if (back - p).abs() >= 1e-9 {
                    return Err(format!("F({d1},{d2}) at p = {p}: cdf(q) = {back}"));
                }
            }
        }
    }
    Ok(())
}

fn check_kk14_limit() -> std::result::Result<(), String> {
    let limit = 2.0 * chisq_quantile(0.1, 3).map_err(|e| e.to_string())?;
    let cutoff = kk14_cutoff(1_000_000, &Kk14Config::new(3)).map_err(|e| e.to_string())?;
    let rel = (cutoff - limit).abs() / limit;
    if rel < 1e-3 {
        Ok(())
    } else {
        Err(format!(
            "cutoff {cutoff} vs limit {limit} (relative error {rel:e})"
        ))
    }
}

fn check_packing_separation() -> std::result::Result<(), String> {
    use rand::Rng;
    let mut rng = RandomSource::new(2, 0);
    for run in 0..50 {
        let d = rng.random_range(1..=3);
        let t = rng.random_range(10..=500);
        let rows: Vec<Vec<f64>> = (0..t)
            .map(|_| (0..d).map(|_| rng.random::<f64>()).collect())
            .collect();
        let cfg = PackingConfig {
            delta: 0.0,
            dimension: d,
            standardize: false,
        };
        let radius = crate::designs::packing_radius(t, &cfg);
        let mut policy = packing_policy(cfg).map_err(|e| e.to_string())?;
        let out = run_stream(&mut policy, &rows, &mut rng).map_err(|e| e.to_string())?;
        let res: Vec<usize> = out.state.reservoir().iter().copied().collect();
        for (k, &i) in res.iter().enumerate() {
            for &j in &res[k + 1..] {
                if euclidean(&rows[i - 1], &rows[j - 1]) < radius {
                    return Err(format!("run {run}: units {i} and {j} closer than {radius}"));
                }
            }
        }
    }
    Ok(())
}
