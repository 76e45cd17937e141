//! Seeded Monte-Carlo replication over designs, data-generating processes
//! and sample sizes; CSV output and the command-line front end.

mod cli;
mod table;

pub use cli::cli_main;
pub use table::{
    compare_designs, emit_csv, emit_fig1, emit_fig2, emit_fig3, paired_bootstrap_se, parse_csv, write_csv,
    write_fig1, CellSummary, Comparison, ResultRow, ResultTable, BOOTSTRAP_RESAMPLES,
};

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;

use crate::designs::{
    bai_optimal_assign, iid_policy, kk14_policy, oracle_g_policy, packing_policy, Kk14Config, OracleGConfig,
    PackingConfig,
};
use crate::dgp::{
    criteo_surrogate, fit_semisynthetic, generate, read_criteo, replay_semisynthetic, CriteoRow,
    CriteoSchema, Experiment, SemiSyntheticModel, Setting1, Setting2, SurrogateTruth, FIT_ROWS,
};
use crate::engine::{run_stream, Arm, DesignPolicy, DiagnosticsTrace, PairingState};
use crate::error::{Error, Result};
use crate::estimators::{ipw_estimate, OutcomeModel};
use crate::numerics::{euclidean, Matrix};
use crate::rng::{stable_hash, RandomSource, DATA_STREAM};

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "RESERVOIR_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DgpId {
    Setting1,
    Setting2,
    /// Semi-synthetic replay of a Criteo uplift file.
    Criteo,
    /// The same pipeline on generated data with known logistic truth.
    Surrogate,
}

impl DgpId {
    pub fn label(self) -> &'static str {
        match self {
            DgpId::Setting1 => "setting1",
            DgpId::Setting2 => "setting2",
            DgpId::Criteo => "criteo",
            DgpId::Surrogate => "surrogate",
        }
    }
}

impl fmt::Display for DgpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for DgpId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "setting1" => Ok(DgpId::Setting1),
            "setting2" => Ok(DgpId::Setting2),
            "criteo" => Ok(DgpId::Criteo),
            "surrogate" => Ok(DgpId::Surrogate),
            other => Err(Error::Config(format!(
                "unknown dgp {other:?} (expected setting1, setting2, criteo or surrogate)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DesignId {
    Iid,
    Kk14,
    Packing,
    OracleG,
    Bai,
}

impl DesignId {
    pub const ALL: [DesignId; 5] = [
        DesignId::Iid,
        DesignId::Kk14,
        DesignId::Packing,
        DesignId::OracleG,
        DesignId::Bai,
    ];

    pub fn label(self) -> &'static str {
        match self {
            DesignId::Iid => "iid",
            DesignId::Kk14 => "kk14",
            DesignId::Packing => "packing",
            DesignId::OracleG => "oracle-g",
            DesignId::Bai => "bai",
        }
    }

    /// Stream id of the design's treatment coins; stream 0 carries the data.
    pub fn stream(self) -> u64 {
        1 + self as u64
    }

    /// Parse one id, or `all` for every design.
    pub fn parse_list(s: &str) -> Result<Vec<DesignId>> {
        if s == "all" {
            return Ok(Self::ALL.to_vec());
        }
        Ok(vec![s.parse()?])
    }
}

impl fmt::Display for DesignId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for DesignId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|d| d.label() == s).ok_or_else(|| {
            Error::Config(format!(
                "unknown design {s:?} (expected iid, kk14, packing, oracle-g, bai or all)"
            ))
        })
    }
}

/// Design hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignParams {
    /// Packing exponent δ in `λ_t = t^{−1/((2+δ)d)}`.
    pub delta: f64,
    /// KK14 F-quantile level λ.
    pub kk_lambda: f64,
    /// KK14 burn-in `n₀`; `None` means `d`.
    pub burn_in: Option<usize>,
}

impl Default for DesignParams {
    fn default() -> Self {
        DesignParams {
            delta: 0.0,
            kk_lambda: 0.1,
            burn_in: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dgp: DgpId,
    /// Criteo file, required for [`DgpId::Criteo`].
    pub data: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub designs: Vec<DesignId>,
    pub params: DesignParams,
    pub sizes: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    pub workers: usize,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dgp: DgpId::Setting1,
            data: None,
            schema: None,
            designs: DesignId::ALL.to_vec(),
            params: DesignParams::default(),
            sizes: vec![100, 1000, 10_000],
            replicates: 500,
            seed: 1,
            workers: default_workers(),
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return Err(Error::Config("sample sizes must be positive".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicate count must be at least 1".into()));
        }
        if self.designs.is_empty() {
            return Err(Error::Config("no designs selected".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("worker count must be at least 1".into()));
        }
        if self.dgp == DgpId::Criteo && self.data.is_none() {
            return Err(Error::Config("the criteo dgp needs --data".into()));
        }
        PackingConfig {
            delta: self.params.delta,
            dimension: 1,
            standardize: true,
        }
        .validate()?;
        Kk14Config {
            quantile: self.params.kk_lambda,
            burn_in: self.params.burn_in.unwrap_or(1),
            dimension: 1,
        }
        .validate()?;
        Ok(())
    }
}

/// `RESERVOIR_WORKERS` if set, otherwise the available parallelism.
pub fn default_workers() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&w| w > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Rows kept for replay after the fit sample when reading a Criteo file.
pub const CRITEO_POOL_ROWS: usize = 2_000_000;

/// The surrogate pool holds this many units per unit of the largest `T`.
const SURROGATE_POOL_FACTOR: usize = 10;

/// A ready-to-sample data-generating process shared by all replicates.
#[derive(Clone)]
pub enum DataSource {
    Setting1(Setting1),
    Setting2(Setting2),
    SemiSynthetic {
        dgp: DgpId,
        model: Arc<SemiSyntheticModel>,
        pool: Arc<Vec<CriteoRow>>,
    },
}

impl fmt::Debug for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DataSource({})", self.dgp())
    }
}

impl DataSource {
    /// Build the source for `config`: synthetic settings directly; for the
    /// semi-synthetic pipeline, read or generate rows, fit on the first
    /// 10 000 and keep the rest as the replay pool.
    pub fn prepare(config: &ExperimentConfig) -> Result<Self> {
        match config.dgp {
            DgpId::Setting1 => Ok(DataSource::Setting1(Setting1)),
            DgpId::Setting2 => Ok(DataSource::Setting2(Setting2::new())),
            DgpId::Criteo => {
                let path = config
                    .data
                    .as_ref()
                    .ok_or_else(|| Error::Config("the criteo dgp needs --data".into()))?;
                let schema = match &config.schema {
                    Some(p) => CriteoSchema::from_file(p)?,
                    None => CriteoSchema::default(),
                };
                let (rows, _) = read_criteo(path, &schema, Some(FIT_ROWS + CRITEO_POOL_ROWS))?;
                Self::semi_synthetic(DgpId::Criteo, rows)
            }
            DgpId::Surrogate => {
                let max_t = config.sizes.iter().copied().max().unwrap_or(1);
                let mut rng = RandomSource::new(
                    stable_hash(&[b"surrogate", &config.seed.to_le_bytes()]),
                    DATA_STREAM,
                );
                let rows = criteo_surrogate(
                    &SurrogateTruth::default(),
                    FIT_ROWS + SURROGATE_POOL_FACTOR * max_t,
                    &mut rng,
                );
                Self::semi_synthetic(DgpId::Surrogate, rows)
            }
        }
    }

    fn semi_synthetic(dgp: DgpId, mut rows: Vec<CriteoRow>) -> Result<Self> {
        let model = fit_semisynthetic(&rows)?;
        let pool = rows.split_off(FIT_ROWS);
        if pool.is_empty() {
            return Err(Error::Data("no rows left for replay after the fit sample".into()));
        }
        Ok(DataSource::SemiSynthetic {
            dgp,
            model: Arc::new(model),
            pool: Arc::new(pool),
        })
    }

    pub fn dgp(&self) -> DgpId {
        match self {
            DataSource::Setting1(_) => DgpId::Setting1,
            DataSource::Setting2(_) => DgpId::Setting2,
            DataSource::SemiSynthetic { dgp, .. } => *dgp,
        }
    }

    /// Dimension of the covariates the designs see.
    pub fn dimension(&self) -> usize {
        match self {
            DataSource::Setting1(_) => 2,
            DataSource::Setting2(_) => 3,
            DataSource::SemiSynthetic { model, .. } => model.pca.k(),
        }
    }

    /// The estimand: the population effect for synthetic settings, the
    /// pool-average effect for replay.
    pub fn tau(&self) -> f64 {
        match self {
            DataSource::Setting1(s) => s.tau().expect("closed form"),
            DataSource::Setting2(s) => s.tau().expect("closed form"),
            DataSource::SemiSynthetic { model, pool, .. } => {
                pool.iter()
                    .map(|r| model.p1(&r.features) - model.p0(&r.features))
                    .sum::<f64>()
                    / pool.len() as f64
            }
        }
    }

    pub fn warnings(&self) -> &[String] {
        match self {
            DataSource::SemiSynthetic { model, .. } => &model.warnings,
            _ => &[],
        }
    }

    pub fn generate(&self, rng: &mut RandomSource, t: usize) -> Result<Experiment> {
        match self {
            DataSource::Setting1(s) => generate(s, rng, t),
            DataSource::Setting2(s) => generate(s, rng, t),
            DataSource::SemiSynthetic { model, pool, .. } => replay_semisynthetic(model, pool, t, rng),
        }
    }
}

/// Seed of one replicate: shared by every design so they see the same data.
pub fn replicate_seed(base: u64, dgp: DgpId, t: usize, replicate: usize) -> u64 {
    stable_hash(&[
        &base.to_le_bytes(),
        dgp.label().as_bytes(),
        &(t as u64).to_le_bytes(),
        &(replicate as u64).to_le_bytes(),
    ])
}

/// Result of running one design on one experiment.
#[derive(Debug, Clone)]
pub struct DesignRun {
    pub arms: Vec<Arm>,
    pub state: PairingState,
    /// Per-step trace for the online designs; `None` for the offline design.
    pub trace: Option<DiagnosticsTrace>,
}

impl DesignRun {
    pub fn final_reservoir(&self) -> usize {
        self.state.n_reservoir()
    }

    /// Mean Euclidean distance between matched partners in `covariates`.
    pub fn mean_pair_distance(&self, covariates: &Matrix) -> Option<f64> {
        let m = self.state.matches();
        (!m.is_empty()).then(|| {
            m.iter()
                .map(|&(a, b)| euclidean(covariates.row(a - 1), covariates.row(b - 1)))
                .sum::<f64>()
                / m.len() as f64
        })
    }
}

fn online(policy: &mut dyn DesignPolicy, covariates: &Matrix, rng: &mut RandomSource) -> Result<DesignRun> {
    let out = run_stream(policy, covariates.iter_rows(), rng)?;
    Ok(DesignRun {
        arms: out.arms,
        state: out.state,
        trace: Some(out.trace),
    })
}

/// Assign one experiment's units with `design`, drawing coins from `rng`.
pub fn run_design(
    design: DesignId,
    params: &DesignParams,
    experiment: &Experiment,
    rng: &mut RandomSource,
) -> Result<DesignRun> {
    let x = &experiment.covariates;
    let d = x.cols();
    match design {
        DesignId::Iid => online(&mut iid_policy(), x, rng),
        DesignId::Packing => {
            let mut p = packing_policy(PackingConfig {
                delta: params.delta,
                dimension: d,
                standardize: true,
            })?;
            online(&mut p, x, rng)
        }
        DesignId::Kk14 => {
            let mut p = kk14_policy(Kk14Config {
                quantile: params.kk_lambda,
                burn_in: params.burn_in.unwrap_or(d),
                dimension: d,
            })?;
            online(&mut p, x, rng)
        }
        DesignId::OracleG => {
            // the oracle sees g(X_t) itself, which also covers replay data
            // whose g lives on features the design never observes
            let g = Matrix::from_vec(experiment.len(), 1, experiment.g_values())?;
            let mut p = oracle_g_policy(OracleGConfig {
                g: Arc::new(|v: &[f64]| v[0]),
                delta: params.delta,
            })?;
            online(&mut p, &g, rng)
        }
        DesignId::Bai => {
            let (arms, state) = bai_optimal_assign(&experiment.g_values(), rng)?;
            Ok(DesignRun {
                arms,
                state,
                trace: None,
            })
        }
    }
}

fn replicate_rows(
    config: &ExperimentConfig,
    source: &DataSource,
    designs: &[DesignId],
    t: usize,
    replicate: usize,
) -> Result<Vec<ResultRow>> {
    let seed = replicate_seed(config.seed, source.dgp(), t, replicate);
    let experiment = source.generate(&mut RandomSource::new(seed, DATA_STREAM), t)?;
    let checksum = experiment.checksum();
    designs
        .iter()
        .map(|&design| {
            let run = run_design(
                design,
                &config.params,
                &experiment,
                &mut RandomSource::new(seed, design.stream()),
            )?;
            let outcomes = experiment.outcomes(&run.arms)?;
            Ok(ResultRow {
                dgp: source.dgp().label().to_string(),
                design: design.label().to_string(),
                t,
                replicate,
                tau_hat: ipw_estimate(&run.arms, &outcomes)?,
                n_reservoir: run.final_reservoir(),
                mean_pair_distance: run.mean_pair_distance(&experiment.covariates),
                seed,
                data_checksum: checksum,
            })
        })
        .collect()
}

/// All replicates of one `(dgp, T)` cell for several designs; each
/// replicate's data is generated once and shared by the designs. Rows are
/// ordered by design, then replicate.
pub fn run_cells(
    config: &ExperimentConfig,
    source: &DataSource,
    designs: &[DesignId],
    t: usize,
) -> Result<Vec<ResultRow>> {
    if t == 0 {
        return Err(Error::Config("sample size must be positive".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let per_replicate: Vec<Vec<ResultRow>> = pool.install(|| {
        (0..config.replicates)
            .into_par_iter()
            .map(|r| {
                replicate_rows(config, source, designs, t, r).map_err(|e| Error::Replicate {
                    replicate: r,
                    source: Box::new(e),
                })
            })
            .collect::<Result<_>>()
    })?;
    let mut rows = Vec::with_capacity(designs.len() * config.replicates);
    for k in 0..designs.len() {
        rows.extend(per_replicate.iter().map(|reps| reps[k].clone()));
    }
    Ok(rows)
}

/// All replicates of one `(dgp, design, T)` cell.
pub fn run_cell(
    config: &ExperimentConfig,
    source: &DataSource,
    design: DesignId,
    t: usize,
) -> Result<Vec<ResultRow>> {
    run_cells(config, source, &[design], t)
}

/// The full grid: every sample size, every configured design.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultTable> {
    config.validate()?;
    let source = DataSource::prepare(config)?;
    let mut rows = Vec::new();
    for &t in &config.sizes {
        rows.extend(run_cells(config, &source, &config.designs, t)?);
    }
    Ok(ResultTable { rows })
}
