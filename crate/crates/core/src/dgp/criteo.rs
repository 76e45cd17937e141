use std::fs::File;
use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Experiment;
use crate::error::{Error, Result};
use crate::estimators::{OutcomeModel, UnitMoments};
use crate::numerics::{logistic_fit, pca_fit, pca_project, sigmoid, LogisticModel, Matrix, PcaBasis};
use crate::rng::RandomSource;

pub const CRITEO_FEATURES: usize = 12;

/// Rows taken from the head of the file to fit the outcome models and PCA.
pub const FIT_ROWS: usize = 10_000;

const PCA_COMPONENTS: usize = 3;
const MAX_MALFORMED_FRACTION: f64 = 0.01;
const LOGISTIC_MAX_ITER: usize = 100;
const LOGISTIC_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct CriteoRow {
    pub features: [f64; CRITEO_FEATURES],
    pub treatment: bool,
    pub visit: bool,
}

/// Column mapping for the delimited input file.
#[derive(Debug, Clone, PartialEq)]
pub struct CriteoSchema {
    pub features: Vec<String>,
    pub treatment: String,
    pub visit: String,
    pub delimiter: u8,
}

impl Default for CriteoSchema {
    fn default() -> Self {
        CriteoSchema {
            features: (0..CRITEO_FEATURES).map(|j| format!("f{j}")).collect(),
            treatment: "treatment".into(),
            visit: "visit".into(),
            delimiter: b',',
        }
    }
}

impl CriteoSchema {
    /// Parse `key = value` lines; `#` starts a comment. Keys: `features`
    /// (comma-separated, twelve names), `treatment`, `visit`, `delimiter`
    /// (a single character or `tab`). Unset keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut schema = CriteoSchema::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("schema line {}: expected key = value", n + 1)))?;
            let value = value.trim();
            match key.trim() {
                "features" => {
                    schema.features = value.split(',').map(|s| s.trim().to_string()).collect();
                    if schema.features.len() != CRITEO_FEATURES {
                        return Err(Error::Config(format!(
                            "schema lists {} feature columns, need {CRITEO_FEATURES}",
                            schema.features.len()
                        )));
                    }
                }
                "treatment" => schema.treatment = value.to_string(),
                "visit" => schema.visit = value.to_string(),
                "delimiter" => {
                    schema.delimiter = match value {
                        "tab" | "\\t" => b'\t',
                        v if v.len() == 1 => v.as_bytes()[0],
                        v => return Err(Error::Config(format!("bad delimiter {v:?}"))),
                    }
                }
                other => return Err(Error::Config(format!("unknown schema key {other:?}"))),
            }
        }
        Ok(schema)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut text = String::new();
        File::open(path)?.read_to_string(&mut text)?;
        Self::parse(&text)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadSummary {
    pub rows: usize,
    pub skipped: usize,
}

impl LoadSummary {
    pub fn check(&self) -> Result<()> {
        let total = self.rows + self.skipped;
        if total > 0 && self.skipped as f64 > MAX_MALFORMED_FRACTION * total as f64 {
            return Err(Error::Data(format!(
                "{} of {total} rows malformed (limit 1%)",
                self.skipped
            )));
        }
        Ok(())
    }
}

/// Streaming reader yielding well-formed rows in file order; malformed rows
/// are skipped and counted.
pub struct CriteoReader<R> {
    inner: csv::Reader<R>,
    feature_idx: [usize; CRITEO_FEATURES],
    treatment_idx: usize,
    visit_idx: usize,
    record: csv::StringRecord,
    summary: LoadSummary,
}

pub fn load_criteo(path: &Path, schema: &CriteoSchema) -> Result<CriteoReader<File>> {
    let file = File::open(path).map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    CriteoReader::new(file, schema)
}

/// Read up to `limit` rows and enforce the malformed-row limit.
pub fn read_criteo(
    path: &Path,
    schema: &CriteoSchema,
    limit: Option<usize>,
) -> Result<(Vec<CriteoRow>, LoadSummary)> {
    let mut reader = load_criteo(path, schema)?;
    let mut rows = Vec::new();
    while limit.is_none_or(|l| rows.len() < l) {
        match reader.next_row()? {
            Some(row) => rows.push(row),
            None => break,
        }
    }
    let summary = reader.summary();
    summary.check()?;
    Ok((rows, summary))
}

impl<R: Read> CriteoReader<R> {
    pub fn new(input: R, schema: &CriteoSchema) -> Result<Self> {
        let mut inner = csv::ReaderBuilder::new()
            .delimiter(schema.delimiter)
            .flexible(true)
            .from_reader(input);
        let headers = inner.headers()?.clone();
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Data(format!("missing column {name:?}")))
        };
        if schema.features.len() != CRITEO_FEATURES {
            return Err(Error::Config(format!(
                "schema needs {CRITEO_FEATURES} feature columns"
            )));
        }
        let mut feature_idx = [0; CRITEO_FEATURES];
        for (slot, name) in feature_idx.iter_mut().zip(&schema.features) {
            *slot = find(name)?;
        }
        Ok(CriteoReader {
            feature_idx,
            treatment_idx: find(&schema.treatment)?,
            visit_idx: find(&schema.visit)?,
            inner,
            record: csv::StringRecord::new(),
            summary: LoadSummary::default(),
        })
    }

    pub fn summary(&self) -> LoadSummary {
        self.summary
    }

    pub fn next_row(&mut self) -> Result<Option<CriteoRow>> {
        loop {
            match self.inner.read_record(&mut self.record) {
                Ok(false) => return Ok(None),
                Ok(true) => match self.parse_record() {
                    Some(row) => {
                        self.summary.rows += 1;
                        return Ok(Some(row));
                    }
                    None => self.summary.skipped += 1,
                },
                Err(e) if e.is_io_error() => return Err(e.into()),
                Err(_) => self.summary.skipped += 1,
            }
        }
    }

    fn parse_record(&self) -> Option<CriteoRow> {
        let field = |i: usize| self.record.get(i).map(str::trim);
        let flag = |i: usize| match field(i)?.parse::<f64>().ok()? {
            0.0 => Some(false),
            1.0 => Some(true),
            _ => None,
        };
        let mut features = [0.0; CRITEO_FEATURES];
        for (slot, &i) in features.iter_mut().zip(&self.feature_idx) {
            let v: f64 = field(i)?.parse().ok()?;
            if !v.is_finite() {
                return None;
            }
            *slot = v;
        }
        Some(CriteoRow {
            features,
            treatment: flag(self.treatment_idx)?,
            visit: flag(self.visit_idx)?,
        })
    }
}

impl<R: Read> Iterator for CriteoReader<R> {
    type Item = Result<CriteoRow>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_row().transpose()
    }
}

/// Per-arm logistic models for `P(visit = 1 | X, Z = z)` and a three-component
/// PCA basis, all fit on the same head of the data.
#[derive(Debug, Clone)]
pub struct SemiSyntheticModel {
    pub arm1: LogisticModel,
    pub arm0: LogisticModel,
    pub pca: PcaBasis,
    pub fit_rows: usize,
    pub warnings: Vec<String>,
}

impl SemiSyntheticModel {
    pub fn p1(&self, features: &[f64]) -> f64 {
        sigmoid(self.arm1.linear_predictor(features))
    }

    pub fn p0(&self, features: &[f64]) -> f64 {
        sigmoid(self.arm0.linear_predictor(features))
    }
}

/// Outcomes are Bernoulli, so `σ_z²(x) = p_z(x)(1 − p_z(x))`.
impl OutcomeModel for SemiSyntheticModel {
    fn dimension(&self) -> usize {
        CRITEO_FEATURES
    }

    fn mu1(&self, x: &[f64]) -> f64 {
        self.p1(x)
    }

    fn mu0(&self, x: &[f64]) -> f64 {
        self.p0(x)
    }

    fn var1(&self, x: &[f64]) -> f64 {
        let p = self.p1(x);
        p * (1.0 - p)
    }

    fn var0(&self, x: &[f64]) -> f64 {
        let p = self.p0(x);
        p * (1.0 - p)
    }
}

pub fn fit_semisynthetic(rows: &[CriteoRow]) -> Result<SemiSyntheticModel> {
    if rows.len() < FIT_ROWS {
        return Err(Error::Data(format!(
            "fit sample needs {FIT_ROWS} rows, got {}",
            rows.len()
        )));
    }
    let fit = &rows[..FIT_ROWS];
    let mut warnings = Vec::new();
    let mut fit_arm = |treated: bool| -> Result<LogisticModel> {
        let arm: Vec<&CriteoRow> = fit.iter().filter(|r| r.treatment == treated).collect();
        let label = u8::from(treated);
        if arm.is_empty() {
            return Err(Error::Data(format!(
                "no rows with treatment = {label} in the fit sample"
            )));
        }
        let features = Matrix::from_rows(&arm.iter().map(|r| r.features).collect::<Vec<_>>())?;
        let labels: Vec<bool> = arm.iter().map(|r| r.visit).collect();
        if labels.iter().all(|&v| v == labels[0]) {
            warnings.push(format!(
                "arm {label}: visit is constant ({}) in the fit sample",
                u8::from(labels[0])
            ));
        }
        let model = logistic_fit(&features, &labels, LOGISTIC_MAX_ITER, LOGISTIC_TOL)?;
        if !model.converged {
            warnings.push(format!(
                "arm {label}: logistic fit did not converge (gradient norm {:.3e}); likely separation",
                model.gradient_norm
            ));
        }
        Ok(model)
    };
    let arm1 = fit_arm(true)?;
    let arm0 = fit_arm(false)?;
    let all = Matrix::from_rows(&fit.iter().map(|r| r.features).collect::<Vec<_>>())?;
    let pca = pca_fit(&all, PCA_COMPONENTS)?;
    Ok(SemiSyntheticModel {
        arm1,
        arm0,
        pca,
        fit_rows: FIT_ROWS,
        warnings,
    })
}

/// Draw `t` rows from `pool` without replacement and turn them into an
/// experiment: the design sees the PCA projections, and each potential
/// outcome is a Bernoulli draw from the arm's fitted probability on the raw
/// features.
pub fn replay_semisynthetic(
    model: &SemiSyntheticModel,
    pool: &[CriteoRow],
    t: usize,
    rng: &mut RandomSource,
) -> Result<Experiment> {
    if t == 0 || t > pool.len() {
        return Err(Error::input(format!(
            "cannot draw {t} units from a pool of {}",
            pool.len()
        )));
    }
    if model.pca.dim() != CRITEO_FEATURES {
        return Err(Error::Dimension {
            expected: CRITEO_FEATURES,
            got: model.pca.dim(),
        });
    }
    // partial Fisher–Yates over an index permutation
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    for i in 0..t {
        let j = rng.rng().random_range(i..pool.len());
        idx.swap(i, j);
    }
    let mut covariates = Matrix::zeros(t, model.pca.k());
    let mut y1 = Vec::with_capacity(t);
    let mut y0 = Vec::with_capacity(t);
    let mut moments = Vec::with_capacity(t);
    for (i, &k) in idx[..t].iter().enumerate() {
        let x = &pool[k].features;
        covariates
            .row_mut(i)
            .copy_from_slice(&pca_project(&model.pca, x)?);
        let m: UnitMoments = model.moments(x);
        y1.push(f64::from(u8::from(rng.rng().random::<f64>() < m.mu1)));
        y0.push(f64::from(u8::from(rng.rng().random::<f64>() < m.mu0)));
        moments.push(m);
    }
    Ok(Experiment {
        covariates,
        y1,
        y0,
        moments,
    })
}

/// Ground truth of the synthetic stand-in for the Criteo data.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateTruth {
    /// `12 × 3` loadings of the features on the latent factors.
    pub loadings: Matrix,
    pub noise_sd: f64,
    /// Intercept first, then one coefficient per feature.
    pub arm1: Vec<f64>,
    pub arm0: Vec<f64>,
    pub treated_share: f64,
}

impl Default for SurrogateTruth {
    fn default() -> Self {
        let k = PCA_COMPONENTS;
        let mut loadings = Matrix::zeros(CRITEO_FEATURES, k);
        for j in 0..CRITEO_FEATURES {
            for c in 0..k {
                loadings[(j, c)] =
                    (1.3 * ((j + 1) * (c + 1)) as f64).sin() + if j % k == c { 0.8 } else { 0.0 };
            }
        }
        let noise_sd = 0.3;
        let coefficients = |intercept: f64, w: [f64; 3]| -> Vec<f64> {
            let beta = loadings.matvec(&w).expect("3 factors");
            // scale so the linear predictor has standard deviation 2
            let signal = loadings.transpose().matvec(&beta).expect("12 features");
            let var = signal.iter().map(|v| v * v).sum::<f64>()
                + noise_sd * noise_sd * beta.iter().map(|v| v * v).sum::<f64>();
            let scale = 2.0 / var.sqrt();
            std::iter::once(intercept)
                .chain(beta.iter().map(|b| b * scale))
                .collect()
        };
        let arm1 = coefficients(2.5, [1.0, -0.5, 0.3]);
        let arm0 = coefficients(2.0, [0.8, -0.2, 0.6]);
        SurrogateTruth {
            loadings,
            noise_sd,
            arm1,
            arm0,
            treated_share: 0.5,
        }
    }
}

/// `n` rows whose features load on three Gaussian factors plus noise and
/// whose visit flag follows a known logistic model in each arm.
pub fn criteo_surrogate(truth: &SurrogateTruth, n: usize, rng: &mut RandomSource) -> Vec<CriteoRow> {
    let predictor =
        |beta: &[f64], x: &[f64]| beta[0] + beta[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>();
    (0..n)
        .map(|_| {
            let z: [f64; PCA_COMPONENTS] = std::array::from_fn(|_| StandardNormal.sample(rng.rng()));
            let mut features = [0.0; CRITEO_FEATURES];
            for (j, f) in features.iter_mut().enumerate() {
                let e: f64 = StandardNormal.sample(rng.rng());
                *f = (0..PCA_COMPONENTS)
                    .map(|c| truth.loadings[(j, c)] * z[c])
                    .sum::<f64>()
                    + truth.noise_sd * e;
            }
            let treatment = rng.rng().random::<f64>() < truth.treated_share;
            let beta = if treatment { &truth.arm1 } else { &truth.arm0 };
            let visit = rng.rng().random::<f64>() < sigmoid(predictor(beta, &features));
            CriteoRow {
                features,
                treatment,
                visit,
            }
        })
        .collect()
}
