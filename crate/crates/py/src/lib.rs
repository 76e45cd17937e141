//! Python bindings for the `reservoir` crate.
//!
//! Exposes the variance formulas, the design primitives, a stateful online
//! assigner and the Monte-Carlo harness. Arms cross the boundary as `0`/`1`
//! and unit indices are 1-based, as in the Rust API.

use std::sync::Mutex;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use reservoir::engine::{engine_step, History};
use reservoir::estimators::{
    conditional_variance_moments, empty_reservoir_variance_moments, exact_variance_oracle_moments,
};
use reservoir::harness::{run_experiment, DesignId, DesignParams, DgpId, ExperimentConfig};
use reservoir::{
    iid_policy, kk14_policy, packing_policy, Arm, DesignPolicy, Error, Kk14Config, Matrix, PackingConfig,
    PairingState, RandomSource, UnitMoments,
};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyOSError::new_err(e.to_string()),
        Error::Data(_) | Error::Csv(_) | Error::Replicate { .. } | Error::NotPositiveDefinite => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn arms_from(bits: &[u8]) -> PyResult<Vec<Arm>> {
    bits.iter()
        .map(|&b| match b {
            0 | 1 => Ok(Arm::from_bit(b == 1)),
            _ => Err(PyValueError::new_err(format!("arm must be 0 or 1, got {b}"))),
        })
        .collect()
}

fn moments(mu1: &[f64], mu0: &[f64], var1: &[f64], var0: &[f64]) -> PyResult<Vec<UnitMoments>> {
    let t = mu1.len();
    if mu0.len() != t || var1.len() != t || var0.len() != t {
        return Err(PyValueError::new_err(
            "mu1, mu0, var1 and var0 must have equal lengths",
        ));
    }
    Ok((0..t)
        .map(|i| UnitMoments {
            mu1: mu1[i],
            mu0: mu0[i],
            var1: var1[i],
            var0: var0[i],
        })
        .collect())
}

/// IPW estimate `(2/T) Σ (2Z_t − 1) Y_t` from 0/1 arms and outcomes.
#[pyfunction]
fn ipw_estimate(arms: Vec<u8>, outcomes: Vec<f64>) -> PyResult<f64> {
    reservoir::ipw_estimate(&arms_from(&arms)?, &outcomes).map_err(to_py)
}

/// Closed-form `Var(τ̂ | X)` from per-unit means and variances and the
/// matched pairs (1-based); unmatched units are in the reservoir.
#[pyfunction]
fn conditional_variance(
    mu1: Vec<f64>,
    mu0: Vec<f64>,
    var1: Vec<f64>,
    var0: Vec<f64>,
    matches: Vec<(usize, usize)>,
) -> PyResult<f64> {
    conditional_variance_moments(&moments(&mu1, &mu0, &var1, &var0)?, &matches).map_err(to_py)
}

/// `Var(τ̂ | X)` for a run that ended with an empty reservoir.
#[pyfunction]
fn empty_reservoir_variance(
    mu1: Vec<f64>,
    mu0: Vec<f64>,
    var1: Vec<f64>,
    var0: Vec<f64>,
    matches: Vec<(usize, usize)>,
) -> PyResult<f64> {
    empty_reservoir_variance_moments(&moments(&mu1, &mu0, &var1, &var0)?, &matches).map_err(to_py)
}

/// `Var(τ̂ | X)` by enumerating every admissible treatment vector.
#[pyfunction]
fn exact_variance_oracle(
    mu1: Vec<f64>,
    mu0: Vec<f64>,
    var1: Vec<f64>,
    var0: Vec<f64>,
    matches: Vec<(usize, usize)>,
) -> PyResult<f64> {
    exact_variance_oracle_moments(&moments(&mu1, &mu0, &var1, &var0)?, &matches).map_err(to_py)
}

/// Packing radius `t^{−1/((2+δ)d)}`.
#[pyfunction]
#[pyo3(signature = (t, dimension, delta = 0.0))]
fn packing_radius(t: usize, dimension: usize, delta: f64) -> PyResult<f64> {
    let cfg = PackingConfig {
        delta,
        dimension,
        standardize: true,
    };
    cfg.validate().map_err(to_py)?;
    Ok(reservoir::packing_radius(t, &cfg))
}

/// KK14 squared-Mahalanobis cutoff at arrival `t > dimension`.
#[pyfunction]
#[pyo3(signature = (t, dimension, quantile = 0.1))]
fn kk14_cutoff(t: usize, dimension: usize, quantile: f64) -> PyResult<f64> {
    let cfg = Kk14Config {
        quantile,
        ..Kk14Config::new(dimension)
    };
    cfg.validate().map_err(to_py)?;
    reservoir::designs::kk14_cutoff(t, &cfg).map_err(to_py)
}

/// Offline pairing of consecutive units after sorting by `g`.
#[pyfunction]
fn bai_optimal_matching(g: Vec<f64>) -> PyResult<Vec<(usize, usize)>> {
    let state = reservoir::bai_optimal_matching(&g).map_err(to_py)?;
    Ok(state.matches().to_vec())
}

struct AssignerState {
    policy: Box<dyn DesignPolicy>,
    seen: Matrix,
    state: PairingState,
    arms: Vec<Arm>,
    rng: RandomSource,
}

/// Online reservoir design: feed covariates one unit at a time.
#[pyclass]
struct Assigner {
    inner: Mutex<AssignerState>,
    dimension: usize,
}

impl Assigner {
    fn lock(&self) -> std::sync::MutexGuard<'_, AssignerState> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }
}

#[pymethods]
impl Assigner {
    /// `design` is one of `iid`, `packing` or `kk14`.
    #[new]
    #[pyo3(signature = (design, dimension, seed = 0, delta = 0.0, kk_lambda = 0.1, standardize = true))]
    fn new(
        design: &str,
        dimension: usize,
        seed: u64,
        delta: f64,
        kk_lambda: f64,
        standardize: bool,
    ) -> PyResult<Self> {
        if dimension == 0 {
            return Err(PyValueError::new_err("dimension must be at least 1"));
        }
        let id: DesignId = design.parse().map_err(to_py)?;
        let policy: Box<dyn DesignPolicy> = match id {
            DesignId::Iid => Box::new(iid_policy()),
            DesignId::Packing => Box::new(
                packing_policy(PackingConfig {
                    delta,
                    dimension,
                    standardize,
                })
                .map_err(to_py)?,
            ),
            DesignId::Kk14 => Box::new(
                kk14_policy(Kk14Config {
                    quantile: kk_lambda,
                    ..Kk14Config::new(dimension)
                })
                .map_err(to_py)?,
            ),
            DesignId::OracleG | DesignId::Bai => {
                return Err(PyValueError::new_err(format!(
                    "{design} is not an online covariate design; use bai_optimal_matching"
                )))
            }
        };
        Ok(Assigner {
            inner: Mutex::new(AssignerState {
                policy,
                seen: Matrix::with_cols(dimension),
                state: PairingState::new(),
                arms: Vec::new(),
                rng: RandomSource::new(seed, id.stream()),
            }),
            dimension,
        })
    }

    /// Assign the next unit and return its arm (0 or 1).
    fn assign(&self, x: Vec<f64>) -> PyResult<u8> {
        if x.len() != self.dimension {
            return Err(PyValueError::new_err(format!(
                "expected {} covariates, got {}",
                self.dimension,
                x.len()
            )));
        }
        let mut guard = self.lock();
        let s = &mut *guard;
        s.seen.push_row(&x).map_err(to_py)?;
        let history = History::new(&s.seen);
        let decision = s.policy.decide(&history, &s.state);
        let arm = engine_step(&mut s.state, &mut s.arms, &history, decision, &mut s.rng).map_err(to_py)?;
        Ok(arm.as_u8())
    }

    /// Units assigned so far.
    #[getter]
    fn t(&self) -> usize {
        self.lock().state.t()
    }

    #[getter]
    fn arms(&self) -> Vec<u8> {
        self.lock().arms.iter().map(|a| a.as_u8()).collect()
    }

    /// Indices still waiting for a partner.
    #[getter]
    fn reservoir(&self) -> Vec<usize> {
        self.lock().state.reservoir().iter().copied().collect()
    }

    #[getter]
    fn matches(&self) -> Vec<(usize, usize)> {
        self.lock().state.matches().to_vec()
    }
}

/// Run the Monte-Carlo harness and return one dict per
/// `(design, T, replicate)`.
#[pyfunction]
#[pyo3(signature = (
    dgp = "setting1",
    designs = None,
    sizes = vec![1000],
    replicates = 100,
    seed = 1,
    delta = 0.0,
    kk_lambda = 0.1,
    workers = None,
))]
#[allow(clippy::too_many_arguments)]
fn run_simulation<'py>(
    py: Python<'py>,
    dgp: &str,
    designs: Option<Vec<String>>,
    sizes: Vec<usize>,
    replicates: usize,
    seed: u64,
    delta: f64,
    kk_lambda: f64,
    workers: Option<usize>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let dgp: DgpId = dgp.parse().map_err(to_py)?;
    if dgp == DgpId::Criteo {
        return Err(PyValueError::new_err(
            "the criteo dgp needs a data file; use the CLI",
        ));
    }
    let designs = match designs {
        None => DesignId::ALL.to_vec(),
        Some(names) => names
            .iter()
            .map(|n| n.parse())
            .collect::<Result<_, _>>()
            .map_err(to_py)?,
    };
    let defaults = ExperimentConfig::default();
    let cfg = ExperimentConfig {
        dgp,
        designs,
        params: DesignParams {
            delta,
            kk_lambda,
            burn_in: None,
        },
        sizes,
        replicates,
        seed,
        workers: workers.unwrap_or(defaults.workers),
        ..defaults
    };
    let table = py.detach(|| run_experiment(&cfg)).map_err(to_py)?;
    table
        .rows
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("dgp", &r.dgp)?;
            d.set_item("design", &r.design)?;
            d.set_item("T", r.t)?;
            d.set_item("replicate", r.replicate)?;
            d.set_item("tau_hat", r.tau_hat)?;
            d.set_item("n_reservoir", r.n_reservoir)?;
            d.set_item("mean_pair_distance", r.mean_pair_distance)?;
            d.set_item("seed", r.seed)?;
            d.set_item("data_checksum", r.data_checksum)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn reservoir_design(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(ipw_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(conditional_variance, m)?)?;
    m.add_function(wrap_pyfunction!(empty_reservoir_variance, m)?)?;
    m.add_function(wrap_pyfunction!(exact_variance_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(packing_radius, m)?)?;
    m.add_function(wrap_pyfunction!(kk14_cutoff, m)?)?;
    m.add_function(wrap_pyfunction!(bai_optimal_matching, m)?)?;
    m.add_function(wrap_pyfunction!(run_simulation, m)?)?;
    m.add_class::<Assigner>()?;
    Ok(())
}
