//! Data-generating processes: two synthetic settings and a semi-synthetic
//! replay of the Criteo uplift data (or a surrogate with known truth).

mod criteo;
mod synthetic;

pub use criteo::{
    criteo_surrogate, fit_semisynthetic, load_criteo, read_criteo, replay_semisynthetic, CriteoReader,
    CriteoRow, CriteoSchema, LoadSummary, SemiSyntheticModel, SurrogateTruth, CRITEO_FEATURES, FIT_ROWS,
};
pub use synthetic::{sample_setting1, sample_setting2, Setting1, Setting2, SETTING_NOISE_VAR};

use rand_distr::{Distribution, StandardNormal};

use crate::engine::Arm;
use crate::error::{Error, Result};
use crate::estimators::{OutcomeModel, UnitMoments};
use crate::numerics::Matrix;
use crate::rng::{stable_hash, RandomSource};

/// A population covariate distribution.
pub trait CovariateSampler: Send + Sync {
    fn dimension(&self) -> usize;
    fn sample_into(&self, rng: &mut RandomSource, out: &mut [f64]);
}

/// One replicate's data: the covariates the design sees and both potential
/// outcomes of every unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub covariates: Matrix,
    pub y1: Vec<f64>,
    pub y0: Vec<f64>,
    /// Conditional outcome moments per unit, for variance oracles and the
    /// oracle-g design.
    pub moments: Vec<UnitMoments>,
}

impl Experiment {
    pub fn len(&self) -> usize {
        self.y1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y1.is_empty()
    }

    /// Observed outcomes under an assignment.
    pub fn outcomes(&self, arms: &[Arm]) -> Result<Vec<f64>> {
        if arms.len() != self.len() {
            return Err(Error::Dimension {
                expected: self.len(),
                got: arms.len(),
            });
        }
        Ok(arms
            .iter()
            .enumerate()
            .map(|(i, arm)| match arm {
                Arm::Treatment => self.y1[i],
                Arm::Control => self.y0[i],
            })
            .collect())
    }

    pub fn g_values(&self) -> Vec<f64> {
        self.moments.iter().map(UnitMoments::g).collect()
    }

    /// Hash of covariates and potential outcomes, to confirm that designs
    /// compared within a replicate saw the same data.
    pub fn checksum(&self) -> u64 {
        let bytes = |v: &[f64]| v.iter().flat_map(|x| x.to_le_bytes()).collect::<Vec<u8>>();
        stable_hash(&[
            &bytes(self.covariates.as_slice()),
            &bytes(&self.y1),
            &bytes(&self.y0),
        ])
    }
}

/// Draw `t` units: covariates from `sampler`, then Gaussian potential
/// outcomes around the model's conditional means.
pub fn generate<S>(setting: &S, rng: &mut RandomSource, t: usize) -> Result<Experiment>
where
    S: CovariateSampler + OutcomeModel,
{
    if t == 0 {
        return Err(Error::input("sample size must be at least 1"));
    }
    let d = CovariateSampler::dimension(setting);
    let mut covariates = Matrix::zeros(t, d);
    let mut y1 = Vec::with_capacity(t);
    let mut y0 = Vec::with_capacity(t);
    let mut moments = Vec::with_capacity(t);
    for i in 0..t {
        let x = covariates.row_mut(i);
        setting.sample_into(rng, x);
        let m = setting.moments(x);
        let e1: f64 = StandardNormal.sample(rng.rng());
        let e0: f64 = StandardNormal.sample(rng.rng());
        y1.push(m.mu1 + m.var1.sqrt() * e1);
        y0.push(m.mu0 + m.var0.sqrt() * e0);
        moments.push(m);
    }
    Ok(Experiment {
        covariates,
        y1,
        y0,
        moments,
    })
}
