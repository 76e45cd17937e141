use crate::engine::{Decision, DesignPolicy, History, PairingState};
use crate::error::{Error, Result};
use crate::numerics::{f_quantile_from, mahalanobis_sq, CholeskyFactor, CovarianceAccumulator};

#[derive(Debug, Clone, PartialEq)]
pub struct Kk14Config {
    /// F-quantile level λ of the cutoff.
    pub quantile: f64,
    /// Units `1..=burn_in` all go to the reservoir.
    pub burn_in: usize,
    pub dimension: usize,
}

impl Kk14Config {
    /// λ = 0.1 and a burn-in equal to the dimension.
    pub fn new(dimension: usize) -> Self {
        Self {
            quantile: 0.1,
            burn_in: dimension,
            dimension,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.quantile > 0.0 && self.quantile < 1.0) {
            return Err(Error::Config(format!(
                "KK14 quantile must be in (0, 1), got {}",
                self.quantile
            )));
        }
        if self.dimension == 0 {
            return Err(Error::Config("dimension must be ≥ 1".into()));
        }
        if self.burn_in < self.dimension {
            return Err(Error::Config(format!(
                "burn-in {} must be at least the dimension {}",
                self.burn_in, self.dimension
            )));
        }
        Ok(())
    }
}

/// Squared-Mahalanobis cutoff at arrival `t > d`:
/// `2d(t−1)/(t−d) · F⁻¹(λ; d, t−d)`.
pub fn kk14_cutoff(t: usize, cfg: &Kk14Config) -> Result<f64> {
    Kk14Cutoff::default().at(t, cfg)
}

#[derive(Debug, Clone, Default)]
struct Kk14Cutoff {
    last: Option<f64>,
}

impl Kk14Cutoff {
    fn at(&mut self, t: usize, cfg: &Kk14Config) -> Result<f64> {
        let d = cfg.dimension;
        if t <= d {
            return Err(Error::input(format!(
                "KK14 cutoff undefined for t = {t} ≤ d = {d}"
            )));
        }
        // consecutive quantiles barely move, so warm-start Newton from the last one
        let guess = self.last.unwrap_or(1.0);
        let q = f_quantile_from(cfg.quantile, d as u64, (t - d) as u64, guess)?;
        self.last = Some(q);
        let (t, d) = (t as f64, d as f64);
        Ok(2.0 * d * (t - 1.0) / (t - d) * q)
    }
}

pub fn kk14_policy(cfg: Kk14Config) -> Result<Kk14Policy> {
    cfg.validate()?;
    Ok(Kk14Policy {
        cov: CovarianceAccumulator::new(cfg.dimension),
        cutoff: Kk14Cutoff::default(),
        cfg,
        last_distance: None,
    })
}

/// Pair with the Mahalanobis-nearest reservoir unit when its squared
/// distance, under the sample covariance of units `1..t−1`, falls below the
/// F-quantile cutoff. If that covariance is singular the unit joins the
/// reservoir.
#[derive(Debug, Clone)]
pub struct Kk14Policy {
    cfg: Kk14Config,
    cov: CovarianceAccumulator,
    cutoff: Kk14Cutoff,
    last_distance: Option<f64>,
}

impl Kk14Policy {
    fn try_pair(&mut self, history: &History<'_>, state: &PairingState) -> Option<usize> {
        let t = history.len();
        if t <= self.cfg.burn_in || state.n_reservoir() == 0 {
            return None;
        }
        let sigma = self.cov.sample_covariance()?;
        let factor = CholeskyFactor::new(&sigma).ok()?;
        let x = history.latest();
        let mut best: Option<(usize, f64)> = None;
        for &s in state.reservoir() {
            let d2 = mahalanobis_sq(x, history.unit(s), &factor).ok()?;
            if best.is_none_or(|(_, bd)| d2 < bd) {
                best = Some((s, d2));
            }
        }
        let (s, d2) = best?;
        let cutoff = self.cutoff.at(t, &self.cfg).ok()?;
        if d2 < cutoff {
            self.last_distance = Some(d2.sqrt());
            Some(s)
        } else {
            None
        }
    }
}

impl DesignPolicy for Kk14Policy {
    fn name(&self) -> String {
        "kk14".into()
    }

    fn dimension(&self) -> Option<usize> {
        Some(self.cfg.dimension)
    }

    fn decide(&mut self, history: &History<'_>, state: &PairingState) -> Decision {
        self.last_distance = None;
        let decision = match self.try_pair(history, state) {
            Some(s) => Decision::PairWith(s),
            None => Decision::NewIndependent,
        };
        // the covariance used at step t+1 covers units 1..=t
        self.cov.push(history.latest());
        decision
    }

    fn last_pair_distance(&self) -> Option<f64> {
        self.last_distance
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::run_stream;
    use crate::numerics::chisq_quantile;
    use crate::rng::RandomSource;
    use rand::Rng;

    #[test]
    fn burn_in_units_enter_reservoir() {
        let rows = vec![vec![0.0, 0.0]; 2];
        let mut p = kk14_policy(Kk14Config::new(2)).unwrap();
        let out = run_stream(&mut p, &rows, &mut RandomSource::new(0, 1)).unwrap();
        assert_eq!(out.decisions, vec![Decision::NewIndependent; 2]);
    }

    #[test]
    fn duplicate_of_reservoir_point_pairs() {
        let mut rng = RandomSource::new(8, 0);
        let mut rows: Vec<Vec<f64>> = (0..6)
            .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        // very spread so nothing pairs before the duplicate arrives
        for (i, r) in rows.iter_mut().enumerate() {
            r[0] += 100.0 * i as f64;
            r[1] -= 37.0 * (i * i) as f64;
        }
        let dup = rows[4].clone();
        rows.push(dup);
        let mut p = kk14_policy(Kk14Config::new(2)).unwrap();
        let out = run_stream(&mut p, &rows, &mut RandomSource::new(0, 1)).unwrap();
        assert_eq!(out.decisions[4], Decision::NewIndependent);
        assert_ne!(out.decisions[5], Decision::PairWith(5));
        assert_eq!(out.decisions[6], Decision::PairWith(5));
    }

    #[test]
    fn singular_covariance_falls_back_to_reservoir() {
        // all rows on a line: covariance is rank one forever
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let mut p = kk14_policy(Kk14Config::new(2)).unwrap();
        let out = run_stream(&mut p, &rows, &mut RandomSource::new(0, 1)).unwrap();
        assert!(out.decisions.iter().all(|d| *d == Decision::NewIndependent));
    }

    #[test]
    fn config_validation() {
        assert!(kk14_policy(Kk14Config {
            quantile: 1.0,
            ..Kk14Config::new(2)
        })
        .is_err());
        assert!(kk14_policy(Kk14Config {
            burn_in: 1,
            ..Kk14Config::new(2)
        })
        .is_err());
    }

    #[test]
    fn cutoff_tends_to_twice_chisq_quantile() {
        let cfg = Kk14Config::new(3);
        let limit = 2.0 * chisq_quantile(0.1, 3).unwrap();
        // 0.1-quantile of χ²₃ is 0.584374 (scipy.stats.chi2.ppf)
        assert!((limit - 1.168_749).abs() < 1e-5);
        let mut prev_err = f64::INFINITY;
        for &t in &[10usize, 100, 1000, 10_000, 100_000, 1_000_000] {
            let err = (kk14_cutoff(t, &cfg).unwrap() - limit).abs() / limit;
            assert!(err < prev_err);
            prev_err = err;
        }
        assert!(prev_err < 1e-3);
    }

    #[test]
    fn cutoff_undefined_before_dimension() {
        assert!(kk14_cutoff(3, &Kk14Config::new(3)).is_err());
    }
}
