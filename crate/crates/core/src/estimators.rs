//! The IPW effect estimator and exact variance formulas for reservoir
//! designs, conditional on the covariates.

use crate::engine::Arm;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Conditional outcome moments of the two potential outcomes.
pub trait OutcomeModel: Send + Sync {
    fn dimension(&self) -> usize;
    fn mu1(&self, x: &[f64]) -> f64;
    fn mu0(&self, x: &[f64]) -> f64;
    fn var1(&self, x: &[f64]) -> f64;
    fn var0(&self, x: &[f64]) -> f64;

    /// Population average treatment effect `E[Y(1) − Y(0)]`, when known.
    fn tau(&self) -> Option<f64> {
        None
    }

    fn g(&self, x: &[f64]) -> f64 {
        self.mu1(x) + self.mu0(x)
    }

    fn moments(&self, x: &[f64]) -> UnitMoments {
        UnitMoments {
            mu1: self.mu1(x),
            mu0: self.mu0(x),
            var1: self.var1(x),
            var0: self.var0(x),
        }
    }
}

/// `μ₁, μ₀, σ₁², σ₀²` evaluated at one unit's covariates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitMoments {
    pub mu1: f64,
    pub mu0: f64,
    pub var1: f64,
    pub var0: f64,
}

impl UnitMoments {
    pub fn g(&self) -> f64 {
        self.mu1 + self.mu0
    }

    fn arm(&self, arm: Arm) -> (f64, f64) {
        match arm {
            Arm::Treatment => (self.mu1, self.var1),
            Arm::Control => (self.mu0, self.var0),
        }
    }
}

pub fn unit_moments(model: &dyn OutcomeModel, covariates: &Matrix) -> Result<Vec<UnitMoments>> {
    if covariates.cols() != model.dimension() {
        return Err(Error::Dimension {
            expected: model.dimension(),
            got: covariates.cols(),
        });
    }
    Ok(covariates.iter_rows().map(|x| model.moments(x)).collect())
}

/// `τ̂ = (2/T) Σ (2Z_t − 1) Y_t`.
pub fn ipw_estimate(arms: &[Arm], outcomes: &[f64]) -> Result<f64> {
    if arms.is_empty() {
        return Err(Error::input("IPW estimate of an empty sample"));
    }
    if arms.len() != outcomes.len() {
        return Err(Error::Dimension {
            expected: arms.len(),
            got: outcomes.len(),
        });
    }
    let sum: f64 = arms.iter().zip(outcomes).map(|(z, y)| z.sign() * y).sum();
    Ok(2.0 * sum / arms.len() as f64)
}

/// Checks that `matches` is a partial pairing of `1..=t` and returns which
/// units are paired.
fn paired_mask(t: usize, matches: &[(usize, usize)]) -> Result<Vec<bool>> {
    let mut paired = vec![false; t];
    for &(a, b) in matches {
        for i in [a, b] {
            if i == 0 || i > t {
                return Err(Error::contract(format!("pair member {i} outside 1..={t}")));
            }
            if paired[i - 1] {
                return Err(Error::contract(format!("unit {i} appears in more than one pair")));
            }
            paired[i - 1] = true;
        }
        if a == b {
            return Err(Error::contract(format!("unit {a} paired with itself")));
        }
    }
    Ok(paired)
}

/// `Var(τ̂ | X)` for any reservoir design with final pairs `matches`:
///
/// `(1/T²) Σ_i (2σ₁²(X_i) + 2σ₀²(X_i) + g(X_i)²) − (2/T²) Σ_{(i,j)∈M} g(X_i) g(X_j)`.
pub fn conditional_variance_moments(moments: &[UnitMoments], matches: &[(usize, usize)]) -> Result<f64> {
    let t = moments.len();
    if t == 0 {
        return Err(Error::input("no units"));
    }
    paired_mask(t, matches)?;
    let t2 = (t * t) as f64;
    let unit_terms: f64 = moments
        .iter()
        .map(|m| 2.0 * m.var1 + 2.0 * m.var0 + m.g() * m.g())
        .sum();
    let pair_terms: f64 = matches
        .iter()
        .map(|&(a, b)| moments[a - 1].g() * moments[b - 1].g())
        .sum();
    Ok(unit_terms / t2 - 2.0 * pair_terms / t2)
}

pub fn conditional_variance(
    model: &dyn OutcomeModel,
    covariates: &Matrix,
    matches: &[(usize, usize)],
) -> Result<f64> {
    conditional_variance_moments(&unit_moments(model, covariates)?, matches)
}

/// `Var(τ̂ | X)` when every unit is paired:
/// `(1/T²) Σ_{(i,j)∈M} [2σ₁²(X_i) + 2σ₀²(X_i) + 2σ₁²(X_j) + 2σ₀²(X_j) + (g(X_i) − g(X_j))²]`.
/// Invariant to adding a constant to `g`.
pub fn empty_reservoir_variance_moments(moments: &[UnitMoments], matches: &[(usize, usize)]) -> Result<f64> {
    let t = moments.len();
    if t == 0 {
        return Err(Error::input("no units"));
    }
    let paired = paired_mask(t, matches)?;
    if let Some(i) = paired.iter().position(|p| !p) {
        return Err(Error::contract(format!("unit {} is not paired", i + 1)));
    }
    let sum: f64 = matches
        .iter()
        .map(|&(a, b)| {
            let (i, j) = (&moments[a - 1], &moments[b - 1]);
            let dg = i.g() - j.g();
            2.0 * (i.var1 + i.var0 + j.var1 + j.var0) + dg * dg
        })
        .sum();
    Ok(sum / (t * t) as f64)
}

pub fn empty_reservoir_variance(
    model: &dyn OutcomeModel,
    covariates: &Matrix,
    matches: &[(usize, usize)],
) -> Result<f64> {
    empty_reservoir_variance_moments(&unit_moments(model, covariates)?, matches)
}

/// Maximum number of independent coin blocks the oracle will enumerate.
pub const ORACLE_MAX_BLOCKS: usize = 20;

/// `Var(τ̂ | X)` by brute force over every admissible treatment vector:
/// each reservoir unit is a free coin, each pair a coin for its first member
/// with the partner opposite. Given `Z`, outcomes are independent with the
/// arm's conditional mean and variance, so by total variance
/// `Var(τ̂|X) = E_Z[Var(τ̂|X,Z)] + Var_Z(E[τ̂|X,Z])`.
pub fn exact_variance_oracle_moments(moments: &[UnitMoments], matches: &[(usize, usize)]) -> Result<f64> {
    let t = moments.len();
    if t == 0 {
        return Err(Error::input("no units"));
    }
    let paired = paired_mask(t, matches)?;
    // a block is either one reservoir unit or one pair
    let mut blocks: Vec<(usize, Option<usize>)> =
        (1..=t).filter(|&i| !paired[i - 1]).map(|i| (i, None)).collect();
    blocks.extend(matches.iter().map(|&(a, b)| (a, Some(b))));
    if blocks.len() > ORACLE_MAX_BLOCKS {
        return Err(Error::Budget(blocks.len()));
    }
    let n_vectors = 1u64 << blocks.len();
    let tf = t as f64;
    let conditional = |mask: u64| -> (f64, f64) {
        let mut mean = 0.0;
        let mut var = 0.0;
        for (k, &(a, b)) in blocks.iter().enumerate() {
            let za = Arm::from_bit(mask >> k & 1 == 1);
            let (mu, v) = moments[a - 1].arm(za);
            mean += za.sign() * mu;
            var += v;
            if let Some(b) = b {
                let zb = za.opposite();
                let (mu, v) = moments[b - 1].arm(zb);
                mean += zb.sign() * mu;
                var += v;
            }
        }
        (2.0 * mean / tf, 4.0 * var / (tf * tf))
    };
    let weight = 1.0 / n_vectors as f64;
    let mut grand_mean = 0.0;
    let mut within = 0.0;
    for mask in 0..n_vectors {
        let (m, v) = conditional(mask);
        grand_mean += weight * m;
        within += weight * v;
    }
    let between: f64 = (0..n_vectors)
        .map(|mask| {
            let d = conditional(mask).0 - grand_mean;
            weight * d * d
        })
        .sum();
    Ok(within + between)
}

pub fn exact_variance_oracle(
    model: &dyn OutcomeModel,
    covariates: &Matrix,
    matches: &[(usize, usize)],
) -> Result<f64> {
    exact_variance_oracle_moments(&unit_moments(model, covariates)?, matches)
}

/// A Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub draws: usize,
}

/// Monte-Carlo estimate of `σ²_red = σ₁² + σ₀² − Var(g(X))/2`, where
/// `σ_z² = Var(Y(z)) = E[σ_z²(X)] + Var(μ_z(X))`.
///
/// This is the limiting variance per matched pair. With `T` units and
/// asymptotically perfect pairing, `T · Var(τ̂)` tends to `2σ²_red`.
///
/// `draw` fills a covariate vector from the population distribution.
pub fn sigma_red_sq<F>(model: &dyn OutcomeModel, mut draw: F, n_mc: usize) -> Result<McEstimate>
where
    F: FnMut(&mut [f64]),
{
    if n_mc < 10_000 {
        return Err(Error::input(format!(
            "sigma_red_sq needs at least 10^4 draws, got {n_mc}"
        )));
    }
    let mut x = vec![0.0; model.dimension()];
    let n = n_mc as f64;
    // Welford accumulators for μ₁, μ₀, g and τ(x) = μ₁ − μ₀
    let mut mean = [0.0f64; 4];
    let mut m2 = [0.0f64; 4];
    let mut noise = 0.0;
    let mut taus = Vec::with_capacity(n_mc);
    let mut noises = Vec::with_capacity(n_mc);
    for k in 1..=n_mc {
        draw(&mut x);
        let m = model.moments(&x);
        let vals = [m.mu1, m.mu0, m.g(), m.mu1 - m.mu0];
        for j in 0..4 {
            let delta = vals[j] - mean[j];
            mean[j] += delta / k as f64;
            m2[j] += delta * (vals[j] - mean[j]);
        }
        noise += m.var1 + m.var0;
        taus.push(vals[3]);
        noises.push(m.var1 + m.var0);
    }
    let var = |j: usize| m2[j] / (n - 1.0);
    let mean_noise = noise / n;
    let value = mean_noise + var(0) + var(1) - 0.5 * var(2);
    // σ²_red = E[σ₁²(X) + σ₀²(X)] + Var(τ(X))/2, so its influence values are
    // σ₁²(x) + σ₀²(x) + (τ(x) − τ̄)²/2
    let h: Vec<f64> = taus
        .iter()
        .zip(&noises)
        .map(|(tau, nz)| nz + 0.5 * (tau - mean[3]).powi(2))
        .collect();
    let h_mean = h.iter().sum::<f64>() / n;
    let h_var = h.iter().map(|v| (v - h_mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(McEstimate {
        value,
        std_error: (h_var / n).sqrt(),
        draws: n_mc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(mu1: f64, mu0: f64, var1: f64, var0: f64) -> UnitMoments {
        UnitMoments { mu1, mu0, var1, var0 }
    }

    #[test]
    fn ipw_examples() {
        use Arm::*;
        assert_eq!(ipw_estimate(&[Treatment, Control], &[3.0, 1.0]).unwrap(), 2.0);
        assert_eq!(
            ipw_estimate(&[Treatment, Control, Control], &[0.0; 3]).unwrap(),
            0.0
        );
        assert_eq!(
            ipw_estimate(&[Treatment, Treatment, Control, Control], &[2.0, 4.0, 1.0, 3.0]).unwrap(),
            1.0
        );
        assert!(ipw_estimate(&[], &[]).is_err());
        assert!(ipw_estimate(&[Treatment], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn no_pairs_constant_g() {
        let c = 3.0;
        let t = 7;
        let units = vec![m(c, 0.0, 0.0, 0.0); t];
        let v = conditional_variance_moments(&units, &[]).unwrap();
        assert!((v - c * c / t as f64).abs() < 1e-15);
    }

    #[test]
    fn identical_g_pairs_have_zero_variance() {
        let units = vec![
            m(1.0, 2.0, 0.0, 0.0),
            m(2.0, 1.0, 0.0, 0.0),
            m(0.5, 0.5, 0.0, 0.0),
            m(1.0, 0.0, 0.0, 0.0),
        ];
        let pairs = [(1, 2), (3, 4)];
        assert!(conditional_variance_moments(&units, &pairs).unwrap().abs() < 1e-15);
        assert!(empty_reservoir_variance_moments(&units, &pairs).unwrap().abs() < 1e-15);
    }

    #[test]
    fn empty_reservoir_one_pair_example() {
        let units = [m(1.0, 0.0, 0.0, 0.0), m(3.0, 0.0, 0.0, 0.0)];
        assert!((empty_reservoir_variance_moments(&units, &[(1, 2)]).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn single_unit_oracle() {
        let v = exact_variance_oracle_moments(&[m(1.0, 1.0, 0.0, 0.0)], &[]).unwrap();
        assert!((v - 4.0).abs() < 1e-15);
    }

    #[test]
    fn contract_violations() {
        let units = vec![m(1.0, 0.0, 0.0, 0.0); 4];
        assert!(matches!(
            conditional_variance_moments(&units, &[(1, 2), (2, 3)]),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            conditional_variance_moments(&units, &[(1, 5)]),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            empty_reservoir_variance_moments(&units, &[(1, 2)]),
            Err(Error::Contract(_))
        ));
        let many = vec![m(1.0, 0.0, 0.0, 0.0); 21];
        assert!(matches!(
            exact_variance_oracle_moments(&many, &[]),
            Err(Error::Budget(21))
        ));
    }

    #[test]
    fn symmetric_pair_matches_empty_reservoir_formula() {
        let units = [m(0.7, 0.7, 0.2, 0.2), m(-1.3, -1.3, 0.1, 0.1)];
        let a = exact_variance_oracle_moments(&units, &[(1, 2)]).unwrap();
        let b = empty_reservoir_variance_moments(&units, &[(1, 2)]).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    fn instance() -> impl Strategy<Value = (Vec<UnitMoments>, Vec<(usize, usize)>)> {
        (1usize..=10).prop_flat_map(|t| {
            (
                prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, 0.0f64..2.0, 0.0f64..2.0), t),
                any::<u64>().prop_map(move |seed| {
                    use rand::seq::SliceRandom;
                    use rand::Rng;
                    let mut rng = crate::rng::RandomSource::new(seed, 0);
                    let mut idx: Vec<usize> = (1..=t).collect();
                    idx.shuffle(&mut rng);
                    let n_pairs = rng.random_range(0..=t / 2);
                    idx.chunks_exact(2)
                        .take(n_pairs)
                        .map(|c| (c[0], c[1]))
                        .collect::<Vec<_>>()
                }),
            )
                .prop_map(|(raw, pairs)| (raw.into_iter().map(|(a, b, c, d)| m(a, b, c, d)).collect(), pairs))
        })
    }

    proptest! {
        #[test]
        fn formula_matches_enumeration((units, pairs) in instance()) {
            let formula = conditional_variance_moments(&units, &pairs).unwrap();
            let oracle = exact_variance_oracle_moments(&units, &pairs).unwrap();
            prop_assert!((formula - oracle).abs() < 1e-12, "{} vs {}", formula, oracle);
        }

        #[test]
        fn shift_invariance_when_fully_paired(
            raw in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, 0.0f64..1.0), 2..6),
            c in -10.0f64..10.0,
        ) {
            let units: Vec<_> = raw.iter().flat_map(|&(a, b, v)| [m(a, 0.0, v, v), m(b, 0.0, v, v)]).collect();
            let pairs: Vec<_> = (0..raw.len()).map(|k| (2 * k + 1, 2 * k + 2)).collect();
            let shifted: Vec<_> = units.iter().map(|u| m(u.mu1 + c, u.mu0, u.var1, u.var0)).collect();
            let a = empty_reservoir_variance_moments(&units, &pairs).unwrap();
            let b = empty_reservoir_variance_moments(&shifted, &pairs).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            let eq2 = conditional_variance_moments(&units, &pairs).unwrap();
            prop_assert!((a - eq2).abs() < 1e-12);
        }

        #[test]
        fn same_sign_pairs_reduce_variance((units, pairs) in instance()) {
            let positive: Vec<_> = units.iter().map(|u| m(u.mu1.abs() + 0.1, u.mu0.abs(), u.var1, u.var0)).collect();
            prop_assume!(!pairs.is_empty());
            let with = conditional_variance_moments(&positive, &pairs).unwrap();
            let without = conditional_variance_moments(&positive, &[]).unwrap();
            prop_assert!(with < without);
        }
    }

    struct Constant;

    impl OutcomeModel for Constant {
        fn dimension(&self) -> usize {
            1
        }
        fn mu1(&self, _: &[f64]) -> f64 {
            2.0
        }
        fn mu0(&self, _: &[f64]) -> f64 {
            1.0
        }
        fn var1(&self, _: &[f64]) -> f64 {
            0.25
        }
        fn var0(&self, _: &[f64]) -> f64 {
            0.25
        }
    }

    #[test]
    fn sigma_red_constant_means() {
        let mut k = 0.0;
        let est = sigma_red_sq(
            &Constant,
            |x| {
                k += 1.0;
                x[0] = k;
            },
            10_000,
        )
        .unwrap();
        assert!((est.value - 0.5).abs() < 1e-12);
        assert!(sigma_red_sq(&Constant, |_| {}, 100).is_err());
    }
}
