use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{generate, CovariateSampler, Experiment};
use crate::error::Result;
use crate::estimators::OutcomeModel;
use crate::numerics::{CholeskyFactor, Matrix};
use crate::rng::RandomSource;

/// Outcome noise variance in each arm of both synthetic settings.
pub const SETTING_NOISE_VAR: f64 = 0.01;

/// `X ~ Unif[0,1]²`, `Y = Z (x₁ + x₂)² + N(0, 0.01)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Setting1;

impl CovariateSampler for Setting1 {
    fn dimension(&self) -> usize {
        2
    }

    fn sample_into(&self, rng: &mut RandomSource, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = rng.rng().random::<f64>();
        }
    }
}

impl OutcomeModel for Setting1 {
    fn dimension(&self) -> usize {
        2
    }

    fn mu1(&self, x: &[f64]) -> f64 {
        let s = x[0] + x[1];
        s * s
    }

    fn mu0(&self, _: &[f64]) -> f64 {
        0.0
    }

    fn var1(&self, _: &[f64]) -> f64 {
        SETTING_NOISE_VAR
    }

    fn var0(&self, _: &[f64]) -> f64 {
        SETTING_NOISE_VAR
    }

    /// `E[(x₁+x₂)²] = Var + mean² = 1/6 + 1`.
    fn tau(&self) -> Option<f64> {
        Some(7.0 / 6.0)
    }
}

/// `X ~ N(m, Σ)` in three dimensions and, with `s = x₁ + x₂ + x₃`,
/// `Y = sin s + Z (3 + 2 cos s) + N(0, 0.01)`.
#[derive(Debug, Clone)]
pub struct Setting2 {
    mean: [f64; 3],
    factor: CholeskyFactor,
}

impl Setting2 {
    pub const MEAN: [f64; 3] = [1.0, 2.0, 3.0];
    pub const COVARIANCE: [[f64; 3]; 3] = [[1.0, 0.5, 0.2], [0.5, 2.0, 0.3], [0.2, 0.3, 1.5]];

    pub fn new() -> Self {
        let cov = Matrix::from_rows(&Self::COVARIANCE).expect("3x3");
        Setting2 {
            mean: Self::MEAN,
            factor: CholeskyFactor::new(&cov).expect("positive definite"),
        }
    }

    /// Mean and variance of `s = 1ᵀX`.
    pub fn sum_moments() -> (f64, f64) {
        let m = Self::MEAN.iter().sum();
        let v = Self::COVARIANCE.iter().flatten().sum();
        (m, v)
    }
}

impl Default for Setting2 {
    fn default() -> Self {
        Self::new()
    }
}

impl CovariateSampler for Setting2 {
    fn dimension(&self) -> usize {
        3
    }

    fn sample_into(&self, rng: &mut RandomSource, out: &mut [f64]) {
        let z: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng.rng()));
        let l = self.factor.lower();
        for i in 0..3 {
            out[i] = self.mean[i] + (0..=i).map(|j| l[(i, j)] * z[j]).sum::<f64>();
        }
    }
}

impl OutcomeModel for Setting2 {
    fn dimension(&self) -> usize {
        3
    }

    fn mu1(&self, x: &[f64]) -> f64 {
        let s: f64 = x.iter().sum();
        s.sin() + 3.0 + 2.0 * s.cos()
    }

    fn mu0(&self, x: &[f64]) -> f64 {
        x.iter().sum::<f64>().sin()
    }

    fn var1(&self, _: &[f64]) -> f64 {
        SETTING_NOISE_VAR
    }

    fn var0(&self, _: &[f64]) -> f64 {
        SETTING_NOISE_VAR
    }

    /// `3 + 2 E[cos s]` with `E[cos s] = cos(m) e^{−v/2}` for `s ~ N(m, v)`.
    fn tau(&self) -> Option<f64> {
        let (m, v) = Self::sum_moments();
        Some(3.0 + 2.0 * m.cos() * (-v / 2.0).exp())
    }
}

pub fn sample_setting1(rng: &mut RandomSource, t: usize) -> Result<Experiment> {
    generate(&Setting1, rng, t)
}

pub fn sample_setting2(rng: &mut RandomSource, t: usize) -> Result<Experiment> {
    generate(&Setting2::new(), rng, t)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::estimators::sigma_red_sq;

    /// 2-D Gauss–Legendre quadrature of `f` on the unit square.
    fn quad2(f: impl Fn(f64, f64) -> f64) -> f64 {
        let (nodes, weights) = gauss_legendre(20);
        let mut total = 0.0;
        for (a, wa) in nodes.iter().zip(&weights) {
            for (b, wb) in nodes.iter().zip(&weights) {
                total += wa * wb * f((a + 1.0) / 2.0, (b + 1.0) / 2.0) / 4.0;
            }
        }
        total
    }

    fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for i in 1..=n {
            let mut x = (PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let step = p1 / dp;
                x -= step;
                if step.abs() < 1e-15 {
                    break;
                }
            }
            nodes.push(x);
            weights.push(2.0 / ((1.0 - x * x) * dp * dp));
        }
        (nodes, weights)
    }

    #[test]
    fn setting1_examples() {
        let s = Setting1;
        assert_eq!(s.mu1(&[0.0, 0.0]), 0.0);
        assert_eq!(s.mu1(&[1.0, 1.0]), 4.0);
        assert_eq!(s.g(&[1.0, 1.0]), 4.0);
    }

    #[test]
    fn setting1_tau_by_quadrature() {
        let tau = quad2(|a, b| (a + b).powi(2));
        assert!((tau - 7.0 / 6.0).abs() < 1e-13);
        assert!((Setting1.tau().unwrap() - tau).abs() < 1e-13);
    }

    #[test]
    fn setting1_sigma_red_by_quadrature() {
        // σ²_red = E[σ₁² + σ₀²] + Var(τ(X))/2 with τ(x) = (x₁+x₂)²
        let m2 = quad2(|a, b| (a + b).powi(4));
        let m1 = quad2(|a, b| (a + b).powi(2));
        assert!((m2 - 31.0 / 15.0).abs() < 1e-12);
        let exact = 0.02 + (m2 - m1 * m1) / 2.0;
        assert!((exact - (0.02 + 127.0 / 360.0)).abs() < 1e-12);
        let mut rng = RandomSource::new(5, 0);
        let est = sigma_red_sq(&Setting1, |x| Setting1.sample_into(&mut rng, x), 400_000).unwrap();
        assert!(
            (est.value - exact).abs() < 4.0 * est.std_error,
            "{est:?} vs {exact}"
        );
    }

    #[test]
    fn setting1_g_mean_monte_carlo() {
        let mut rng = RandomSource::new(11, 0);
        let n = 1_000_000;
        let mut x = [0.0; 2];
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            Setting1.sample_into(&mut rng, &mut x);
            let g = Setting1.g(&x);
            sum += g;
            sq += g * g;
        }
        let mean = sum / n as f64;
        let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - 7.0 / 6.0).abs() < 3.0 * se);
    }

    #[test]
    fn setting2_examples() {
        let s = Setting2::new();
        let origin = [0.0; 3];
        assert!((s.mu1(&origin) - s.mu0(&origin) - 5.0).abs() < 1e-15);
        assert!((s.g(&origin) - 5.0).abs() < 1e-15);
        assert_eq!(Setting2::sum_moments(), (6.0, 6.5));
    }

    #[test]
    fn setting2_covariance_by_sampling() {
        let s = Setting2::new();
        let mut rng = RandomSource::new(3, 0);
        let n = 1_000_000;
        let mut x = [0.0; 3];
        let mut sum = [0.0; 3];
        let mut cross = [[0.0; 3]; 3];
        let mut fourth = [[0.0; 3]; 3];
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            s.sample_into(&mut rng, &mut x);
            rows.push(x);
            for i in 0..3 {
                sum[i] += x[i];
            }
        }
        let mean: Vec<f64> = sum.iter().map(|v| v / n as f64).collect();
        for r in &rows {
            for i in 0..3 {
                for j in 0..3 {
                    let p = (r[i] - mean[i]) * (r[j] - mean[j]);
                    cross[i][j] += p;
                    fourth[i][j] += p * p;
                }
            }
        }
        for i in 0..3 {
            assert!(
                (mean[i] - Setting2::MEAN[i]).abs() < 3.0 * (Setting2::COVARIANCE[i][i] / n as f64).sqrt()
            );
            for j in 0..3 {
                let c = cross[i][j] / n as f64;
                let se = ((fourth[i][j] / n as f64 - c * c) / n as f64).sqrt();
                assert!((c - Setting2::COVARIANCE[i][j]).abs() < 3.0 * se, "({i},{j}) {c}");
            }
        }
    }

    #[test]
    fn setting2_tau_closed_form_and_monte_carlo() {
        let tau = Setting2::new().tau().unwrap();
        assert!((tau - (3.0 + 2.0 * 6f64.cos() * (-3.25f64).exp())).abs() < 1e-15);
        let s = Setting2::new();
        let mut rng = RandomSource::new(9, 0);
        let n = 1_000_000;
        let mut x = [0.0; 3];
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            s.sample_into(&mut rng, &mut x);
            let d = s.mu1(&x) - s.mu0(&x);
            sum += d;
            sq += d * d;
        }
        let mean = sum / n as f64;
        let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - tau).abs() < 3.0 * se, "{mean} vs {tau}");
    }

    #[test]
    fn g_is_sum_of_means() {
        let mut rng = RandomSource::new(1, 0);
        let s2 = Setting2::new();
        let mut x2 = [0.0; 2];
        let mut x3 = [0.0; 3];
        for _ in 0..1000 {
            Setting1.sample_into(&mut rng, &mut x2);
            assert!((Setting1.g(&x2) - Setting1.mu1(&x2) - Setting1.mu0(&x2)).abs() < 1e-12);
            s2.sample_into(&mut rng, &mut x3);
            assert!((s2.g(&x3) - s2.mu1(&x3) - s2.mu0(&x3)).abs() < 1e-12);
        }
    }

    #[test]
    fn streams_reproducible() {
        let a = sample_setting2(&mut RandomSource::new(42, 0), 50).unwrap();
        let b = sample_setting2(&mut RandomSource::new(42, 0), 50).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.checksum(), b.checksum());
        let c = sample_setting2(&mut RandomSource::new(43, 0), 50).unwrap();
        assert_ne!(a.checksum(), c.checksum());
        assert!(sample_setting1(&mut RandomSource::new(1, 0), 0).is_err());
    }

    #[test]
    fn noise_variance() {
        let e = sample_setting1(&mut RandomSource::new(8, 0), 200_000).unwrap();
        let resid: Vec<f64> = (0..e.len()).map(|i| e.y1[i] - e.moments[i].mu1).collect();
        let var = resid.iter().map(|r| r * r).sum::<f64>() / resid.len() as f64;
        assert!((var - SETTING_NOISE_VAR).abs() < 1e-4);
    }
}
