use super::{dot, CholeskyFactor, Matrix};
use crate::error::{Error, Result};

/// Ridge added to the Newton Hessian; keeps near-separable fits solvable.
const HESSIAN_RIDGE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    /// Intercept first, then one coefficient per feature.
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub gradient_norm: f64,
    pub iterations: usize,
    /// Log-likelihood after each accepted iteration (starting point first).
    pub log_likelihood_path: Vec<f64>,
    /// Asymptotic standard errors from the inverse observed information.
    pub standard_errors: Vec<f64>,
}

impl LogisticModel {
    pub fn n_features(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        self.coefficients[0] + dot(&self.coefficients[1..], x)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn log_likelihood(features: &Matrix, labels: &[bool], beta: &[f64]) -> f64 {
    features
        .iter_rows()
        .zip(labels)
        .map(|(x, &y)| {
            let eta = beta[0] + dot(&beta[1..], x);
            if y {
                eta - softplus(eta)
            } else {
                -softplus(eta)
            }
        })
        .sum()
}

struct NewtonPieces {
    gradient: Vec<f64>,
    hessian: Matrix,
}

fn newton_pieces(features: &Matrix, labels: &[bool], beta: &[f64]) -> NewtonPieces {
    let p = beta.len();
    let mut gradient = vec![0.0; p];
    let mut hessian = Matrix::zeros(p, p);
    let mut z = vec![1.0; p];
    for (x, &y) in features.iter_rows().zip(labels) {
        z[1..].copy_from_slice(x);
        let mu = sigmoid(dot(beta, &z));
        let resid = f64::from(u8::from(y)) - mu;
        let w = mu * (1.0 - mu);
        for i in 0..p {
            gradient[i] += resid * z[i];
            for j in 0..=i {
                hessian[(i, j)] += w * z[i] * z[j];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            hessian[(j, i)] = hessian[(i, j)];
        }
    }
    NewtonPieces { gradient, hessian }
}

/// Maximum-likelihood logistic regression by damped Newton (IRLS). The
/// intercept is added internally. Convergence means the Euclidean norm of
/// the log-likelihood gradient fell below `tol`; otherwise the iterate at
/// `max_iter` comes back with `converged = false` (typically separation).
pub fn logistic_fit(features: &Matrix, labels: &[bool], max_iter: usize, tol: f64) -> Result<LogisticModel> {
    let n = features.rows();
    let p = features.cols() + 1;
    if labels.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: labels.len(),
        });
    }
    if n <= p {
        return Err(Error::input(format!("logistic fit needs n > p ({n} ≤ {p})")));
    }
    let mut beta = vec![0.0; p];
    let mut ll = log_likelihood(features, labels, &beta);
    let mut path = vec![ll];
    let mut converged = false;
    let mut grad_norm = f64::INFINITY;
    let mut iterations = 0;
    let mut last_hessian = None;
    while iterations <= max_iter {
        let NewtonPieces {
            gradient,
            mut hessian,
        } = newton_pieces(features, labels, &beta);
        grad_norm = dot(&gradient, &gradient).sqrt();
        for i in 0..p {
            hessian[(i, i)] += HESSIAN_RIDGE;
        }
        if grad_norm < tol {
            converged = true;
            last_hessian = Some(hessian);
            break;
        }
        if iterations == max_iter {
            last_hessian = Some(hessian);
            break;
        }
        let step = CholeskyFactor::new(&hessian)?.solve(&gradient)?;
        // Below this predicted gain the log-likelihood comparison is lost in
        // rounding, so the full Newton step is taken as is.
        let decrement = dot(&gradient, &step);
        let noise_floor = 1e-12 * ll.abs().max(1.0);
        // step halving keeps the log-likelihood nondecreasing
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + scale * s).collect();
            let trial_ll = log_likelihood(features, labels, &trial);
            if trial_ll >= ll || (scale == 1.0 && decrement < noise_floor) {
                beta = trial;
                ll = trial_ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        iterations += 1;
        path.push(ll);
        if !accepted {
            // no ascent possible at machine precision
            last_hessian = Some(hessian);
            break;
        }
    }
    // A perfect fit means the likelihood has no finite maximizer
    // (separation): the gradient only vanishes as coefficients diverge.
    if converged && perfect_fit(features, labels, &beta) {
        converged = false;
    }
    let standard_errors = match last_hessian.map(|h| CholeskyFactor::new(&h)) {
        Some(Ok(f)) => {
            let inv = f.inverse();
            (0..p).map(|i| inv[(i, i)].max(0.0).sqrt()).collect()
        }
        _ => vec![f64::NAN; p],
    };
    Ok(LogisticModel {
        coefficients: beta,
        converged,
        gradient_norm: grad_norm,
        iterations,
        log_likelihood_path: path,
        standard_errors,
    })
}

fn perfect_fit(features: &Matrix, labels: &[bool], beta: &[f64]) -> bool {
    features.iter_rows().zip(labels).all(|(x, &y)| {
        let mu = sigmoid(beta[0] + dot(&beta[1..], x));
        (f64::from(u8::from(y)) - mu).abs() < 1e-6
    })
}

pub fn logistic_predict(model: &LogisticModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.n_features() {
        return Err(Error::Dimension {
            expected: model.n_features(),
            got: x.len(),
        });
    }
    Ok(sigmoid(model.linear_predictor(x)))
}
