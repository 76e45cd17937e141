use super::{dot, symmetric_eigen, CovarianceAccumulator, Matrix};
use crate::error::{Error, Result};

/// Leading principal directions of a training matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    /// Training column means, subtracted before projecting.
    pub means: Vec<f64>,
    /// `k × d`, one unit direction per row.
    pub components: Matrix,
    /// Variance along each direction, nonincreasing.
    pub explained_variance: Vec<f64>,
}

impl PcaBasis {
    pub fn k(&self) -> usize {
        self.components.rows()
    }

    pub fn dim(&self) -> usize {
        self.components.cols()
    }
}

/// Fit the top `k` principal components by eigen-decomposition of the
/// sample covariance. Each direction's largest-magnitude coordinate is made
/// positive so the basis is reproducible.
pub fn pca_fit(training: &Matrix, k: usize) -> Result<PcaBasis> {
    let d = training.cols();
    if k == 0 || k > d {
        return Err(Error::input(format!("k = {k} must be in 1..={d}")));
    }
    if training.rows() <= d {
        return Err(Error::input(format!(
            "PCA needs more rows ({}) than columns ({d})",
            training.rows()
        )));
    }
    let mut acc = CovarianceAccumulator::new(d);
    for row in training.iter_rows() {
        acc.push(row);
    }
    let cov = acc.sample_covariance().expect("at least two rows");
    let (values, vectors) = symmetric_eigen(&cov)?;
    let mut components = Matrix::zeros(k, d);
    for r in 0..k {
        let v = vectors.row(r);
        let pivot =
            v.iter().enumerate().fold(
                (0, 0.0f64),
                |best, (i, x)| if x.abs() > best.1.abs() { (i, *x) } else { best },
            );
        let sign = if v[pivot.0] < 0.0 { -1.0 } else { 1.0 };
        for (j, x) in v.iter().enumerate() {
            components[(r, j)] = sign * x;
        }
    }
    Ok(PcaBasis {
        means: acc.mean().to_vec(),
        components,
        explained_variance: values[..k].iter().map(|v| v.max(0.0)).collect(),
    })
}

pub fn pca_project(basis: &PcaBasis, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != basis.dim() {
        return Err(Error::Dimension {
            expected: basis.dim(),
            got: x.len(),
        });
    }
    let centered: Vec<f64> = x.iter().zip(&basis.means).map(|(a, m)| a - m).collect();
    Ok(basis.components.iter_rows().map(|c| dot(c, &centered)).collect())
}
