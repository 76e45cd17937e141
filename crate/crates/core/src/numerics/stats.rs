use super::Matrix;

/// Columns whose population standard deviation is at or below this are
/// treated as constant during standardization.
pub const STD_EPSILON: f64 = 1e-12;

/// Streaming per-column mean and population standard deviation (Welford).
#[derive(Debug, Clone)]
pub struct ColumnStats {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl ColumnStats {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn from_matrix(x: &Matrix) -> Self {
        let mut s = Self::new(x.cols());
        for row in x.iter_rows() {
            s.push(row);
        }
        s
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn push(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.mean.len());
        self.count += 1;
        let n = self.count as f64;
        for ((m, m2), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(row) {
            let delta = x - *m;
            *m += delta / n;
            *m2 += delta * (x - *m);
        }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Population (divide-by-count) standard deviations.
    pub fn std(&self) -> Vec<f64> {
        if self.count == 0 {
            return vec![0.0; self.dim()];
        }
        let n = self.count as f64;
        self.m2.iter().map(|&m2| (m2.max(0.0) / n).sqrt()).collect()
    }

    /// Multipliers that map raw coordinate differences to standardized ones.
    /// Constant columns get 0: every standardized value in them is 0.
    pub fn inverse_scales(&self) -> Vec<f64> {
        self.std()
            .into_iter()
            .map(|s| if s > STD_EPSILON { 1.0 / s } else { 0.0 })
            .collect()
    }
}

/// Centre every column at zero and scale it to unit population standard
/// deviation. Constant columns (and a single row) map to zeros.
pub fn standardize(x: &Matrix) -> Matrix {
    let mut mean = vec![0.0; x.cols()];
    for row in x.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    let n = x.rows().max(1) as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; x.cols()];
    for row in x.iter_rows() {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let scale: Vec<f64> = var
        .iter()
        .map(|s| {
            let sd = (s / n).sqrt();
            if sd > STD_EPSILON {
                1.0 / sd
            } else {
                0.0
            }
        })
        .collect();
    let mut out = x.clone();
    for i in 0..out.rows() {
        for (j, v) in out.row_mut(i).iter_mut().enumerate() {
            *v = (*v - mean[j]) * scale[j];
        }
    }
    out
}

/// Running mean and co-moment matrix, for the sample covariance of a
/// growing prefix of rows.
#[derive(Debug, Clone)]
pub struct CovarianceAccumulator {
    count: usize,
    mean: Vec<f64>,
    comoment: Matrix,
}

impl CovarianceAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            comoment: Matrix::zeros(dim, dim),
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn push(&mut self, row: &[f64]) {
        let d = self.mean.len();
        self.count += 1;
        let n = self.count as f64;
        let delta: Vec<f64> = row.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        for (m, dl) in self.mean.iter_mut().zip(&delta) {
            *m += dl / n;
        }
        for i in 0..d {
            let after_i = row[i] - self.mean[i];
            for j in 0..d {
                self.comoment[(i, j)] += delta[j] * after_i;
            }
        }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Unbiased (n − 1 denominator) sample covariance; `None` with fewer
    /// than two rows.
    pub fn sample_covariance(&self) -> Option<Matrix> {
        if self.count < 2 {
            return None;
        }
        let d = self.mean.len();
        let denom = (self.count - 1) as f64;
        let mut cov = Matrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                // symmetrize away rounding asymmetry
                cov[(i, j)] = 0.5 * (self.comoment[(i, j)] + self.comoment[(j, i)]) / denom;
            }
        }
        Some(cov)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_row_standardizes_to_zero() {
        let x = Matrix::from_rows(&[[3.0, -7.0]]).unwrap();
        assert_eq!(standardize(&x).row(0), &[0.0, 0.0]);
    }

    #[test]
    fn two_point_column() {
        let x = Matrix::from_rows(&[[0.0], [2.0]]).unwrap();
        let z = standardize(&x);
        assert_eq!(z.column(0), vec![-1.0, 1.0]);
    }

    #[test]
    fn constant_column_maps_to_zeros() {
        let x = Matrix::from_rows(&[[5.0, 1.0], [5.0, 2.0], [5.0, 4.0]]).unwrap();
        let z = standardize(&x);
        assert_eq!(z.column(0), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn sample_covariance_matches_batch() {
        let rows = [[1.0, 2.0], [2.0, 1.0], [4.0, 5.0], [0.5, -1.0]];
        let mut acc = CovarianceAccumulator::new(2);
        rows.iter().for_each(|r| acc.push(r));
        let cov = acc.sample_covariance().unwrap();
        let n = rows.len() as f64;
        let mx: f64 = rows.iter().map(|r| r[0]).sum::<f64>() / n;
        let my: f64 = rows.iter().map(|r| r[1]).sum::<f64>() / n;
        let sxy: f64 = rows.iter().map(|r| (r[0] - mx) * (r[1] - my)).sum::<f64>() / (n - 1.0);
        let sxx: f64 = rows.iter().map(|r| (r[0] - mx).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((cov[(0, 1)] - sxy).abs() < 1e-12);
        assert!((cov[(1, 0)] - sxy).abs() < 1e-12);
        assert!((cov[(0, 0)] - sxx).abs() < 1e-12);
    }

    fn matrix_strategy() -> impl Strategy<Value = Matrix> {
        (2usize..40, 1usize..5).prop_flat_map(|(n, d)| {
            prop::collection::vec(-50.0f64..50.0, n * d).prop_map(move |v| Matrix::from_vec(n, d, v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn streaming_stats_match_batch(x in matrix_strategy()) {
            let s = ColumnStats::from_matrix(&x);
            for j in 0..x.cols() {
                let col = x.column(j);
                let n = col.len() as f64;
                let m = col.iter().sum::<f64>() / n;
                let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
                prop_assert!((s.mean()[j] - m).abs() <= 1e-10 * m.abs().max(1.0));
                prop_assert!((s.std()[j] - sd).abs() <= 1e-10 * sd.max(1.0));
            }
        }

        #[test]
        fn standardize_is_idempotent(x in matrix_strategy()) {
            let once = standardize(&x);
            let twice = standardize(&once);
            prop_assert!(once.max_abs_diff(&twice) < 1e-10);
        }

        #[test]
        fn standardized_columns_have_zero_mean_unit_std(x in matrix_strategy()) {
            let z = standardize(&x);
            let s = ColumnStats::from_matrix(&z);
            for j in 0..z.cols() {
                prop_assert!(s.mean()[j].abs() < 1e-10);
                let sd = s.std()[j];
                prop_assert!(sd.abs() < 1e-10 || (sd - 1.0).abs() < 1e-10);
            }
        }
    }
}
