//! Dense Cholesky and least squares on small row-major matrices.
//!
//! The sampler factors a K×K precision matrix for every tree proposal, with K
//! rarely above a few dozen, so this stays allocation-light instead of going
//! through a general matrix type.

#[derive(Debug, Clone)]
pub struct Cholesky {
    dim: usize,
    lower: Vec<f64>,
}

impl Cholesky {
    /// Factor a symmetric positive-definite matrix. Returns `None` if a pivot
    /// is not strictly positive.
    pub fn new(matrix: &[f64], dim: usize) -> Option<Self> {
        debug_assert_eq!(matrix.len(), dim * dim);
        let mut l = vec![0.0; dim * dim];
        for j in 0..dim {
            let mut d = matrix[j * dim + j];
            for k in 0..j {
                d -= l[j * dim + k] * l[j * dim + k];
            }
            if d <= 0.0 || !d.is_finite() {
                return None;
            }
            let d = d.sqrt();
            l[j * dim + j] = d;
            for i in (j + 1)..dim {
                let mut s = matrix[i * dim + j];
                for k in 0..j {
                    s -= l[i * dim + k] * l[j * dim + k];
                }
                l[i * dim + j] = s / d;
            }
        }
        Some(Self { dim, lower: l })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim)
            .map(|i| self.lower[i * self.dim + i].ln())
            .sum::<f64>()
    }

    /// Solve L y = b in place.
    pub fn forward(&self, b: &mut [f64]) {
        let n = self.dim;
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.lower[i * n + k] * b[k];
            }
            b[i] = s / self.lower[i * n + i];
        }
    }

    /// Solve Lᵀ x = y in place.
    pub fn backward(&self, y: &mut [f64]) {
        let n = self.dim;
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.lower[k * n + i] * y[k];
            }
            y[i] = s / self.lower[i * n + i];
        }
    }

    /// Solve A x = b.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.forward(&mut x);
        self.backward(&mut x);
        x
    }

    /// Diagonal of A⁻¹.
    pub fn inverse_diagonal(&self) -> Vec<f64> {
        let n = self.dim;
        (0..n)
            .map(|j| {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                self.forward(&mut e);
                e.iter().map(|v| v * v).sum()
            })
            .collect()
    }
}

/// Least squares through Householder QR on the row-major `rows`×`cols`
/// design, with a ridge of `ridge` times each column's squared norm appended
/// as extra rows so rank-deficient designs still solve.
pub fn least_squares(design: &[f64], rows: usize, cols: usize, y: &[f64], ridge: f64) -> Option<Vec<f64>> {
    let m = rows + cols;
    let mut a = vec![0.0; m * cols];
    a[..rows * cols].copy_from_slice(&design[..rows * cols]);
    let mut b = vec![0.0; m];
    b[..rows].copy_from_slice(&y[..rows]);
    for j in 0..cols {
        let norm2: f64 = (0..rows).map(|i| design[i * cols + j].powi(2)).sum();
        a[(rows + j) * cols + j] = (ridge * norm2).sqrt();
    }
    for j in 0..cols {
        let norm = (j..m).map(|i| a[i * cols + j].powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 {
            return None;
        }
        let alpha = if a[j * cols + j] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (j..m).map(|i| a[i * cols + j]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for c in j..cols {
            let dot: f64 = v.iter().enumerate().map(|(t, vi)| vi * a[(j + t) * cols + c]).sum();
            let f = 2.0 * dot / vnorm2;
            for (t, vi) in v.iter().enumerate() {
                a[(j + t) * cols + c] -= f * vi;
            }
        }
        let dot: f64 = v.iter().enumerate().map(|(t, vi)| vi * b[j + t]).sum();
        let f = 2.0 * dot / vnorm2;
        for (t, vi) in v.iter().enumerate() {
            b[j + t] -= f * vi;
        }
    }
    let mut x = vec![0.0; cols];
    for j in (0..cols).rev() {
        let d = a[j * cols + j];
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        let s: f64 = (j + 1..cols).map(|c| a[j * cols + c] * x[c]).sum();
        x[j] = (b[j] - s) / d;
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_spd_system() {
        let a = [4.0, 2.0, 0.6, 2.0, 5.0, 1.0, 0.6, 1.0, 3.0];
        let c = Cholesky::new(&a, 3).unwrap();
        let x = c.solve(&[1.0, 2.0, 3.0]);
        for i in 0..3 {
            let r: f64 = (0..3).map(|j| a[i * 3 + j] * x[j]).sum();
            assert!((r - [1.0, 2.0, 3.0][i]).abs() < 1e-12);
        }
        let det = 4.0 * (5.0 * 3.0 - 1.0) - 2.0 * (2.0 * 3.0 - 0.6) + 0.6 * (2.0 - 5.0 * 0.6);
        assert!((c.log_det() - f64::ln(det)).abs() < 1e-12);
        let inv = c.inverse_diagonal();
        assert!((inv[0] - (5.0 * 3.0 - 1.0) / det).abs() < 1e-12);
    }

    #[test]
    fn rejects_indefinite() {
        assert!(Cholesky::new(&[1.0, 2.0, 2.0, 1.0], 2).is_none());
    }
}
