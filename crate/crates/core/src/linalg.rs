//! Small dense symmetric positive-definite solves for the k x k coefficient
//! systems.

use ndarray::{Array1, Array2};

/// Lower-triangular Cholesky factor `A = L L^T`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Array2<f64>,
}

/// Pivot rejected during factorization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NotPositiveDefinite {
    pub index: usize,
    pub pivot: f64,
    /// Rough condition estimate from the pivots seen so far.
    pub condition: f64,
}

impl Cholesky {
    /// Factors `a`, rejecting pivots at or below `rel_tol * max(diag(a))`.
    pub fn factor(a: &Array2<f64>, rel_tol: f64) -> Result<Self, NotPositiveDefinite> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "matrix must be square");
        let scale = (0..n).map(|i| a[[i, i]].abs()).fold(0.0, f64::max);
        let floor = rel_tol * scale;
        let mut l = Array2::<f64>::zeros((n, n));
        let (mut dmax, mut dmin) = (0.0f64, f64::INFINITY);
        for j in 0..n {
            let mut d = a[[j, j]];
            for k in 0..j {
                d -= l[[j, k]] * l[[j, k]];
            }
            if !(d > floor) || !d.is_finite() {
                let condition = if d > 0.0 { dmax.max(d) / d.min(dmin) } else { f64::INFINITY };
                return Err(NotPositiveDefinite {
                    index: j,
                    pivot: d,
                    condition,
                });
            }
            dmax = dmax.max(d);
            dmin = dmin.min(d);
            let ljj = d.sqrt();
            l[[j, j]] = ljj;
            for i in j + 1..n {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s -= l[[i, k]] * l[[j, k]];
                }
                l[[i, j]] = s / ljj;
            }
        }
        Ok(Cholesky { l })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Array1<f64> {
        let n = self.dim();
        assert_eq!(b.len(), n);
        let l = &self.l;
        let mut y = Array1::<f64>::zeros(n);
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= l[[i, k]] * y[k];
            }
            y[i] = s / l[[i, i]];
        }
        let mut x = Array1::<f64>::zeros(n);
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l[[k, i]] * x[k];
            }
            x[i] = s / l[[i, i]];
        }
        x
    }

    /// Ratio of largest to smallest squared pivot.
    pub fn condition_estimate(&self) -> f64 {
        let d: Vec<f64> = (0..self.dim()).map(|i| self.l[[i, i]].powi(2)).collect();
        let max = d.iter().copied().fold(0.0, f64::max);
        let min = d.iter().copied().fold(f64::INFINITY, f64::min);
        max / min
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn agrees_with_reference_lu() {
        let n = 8;
        let m = Array2::from_shape_fn((n, n), |(i, j)| ((i * n + j) as f64 * 0.91).sin());
        let a = m.t().dot(&m) + Array2::<f64>::eye(n) * 0.1;
        let b: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let x = Cholesky::factor(&a, 1e-14).unwrap().solve(&b);
        let na = DMatrix::from_row_slice(n, n, a.as_slice().unwrap());
        let reference = na.lu().solve(&DVector::from_vec(b)).unwrap();
        for i in 0..n {
            assert!((x[i] - reference[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_rank_deficient() {
        let v = Array2::from_shape_fn((3, 1), |(i, _)| i as f64 + 1.0);
        let a = v.dot(&v.t());
        let err = Cholesky::factor(&a, 1e-12).unwrap_err();
        assert_eq!(err.index, 1);
        assert!(Cholesky::factor(&(a + Array2::<f64>::eye(3) * 1e-3), 1e-12).is_ok());
    }
}
