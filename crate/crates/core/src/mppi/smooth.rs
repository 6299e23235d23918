//! Savitzky-Golay smoothing of control sequences.

use ndarray::Array2;

use crate::linalg::Cholesky;

/// Central smoothing weights for a `window`-point, degree-`order` local fit.
pub fn savgol_coefficients(window: usize, order: usize) -> Vec<f64> {
    assert!(window % 2 == 1 && order < window, "window must be odd and exceed the order");
    let h = (window / 2) as i64;
    let a = Array2::from_shape_fn((window, order + 1), |(i, p)| ((i as i64 - h) as f64).powi(p as i32));
    let ata = a.t().dot(&a);
    let chol = Cholesky::factor(&ata, 0.0).expect("Vandermonde normal matrix is positive definite");
    // Row 0 of (A^T A)^-1 A^T: solve (A^T A) z = e_0, then weights = A z.
    let mut e0 = vec![0.0; order + 1];
    e0[0] = 1.0;
    let z = chol.solve(&e0);
    a.dot(&z).to_vec()
}

/// Filters `x` with point-symmetric (odd) reflection at both ends, so
/// sequences that are polynomial up to `order` pass through unchanged.
pub fn savgol_filter(x: &[f64], window: usize, order: usize) -> Vec<f64> {
    let n = x.len();
    let mut window = window.min(if n % 2 == 1 { n } else { n.saturating_sub(1) });
    if window < 3 {
        return x.to_vec();
    }
    if window % 2 == 0 {
        window -= 1;
    }
    let order = order.min(window - 1);
    let c = savgol_coefficients(window, order);
    let h = (window / 2) as i64;
    let at = |i: i64| -> f64 {
        let last = n as i64 - 1;
        if i < 0 {
            2.0 * x[0] - x[(-i) as usize]
        } else if i > last {
            2.0 * x[last as usize] - x[(2 * last - i) as usize]
        } else {
            x[i as usize]
        }
    };
    (0..n as i64)
        .map(|t| c.iter().enumerate().map(|(j, w)| w * at(t + j as i64 - h)).sum())
        .collect()
}
