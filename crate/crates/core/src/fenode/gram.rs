//! Monte-Carlo Gram systems and the normal-equation coefficient solve,
//! including the reverse-mode adjoint used during offline training.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::state::STATE_DIM;

/// Per-dimension weights of the increment inner product.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerProduct {
    pub weights: [f64; STATE_DIM],
}

impl Default for InnerProduct {
    fn default() -> Self {
        InnerProduct {
            weights: [1.0; STATE_DIM],
        }
    }
}

impl InnerProduct {
    #[inline]
    pub fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        let w = &self.weights;
        w[0] * a[0] * b[0]
            + w[1] * a[1] * b[1]
            + w[2] * a[2] * b[2]
            + w[3] * a[3] * b[3]
            + w[4] * a[4] * b[4]
            + w[5] * a[5] * b[5]
    }

    /// Mean over rows of the weighted squared norm of `a - b`.
    pub fn mse(&self, a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        let n = a.nrows().max(1) as f64;
        a.rows()
            .into_iter()
            .zip(b.rows())
            .map(|(x, y)| {
                let d: Vec<f64> = x.iter().zip(y.iter()).map(|(p, q)| p - q).collect();
                self.dot(&d, &d)
            })
            .sum::<f64>()
            / n
    }
}

/// Tikhonov term added to the Gram diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Regularization {
    Fixed(f64),
    /// `scale * trace(G) / k`.
    TraceScaled(f64),
}

impl Default for Regularization {
    fn default() -> Self {
        Regularization::TraceScaled(1e-6)
    }
}

impl Regularization {
    fn resolve(&self, gram: &Array2<f64>) -> f64 {
        match *self {
            Regularization::Fixed(l) => l,
            Regularization::TraceScaled(c) => c * gram.diag().sum() / gram.nrows() as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramSystem {
    /// `G[i][j] = <G_i, G_j>`, averaged over samples.
    pub gram: Array2<f64>,
    /// `rhs[j] = <F, G_j>`.
    pub rhs: Array1<f64>,
    pub regularization: f64,
    pub samples: usize,
}

/// Builds the Gram system from per-basis increments (`k` matrices of shape
/// `(m, 6)`) and the observed increments `targets` (`(m, 6)`).
pub fn gram_from_increments(
    increments: &[Array2<f64>],
    targets: &Array2<f64>,
    ip: &InnerProduct,
    reg: Regularization,
) -> Result<GramSystem> {
    let k = increments.len();
    let m = targets.nrows();
    if m == 0 {
        return Err(Error::invalid("Gram system needs at least one sample"));
    }
    if k == 0 || increments.iter().any(|g| g.nrows() != m || g.ncols() != STATE_DIM) {
        return Err(Error::invalid("increment matrices do not match the sample count"));
    }
    let inv_m = 1.0 / m as f64;
    let mut gram = Array2::<f64>::zeros((k, k));
    let mut rhs = Array1::<f64>::zeros(k);
    for s in 0..m {
        let rows: Vec<_> = increments.iter().map(|g| g.row(s)).collect();
        let target = targets.row(s);
        let t = target.as_slice().unwrap();
        for i in 0..k {
            let gi = rows[i].as_slice().unwrap();
            rhs[i] += inv_m * ip.dot(t, gi);
            for j in 0..=i {
                gram[[i, j]] += inv_m * ip.dot(gi, rows[j].as_slice().unwrap());
            }
        }
    }
    for i in 0..k {
        for j in 0..i {
            gram[[j, i]] = gram[[i, j]];
        }
    }
    let regularization = reg.resolve(&gram);
    Ok(GramSystem {
        gram,
        rhs,
        regularization,
        samples: m,
    })
}

impl GramSystem {
    pub fn k(&self) -> usize {
        self.rhs.len()
    }

    pub fn regularized(&self) -> Array2<f64> {
        &self.gram + &(Array2::<f64>::eye(self.k()) * self.regularization)
    }

    /// `Some(condition)` when the unregularized Gram matrix is numerically
    /// rank deficient (a Cholesky pivot below `rel_tol * max diag`).
    pub fn rank_deficiency(&self, rel_tol: f64) -> Option<f64> {
        Cholesky::factor(&self.gram, rel_tol).err().map(|e| e.condition)
    }

    /// Residual `rhs - (G + lambda I) alpha`.
    pub fn residual(&self, alpha: &[f64]) -> Array1<f64> {
        &self.rhs - &self.regularized().dot(&Array1::from(alpha.to_vec()))
    }
}

const PIVOT_TOL: f64 = 1e-15;

/// `alpha = (G + lambda I)^{-1} rhs` via Cholesky.
pub fn solve_alpha(sys: &GramSystem) -> Result<Array1<f64>> {
    Ok(SolveTape::solve(sys, None)?.alpha)
}

/// Factorization retained for the reverse pass of the solve.
#[derive(Debug, Clone)]
pub(crate) struct SolveTape {
    chol: Cholesky,
    pub(crate) alpha: Array1<f64>,
    trace_scale: Option<f64>,
}

impl SolveTape {
    pub(crate) fn solve(sys: &GramSystem, reg: Option<Regularization>) -> Result<Self> {
        let chol = Cholesky::factor(&sys.regularized(), PIVOT_TOL)
            .map_err(|e| Error::SingularSystem { condition: e.condition })?;
        let alpha = chol.solve(sys.rhs.as_slice().unwrap());
        if alpha.iter().any(|a| !a.is_finite()) {
            return Err(Error::SingularSystem {
                condition: chol.condition_estimate(),
            });
        }
        let trace_scale = match reg {
            Some(Regularization::TraceScaled(c)) => Some(c / sys.k() as f64),
            _ => None,
        };
        Ok(SolveTape {
            chol,
            alpha,
            trace_scale,
        })
    }

    /// Given `d loss / d alpha`, returns `(d loss / d G, d loss / d rhs)`.
    pub(crate) fn backward(&self, alpha_bar: &Array1<f64>) -> (Array2<f64>, Array1<f64>) {
        let rhs_bar = self.chol.solve(alpha_bar.as_slice().unwrap());
        let k = rhs_bar.len();
        let mut gram_bar = Array2::<f64>::zeros((k, k));
        for i in 0..k {
            for j in 0..k {
                gram_bar[[i, j]] = -rhs_bar[i] * self.alpha[j];
            }
        }
        if let Some(c) = self.trace_scale {
            let lambda_bar = gram_bar.diag().sum();
            for i in 0..k {
                gram_bar[[i, i]] += c * lambda_bar;
            }
        }
        (gram_bar, rhs_bar)
    }
}

/// Pulls Gram/rhs gradients back onto the per-basis increments, adding
/// into `d_increments`.
pub(crate) fn gram_backward(
    increments: &[Array2<f64>],
    targets: &Array2<f64>,
    ip: &InnerProduct,
    gram_bar: &Array2<f64>,
    rhs_bar: &Array1<f64>,
    d_increments: &mut [Array2<f64>],
) {
    let k = increments.len();
    let m = targets.nrows();
    let inv_m = 1.0 / m as f64;
    let w = &ip.weights;
    for s in 0..m {
        for i in 0..k {
            let mut acc = [0.0; STATE_DIM];
            for j in 0..k {
                let c = inv_m * (gram_bar[[i, j]] + gram_bar[[j, i]]);
                for d in 0..STATE_DIM {
                    acc[d] += c * increments[j][[s, d]];
                }
            }
            for d in 0..STATE_DIM {
                acc[d] += inv_m * rhs_bar[i] * targets[[s, d]];
                d_increments[i][[s, d]] += w[d] * acc[d];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn planted(m: usize) -> (Vec<Array2<f64>>, Array2<f64>) {
        let g1 = Array2::from_shape_fn((m, 6), |(s, d)| ((s * 6 + d) as f64 * 0.37).sin());
        let g2 = Array2::from_shape_fn((m, 6), |(s, d)| ((s * 3 + 2 * d) as f64 * 0.53).cos());
        let g3 = Array2::from_shape_fn((m, 6), |(s, d)| ((s + d) as f64 * 0.11).sin() * 0.5);
        let target = &g1 * 2.0 + &g2 * 3.0;
        (vec![g1, g2, g3], target)
    }

    #[test]
    fn unit_norm_single_basis() {
        let g = Array2::from_shape_fn((5, 6), |(_, d)| if d == 0 { 1.0 } else { 0.0 });
        let sys = gram_from_increments(&[g.clone()], &g, &InnerProduct::default(), Regularization::Fixed(0.0)).unwrap();
        assert_eq!(sys.gram[[0, 0]], 1.0);
        let zero = Array2::zeros((5, 6));
        let sys = gram_from_increments(&[g], &zero, &InnerProduct::default(), Regularization::Fixed(0.0)).unwrap();
        assert_eq!(sys.rhs[0], 0.0);
    }

    #[test]
    fn empty_sample_rejected() {
        let g = Array2::<f64>::zeros((0, 6));
        assert!(gram_from_increments(&[g.clone()], &g, &InnerProduct::default(), Regularization::default()).is_err());
    }

    #[test]
    fn identity_gram_returns_rhs() {
        let sys = GramSystem {
            gram: Array2::eye(3),
            rhs: Array1::from(vec![1.0, -2.0, 0.5]),
            regularization: 0.0,
            samples: 1,
        };
        assert_eq!(solve_alpha(&sys).unwrap().to_vec(), vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn recovers_planted_combination() {
        let (g, t) = planted(40);
        let sys = gram_from_increments(&g, &t, &InnerProduct::default(), Regularization::Fixed(0.0)).unwrap();
        let a = solve_alpha(&sys).unwrap();
        assert!((a[0] - 2.0).abs() < 1e-6 && (a[1] - 3.0).abs() < 1e-6 && a[2].abs() < 1e-6, "{a}");
        let r = sys.residual(a.as_slice().unwrap());
        assert!(r.dot(&r).sqrt() <= 1e-8 * sys.rhs.dot(&sys.rhs).sqrt());
    }

    #[test]
    fn singular_system_reports_condition() {
        let (g, t) = planted(4);
        let dup = vec![g[0].clone(), g[0].clone()];
        let sys = gram_from_increments(&dup, &t, &InnerProduct::default(), Regularization::Fixed(0.0)).unwrap();
        assert!(matches!(solve_alpha(&sys), Err(Error::SingularSystem { .. })));
        assert!(sys.rank_deficiency(1e-10).is_some());
        let reg = gram_from_increments(&dup, &t, &InnerProduct::default(), Regularization::default()).unwrap();
        assert!(solve_alpha(&reg).is_ok());
    }

    #[test]
    fn adjoint_matches_finite_differences() {
        let (g, _) = planted(7);
        let t = Array2::from_shape_fn((7, 6), |(s, d)| ((s * d) as f64 * 0.2).cos());
        let ip = InnerProduct {
            weights: [1.0, 2.0, 0.5, 1.0, 1.0, 3.0],
        };
        let reg = Regularization::TraceScaled(1e-2);
        let probe = Array1::from(vec![0.7, -1.3, 0.4]);
        let objective = |g: &[Array2<f64>]| {
            let sys = gram_from_increments(g, &t, &ip, reg).unwrap();
            solve_alpha(&sys).unwrap().dot(&probe)
        };
        let sys = gram_from_increments(&g, &t, &ip, reg).unwrap();
        let tape = SolveTape::solve(&sys, Some(reg)).unwrap();
        let (gb, rb) = tape.backward(&probe);
        let mut d: Vec<Array2<f64>> = g.iter().map(|x| Array2::zeros(x.raw_dim())).collect();
        gram_backward(&g, &t, &ip, &gb, &rb, &mut d);
        let h = 1e-6;
        for j in 0..3 {
            for (s, c) in [(0, 0), (3, 2), (6, 5), (2, 4)] {
                let mut gp = g.clone();
                gp[j][[s, c]] += h;
                let up = objective(&gp);
                gp[j][[s, c]] -= 2.0 * h;
                let down = objective(&gp);
                let fd = (up - down) / (2.0 * h);
                assert!((fd - d[j][[s, c]]).abs() < 1e-6 * fd.abs().max(1.0), "{j} {s} {c}: {fd} vs {}", d[j][[s, c]]);
            }
        }
    }
}
