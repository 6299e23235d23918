//! Fixed-step RK4 over one control interval with the control held constant.

use crate::state::{Delta, STATE_DIM};

/// Integration settings shared by the ground-truth simulator and learned models.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Rk4 {
    /// Substeps per control interval.
    pub substeps: usize,
}

impl Default for Rk4 {
    fn default() -> Self {
        Rk4 { substeps: 4 }
    }
}

#[inline]
fn axpy(y: &Delta, a: f64, k: &Delta) -> Delta {
    let mut out = *y;
    for i in 0..STATE_DIM {
        out[i] += a * k[i];
    }
    out
}

/// One classical RK4 step of size `h` for `y' = f(y)`.
pub fn rk4_step(f: &mut impl FnMut(&Delta) -> Delta, y: &Delta, h: f64) -> Delta {
    let k1 = f(y);
    let k2 = f(&axpy(y, 0.5 * h, &k1));
    let k3 = f(&axpy(y, 0.5 * h, &k2));
    let k4 = f(&axpy(y, h, &k3));
    let mut out = *y;
    for i in 0..STATE_DIM {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

impl Rk4 {
    /// Integrates `y' = f(y)` from `y0` over `dt`.
    pub fn integrate(&self, mut f: impl FnMut(&Delta) -> Delta, y0: &Delta, dt: f64) -> Delta {
        let n = self.substeps.max(1);
        let h = dt / n as f64;
        let mut y = *y0;
        for _ in 0..n {
            y = rk4_step(&mut f, &y, h);
        }
        y
    }

    /// Increment `x(dt) - x(0)` for a field evaluated at `x0 + y`.
    pub fn increment(&self, mut f: impl FnMut(&Delta) -> Delta, x0: &Delta, dt: f64) -> Delta {
        self.integrate(
            |y| {
                let x = axpy(x0, 1.0, y);
                f(&x)
            },
            &[0.0; STATE_DIM],
            dt,
        )
    }
}
