//! Neural vector fields integrated with RK4 over one control interval.
//!
//! A field network maps features of the running state and the held control
//! to the state derivative. Integration starts from a bodyified state and
//! accumulates the increment `y`, evaluating the network at `x0 + y` on every
//! stage. The batched tape variant records each stage so the increment can be
//! differentiated w.r.t. the network parameters.

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use crate::net::{Mlp, MlpTape};
use crate::ode::Rk4;
use crate::state::{Control, Delta, State, CONTROL_DIM, STATE_DIM};

/// Network input: `(vx, vy, wz, v_cmd, w_cmd, sin psi, cos psi)`.
pub const FEATURE_DIM: usize = 7;

/// Default field architecture.
pub fn default_layer_sizes(hidden: &[usize]) -> Vec<usize> {
    let mut v = vec![FEATURE_DIM];
    v.extend_from_slice(hidden);
    v.push(STATE_DIM);
    v
}

/// Batched interval inputs: bodyified start states, controls, and step lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalBatch {
    pub x0: Array2<f64>,
    pub u: Array2<f64>,
    pub dt: Vec<f64>,
}

impl IntervalBatch {
    pub fn new(x0: Array2<f64>, u: Array2<f64>, dt: Vec<f64>) -> Self {
        assert_eq!(x0.ncols(), STATE_DIM);
        assert_eq!(u.ncols(), CONTROL_DIM);
        assert_eq!(x0.nrows(), u.nrows());
        assert_eq!(x0.nrows(), dt.len());
        IntervalBatch { x0, u, dt }
    }

    pub fn from_rows<'a>(rows: impl IntoIterator<Item = (&'a State, Control, f64)>) -> Self {
        let mut x0 = Vec::new();
        let mut u = Vec::new();
        let mut dt = Vec::new();
        for (x, c, h) in rows {
            x0.extend_from_slice(&x.to_array());
            u.extend_from_slice(&c.to_array());
            dt.push(h);
        }
        let n = dt.len();
        IntervalBatch::new(
            Array2::from_shape_vec((n, STATE_DIM), x0).unwrap(),
            Array2::from_shape_vec((n, CONTROL_DIM), u).unwrap(),
            dt,
        )
    }

    pub fn len(&self) -> usize {
        self.dt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dt.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> IntervalBatch {
        IntervalBatch {
            x0: self.x0.select(Axis(0), rows),
            u: self.u.select(Axis(0), rows),
            dt: rows.iter().map(|&i| self.dt[i]).collect(),
        }
    }
}

fn features(z: &ArrayView2<f64>, u: &ArrayView2<f64>) -> Array2<f64> {
    let n = z.nrows();
    let mut f = Array2::zeros((n, FEATURE_DIM));
    for i in 0..n {
        let (s, c) = z[[i, 2]].sin_cos();
        f[[i, 0]] = z[[i, 3]];
        f[[i, 1]] = z[[i, 4]];
        f[[i, 2]] = z[[i, 5]];
        f[[i, 3]] = u[[i, 0]];
        f[[i, 4]] = u[[i, 1]];
        f[[i, 5]] = s;
        f[[i, 6]] = c;
    }
    f
}

/// Pulls a feature gradient back to the running state.
fn features_backward(feat: &Array2<f64>, d_feat: &Array2<f64>) -> Array2<f64> {
    let n = feat.nrows();
    let mut dz = Array2::zeros((n, STATE_DIM));
    for i in 0..n {
        let (s, c) = (feat[[i, 5]], feat[[i, 6]]);
        dz[[i, 2]] = d_feat[[i, 5]] * c - d_feat[[i, 6]] * s;
        dz[[i, 3]] = d_feat[[i, 0]];
        dz[[i, 4]] = d_feat[[i, 1]];
        dz[[i, 5]] = d_feat[[i, 2]];
    }
    dz
}

/// `y + diag(scale) * k`, scaling row `i` by `scale[i]`.
fn add_scaled_rows(y: &Array2<f64>, scale: &[f64], factor: f64, k: &Array2<f64>) -> Array2<f64> {
    let mut out = y.clone();
    Zip::from(out.rows_mut())
        .and(k.rows())
        .and(scale)
        .for_each(|mut o, kr, &h| o.scaled_add(factor * h, &kr));
    out
}

fn scale_rows(a: &Array2<f64>, scale: &[f64], factor: f64) -> Array2<f64> {
    let mut out = a.clone();
    Zip::from(out.rows_mut())
        .and(scale)
        .for_each(|mut o, &h| o *= factor * h);
    out
}

/// Recorded stage evaluations for one batched integration.
#[derive(Debug, Clone)]
pub struct OdeTape {
    /// `substeps * 4` stage tapes, in evaluation order.
    stages: Vec<MlpTape>,
    h: Vec<f64>,
    substeps: usize,
}

struct Stepper<'a> {
    net: &'a Mlp,
    batch: &'a IntervalBatch,
}

impl Stepper<'_> {
    fn eval(&self, y: &Array2<f64>, tape: Option<&mut Vec<MlpTape>>) -> Array2<f64> {
        let z = &self.batch.x0 + y;
        let feat = features(&z.view(), &self.batch.u.view());
        match tape {
            Some(t) => {
                let st = self.net.forward_tape(feat);
                let out = st.output().clone();
                t.push(st);
                out
            }
            None => self.net.forward_batch(feat.view()),
        }
    }
}

fn run(net: &Mlp, batch: &IntervalBatch, rk: Rk4, mut tape: Option<&mut Vec<MlpTape>>) -> Array2<f64> {
    let n = rk.substeps.max(1);
    let h: Vec<f64> = batch.dt.iter().map(|d| d / n as f64).collect();
    let stepper = Stepper { net, batch };
    let mut y = Array2::zeros((batch.len(), STATE_DIM));
    for _ in 0..n {
        let k1 = stepper.eval(&y, tape.as_deref_mut());
        let k2 = stepper.eval(&add_scaled_rows(&y, &h, 0.5, &k1), tape.as_deref_mut());
        let k3 = stepper.eval(&add_scaled_rows(&y, &h, 0.5, &k2), tape.as_deref_mut());
        let k4 = stepper.eval(&add_scaled_rows(&y, &h, 1.0, &k3), tape.as_deref_mut());
        let mut sum = k1;
        sum.scaled_add(2.0, &k2);
        sum.scaled_add(2.0, &k3);
        sum += &k4;
        y = add_scaled_rows(&y, &h, 1.0 / 6.0, &sum);
    }
    y
}

/// Increments for every row of the batch.
pub fn integrate(net: &Mlp, batch: &IntervalBatch, rk: Rk4) -> Array2<f64> {
    run(net, batch, rk, None)
}

/// Increments plus the tape needed by [`backward`].
pub fn integrate_tape(net: &Mlp, batch: &IntervalBatch, rk: Rk4) -> (Array2<f64>, OdeTape) {
    let n = rk.substeps.max(1);
    let mut stages = Vec::with_capacity(4 * n);
    let y = run(net, batch, rk, Some(&mut stages));
    let h = batch.dt.iter().map(|d| d / n as f64).collect();
    (
        y,
        OdeTape {
            stages,
            h,
            substeps: n,
        },
    )
}

fn stage_backward(net: &Mlp, tape: &MlpTape, d_k: Array2<f64>, grads: &mut [f64]) -> Array2<f64> {
    let d_feat = net.backward(tape, d_k, grads);
    features_backward(tape.input(), &d_feat)
}

/// Accumulates into `grads` the parameter gradient of `sum(d_y * y)`.
pub fn backward(net: &Mlp, tape: &OdeTape, d_y: &Array2<f64>, grads: &mut [f64]) {
    let h = &tape.h;
    let mut y_bar = d_y.clone();
    for s in (0..tape.substeps).rev() {
        let st = &tape.stages[4 * s..4 * s + 4];
        let mut k3_bar = scale_rows(&y_bar, h, 1.0 / 3.0);
        let mut k2_bar = k3_bar.clone();
        let mut k1_bar = scale_rows(&y_bar, h, 1.0 / 6.0);
        let k4_bar = k1_bar.clone();

        let z4 = stage_backward(net, &st[3], k4_bar, grads);
        y_bar += &z4;
        k3_bar = add_scaled_rows(&k3_bar, h, 1.0, &z4);

        let z3 = stage_backward(net, &st[2], k3_bar, grads);
        y_bar += &z3;
        k2_bar = add_scaled_rows(&k2_bar, h, 0.5, &z3);

        let z2 = stage_backward(net, &st[1], k2_bar, grads);
        y_bar += &z2;
        k1_bar = add_scaled_rows(&k1_bar, h, 0.5, &z2);

        let z1 = stage_backward(net, &st[0], k1_bar, grads);
        y_bar += &z1;
    }
}

/// Single-sample convenience wrapper.
pub fn increment(net: &Mlp, x: &State, u: Control, dt: f64, rk: Rk4) -> Delta {
    let batch = IntervalBatch::from_rows([(&x.bodyified(), u, dt)]);
    let y = integrate(net, &batch, rk);
    let mut out = [0.0; STATE_DIM];
    out.copy_from_slice(y.slice(s![0, ..]).as_slice().unwrap());
    out
}
