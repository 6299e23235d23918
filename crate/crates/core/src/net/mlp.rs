//! Dense tanh multilayer perceptron with batched forward and reverse-mode
//! backward passes.
//!
//! All parameters live in one flat buffer. Layer `l` stores its weight matrix
//! `(out, in)` row-major followed by its bias vector, so optimizers and
//! finite-difference checks can treat the network as a plain `&mut [f64]`.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Activations recorded during a forward pass; `acts[0]` is the input.
#[derive(Debug, Clone)]
pub struct MlpTape {
    acts: Vec<Array2<f64>>,
}

impl MlpTape {
    pub fn input(&self) -> &Array2<f64> {
        &self.acts[0]
    }

    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().expect("tape has at least the input")
    }
}

/// Rational minimax approximation of `tanh` (odd 13/6 form, clamped at
/// |x| = 7.905); absolute error below 3e-7 and about three times cheaper than
/// an `exp`-based evaluation, which matters inside the RK4 stages.
#[inline]
pub fn tanh(x: f64) -> f64 {
    const CLAMP: f64 = 7.905_311_107_635_498;
    let x = x.clamp(-CLAMP, CLAMP);
    let x2 = x * x;
    let mut p = -2.760_768_477_423_55e-16;
    p = p * x2 + 2.000_187_904_824_77e-13;
    p = p * x2 - 8.604_671_522_137_35e-11;
    p = p * x2 + 5.122_297_090_371_14e-8;
    p = p * x2 + 1.485_722_357_179_79e-5;
    p = p * x2 + 6.372_619_288_754_36e-4;
    p = p * x2 + 4.893_524_558_917_86e-3;
    let mut q = 1.198_258_394_667_02e-6;
    q = q * x2 + 1.185_347_056_866_54e-4;
    q = q * x2 + 2.268_434_632_439e-3;
    q = q * x2 + 4.893_525_185_543_85e-3;
    x * p / q
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|s| *s == 0) {
            return Err(Error::invalid(format!("bad layer sizes {sizes:?}")));
        }
        Ok(Mlp {
            sizes: sizes.to_vec(),
            params: vec![0.0; param_count(sizes)],
        })
    }

    /// Uniform fan-in initialization, `U(-1/sqrt(in), 1/sqrt(in))`.
    pub fn init(sizes: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let mut off = 0;
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for p in &mut net.params[off..off + w[0] * w[1] + w[1]] {
                *p = rng.random_range(-bound..bound);
            }
            off += w[0] * w[1] + w[1];
        }
        Ok(net)
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        if params.len() != net.params.len() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn offset(&self, layer: usize) -> usize {
        param_count(&self.sizes[..=layer])
    }

    pub fn weight(&self, layer: usize) -> ArrayView2<'_, f64> {
        let (i, o) = (self.sizes[layer], self.sizes[layer + 1]);
        let off = self.offset(layer);
        ArrayView2::from_shape((o, i), &self.params[off..off + o * i]).unwrap()
    }

    pub fn bias(&self, layer: usize) -> ArrayView1<'_, f64> {
        let (i, o) = (self.sizes[layer], self.sizes[layer + 1]);
        let off = self.offset(layer) + o * i;
        ArrayView1::from(&self.params[off..off + o])
    }

    fn grad_views<'a>(&self, layer: usize, grads: &'a mut [f64]) -> (ArrayViewMut2<'a, f64>, ArrayViewMut1<'a, f64>) {
        let (i, o) = (self.sizes[layer], self.sizes[layer + 1]);
        let off = self.offset(layer);
        let (w, b) = grads[off..off + o * i + o].split_at_mut(o * i);
        (
            ArrayViewMut2::from_shape((o, i), w).unwrap(),
            ArrayViewMut1::from(b),
        )
    }

    fn layer_forward(&self, layer: usize, a: &ArrayView2<f64>) -> Array2<f64> {
        let mut z = a.dot(&self.weight(layer).t());
        z += &self.bias(layer);
        if layer + 1 < self.num_layers() {
            z.mapv_inplace(tanh);
        }
        z
    }

    /// Forward pass for one input vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "input has {} entries, network expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        let x = ArrayView2::from_shape((1, input.len()), input).unwrap();
        Ok(self.forward_batch(x).into_raw_vec_and_offset().0)
    }

    /// Row-wise forward pass over a `(batch, input_dim)` matrix.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(x.ncols(), self.input_dim(), "input width mismatch");
        let mut a = self.layer_forward(0, &x);
        for l in 1..self.num_layers() {
            a = self.layer_forward(l, &a.view());
        }
        a
    }

    /// Forward pass that records the activations needed by [`Mlp::backward`].
    pub fn forward_tape(&self, x: Array2<f64>) -> MlpTape {
        assert_eq!(x.ncols(), self.input_dim(), "input width mismatch");
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(x);
        for l in 0..self.num_layers() {
            let next = self.layer_forward(l, &acts[l].view());
            acts.push(next);
        }
        MlpTape { acts }
    }

    /// Backpropagates `d_out` (gradient w.r.t. the outputs), accumulating
    /// parameter gradients into `grads` and returning the input gradient.
    pub fn backward(&self, tape: &MlpTape, d_out: Array2<f64>, grads: &mut [f64]) -> Array2<f64> {
        assert_eq!(grads.len(), self.params.len(), "gradient buffer size");
        let mut delta = d_out;
        for l in (0..self.num_layers()).rev() {
            let a_in = &tape.acts[l];
            {
                let (mut gw, mut gb) = self.grad_views(l, grads);
                general_mat_mul(1.0, &delta.t(), a_in, 1.0, &mut gw);
                gb += &delta.sum_axis(Axis(0));
            }
            let mut d_in = delta.dot(&self.weight(l));
            if l > 0 {
                // a_in = tanh(z): dz = da * (1 - a^2)
                ndarray::Zip::from(&mut d_in)
                    .and(a_in)
                    .for_each(|d, &a| *d *= 1.0 - a * a);
            }
            delta = d_in;
        }
        delta
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    pub fn to_record(&self) -> MlpRecord {
        MlpRecord {
            layer_sizes: self.sizes.clone(),
            weights: (0..self.num_layers())
                .map(|l| self.weight(l).iter().copied().collect())
                .collect(),
            biases: (0..self.num_layers()).map(|l| self.bias(l).to_vec()).collect(),
        }
    }

    pub fn from_record(rec: &MlpRecord) -> Result<Self> {
        let mut net = Mlp::zeros(&rec.layer_sizes)?;
        if rec.weights.len() != net.num_layers() || rec.biases.len() != net.num_layers() {
            return Err(Error::Checkpoint("layer count does not match layer_sizes".into()));
        }
        for l in 0..net.num_layers() {
            let (i, o) = (net.sizes[l], net.sizes[l + 1]);
            if rec.weights[l].len() != i * o || rec.biases[l].len() != o {
                return Err(Error::Checkpoint(format!("layer {l} has wrong shape")));
            }
            let off = net.offset(l);
            net.params[off..off + i * o].copy_from_slice(&rec.weights[l]);
            net.params[off + i * o..off + i * o + o].copy_from_slice(&rec.biases[l]);
        }
        Ok(net)
    }
}

/// Serialized network: layer sizes, row-major weights, and biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpRecord {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Gradient of a batch loss defined on the network outputs.
///
/// `loss` receives the `(batch, output_dim)` outputs and returns the scalar
/// loss with its gradient w.r.t. those outputs.
pub fn grad<F>(net: &Mlp, inputs: ArrayView2<f64>, loss: F) -> Result<(f64, Vec<f64>)>
where
    F: FnOnce(ArrayView2<f64>) -> (f64, Array2<f64>),
{
    let tape = net.forward_tape(inputs.to_owned());
    let (value, d_out) = loss(tape.output().view());
    if !value.is_finite() {
        return Err(Error::Numeric(format!("loss is {value}")));
    }
    let mut g = vec![0.0; net.num_params()];
    net.backward(&tape, d_out, &mut g);
    Ok((value, g))
}

/// Mean over rows of the squared Euclidean error, with its output gradient.
pub fn mse_loss(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> (f64, Array2<f64>) {
    let n = pred.nrows().max(1) as f64;
    let diff = &pred - &target;
    let value = diff.iter().map(|d| d * d).sum::<f64>() / n;
    (value, diff * (2.0 / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn tanh_tracks_std() {
        for i in 0..=40000 {
            let x = -20.0 + i as f64 * 1e-3;
            assert!((tanh(x) - x.tanh()).abs() < 3e-7, "x = {x}");
        }
        assert_eq!(tanh(0.0), 0.0);
        assert_eq!(tanh(-1.3), -tanh(1.3));
    }
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(9)
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let net = Mlp::zeros(&[7, 16, 16, 6]).unwrap();
        assert_eq!(net.forward(&[1.0; 7]).unwrap(), vec![0.0; 6]);
        assert!(net.forward(&[1.0; 5]).is_err());
    }

    #[test]
    fn identity_linear_layer() {
        let mut p = vec![0.0; 4 * 3 + 3];
        p[0] = 1.0;
        p[4 + 1] = 1.0;
        p[8 + 2] = 1.0;
        let net = Mlp::from_params(&[4, 3], p).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0, 9.0]).unwrap(), vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn batch_matches_single() {
        let net = Mlp::init(&[5, 12, 8, 3], &mut rng()).unwrap();
        let x = array![[0.1, -0.2, 0.3, 0.4, -0.5], [1.0, 2.0, -1.0, 0.0, 0.5], [0.0, 0.0, 0.0, 0.0, 0.0]];
        let out = net.forward_batch(x.view());
        for (row, o) in x.rows().into_iter().zip(out.rows()) {
            let single = net.forward(row.as_slice().unwrap()).unwrap();
            for (a, b) in single.iter().zip(o) {
                assert!((a - b).abs() < 1e-14);
            }
        }
        assert_eq!(net.forward_batch(x.view()), out);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let net = Mlp::init(&[3, 4, 2], &mut rng()).unwrap();
        let x = array![[0.5, 0.1, -0.3]];
        let (v, g) = grad(&net, x.view(), |o| (1.5, Array2::zeros(o.raw_dim()))).unwrap();
        assert_eq!(v, 1.5);
        assert!(g.iter().all(|x| *x == 0.0));
        assert!(grad(&net, x.view(), |o| (f64::NAN, Array2::zeros(o.raw_dim()))).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let sizes = [7, 32, 32, 6];
        let net = Mlp::init(&sizes, &mut rng()).unwrap();
        let x = Array2::from_shape_fn((5, 7), |(i, j)| ((i * 7 + j) as f64 * 0.37).sin());
        let y = Array2::from_shape_fn((5, 6), |(i, j)| ((i + 2 * j) as f64 * 0.11).cos());
        let (_, g) = grad(&net, x.view(), |o| mse_loss(o, y.view())).unwrap();
        let loss_at = |p: &[f64]| {
            let n = Mlp::from_params(&sizes, p.to_vec()).unwrap();
            mse_loss(n.forward_batch(x.view()).view(), y.view()).0
        };
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for idx in (0..net.num_params()).step_by(17) {
            let mut p = net.params().to_vec();
            p[idx] += h;
            let up = loss_at(&p);
            p[idx] -= 2.0 * h;
            let down = loss_at(&p);
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - g[idx]).abs() / fd.abs().max(g[idx].abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn record_round_trip() {
        let net = Mlp::init(&[7, 8, 6], &mut rng()).unwrap();
        let rec = net.to_record();
        let json = serde_json::to_string(&rec).unwrap();
        let back = Mlp::from_record(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, net);
        let mut bad = rec.clone();
        bad.biases[1].pop();
        assert!(Mlp::from_record(&bad).is_err());
    }
}
