//! Numerical self-checks run by the report: coefficient recovery, gradient
//! agreement with finite differences, and integrator convergence order.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::fenode::train::{loss_and_grad, StepBatch};
use crate::fenode::{combine, gram_from_increments, solve_alpha, BasisSet, InnerProduct, Regularization, TransitionBatch};
use crate::net::Mlp;
use crate::neural_ode::{self, IntervalBatch};
use crate::ode::Rk4;
use crate::state::{Control, Delta, State, Transition};

/// Plants random coefficients on a frozen basis, solves them back without
/// regularization, and returns the relative coefficient error.
pub fn planted_recovery(basis: &BasisSet, inputs: &IntervalBatch, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth: Vec<f64> = (0..basis.k()).map(|_| rng.sample(StandardNormal)).collect();
    let incs = basis.increments(inputs);
    let targets = combine(&incs, &truth);
    let sys = gram_from_increments(&incs, &targets, &InnerProduct::default(), Regularization::Fixed(0.0))?;
    let alpha = solve_alpha(&sys)?;
    let err: f64 = alpha.iter().zip(&truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = truth.iter().map(|a| a * a).sum::<f64>().sqrt();
    Ok(err / norm)
}

fn half_sq_loss(net: &Mlp, batch: &IntervalBatch, rk: Rk4, target: &Array2<f64>) -> f64 {
    let y = neural_ode::integrate(net, batch, rk);
    0.5 * (&y - target).iter().map(|d| d * d).sum::<f64>()
}

/// Worst relative disagreement between the reverse-mode gradient of a loss on
/// the integrated increments and central finite differences, over every
/// parameter of `net`.
pub fn ode_gradient_error(net: &Mlp, batch: &IntervalBatch, rk: Rk4, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = Array2::from_shape_fn((batch.len(), 6), |_| 0.1 * rng.sample::<f64, _>(StandardNormal));
    let (y, tape) = neural_ode::integrate_tape(net, batch, rk);
    let mut grads = vec![0.0; net.num_params()];
    neural_ode::backward(net, &tape, &(&y - &target), &mut grads);
    let scale = grads.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut probe = net.clone();
    for p in 0..net.num_params() {
        let orig = probe.params()[p];
        probe.params_mut()[p] = orig + h;
        let plus = half_sq_loss(&probe, batch, rk, &target);
        probe.params_mut()[p] = orig - h;
        let minus = half_sq_loss(&probe, batch, rk, &target);
        probe.params_mut()[p] = orig;
        let fd = (plus - minus) / (2.0 * h);
        // Entries far below the gradient's scale are compared against that scale.
        let denom = fd.abs().max(grads[p].abs()).max(1e-3 * scale);
        worst = worst.max((fd - grads[p]).abs() / denom);
    }
    worst
}

/// Ratio of RK4 global errors at step `h` and `h / 2` on a damped rotation
/// `y' = A y` integrated over one second; fourth order gives about 16.
pub fn rk4_error_ratio(substeps: usize) -> f64 {
    let (a, w) = (0.7, 2.5);
    let field = |y: &Delta| -> Delta {
        let mut d = [0.0; 6];
        d[0] = -a * y[0] - w * y[1];
        d[1] = w * y[0] - a * y[1];
        d
    };
    let y0 = [1.0, 0.5, 0.0, 0.0, 0.0, 0.0];
    let t = 1.0f64;
    let decay = (-a * t).exp();
    let (s, c) = (w * t).sin_cos();
    let exact = [decay * (c * y0[0] - s * y0[1]), decay * (s * y0[0] + c * y0[1])];
    let err = |n: usize| {
        let y = Rk4 { substeps: n }.integrate(field, &y0, t);
        ((y[0] - exact[0]).powi(2) + (y[1] - exact[1]).powi(2)).sqrt()
    };
    err(substeps) / err(2 * substeps)
}

/// Two-terrain scalar toy: forward velocity relaxes towards the command
/// with a terrain-specific gain.
pub fn toy_transitions(seed: u64, n: usize, gain: f64) -> Vec<Transition> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let x = State::new(0.0, 0.0, 0.0, rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5), 0.0);
            let u = Control::new(rng.random_range(-1.0..1.0), 0.0);
            let dx = [0.1 * x.vx, 0.0, 0.0, gain * 0.1 * (u.v_cmd - x.vx), -0.1 * x.vy, 0.0];
            Transition { x, u, dt: 0.1, dx }
        })
        .collect()
}

/// Relative finite-difference error of the full training-loss gradient
/// (through integration and the coefficient solve) on a `k = 2` toy.
pub fn training_gradient_error(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis = BasisSet::init(2, &[6], &mut rng)?;
    let parts: Vec<_> = [0.5, 2.0]
        .iter()
        .enumerate()
        .map(|(i, &g)| {
            let b = TransitionBatch::new(&toy_transitions(seed + i as u64, 10, g));
            (b.select(&[0, 1, 2, 3, 4]), b.select(&[5, 6, 7, 8, 9]))
        })
        .collect();
    let step = StepBatch::from_groups(&parts);
    let ip = InnerProduct::default();
    let reg = Regularization::Fixed(1e-3);
    let (_, grads) = loss_and_grad(&basis, &step, &ip, reg)?;
    let loss = |b: &BasisSet| loss_and_grad(b, &step, &ip, reg).map(|r| r.0);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for j in 0..2 {
        for p in 0..basis.nets()[j].num_params() {
            let mut plus = basis.clone();
            plus.nets_mut()[j].params_mut()[p] += h;
            let mut minus = basis.clone();
            minus.nets_mut()[j].params_mut()[p] -= h;
            let fd = (loss(&plus)? - loss(&minus)?) / (2.0 * h);
            let an = grads[j][p];
            worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-6));
        }
    }
    Ok(worst)
}
