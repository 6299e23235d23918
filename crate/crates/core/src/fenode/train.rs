//! Offline training of the basis set across terrain datasets.
//!
//! Every step draws a minibatch from each dataset, splits it into support and
//! query halves, solves for that terrain's coefficients on the support half,
//! and scores the combined prediction on the query half. The summed query
//! error is differentiated through the coefficient solve and the RK4
//! integration into every basis network.

use std::io::Write as _;
use std::ops::Range;
use std::path::Path;

use ndarray::{s, Array1, Array2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::fenode::basis::{combine, BasisSet, TransitionBatch};
use crate::fenode::gram::{gram_backward, gram_from_increments, InnerProduct, Regularization, SolveTape};
use crate::net::Adam;
use crate::neural_ode::{self, IntervalBatch};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    /// Transitions drawn from each dataset per step.
    pub batch_per_dataset: usize,
    pub support_fraction: f64,
    pub lr: f64,
    /// Learning rate reached at the final epoch (cosine decay).
    pub lr_final: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub seed: u64,
    pub inner_product: InnerProduct,
    pub regularization: Regularization,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            steps_per_epoch: 1,
            batch_per_dataset: 64,
            support_fraction: 0.5,
            lr: 3e-3,
            lr_final: 3e-4,
            clip_norm: Some(10.0),
            seed: 0,
            inner_product: InnerProduct::default(),
            regularization: Regularization::default(),
        }
    }
}

impl TrainConfig {
    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }

    pub(crate) fn lr_at(&self, step: usize) -> f64 {
        let total = self.total_steps().max(2) - 1;
        let frac = (step.min(total) as f64) / total as f64;
        self.lr_final + 0.5 * (self.lr - self.lr_final) * (1.0 + (std::f64::consts::PI * frac).cos())
    }
}

/// Support/query row ranges of one dataset inside a [`StepBatch`].
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub support: Range<usize>,
    pub query: Range<usize>,
}

/// All rows used by one optimizer step, grouped per dataset.
#[derive(Debug, Clone)]
pub struct StepBatch {
    pub rows: TransitionBatch,
    pub groups: Vec<Group>,
}

impl StepBatch {
    /// Concatenates `(support, query)` batches per dataset.
    pub fn from_groups(parts: &[(TransitionBatch, TransitionBatch)]) -> Self {
        let mut x0 = Vec::new();
        let mut u = Vec::new();
        let mut dt = Vec::new();
        let mut targets = Vec::new();
        let mut groups = Vec::new();
        let mut off = 0;
        for (sup, qry) in parts {
            for b in [sup, qry] {
                x0.extend(b.inputs.x0.iter().copied());
                u.extend(b.inputs.u.iter().copied());
                dt.extend_from_slice(&b.inputs.dt);
                targets.extend(b.targets.iter().copied());
            }
            groups.push(Group {
                support: off..off + sup.len(),
                query: off + sup.len()..off + sup.len() + qry.len(),
            });
            off += sup.len() + qry.len();
        }
        let n = dt.len();
        StepBatch {
            rows: TransitionBatch {
                inputs: IntervalBatch::new(
                    Array2::from_shape_vec((n, 6), x0).unwrap(),
                    Array2::from_shape_vec((n, 2), u).unwrap(),
                    dt,
                ),
                targets: Array2::from_shape_vec((n, 6), targets).unwrap(),
            },
            groups,
        }
    }
}

/// Deterministic minibatch source shared by the function encoder and the
/// baseline so both see identical samples for a given seed.
#[derive(Debug, Clone)]
pub struct MinibatchStream {
    rng: ChaCha8Rng,
    batches: Vec<TransitionBatch>,
    per_dataset: usize,
    support_fraction: f64,
}

impl MinibatchStream {
    pub fn new(datasets: &[Dataset], cfg: &TrainConfig) -> Self {
        MinibatchStream {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_ba7c),
            batches: datasets.iter().map(TransitionBatch::from_dataset).collect(),
            per_dataset: cfg.batch_per_dataset,
            support_fraction: cfg.support_fraction,
        }
    }

    pub fn next_step(&mut self) -> StepBatch {
        let mut parts = Vec::with_capacity(self.batches.len());
        for b in &self.batches {
            let n = self.per_dataset.min(b.len());
            let idx = sample(&mut self.rng, b.len(), n).into_vec();
            let n_sup = ((n as f64 * self.support_fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
            parts.push((b.select(&idx[..n_sup]), b.select(&idx[n_sup..])));
        }
        StepBatch::from_groups(&parts)
    }
}

/// Summed query loss of one step and its gradient for every basis network.
pub fn loss_and_grad(
    basis: &BasisSet,
    step: &StepBatch,
    ip: &InnerProduct,
    reg: Regularization,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let k = basis.k();
    let inputs = &step.rows.inputs;
    let targets = &step.rows.targets;
    let mut incs = Vec::with_capacity(k);
    let mut tapes = Vec::with_capacity(k);
    for net in basis.nets() {
        let (y, tape) = neural_ode::integrate_tape(net, inputs, basis.integrator);
        incs.push(y);
        tapes.push(tape);
    }
    let mut d_incs: Vec<Array2<f64>> = incs.iter().map(|g| Array2::zeros(g.raw_dim())).collect();
    let mut total = 0.0;
    let w = ip.weights;

    for g in &step.groups {
        let sup: Vec<Array2<f64>> = incs.iter().map(|y| y.slice(s![g.support.clone(), ..]).to_owned()).collect();
        let sup_t = targets.slice(s![g.support.clone(), ..]).to_owned();
        let sys = gram_from_increments(&sup, &sup_t, ip, reg)?;
        let solve = SolveTape::solve(&sys, Some(reg))?;
        let alpha = &solve.alpha;

        let qry: Vec<Array2<f64>> = incs.iter().map(|y| y.slice(s![g.query.clone(), ..]).to_owned()).collect();
        let resid = &targets.slice(s![g.query.clone(), ..]) - &combine(&qry, alpha.as_slice().unwrap());
        let q = resid.nrows().max(1) as f64;
        let mut loss = 0.0;
        for r in resid.rows() {
            loss += ip.dot(r.as_slice().unwrap(), r.as_slice().unwrap());
        }
        total += loss / q;

        // d loss / d residual = 2 W r / q; residual = target - sum alpha_j G_j
        let mut alpha_bar = Array1::<f64>::zeros(k);
        for (j, gq) in qry.iter().enumerate() {
            let mut acc = 0.0;
            for (r, gr) in resid.rows().into_iter().zip(gq.rows()) {
                acc += ip.dot(r.as_slice().unwrap(), gr.as_slice().unwrap());
            }
            alpha_bar[j] = -2.0 / q * acc;
            let mut dq = d_incs[j].slice_mut(s![g.query.clone(), ..]);
            for (mut drow, r) in dq.rows_mut().into_iter().zip(resid.rows()) {
                for d in 0..6 {
                    drow[d] -= 2.0 / q * alpha[j] * w[d] * r[d];
                }
            }
        }

        let (gram_bar, rhs_bar) = solve.backward(&alpha_bar);
        let mut d_sup: Vec<Array2<f64>> = sup.iter().map(|x| Array2::zeros(x.raw_dim())).collect();
        gram_backward(&sup, &sup_t, ip, &gram_bar, &rhs_bar, &mut d_sup);
        for (j, ds) in d_sup.iter().enumerate() {
            let mut view = d_incs[j].slice_mut(s![g.support.clone(), ..]);
            view += ds;
        }
    }

    let grads = basis
        .nets()
        .iter()
        .zip(&tapes)
        .zip(&d_incs)
        .map(|((net, tape), d)| {
            let mut g = vec![0.0; net.num_params()];
            neural_ode::backward(net, tape, d, &mut g);
            g
        })
        .collect();
    Ok((total, grads))
}

/// Held-out scene scored during training: coefficients are fit on `support`
/// and the error is measured on `query`.
#[derive(Debug, Clone)]
pub struct ValidationSet {
    pub support: TransitionBatch,
    pub query: TransitionBatch,
}

impl ValidationSet {
    /// First `n` transitions as support, the next `n` as query.
    pub fn from_dataset(ds: &Dataset, n: usize) -> Self {
        let n = n.min(ds.len() / 2).max(1);
        ValidationSet {
            support: TransitionBatch::new(&ds.transitions[..n]),
            query: TransitionBatch::new(&ds.transitions[n..(2 * n).min(ds.len())]),
        }
    }
}

/// Coefficient fit on `support` then query MSE, for a frozen basis.
pub fn fit_and_score(
    basis: &BasisSet,
    support: &TransitionBatch,
    query: &TransitionBatch,
    ip: &InnerProduct,
    reg: Regularization,
) -> Result<(Vec<f64>, f64)> {
    let sys = gram_from_increments(&basis.increments(&support.inputs), &support.targets, ip, reg)?;
    let alpha = SolveTape::solve(&sys, None)?.alpha.to_vec();
    let pred = basis.predict_batch(&alpha, &query.inputs);
    Ok((alpha, ip.mse(&query.targets, &pred)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_interp_mse: f64,
    pub val_extrap_mse: f64,
}

pub const LOSS_CSV_HEADER: &str = "epoch,train_mse,val_interp_mse,val_extrap_mse";

pub fn write_loss_csv(path: &Path, history: &[LossRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{LOSS_CSV_HEADER}")?;
    for r in history {
        writeln!(f, "{},{},{},{}", r.epoch, r.train_mse, r.val_interp_mse, r.val_extrap_mse)?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_loss_csv(path: &Path) -> Result<Vec<LossRecord>> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    let bad = |line: usize, reason: String| Error::Parse {
        file: path.display().to_string(),
        line,
        reason,
    };
    let mut out = Vec::new();
    for (i, l) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = l.split(',').collect();
        if f.len() != 4 {
            return Err(bad(i + 1, format!("expected 4 fields, got {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(i + 1, e.to_string()));
        out.push(LossRecord {
            epoch: f[0].parse().map_err(|e: std::num::ParseIntError| bad(i + 1, e.to_string()))?,
            train_mse: num(f[1])?,
            val_interp_mse: num(f[2])?,
            val_extrap_mse: num(f[3])?,
        });
    }
    Ok(out)
}

pub(crate) fn clip(grads: &mut [Vec<f64>], max_norm: Option<f64>) {
    let Some(max_norm) = max_norm else { return };
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
}

/// Trains `basis` in place on `datasets`, scoring optional held-out scenes
/// after every epoch.
pub fn train(
    basis: &mut BasisSet,
    datasets: &[Dataset],
    interp: Option<&ValidationSet>,
    extrap: Option<&ValidationSet>,
    cfg: &TrainConfig,
) -> Result<Vec<LossRecord>> {
    if datasets.len() < 2 {
        return Err(Error::invalid("function-encoder training needs at least two datasets"));
    }
    if datasets.iter().any(|d| d.len() < 2) {
        return Err(Error::invalid("every dataset needs at least two transitions"));
    }
    let ip = cfg.inner_product;
    let reg = cfg.regularization;
    let mut stream = MinibatchStream::new(datasets, cfg);
    let mut opts: Vec<Adam> = basis.nets().iter().map(|n| Adam::new(n.num_params(), cfg.lr)).collect();
    let score = |b: &BasisSet, v: Option<&ValidationSet>| -> Result<f64> {
        match v {
            Some(v) => Ok(fit_and_score(b, &v.support, &v.query, &ip, reg)?.1),
            None => Ok(f64::NAN),
        }
    };

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step_idx = 0;
    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        for _ in 0..cfg.steps_per_epoch {
            let step = stream.next_step();
            let (loss, mut grads) = loss_and_grad(basis, &step, &ip, reg).map_err(|e| Error::TrainingFailure {
                epoch,
                reason: e.to_string(),
            })?;
            if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::TrainingFailure {
                    epoch,
                    reason: format!("loss {loss}"),
                });
            }
            clip(&mut grads, cfg.clip_norm);
            let lr = cfg.lr_at(step_idx);
            for ((net, opt), g) in basis.nets_mut().iter_mut().zip(&mut opts).zip(&grads) {
                opt.lr = lr;
                opt.step(net.params_mut(), g);
            }
            epoch_loss += loss / datasets.len() as f64;
            step_idx += 1;
        }
        let rec = LossRecord {
            epoch,
            train_mse: epoch_loss / cfg.steps_per_epoch.max(1) as f64,
            val_interp_mse: score(basis, interp)?,
            val_extrap_mse: score(basis, extrap)?,
        };
        log::debug!("fenode epoch {epoch}: {rec:?}");
        history.push(rec);
    }
    Ok(history)
}
