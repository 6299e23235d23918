//! Single neural ODE trained on pooled data from every training terrain.
//! It shares the architecture, integrator, minibatch stream, optimizer, and
//! step budget of one basis-set run but has no way to adapt online.

use std::path::Path;

use rand::Rng;

use crate::checkpoint::CheckpointFile;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::fenode::train::{clip, LossRecord, MinibatchStream, TrainConfig, ValidationSet};
use crate::fenode::TransitionBatch;
use crate::net::{Adam, Mlp};
use crate::neural_ode::{self, default_layer_sizes, FEATURE_DIM};
use crate::ode::Rk4;
use crate::state::{Control, Delta, State, STATE_DIM};

pub const CHECKPOINT_KIND: &str = "neural_ode";

#[derive(Debug, Clone, PartialEq)]
pub struct NodeModel {
    pub net: Mlp,
    pub integrator: Rk4,
}

impl NodeModel {
    pub fn init(hidden: &[usize], rng: &mut impl Rng) -> Result<Self> {
        Ok(NodeModel {
            net: Mlp::init(&default_layer_sizes(hidden), rng)?,
            integrator: Rk4::default(),
        })
    }

    pub fn from_net(net: Mlp, integrator: Rk4) -> Result<Self> {
        if net.input_dim() != FEATURE_DIM || net.output_dim() != STATE_DIM {
            return Err(Error::invalid(format!("network must map {FEATURE_DIM} -> {STATE_DIM}")));
        }
        Ok(NodeModel { net, integrator })
    }

    pub fn predict_increment(&self, x: &State, u: Control, dt: f64) -> Result<Delta> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::invalid(format!("dt must be positive, got {dt}")));
        }
        let y = neural_ode::increment(&self.net, x, u, dt, self.integrator);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite predicted increment".into()));
        }
        Ok(y)
    }

    /// Mean squared increment error over a batch.
    pub fn mse(&self, batch: &TransitionBatch) -> f64 {
        let pred = neural_ode::integrate(&self.net, &batch.inputs, self.integrator);
        let n = batch.len().max(1) as f64;
        (&batch.targets - &pred).iter().map(|e| e * e).sum::<f64>() / n
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        CheckpointFile::new(CHECKPOINT_KIND, std::slice::from_ref(&self.net), self.integrator).write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = CheckpointFile::read(path, CHECKPOINT_KIND)?;
        let mut nets = file.networks()?;
        if nets.len() != 1 {
            return Err(Error::Checkpoint(format!("expected one network, found {}", nets.len())));
        }
        Self::from_net(nets.remove(0), file.integrator()).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

/// Loss and parameter gradient of the pooled increment MSE on `batch`.
pub fn loss_and_grad(model: &NodeModel, batch: &TransitionBatch) -> (f64, Vec<f64>) {
    let (pred, tape) = neural_ode::integrate_tape(&model.net, &batch.inputs, model.integrator);
    let n = batch.len().max(1) as f64;
    let resid = &batch.targets - &pred;
    let loss = resid.iter().map(|e| e * e).sum::<f64>() / n;
    let d_pred = resid * (-2.0 / n);
    let mut g = vec![0.0; model.net.num_params()];
    neural_ode::backward(&model.net, &tape, &d_pred, &mut g);
    (loss, g)
}

/// Trains on exactly the rows the function encoder would see for the same
/// config (support and query halves pooled), one optimizer step per draw.
pub fn train(
    model: &mut NodeModel,
    datasets: &[Dataset],
    interp: Option<&ValidationSet>,
    extrap: Option<&ValidationSet>,
    cfg: &TrainConfig,
) -> Result<Vec<LossRecord>> {
    if datasets.is_empty() || datasets.iter().all(|d| d.is_empty()) {
        return Err(Error::NoData);
    }
    let datasets: Vec<Dataset> = datasets.iter().filter(|d| !d.is_empty()).cloned().collect();
    let mut stream = MinibatchStream::new(&datasets, cfg);
    let mut opt = Adam::new(model.net.num_params(), cfg.lr);
    let score = |m: &NodeModel, v: Option<&ValidationSet>| v.map_or(f64::NAN, |v| m.mse(&v.query));

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step_idx = 0;
    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        for _ in 0..cfg.steps_per_epoch {
            let step = stream.next_step();
            let (loss, g) = loss_and_grad(model, &step.rows);
            if !loss.is_finite() || g.iter().any(|v| !v.is_finite()) {
                return Err(Error::TrainingFailure {
                    epoch,
                    reason: format!("loss {loss}"),
                });
            }
            let mut grads = vec![g];
            clip(&mut grads, cfg.clip_norm);
            opt.lr = cfg.lr_at(step_idx);
            opt.step(model.net.params_mut(), &grads[0]);
            epoch_loss += loss;
            step_idx += 1;
        }
        let rec = LossRecord {
            epoch,
            train_mse: epoch_loss / cfg.steps_per_epoch.max(1) as f64,
            val_interp_mse: score(model, interp),
            val_extrap_mse: score(model, extrap),
        };
        log::debug!("node epoch {epoch}: {rec:?}");
        history.push(rec);
    }
    Ok(history)
}
