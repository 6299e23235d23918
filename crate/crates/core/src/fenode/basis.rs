use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::CheckpointFile;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::fenode::gram::{gram_from_increments, solve_alpha, GramSystem, InnerProduct, Regularization};
use crate::net::Mlp;
use crate::neural_ode::{self, default_layer_sizes, IntervalBatch};
use crate::ode::Rk4;
use crate::state::{Control, Delta, State, Transition, STATE_DIM};

pub const CHECKPOINT_KIND: &str = "function_encoder";

/// `k` neural vector fields whose integrated increments span the family of
/// terrain dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    nets: Vec<Mlp>,
    pub integrator: Rk4,
}

/// Coefficients identifying one terrain inside the learned span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub alpha: Vec<f64>,
    pub source_count: usize,
    pub terrain_id: Option<String>,
}

impl Coefficients {
    pub fn new(alpha: Vec<f64>) -> Self {
        Coefficients {
            alpha,
            source_count: 0,
            terrain_id: None,
        }
    }

    pub fn k(&self) -> usize {
        self.alpha.len()
    }

    pub fn norm(&self) -> f64 {
        self.alpha.iter().map(|a| a * a).sum::<f64>().sqrt()
    }
}

/// Training/evaluation view of a list of transitions.
#[derive(Debug, Clone)]
pub struct TransitionBatch {
    pub inputs: IntervalBatch,
    pub targets: Array2<f64>,
}

impl TransitionBatch {
    pub fn new(transitions: &[Transition]) -> Self {
        let inputs = IntervalBatch::from_rows(transitions.iter().map(|t| (&t.x, t.u, t.dt)));
        let mut targets = Array2::zeros((transitions.len(), STATE_DIM));
        for (mut row, t) in targets.rows_mut().into_iter().zip(transitions) {
            row.as_slice_mut().unwrap().copy_from_slice(&t.dx);
        }
        TransitionBatch { inputs, targets }
    }

    pub fn from_dataset(ds: &Dataset) -> Self {
        Self::new(&ds.transitions)
    }

    pub fn len(&self) -> usize {
        self.targets.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, rows: &[usize]) -> TransitionBatch {
        TransitionBatch {
            inputs: self.inputs.select(rows),
            targets: self.targets.select(ndarray::Axis(0), rows),
        }
    }
}

impl BasisSet {
    pub fn init(k: usize, hidden: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("need at least one basis function"));
        }
        let sizes = default_layer_sizes(hidden);
        let nets = (0..k).map(|_| Mlp::init(&sizes, rng)).collect::<Result<_>>()?;
        Ok(BasisSet {
            nets,
            integrator: Rk4::default(),
        })
    }

    pub fn from_nets(nets: Vec<Mlp>, integrator: Rk4) -> Result<Self> {
        let Some(first) = nets.first() else {
            return Err(Error::invalid("need at least one basis function"));
        };
        if nets.iter().any(|n| n.sizes() != first.sizes()) {
            return Err(Error::invalid("basis networks must share one architecture"));
        }
        if first.input_dim() != neural_ode::FEATURE_DIM || first.output_dim() != STATE_DIM {
            return Err(Error::invalid(format!("basis networks must map {} -> {}", neural_ode::FEATURE_DIM, STATE_DIM)));
        }
        Ok(BasisSet { nets, integrator })
    }

    pub fn k(&self) -> usize {
        self.nets.len()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        CheckpointFile::new(CHECKPOINT_KIND, &self.nets, self.integrator).write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = CheckpointFile::read(path, CHECKPOINT_KIND)?;
        Self::from_nets(file.networks()?, file.integrator()).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn nets(&self) -> &[Mlp] {
        &self.nets
    }

    pub fn nets_mut(&mut self) -> &mut [Mlp] {
        &mut self.nets
    }

    pub fn layer_sizes(&self) -> &[usize] {
        self.nets[0].sizes()
    }

    /// `G_j(x, u)`: RK4 integral of field `j` over `dt` from the bodyified state.
    pub fn basis_increment(&self, j: usize, x: &State, u: Control, dt: f64) -> Result<Delta> {
        let net = self
            .nets
            .get(j)
            .ok_or_else(|| Error::invalid(format!("basis index {j} out of range (k = {})", self.k())))?;
        check_dt(dt)?;
        let y = neural_ode::increment(net, x, u, dt, self.integrator);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("basis {j} produced a non-finite increment")));
        }
        Ok(y)
    }

    /// All `k` basis increments for a batch, each `(rows, 6)`.
    pub fn increments(&self, inputs: &IntervalBatch) -> Vec<Array2<f64>> {
        self.nets
            .iter()
            .map(|n| neural_ode::integrate(n, inputs, self.integrator))
            .collect()
    }

    /// `sum_j alpha_j G_j(x, u)`.
    pub fn predict_increment(&self, alpha: &Coefficients, x: &State, u: Control, dt: f64) -> Result<Delta> {
        self.check_alpha(alpha)?;
        check_dt(dt)?;
        let batch = IntervalBatch::from_rows([(&x.bodyified(), u, dt)]);
        let y = combine(&self.increments(&batch), &alpha.alpha);
        let mut out = [0.0; STATE_DIM];
        out.copy_from_slice(y.row(0).as_slice().unwrap());
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite predicted increment".into()));
        }
        Ok(out)
    }

    pub fn predict_batch(&self, alpha: &[f64], inputs: &IntervalBatch) -> Array2<f64> {
        assert_eq!(alpha.len(), self.k(), "coefficient count");
        combine(&self.increments(inputs), alpha)
    }

    fn check_alpha(&self, alpha: &Coefficients) -> Result<()> {
        if alpha.k() != self.k() {
            return Err(Error::invalid(format!("expected {} coefficients, got {}", self.k(), alpha.k())));
        }
        Ok(())
    }

    /// Gram system over a list of transitions.
    pub fn gram_system(&self, transitions: &[Transition], ip: &InnerProduct, reg: Regularization) -> Result<GramSystem> {
        if transitions.is_empty() {
            return Err(Error::invalid("Gram system needs at least one transition"));
        }
        let batch = TransitionBatch::new(transitions);
        gram_from_increments(&self.increments(&batch.inputs), &batch.targets, ip, reg)
    }

    /// Solves for the coefficients that best explain `transitions`.
    pub fn fit(&self, transitions: &[Transition], ip: &InnerProduct, reg: Regularization) -> Result<Coefficients> {
        let sys = self.gram_system(transitions, ip, reg)?;
        let mut c = solve_coefficients(&sys)?;
        c.source_count = transitions.len();
        Ok(c)
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("dt must be positive, got {dt}")))
    }
}

/// `sum_j alpha_j * inc_j`.
pub fn combine(increments: &[Array2<f64>], alpha: &[f64]) -> Array2<f64> {
    let mut out = Array2::zeros(increments[0].raw_dim());
    for (g, a) in increments.iter().zip(alpha) {
        out.scaled_add(*a, g);
    }
    out
}

/// Normal-equation solve of a Gram system.
pub fn solve_coefficients(sys: &GramSystem) -> Result<Coefficients> {
    let alpha = solve_alpha(sys)?;
    Ok(Coefficients {
        alpha: alpha.to_vec(),
        source_count: sys.samples,
        terrain_id: None,
    })
}
