//! Common interface for anything that predicts body-frame increments, so the
//! planner and evaluators can swap the simulator, the adapted basis, and the
//! baseline.

use ndarray::Array2;

use crate::baseline::NodeModel;
use crate::fenode::{BasisSet, Coefficients};
use crate::neural_ode::{self, IntervalBatch};
use crate::sim::TruthModel;
use crate::state::{Control, Delta, State, STATE_DIM};

pub trait DynamicsModel {
    /// Increments for a batch whose start states are already bodyified.
    fn increments(&self, batch: &IntervalBatch) -> Array2<f64>;

    fn increment(&self, x: &State, u: Control, dt: f64) -> Delta {
        let y = self.increments(&IntervalBatch::from_rows([(&x.bodyified(), u, dt)]));
        let mut out = [0.0; STATE_DIM];
        out.copy_from_slice(y.row(0).as_slice().unwrap());
        out
    }
}

impl DynamicsModel for TruthModel {
    fn increments(&self, batch: &IntervalBatch) -> Array2<f64> {
        let mut out = Array2::zeros((batch.len(), STATE_DIM));
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            let mut x0 = [0.0; STATE_DIM];
            x0.iter_mut().zip(batch.x0.row(i)).for_each(|(a, b)| *a = *b);
            let u = Control::new(batch.u[[i, 0]], batch.u[[i, 1]]);
            let y = self.integrator.increment(|y| self.field(y, u), &x0, batch.dt[i]);
            row.as_slice_mut().unwrap().copy_from_slice(&y);
        }
        out
    }
}

/// A basis set paired with one terrain's coefficients.
#[derive(Debug, Clone, Copy)]
pub struct AdaptedBasis<'a> {
    pub basis: &'a BasisSet,
    pub alpha: &'a Coefficients,
}

impl DynamicsModel for AdaptedBasis<'_> {
    fn increments(&self, batch: &IntervalBatch) -> Array2<f64> {
        self.basis.predict_batch(&self.alpha.alpha, batch)
    }
}

impl DynamicsModel for NodeModel {
    fn increments(&self, batch: &IntervalBatch) -> Array2<f64> {
        neural_ode::integrate(&self.net, batch, self.integrator)
    }
}
