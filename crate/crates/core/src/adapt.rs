//! Online coefficient adaptation from a sliding window of recent transitions.

use std::collections::VecDeque;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fenode::{BasisSet, Coefficients, InnerProduct, Regularization};
use crate::linalg::Cholesky;
use crate::model::AdaptedBasis;
use crate::state::{Control, Transition};

/// Pivot floor, relative to the largest Gram diagonal entry, below which the
/// unregularized window is treated as rank deficient.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveFlag {
    Ok,
    /// The window did not excite every basis direction; previous coefficients kept.
    Fallback,
}

impl SolveFlag {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveFlag::Ok => "ok",
            SolveFlag::Fallback => "fallback",
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdaptationBuffer {
    capacity: usize,
    ring: VecDeque<Transition>,
    /// Control steps between refreshes; `usize::MAX` solves only once.
    pub refresh_period: usize,
    last_valid: Coefficients,
    pub ip: InnerProduct,
    pub regularization: Regularization,
    refreshes: usize,
    fallbacks: usize,
}

impl AdaptationBuffer {
    /// Empty buffer whose usable coefficients start at `initial`.
    pub fn new(capacity: usize, initial: Coefficients) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("adaptation window must hold at least one transition"));
        }
        Ok(AdaptationBuffer {
            capacity,
            ring: VecDeque::with_capacity(capacity),
            refresh_period: 1,
            last_valid: initial,
            ip: InnerProduct::default(),
            regularization: Regularization::default(),
            refreshes: 0,
            fallbacks: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }

    pub fn contents(&self) -> Vec<Transition> {
        self.ring.iter().cloned().collect()
    }

    pub fn push(&mut self, t: Transition) {
        if self.ring.len() == self.capacity {
            self.ring.pop_front();
        }
        self.ring.push_back(t);
    }

    pub fn coefficients(&self) -> &Coefficients {
        &self.last_valid
    }

    pub fn fallback_count(&self) -> usize {
        self.fallbacks
    }

    /// Whether a refresh is scheduled at control step `step`.
    pub fn due(&self, step: usize) -> bool {
        match self.refresh_period {
            usize::MAX => self.refreshes == 0,
            0 | 1 => true,
            p => step % p == 0,
        }
    }

    /// Re-solves the coefficients over the window. A rank-deficient window
    /// keeps the previous coefficients and reports [`SolveFlag::Fallback`].
    pub fn refresh(&mut self, basis: &BasisSet) -> Result<(Coefficients, SolveFlag)> {
        if self.ring.is_empty() {
            return Err(Error::NoData);
        }
        self.refreshes += 1;
        let window = self.contents();
        let sys = basis.gram_system(&window, &self.ip, self.regularization)?;
        let solved = match Cholesky::factor(&sys.gram, RANK_TOL) {
            Ok(_) => crate::fenode::solve_coefficients(&sys).ok(),
            Err(_) => None,
        };
        match solved {
            Some(mut c) if c.alpha.iter().all(|a| a.is_finite()) => {
                c.source_count = window.len();
                c.terrain_id = self.last_valid.terrain_id.clone();
                self.last_valid = c.clone();
                Ok((c, SolveFlag::Ok))
            }
            _ => {
                self.fallbacks += 1;
                Ok((self.last_valid.clone(), SolveFlag::Fallback))
            }
        }
    }

    /// Model view bound to the current coefficients.
    pub fn model<'a>(&'a self, basis: &'a BasisSet) -> AdaptedBasis<'a> {
        AdaptedBasis {
            basis,
            alpha: &self.last_valid,
        }
    }
}

/// Open-loop sinusoidal excitation run before the first waypoint.
pub fn bootstrap_controls(duration: f64, dt: f64) -> Vec<Control> {
    let steps = (duration / dt).round() as usize;
    (0..steps)
        .map(|i| {
            let t = i as f64 * dt;
            Control::new(
                0.8 + 0.6 * (std::f64::consts::TAU * t / 2.0).sin(),
                0.8 * (std::f64::consts::TAU * t / 1.3).sin(),
            )
        })
        .collect()
}

/// One row of the per-step adaptation log.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptRecord {
    pub step: usize,
    pub window_size: usize,
    pub alpha: Vec<f64>,
    pub flag: SolveFlag,
}

pub fn write_adaptation_log(path: &Path, k: usize, rows: &[AdaptRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let alphas: Vec<String> = (1..=k).map(|j| format!("alpha_{j}")).collect();
    writeln!(f, "step,window_size,{},solve_flag", alphas.join(","))?;
    for r in rows {
        let a: Vec<String> = r.alpha.iter().map(|v| v.to_string()).collect();
        writeln!(f, "{},{},{},{}", r.step, r.window_size, a.join(","), r.flag.as_str())?;
    }
    f.flush()?;
    Ok(())
}
