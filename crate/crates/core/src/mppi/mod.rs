//! Sampling-based model-predictive control over any increment model.

mod smooth;

use std::io::Write as _;
use std::path::Path;

use ndarray::{Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::DynamicsModel;
use crate::neural_ode::IntervalBatch;
use crate::sim::World;
use crate::state::{compose_body_delta, Control, ControlLimits, State, STATE_DIM};

pub use smooth::{savgol_coefficients, savgol_filter};

#[derive(Debug, Clone, PartialEq)]
pub struct MppiConfig {
    pub rollouts: usize,
    pub horizon: usize,
    pub dt: f64,
    pub lambda: f64,
    pub sigma: [f64; 2],
    pub sg_window: usize,
    pub sg_order: usize,
    pub limits: ControlLimits,
}

impl Default for MppiConfig {
    fn default() -> Self {
        MppiConfig {
            rollouts: 1000,
            horizon: 100,
            dt: 0.1,
            lambda: 1.0,
            sigma: [0.5, 0.5],
            sg_window: 5,
            sg_order: 3,
            limits: ControlLimits::default(),
        }
    }
}

impl MppiConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rollouts == 0 || self.horizon == 0 {
            return Err(Error::invalid("rollouts and horizon must be at least 1"));
        }
        if !(self.lambda > 0.0) || !(self.dt > 0.0) {
            return Err(Error::invalid("lambda and dt must be positive"));
        }
        if self.sigma.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::invalid("sigma must be non-negative"));
        }
        if self.sg_window % 2 == 0 || self.sg_order >= self.sg_window {
            return Err(Error::invalid("Savitzky-Golay window must be odd and larger than the order"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    /// Cost per meter of distance to the active waypoint, per step.
    pub waypoint_weight: f64,
    pub obstacle_weight: f64,
    /// Extra clearance added to obstacle radius plus robot radius.
    pub inflation: f64,
    pub terminal_weight: f64,
    pub beta: [f64; 2],
}

impl Default for CostSpec {
    fn default() -> Self {
        CostSpec {
            waypoint_weight: 1.0,
            obstacle_weight: 1000.0,
            inflation: 0.3,
            terminal_weight: 10.0,
            beta: [0.0, 0.0],
        }
    }
}

/// Perturbed control sequences, shape `(r, T, 2)`.
pub fn sample_controls(mean: &[Control], cfg: &MppiConfig, rng: &mut ChaCha8Rng) -> Array3<f64> {
    let t_len = mean.len();
    let mut v = Array3::zeros((cfg.rollouts, t_len, 2));
    let noise: Vec<Option<Normal<f64>>> = cfg
        .sigma
        .iter()
        .map(|&s| if s > 0.0 { Some(Normal::new(0.0, s).unwrap()) } else { None })
        .collect();
    for i in 0..cfg.rollouts {
        for (t, u) in mean.iter().enumerate() {
            let mut c = u.to_array();
            for (ch, n) in noise.iter().enumerate() {
                if let Some(n) = n {
                    c[ch] += n.sample(rng);
                }
            }
            let c = cfg.limits.clamp(Control::new(c[0], c[1]));
            v[[i, t, 0]] = c.v_cmd;
            v[[i, t, 1]] = c.w_cmd;
        }
    }
    v
}

/// Seeded convenience wrapper around [`sample_controls`].
pub fn sample_controls_seeded(mean: &[Control], cfg: &MppiConfig, seed: u64) -> Array3<f64> {
    sample_controls(mean, cfg, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Propagates every sequence in `v` (shape `(r, T, 2)`) from `x0` in one
/// batched model call per step. Returns states of shape `(r, T + 1, 6)`;
/// rows that turn non-finite stay non-finite.
pub fn rollout_batch(model: &dyn DynamicsModel, x0: &State, v: &Array3<f64>, dt: f64) -> Array3<f64> {
    let (r, t_len, _) = v.dim();
    let mut states = Array3::zeros((r, t_len + 1, STATE_DIM));
    let x0a = x0.to_array();
    for i in 0..r {
        for d in 0..STATE_DIM {
            states[[i, 0, d]] = x0a[d];
        }
    }
    let mut x0b = Array2::zeros((r, STATE_DIM));
    for t in 0..t_len {
        for i in 0..r {
            for d in 3..STATE_DIM {
                x0b[[i, d]] = states[[i, t, d]];
            }
        }
        let batch = IntervalBatch::new(x0b.clone(), v.index_axis(Axis(1), t).to_owned(), vec![dt; r]);
        let inc = model.increments(&batch);
        for i in 0..r {
            let cur = row_state(&states, i, t);
            let dx: [f64; STATE_DIM] = std::array::from_fn(|d| inc[[i, d]]);
            let next = if cur.is_finite() && dx.iter().all(|v| v.is_finite()) {
                compose_body_delta(&cur, &dx).to_array()
            } else {
                [f64::NAN; STATE_DIM]
            };
            for d in 0..STATE_DIM {
                states[[i, t + 1, d]] = next[d];
            }
        }
    }
    states
}

fn row_state(states: &Array3<f64>, i: usize, t: usize) -> State {
    State {
        px: states[[i, t, 0]],
        py: states[[i, t, 1]],
        psi: states[[i, t, 2]],
        vx: states[[i, t, 3]],
        vy: states[[i, t, 4]],
        wz: states[[i, t, 5]],
    }
}

/// Single-sequence rollout: `T + 1` states starting at `x0`.
pub fn rollout(model: &dyn DynamicsModel, x0: &State, controls: &[Control], dt: f64) -> Vec<State> {
    let mut v = Array3::zeros((1, controls.len(), 2));
    for (t, u) in controls.iter().enumerate() {
        v[[0, t, 0]] = u.v_cmd;
        v[[0, t, 1]] = u.w_cmd;
    }
    let s = rollout_batch(model, x0, &v, dt);
    (0..=controls.len()).map(|t| row_state(&s, 0, t)).collect()
}

fn running_cost(x: &State, world: &World, waypoint: Option<&crate::sim::Circle>, cost: &CostSpec) -> f64 {
    let mut c = waypoint.map_or(0.0, |w| cost.waypoint_weight * w.distance(x.px, x.py));
    let clearance = world.robot_radius + cost.inflation;
    if world.obstacles.iter().any(|o| o.distance(x.px, x.py) < o.radius + clearance) {
        c += cost.obstacle_weight;
    }
    c
}

/// `phi(x_T) + sum_{t=1..T} c(x_t)` for a trajectory `x_0..x_T`, scored
/// against waypoint `waypoint` (no waypoint cost once the route is done).
/// Non-finite trajectories cost `+inf`.
pub fn state_cost(traj: &[State], world: &World, waypoint: usize, cost: &CostSpec) -> f64 {
    if traj.iter().any(|x| !x.is_finite()) {
        return f64::INFINITY;
    }
    let wp = world.waypoints.get(waypoint);
    let mut s: f64 = traj.iter().skip(1).map(|x| running_cost(x, world, wp, cost)).sum();
    if let (Some(last), Some(w)) = (traj.last(), wp) {
        s += cost.terminal_weight * w.distance(last.px, last.py);
    }
    s
}

/// Path-integral weights. The quadratic control term is evaluated on each
/// sampled sequence, scaled by `lambda / 2`, before exponentiation.
pub fn weights(costs: &[f64], v: &Array3<f64>, cfg: &MppiConfig, beta: [f64; 2]) -> Result<Vec<f64>> {
    let inv = [1.0 / cfg.sigma[0].max(1e-12).powi(2), 1.0 / cfg.sigma[1].max(1e-12).powi(2)];
    let totals: Vec<f64> = costs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut q = 0.0;
            for t in 0..v.dim().1 {
                let (a, b) = (v[[i, t, 0]], v[[i, t, 1]]);
                let quad = if cfg.sigma[0] > 0.0 { a * a * inv[0] } else { 0.0 } + if cfg.sigma[1] > 0.0 { b * b * inv[1] } else { 0.0 };
                q += quad + beta[0] * a + beta[1] * b;
            }
            s + 0.5 * cfg.lambda * q
        })
        .collect();
    let min = totals.iter().copied().filter(|c| c.is_finite()).fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    let mut w: Vec<f64> = totals
        .iter()
        .map(|c| if c.is_finite() { (-(c - min) / cfg.lambda).exp() } else { 0.0 })
        .collect();
    let z: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= z);
    Ok(w)
}

/// Effective sample size `1 / sum w_i^2`.
pub fn effective_sample_size(w: &[f64]) -> f64 {
    1.0 / w.iter().map(|x| x * x).sum::<f64>()
}

/// Weighted average of the sampled sequences, smoothed per channel, clamped.
pub fn update_and_smooth(v: &Array3<f64>, w: &[f64], cfg: &MppiConfig) -> Vec<Control> {
    let (r, t_len, _) = v.dim();
    let mut avg = [vec![0.0; t_len], vec![0.0; t_len]];
    for i in 0..r {
        if w[i] == 0.0 {
            continue;
        }
        for t in 0..t_len {
            avg[0][t] += w[i] * v[[i, t, 0]];
            avg[1][t] += w[i] * v[[i, t, 1]];
        }
    }
    let s0 = savgol_filter(&avg[0], cfg.sg_window, cfg.sg_order);
    let s1 = savgol_filter(&avg[1], cfg.sg_window, cfg.sg_order);
    s0.into_iter()
        .zip(s1)
        .map(|(a, b)| cfg.limits.clamp(Control::new(a, b)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    pub min_cost: f64,
    pub mean_cost: f64,
    pub ess: f64,
    pub degenerate: bool,
}

pub const DIAGNOSTICS_HEADER: &str = "step,min_cost,mean_cost,ess,degenerate";

/// Receding-horizon controller state.
#[derive(Debug, Clone)]
pub struct Mppi {
    pub cfg: MppiConfig,
    pub cost: CostSpec,
    plan: Vec<Control>,
    rng: ChaCha8Rng,
}

impl Mppi {
    pub fn new(cfg: MppiConfig, cost: CostSpec, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let plan = vec![Control::zero(); cfg.horizon];
        Ok(Mppi {
            cfg,
            cost,
            plan,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn plan(&self) -> &[Control] {
        &self.plan
    }

    pub fn set_plan(&mut self, plan: Vec<Control>) -> Result<()> {
        if plan.len() != self.cfg.horizon {
            return Err(Error::invalid(format!("plan must have {} entries", self.cfg.horizon)));
        }
        self.plan = plan;
        Ok(())
    }

    /// One control iteration: sample, roll out, weight, update, shift.
    pub fn control_step(
        &mut self,
        model: &dyn DynamicsModel,
        x: &State,
        world: &World,
        waypoint: usize,
    ) -> (Control, StepDiagnostics) {
        let v = sample_controls(&self.plan, &self.cfg, &mut self.rng);
        let states = rollout_batch(model, x, &v, self.cfg.dt);
        let costs: Vec<f64> = (0..self.cfg.rollouts)
            .map(|i| {
                let traj: Vec<State> = (0..=self.cfg.horizon).map(|t| row_state(&states, i, t)).collect();
                state_cost(&traj, world, waypoint, &self.cost)
            })
            .collect();
        let finite: Vec<f64> = costs.iter().copied().filter(|c| c.is_finite()).collect();
        let mut diag = StepDiagnostics {
            min_cost: finite.iter().copied().fold(f64::INFINITY, f64::min),
            mean_cost: finite.iter().sum::<f64>() / finite.len().max(1) as f64,
            ess: 0.0,
            degenerate: false,
        };
        match weights(&costs, &v, &self.cfg, self.cost.beta) {
            Ok(w) => {
                diag.ess = effective_sample_size(&w);
                self.plan = update_and_smooth(&v, &w, &self.cfg);
            }
            Err(_) => diag.degenerate = true,
        }
        let u0 = self.plan[0];
        self.plan.remove(0);
        self.plan.push(*self.plan.last().unwrap_or(&u0));
        (u0, diag)
    }
}

pub fn write_diagnostics(path: &Path, diags: &[StepDiagnostics]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{DIAGNOSTICS_HEADER}")?;
    for (i, d) in diags.iter().enumerate() {
        writeln!(f, "{i},{},{},{},{}", d.min_cost, d.mean_cost, d.ess, d.degenerate as u8)?;
    }
    f.flush()?;
    Ok(())
}
