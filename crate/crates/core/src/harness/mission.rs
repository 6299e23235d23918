//! Closed-loop MPPI missions through an obstacle world on the truth simulator.

use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{ensure_dir, load_models, load_scene, median, record_timing, terrain_config, world, write_json, ExperimentConfig, Layout};
use crate::adapt::{bootstrap_controls, write_adaptation_log, AdaptRecord, AdaptationBuffer};
use crate::error::{Error, Result};
use crate::fenode::{BasisSet, Coefficients};
use crate::model::DynamicsModel;
use crate::mppi::{write_diagnostics, CostSpec, Mppi, MppiConfig, StepDiagnostics};
use crate::sim::{count_collisions, route_complete, waypoint_progress, TruthModel, World};
use crate::state::{body_frame_delta, Control, State};

#[derive(Debug, Clone, PartialEq)]
pub struct MissionConfig {
    pub mppi: MppiConfig,
    pub cost: CostSpec,
    /// Control steps after the bootstrap preamble.
    pub max_steps: usize,
    pub bootstrap_seconds: f64,
    pub window: usize,
    pub refresh_period: usize,
}

impl Default for MissionConfig {
    fn default() -> Self {
        MissionConfig {
            mppi: MppiConfig::default(),
            cost: CostSpec::default(),
            max_steps: 600,
            bootstrap_seconds: 2.0,
            window: 100,
            refresh_period: 1,
        }
    }
}

/// Planner model for a trial.
#[derive(Clone, Copy)]
pub enum Planner<'a> {
    /// Basis set with coefficients refreshed from the trial's own transitions.
    Adaptive(&'a BasisSet),
    Fixed(&'a dyn DynamicsModel),
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub path: Vec<State>,
    pub controls: Vec<Control>,
    pub collisions: usize,
    pub waypoints_reached: usize,
    pub completed: bool,
    pub diverged: bool,
    pub adaptation: Vec<AdaptRecord>,
    pub diagnostics: Vec<StepDiagnostics>,
    /// Wall time of each control step in seconds.
    pub step_seconds: Vec<f64>,
}

pub fn run_trial(world: &World, truth: &TruthModel, planner: Planner<'_>, cfg: &MissionConfig, seed: u64) -> Result<TrialResult> {
    let dt = cfg.mppi.dt;
    let mut mppi = Mppi::new(cfg.mppi.clone(), cfg.cost.clone(), seed)?;
    let mut buffer = match planner {
        Planner::Adaptive(b) => {
            let mut buf = AdaptationBuffer::new(cfg.window, Coefficients::new(vec![0.0; b.k()]))?;
            buf.refresh_period = cfg.refresh_period;
            Some(buf)
        }
        Planner::Fixed(_) => None,
    };
    let mut x = world.start;
    let mut path = vec![x];
    let mut controls = Vec::new();
    let mut diverged = false;

    let advance = |x: &mut State, u: Control, buffer: &mut Option<AdaptationBuffer>, path: &mut Vec<State>| -> bool {
        let next = truth.step(x, u, dt);
        if !next.is_finite() {
            return false;
        }
        if let (Some(buf), Ok(t)) = (buffer.as_mut(), body_frame_delta(x, u, &next, dt)) {
            buf.push(t);
        }
        *x = next;
        path.push(next);
        true
    };

    for u in bootstrap_controls(cfg.bootstrap_seconds, dt) {
        controls.push(u);
        if !advance(&mut x, u, &mut buffer, &mut path) {
            diverged = true;
            break;
        }
    }

    let mut wp = 0;
    let mut adaptation = Vec::new();
    let mut diagnostics = Vec::new();
    let mut step_seconds = Vec::new();
    for step in 0..cfg.max_steps {
        if diverged || route_complete(world, wp) {
            break;
        }
        let t0 = Instant::now();
        let (u, diag) = match (planner, buffer.as_mut()) {
            (Planner::Adaptive(basis), Some(buf)) => {
                if buf.due(step) && !buf.is_empty() {
                    let (c, flag) = buf.refresh(basis)?;
                    adaptation.push(AdaptRecord {
                        step,
                        window_size: buf.len(),
                        alpha: c.alpha,
                        flag,
                    });
                }
                mppi.control_step(&buf.model(basis), &x, world, wp)
            }
            (Planner::Fixed(model), _) => mppi.control_step(model, &x, world, wp),
            (Planner::Adaptive(_), None) => unreachable!(),
        };
        step_seconds.push(t0.elapsed().as_secs_f64());
        diagnostics.push(diag);
        controls.push(u);
        if !advance(&mut x, u, &mut buffer, &mut path) {
            diverged = true;
            break;
        }
        wp = waypoint_progress(&x, world, wp);
    }
    Ok(TrialResult {
        collisions: count_collisions(&path, world),
        waypoints_reached: wp.min(world.waypoints.len()),
        completed: route_complete(world, wp),
        path,
        controls,
        diverged,
        adaptation,
        diagnostics,
        step_seconds,
    })
}

pub const PATH_HEADER: &str = "step,px,py,psi,vx,vy,wz,v_cmd,w_cmd";

/// One row per visited state; the control columns hold the command applied
/// from that state and are empty on the final row.
pub fn write_path_csv(path: &Path, states: &[State], controls: &[Control]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{PATH_HEADER}")?;
    for (i, x) in states.iter().enumerate() {
        let u = controls.get(i).map(|u| format!("{},{}", u.v_cmd, u.w_cmd)).unwrap_or_else(|| ",".into());
        writeln!(f, "{i},{},{},{},{},{},{},{u}", x.px, x.py, x.psi, x.vx, x.vy, x.wz)?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_path_csv(path: &Path) -> Result<Vec<State>> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        let v: std::result::Result<Vec<f64>, _> = (1..7).map(|i| rec.get(i).unwrap_or("").parse::<f64>()).collect();
        let v = v.map_err(|e| Error::Parse {
            file: path.display().to_string(),
            line: line + 2,
            reason: e.to_string(),
        })?;
        out.push(State::new(v[0], v[1], v[2], v[3], v[4], v[5]));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub model: String,
    pub trial: usize,
    pub seed: u64,
    pub collisions: usize,
    pub waypoints_reached: usize,
    pub completed: bool,
    pub diverged: bool,
    pub steps: usize,
    pub fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionReport {
    pub theta: f64,
    pub waypoints: usize,
    pub trials: Vec<TrialSummary>,
}

impl MissionReport {
    pub fn total_collisions(&self, model: &str) -> usize {
        self.trials.iter().filter(|t| t.model == model).map(|t| t.collisions).sum()
    }

    pub fn waypoints_by_trial(&self, model: &str) -> Vec<usize> {
        self.trials.iter().filter(|t| t.model == model).map(|t| t.waypoints_reached).collect()
    }
}

/// Wall-clock cost of the online pieces at their nominal sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub refresh_window: usize,
    pub refresh_seconds: f64,
    pub refresh_limit: f64,
    pub mppi_rollouts: usize,
    pub mppi_horizon: usize,
    pub mppi_step_seconds: f64,
    pub control_period: f64,
    /// Set when the full-size planner step misses its control period.
    pub overrun: bool,
}

pub const REFRESH_LIMIT: f64 = 0.02;

/// Times one refresh over `window` transitions and one planner step at the
/// budget size, both on the basis model.
pub fn measure_budget(basis: &BasisSet, cfg: &ExperimentConfig, transitions: &[crate::state::Transition], world: &World) -> Result<BudgetReport> {
    let window = cfg.mission.window;
    let mut buf = AdaptationBuffer::new(window, Coefficients::new(vec![0.0; basis.k()]))?;
    for t in transitions.iter().take(window) {
        buf.push(*t);
    }
    let mut samples = Vec::new();
    for _ in 0..5 {
        let t0 = Instant::now();
        buf.refresh(basis)?;
        samples.push(t0.elapsed().as_secs_f64());
    }
    let mppi_cfg = MppiConfig {
        rollouts: cfg.budget_rollouts,
        horizon: cfg.budget_horizon,
        ..cfg.mission.mppi.clone()
    };
    let period = mppi_cfg.dt;
    let mut mppi = Mppi::new(mppi_cfg, cfg.mission.cost.clone(), cfg.seed)?;
    let model = buf.model(basis);
    let t0 = Instant::now();
    mppi.control_step(&model, &world.start, world, 0);
    let step = t0.elapsed().as_secs_f64();
    let overrun = step > period;
    if overrun {
        log::warn!(
            "planner step with {} rollouts x {} steps took {step:.3} s, over the {period} s control period",
            cfg.budget_rollouts,
            cfg.budget_horizon
        );
    }
    Ok(BudgetReport {
        refresh_window: buf.len(),
        refresh_seconds: median(&samples),
        refresh_limit: REFRESH_LIMIT,
        mppi_rollouts: cfg.budget_rollouts,
        mppi_horizon: cfg.budget_horizon,
        mppi_step_seconds: step,
        control_period: period,
        overrun,
    })
}

/// Runs every trial for both models on the mission terrain with the first
/// seed's checkpoints.
pub fn cmd_mission(cfg: &ExperimentConfig) -> Result<MissionReport> {
    let layout = Layout::new(&cfg.out);
    let world = world(cfg)?;
    world.validate()?;
    let truth = TruthModel::new(terrain_config(cfg)?, cfg.mission_theta);
    let (basis, node) = load_models(&layout, 0)?;
    let dir = layout.mission_dir();
    ensure_dir(&dir)?;

    let mut trials = Vec::new();
    let mut timings = Vec::new();
    for trial in 0..cfg.trials {
        let seed = cfg.run_seed(trial);
        for (name, planner) in [("fenode", Planner::Adaptive(&basis)), ("node", Planner::Fixed(&node))] {
            let r = run_trial(&world, &truth, planner, &cfg.mission, seed)?;
            let stem = format!("{name}_trial_{trial}");
            write_path_csv(&dir.join(format!("{stem}_path.csv")), &r.path, &r.controls)?;
            write_diagnostics(&dir.join(format!("{stem}_mppi.csv")), &r.diagnostics)?;
            if matches!(planner, Planner::Adaptive(_)) {
                write_adaptation_log(&dir.join(format!("{stem}_adapt.csv")), basis.k(), &r.adaptation)?;
            }
            let fallbacks = r.adaptation.iter().filter(|a| a.flag == crate::adapt::SolveFlag::Fallback).count();
            log::info!(
                "{stem}: {} collisions, {}/{} waypoints, {} steps{}",
                r.collisions,
                r.waypoints_reached,
                world.waypoints.len(),
                r.diagnostics.len(),
                if r.diverged { ", diverged" } else { "" }
            );
            let total: f64 = r.step_seconds.iter().sum();
            let worst = r.step_seconds.iter().cloned().fold(0.0, f64::max);
            timings.push((format!("mission.{stem}.total"), total));
            timings.push((format!("mission.{stem}.max_step"), worst));
            trials.push(TrialSummary {
                model: name.into(),
                trial,
                seed,
                collisions: r.collisions,
                waypoints_reached: r.waypoints_reached,
                completed: r.completed,
                diverged: r.diverged,
                steps: r.diagnostics.len(),
                fallbacks,
            });
        }
    }
    let report = MissionReport {
        theta: cfg.mission_theta,
        waypoints: world.waypoints.len(),
        trials,
    };
    write_json(&dir.join("summary.json"), &report)?;

    let scene = load_scene(&layout, cfg.mission_theta, cfg.eval_fraction)?;
    let budget = measure_budget(&basis, cfg, &scene.data.transitions, &world)?;
    write_json(&dir.join("budget.json"), &budget)?;
    timings.push(("budget.refresh".into(), budget.refresh_seconds));
    timings.push(("budget.mppi_step".into(), budget.mppi_step_seconds));
    let entries: Vec<(&str, f64)> = timings.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    record_timing(&layout, &entries)?;
    Ok(report)
}
