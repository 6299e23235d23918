//! Offline evaluations: per-scene one-step error, window-size sweep, and
//! open-loop rollouts with recorded controls.

use std::io::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ensure_dir, load_models, load_scenes, median, quantile, record_timing, scene_role, write_json, ExperimentConfig, Layout, Scene};
use crate::baseline::NodeModel;
use crate::error::{Error, Result};
use crate::fenode::{combine, gram_from_increments, solve_alpha, BasisSet, TransitionBatch};
use crate::model::{AdaptedBasis, DynamicsModel};
use crate::neural_ode::IntervalBatch;
use crate::sim::terrain_id;
use crate::state::{compose_body_delta, state_error, State};

/// Squared error norm of every row.
pub fn row_errors(pred: &Array2<f64>, targets: &Array2<f64>) -> Vec<f64> {
    pred.rows()
        .into_iter()
        .zip(targets.rows())
        .map(|(p, t)| p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum())
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn write_lines(path: &Path, header: &str, lines: &[String]) -> Result<()> {
    if let Some(dir) = path.parent() {
        ensure_dir(dir)?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{header}")?;
    for l in lines {
        writeln!(f, "{l}")?;
    }
    f.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnestepEntry {
    pub run: usize,
    pub theta: f64,
    pub role: String,
    pub fe_mse: f64,
    pub node_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSummary {
    pub theta: f64,
    pub role: String,
    pub model: String,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnestepReport {
    pub entries: Vec<OnestepEntry>,
    pub summary: Vec<SceneSummary>,
}

/// One-step MSE of both models on a scene's query half; the basis
/// coefficients come from the support half.
pub fn onestep_scene(basis: &BasisSet, node: &NodeModel, scene: &Scene, cfg: &ExperimentConfig) -> Result<(f64, f64)> {
    let (support, query) = scene.eval_halves();
    let alpha = basis.fit(&support.transitions, &cfg.train.inner_product, cfg.train.regularization)?;
    let q = TransitionBatch::from_dataset(&query);
    let fe = AdaptedBasis { basis, alpha: &alpha };
    let fe_mse = mean(&row_errors(&fe.increments(&q.inputs), &q.targets));
    let node_mse = mean(&row_errors(&node.increments(&q.inputs), &q.targets));
    Ok((fe_mse, node_mse))
}

pub fn cmd_eval_onestep(cfg: &ExperimentConfig) -> Result<OnestepReport> {
    let layout = Layout::new(&cfg.out);
    let scenes = load_scenes(&layout, cfg)?;
    let t0 = std::time::Instant::now();
    let mut entries = Vec::new();
    for run in 0..cfg.seeds {
        let (basis, node) = load_models(&layout, run)?;
        for s in &scenes {
            let (fe_mse, node_mse) = onestep_scene(&basis, &node, s, cfg)?;
            entries.push(OnestepEntry {
                run,
                theta: s.theta,
                role: scene_role(cfg, s.theta).to_string(),
                fe_mse,
                node_mse,
            });
        }
    }
    let mut sorted: Vec<&Scene> = scenes.iter().collect();
    sorted.sort_by(|a, b| a.theta.total_cmp(&b.theta));
    let mut summary = Vec::new();
    for s in sorted {
        for model in ["fenode", "node"] {
            let v: Vec<f64> = entries
                .iter()
                .filter(|e| e.theta == s.theta)
                .map(|e| if model == "fenode" { e.fe_mse } else { e.node_mse })
                .collect();
            summary.push(SceneSummary {
                theta: s.theta,
                role: scene_role(cfg, s.theta).to_string(),
                model: model.to_string(),
                median: median(&v),
                min: v.iter().cloned().fold(f64::INFINITY, f64::min),
                max: v.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            });
        }
    }
    let report = OnestepReport { entries, summary };
    let dir = layout.eval_dir();
    write_json(&dir.join("onestep.json"), &report)?;
    let lines: Vec<String> = report
        .summary
        .iter()
        .map(|r| format!("{},{},{},{},{},{}", r.theta, r.role, r.model, r.median, r.min, r.max))
        .collect();
    write_lines(&dir.join("onestep.csv"), "theta,role,model,median_mse,min_mse,max_mse", &lines)?;
    record_timing(&layout, &[("eval.onestep", t0.elapsed().as_secs_f64())])?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub run: usize,
    /// Scene id, or `all` for the rows of every scene pooled.
    pub scene: String,
    /// Window length, or `full` for every transition before the query half.
    pub window: String,
    pub rows: usize,
    pub fe_mse: f64,
    pub node_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowCurve {
    pub window: String,
    pub fe_median: f64,
    pub node_median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub records: Vec<WindowRecord>,
    /// Median over seeds of the pooled MSE.
    pub curve: Vec<WindowCurve>,
}

/// Streaming errors over a scene's evaluation tail: each transition is
/// predicted with coefficients solved from the `n` transitions before it.
/// Returns per-row squared errors for every window and for the `full` fit,
/// plus the baseline's.
fn window_scene(basis: &BasisSet, node: &NodeModel, scene: &Scene, cfg: &ExperimentConfig) -> Result<(Vec<Vec<f64>>, Vec<f64>, Vec<f64>)> {
    let all = TransitionBatch::from_dataset(&scene.data);
    let incs = basis.increments(&all.inputs);
    let (ip, reg) = (&cfg.train.inner_product, cfg.train.regularization);
    let rows: Vec<usize> = (scene.cut..scene.data.len()).collect();
    let k = basis.k();
    let slice = |r: std::ops::Range<usize>| -> (Vec<Array2<f64>>, Array2<f64>) {
        let sel: Vec<usize> = r.collect();
        (
            incs.iter().map(|g| g.select(ndarray::Axis(0), &sel)).collect(),
            all.targets.select(ndarray::Axis(0), &sel),
        )
    };
    let predict = |alpha: &[f64], i: usize| -> f64 {
        let mut err = 0.0;
        for d in 0..all.targets.ncols() {
            let p: f64 = (0..k).map(|j| alpha[j] * incs[j][[i, d]]).sum();
            err += (p - all.targets[[i, d]]).powi(2);
        }
        err
    };

    let mut per_window = Vec::with_capacity(cfg.windows.len());
    for &n in &cfg.windows {
        let mut errs = Vec::with_capacity(rows.len());
        for &i in &rows {
            let (g, t) = slice(i.saturating_sub(n)..i);
            let sys = gram_from_increments(&g, &t, ip, reg)?;
            let alpha = solve_alpha(&sys)?;
            errs.push(predict(alpha.as_slice().unwrap(), i));
        }
        per_window.push(errs);
    }

    // Full: everything before the query half predicts the query half.
    let q0 = scene.query_start();
    let (g, t) = slice(0..q0);
    let alpha = solve_alpha(&gram_from_increments(&g, &t, ip, reg)?)?;
    let query = q0..scene.data.len();
    let (gq, tq) = slice(query);
    let full = row_errors(&combine(&gq, alpha.as_slice().unwrap()), &tq);

    let eval = TransitionBatch::new(&scene.data.transitions[scene.cut..]);
    let node_errs = row_errors(&node.increments(&eval.inputs), &eval.targets);
    Ok((per_window, full, node_errs))
}

pub fn cmd_eval_window(cfg: &ExperimentConfig) -> Result<WindowReport> {
    let layout = Layout::new(&cfg.out);
    let scenes = load_scenes(&layout, cfg)?;
    let t0 = std::time::Instant::now();
    let labels: Vec<String> = cfg.windows.iter().map(|n| n.to_string()).chain(["full".to_string()]).collect();
    let mut records = Vec::new();
    for run in 0..cfg.seeds {
        let (basis, node) = load_models(&layout, run)?;
        let mut pooled_fe = vec![Vec::new(); labels.len()];
        let mut pooled_node = Vec::new();
        let mut pooled_node_query = Vec::new();
        for s in &scenes {
            let (per_window, full, node_errs) = window_scene(&basis, &node, s, cfg)?;
            let node_query = node_errs[s.query_start() - s.cut..].to_vec();
            for (w, errs) in per_window.iter().chain([&full]).enumerate() {
                let node_ref = if w < cfg.windows.len() { &node_errs } else { &node_query };
                records.push(WindowRecord {
                    run,
                    scene: terrain_id(s.theta),
                    window: labels[w].clone(),
                    rows: errs.len(),
                    fe_mse: mean(errs),
                    node_mse: mean(node_ref),
                });
                pooled_fe[w].extend_from_slice(errs);
            }
            pooled_node.extend_from_slice(&node_errs);
            pooled_node_query.extend_from_slice(&node_query);
        }
        for (w, errs) in pooled_fe.iter().enumerate() {
            let node_ref = if w < cfg.windows.len() { &pooled_node } else { &pooled_node_query };
            records.push(WindowRecord {
                run,
                scene: "all".into(),
                window: labels[w].clone(),
                rows: errs.len(),
                fe_mse: mean(errs),
                node_mse: mean(node_ref),
            });
        }
    }
    let curve = labels
        .iter()
        .map(|l| {
            let pick = |f: fn(&WindowRecord) -> f64| {
                let v: Vec<f64> = records.iter().filter(|r| r.scene == "all" && &r.window == l).map(f).collect();
                median(&v)
            };
            WindowCurve {
                window: l.clone(),
                fe_median: pick(|r| r.fe_mse),
                node_median: pick(|r| r.node_mse),
            }
        })
        .collect();
    let report = WindowReport { records, curve };
    let dir = layout.eval_dir();
    write_json(&dir.join("window.json"), &report)?;
    let lines: Vec<String> = report
        .curve
        .iter()
        .map(|c| format!("{},{},{}", c.window, c.fe_median, c.node_median))
        .collect();
    write_lines(&dir.join("window.csv"), "window,fenode_median_mse,node_median_mse", &lines)?;
    record_timing(&layout, &[("eval.window", t0.elapsed().as_secs_f64())])?;
    Ok(report)
}

/// Propagates every start state through `steps` recorded controls and
/// returns accumulated squared state error, one row per start, `steps + 1`
/// columns (column 0 is zero).
pub fn accumulated_errors(model: &dyn DynamicsModel, scene: &Scene, starts: &[usize], steps: usize) -> Result<Array2<f64>> {
    let traj = &scene.traj;
    if let Some(&s) = starts.iter().find(|&&s| s + steps >= traj.len()) {
        return Err(Error::invalid(format!("rollout from {s} runs past the end of the trajectory")));
    }
    let mut x: Vec<State> = starts.iter().map(|&s| traj.states[s]).collect();
    let mut acc = Array2::zeros((starts.len(), steps + 1));
    for t in 0..steps {
        let rows: Vec<(State, _, f64)> = starts
            .iter()
            .zip(&x)
            .map(|(&s, xi)| (xi.bodyified(), traj.controls[s + t], traj.times[s + t + 1] - traj.times[s + t]))
            .collect();
        let batch = IntervalBatch::from_rows(rows.iter().map(|(b, u, dt)| (b, *u, *dt)));
        let inc = model.increments(&batch);
        for (i, &s) in starts.iter().enumerate() {
            let mut d = [0.0; 6];
            d.iter_mut().zip(inc.row(i)).for_each(|(a, b)| *a = *b);
            x[i] = compose_body_delta(&x[i], &d);
            let e: f64 = state_error(&x[i], &traj.states[s + t + 1]).iter().map(|v| v * v).sum();
            // A diverged prediction keeps an infinite error rather than NaN.
            let e = if e.is_finite() { e } else { f64::INFINITY };
            acc[[i, t + 1]] = acc[[i, t]] + e;
        }
    }
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutCurve {
    pub theta: f64,
    pub role: String,
    pub model: String,
    pub dt: f64,
    pub median: Vec<f64>,
    pub q10: Vec<f64>,
    pub q90: Vec<f64>,
    /// Per-seed median of the final accumulated error.
    pub final_by_seed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutReport {
    pub curves: Vec<RolloutCurve>,
}

/// Start indices for one seed: distinct, inside the evaluation tail, and far
/// enough from the end for a full rollout.
pub fn rollout_starts(scene: &Scene, count: usize, steps: usize, seed: u64) -> Result<Vec<usize>> {
    let last = scene.traj.len().saturating_sub(steps + 1);
    if last < scene.cut {
        return Err(Error::Config(format!(
            "evaluation tail of {} is shorter than the rollout horizon",
            terrain_id(scene.theta)
        )));
    }
    let span = last - scene.cut + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0dd5_7a27);
    let mut idx: Vec<usize> = if count <= span {
        sample(&mut rng, span, count).into_iter().collect()
    } else {
        (0..count).map(|i| i % span).collect()
    };
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| scene.cut + i).collect())
}

pub fn cmd_eval_rollout(cfg: &ExperimentConfig) -> Result<RolloutReport> {
    let layout = Layout::new(&cfg.out);
    let scenes = load_scenes(&layout, cfg)?;
    let t0 = std::time::Instant::now();
    let holdouts: Vec<&Scene> = [cfg.interp_scene, cfg.extrap_scene]
        .iter()
        .map(|&t| scenes.iter().find(|s| super::config::same(s.theta, t)).unwrap())
        .collect();
    let steps = cfg.rollout_steps;
    // [scene][model] -> rows of accumulated error over all seeds
    let mut acc: Vec<[Vec<Vec<f64>>; 2]> = vec![[Vec::new(), Vec::new()]; holdouts.len()];
    let mut finals: Vec<[Vec<f64>; 2]> = vec![[Vec::new(), Vec::new()]; holdouts.len()];
    for run in 0..cfg.seeds {
        let (basis, node) = load_models(&layout, run)?;
        for (si, s) in holdouts.iter().enumerate() {
            let starts = rollout_starts(s, cfg.eval_rollouts, steps, cfg.run_seed(run))?;
            // Coefficients come from the scene's data before the evaluation tail.
            let alpha = basis.fit(&s.train().transitions, &cfg.train.inner_product, cfg.train.regularization)?;
            let fe = AdaptedBasis { basis: &basis, alpha: &alpha };
            let models: [&dyn DynamicsModel; 2] = [&fe, &node];
            for (mi, m) in models.iter().enumerate() {
                let a = accumulated_errors(*m, s, &starts, steps)?;
                let last: Vec<f64> = a.column(steps).to_vec();
                finals[si][mi].push(median(&last));
                acc[si][mi].extend(a.rows().into_iter().map(|r| r.to_vec()));
            }
        }
    }
    let dt = holdouts[0].traj.times[1] - holdouts[0].traj.times[0];
    let mut curves = Vec::new();
    for (si, s) in holdouts.iter().enumerate() {
        for (mi, model) in ["fenode", "node"].iter().enumerate() {
            let rows = &acc[si][mi];
            let col = |t: usize| rows.iter().map(|r| r[t]).collect::<Vec<f64>>();
            curves.push(RolloutCurve {
                theta: s.theta,
                role: scene_role(cfg, s.theta).to_string(),
                model: model.to_string(),
                dt,
                median: (0..=steps).map(|t| median(&col(t))).collect(),
                q10: (0..=steps).map(|t| quantile(&col(t), 0.1)).collect(),
                q90: (0..=steps).map(|t| quantile(&col(t), 0.9)).collect(),
                final_by_seed: finals[si][mi].clone(),
            });
        }
    }
    let report = RolloutReport { curves };
    let dir = layout.eval_dir();
    write_json(&dir.join("rollout.json"), &report)?;
    let mut lines = Vec::new();
    for c in &report.curves {
        for t in 0..=steps {
            lines.push(format!("{},{},{},{},{},{}", c.theta, c.model, t as f64 * c.dt, c.median[t], c.q10[t], c.q90[t]));
        }
    }
    write_lines(&dir.join("rollout.csv"), "theta,model,time,median,q10,q90", &lines)?;
    record_timing(&layout, &[("eval.rollout", t0.elapsed().as_secs_f64())])?;
    Ok(report)
}
