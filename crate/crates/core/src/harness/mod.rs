//! Experiment suite: data collection, training, evaluations, missions, report.
//!
//! Every command reads its inputs from and writes its outputs under one
//! output directory, so the steps can run as separate processes.

pub mod checks;
pub mod config;
pub mod eval;
pub mod mission;
pub mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baseline::{self, NodeModel};
use crate::dataset::{build_dataset, Dataset, DatasetMeta, Trajectory};
use crate::error::{Error, Result};
use crate::fenode::train::write_loss_csv;
use crate::fenode::{self, BasisSet, LossRecord, ValidationSet};
use crate::sim::{collect_trajectory, terrain_id, ExcitationConfig, TerrainConfig, TruthModel, World};

pub use config::ExperimentConfig;
pub use eval::{cmd_eval_onestep, cmd_eval_rollout, cmd_eval_window};
pub use mission::cmd_mission;
pub use report::cmd_report;

/// File layout under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn scene_csv(&self, theta: f64) -> PathBuf {
        self.data_dir().join(format!("{}.csv", terrain_id(theta)))
    }

    pub fn scene_meta(&self, theta: f64) -> PathBuf {
        self.data_dir().join(format!("{}.meta", terrain_id(theta)))
    }

    pub fn model_dir(&self, run: usize) -> PathBuf {
        self.root.join("models").join(format!("seed_{run:02}"))
    }

    pub fn fe_checkpoint(&self, run: usize) -> PathBuf {
        self.model_dir(run).join("fe.json")
    }

    pub fn node_checkpoint(&self, run: usize) -> PathBuf {
        self.model_dir(run).join("node.json")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn mission_dir(&self) -> PathBuf {
        self.root.join("mission")
    }

    /// Wall-clock measurements live apart from the deterministic outputs.
    pub fn timing(&self) -> PathBuf {
        self.root.join("timing.json")
    }
}

pub(crate) fn ensure_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display()))))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        ensure_dir(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Merges wall-clock entries into `timing.json`.
pub(crate) fn record_timing(layout: &Layout, entries: &[(&str, f64)]) -> Result<()> {
    let path = layout.timing();
    let mut map: BTreeMap<String, f64> = if path.exists() { read_json(&path)? } else { BTreeMap::new() };
    for (k, v) in entries {
        map.insert(k.to_string(), *v);
    }
    write_json(&path, &map)
}

pub(crate) fn terrain_config(cfg: &ExperimentConfig) -> Result<TerrainConfig> {
    match &cfg.terrain_config {
        Some(p) => TerrainConfig::read(p),
        None => Ok(TerrainConfig::default()),
    }
}

pub(crate) fn world(cfg: &ExperimentConfig) -> Result<World> {
    match &cfg.world {
        Some(p) => World::read(p),
        None => Ok(World::tree_field()),
    }
}

/// Collected scene: the logged trajectory, its transitions, and the index
/// where the evaluation tail starts.
#[derive(Debug, Clone)]
pub struct Scene {
    pub theta: f64,
    pub traj: Trajectory,
    pub data: Dataset,
    pub cut: usize,
}

impl Scene {
    pub fn train(&self) -> Dataset {
        self.data.slice(0..self.cut)
    }

    pub fn eval(&self) -> Dataset {
        self.data.slice(self.cut..self.data.len())
    }

    /// Index where the second half of the evaluation tail starts.
    pub fn query_start(&self) -> usize {
        self.cut + (self.data.len() - self.cut) / 2
    }

    /// Support (first half) and query (second half) of the evaluation tail.
    pub fn eval_halves(&self) -> (Dataset, Dataset) {
        let q = self.query_start();
        (self.data.slice(self.cut..q), self.data.slice(q..self.data.len()))
    }
}

pub fn load_scene(layout: &Layout, theta: f64, eval_fraction: f64) -> Result<Scene> {
    let csv = layout.scene_csv(theta);
    if !csv.exists() {
        return Err(Error::MissingInput(csv));
    }
    let traj = Trajectory::read_csv(&csv)?;
    let data = build_dataset(&traj, &terrain_id(theta), theta)?;
    let n = data.len();
    if n < 4 {
        return Err(Error::invalid(format!("{} holds too few transitions", csv.display())));
    }
    let cut = n - ((n as f64 * eval_fraction).round() as usize).clamp(2, n - 1);
    Ok(Scene { theta, traj, data, cut })
}

pub fn load_scenes(layout: &Layout, cfg: &ExperimentConfig) -> Result<Vec<Scene>> {
    cfg.scenes.iter().map(|&t| load_scene(layout, t, cfg.eval_fraction)).collect()
}

pub(crate) fn scene_role(cfg: &ExperimentConfig, theta: f64) -> &'static str {
    use config::same;
    if same(theta, cfg.interp_scene) {
        "interpolation"
    } else if same(theta, cfg.extrap_scene) {
        "extrapolation"
    } else if cfg.train_scenes.iter().any(|t| same(*t, theta)) {
        "train"
    } else {
        "other"
    }
}

/// Drives the simulator on every scene and writes CSV + metadata sidecars.
pub fn cmd_collect(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let layout = Layout::new(&cfg.out);
    ensure_dir(&layout.data_dir())?;
    let tc = terrain_config(cfg)?;
    let excitation = ExcitationConfig::default();
    let mut written = Vec::new();
    for &theta in &cfg.scenes {
        let seed = cfg.collect_seed(theta);
        let truth = TruthModel::new(tc.clone(), theta);
        let traj = collect_trajectory(&truth, &excitation, cfg.duration, seed)?;
        let csv = layout.scene_csv(theta);
        traj.write_csv(&csv)?;
        DatasetMeta {
            terrain_id: terrain_id(theta),
            theta,
            seed,
            duration: cfg.duration,
        }
        .write(&layout.scene_meta(theta))?;
        log::info!("collected {} ({} samples)", csv.display(), traj.len());
        written.push(csv);
    }
    Ok(written)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub run: usize,
    pub seed: u64,
    pub fe_first_train_mse: f64,
    pub fe_last_train_mse: f64,
    pub node_first_train_mse: f64,
    pub node_last_train_mse: f64,
}

/// Trains one basis set and one baseline per seed on the training scenes.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<Vec<TrainSummary>> {
    let layout = Layout::new(&cfg.out);
    let scenes = load_scenes(&layout, cfg)?;
    let find = |t: f64| scenes.iter().find(|s| config::same(s.theta, t)).unwrap();
    let train_sets: Vec<Dataset> = cfg.train_scenes.iter().map(|&t| find(t).train()).collect();
    let interp = ValidationSet::from_dataset(&find(cfg.interp_scene).eval(), cfg.val_samples);
    let extrap = ValidationSet::from_dataset(&find(cfg.extrap_scene).eval(), cfg.val_samples);

    let mut summaries = Vec::new();
    let mut timings = Vec::new();
    for run in 0..cfg.seeds {
        let seed = cfg.run_seed(run);
        let tc = fenode::TrainConfig {
            seed,
            ..cfg.train.clone()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut basis = BasisSet::init(cfg.k, &cfg.hidden, &mut rng)?;
        let mut node = NodeModel::init(&cfg.hidden, &mut rng)?;

        let t0 = Instant::now();
        let fe_hist = fenode::train(&mut basis, &train_sets, Some(&interp), Some(&extrap), &tc)?;
        let fe_secs = t0.elapsed().as_secs_f64();
        let t0 = Instant::now();
        let node_hist = baseline::train(&mut node, &train_sets, Some(&interp), Some(&extrap), &tc)?;
        let node_secs = t0.elapsed().as_secs_f64();

        let dir = layout.model_dir(run);
        ensure_dir(&dir)?;
        basis.save(&layout.fe_checkpoint(run))?;
        node.save(&layout.node_checkpoint(run))?;
        write_loss_csv(&dir.join("fe_loss.csv"), &fe_hist)?;
        write_loss_csv(&dir.join("node_loss.csv"), &node_hist)?;
        let first_last = |h: &[LossRecord]| (h[0].train_mse, h[h.len() - 1].train_mse);
        let (ff, fl) = first_last(&fe_hist);
        let (nf, nl) = first_last(&node_hist);
        log::info!("seed {seed}: fe {ff:.3e} -> {fl:.3e} ({fe_secs:.1}s), node {nf:.3e} -> {nl:.3e} ({node_secs:.1}s)");
        summaries.push(TrainSummary {
            run,
            seed,
            fe_first_train_mse: ff,
            fe_last_train_mse: fl,
            node_first_train_mse: nf,
            node_last_train_mse: nl,
        });
        timings.push((format!("train.fe.seed_{run:02}"), fe_secs));
        timings.push((format!("train.node.seed_{run:02}"), node_secs));
    }
    write_json(&layout.root.join("models").join("train_summary.json"), &summaries)?;
    let entries: Vec<(&str, f64)> = timings.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    record_timing(&layout, &entries)?;
    Ok(summaries)
}

/// Loads both checkpoints of training run `run`.
pub fn load_models(layout: &Layout, run: usize) -> Result<(BasisSet, NodeModel)> {
    Ok((BasisSet::load(&layout.fe_checkpoint(run))?, NodeModel::load(&layout.node_checkpoint(run))?))
}

/// Median of a non-empty slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Linear-interpolated quantile, `q` in [0, 1].
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}
