//! Experiment configuration file.
//!
//! Every key is optional; unknown keys are rejected so typos surface early.
//!
//! ```text
//! seed = 0                       # base seed; run i uses seed + i
//! seeds = 10                     # training seeds
//! out = results
//! terrain_config = terrain.cfg   # optional endpoint-curve file
//! world = tree_field.world       # optional mission world file
//!
//! scenes = 0 0.25 0.5 0.75 0.812 0.875 0.939 1
//! train_scenes = 0.25 0.75 0.812 0.875 0.939 1
//! interp_scene = 0.5
//! extrap_scene = 0
//! collect.duration = 120         # seconds per scene
//! collect.eval_fraction = 0.3    # tail of every scene kept for evaluation
//!
//! train.k = 8
//! train.hidden = 32 32
//! train.epochs = 300
//! train.steps_per_epoch = 1
//! train.batch = 64               # transitions per scene per step
//! train.support_fraction = 0.5
//! train.lr = 0.01
//! train.lr_final = 0.001
//! train.clip = 10                # 0 disables
//! train.val_samples = 64
//! train.reg_scale = 1e-6         # lambda = reg_scale * trace(G) / k
//! train.ip_weights = 1 1 1 1 1 1
//!
//! eval.windows = 1 2 5 10 20 50 100 200
//! eval.rollouts = 100
//! eval.rollout_steps = 100
//!
//! mission.theta = 0
//! mission.trials = 4
//! mission.max_steps = 600
//! mission.window = 100
//! mission.refresh_period = 1     # 0 solves once per mission
//! mission.bootstrap = 2          # seconds of open-loop excitation
//! mppi.rollouts = 64
//! mppi.horizon = 80
//! mppi.lambda = 1
//! mppi.sigma = 0.5 0.5
//! mppi.sg_window = 5
//! mppi.sg_order = 3
//! cost.waypoint = 10
//! cost.obstacle = 10000
//! cost.inflation = 0.3
//! cost.terminal = 10
//! cost.beta = 0 0
//! budget.rollouts = 1000         # planner size timed against the control period
//! budget.horizon = 100
//! ```

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::fenode::{InnerProduct, Regularization, TrainConfig};
use crate::harness::mission::MissionConfig;
use crate::kv::{Entry, KvFile};
use crate::mppi::{CostSpec, MppiConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub seeds: usize,
    pub out: PathBuf,
    pub terrain_config: Option<PathBuf>,
    pub world: Option<PathBuf>,
    pub scenes: Vec<f64>,
    pub train_scenes: Vec<f64>,
    pub interp_scene: f64,
    pub extrap_scene: f64,
    pub duration: f64,
    pub eval_fraction: f64,
    pub k: usize,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    pub val_samples: usize,
    pub windows: Vec<usize>,
    pub eval_rollouts: usize,
    pub rollout_steps: usize,
    pub mission_theta: f64,
    pub trials: usize,
    pub mission: MissionConfig,
    pub budget_rollouts: usize,
    pub budget_horizon: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mission = MissionConfig {
            mppi: MppiConfig {
                rollouts: 64,
                horizon: 80,
                ..MppiConfig::default()
            },
            cost: CostSpec {
                waypoint_weight: 10.0,
                obstacle_weight: 10000.0,
                inflation: 0.3,
                terminal_weight: 10.0,
                beta: [0.0, 0.0],
            },
            max_steps: 600,
            bootstrap_seconds: 2.0,
            window: 100,
            refresh_period: 1,
        };
        ExperimentConfig {
            seed: 0,
            seeds: 10,
            out: PathBuf::from("results"),
            terrain_config: None,
            world: None,
            scenes: vec![0.0, 0.25, 0.5, 0.75, 0.812, 0.875, 0.939, 1.0],
            train_scenes: vec![0.25, 0.75, 0.812, 0.875, 0.939, 1.0],
            interp_scene: 0.5,
            extrap_scene: 0.0,
            duration: 120.0,
            eval_fraction: 0.3,
            k: 8,
            hidden: vec![32, 32],
            train: TrainConfig {
                lr: 1e-2,
                lr_final: 1e-3,
                ..TrainConfig::default()
            },
            val_samples: 64,
            windows: vec![1, 2, 5, 10, 20, 50, 100, 200],
            eval_rollouts: 100,
            rollout_steps: 100,
            mission_theta: 0.0,
            trials: 4,
            mission,
            budget_rollouts: 1000,
            budget_horizon: 100,
        }
    }
}

const KEYS: &[&str] = &[
    "seed",
    "seeds",
    "out",
    "terrain_config",
    "world",
    "scenes",
    "train_scenes",
    "interp_scene",
    "extrap_scene",
    "collect.duration",
    "collect.eval_fraction",
    "train.k",
    "train.hidden",
    "train.epochs",
    "train.steps_per_epoch",
    "train.batch",
    "train.support_fraction",
    "train.lr",
    "train.lr_final",
    "train.clip",
    "train.val_samples",
    "train.reg_scale",
    "train.ip_weights",
    "eval.windows",
    "eval.rollouts",
    "eval.rollout_steps",
    "mission.theta",
    "mission.trials",
    "mission.max_steps",
    "mission.window",
    "mission.refresh_period",
    "mission.bootstrap",
    "mppi.rollouts",
    "mppi.horizon",
    "mppi.lambda",
    "mppi.sigma",
    "mppi.sg_window",
    "mppi.sg_order",
    "cost.waypoint",
    "cost.obstacle",
    "cost.inflation",
    "cost.terminal",
    "cost.beta",
    "budget.rollouts",
    "budget.horizon",
];

fn numbers(kv: &KvFile, key: &str) -> Result<Option<Vec<f64>>> {
    kv.get(key).map(|e| kv.numbers(e)).transpose()
}

fn counts(kv: &KvFile, e: &Entry) -> Result<Vec<usize>> {
    kv.numbers(e)?
        .into_iter()
        .map(|v| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Parse {
                    file: kv.name.clone(),
                    line: e.line,
                    reason: format!("`{}` expects whole numbers", e.key),
                })
            }
        })
        .collect()
}

fn pair(kv: &KvFile, key: &str, slot: &mut [f64; 2]) -> Result<()> {
    if let Some(v) = numbers(kv, key)? {
        if v.len() != 2 {
            return Err(Error::Config(format!("`{key}` needs two values")));
        }
        *slot = [v[0], v[1]];
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        if let Some(e) = kv.unknown_keys(KEYS).first() {
            return Err(Error::Parse {
                file: kv.name.clone(),
                line: e.line,
                reason: format!("unknown key `{}`", e.key),
            });
        }
        let mut c = ExperimentConfig::default();
        kv.set("seed", &mut c.seed)?;
        kv.set("seeds", &mut c.seeds)?;
        if let Some(e) = kv.get("out") {
            c.out = PathBuf::from(&e.value);
        }
        c.terrain_config = kv.get("terrain_config").map(|e| PathBuf::from(&e.value));
        c.world = kv.get("world").map(|e| PathBuf::from(&e.value));
        if let Some(v) = numbers(kv, "scenes")? {
            c.scenes = v;
        }
        if let Some(v) = numbers(kv, "train_scenes")? {
            c.train_scenes = v;
        }
        kv.set("interp_scene", &mut c.interp_scene)?;
        kv.set("extrap_scene", &mut c.extrap_scene)?;
        kv.set("collect.duration", &mut c.duration)?;
        kv.set("collect.eval_fraction", &mut c.eval_fraction)?;

        kv.set("train.k", &mut c.k)?;
        if let Some(e) = kv.get("train.hidden") {
            c.hidden = counts(kv, e)?;
        }
        let t = &mut c.train;
        kv.set("train.epochs", &mut t.epochs)?;
        kv.set("train.steps_per_epoch", &mut t.steps_per_epoch)?;
        kv.set("train.batch", &mut t.batch_per_dataset)?;
        kv.set("train.support_fraction", &mut t.support_fraction)?;
        kv.set("train.lr", &mut t.lr)?;
        kv.set("train.lr_final", &mut t.lr_final)?;
        if let Some(e) = kv.get("train.clip") {
            let v: f64 = kv.parse_value(e)?;
            t.clip_norm = (v > 0.0).then_some(v);
        }
        if let Some(e) = kv.get("train.reg_scale") {
            t.regularization = Regularization::TraceScaled(kv.parse_value(e)?);
        }
        if let Some(v) = numbers(kv, "train.ip_weights")? {
            let w: [f64; 6] = v
                .try_into()
                .map_err(|_| Error::Config("`train.ip_weights` needs six values".into()))?;
            t.inner_product = InnerProduct { weights: w };
        }
        kv.set("train.val_samples", &mut c.val_samples)?;

        if let Some(e) = kv.get("eval.windows") {
            c.windows = counts(kv, e)?;
        }
        kv.set("eval.rollouts", &mut c.eval_rollouts)?;
        kv.set("eval.rollout_steps", &mut c.rollout_steps)?;

        kv.set("mission.theta", &mut c.mission_theta)?;
        kv.set("mission.trials", &mut c.trials)?;
        let m = &mut c.mission;
        kv.set("mission.max_steps", &mut m.max_steps)?;
        kv.set("mission.window", &mut m.window)?;
        if let Some(e) = kv.get("mission.refresh_period") {
            let p: usize = kv.parse_value(e)?;
            m.refresh_period = if p == 0 { usize::MAX } else { p };
        }
        kv.set("mission.bootstrap", &mut m.bootstrap_seconds)?;
        kv.set("mppi.rollouts", &mut m.mppi.rollouts)?;
        kv.set("mppi.horizon", &mut m.mppi.horizon)?;
        kv.set("mppi.lambda", &mut m.mppi.lambda)?;
        pair(kv, "mppi.sigma", &mut m.mppi.sigma)?;
        kv.set("mppi.sg_window", &mut m.mppi.sg_window)?;
        kv.set("mppi.sg_order", &mut m.mppi.sg_order)?;
        kv.set("cost.waypoint", &mut m.cost.waypoint_weight)?;
        kv.set("cost.obstacle", &mut m.cost.obstacle_weight)?;
        kv.set("cost.inflation", &mut m.cost.inflation)?;
        kv.set("cost.terminal", &mut m.cost.terminal_weight)?;
        pair(kv, "cost.beta", &mut m.cost.beta)?;
        kv.set("budget.rollouts", &mut c.budget_rollouts)?;
        kv.set("budget.horizon", &mut c.budget_horizon)?;
        c.validate()?;
        Ok(c)
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        let mut c = Self::from_kv(&KvFile::read(path)?)?;
        // Relative file references resolve against the config's directory.
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut c.terrain_config, &mut c.world].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.seeds == 0 {
            return bad("seeds must be at least 1");
        }
        if self.train_scenes.len() < 2 {
            return bad("need at least two training scenes");
        }
        for s in [self.interp_scene, self.extrap_scene] {
            if self.train_scenes.iter().any(|t| same(*t, s)) {
                return bad("held-out scenes must not be training scenes");
            }
        }
        for s in self.train_scenes.iter().chain([&self.interp_scene, &self.extrap_scene, &self.mission_theta]) {
            if !self.scenes.iter().any(|t| same(*t, *s)) {
                return Err(Error::Config(format!("scene {s} is not in the scene list")));
            }
        }
        if !(self.duration > 0.0) || !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            return bad("collect.duration must be positive and collect.eval_fraction in (0, 1)");
        }
        if self.k == 0 || self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("train.k and train.hidden must be positive");
        }
        if self.train.epochs == 0 || self.train.steps_per_epoch == 0 || self.train.batch_per_dataset < 2 {
            return bad("training budget must be positive with at least two transitions per batch");
        }
        if self.windows.is_empty() || self.windows.contains(&0) {
            return bad("eval.windows must be positive");
        }
        if self.eval_rollouts == 0 || self.rollout_steps == 0 || self.trials == 0 {
            return bad("evaluation counts must be positive");
        }
        self.mission.mppi.validate()
    }

    /// Seed of training run `i`.
    pub fn run_seed(&self, i: usize) -> u64 {
        self.seed.wrapping_add(i as u64)
    }

    /// Seed used to collect scene `theta`.
    pub fn collect_seed(&self, theta: f64) -> u64 {
        self.seed.wrapping_mul(1_000_003).wrapping_add((theta * 1000.0).round() as u64 + 17)
    }
}

pub fn same(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-9
}
