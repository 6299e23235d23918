//! Data-collection drivers: a waypoint-chasing proportional controller with
//! Ornstein-Uhlenbeck perturbations on both command channels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::{build_dataset, Dataset, Trajectory};
use crate::error::{Error, Result};
use crate::sim::terrain::TruthModel;
use crate::state::{wrap, Control, ControlLimits, State};

pub const LOG_RATE_HZ: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationConfig {
    /// Half-width of the square targets are drawn from (m).
    pub arena: f64,
    pub reach_radius: f64,
    /// Seconds before an unreached target is replaced.
    pub target_timeout: f64,
    pub k_heading: f64,
    pub cruise: f64,
    /// Stationary std-dev of the OU perturbation per channel.
    pub ou_sigma: [f64; 2],
    pub ou_tau: f64,
    pub limits: ControlLimits,
}

impl Default for ExcitationConfig {
    fn default() -> Self {
        ExcitationConfig {
            arena: 15.0,
            reach_radius: 1.5,
            target_timeout: 12.0,
            k_heading: 1.5,
            cruise: 1.6,
            ou_sigma: [0.6, 0.5],
            ou_tau: 1.0,
            limits: ControlLimits::default(),
        }
    }
}

/// Zero-mean OU process with exact discretization.
#[derive(Debug, Clone)]
pub(crate) struct OuNoise {
    value: [f64; 2],
    sigma: [f64; 2],
    tau: f64,
}

impl OuNoise {
    pub(crate) fn new(sigma: [f64; 2], tau: f64) -> Self {
        OuNoise {
            value: [0.0; 2],
            sigma,
            tau,
        }
    }

    pub(crate) fn sample(&mut self, rng: &mut impl Rng, dt: f64) -> [f64; 2] {
        let a = (-dt / self.tau).exp();
        for i in 0..2 {
            let n: f64 = rng.sample(StandardNormal);
            self.value[i] = a * self.value[i] + self.sigma[i] * (1.0 - a * a).sqrt() * n;
        }
        self.value
    }
}

fn draw_target(rng: &mut impl Rng, arena: f64) -> (f64, f64) {
    (rng.random_range(-arena..arena), rng.random_range(-arena..arena))
}

/// Drives the truth simulator for `duration` seconds and logs at 10 Hz.
pub fn collect_trajectory(
    truth: &TruthModel,
    cfg: &ExcitationConfig,
    duration: f64,
    seed: u64,
) -> Result<Trajectory> {
    if !(duration > 0.0) {
        return Err(Error::invalid(format!("duration must be positive, got {duration}")));
    }
    let dt = 1.0 / LOG_RATE_HZ;
    let samples = (duration * LOG_RATE_HZ).round() as usize;
    if samples < 2 {
        return Err(Error::invalid("duration too short for one transition"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise = OuNoise::new(cfg.ou_sigma, cfg.ou_tau);
    let mut x = State::new(0.0, 0.0, rng.random_range(-3.14..3.14), 0.0, 0.0, 0.0);
    let mut target = draw_target(&mut rng, cfg.arena);
    let mut target_age = 0.0;

    let mut times = Vec::with_capacity(samples);
    let mut states = Vec::with_capacity(samples);
    let mut controls = Vec::with_capacity(samples);
    for i in 0..samples {
        times.push(i as f64 * dt);
        states.push(x);
        if i + 1 == samples {
            break;
        }
        let (ex, ey) = (target.0 - x.px, target.1 - x.py);
        if ex.hypot(ey) < cfg.reach_radius || target_age > cfg.target_timeout {
            target = draw_target(&mut rng, cfg.arena);
            target_age = 0.0;
        }
        let heading_err = wrap(ey.atan2(ex) - x.psi);
        let n = noise.sample(&mut rng, dt);
        let u = cfg.limits.clamp(Control::new(
            cfg.cruise * heading_err.cos().max(0.0) + n[0],
            cfg.k_heading * heading_err + n[1],
        ));
        controls.push(u);
        x = truth.step(&x, u, dt);
        target_age += dt;
    }
    Trajectory::new(times, states, controls)
}

/// Collected trajectory plus its body-frame dataset.
pub fn collect_dataset(
    truth: &TruthModel,
    cfg: &ExcitationConfig,
    duration: f64,
    seed: u64,
) -> Result<(Trajectory, Dataset)> {
    let traj = collect_trajectory(truth, cfg, duration, seed)?;
    let ds = build_dataset(&traj, &terrain_id(truth.theta()), truth.theta())?;
    Ok((traj, ds))
}

pub fn terrain_id(theta: f64) -> String {
    format!("theta_{theta:.3}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::terrain::TerrainConfig;

    fn truth(theta: f64) -> TruthModel {
        TruthModel::new(TerrainConfig::default(), theta)
    }

    #[test]
    fn one_second_gives_ten_samples() {
        let (traj, ds) = collect_dataset(&truth(1.0), &ExcitationConfig::default(), 1.0, 3).unwrap();
        assert_eq!(traj.len(), 10);
        assert_eq!(ds.len(), 9);
        assert!(collect_dataset(&truth(1.0), &ExcitationConfig::default(), 0.0, 3).is_err());
    }

    #[test]
    fn same_seed_same_data() {
        let cfg = ExcitationConfig::default();
        let a = collect_dataset(&truth(0.5), &cfg, 20.0, 11).unwrap();
        let b = collect_dataset(&truth(0.5), &cfg, 20.0, 11).unwrap();
        assert_eq!(a, b);
        let c = collect_dataset(&truth(0.5), &cfg, 20.0, 12).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn controls_respect_limits() {
        let cfg = ExcitationConfig::default();
        let (traj, _) = collect_dataset(&truth(0.8), &cfg, 30.0, 5).unwrap();
        assert!(traj.controls.iter().all(|u| cfg.limits.contains(*u)));
    }

    fn vy_std(ds: &Dataset) -> f64 {
        let n = ds.len() as f64;
        let mean = ds.transitions.iter().map(|t| t.x.vy).sum::<f64>() / n;
        (ds.transitions.iter().map(|t| (t.x.vy - mean).powi(2)).sum::<f64>() / n).sqrt()
    }

    #[test]
    fn ice_shows_more_lateral_velocity() {
        let cfg = ExcitationConfig::default();
        let (_, ice) = collect_dataset(&truth(0.0), &cfg, 120.0, 1).unwrap();
        let (_, grip) = collect_dataset(&truth(1.0), &cfg, 120.0, 1).unwrap();
        assert!(vy_std(&ice) > vy_std(&grip), "{} vs {}", vy_std(&ice), vy_std(&grip));
    }
}
