//! Friction-parameterized terrain family and the analytic skid-steer slip model
//! that serves as ground truth.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kv::{KvFile, KvWriter};
use crate::ode::Rk4;
use crate::state::{wrap, Control, Delta, State};

/// Five-parameter tire friction curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrictionCurve {
    pub extremum_slip: f64,
    pub extremum_value: f64,
    pub asymptote_slip: f64,
    pub asymptote_value: f64,
    pub stiffness: f64,
}

impl FrictionCurve {
    pub const fn new(
        extremum_slip: f64,
        extremum_value: f64,
        asymptote_slip: f64,
        asymptote_value: f64,
        stiffness: f64,
    ) -> Self {
        FrictionCurve {
            extremum_slip,
            extremum_value,
            asymptote_slip,
            asymptote_value,
            stiffness,
        }
    }

    fn to_array(self) -> [f64; 5] {
        [
            self.extremum_slip,
            self.extremum_value,
            self.asymptote_slip,
            self.asymptote_value,
            self.stiffness,
        ]
    }

    fn from_array(a: [f64; 5]) -> Self {
        FrictionCurve::new(a[0], a[1], a[2], a[3], a[4])
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.to_array();
        if a.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid(format!("friction parameters must be positive: {self:?}")));
        }
        if self.asymptote_slip < self.extremum_slip || self.asymptote_value > self.extremum_value {
            return Err(Error::invalid(format!("asymptote must lie beyond the extremum: {self:?}")));
        }
        Ok(())
    }

    /// Element-wise `theta * a + (1 - theta) * b`.
    pub fn mix(a: &FrictionCurve, b: &FrictionCurve, theta: f64) -> FrictionCurve {
        let (a, b) = (a.to_array(), b.to_array());
        let mut out = [0.0; 5];
        for i in 0..5 {
            out[i] = theta * a[i] + (1.0 - theta) * b[i];
        }
        FrictionCurve::from_array(out)
    }

    /// Peak traction scale used by the slip model.
    pub fn grip(&self) -> f64 {
        self.extremum_value * self.stiffness
    }
}

/// Endpoint curves and actuation gains defining the terrain family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerrainConfig {
    /// "Normal friction" endpoint (theta = 1).
    pub high: FrictionCurve,
    /// "Low friction" endpoint (theta = 0).
    pub low: FrictionCurve,
    pub k_acc: f64,
    pub k_lat: f64,
    pub k_yaw: f64,
    pub g_eff: f64,
    pub g_yaw: f64,
}

impl Default for TerrainConfig {
    fn default() -> Self {
        TerrainConfig {
            high: FrictionCurve::new(0.4, 1.0, 0.8, 0.75, 1.0),
            low: FrictionCurve::new(0.4, 0.15, 0.8, 0.10, 0.2),
            k_acc: 2.5,
            k_lat: 3.0,
            k_yaw: 4.0,
            g_eff: 3.0,
            g_yaw: 4.0,
        }
    }
}

const CURVE_KEYS: [&str; 5] = [
    "extremum_slip",
    "extremum_value",
    "asymptote_slip",
    "asymptote_value",
    "stiffness",
];

impl TerrainConfig {
    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        let mut cfg = TerrainConfig::default();
        for (prefix, curve) in [("high", &mut cfg.high), ("low", &mut cfg.low)] {
            let mut a = curve.to_array();
            for (slot, key) in a.iter_mut().zip(CURVE_KEYS) {
                kv.set(&format!("{prefix}.{key}"), slot)?;
            }
            *curve = FrictionCurve::from_array(a);
        }
        kv.set("k_acc", &mut cfg.k_acc)?;
        kv.set("k_lat", &mut cfg.k_lat)?;
        kv.set("k_yaw", &mut cfg.k_yaw)?;
        kv.set("g_eff", &mut cfg.g_eff)?;
        kv.set("g_yaw", &mut cfg.g_yaw)?;
        cfg.high.validate()?;
        cfg.low.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_kv(&KvFile::read(path)?)
    }

    pub fn to_kv(&self) -> String {
        let mut w = KvWriter::new();
        w.comment("terrain family endpoints and slip-model gains");
        for (prefix, curve) in [("high", &self.high), ("low", &self.low)] {
            for (v, key) in curve.to_array().iter().zip(CURVE_KEYS) {
                w.put(&format!("{prefix}.{key}"), v);
            }
        }
        w.put("k_acc", self.k_acc)
            .put("k_lat", self.k_lat)
            .put("k_yaw", self.k_yaw)
            .put("g_eff", self.g_eff)
            .put("g_yaw", self.g_yaw);
        w.finish()
    }

    /// Terrain at mixing fraction `theta`. Values outside `[0, 1]` extrapolate
    /// the family and are only meant for synthetic tests.
    pub fn terrain(&self, theta: f64) -> TerrainParams {
        TerrainParams {
            theta,
            forward: FrictionCurve::mix(&self.high, &self.low, theta),
            lateral: FrictionCurve::mix(&self.high, &self.low, theta),
        }
    }

    /// Normalized forward and lateral traction multipliers, both 1 at theta = 1.
    pub fn traction(&self, terrain: &TerrainParams) -> (f64, f64) {
        let norm = self.high.grip();
        (terrain.forward.grip() / norm, terrain.lateral.grip() / norm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerrainParams {
    pub theta: f64,
    pub forward: FrictionCurve,
    pub lateral: FrictionCurve,
}

/// Terrain at `theta` under the default endpoint constants.
pub fn terrain_from_theta(theta: f64) -> TerrainParams {
    TerrainConfig::default().terrain(theta)
}

#[inline]
fn sat(v: f64, limit: f64) -> f64 {
    v.clamp(-limit, limit)
}

/// Ground-truth dynamics: terrain-bound simulator state.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthModel {
    pub config: TerrainConfig,
    pub terrain: TerrainParams,
    pub integrator: Rk4,
    mu_f: f64,
    mu_l: f64,
}

impl TruthModel {
    pub fn new(config: TerrainConfig, theta: f64) -> Self {
        let terrain = config.terrain(theta);
        let (mu_f, mu_l) = config.traction(&terrain);
        TruthModel {
            config,
            terrain,
            integrator: Rk4::default(),
            mu_f,
            mu_l,
        }
    }

    pub fn theta(&self) -> f64 {
        self.terrain.theta
    }

    /// State derivative under a held control.
    pub fn field(&self, x: &Delta, u: Control) -> Delta {
        let c = &self.config;
        let (s, co) = x[2].sin_cos();
        let (vx, vy, wz) = (x[3], x[4], x[5]);
        [
            vx * co - vy * s,
            vx * s + vy * co,
            wz,
            sat(c.k_acc * (u.v_cmd - vx), self.mu_f * c.g_eff) + vy * wz,
            -vx * wz - self.mu_l * c.k_lat * vy,
            sat(c.k_yaw * (u.w_cmd - wz), self.mu_f * c.g_yaw),
        ]
    }

    pub fn truth_field(&self, x: &State, u: Control) -> Delta {
        self.field(&x.to_array(), u)
    }

    /// Advances the state by `dt` with RK4, heading wrapped.
    pub fn step(&self, x: &State, u: Control, dt: f64) -> State {
        let y = self.integrator.integrate(|y| self.field(y, u), &x.to_array(), dt);
        State {
            psi: wrap(y[2]),
            ..State::from_array(y)
        }
    }

    /// Body-frame increment over `dt` from the bodyified state.
    pub fn increment(&self, x: &State, u: Control, dt: f64) -> Delta {
        self.integrator
            .increment(|y| self.field(y, u), &x.bodyified().to_array(), dt)
    }
}

pub fn truth_field(x: &State, u: Control, terrain: &TerrainParams) -> Delta {
    model_for(terrain).truth_field(x, u)
}

pub fn step_truth(x: &State, u: Control, terrain: &TerrainParams, dt: f64) -> State {
    model_for(terrain).step(x, u, dt)
}

fn model_for(terrain: &TerrainParams) -> TruthModel {
    let config = TerrainConfig::default();
    let (mu_f, mu_l) = config.traction(terrain);
    TruthModel {
        config,
        terrain: *terrain,
        integrator: Rk4::default(),
        mu_f,
        mu_l,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_midpoint() {
        let cfg = TerrainConfig::default();
        assert_eq!(terrain_from_theta(1.0).forward, cfg.high);
        assert_eq!(terrain_from_theta(0.0).lateral, cfg.low);
        let mid = terrain_from_theta(0.5).forward;
        assert!((mid.extremum_value - 0.575).abs() < 1e-15);
        assert!((mid.stiffness - 0.6).abs() < 1e-15);
        assert!((mid.asymptote_slip - 0.8).abs() < 1e-15);
    }

    #[test]
    fn mixing_is_affine() {
        let (t0, t1, t2) = (0.1, 0.4, 0.7);
        let a = terrain_from_theta(t0).forward.to_array();
        let b = terrain_from_theta(t1).forward.to_array();
        let c = terrain_from_theta(t2).forward.to_array();
        for i in 0..5 {
            // equally spaced thetas: middle is the average
            assert!((b[i] - 0.5 * (a[i] + c[i])).abs() < 1e-14);
        }
    }

    #[test]
    fn endpoint_curves_are_valid() {
        let cfg = TerrainConfig::default();
        cfg.high.validate().unwrap();
        cfg.low.validate().unwrap();
        assert!(FrictionCurve::new(0.4, 1.0, 0.3, 0.5, 1.0).validate().is_err());
        assert!(FrictionCurve::new(0.4, 1.0, 0.8, 0.5, 0.0).validate().is_err());
    }

    #[test]
    fn rest_is_equilibrium() {
        for theta in [0.0, 0.5, 1.0] {
            let d = truth_field(&State::new(3.0, -1.0, 0.4, 0.0, 0.0, 0.0), Control::zero(), &terrain_from_theta(theta));
            assert_eq!(d, [0.0; 6]);
        }
    }

    #[test]
    fn converges_to_commanded_velocity() {
        let m = TruthModel::new(TerrainConfig::default(), 1.0);
        let mut x = State::new(0.0, 0.0, 0.0, 0.0, 0.3, 0.2);
        for _ in 0..200 {
            x = m.step(&x, Control::new(2.0, 0.0), 0.1);
        }
        assert!((x.vx - 2.0).abs() < 1e-3, "{x:?}");
        assert!(x.vy.abs() < 1e-3 && x.wz.abs() < 1e-3, "{x:?}");
    }

    #[test]
    fn ice_decays_lateral_velocity_more_slowly() {
        let x = State::new(0.0, 0.0, 0.0, 1.5, 0.8, 0.0);
        let u = Control::new(1.5, 0.0);
        let ice = truth_field(&x, u, &terrain_from_theta(0.0))[4];
        let grip = truth_field(&x, u, &terrain_from_theta(1.0))[4];
        assert!(ice.abs() < grip.abs());
        assert!((grip / ice - 1.0 / 0.03).abs() < 1e-9);
    }

    #[test]
    fn zero_dt_and_rest_are_fixed_points() {
        let m = TruthModel::new(TerrainConfig::default(), 0.3);
        let x = State::new(1.0, 2.0, 0.5, 1.0, 0.2, -0.3);
        assert_eq!(m.step(&x, Control::new(1.0, 0.5), 0.0), x);
        let rest = State::new(1.0, 2.0, 0.5, 0.0, 0.0, 0.0);
        assert_eq!(m.step(&rest, Control::zero(), 0.1), rest);
    }

    #[test]
    fn coasting_never_gains_energy() {
        let m = TruthModel::new(TerrainConfig::default(), 1.0);
        let mut x = State::new(0.0, 0.0, 0.0, 1.8, -0.7, 0.9);
        let energy = |s: &State| s.vx * s.vx + s.vy * s.vy + s.wz * s.wz;
        let mut e = energy(&x);
        for _ in 0..100 {
            x = m.step(&x, Control::zero(), 0.1);
            let e2 = energy(&x);
            assert!(e2 <= e + 1e-12);
            e = e2;
        }
    }

    #[test]
    fn config_file_round_trip() {
        let mut cfg = TerrainConfig::default();
        cfg.k_lat = 2.0;
        cfg.low.stiffness = 0.3;
        let kv = KvFile::parse("terrain", &cfg.to_kv()).unwrap();
        assert_eq!(TerrainConfig::from_kv(&kv).unwrap(), cfg);
    }
}
