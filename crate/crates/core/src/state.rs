//! Vehicle state, control, and the body-frame transforms used to turn logged
//! trajectories into translation/rotation invariant training transitions.
//!
//! Ordering is fixed as `(px, py, psi, vx, vy, wz)` everywhere: arrays,
//! files, and model outputs.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STATE_DIM: usize = 6;
pub const CONTROL_DIM: usize = 2;

/// Six-component state increment (or derivative) in state ordering.
pub type Delta = [f64; STATE_DIM];

pub const IDX_PX: usize = 0;
pub const IDX_PY: usize = 1;
pub const IDX_PSI: usize = 2;
pub const IDX_VX: usize = 3;
pub const IDX_VY: usize = 4;
pub const IDX_WZ: usize = 5;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> Result<f64> {
    if !a.is_finite() {
        return Err(Error::invalid(format!("cannot wrap non-finite angle {a}")));
    }
    Ok(wrap(a))
}

pub(crate) fn wrap(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    // values within a few ulps of pi land on the closed end
    if (r - PI).abs() <= 8.0 * f64::EPSILON * PI {
        PI
    } else if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Planar pose in the inertial frame plus body-frame velocities.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct State {
    pub px: f64,
    pub py: f64,
    pub psi: f64,
    pub vx: f64,
    pub vy: f64,
    pub wz: f64,
}

impl State {
    pub fn new(px: f64, py: f64, psi: f64, vx: f64, vy: f64, wz: f64) -> Self {
        State {
            px,
            py,
            psi: wrap(psi),
            vx,
            vy,
            wz,
        }
    }

    pub fn from_array(a: Delta) -> Self {
        State::new(a[0], a[1], a[2], a[3], a[4], a[5])
    }

    pub fn to_array(&self) -> Delta {
        [self.px, self.py, self.psi, self.vx, self.vy, self.wz]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Same velocities, pose moved to the origin with zero heading.
    pub fn bodyified(&self) -> Self {
        State {
            px: 0.0,
            py: 0.0,
            psi: 0.0,
            ..*self
        }
    }

    pub fn position(&self) -> (f64, f64) {
        (self.px, self.py)
    }
}

/// Commanded forward and angular velocity.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Control {
    pub v_cmd: f64,
    pub w_cmd: f64,
}

impl Control {
    pub fn new(v_cmd: f64, w_cmd: f64) -> Self {
        Control { v_cmd, w_cmd }
    }

    pub fn zero() -> Self {
        Control::default()
    }

    pub fn to_array(&self) -> [f64; CONTROL_DIM] {
        [self.v_cmd, self.w_cmd]
    }
}

/// Actuator limits; controls are clamped to `[-v_max, v_max] x [-w_max, w_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlLimits {
    pub v_max: f64,
    pub w_max: f64,
}

impl Default for ControlLimits {
    fn default() -> Self {
        ControlLimits {
            v_max: 2.0,
            w_max: 1.0,
        }
    }
}

impl ControlLimits {
    pub fn clamp(&self, u: Control) -> Control {
        Control {
            v_cmd: u.v_cmd.clamp(-self.v_max, self.v_max),
            w_cmd: u.w_cmd.clamp(-self.w_max, self.w_max),
        }
    }

    pub fn contains(&self, u: Control) -> bool {
        u.v_cmd.abs() <= self.v_max && u.w_cmd.abs() <= self.w_max
    }
}

/// One training/adaptation sample: bodyified start state, held control,
/// interval length, and the body-frame increment observed over it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub x: State,
    pub u: Control,
    pub dt: f64,
    pub dx: Delta,
}

fn rotate(c: f64, s: f64, x: f64, y: f64) -> (f64, f64) {
    (c * x - s * y, s * x + c * y)
}

/// Expresses the change from `x_t` to `x_next` in the body frame of `x_t`.
///
/// The positional delta is rotated by `-psi_t`, the heading delta is wrapped,
/// and the velocity deltas are plain differences.
pub fn body_frame_delta(x_t: &State, u: Control, x_next: &State, dt: f64) -> Result<Transition> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    let (s, c) = x_t.psi.sin_cos();
    let (dpx, dpy) = rotate(c, -s, x_next.px - x_t.px, x_next.py - x_t.py);
    let dx = [
        dpx,
        dpy,
        wrap(x_next.psi - x_t.psi),
        x_next.vx - x_t.vx,
        x_next.vy - x_t.vy,
        x_next.wz - x_t.wz,
    ];
    if dx.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite body-frame increment".into()));
    }
    Ok(Transition {
        x: x_t.bodyified(),
        u,
        dt,
        dx,
    })
}

/// Applies a body-frame increment to `x_t`; inverse of [`body_frame_delta`].
pub fn compose_body_delta(x_t: &State, dx: &Delta) -> State {
    let (s, c) = x_t.psi.sin_cos();
    let (gx, gy) = rotate(c, s, dx[IDX_PX], dx[IDX_PY]);
    State {
        px: x_t.px + gx,
        py: x_t.py + gy,
        psi: wrap(x_t.psi + dx[IDX_PSI]),
        vx: x_t.vx + dx[IDX_VX],
        vy: x_t.vy + dx[IDX_VY],
        wz: x_t.wz + dx[IDX_WZ],
    }
}

/// Component-wise difference `a - b` with the heading component wrapped.
pub fn state_error(a: &State, b: &State) -> Delta {
    [
        a.px - b.px,
        a.py - b.py,
        wrap(a.psi - b.psi),
        a.vx - b.vx,
        a.vy - b.vy,
        a.wz - b.wz,
    ]
}
