//! Logged trajectories, per-terrain transition datasets, and their CSV form.
//!
//! Trajectory CSV header: `t,px,py,psi,vx,vy,wz,v_cmd,w_cmd`. Row `i` holds
//! the state at `t_i` and the control applied over `[t_i, t_{i+1})`; the
//! control columns of the final row are written as zero and ignored on read.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kv::{KvFile, KvWriter};
use crate::state::{body_frame_delta, Control, State, Transition};

pub const CSV_HEADER: [&str; 9] = ["t", "px", "py", "psi", "vx", "vy", "wz", "v_cmd", "w_cmd"];

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub controls: Vec<Control>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<State>, controls: Vec<Control>) -> Result<Self> {
        let t = Trajectory {
            times,
            states,
            controls,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.states.len() {
            return Err(Error::invalid("times and states differ in length"));
        }
        if !self.states.is_empty() && self.controls.len() + 1 != self.states.len() {
            return Err(Error::invalid(format!(
                "expected {} controls for {} states, got {}",
                self.states.len() - 1,
                self.states.len(),
                self.controls.len()
            )));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("times must be strictly increasing"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(CSV_HEADER).map_err(csv_err)?;
        for (i, (t, s)) in self.times.iter().zip(&self.states).enumerate() {
            let u = self.controls.get(i).copied().unwrap_or_default();
            let row = [*t, s.px, s.py, s.psi, s.vx, s.vy, s.wz, u.v_cmd, u.w_cmd];
            w.write_record(row.iter().map(|v| v.to_string()))
                .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        let header = r.headers().map_err(csv_err)?.clone();
        if header.iter().collect::<Vec<_>>() != CSV_HEADER {
            return Err(Error::Parse {
                file: path.display().to_string(),
                line: 1,
                reason: format!("unexpected header {:?}", header),
            });
        }
        let mut times = Vec::new();
        let mut states = Vec::new();
        let mut controls = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse {
                    file: path.display().to_string(),
                    line: i + 2,
                    reason: e.to_string(),
                })?;
            if vals.len() != CSV_HEADER.len() {
                return Err(Error::Parse {
                    file: path.display().to_string(),
                    line: i + 2,
                    reason: format!("expected 9 columns, got {}", vals.len()),
                });
            }
            times.push(vals[0]);
            states.push(State::new(vals[1], vals[2], vals[3], vals[4], vals[5], vals[6]));
            controls.push(Control::new(vals[7], vals[8]));
        }
        controls.pop();
        Trajectory::new(times, states, controls)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Transitions collected on one terrain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub terrain_id: String,
    pub theta: f64,
    pub transitions: Vec<Transition>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Contiguous sub-range as a new dataset on the same terrain.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Dataset {
        Dataset {
            terrain_id: self.terrain_id.clone(),
            theta: self.theta,
            transitions: self.transitions[range].to_vec(),
        }
    }

    /// Per-component variance of the increments (population).
    pub fn increment_variance(&self) -> [f64; 6] {
        let n = self.transitions.len().max(1) as f64;
        let mut mean = [0.0; 6];
        for t in &self.transitions {
            for (m, d) in mean.iter_mut().zip(&t.dx) {
                *m += d / n;
            }
        }
        let mut var = [0.0; 6];
        for t in &self.transitions {
            for i in 0..6 {
                var[i] += (t.dx[i] - mean[i]).powi(2) / n;
            }
        }
        var
    }
}

/// One body-frame transition per consecutive pair of logged states.
pub fn build_dataset(traj: &Trajectory, terrain_id: &str, theta: f64) -> Result<Dataset> {
    traj.validate()?;
    if traj.len() < 2 {
        return Err(Error::invalid("trajectory needs at least two states"));
    }
    let transitions = (0..traj.len() - 1)
        .map(|i| {
            body_frame_delta(
                &traj.states[i],
                traj.controls[i],
                &traj.states[i + 1],
                traj.times[i + 1] - traj.times[i],
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        terrain_id: terrain_id.to_string(),
        theta,
        transitions,
    })
}

/// Sidecar metadata written next to each collected CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub terrain_id: String,
    pub theta: f64,
    pub seed: u64,
    pub duration: f64,
}

impl DatasetMeta {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = KvWriter::new()
            .put("terrain_id", &self.terrain_id)
            .put("theta", self.theta)
            .put("seed", self.seed)
            .put("duration", self.duration)
            .finish();
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let kv = KvFile::read(path)?;
        Ok(DatasetMeta {
            terrain_id: kv.require("terrain_id")?,
            theta: kv.require("theta")?,
            seed: kv.require("seed")?,
            duration: kv.require("duration")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::{compose_body_delta, state_error};

    fn line_traj(n: usize) -> Trajectory {
        let times: Vec<f64> = (0..n).map(|i| i as f64 * 0.1).collect();
        let states = (0..n)
            .map(|i| State::new(i as f64 * 0.2, 1.0, 0.7, 2.0, 0.0, 0.0))
            .collect();
        Trajectory::new(times, states, vec![Control::new(2.0, 0.0); n - 1]).unwrap()
    }

    #[test]
    fn two_states_give_one_transition() {
        let d = build_dataset(&line_traj(2), "a", 1.0).unwrap();
        assert_eq!(d.len(), 1);
        assert!((d.transitions[0].dt - 0.1).abs() < 1e-15);
    }

    #[test]
    fn constant_trajectory_has_zero_increments() {
        let s = State::new(3.0, 4.0, 1.0, 0.5, 0.1, 0.2);
        let t = Trajectory::new(vec![0.0, 0.1, 0.25], vec![s; 3], vec![Control::zero(); 2]).unwrap();
        let d = build_dataset(&t, "c", 0.5).unwrap();
        assert!(d.transitions.iter().all(|t| t.dx == [0.0; 6]));
        assert!((d.transitions[1].dt - 0.15).abs() < 1e-12);
    }

    #[test]
    fn rejects_short_or_inconsistent() {
        let t = Trajectory::new(vec![0.0], vec![State::default()], vec![]).unwrap();
        assert!(build_dataset(&t, "x", 0.0).is_err());
        assert!(Trajectory::new(vec![0.0, 0.0], vec![State::default(); 2], vec![Control::zero()]).is_err());
        assert!(Trajectory::new(vec![0.0, 0.1], vec![State::default(); 2], vec![]).is_err());
    }

    #[test]
    fn increments_rebuild_logged_states() {
        let mut states = vec![State::new(1.0, -1.0, 2.9, 0.4, -0.2, 0.8)];
        for i in 0..50 {
            let dx = [0.1, 0.02 * (i as f64).sin(), 0.08, 0.01, -0.005, 0.003];
            states.push(compose_body_delta(states.last().unwrap(), &dx));
        }
        let times = (0..states.len()).map(|i| i as f64 * 0.1).collect();
        let traj = Trajectory::new(times, states.clone(), vec![Control::zero(); 50]).unwrap();
        let d = build_dataset(&traj, "r", 0.0).unwrap();
        let mut x = states[0];
        for (t, s) in d.transitions.iter().zip(&states[1..]) {
            x = compose_body_delta(&x, &t.dx);
            assert!(state_error(&x, s).iter().all(|e| e.abs() < 1e-10));
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let t = line_traj(5);
        t.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("t,px,py,psi,vx,vy,wz,v_cmd,w_cmd\n"));
        assert_eq!(Trajectory::read_csv(&p).unwrap(), t);

        let m = DatasetMeta {
            terrain_id: "theta_0.5".into(),
            theta: 0.5,
            seed: 7,
            duration: 12.0,
        };
        let mp = dir.path().join("t.meta");
        m.write(&mp).unwrap();
        assert_eq!(DatasetMeta::read(&mp).unwrap(), m);
    }
}
