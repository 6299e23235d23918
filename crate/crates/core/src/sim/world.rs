//! Obstacle/waypoint worlds.
//!
//! World file schema (key-value, `#` comments):
//!
//! ```text
//! bounds = xmin ymin xmax ymax
//! robot_radius = 0.6
//! obstacle = x y radius        # repeated
//! waypoint = x y proximity     # repeated, visited in order
//! start = x y psi vx           # optional
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kv::{KvFile, KvWriter};
use crate::state::State;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
}

impl Circle {
    pub fn new(x: f64, y: f64, radius: f64) -> Self {
        Circle { x, y, radius }
    }

    pub fn distance(&self, px: f64, py: f64) -> f64 {
        (px - self.x).hypot(py - self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl Bounds {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.xmin && x <= self.xmax && y >= self.ymin && y <= self.ymax
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub obstacles: Vec<Circle>,
    /// Waypoint centers with their proximity radius.
    pub waypoints: Vec<Circle>,
    pub bounds: Bounds,
    pub robot_radius: f64,
    pub start: State,
}

impl World {
    pub fn validate(&self) -> Result<()> {
        if !(self.robot_radius > 0.0) {
            return Err(Error::invalid("robot_radius must be positive"));
        }
        if self.obstacles.iter().chain(&self.waypoints).any(|c| !(c.radius > 0.0)) {
            return Err(Error::invalid("all radii must be positive"));
        }
        if let Some(w) = self.waypoints.iter().find(|w| !self.bounds.contains(w.x, w.y)) {
            return Err(Error::invalid(format!("waypoint ({}, {}) outside bounds", w.x, w.y)));
        }
        Ok(())
    }

    /// Tree field used for the icy-scene missions: three waypoints on a
    /// dog-leg route with trees crowding the straight lines between them.
    pub fn tree_field() -> World {
        let obstacles = [
            (5.0, 2.4, 0.5),
            (5.0, -2.4, 0.5),
            (12.8, -0.6, 0.6),
            (13.5, 4.5, 0.6),
            (8.2, 4.0, 0.5),
            (11.5, 10.6, 0.6),
            (7.0, 8.6, 0.5),
            (1.5, 9.0, 0.6),
            (2.0, 14.0, 0.6),
            (9.5, 13.5, 0.5),
        ]
        .into_iter()
        .map(|(x, y, r)| Circle::new(x, y, r))
        .collect();
        World {
            obstacles,
            waypoints: vec![
                Circle::new(9.0, 0.0, 1.5),
                Circle::new(11.0, 7.0, 1.5),
                Circle::new(4.5, 11.5, 1.5),
            ],
            bounds: Bounds {
                xmin: -5.0,
                ymin: -6.0,
                xmax: 18.0,
                ymax: 18.0,
            },
            robot_radius: 0.6,
            start: State::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0),
        }
    }

    pub fn from_kv(kv: &KvFile) -> Result<World> {
        let b = kv.numbers(kv.get("bounds").ok_or_else(|| Error::invalid("world file lacks `bounds`"))?)?;
        if b.len() != 4 {
            return Err(Error::invalid("`bounds` needs four numbers"));
        }
        let circles = |key: &str| -> Result<Vec<Circle>> {
            kv.all(key)
                .map(|e| {
                    let v = kv.numbers(e)?;
                    if v.len() != 3 {
                        return Err(Error::Parse {
                            file: kv.name.clone(),
                            line: e.line,
                            reason: format!("`{key}` needs x y radius"),
                        });
                    }
                    Ok(Circle::new(v[0], v[1], v[2]))
                })
                .collect()
        };
        let start = match kv.get("start") {
            Some(e) => {
                let v = kv.numbers(e)?;
                if v.len() != 4 {
                    return Err(Error::invalid("`start` needs x y psi vx"));
                }
                State::new(v[0], v[1], v[2], v[3], 0.0, 0.0)
            }
            None => State::default(),
        };
        let world = World {
            obstacles: circles("obstacle")?,
            waypoints: circles("waypoint")?,
            bounds: Bounds {
                xmin: b[0],
                ymin: b[1],
                xmax: b[2],
                ymax: b[3],
            },
            robot_radius: kv.require("robot_radius")?,
            start,
        };
        world.validate()?;
        Ok(world)
    }

    pub fn read(path: &Path) -> Result<World> {
        World::from_kv(&KvFile::read(path)?)
    }

    pub fn to_kv(&self) -> String {
        let mut w = KvWriter::new();
        let b = &self.bounds;
        w.put_list("bounds", &[b.xmin, b.ymin, b.xmax, b.ymax])
            .put("robot_radius", self.robot_radius)
            .put_list("start", &[self.start.px, self.start.py, self.start.psi, self.start.vx]);
        for o in &self.obstacles {
            w.put_list("obstacle", &[o.x, o.y, o.radius]);
        }
        for p in &self.waypoints {
            w.put_list("waypoint", &[p.x, p.y, p.radius]);
        }
        w.finish()
    }
}

/// True iff the robot disc strictly overlaps any obstacle.
pub fn check_collision(x: &State, world: &World) -> bool {
    world
        .obstacles
        .iter()
        .any(|o| o.distance(x.px, x.py) < o.radius + world.robot_radius)
}

/// Index of the waypoint being pursued; equals `waypoints.len()` once the
/// route is complete.
pub fn waypoint_progress(x: &State, world: &World, current: usize) -> usize {
    match world.waypoints.get(current) {
        Some(w) if w.distance(x.px, x.py) <= w.radius => current + 1,
        _ => current,
    }
}

pub fn route_complete(world: &World, index: usize) -> bool {
    index >= world.waypoints.len()
}

/// Collision onsets along a path: entries from free space into contact.
pub fn count_collisions(path: &[State], world: &World) -> usize {
    let mut inside = false;
    let mut count = 0;
    for s in path {
        let hit = check_collision(s, world);
        if hit && !inside {
            count += 1;
        }
        inside = hit;
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_tree() -> World {
        World {
            obstacles: vec![Circle::new(5.0, 0.0, 1.0)],
            waypoints: vec![Circle::new(10.0, 0.0, 1.0), Circle::new(10.0, 10.0, 1.0)],
            bounds: Bounds {
                xmin: -20.0,
                ymin: -20.0,
                xmax: 20.0,
                ymax: 20.0,
            },
            robot_radius: 0.5,
            start: State::default(),
        }
    }

    fn at(x: f64, y: f64) -> State {
        State::new(x, y, 0.0, 0.0, 0.0, 0.0)
    }

    #[test]
    fn collision_cases() {
        let w = one_tree();
        assert!(!check_collision(&at(-10.0, 0.0), &w));
        assert!(check_collision(&at(5.0, 0.0), &w));
        assert!(!check_collision(&at(3.5, 0.0), &w));
        assert!(check_collision(&at(3.5 + 1e-9, 0.0), &w));
    }

    #[test]
    fn waypoint_cases() {
        let w = one_tree();
        assert_eq!(waypoint_progress(&at(9.5, 0.0), &w, 0), 1);
        assert_eq!(waypoint_progress(&at(0.0, 0.0), &w, 0), 0);
        assert_eq!(waypoint_progress(&at(10.0, 10.5), &w, 1), 2);
        assert!(route_complete(&w, 2));
        assert_eq!(waypoint_progress(&at(10.0, 10.0), &w, 2), 2);
    }

    #[test]
    fn onsets_are_counted_once() {
        let w = one_tree();
        let path: Vec<State> = [0.0, 4.0, 5.0, 6.0, 7.0, 6.0, 0.0].iter().map(|x| at(*x, 0.0)).collect();
        assert_eq!(count_collisions(&path, &w), 2);
    }

    #[test]
    fn world_file_round_trip() {
        let w = World::tree_field();
        w.validate().unwrap();
        let back = World::from_kv(&KvFile::parse("w", &w.to_kv()).unwrap()).unwrap();
        assert_eq!(back, w);
        let bad = "bounds = 0 0 1 1\nrobot_radius = 0.5\nwaypoint = 5 5 1\n";
        assert!(World::from_kv(&KvFile::parse("w", bad).unwrap()).is_err());
    }
}
