//! Ground-truth skid-steer simulator, terrain family, worlds, and data collection.

pub mod collect;
pub mod terrain;
pub mod world;

pub use collect::{collect_dataset, collect_trajectory, terrain_id, ExcitationConfig};
pub use terrain::{step_truth, terrain_from_theta, truth_field, FrictionCurve, TerrainConfig, TerrainParams, TruthModel};
pub use world::{check_collision, count_collisions, route_complete, waypoint_progress, Bounds, Circle, World};
