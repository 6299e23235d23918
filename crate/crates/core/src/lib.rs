pub mod adapt;
pub mod baseline;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod fenode;
pub mod harness;
pub mod kv;
pub mod model;
pub mod mppi;
pub mod linalg;
pub mod net;
pub mod neural_ode;
pub mod ode;
pub mod sim;
pub mod state;

pub use dataset::{build_dataset, Dataset, Trajectory};
pub use error::{Error, Result};
pub use state::{body_frame_delta, compose_body_delta, wrap_angle, Control, ControlLimits, Delta, State, Transition};
