//! Formation path following for underactuated 5-DOF AUVs: NSB task
//! hierarchy, 3D LOS guidance, sliding-mode autopilots with current
//! observers, and numerical checks of the closed-loop analysis.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod autopilot;
pub mod error;
pub mod guidance;
pub mod model;
pub mod path;
pub mod scenario;
pub mod sim;
pub mod telemetry;
pub mod verify;

pub use error::{Error, Result};
pub use scenario::Scenario;
pub use sim::{run, Simulation};
pub use telemetry::SimLog;
