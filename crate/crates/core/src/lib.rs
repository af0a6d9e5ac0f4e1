//! Lidar perception and navigation toolkit for pergola-structured orchards.
//!
//! The crate pairs a deterministic synthetic orchard simulator with the
//! algorithms it exercises: row centreline detection, bird's-eye feature
//! extraction, a headland-turn mission state machine, pedestrian safety
//! monitoring, canopy-following boom control and planar arm kinematics.

pub mod arm;
pub mod boom;
pub mod error;
pub mod features;
pub mod io;
pub mod mission;
pub mod rownav;
pub mod safety;
pub mod scan;
pub mod sim;

pub use error::{Error, Result};
pub use scan::{BirdsEyeGrid, GridSpec, LidarFrame, LidarSpec, Point3};
pub use sim::{ObjectClass, OrchardWorld, RobotState, ScanOptions, WorldConfig};
