pub mod config;
pub mod error;
pub mod estimator;
pub mod geometry;
pub mod imu;
pub mod io;
pub mod lidar_factor;
pub mod map_matching;
pub mod pipeline;
pub mod preintegration;
pub mod scan;
pub mod simulator;
pub mod state;
pub mod trajectory;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use geometry::{Quat, RigidTransform, Vec3};
pub use imu::ImuSample;
pub use io::StampedPose;
pub use scan::RawScan;
pub use state::{ImuBias, State};
