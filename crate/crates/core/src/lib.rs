//! Self-supervised LiDAR odometry without a learned network: the pose of each
//! consecutive sweep pair is found by minimizing a suite of geometric losses,
//! with confidence-weighted ICP supplying a rectified pose target.

pub mod cloud;
pub mod correspond;
pub mod error;
pub mod eval;
pub mod icp;
pub mod kitti;
pub mod losses;
pub mod se3;
pub mod solver;
pub mod synth;

pub use cloud::{Point, PointCloud};
pub use error::{Error, Result};
pub use eval::{segment_errors, DriftResult, Trajectory};
pub use losses::{LossReport, LossWeights};
pub use se3::Pose;
pub use solver::{estimate_pair, run_sequence, PairEstimate, SolverConfig};
