//! Self-organizing distributed keyframe SLAM.
//!
//! The crate is layered bottom-up:
//!
//! - [`kernel`]: planar keyframe SLAM (tracking, local / global bundle adjustment,
//!   loop closing and map merging).
//! - [`state`]: the two-tier replicated state (staged overall state and promoted
//!   SLAM state) with canonical serialization and digests.
//! - [`comm`]: topics, the versioned wire envelope and transports.
//! - [`distribution`]: discovery, the distribution policy and the per-node
//!   keyframe / map pipelines including the pause protocol.
//! - [`sim`]: a deterministic discrete-event network simulator.
//! - [`harness`]: scenarios, centralized and distributed runs, trajectory
//!   evaluation and reports.

pub mod alignment;
pub mod comm;
pub mod distribution;
pub mod geometry;
pub mod harness;
pub mod ids;
pub mod kernel;
pub mod sim;
pub mod state;

pub use geometry::{Point2, Pose2, Similarity2};
pub use ids::{KeyFrameId, MapId, MapPointId, Role};
