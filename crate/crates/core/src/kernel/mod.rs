//! Keyframe SLAM kernel over a planar range-bearing world.
//!
//! Three association tiers: per-frame tracking against a recency window of
//! keyframes, windowed local bundle adjustment, and long-term loop / merge
//! detection followed by global bundle adjustment.

mod ba;
mod init;
mod loops;
pub mod map;
pub mod solver;
mod tracking;

use thiserror::Error;

pub use ba::{global_bundle_adjust, local_bundle_adjust, DirtySet};
pub use init::initialize_map;
pub use loops::{
    close_loop, detect_loop_or_merge, duplicate_pairs, fuse_points, merge_maps, rehome_point, rehome_pose, GlobalKind,
    GlobalUpdateRecord, LoopCandidate, LoopKind, MergeDirective,
};
pub use map::{jaccard, Frame, KeyFrame, LandmarkId, Map, MapPoint, Observation, Version};
pub use solver::{NoiseModel, SolveError};
pub use tracking::{create_keyframe, should_create_keyframe, track_frame, TrackResult, TrackStatus};

use crate::ids::{KeyFrameId, MapId, MapPointId, Role};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("insufficient parallax: {common} common landmarks, {motion:.4} m motion")]
    InsufficientParallax { common: usize, motion: f64 },
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("insufficient overlap: {0} matched landmark pairs")]
    InsufficientOverlap(usize),
    #[error("unknown keyframe {0}")]
    UnknownKeyFrame(KeyFrameId),
    #[error("unknown map {0}")]
    UnknownMap(MapId),
    #[error("candidate kind does not match the requested update")]
    WrongCandidateKind,
}

/// Tunables of the kernel. Defaults follow the desk-scale configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    pub track_window: usize,
    pub min_track_matches: usize,
    pub kf_min_gap_frames: u32,
    pub kf_ref_ratio: f64,
    pub loop_tau: f64,
    pub min_merge_pairs: usize,
    pub lba_covisible: usize,
    pub lba_max_iter: usize,
    pub gba_max_iter: usize,
    pub rel_tol: f64,
    pub min_init_common: usize,
    pub min_init_motion: f64,
    pub noise: NoiseModel,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            track_window: 10,
            min_track_matches: 10,
            kf_min_gap_frames: 2,
            kf_ref_ratio: 0.80,
            loop_tau: 0.4,
            min_merge_pairs: 3,
            lba_covisible: 3,
            lba_max_iter: 10,
            gba_max_iter: 20,
            rel_tol: 1e-6,
            min_init_common: 20,
            min_init_motion: 0.01,
            noise: NoiseModel::default(),
        }
    }
}

/// Per-node counters for keyframe, map-point and map identifiers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdMint {
    pub node: Role,
    pub next_keyframe: u64,
    pub next_point: u64,
    pub next_map: u64,
}

impl IdMint {
    pub fn new(node: Role) -> Self {
        Self { node, next_keyframe: 0, next_point: 0, next_map: 0 }
    }

    pub fn keyframe(&mut self) -> KeyFrameId {
        self.next_keyframe += 1;
        KeyFrameId::new(self.node, self.next_keyframe - 1)
    }

    pub fn point(&mut self) -> MapPointId {
        self.next_point += 1;
        MapPointId::mint(self.node, self.next_point - 1)
    }

    pub fn map(&mut self) -> MapId {
        self.next_map += 1;
        MapId::new(self.node, self.next_map - 1)
    }
}
