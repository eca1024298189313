//! Short-term association: frame-to-map pose tracking and keyframe selection.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Matrix3, Vector3};

use super::map::{Frame, KeyFrame, LandmarkId, Map, MapPoint, Observation, Version};
use super::solver::{jacobians, residual};
use super::{IdMint, KernelParams};
use crate::geometry::Pose2;
use crate::ids::MapPointId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackStatus {
    Ok,
    Lost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackResult {
    pub status: TrackStatus,
    pub pose: Pose2,
    pub matches: BTreeMap<MapPointId, Observation>,
    pub tracked_ratio: f64,
    pub diverged: bool,
}

const TRACK_MAX_ITER: usize = 20;

/// Tracks `frame` against the points of the `window` most recent keyframes of `map`.
///
/// The pose is refined by Gauss-Newton from `predicted`. The result is LOST
/// when fewer than `min_track_matches` observations associate or when the cost
/// rises three iterations in a row.
pub fn track_frame(map: &Map, frame: &Frame, predicted: Pose2, window: usize, params: &KernelParams) -> TrackResult {
    let mut by_landmark: BTreeMap<LandmarkId, MapPointId> = BTreeMap::new();
    for kf_id in map.recent_keyframes(window) {
        for mp_id in map.keyframes[&kf_id].observations.keys() {
            if let Some(mp) = map.map_points.get(mp_id) {
                by_landmark.entry(mp.origin_landmark).and_modify(|cur| *cur = (*cur).min(*mp_id)).or_insert(*mp_id);
            }
        }
    }
    let matches: BTreeMap<MapPointId, Observation> =
        frame.observations.iter().filter_map(|o| by_landmark.get(&o.landmark_id).map(|id| (*id, *o))).collect();

    let ref_count = map.latest_keyframe().map(|k| k.ref_point_count).unwrap_or(0);
    let tracked_ratio = if ref_count == 0 { 0.0 } else { (matches.len() as f64 / ref_count as f64).min(1.0) };

    if matches.len() < params.min_track_matches {
        return TrackResult { status: TrackStatus::Lost, pose: predicted, matches, tracked_ratio, diverged: false };
    }

    let targets: Vec<_> = matches.iter().map(|(id, o)| (map.map_points[id].position, *o)).collect();
    let cost = |p: &Pose2| -> f64 {
        0.5 * targets
            .iter()
            .map(|(pt, o)| residual(p, pt, o.range, o.bearing, &params.noise).norm_squared())
            .sum::<f64>()
    };

    let mut pose = predicted;
    let mut current = cost(&pose);
    let mut best = (current, pose);
    let mut rises = 0;
    let mut diverged = false;
    for _ in 0..TRACK_MAX_ITER {
        let mut h = Matrix3::<f64>::zeros();
        let mut g = Vector3::<f64>::zeros();
        for (pt, o) in &targets {
            let e = residual(&pose, pt, o.range, o.bearing, &params.noise);
            let (jp, _) = jacobians(&pose, pt, &params.noise);
            h += jp.transpose() * jp;
            g += jp.transpose() * e;
        }
        let Some(step) = h.cholesky().map(|c| c.solve(&-g)) else {
            diverged = true;
            break;
        };
        pose = Pose2::new(pose.x + step[0], pose.y + step[1], pose.theta + step[2]);
        let next = cost(&pose);
        if !next.is_finite() {
            diverged = true;
            break;
        }
        // Rounding-level wobble near the optimum is not a rise.
        let slack = params.rel_tol * current.max(f64::MIN_POSITIVE);
        if next > current + slack {
            rises += 1;
            if rises >= 3 {
                diverged = true;
                break;
            }
        } else {
            rises = 0;
        }
        let settled = (current - next).abs() <= slack;
        current = next;
        if current < best.0 {
            best = (current, pose);
        }
        if settled || step.norm() < 1e-12 {
            break;
        }
    }
    let status = if diverged { TrackStatus::Lost } else { TrackStatus::Ok };
    TrackResult { status, pose: best.1, matches, tracked_ratio, diverged }
}

/// Keyframe gate: at least `kf_min_gap_frames` frames since the last keyframe
/// and a tracked ratio strictly below `kf_ref_ratio`.
pub fn should_create_keyframe(tr: &TrackResult, frames_since_last_kf: u32, params: &KernelParams) -> bool {
    tr.status == TrackStatus::Ok
        && frames_since_last_kf >= params.kf_min_gap_frames
        && tr.tracked_ratio < params.kf_ref_ratio
}

/// Builds a keyframe from a tracked frame. Unmatched observations spawn new
/// points back-projected from the tracked pose. The keyframe is not inserted.
pub fn create_keyframe(frame: &Frame, tr: &TrackResult, mint: &mut IdMint, map: &Map) -> (KeyFrame, Vec<MapPoint>) {
    let id = mint.keyframe();
    let matched: BTreeSet<LandmarkId> = tr.matches.values().map(|o| o.landmark_id).collect();
    let mut observations = tr.matches.clone();
    let mut new_points = Vec::new();
    for o in &frame.observations {
        if matched.contains(&o.landmark_id) {
            continue;
        }
        let mp_id = mint.point();
        observations.insert(mp_id, *o);
        new_points.push(MapPoint {
            id: mp_id,
            position: o.back_project(&tr.pose),
            observers: BTreeSet::new(),
            origin_landmark: o.landmark_id,
            birth: id,
            version: Version::default(),
            dirty: false,
        });
    }
    let kf = KeyFrame {
        id,
        pose: tr.pose,
        timestamp: frame.timestamp,
        ref_point_count: observations.len() as u32,
        observations,
        covisible: BTreeMap::new(),
        map_id: map.map_id,
        version: Version::default(),
        dirty: false,
    };
    (kf, new_points)
}
