use std::collections::{BTreeMap, BTreeSet};

use super::map::{Frame, KeyFrame, Map, MapPoint, Observation, Version};
use super::{IdMint, KernelError, KernelParams};
use crate::geometry::Pose2;

/// Builds a two-keyframe map from consecutive frames.
///
/// The first frame sits at the map origin, the second at its odometry delta.
/// Each landmark seen in both frames becomes a point at the mean of the two
/// back-projections.
pub fn initialize_map(f1: &Frame, f2: &Frame, mint: &mut IdMint, params: &KernelParams) -> Result<Map, KernelError> {
    let first: BTreeMap<_, &Observation> = f1.observations.iter().map(|o| (o.landmark_id, o)).collect();
    let common: BTreeSet<_> = f2.observations.iter().map(|o| o.landmark_id).filter(|l| first.contains_key(l)).collect();
    let motion = f2.odometry_delta.translation_norm();
    if common.len() < params.min_init_common || motion < params.min_init_motion {
        return Err(KernelError::InsufficientParallax { common: common.len(), motion });
    }
    let second: BTreeMap<_, &Observation> = f2.observations.iter().map(|o| (o.landmark_id, o)).collect();

    let map_id = mint.map();
    let kf1_id = mint.keyframe();
    let kf2_id = mint.keyframe();
    let pose1 = Pose2::IDENTITY;
    let pose2 = pose1.compose(&f2.odometry_delta);

    let mut points = Vec::with_capacity(common.len());
    let mut obs1 = BTreeMap::new();
    let mut obs2 = BTreeMap::new();
    for l in &common {
        let (o1, o2) = (first[l], second[l]);
        let position = (o1.back_project(&pose1) + o2.back_project(&pose2)) * 0.5;
        let id = mint.point();
        obs1.insert(id, *o1);
        obs2.insert(id, *o2);
        points.push(MapPoint {
            id,
            position,
            observers: BTreeSet::new(),
            origin_landmark: *l,
            birth: kf1_id,
            version: Version::default(),
            dirty: false,
        });
    }
    let n = points.len() as u32;
    let mk = |id, pose, timestamp, observations| KeyFrame {
        id,
        pose,
        timestamp,
        observations,
        covisible: BTreeMap::new(),
        map_id,
        ref_point_count: n,
        version: Version::default(),
        dirty: false,
    };
    let mut map = Map::new(map_id, kf1_id);
    map.insert_keyframe(mk(kf1_id, pose1, f1.timestamp, obs1), points);
    map.insert_keyframe(mk(kf2_id, pose2, f2.timestamp, obs2), Vec::new());
    Ok(map)
}
