//! Local and global bundle adjustment over a map.

use std::collections::{BTreeMap, BTreeSet};

use super::map::Map;
use super::solver::{BaObservation, BaProblem, SolveReport};
use super::{KernelError, KernelParams};
use crate::ids::{KeyFrameId, MapPointId};

/// Entities whose values an optimization changed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DirtySet {
    pub keyframes: BTreeSet<KeyFrameId>,
    pub points: BTreeSet<MapPointId>,
}

impl DirtySet {
    pub fn is_empty(&self) -> bool {
        self.keyframes.is_empty() && self.points.is_empty()
    }

    pub fn extend(&mut self, other: DirtySet) {
        self.keyframes.extend(other.keyframes);
        self.points.extend(other.points);
    }
}

/// Optimizes `center` and its `n_covisible` strongest covisible keyframes together
/// with every point they observe. Keyframes outside the window that observe those
/// points are fixed anchors; the oldest window keyframe is fixed as gauge.
pub fn local_bundle_adjust(
    map: &mut Map,
    center: KeyFrameId,
    n_covisible: usize,
    params: &KernelParams,
) -> Result<DirtySet, KernelError> {
    if !map.keyframes.contains_key(&center) {
        return Err(KernelError::UnknownKeyFrame(center));
    }
    let mut window: BTreeSet<KeyFrameId> = BTreeSet::from([center]);
    window.extend(map.strongest_covisible(center, n_covisible));
    let oldest = *window.iter().next().expect("window holds center");

    let mut points: BTreeSet<MapPointId> = BTreeSet::new();
    for k in &window {
        points.extend(map.keyframes[k].observations.keys().filter(|m| map.map_points.contains_key(m)));
    }
    let mut involved: BTreeSet<KeyFrameId> = window.clone();
    for m in &points {
        involved.extend(map.map_points[m].observers.iter().copied());
    }
    let origin = map.origin_kf;
    let fixed = |k: &KeyFrameId| !window.contains(k) || *k == oldest || *k == origin;
    run(map, &involved, &points, fixed, params.lba_max_iter, params).map(|(d, _)| d)
}

/// Optimizes every pose and point of the map with the origin keyframe fixed, then
/// marks the map's initial keyframes as optimized.
pub fn global_bundle_adjust(map: &mut Map, params: &KernelParams) -> Result<DirtySet, KernelError> {
    let all_kfs: BTreeSet<KeyFrameId> = map.keyframes.keys().copied().collect();
    let all_pts: BTreeSet<MapPointId> =
        map.map_points.iter().filter(|(_, p)| !p.observers.is_empty()).map(|(id, _)| *id).collect();
    let origin = map.origin_kf;
    let (dirty, _) = run(map, &all_kfs, &all_pts, |k| *k == origin, params.gba_max_iter, params)?;
    map.initialized_optimized = true;
    Ok(dirty)
}

fn run(
    map: &mut Map,
    kfs: &BTreeSet<KeyFrameId>,
    pts: &BTreeSet<MapPointId>,
    fixed: impl Fn(&KeyFrameId) -> bool,
    max_iter: usize,
    params: &KernelParams,
) -> Result<(DirtySet, SolveReport), KernelError> {
    let kf_index: BTreeMap<KeyFrameId, usize> = kfs.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    let pt_index: BTreeMap<MapPointId, usize> = pts.iter().enumerate().map(|(i, m)| (*m, i)).collect();
    let mut observations = Vec::new();
    for (k, &pi) in &kf_index {
        for (m, o) in &map.keyframes[k].observations {
            if let Some(&li) = pt_index.get(m) {
                observations.push(BaObservation { pose: pi, point: li, range: o.range, bearing: o.bearing });
            }
        }
    }
    let mut problem = BaProblem {
        poses: kfs.iter().map(|k| map.keyframes[k].pose).collect(),
        pose_fixed: kfs.iter().map(&fixed).collect(),
        points: pts.iter().map(|m| map.map_points[m].position).collect(),
        observations,
        noise: params.noise,
    };
    let report = problem.solve(max_iter, params.rel_tol)?;

    let mut dirty = DirtySet::default();
    for (k, i) in &kf_index {
        let kf = map.keyframes.get_mut(k).expect("indexed keyframe");
        if kf.pose != problem.poses[*i] {
            kf.pose = problem.poses[*i];
            kf.dirty = true;
            dirty.keyframes.insert(*k);
        }
    }
    for (m, i) in &pt_index {
        let mp = map.map_points.get_mut(m).expect("indexed point");
        if mp.position != problem.points[*i] {
            mp.position = problem.points[*i];
            mp.dirty = true;
            dirty.points.insert(*m);
        }
    }
    Ok((dirty, report))
}
