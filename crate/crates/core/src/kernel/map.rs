//! SLAM entities: frames, keyframes, map points and maps.

use std::collections::{BTreeMap, BTreeSet};

use crate::geometry::{Point2, Pose2};
use crate::ids::{KeyFrameId, MapId, MapPointId};

/// Ground-truth landmark identifier carried by observations.
pub type LandmarkId = u32;

/// Minimum number of shared map points for a covisibility edge (inclusive).
pub const COVISIBILITY_MIN_SHARED: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub landmark_id: LandmarkId,
    pub range: f64,
    pub bearing: f64,
}

impl Observation {
    /// Back-projects the measurement from `pose` into the parent frame.
    pub fn back_project(&self, pose: &Pose2) -> Point2 {
        let local = Point2::new(self.range * self.bearing.cos(), self.range * self.bearing.sin());
        pose.transform_point(&local)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub frame_id: u64,
    pub timestamp: f64,
    /// Noisy relative motion since the previous frame.
    pub odometry_delta: Pose2,
    pub observations: Vec<Observation>,
}

/// Write version of a replicated register. Ordered by epoch, then lamport clock, then writer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Hash)]
pub struct Version {
    pub epoch: u64,
    pub lamport: u64,
    pub writer: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapPoint {
    pub id: MapPointId,
    pub position: Point2,
    pub observers: BTreeSet<KeyFrameId>,
    /// Evaluation and association label; estimation never reads it.
    pub origin_landmark: LandmarkId,
    /// Keyframe that created the point; older points win fusions.
    pub birth: KeyFrameId,
    pub version: Version,
    pub dirty: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyFrame {
    pub id: KeyFrameId,
    pub pose: Pose2,
    pub timestamp: f64,
    pub observations: BTreeMap<MapPointId, Observation>,
    pub covisible: BTreeMap<KeyFrameId, u32>,
    pub map_id: MapId,
    pub ref_point_count: u32,
    pub version: Version,
    pub dirty: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Map {
    pub map_id: MapId,
    pub keyframes: BTreeMap<KeyFrameId, KeyFrame>,
    pub map_points: BTreeMap<MapPointId, MapPoint>,
    pub origin_kf: KeyFrameId,
    pub initialized_optimized: bool,
}

impl Map {
    pub fn new(map_id: MapId, origin_kf: KeyFrameId) -> Self {
        Self {
            map_id,
            keyframes: BTreeMap::new(),
            map_points: BTreeMap::new(),
            origin_kf,
            initialized_optimized: false,
        }
    }

    /// Inserts a keyframe and the points it creates, wiring observers and covisibility.
    ///
    /// Points already present are left untouched; observations must resolve afterwards.
    pub fn insert_keyframe(&mut self, mut kf: KeyFrame, new_points: Vec<MapPoint>) {
        kf.map_id = self.map_id;
        kf.covisible.clear();
        let id = kf.id;
        for mut mp in new_points {
            if self.map_points.contains_key(&mp.id) {
                continue;
            }
            mp.observers.clear();
            self.map_points.insert(mp.id, mp);
        }
        for mp_id in kf.observations.keys() {
            if let Some(mp) = self.map_points.get_mut(mp_id) {
                mp.observers.insert(id);
            }
        }
        self.keyframes.insert(id, kf);
        self.recompute_covisibility(&BTreeSet::from([id]));
    }

    /// Rebuilds covisibility edges touching `kfs` from current observer sets.
    pub fn recompute_covisibility(&mut self, kfs: &BTreeSet<KeyFrameId>) {
        for id in kfs {
            let Some(kf) = self.keyframes.get(id) else { continue };
            let mut counts: BTreeMap<KeyFrameId, u32> = BTreeMap::new();
            for mp_id in kf.observations.keys() {
                if let Some(mp) = self.map_points.get(mp_id) {
                    for o in &mp.observers {
                        if o != id {
                            *counts.entry(*o).or_default() += 1;
                        }
                    }
                }
            }
            counts.retain(|_, c| *c >= COVISIBILITY_MIN_SHARED);
            let stale: Vec<KeyFrameId> = kf.covisible.keys().copied().collect();
            for other in stale {
                if let Some(o) = self.keyframes.get_mut(&other) {
                    o.covisible.remove(id);
                }
            }
            for (other, c) in &counts {
                if let Some(o) = self.keyframes.get_mut(other) {
                    o.covisible.insert(*id, *c);
                }
            }
            if let Some(kf) = self.keyframes.get_mut(id) {
                kf.covisible = counts;
            }
        }
    }

    /// Recomputes every observer set and covisibility edge from keyframe observations.
    pub fn rebuild_derived(&mut self) {
        for mp in self.map_points.values_mut() {
            mp.observers.clear();
        }
        for kf in self.keyframes.values() {
            for mp_id in kf.observations.keys() {
                if let Some(mp) = self.map_points.get_mut(mp_id) {
                    mp.observers.insert(kf.id);
                }
            }
        }
        for kf in self.keyframes.values_mut() {
            kf.covisible.clear();
        }
        let all: BTreeSet<KeyFrameId> = self.keyframes.keys().copied().collect();
        self.recompute_covisibility(&all);
    }

    /// The `n` most recent keyframes (largest ids first).
    pub fn recent_keyframes(&self, n: usize) -> Vec<KeyFrameId> {
        self.keyframes.keys().rev().take(n).copied().collect()
    }

    pub fn latest_keyframe(&self) -> Option<&KeyFrame> {
        self.keyframes.values().next_back()
    }

    /// Covisible neighbors sorted by decreasing weight, ties by smaller id.
    pub fn strongest_covisible(&self, id: KeyFrameId, n: usize) -> Vec<KeyFrameId> {
        let Some(kf) = self.keyframes.get(&id) else { return Vec::new() };
        let mut v: Vec<(KeyFrameId, u32)> = kf.covisible.iter().map(|(k, c)| (*k, *c)).collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        v.into_iter().take(n).map(|(k, _)| k).collect()
    }

    /// Keyframes reachable from `id` in at most `hops` covisibility edges, including `id`.
    pub fn covisible_neighborhood(&self, id: KeyFrameId, hops: usize) -> BTreeSet<KeyFrameId> {
        let mut seen = BTreeSet::from([id]);
        let mut frontier = vec![id];
        for _ in 0..hops {
            let mut next = Vec::new();
            for k in frontier {
                if let Some(kf) = self.keyframes.get(&k) {
                    for n in kf.covisible.keys() {
                        if seen.insert(*n) {
                            next.push(*n);
                        }
                    }
                }
            }
            frontier = next;
        }
        seen
    }

    /// Landmark labels of the map points a keyframe observes.
    pub fn signature(&self, id: KeyFrameId) -> BTreeSet<LandmarkId> {
        self.keyframes
            .get(&id)
            .map(|kf| {
                kf.observations.keys().filter_map(|m| self.map_points.get(m).map(|p| p.origin_landmark)).collect()
            })
            .unwrap_or_default()
    }

    /// Checks the no-dangling-reference invariants; returns a description of the first violation.
    pub fn check_consistency(&self) -> Result<(), String> {
        if !self.keyframes.contains_key(&self.origin_kf) {
            return Err(format!("{}: origin keyframe {} missing", self.map_id, self.origin_kf));
        }
        for kf in self.keyframes.values() {
            if kf.map_id != self.map_id {
                return Err(format!("{} carries map id {}", kf.id, kf.map_id));
            }
            for mp_id in kf.observations.keys() {
                match self.map_points.get(mp_id) {
                    None => return Err(format!("{} references missing point {}", kf.id, mp_id)),
                    Some(mp) if !mp.observers.contains(&kf.id) => {
                        return Err(format!("point {} does not list observer {}", mp_id, kf.id))
                    }
                    _ => {}
                }
            }
            for (other, w) in &kf.covisible {
                match self.keyframes.get(other).and_then(|o| o.covisible.get(&kf.id)) {
                    Some(back) if back == w => {}
                    _ => return Err(format!("asymmetric covisibility {} -> {}", kf.id, other)),
                }
            }
        }
        for mp in self.map_points.values() {
            if mp.observers.is_empty() {
                return Err(format!("point {} has no observers", mp.id));
            }
            for o in &mp.observers {
                let listed = self.keyframes.get(o).is_some_and(|k| k.observations.contains_key(&mp.id));
                if !listed {
                    return Err(format!("point {} lists stale observer {}", mp.id, o));
                }
            }
        }
        Ok(())
    }

    pub fn clear_dirty(&mut self) {
        for kf in self.keyframes.values_mut() {
            kf.dirty = false;
        }
        for mp in self.map_points.values_mut() {
            mp.dirty = false;
        }
    }
}

/// Jaccard similarity of two landmark sets; zero when both are empty.
pub fn jaccard(a: &BTreeSet<LandmarkId>, b: &BTreeSet<LandmarkId>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}
