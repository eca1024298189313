//! Long-term association: loop / merge detection, point fusion, loop closing and map merging.

use std::collections::{BTreeMap, BTreeSet};

use super::ba::global_bundle_adjust;
use super::map::{jaccard, Map};
use super::{KernelError, KernelParams};
use crate::alignment::compute_alignment;
use crate::geometry::{Point2, Pose2};
use crate::ids::{KeyFrameId, MapId, MapPointId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoopKind {
    Loop,
    Merge,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopCandidate {
    pub kind: LoopKind,
    pub query: KeyFrameId,
    pub query_map: MapId,
    pub candidate: KeyFrameId,
    pub candidate_map: MapId,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GlobalKind {
    Gba,
    Lc,
    Mm,
}

impl GlobalKind {
    pub fn name(self) -> &'static str {
        match self {
            GlobalKind::Gba => "GBA",
            GlobalKind::Lc => "LC",
            GlobalKind::Mm => "MM",
        }
    }
}

/// Re-homing of an absorbed map into a survivor, in the survivor's frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeDirective {
    pub absorbed: MapId,
    pub survivor: MapId,
    pub transform: Pose2,
}

/// Everything a global map update changed, with final values.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalUpdateRecord {
    pub kind: GlobalKind,
    pub map_id: MapId,
    pub keyframes: BTreeMap<KeyFrameId, Pose2>,
    pub points: BTreeMap<MapPointId, Point2>,
    /// `(absorbed, survivor)` point fusions, applied in order.
    pub fused: Vec<(MapPointId, MapPointId)>,
    pub merge: Option<MergeDirective>,
}

impl GlobalUpdateRecord {
    pub fn empty(kind: GlobalKind, map_id: MapId) -> Self {
        Self { kind, map_id, keyframes: BTreeMap::new(), points: BTreeMap::new(), fused: Vec::new(), merge: None }
    }
}

/// Finds the keyframe outside `query`'s two-hop covisibility neighborhood whose
/// landmark signature has maximal Jaccard similarity with the query's, provided it
/// reaches `tau`. Ties go to the smaller keyframe id.
pub fn detect_loop_or_merge(
    maps: &BTreeMap<MapId, Map>,
    query_map: MapId,
    query: KeyFrameId,
    tau: f64,
) -> Option<LoopCandidate> {
    let home = maps.get(&query_map)?;
    if !home.keyframes.contains_key(&query) {
        return None;
    }
    let signature = home.signature(query);
    let excluded = home.covisible_neighborhood(query, 2);
    let mut best: Option<(f64, KeyFrameId, MapId)> = None;
    for (map_id, map) in maps {
        for kf in map.keyframes.keys() {
            if *map_id == query_map && excluded.contains(kf) {
                continue;
            }
            let s = jaccard(&signature, &map.signature(*kf));
            if s < tau {
                continue;
            }
            let better = match best {
                None => true,
                Some((bs, bk, _)) => s > bs || (s == bs && *kf < bk),
            };
            if better {
                best = Some((s, *kf, *map_id));
            }
        }
    }
    best.map(|(score, candidate, candidate_map)| LoopCandidate {
        kind: if candidate_map == query_map { LoopKind::Loop } else { LoopKind::Merge },
        query,
        query_map,
        candidate,
        candidate_map,
        score,
    })
}

/// Duplicate points between two keyframes of one map, as `(absorbed, survivor)`
/// pairs; the point born earlier survives.
pub fn duplicate_pairs(map: &Map, a: KeyFrameId, b: KeyFrameId) -> Vec<(MapPointId, MapPointId)> {
    let by_landmark = |k: KeyFrameId| -> BTreeMap<u32, MapPointId> {
        map.keyframes
            .get(&k)
            .map(|kf| {
                kf.observations.keys().filter_map(|m| map.map_points.get(m).map(|p| (p.origin_landmark, *m))).collect()
            })
            .unwrap_or_default()
    };
    let la = by_landmark(a);
    let lb = by_landmark(b);
    let mut out = Vec::new();
    for (l, ma) in &la {
        let Some(mb) = lb.get(l) else { continue };
        if ma == mb {
            continue;
        }
        let key = |m: &MapPointId| (map.map_points[m].birth, *m);
        let (absorbed, survivor) = if key(ma) < key(mb) { (*mb, *ma) } else { (*ma, *mb) };
        out.push((absorbed, survivor));
    }
    out
}

/// Fuses `absorbed` into `survivor`: observers move over, the absorbed point is
/// removed. Returns the keyframes whose observations changed.
pub fn fuse_points(map: &mut Map, absorbed: MapPointId, survivor: MapPointId) -> BTreeSet<KeyFrameId> {
    if absorbed == survivor || !map.map_points.contains_key(&survivor) {
        return BTreeSet::new();
    }
    let Some(gone) = map.map_points.remove(&absorbed) else { return BTreeSet::new() };
    let mut touched = BTreeSet::new();
    for o in &gone.observers {
        let Some(kf) = map.keyframes.get_mut(o) else { continue };
        if let Some(obs) = kf.observations.remove(&absorbed) {
            kf.observations.entry(survivor).or_insert(obs);
            touched.insert(*o);
        }
    }
    let sp = map.map_points.get_mut(&survivor).expect("survivor checked above");
    sp.observers.extend(touched.iter().copied());
    let mut affected = touched.clone();
    affected.extend(sp.observers.iter().copied());
    map.recompute_covisibility(&affected);
    touched
}

/// Closes a loop inside one map: fuses the duplicated points of the two keyframes
/// and runs global bundle adjustment.
pub fn close_loop(
    map: &mut Map,
    cand: &LoopCandidate,
    params: &KernelParams,
) -> Result<GlobalUpdateRecord, KernelError> {
    if cand.kind != LoopKind::Loop || cand.query_map != map.map_id || cand.candidate_map != map.map_id {
        return Err(KernelError::WrongCandidateKind);
    }
    for k in [cand.query, cand.candidate] {
        if !map.keyframes.contains_key(&k) {
            return Err(KernelError::UnknownKeyFrame(k));
        }
    }
    let mut work = map.clone();
    let fused = duplicate_pairs(&work, cand.query, cand.candidate);
    let mut touched = BTreeSet::new();
    for (a, s) in &fused {
        touched.extend(fuse_points(&mut work, *a, *s));
    }
    let dirty = global_bundle_adjust(&mut work, params)?;
    *map = work;

    let mut record = GlobalUpdateRecord::empty(GlobalKind::Lc, map.map_id);
    record.fused = fused.clone();
    for k in dirty.keyframes.iter().chain(touched.iter()) {
        record.keyframes.insert(*k, map.keyframes[k].pose);
    }
    let survivors = fused.iter().map(|(_, s)| s);
    for m in dirty.points.iter().chain(survivors) {
        if let Some(p) = map.map_points.get(m) {
            record.points.insert(*m, p.position);
        }
    }
    Ok(record)
}

/// Re-homes a pose of an absorbed map into the survivor frame.
pub fn rehome_pose(transform: &Pose2, pose: &Pose2) -> Pose2 {
    transform.compose(pose)
}

/// Re-homes a point of an absorbed map into the survivor frame.
pub fn rehome_point(transform: &Pose2, p: &Point2) -> Point2 {
    transform.transform_point(p)
}

/// Merges the two maps named by a MERGE candidate. The map with fewer keyframes
/// is aligned rigidly onto the other through the shared landmarks, re-homed,
/// its duplicated points fused, and the union optimized globally.
pub fn merge_maps(
    maps: &mut BTreeMap<MapId, Map>,
    cand: &LoopCandidate,
    params: &KernelParams,
) -> Result<GlobalUpdateRecord, KernelError> {
    if cand.kind != LoopKind::Merge || cand.query_map == cand.candidate_map {
        return Err(KernelError::WrongCandidateKind);
    }
    let qa = maps.get(&cand.query_map).ok_or(KernelError::UnknownMap(cand.query_map))?;
    let cb = maps.get(&cand.candidate_map).ok_or(KernelError::UnknownMap(cand.candidate_map))?;
    for (m, k) in [(qa, cand.query), (cb, cand.candidate)] {
        if !m.keyframes.contains_key(&k) {
            return Err(KernelError::UnknownKeyFrame(k));
        }
    }
    let landmark_positions = |m: &Map, k: KeyFrameId| -> BTreeMap<u32, Point2> {
        m.keyframes[&k]
            .observations
            .keys()
            .filter_map(|id| m.map_points.get(id).map(|p| (p.origin_landmark, p.position)))
            .collect()
    };
    let lq = landmark_positions(qa, cand.query);
    let lc = landmark_positions(cb, cand.candidate);

    let query_absorbed = match qa.keyframes.len().cmp(&cb.keyframes.len()) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => qa.map_id > cb.map_id,
    };
    let (absorbed_id, survivor_id, from, to) = if query_absorbed {
        (cand.query_map, cand.candidate_map, &lq, &lc)
    } else {
        (cand.candidate_map, cand.query_map, &lc, &lq)
    };
    let pairs: Vec<(Point2, Point2)> = from.iter().filter_map(|(l, p)| to.get(l).map(|q| (*p, *q))).collect();
    if pairs.len() < params.min_merge_pairs {
        return Err(KernelError::InsufficientOverlap(pairs.len()));
    }
    let transform =
        compute_alignment(&pairs, false).map_err(|_| KernelError::InsufficientOverlap(pairs.len()))?.as_pose();

    let mut survivor = maps[&survivor_id].clone();
    let absorbed = maps[&absorbed_id].clone();
    let moved_kfs: BTreeSet<KeyFrameId> = absorbed.keyframes.keys().copied().collect();
    for (id, mut kf) in absorbed.keyframes {
        kf.pose = rehome_pose(&transform, &kf.pose);
        kf.map_id = survivor_id;
        survivor.keyframes.insert(id, kf);
    }
    for (id, mut mp) in absorbed.map_points {
        mp.position = rehome_point(&transform, &mp.position);
        survivor.map_points.insert(id, mp);
    }
    survivor.rebuild_derived();

    let fused = duplicate_pairs(&survivor, cand.query, cand.candidate);
    for (a, s) in &fused {
        fuse_points(&mut survivor, *a, *s);
    }
    let dirty = global_bundle_adjust(&mut survivor, params)?;

    let mut record = GlobalUpdateRecord::empty(GlobalKind::Mm, survivor_id);
    record.merge = Some(MergeDirective { absorbed: absorbed_id, survivor: survivor_id, transform });
    record.fused = fused;
    for k in dirty.keyframes.iter().chain(moved_kfs.iter()) {
        record.keyframes.insert(*k, survivor.keyframes[k].pose);
    }
    for (id, mp) in &survivor.map_points {
        if dirty.points.contains(id) || mp.observers.iter().any(|o| moved_kfs.contains(o)) {
            record.points.insert(*id, mp.position);
        }
    }
    maps.remove(&absorbed_id);
    maps.insert(survivor_id, survivor);
    Ok(record)
}
