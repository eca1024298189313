//! Two-tier replicated SLAM state.
//!
//! Remote updates land in a staging area and are promoted into the SLAM state
//! only once every reference they carry resolves. Keyframe poses and point
//! positions are last-writer-wins registers ordered by [`Version`]; observer
//! sets and covisibility are always recomputed from observations, and fused
//! points and merged maps leave alias entries behind so that late messages are
//! rehomed deterministically. Global updates are promoted atomically when their
//! final batch completes the sequence.

pub mod codec;
mod digest;
pub mod messages;

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::geometry::Pose2;
use crate::ids::{KeyFrameId, MapId, MapPointId, Role};
use crate::kernel::{
    fuse_points, DirtySet, GlobalUpdateRecord, KernelError, KeyFrame, Map, MapPoint, MergeDirective, Version,
};

pub use digest::canonical_bytes;
pub use messages::{
    BatchKind, GlobalUpdateStart, KeyFrameRecord, KeyFrameUpdate, MapBatch, NewKeyFramePayload, PointRecord,
    PointUpdate,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromotionOutcome {
    Promoted,
    Staged,
    Duplicate,
    /// The message carried an older version than the promoted value.
    Superseded,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StateError {
    #[error("unknown map {0}; payload staged")]
    UnknownMap(MapId),
    #[error("global batch of epoch {batch} is older than the current epoch {current}")]
    EpochMismatch { batch: u64, current: u64 },
}

/// 128-bit digest of the canonical S_slam stream, as 32 lowercase hex characters.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateDigest(pub String);

impl fmt::Display for StateDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StateStats {
    pub received: u64,
    pub promoted: u64,
    pub staged: u64,
    pub duplicates: u64,
    pub superseded: u64,
    pub discarded: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Block {
    UnknownMap(MapId),
    Unresolved,
}

/// The promoted entities plus the alias tables needed to interpret late messages.
#[derive(Debug, Clone, Default)]
struct Replica {
    maps: BTreeMap<MapId, Map>,
    kf_home: BTreeMap<KeyFrameId, MapId>,
    point_home: BTreeMap<MapPointId, MapId>,
    point_alias: BTreeMap<MapPointId, MapPointId>,
    map_alias: BTreeMap<MapId, (MapId, Pose2)>,
}

fn rehome_pose(t: Option<Pose2>, p: Pose2) -> Pose2 {
    match t {
        Some(t) => t.compose(&p),
        None => p,
    }
}

fn rehome_point(t: Option<Pose2>, p: crate::Point2) -> crate::Point2 {
    match t {
        Some(t) => t.transform_point(&p),
        None => p,
    }
}

fn lww(incoming: Version, current: Version) -> PromotionOutcome {
    match incoming.cmp(&current) {
        std::cmp::Ordering::Greater => PromotionOutcome::Promoted,
        std::cmp::Ordering::Equal => PromotionOutcome::Duplicate,
        std::cmp::Ordering::Less => PromotionOutcome::Superseded,
    }
}

/// Combines per-item outcomes: any promotion wins, then supersession.
fn combine(a: PromotionOutcome, b: PromotionOutcome) -> PromotionOutcome {
    use PromotionOutcome::*;
    match (a, b) {
        (Staged, _) | (_, Staged) => Staged,
        (Promoted, _) | (_, Promoted) => Promoted,
        (Superseded, _) | (_, Superseded) => Superseded,
        _ => Duplicate,
    }
}

impl Replica {
    fn resolve_point(&self, mut id: MapPointId) -> MapPointId {
        while let Some(next) = self.point_alias.get(&id) {
            id = *next;
        }
        id
    }

    /// Follows merge aliases; the transform maps values from `id`'s frame into the result's.
    fn resolve_map(&self, id: MapId) -> (MapId, Option<Pose2>) {
        let mut m = id;
        let mut t: Option<Pose2> = None;
        while let Some((next, step)) = self.map_alias.get(&m) {
            t = Some(match t {
                None => *step,
                Some(acc) => step.compose(&acc),
            });
            m = *next;
        }
        (m, t)
    }

    fn apply_new_keyframe(&mut self, p: &NewKeyFramePayload) -> Result<PromotionOutcome, Block> {
        let rec = &p.keyframe;
        if self.kf_home.contains_key(&rec.id) {
            return self.merge_known_keyframe(p);
        }
        let (mid, t) = self.resolve_map(rec.map_id);
        if let Entry::Vacant(slot) = self.maps.entry(mid) {
            if p.map_origin && t.is_none() {
                slot.insert(Map::new(mid, rec.id));
            } else {
                return Err(Block::UnknownMap(rec.map_id));
            }
        }
        let created: BTreeSet<MapPointId> = p.new_points.iter().map(|m| m.id).collect();
        let mut observations = BTreeMap::new();
        for (m, o) in &rec.observations {
            let r = self.resolve_point(*m);
            let ok = match self.point_home.get(&r) {
                Some(home) => *home == mid,
                None => r == *m && created.contains(m),
            };
            if !ok {
                return Err(Block::Unresolved);
            }
            observations.entry(r).or_insert(*o);
        }
        let mut new_points = Vec::new();
        let mut existing = Vec::new();
        for pr in &p.new_points {
            if self.resolve_point(pr.id) != pr.id {
                continue;
            }
            if self.point_home.contains_key(&pr.id) {
                existing.push(pr);
                continue;
            }
            new_points.push(MapPoint {
                id: pr.id,
                position: rehome_point(t, pr.position),
                observers: BTreeSet::new(),
                origin_landmark: pr.origin_landmark,
                birth: pr.birth,
                version: pr.version,
                dirty: false,
            });
        }
        for mp in &new_points {
            self.point_home.insert(mp.id, mid);
        }
        let kf = KeyFrame {
            id: rec.id,
            pose: rehome_pose(t, rec.pose),
            timestamp: rec.timestamp,
            observations,
            covisible: BTreeMap::new(),
            map_id: mid,
            ref_point_count: rec.ref_point_count,
            version: rec.version,
            dirty: false,
        };
        self.kf_home.insert(rec.id, mid);
        self.maps.get_mut(&mid).expect("map ensured above").insert_keyframe(kf, new_points);
        for pr in existing {
            let _ = self.apply_point_update(&PointUpdate {
                id: pr.id,
                map_id: pr.map_id,
                position: pr.position,
                version: pr.version,
            });
        }
        Ok(PromotionOutcome::Promoted)
    }

    /// Re-delivery of a known keyframe: its values act as last-writer-wins updates.
    fn merge_known_keyframe(&mut self, p: &NewKeyFramePayload) -> Result<PromotionOutcome, Block> {
        let rec = &p.keyframe;
        let mut out = PromotionOutcome::Duplicate;
        let mut blocked = false;
        for pr in &p.new_points {
            match self.apply_point_update(&PointUpdate {
                id: pr.id,
                map_id: pr.map_id,
                position: pr.position,
                version: pr.version,
            }) {
                Ok(o) => out = combine(out, o),
                Err(_) => blocked = true,
            }
        }
        let upd = KeyFrameUpdate {
            id: rec.id,
            map_id: rec.map_id,
            pose: rec.pose,
            visible: rec.observations.iter().map(|(m, _)| *m).collect(),
            version: rec.version,
        };
        match self.apply_keyframe_update(&upd) {
            Ok(o) => out = combine(out, o),
            Err(_) => blocked = true,
        }
        if blocked {
            Err(Block::Unresolved)
        } else {
            Ok(out)
        }
    }

    fn apply_keyframe_update(&mut self, u: &KeyFrameUpdate) -> Result<PromotionOutcome, Block> {
        let Some(home) = self.kf_home.get(&u.id).copied() else { return Err(Block::Unresolved) };
        let (mid, t) = self.resolve_map(u.map_id);
        if mid != home {
            return Err(Block::Unresolved);
        }
        if u.visible.iter().any(|v| !self.point_home.contains_key(&self.resolve_point(*v))) {
            return Err(Block::Unresolved);
        }
        let kf = self.maps.get_mut(&home).and_then(|m| m.keyframes.get_mut(&u.id)).expect("home index is exact");
        let out = lww(u.version, kf.version);
        if out == PromotionOutcome::Promoted {
            kf.pose = rehome_pose(t, u.pose);
            kf.version = u.version;
        }
        Ok(out)
    }

    fn apply_point_update(&mut self, u: &PointUpdate) -> Result<PromotionOutcome, Block> {
        if self.resolve_point(u.id) != u.id {
            return Ok(PromotionOutcome::Superseded);
        }
        let Some(home) = self.point_home.get(&u.id).copied() else { return Err(Block::Unresolved) };
        let (mid, t) = self.resolve_map(u.map_id);
        if mid != home {
            return Err(Block::Unresolved);
        }
        let mp = self.maps.get_mut(&home).and_then(|m| m.map_points.get_mut(&u.id)).expect("home index is exact");
        let out = lww(u.version, mp.version);
        if out == PromotionOutcome::Promoted {
            mp.position = rehome_point(t, u.position);
            mp.version = u.version;
        }
        Ok(out)
    }

    fn apply_merge(&mut self, d: &MergeDirective) -> Result<PromotionOutcome, Block> {
        let (surv, ts) = self.resolve_map(d.survivor);
        if !self.maps.contains_key(&surv) {
            return Err(Block::UnknownMap(d.survivor));
        }
        if self.map_alias.contains_key(&d.absorbed) || d.absorbed == surv {
            return Ok(PromotionOutcome::Duplicate);
        }
        let total = match ts {
            Some(ts) => ts.compose(&d.transform),
            None => d.transform,
        };
        self.map_alias.insert(d.absorbed, (d.survivor, d.transform));
        let Some(absorbed) = self.maps.remove(&d.absorbed) else { return Ok(PromotionOutcome::Promoted) };
        let target = self.maps.get_mut(&surv).expect("checked above");
        for (id, mut kf) in absorbed.keyframes {
            kf.pose = total.compose(&kf.pose);
            kf.map_id = surv;
            self.kf_home.insert(id, surv);
            target.keyframes.insert(id, kf);
        }
        for (id, mut mp) in absorbed.map_points {
            mp.position = total.transform_point(&mp.position);
            self.point_home.insert(id, surv);
            target.map_points.insert(id, mp);
        }
        target.initialized_optimized |= absorbed.initialized_optimized;
        target.rebuild_derived();
        Ok(PromotionOutcome::Promoted)
    }

    fn apply_fusion(&mut self, absorbed: MapPointId, survivor: MapPointId) -> Result<PromotionOutcome, Block> {
        let x = self.resolve_point(absorbed);
        let y = self.resolve_point(survivor);
        if x == y {
            return Ok(PromotionOutcome::Duplicate);
        }
        let Some(yh) = self.point_home.get(&y).copied() else { return Err(Block::Unresolved) };
        if let Some(xh) = self.point_home.get(&x).copied() {
            if xh != yh {
                return Err(Block::Unresolved);
            }
            fuse_points(self.maps.get_mut(&yh).expect("home index is exact"), x, y);
            self.point_home.remove(&x);
        }
        self.point_alias.insert(x, y);
        Ok(PromotionOutcome::Promoted)
    }

    fn apply_initialized(&mut self, map_id: MapId) -> Result<PromotionOutcome, Block> {
        let (mid, _) = self.resolve_map(map_id);
        let Some(m) = self.maps.get_mut(&mid) else { return Err(Block::UnknownMap(map_id)) };
        if m.initialized_optimized {
            Ok(PromotionOutcome::Duplicate)
        } else {
            m.initialized_optimized = true;
            Ok(PromotionOutcome::Promoted)
        }
    }

    /// Applies the batches of one global update in order; merge first, then fusions, then values.
    fn apply_global(&mut self, batches: &[MapBatch]) -> Result<(), Block> {
        for b in batches {
            if let Some(d) = &b.merge {
                self.apply_merge(d)?;
            }
        }
        for b in batches {
            for (x, y) in &b.fused {
                self.apply_fusion(*x, *y)?;
            }
        }
        for b in batches {
            for p in &b.points {
                self.apply_point_update(p)?;
            }
            for k in &b.keyframes {
                self.apply_keyframe_update(k)?;
            }
        }
        for b in batches {
            if b.initialized {
                self.apply_initialized(b.map_id)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
struct GlobalBuffer {
    batches: BTreeMap<u32, MapBatch>,
    final_seq: Option<u32>,
}

impl GlobalBuffer {
    fn complete(&self) -> bool {
        self.final_seq.is_some_and(|f| (0..=f).all(|s| self.batches.contains_key(&s)))
    }
}

#[derive(Debug, Clone, Default)]
struct Staging {
    keyframes: BTreeMap<(KeyFrameId, Version), NewKeyFramePayload>,
    kf_updates: BTreeMap<KeyFrameId, KeyFrameUpdate>,
    point_updates: BTreeMap<MapPointId, PointUpdate>,
    merges: BTreeMap<MapId, MergeDirective>,
    fusions: BTreeSet<(MapPointId, MapPointId)>,
    init_flags: BTreeSet<MapId>,
    globals: BTreeMap<(u64, Role), GlobalBuffer>,
}

impl Staging {
    fn len(&self) -> usize {
        self.keyframes.len()
            + self.kf_updates.len()
            + self.point_updates.len()
            + self.merges.len()
            + self.fusions.len()
            + self.init_flags.len()
            + self.globals.values().map(|g| g.batches.len()).sum::<usize>()
    }
}

/// Per-node replicated state: promoted SLAM state, staging buffers, dirty sets
/// awaiting publication and the pause flag of the global-update protocol.
#[derive(Debug, Clone, Default)]
pub struct SystemState {
    replica: Replica,
    staged: Staging,
    dirty_kfs: BTreeSet<KeyFrameId>,
    dirty_mps: BTreeSet<MapPointId>,
    paused: bool,
    pause_epoch: u64,
    clock: u64,
    closed_globals: BTreeMap<(u64, Role), bool>,
    stats: StateStats,
}

impl SystemState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn maps(&self) -> &BTreeMap<MapId, Map> {
        &self.replica.maps
    }

    pub fn map(&self, id: MapId) -> Option<&Map> {
        self.replica.maps.get(&self.resolve_map(id))
    }

    /// Current identity of a map that may since have been merged into another.
    pub fn resolve_map(&self, id: MapId) -> MapId {
        self.replica.resolve_map(id).0
    }

    /// Like [`Self::resolve_map`], with the transform taking values from `id`'s
    /// frame into the surviving map's; `None` when `id` was never merged.
    pub fn resolve_map_transform(&self, id: MapId) -> (MapId, Option<Pose2>) {
        self.replica.resolve_map(id)
    }

    pub fn resolve_point(&self, id: MapPointId) -> MapPointId {
        self.replica.resolve_point(id)
    }

    pub fn keyframe(&self, id: KeyFrameId) -> Option<&KeyFrame> {
        let home = self.replica.kf_home.get(&id)?;
        self.replica.maps.get(home)?.keyframes.get(&id)
    }

    pub fn keyframe_map(&self, id: KeyFrameId) -> Option<MapId> {
        self.replica.kf_home.get(&id).copied()
    }

    pub fn keyframe_count(&self) -> usize {
        self.replica.kf_home.len()
    }

    pub fn paused(&self) -> bool {
        self.paused
    }

    pub fn pause_epoch(&self) -> u64 {
        self.pause_epoch
    }

    pub fn dirty_keyframes(&self) -> &BTreeSet<KeyFrameId> {
        &self.dirty_kfs
    }

    pub fn dirty_points(&self) -> &BTreeSet<MapPointId> {
        &self.dirty_mps
    }

    pub fn has_dirty(&self) -> bool {
        !self.dirty_kfs.is_empty() || !self.dirty_mps.is_empty()
    }

    pub fn stats(&self) -> StateStats {
        self.stats
    }

    /// Number of staged items (the part of S_full beyond S_slam).
    pub fn staged_len(&self) -> usize {
        self.staged.len()
    }

    /// Whether any global update is buffered but not yet promoted.
    pub fn has_staged_global(&self) -> bool {
        !self.staged.globals.is_empty()
    }

    /// A fresh version for a local write.
    pub fn stamp(&mut self, writer: Role) -> Version {
        self.clock += 1;
        Version { epoch: self.pause_epoch, lamport: self.clock, writer: writer.code() }
    }

    /// Epoch and version for a global update about to be started by `writer`.
    pub fn next_global_stamp(&mut self, writer: Role) -> (u64, Version) {
        let epoch = self.pause_epoch + 1;
        self.clock += 1;
        (epoch, Version { epoch, lamport: self.clock, writer: writer.code() })
    }

    fn observe(&mut self, v: Version) {
        self.clock = self.clock.max(v.lamport);
    }

    fn count(&mut self, o: PromotionOutcome) -> PromotionOutcome {
        match o {
            PromotionOutcome::Promoted => self.stats.promoted += 1,
            PromotionOutcome::Staged => self.stats.staged += 1,
            PromotionOutcome::Duplicate => self.stats.duplicates += 1,
            PromotionOutcome::Superseded => self.stats.superseded += 1,
        }
        o
    }

    /// Stamps and inserts a keyframe created on this node; returns the payload to publish.
    pub fn insert_own_keyframe(
        &mut self,
        mut kf: KeyFrame,
        mut new_points: Vec<MapPoint>,
        map_origin: bool,
        writer: Role,
    ) -> NewKeyFramePayload {
        let v = self.stamp(writer);
        kf.version = v;
        for p in &mut new_points {
            p.version = v;
        }
        let payload = NewKeyFramePayload {
            keyframe: KeyFrameRecord::from_keyframe(&kf),
            new_points: new_points.iter().map(|p| PointRecord::from_point(p, kf.map_id)).collect(),
            map_origin,
        };
        let out = self.apply_new_keyframe(&payload);
        debug_assert_eq!(out, Ok(PromotionOutcome::Promoted));
        payload
    }

    /// Inserts a freshly initialized map keyframe by keyframe; returns the payloads.
    pub fn insert_own_map(&mut self, map: Map, writer: Role) -> Vec<NewKeyFramePayload> {
        let origin = map.origin_kf;
        let mut out = Vec::new();
        for (id, kf) in &map.keyframes {
            let points: Vec<MapPoint> = map.map_points.values().filter(|p| p.birth == *id).cloned().collect();
            let mut kf = kf.clone();
            kf.map_id = map.map_id;
            out.push(self.insert_own_keyframe(kf, points, *id == origin, writer));
        }
        out
    }

    /// Runs a kernel operation in place on one map, stamping and marking dirty
    /// everything it changed.
    pub fn run_local<F>(&mut self, map_id: MapId, writer: Role, f: F) -> Result<DirtySet, KernelError>
    where
        F: FnOnce(&mut Map) -> Result<DirtySet, KernelError>,
    {
        let mid = self.resolve_map(map_id);
        if !self.replica.maps.contains_key(&mid) {
            return Err(KernelError::UnknownMap(map_id));
        }
        let v = self.stamp(writer);
        let map = self.replica.maps.get_mut(&mid).expect("checked above");
        let dirty = f(map)?;
        for k in &dirty.keyframes {
            if let Some(kf) = map.keyframes.get_mut(k) {
                kf.version = v;
                kf.dirty = false;
            }
        }
        for m in &dirty.points {
            if let Some(mp) = map.map_points.get_mut(m) {
                mp.version = v;
                mp.dirty = false;
            }
        }
        self.dirty_kfs.extend(dirty.keyframes.iter().copied());
        self.dirty_mps.extend(dirty.points.iter().copied());
        Ok(dirty)
    }

    pub fn apply_new_keyframe(&mut self, p: &NewKeyFramePayload) -> Result<PromotionOutcome, StateError> {
        self.stats.received += 1;
        self.observe(p.keyframe.version);
        match self.replica.apply_new_keyframe(p) {
            Ok(o) => {
                self.count(o);
                if o == PromotionOutcome::Promoted {
                    self.drain_staged();
                }
                Ok(o)
            }
            Err(b) => {
                self.staged.keyframes.insert((p.keyframe.id, p.keyframe.version), p.clone());
                self.count(PromotionOutcome::Staged);
                match b {
                    Block::UnknownMap(m) => Err(StateError::UnknownMap(m)),
                    Block::Unresolved => Ok(PromotionOutcome::Staged),
                }
            }
        }
    }

    pub fn apply_keyframe_update(&mut self, u: &KeyFrameUpdate) -> PromotionOutcome {
        self.stats.received += 1;
        self.observe(u.version);
        let o = self.keyframe_update_inner(u);
        if o == PromotionOutcome::Promoted {
            self.drain_staged();
        }
        self.count(o)
    }

    fn keyframe_update_inner(&mut self, u: &KeyFrameUpdate) -> PromotionOutcome {
        match self.replica.apply_keyframe_update(u) {
            Ok(o) => o,
            Err(_) => {
                let slot = self.staged.kf_updates.entry(u.id).or_insert_with(|| u.clone());
                if u.version > slot.version {
                    *slot = u.clone();
                }
                PromotionOutcome::Staged
            }
        }
    }

    fn point_update_inner(&mut self, u: &PointUpdate) -> PromotionOutcome {
        self.observe(u.version);
        match self.replica.apply_point_update(u) {
            Ok(o) => o,
            Err(_) => {
                let slot = self.staged.point_updates.entry(u.id).or_insert_with(|| u.clone());
                if u.version > slot.version {
                    *slot = u.clone();
                }
                PromotionOutcome::Staged
            }
        }
    }

    /// Pauses on a global-update start unless that update is already closed or stale.
    pub fn apply_global_start(&mut self, s: &GlobalUpdateStart) -> PromotionOutcome {
        self.stats.received += 1;
        let key = (s.epoch, s.writer);
        let o = if self.closed_globals.contains_key(&key) {
            PromotionOutcome::Duplicate
        } else if s.epoch < self.pause_epoch || (s.epoch == self.pause_epoch && !self.paused) {
            PromotionOutcome::Superseded
        } else {
            self.pause_epoch = s.epoch;
            self.paused = true;
            PromotionOutcome::Promoted
        };
        self.count(o)
    }

    pub fn apply_map_batch(&mut self, b: &MapBatch) -> Result<PromotionOutcome, StateError> {
        self.stats.received += 1;
        if b.kind.is_global() {
            return self.apply_global_batch(b);
        }
        let mut out = PromotionOutcome::Duplicate;
        if let Some(d) = &b.merge {
            let o = match self.replica.apply_merge(d) {
                Ok(o) => o,
                Err(_) => {
                    self.staged.merges.insert(d.absorbed, *d);
                    PromotionOutcome::Staged
                }
            };
            out = combine(out, o);
        }
        for (x, y) in &b.fused {
            let o = match self.replica.apply_fusion(*x, *y) {
                Ok(o) => o,
                Err(_) => {
                    self.staged.fusions.insert((*x, *y));
                    PromotionOutcome::Staged
                }
            };
            out = combine(out, o);
        }
        for p in &b.points {
            out = combine(out, self.point_update_inner(p));
        }
        for k in &b.keyframes {
            self.observe(k.version);
            out = combine(out, self.keyframe_update_inner(k));
        }
        if b.initialized {
            let o = match self.replica.apply_initialized(b.map_id) {
                Ok(o) => o,
                Err(_) => {
                    self.staged.init_flags.insert(b.map_id);
                    PromotionOutcome::Staged
                }
            };
            out = combine(out, o);
        }
        self.prune_dirty();
        self.drain_staged();
        Ok(self.count(out))
    }

    fn apply_global_batch(&mut self, b: &MapBatch) -> Result<PromotionOutcome, StateError> {
        let key = (b.epoch, b.writer);
        if let Some(promoted) = self.closed_globals.get(&key) {
            if *promoted {
                return Ok(self.count(PromotionOutcome::Duplicate));
            }
            self.stats.discarded += 1;
            return Err(StateError::EpochMismatch { batch: b.epoch, current: self.pause_epoch });
        }
        if b.epoch < self.pause_epoch {
            self.stats.discarded += 1;
            return Err(StateError::EpochMismatch { batch: b.epoch, current: self.pause_epoch });
        }
        if b.epoch > self.pause_epoch || !self.paused {
            // A lost or late start: pause implicitly.
            self.pause_epoch = b.epoch;
            self.paused = true;
        }
        for k in &b.keyframes {
            self.observe(k.version);
        }
        for p in &b.points {
            self.observe(p.version);
        }
        let buf = self.staged.globals.entry(key).or_default();
        if buf.batches.contains_key(&b.seq) {
            return Ok(self.count(PromotionOutcome::Duplicate));
        }
        buf.batches.insert(b.seq, b.clone());
        if b.is_final {
            buf.final_seq = Some(b.seq);
        }
        let o = if self.try_promote_global(key) { PromotionOutcome::Promoted } else { PromotionOutcome::Staged };
        if o == PromotionOutcome::Promoted {
            self.drain_staged();
        }
        Ok(self.count(o))
    }

    fn try_promote_global(&mut self, key: (u64, Role)) -> bool {
        let Some(buf) = self.staged.globals.get(&key) else { return false };
        if !buf.complete() {
            return false;
        }
        let batches: Vec<MapBatch> = buf.batches.values().cloned().collect();
        let mut work = self.replica.clone();
        if work.apply_global(&batches).is_err() {
            return false;
        }
        self.replica = work;
        self.staged.globals.remove(&key);
        self.closed_globals.insert(key, true);
        if key.0 == self.pause_epoch {
            self.paused = false;
        }
        self.prune_dirty();
        true
    }

    /// Abandons the global update in progress (its origin departed): staged
    /// batches of the current epoch are dropped and the node resumes.
    pub fn abandon_global(&mut self) -> usize {
        let epoch = self.pause_epoch;
        let keys: Vec<_> = self.staged.globals.keys().filter(|(e, _)| *e == epoch).copied().collect();
        let mut dropped = 0;
        for k in keys {
            dropped += self.staged.globals.remove(&k).map(|g| g.batches.len()).unwrap_or(0);
            self.closed_globals.insert(k, false);
        }
        self.paused = false;
        dropped
    }

    fn prune_dirty(&mut self) {
        let replica = &self.replica;
        self.dirty_mps.retain(|m| replica.point_home.contains_key(m));
    }

    /// Retries staged items until no further promotion happens.
    fn drain_staged(&mut self) {
        loop {
            let mut progress = false;
            for (key, p) in std::mem::take(&mut self.staged.keyframes) {
                match self.replica.apply_new_keyframe(&p) {
                    Ok(_) => progress = true,
                    Err(_) => {
                        self.staged.keyframes.insert(key, p);
                    }
                }
            }
            for (key, d) in std::mem::take(&mut self.staged.merges) {
                match self.replica.apply_merge(&d) {
                    Ok(_) => progress = true,
                    Err(_) => {
                        self.staged.merges.insert(key, d);
                    }
                }
            }
            for (x, y) in std::mem::take(&mut self.staged.fusions) {
                match self.replica.apply_fusion(x, y) {
                    Ok(_) => progress = true,
                    Err(_) => {
                        self.staged.fusions.insert((x, y));
                    }
                }
            }
            for (key, u) in std::mem::take(&mut self.staged.point_updates) {
                match self.replica.apply_point_update(&u) {
                    Ok(_) => progress = true,
                    Err(_) => {
                        self.staged.point_updates.insert(key, u);
                    }
                }
            }
            for (key, u) in std::mem::take(&mut self.staged.kf_updates) {
                match self.replica.apply_keyframe_update(&u) {
                    Ok(_) => progress = true,
                    Err(_) => {
                        self.staged.kf_updates.insert(key, u);
                    }
                }
            }
            for m in std::mem::take(&mut self.staged.init_flags) {
                match self.replica.apply_initialized(m) {
                    Ok(_) => progress = true,
                    Err(_) => {
                        self.staged.init_flags.insert(m);
                    }
                }
            }
            let keys: Vec<_> = self.staged.globals.keys().copied().collect();
            for key in keys {
                if self.try_promote_global(key) {
                    progress = true;
                }
            }
            if !progress {
                break;
            }
        }
        self.prune_dirty();
    }

    /// Local batches for `center` and its `n_covisible` strongest covisible
    /// keyframes that are dirty, with the dirty points the window observes.
    /// `schedule[i]` is the size of batch `i`; the last entry repeats.
    pub fn collect_dirty(
        &mut self,
        center: KeyFrameId,
        n_covisible: usize,
        schedule: &[usize],
        writer: Role,
    ) -> Vec<MapBatch> {
        let Some(home) = self.keyframe_map(center) else { return Vec::new() };
        let map = &self.replica.maps[&home];
        let mut window: BTreeSet<KeyFrameId> = BTreeSet::from([center]);
        window.extend(map.strongest_covisible(center, n_covisible));
        let kfs: Vec<KeyFrameId> = window.intersection(&self.dirty_kfs).copied().collect();
        let pts: BTreeSet<MapPointId> = window
            .iter()
            .flat_map(|k| map.keyframes[k].observations.keys())
            .filter(|m| self.dirty_mps.contains(m))
            .copied()
            .collect();
        let mut batches = self.build_local(home, &kfs, &pts, schedule, writer);
        if let Some(b) = batches.first_mut() {
            b.center = Some(center);
        }
        batches
    }

    /// Local batches covering every dirty entity, grouped by map.
    pub fn collect_all_dirty(&mut self, schedule: &[usize], writer: Role) -> Vec<MapBatch> {
        let mut by_map: BTreeMap<MapId, (Vec<KeyFrameId>, BTreeSet<MapPointId>)> = BTreeMap::new();
        for k in &self.dirty_kfs {
            if let Some(m) = self.replica.kf_home.get(k) {
                by_map.entry(*m).or_default().0.push(*k);
            }
        }
        for p in &self.dirty_mps {
            if let Some(m) = self.replica.point_home.get(p) {
                by_map.entry(*m).or_default().1.insert(*p);
            }
        }
        let mut out = Vec::new();
        for (m, (kfs, pts)) in by_map {
            out.extend(self.build_local(m, &kfs, &pts, schedule, writer));
        }
        for (i, b) in out.iter_mut().enumerate() {
            b.seq = i as u32;
        }
        let n = out.len();
        if let Some(b) = out.get_mut(n.wrapping_sub(1)) {
            b.is_final = true;
        }
        out
    }

    /// Chunks `kfs` per `schedule`; dirty points go with the first chunk whose
    /// keyframes observe them, `extra_points` into the last batch.
    fn build_local(
        &mut self,
        map_id: MapId,
        kfs: &[KeyFrameId],
        extra_points: &BTreeSet<MapPointId>,
        schedule: &[usize],
        writer: Role,
    ) -> Vec<MapBatch> {
        if kfs.is_empty() && extra_points.is_empty() {
            return Vec::new();
        }
        let map = &self.replica.maps[&map_id];
        let mut batches = Vec::new();
        let mut taken: BTreeSet<MapPointId> = BTreeSet::new();
        let mut rest = kfs;
        let mut i = 0;
        while !rest.is_empty() {
            let size = schedule.get(i).or(schedule.last()).copied().unwrap_or(usize::MAX).max(1);
            let (chunk, tail) = rest.split_at(size.min(rest.len()));
            rest = tail;
            let mut b = MapBatch::local(writer, map_id, self.pause_epoch);
            b.seq = i as u32;
            b.initialized = map.initialized_optimized;
            for k in chunk {
                let kf = &map.keyframes[k];
                b.keyframes.push(KeyFrameUpdate::from_keyframe(kf));
                for m in kf.observations.keys() {
                    if self.dirty_mps.contains(m) && taken.insert(*m) {
                        let mp = &map.map_points[m];
                        b.points.push(PointUpdate { id: *m, map_id, position: mp.position, version: mp.version });
                    }
                }
            }
            batches.push(b);
            i += 1;
        }
        let leftovers: Vec<MapPointId> = extra_points.iter().filter(|m| !taken.contains(m)).copied().collect();
        if !leftovers.is_empty() {
            if batches.is_empty() {
                let mut b = MapBatch::local(writer, map_id, self.pause_epoch);
                b.initialized = map.initialized_optimized;
                batches.push(b);
            }
            let last = batches.last_mut().expect("non-empty");
            for m in leftovers {
                let mp = &map.map_points[&m];
                last.points.push(PointUpdate { id: m, map_id, position: mp.position, version: mp.version });
                taken.insert(m);
            }
        }
        if let Some(b) = batches.last_mut() {
            b.is_final = true;
        }
        for k in kfs {
            self.dirty_kfs.remove(k);
        }
        for m in &taken {
            self.dirty_mps.remove(m);
        }
        batches
    }

    /// Full replica as messages, for a peer that (re)joins: every keyframe with
    /// the points it created, then merges and fusions, then map flags.
    pub fn export(&self, writer: Role) -> (Vec<NewKeyFramePayload>, Vec<MapBatch>) {
        let mut payloads = Vec::new();
        for map in self.replica.maps.values() {
            let mut ids: Vec<KeyFrameId> = map.keyframes.keys().copied().collect();
            ids.sort_by_key(|k| (*k != map.origin_kf, *k));
            for id in ids {
                let kf = &map.keyframes[&id];
                payloads.push(NewKeyFramePayload {
                    keyframe: KeyFrameRecord::from_keyframe(kf),
                    new_points: map
                        .map_points
                        .values()
                        .filter(|p| p.birth == id)
                        .map(|p| PointRecord::from_point(p, map.map_id))
                        .collect(),
                    map_origin: id == map.origin_kf,
                });
            }
            // Points whose birth keyframe lives elsewhere ride on any observer.
            let orphans: Vec<&MapPoint> =
                map.map_points.values().filter(|p| !map.keyframes.contains_key(&p.birth)).collect();
            for p in orphans {
                if let Some(obs) = p.observers.iter().next() {
                    if let Some(pl) = payloads.iter_mut().find(|pl| pl.keyframe.id == *obs) {
                        pl.new_points.push(PointRecord::from_point(p, map.map_id));
                    }
                }
            }
        }
        let mut batches = Vec::new();
        let any_map = self.replica.maps.keys().next().copied();
        for (absorbed, (survivor, t)) in &self.replica.map_alias {
            let mut b = MapBatch::local(writer, *survivor, self.pause_epoch);
            b.merge = Some(MergeDirective { absorbed: *absorbed, survivor: *survivor, transform: *t });
            batches.push(b);
        }
        if let Some(m) = any_map {
            let mut b = MapBatch::local(writer, m, self.pause_epoch);
            b.fused = self.replica.point_alias.iter().map(|(x, y)| (*x, *y)).collect();
            if !b.fused.is_empty() {
                batches.push(b);
            }
        }
        for map in self.replica.maps.values() {
            if map.initialized_optimized {
                let mut b = MapBatch::local(writer, map.map_id, self.pause_epoch);
                b.initialized = true;
                batches.push(b);
            }
        }
        (payloads, batches)
    }

    pub fn canonical_digest(&self) -> StateDigest {
        digest::digest(&self.replica.maps)
    }

    /// Asserts internal consistency of every promoted map and the home indexes.
    pub fn check_consistency(&self) -> Result<(), String> {
        for (id, m) in &self.replica.maps {
            m.check_consistency().map_err(|e| format!("{id}: {e}"))?;
            for k in m.keyframes.keys() {
                if self.replica.kf_home.get(k) != Some(id) {
                    return Err(format!("keyframe {k} home mismatch"));
                }
            }
            for p in m.map_points.keys() {
                if self.replica.point_home.get(p) != Some(id) {
                    return Err(format!("point {p} home mismatch"));
                }
            }
        }
        if self.replica.kf_home.len() != self.replica.maps.values().map(|m| m.keyframes.len()).sum::<usize>() {
            return Err("keyframe index has stale entries".into());
        }
        Ok(())
    }
}

/// Splits a global update record into batches of `batch_size` keyframes; the
/// last batch is FINAL and carries fusions, the merge directive and the
/// initialized flag. Points are spread evenly over the batches.
pub fn build_global_batches(
    record: &GlobalUpdateRecord,
    after: &Map,
    writer: Role,
    epoch: u64,
    version: Version,
    batch_size: usize,
) -> Vec<MapBatch> {
    let kfs: Vec<KeyFrameUpdate> = record
        .keyframes
        .iter()
        .map(|(id, pose)| KeyFrameUpdate {
            id: *id,
            map_id: record.map_id,
            pose: *pose,
            visible: after.keyframes.get(id).map(|k| k.observations.keys().copied().collect()).unwrap_or_default(),
            version,
        })
        .collect();
    let pts: Vec<PointUpdate> = record
        .points
        .iter()
        .map(|(id, p)| PointUpdate { id: *id, map_id: record.map_id, position: *p, version })
        .collect();
    let size = batch_size.max(1);
    let n = kfs.len().div_ceil(size).max(1);
    let per_batch_points = pts.len().div_ceil(n).max(1);
    let mut kf_chunks = kfs.chunks(size);
    let mut pt_chunks = pts.chunks(per_batch_points);
    (0..n)
        .map(|i| {
            let last = i + 1 == n;
            MapBatch {
                kind: BatchKind::Global(record.kind),
                writer,
                map_id: record.map_id,
                epoch,
                seq: i as u32,
                is_final: last,
                center: None,
                initialized: last,
                keyframes: kf_chunks.next().map(|c| c.to_vec()).unwrap_or_default(),
                points: pt_chunks.next().map(|c| c.to_vec()).unwrap_or_default(),
                fused: if last { record.fused.clone() } else { Vec::new() },
                merge: if last { record.merge } else { None },
            }
        })
        .collect()
}

/// Batch sizes of consecutive local publishes: doubling from `min`, capped at `max`.
pub fn growth_schedule(min: usize, max: usize, count: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(count);
    let mut s = min.max(1);
    for _ in 0..count {
        out.push(s.min(max));
        s = (s * 2).min(max.max(1));
    }
    out
}
