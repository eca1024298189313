//! Replication payloads exchanged between nodes.

use crate::geometry::{Point2, Pose2};
use crate::ids::{KeyFrameId, MapId, MapPointId, Role};
use crate::kernel::{GlobalKind, KeyFrame, LandmarkId, MapPoint, MergeDirective, Observation, Version};

use super::codec::{CodecError, Decode, Encode, Reader, Writer};

#[derive(Debug, Clone, PartialEq)]
pub struct KeyFrameRecord {
    pub id: KeyFrameId,
    pub map_id: MapId,
    pub pose: Pose2,
    pub timestamp: f64,
    pub ref_point_count: u32,
    pub observations: Vec<(MapPointId, Observation)>,
    pub version: Version,
}

impl KeyFrameRecord {
    pub fn from_keyframe(kf: &KeyFrame) -> Self {
        Self {
            id: kf.id,
            map_id: kf.map_id,
            pose: kf.pose,
            timestamp: kf.timestamp,
            ref_point_count: kf.ref_point_count,
            observations: kf.observations.iter().map(|(k, o)| (*k, *o)).collect(),
            version: kf.version,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointRecord {
    pub id: MapPointId,
    pub map_id: MapId,
    pub position: Point2,
    pub origin_landmark: LandmarkId,
    pub birth: KeyFrameId,
    pub version: Version,
}

impl PointRecord {
    pub fn from_point(mp: &MapPoint, map_id: MapId) -> Self {
        Self {
            id: mp.id,
            map_id,
            position: mp.position,
            origin_landmark: mp.origin_landmark,
            birth: mp.birth,
            version: mp.version,
        }
    }
}

/// A keyframe together with the map points it created.
#[derive(Debug, Clone, PartialEq)]
pub struct NewKeyFramePayload {
    pub keyframe: KeyFrameRecord,
    pub new_points: Vec<PointRecord>,
    /// Set on the first keyframe of a map; receivers create the map from it.
    pub map_origin: bool,
}

/// Updated parts of an existing keyframe.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyFrameUpdate {
    pub id: KeyFrameId,
    pub map_id: MapId,
    pub pose: Pose2,
    pub visible: Vec<MapPointId>,
    pub version: Version,
}

impl KeyFrameUpdate {
    pub fn from_keyframe(kf: &KeyFrame) -> Self {
        Self {
            id: kf.id,
            map_id: kf.map_id,
            pose: kf.pose,
            visible: kf.observations.keys().copied().collect(),
            version: kf.version,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointUpdate {
    pub id: MapPointId,
    pub map_id: MapId,
    pub position: Point2,
    pub version: Version,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BatchKind {
    Local,
    Global(GlobalKind),
}

impl BatchKind {
    pub fn code(self) -> u8 {
        match self {
            BatchKind::Local => 0,
            BatchKind::Global(GlobalKind::Gba) => 1,
            BatchKind::Global(GlobalKind::Lc) => 2,
            BatchKind::Global(GlobalKind::Mm) => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => BatchKind::Local,
            1 => BatchKind::Global(GlobalKind::Gba),
            2 => BatchKind::Global(GlobalKind::Lc),
            3 => BatchKind::Global(GlobalKind::Mm),
            _ => return None,
        })
    }

    pub fn is_global(self) -> bool {
        matches!(self, BatchKind::Global(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapBatch {
    pub kind: BatchKind,
    pub writer: Role,
    pub map_id: MapId,
    pub epoch: u64,
    pub seq: u32,
    pub is_final: bool,
    /// Keyframe whose processing produced a local batch.
    pub center: Option<KeyFrameId>,
    pub initialized: bool,
    pub keyframes: Vec<KeyFrameUpdate>,
    pub points: Vec<PointUpdate>,
    /// `(absorbed, survivor)` point fusions.
    pub fused: Vec<(MapPointId, MapPointId)>,
    pub merge: Option<MergeDirective>,
}

impl MapBatch {
    pub fn local(writer: Role, map_id: MapId, epoch: u64) -> Self {
        Self {
            kind: BatchKind::Local,
            writer,
            map_id,
            epoch,
            seq: 0,
            is_final: false,
            center: None,
            initialized: false,
            keyframes: Vec::new(),
            points: Vec::new(),
            fused: Vec::new(),
            merge: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GlobalUpdateStart {
    pub writer: Role,
    pub epoch: u64,
    pub kind: GlobalKind,
}

impl Encode for KeyFrameRecord {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.id).put(&self.map_id).put(&self.pose).f64(self.timestamp).u32(self.ref_point_count);
        w.seq(&self.observations).put(&self.version);
    }
}

impl Decode for KeyFrameRecord {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            id: r.get()?,
            map_id: r.get()?,
            pose: r.get()?,
            timestamp: r.f64()?,
            ref_point_count: r.u32()?,
            observations: r.seq()?,
            version: r.get()?,
        })
    }
}

impl Encode for PointRecord {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.id)
            .put(&self.map_id)
            .put(&self.position)
            .u32(self.origin_landmark)
            .put(&self.birth)
            .put(&self.version);
    }
}

impl Decode for PointRecord {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            id: r.get()?,
            map_id: r.get()?,
            position: r.get()?,
            origin_landmark: r.u32()?,
            birth: r.get()?,
            version: r.get()?,
        })
    }
}

impl Encode for NewKeyFramePayload {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.keyframe).seq(&self.new_points).bool(self.map_origin);
    }
}

impl Decode for NewKeyFramePayload {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Self { keyframe: r.get()?, new_points: r.seq()?, map_origin: r.bool()? })
    }
}

impl Encode for KeyFrameUpdate {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.id).put(&self.map_id).put(&self.pose).seq(&self.visible).put(&self.version);
    }
}

impl Decode for KeyFrameUpdate {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Self { id: r.get()?, map_id: r.get()?, pose: r.get()?, visible: r.seq()?, version: r.get()? })
    }
}

impl Encode for PointUpdate {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.id).put(&self.map_id).put(&self.position).put(&self.version);
    }
}

impl Decode for PointUpdate {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Self { id: r.get()?, map_id: r.get()?, position: r.get()?, version: r.get()? })
    }
}

impl Encode for GlobalKind {
    fn encode(&self, w: &mut Writer) {
        w.u8(BatchKind::Global(*self).code());
    }
}

impl Decode for GlobalKind {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let code = r.u8()?;
        match BatchKind::from_code(code) {
            Some(BatchKind::Global(k)) => Ok(k),
            _ => Err(CodecError::InvalidCode { what: "global kind", code }),
        }
    }
}

impl Encode for MergeDirective {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.absorbed).put(&self.survivor).put(&self.transform);
    }
}

impl Decode for MergeDirective {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Self { absorbed: r.get()?, survivor: r.get()?, transform: r.get()? })
    }
}

impl Encode for MapBatch {
    fn encode(&self, w: &mut Writer) {
        w.u8(self.kind.code()).put(&self.writer).put(&self.map_id).u64(self.epoch).u32(self.seq);
        w.bool(self.is_final).put(&self.center).bool(self.initialized);
        w.seq(&self.keyframes).seq(&self.points).seq(&self.fused).put(&self.merge);
    }
}

impl Decode for MapBatch {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let code = r.u8()?;
        let kind = BatchKind::from_code(code).ok_or(CodecError::InvalidCode { what: "batch kind", code })?;
        Ok(Self {
            kind,
            writer: r.get()?,
            map_id: r.get()?,
            epoch: r.u64()?,
            seq: r.u32()?,
            is_final: r.bool()?,
            center: r.get()?,
            initialized: r.bool()?,
            keyframes: r.seq()?,
            points: r.seq()?,
            fused: r.seq()?,
            merge: r.get()?,
        })
    }
}

impl Encode for GlobalUpdateStart {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.writer).u64(self.epoch).put(&self.kind);
    }
}

impl Decode for GlobalUpdateStart {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Self { writer: r.get()?, epoch: r.u64()?, kind: r.get()? })
    }
}
