//! Golden wire frames shared by the codec and acceptance suites.

use dslam_core::comm::{Discovery, Envelope, Payload, Target, Topic};
use dslam_core::kernel::{GlobalKind, MergeDirective, Observation, Version};
use dslam_core::state::{
    GlobalUpdateStart, KeyFrameRecord, KeyFrameUpdate, MapBatch, NewKeyFramePayload, PointRecord, PointUpdate,
};
use dslam_core::{KeyFrameId, MapId, MapPointId, Point2, Pose2, Role};
use sha2::{Digest, Sha256};

pub fn hex(b: &[u8]) -> String {
    b.iter().map(|x| format!("{x:02x}")).collect()
}

pub fn sha(b: &[u8]) -> String {
    hex(&Sha256::digest(b))
}

pub fn sample_keyframe() -> NewKeyFramePayload {
    let kf = KeyFrameId::new(Role::Tr, 4);
    let map_id = MapId::new(Role::Tr, 0);
    let v = Version { epoch: 0, lamport: 9, writer: Role::Tr.code() };
    let p = MapPointId::mint(Role::Tr, 12);
    NewKeyFramePayload {
        keyframe: KeyFrameRecord {
            id: kf,
            map_id,
            pose: Pose2::new(1.25, -0.5, 0.75),
            timestamp: 2.5,
            ref_point_count: 1,
            observations: vec![(p, Observation { landmark_id: 33, range: 1.5, bearing: -0.25 })],
            version: v,
        },
        new_points: vec![PointRecord {
            id: p,
            map_id,
            position: Point2::new(2.0, -1.5),
            origin_landmark: 33,
            birth: kf,
            version: v,
        }],
        map_origin: false,
    }
}

pub fn sample_batch() -> MapBatch {
    let mut b = MapBatch::local(Role::Lm, MapId::new(Role::Tr, 0), 1);
    b.kind = dslam_core::state::BatchKind::Global(GlobalKind::Mm);
    b.seq = 2;
    b.is_final = true;
    b.initialized = true;
    let v = Version { epoch: 1, lamport: 40, writer: Role::Lc.code() };
    b.keyframes.push(KeyFrameUpdate {
        id: KeyFrameId::new(Role::Tr, 4),
        map_id: MapId::new(Role::Tr, 0),
        pose: Pose2::new(0.5, 0.25, -1.0),
        visible: vec![MapPointId::mint(Role::Tr, 12)],
        version: v,
    });
    b.points.push(PointUpdate {
        id: MapPointId::mint(Role::Tr, 12),
        map_id: MapId::new(Role::Tr, 0),
        position: Point2::new(1.0, 2.0),
        version: v,
    });
    b.fused.push((MapPointId::mint(Role::Tr, 13), MapPointId::mint(Role::Tr, 12)));
    b.merge = Some(MergeDirective {
        absorbed: MapId::new(Role::Tr, 1),
        survivor: MapId::new(Role::Tr, 0),
        transform: Pose2::new(0.1, 0.2, 0.3),
    });
    b
}

pub fn golden() -> Vec<(&'static str, Envelope)> {
    vec![
        ("heartbeat", Envelope::heartbeat(Role::Tr, 7, 2, 1000)),
        (
            "discovery",
            Envelope::new(
                Topic::Discovery,
                Role::Lm,
                0,
                0,
                Target::None,
                &Payload::Discovery(Discovery { task: Role::Lm, session: 0x0123_4567_89ab_cdef }),
            ),
        ),
        (
            "new_keyframe",
            Envelope::new(Topic::KfNew, Role::Tr, 3, 0, Target::Lm, &Payload::NewKeyFrame(sample_keyframe())),
        ),
        (
            "map_batch",
            Envelope::new(Topic::MapGlobal, Role::Lc, 5, 1, Target::None, &Payload::MapBatch(sample_batch())),
        ),
        (
            "global_start",
            Envelope::new(
                Topic::MapGlobal,
                Role::Lc,
                4,
                1,
                Target::None,
                &Payload::GlobalUpdateStart(GlobalUpdateStart { writer: Role::Lc, epoch: 1, kind: GlobalKind::Lc }),
            ),
        ),
    ]
}

/// SHA-256 of each golden frame and of its payload, pinned from a reference encode.
pub const GOLDEN_DIGESTS: [(&str, &str, &str); 5] = [
    (
        "heartbeat",
        "5b77b13ccd5580964c43af644906c5ecb757786bbfdf735410223e951aa8ca64",
        "79ff7fbc96a0a6111e3c2706d61deb84c7c8e5a137b776f34a7dc3775f3652de",
    ),
    (
        "discovery",
        "0be82c2985d62031e55a89f8521addcc6cad05db57199ee2375543fb4e4707ec",
        "7c29cfa864578cde3f936d7a80a0df6053eb31e1848b4d56f32f13c3d5aa0039",
    ),
    (
        "new_keyframe",
        "b4397f7e50ca4d5e5f86a77eaa8867105a47490bbd43e0e2992ad54e1fe2cede",
        "dd9f934048efc93b188072d684cc6ec6d5c32907add1d1ec82cae354e9a3f90d",
    ),
    (
        "map_batch",
        "8a4206213d62a8c30aef38102c3d196cf11139095a5770d34f9b3f3c48afb201",
        "ba57cfb1f307d120e899607f38fdb72d2cce7741ac740817e2d1647931e699a5",
    ),
    (
        "global_start",
        "f467d0d5a815b7fceb4335efaa35c3be623677a83e3a8fe501cc931d2fd04489",
        "fa994a300b6bbefb316b907e9fcce1e561524f3341e49d2cee70f17380b4ac7b",
    ),
];
