//! Drives the kernel and a writer-side `SystemState` over a synthetic run and
//! records every replication message, split into per-link streams.

use std::collections::BTreeMap;

use dslam_core::geometry::Pose2;
use dslam_core::kernel::{
    close_loop, create_keyframe, detect_loop_or_merge, initialize_map, local_bundle_adjust, merge_maps,
    should_create_keyframe, track_frame, GlobalKind, IdMint, KernelParams, LoopKind, TrackStatus,
};
use dslam_core::state::{
    build_global_batches, growth_schedule, GlobalUpdateStart, MapBatch, NewKeyFramePayload, SystemState,
};
use dslam_core::{MapId, Role};

use super::{frame, landmark_field, noisy, observe, rng};

#[derive(Debug, Clone)]
pub enum Msg {
    Kf(NewKeyFramePayload),
    Batch(MapBatch),
    Start(GlobalUpdateStart),
}

pub struct Recorded {
    /// kf/new, map/local and map/global streams, each in emission order.
    pub streams: Vec<Vec<Msg>>,
    pub writer: SystemState,
    pub global_updates: Vec<GlobalKind>,
}

pub fn apply(state: &mut SystemState, m: &Msg) {
    match m {
        Msg::Kf(p) => {
            let _ = state.apply_new_keyframe(p);
        }
        Msg::Batch(b) => {
            let _ = state.apply_map_batch(b);
        }
        Msg::Start(s) => {
            state.apply_global_start(s);
        }
    }
}

fn run_global(
    writer: &mut SystemState,
    kind: GlobalKind,
    f: impl FnOnce(&mut BTreeMap<MapId, dslam_core::kernel::Map>) -> Option<dslam_core::kernel::GlobalUpdateRecord>,
    out: &mut Vec<Msg>,
) -> bool {
    let mut work = writer.maps().clone();
    let Some(record) = f(&mut work) else { return false };
    let (epoch, v) = writer.next_global_stamp(Role::Lc);
    let start = GlobalUpdateStart { writer: Role::Lc, epoch, kind };
    writer.apply_global_start(&start);
    out.push(Msg::Start(start));
    for b in build_global_batches(&record, &work[&record.map_id], Role::Lc, epoch, v, 10) {
        writer.apply_map_batch(&b).expect("own global batch");
        out.push(Msg::Batch(b));
    }
    assert!(!writer.paused(), "own global update promotes on its final batch");
    assert_eq!(
        dslam_core::state::canonical_bytes(writer.maps()),
        dslam_core::state::canonical_bytes(&work),
        "promotion reproduces the writer's computation"
    );
    true
}

/// A circular run. With `restart_at`, tracking restarts in a fresh map at that
/// frame, so the second map later merges into the first.
pub fn record_run(seed: u64, frames: usize, restart_at: Option<usize>) -> Recorded {
    let params = KernelParams::default();
    let world = landmark_field(5.5, 0.45, seed);
    let mut r = rng(seed ^ 0x5eed);
    let radius = 3.5;
    let gt: Vec<Pose2> = (0..frames)
        .map(|i| {
            let a = i as f64 / frames as f64 * 2.0 * std::f64::consts::PI * 1.2;
            Pose2::new(radius * a.cos(), radius * a.sin(), a + std::f64::consts::FRAC_PI_2)
        })
        .collect();
    let mut mint = IdMint::new(Role::Tr);
    let mut writer = SystemState::new();
    let mut kf_stream = Vec::new();
    let mut local_stream = Vec::new();
    let mut global_stream = Vec::new();
    let mut globals = Vec::new();

    let mk = |i: usize, r: &mut rand_chacha::ChaCha8Rng| {
        let prev = if i == 0 { gt[0] } else { gt[i - 1] };
        frame(i as u64, &prev, &gt[i], noisy(&observe(&gt[i], &world, 1.6), 0.02, 0.01, r))
    };

    let mut i = 0;
    while i < frames {
        // (Re)initialize from two frames five apart.
        let f1 = mk(i, &mut r);
        let mut f2 = mk(i + 5, &mut r);
        f2.odometry_delta = gt[i].between(&gt[i + 5]);
        let mut map = initialize_map(&f1, &f2, &mut mint, &params).expect("init");
        let map_id = map.map_id;
        let origin_pose = gt[i];
        // Express the map in the world frame so that merges have real work to do.
        if i > 0 {
            for kf in map.keyframes.values_mut() {
                kf.pose = Pose2::new(0.3, -0.2, 0.1).compose(&origin_pose.compose(&kf.pose));
            }
            for mp in map.map_points.values_mut() {
                mp.position = Pose2::new(0.3, -0.2, 0.1).compose(&origin_pose).transform_point(&mp.position);
            }
        } else {
            for kf in map.keyframes.values_mut() {
                kf.pose = origin_pose.compose(&kf.pose);
            }
            for mp in map.map_points.values_mut() {
                mp.position = origin_pose.transform_point(&mp.position);
            }
        }
        for p in writer.insert_own_map(map, Role::Tr) {
            kf_stream.push(Msg::Kf(p));
        }
        let last_kf = writer.map(map_id).unwrap().latest_keyframe().unwrap().id;
        writer.run_local(map_id, Role::Lm, |m| dslam_core::kernel::global_bundle_adjust(m, &params)).unwrap();
        for b in writer.collect_all_dirty(&growth_schedule(3, 15, 8), Role::Lm) {
            local_stream.push(Msg::Batch(b));
        }
        let mut pose = writer.keyframe(last_kf).unwrap().pose;
        let mut since = 0;
        i += 6;
        let stop = match restart_at {
            Some(s) if s > i && s + 6 < frames => s,
            _ => frames,
        };
        while i < stop {
            let f = mk(i, &mut r);
            let active = writer.resolve_map(map_id);
            let m = writer.map(active).unwrap();
            let tr = track_frame(m, &f, pose.compose(&f.odometry_delta), params.track_window, &params);
            since += 1;
            i += 1;
            if tr.status == TrackStatus::Lost {
                continue;
            }
            pose = tr.pose;
            if !should_create_keyframe(&tr, since, &params) {
                continue;
            }
            since = 0;
            let (kf, pts) = create_keyframe(&f, &tr, &mut mint, m);
            let id = kf.id;
            kf_stream.push(Msg::Kf(writer.insert_own_keyframe(kf, pts, false, Role::Tr)));
            writer.run_local(active, Role::Lm, |m| local_bundle_adjust(m, id, 3, &params)).unwrap();
            for b in writer.collect_dirty(id, 3, &growth_schedule(3, 15, 8), Role::Lm) {
                local_stream.push(Msg::Batch(b));
            }
            let Some(cand) = detect_loop_or_merge(writer.maps(), active, id, params.loop_tau) else { continue };
            let kind = if cand.kind == LoopKind::Loop { GlobalKind::Lc } else { GlobalKind::Mm };
            if globals.contains(&kind) {
                continue;
            }
            let done = run_global(
                &mut writer,
                kind,
                |maps| match cand.kind {
                    LoopKind::Loop => close_loop(maps.get_mut(&cand.query_map).unwrap(), &cand, &params).ok(),
                    LoopKind::Merge => merge_maps(maps, &cand, &params).ok(),
                },
                &mut global_stream,
            );
            if done {
                globals.push(kind);
            }
        }
        if i >= frames {
            break;
        }
    }
    Recorded { streams: vec![kf_stream, local_stream, global_stream], writer, global_updates: globals }
}
