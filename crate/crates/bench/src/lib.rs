//! Fixtures shared by the benchmarks.

use dslam_core::kernel::solver::{predict, BaObservation, BaProblem};
use dslam_core::kernel::{NoiseModel, Version};
use dslam_core::state::{KeyFrameUpdate, MapBatch, PointUpdate};
use dslam_core::{KeyFrameId, MapId, MapPointId, Point2, Pose2, Role};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Poses along a line looking at a strip of points; only points within
/// `range` are observed. The first pose is fixed and everything else starts
/// off its true value.
pub fn strip_problem(n_poses: usize, n_points: usize, range: f64, seed: u64) -> BaProblem {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let truth: Vec<Pose2> = (0..n_poses).map(|i| Pose2::new(i as f64 * 0.3, 0.0, 0.1 * i as f64)).collect();
    let span = n_poses as f64 * 0.3;
    let points: Vec<Point2> =
        (0..n_points).map(|_| Point2::new(r.random_range(-1.0..span + 1.0), r.random_range(-1.5..1.5))).collect();
    let mut observations = Vec::new();
    for (i, p) in truth.iter().enumerate() {
        for (j, q) in points.iter().enumerate() {
            let (range_m, bearing) = predict(p, q);
            if range_m < range && range_m > 0.1 {
                observations.push(BaObservation { pose: i, point: j, range: range_m, bearing });
            }
        }
    }
    let mut jitter = |s: f64| r.random_range(-s..s);
    let poses = truth
        .iter()
        .enumerate()
        .map(
            |(i, p)| {
                if i == 0 {
                    *p
                } else {
                    Pose2::new(p.x + jitter(0.05), p.y + jitter(0.05), p.theta + jitter(0.02))
                }
            },
        )
        .collect();
    let points = points.iter().map(|q| Point2::new(q.x + jitter(0.05), q.y + jitter(0.05))).collect();
    let mut pose_fixed = vec![false; n_poses];
    pose_fixed[0] = true;
    BaProblem { poses, pose_fixed, points, observations, noise: NoiseModel::default() }
}

/// A full local batch: `kfs` keyframes each seeing `per_kf` points.
pub fn full_batch(kfs: usize, per_kf: usize) -> MapBatch {
    let map = MapId::new(Role::Tr, 0);
    let mut b = MapBatch::local(Role::Lm, map, 0);
    b.center = Some(KeyFrameId::new(Role::Tr, kfs as u64 - 1));
    let v = Version { epoch: 0, lamport: 7, writer: Role::Lm.code() };
    let mut next = 0u64;
    for k in 0..kfs {
        let visible: Vec<MapPointId> = (0..per_kf)
            .map(|_| {
                next += 1;
                MapPointId::mint(Role::Tr, next)
            })
            .collect();
        for (i, id) in visible.iter().enumerate() {
            b.points.push(PointUpdate {
                id: *id,
                map_id: map,
                position: Point2::new(k as f64, i as f64 * 0.1),
                version: v,
            });
        }
        b.keyframes.push(KeyFrameUpdate {
            id: KeyFrameId::new(Role::Tr, k as u64),
            map_id: map,
            pose: Pose2::new(k as f64 * 0.2, 0.0, 0.01),
            visible,
            version: v,
        });
    }
    b
}
