mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::*;
use dslam_core::geometry::{Point2, Pose2};
use dslam_core::kernel::solver::{BaObservation, BaProblem};
use dslam_core::kernel::{detect_loop_or_merge, global_bundle_adjust, jaccard, KernelParams, NoiseModel, Observation};
use proptest::prelude::*;

fn corridor_map(seed: u64, n_kf: u64) -> MapBuilder {
    let world: BTreeMap<u32, Point2> = (0..40)
        .map(|i| (i, Point2::new(-1.0 + 0.15 * i as f64, if i % 2 == 0 { 1.1 + 0.03 * (i % 7) as f64 } else { -1.2 })))
        .collect();
    let mut r = rng(seed);
    let mut b = MapBuilder::new(0);
    for k in 0..n_kf {
        let gt = Pose2::new(0.4 * k as f64, 0.03 * k as f64, 0.02 * k as f64);
        let obs = noisy(&observe(&gt, &world, 2.0), 0.02, 0.01, &mut r);
        b.add(k, gt, &obs, false);
    }
    b
}

fn tight() -> KernelParams {
    KernelParams { gba_max_iter: 40, rel_tol: 1e-14, ..KernelParams::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gba_commutes_with_rigid_transforms(seed in 0u64..1000, tx in -5.0f64..5.0, ty in -5.0f64..5.0, th in -3.0f64..3.0) {
        let t = Pose2::new(tx, ty, th);
        let mut a = corridor_map(seed, 4).map;
        let mut b = a.clone();
        for kf in b.keyframes.values_mut() {
            kf.pose = t.compose(&kf.pose);
        }
        for mp in b.map_points.values_mut() {
            mp.position = t.transform_point(&mp.position);
        }
        global_bundle_adjust(&mut a, &tight()).unwrap();
        global_bundle_adjust(&mut b, &tight()).unwrap();
        for (k, kf) in &a.keyframes {
            let expect = t.compose(&kf.pose);
            let got = b.keyframes[k].pose;
            prop_assert!((expect.translation() - got.translation()).norm() < 1e-6);
            prop_assert!(ang_diff(expect.theta, got.theta) < 1e-6);
        }
        for (m, mp) in &a.map_points {
            prop_assert!((t.transform_point(&mp.position) - b.map_points[m].position).norm() < 1e-6);
        }
    }

    #[test]
    fn solver_never_increases_cost(seed in 0u64..1000, push in 0.0f64..0.3) {
        let b = corridor_map(seed, 3);
        let kfs: Vec<_> = b.map.keyframes.keys().copied().collect();
        let pts: Vec<_> = b.map.map_points.keys().copied().collect();
        let mut observations = Vec::new();
        for (pi, k) in kfs.iter().enumerate() {
            for (m, o) in &b.map.keyframes[k].observations {
                let li = pts.iter().position(|p| p == m).unwrap();
                observations.push(BaObservation { pose: pi, point: li, range: o.range, bearing: o.bearing });
            }
        }
        let mut problem = BaProblem {
            poses: kfs.iter().enumerate().map(|(i, k)| {
                let p = b.map.keyframes[k].pose;
                Pose2::new(p.x + push * i as f64, p.y - push, p.theta + 0.1 * push)
            }).collect(),
            pose_fixed: (0..kfs.len()).map(|i| i == 0).collect(),
            points: pts.iter().map(|m| b.map.map_points[m].position).collect(),
            observations,
            noise: NoiseModel::default(),
        };
        let before = problem.cost();
        let report = problem.solve(10, 1e-6).unwrap();
        prop_assert!(report.final_cost <= before + 1e-12);
        prop_assert!((problem.cost() - report.final_cost).abs() <= 1e-9 * (1.0 + report.final_cost));
    }

    #[test]
    fn solver_agrees_with_dense_oracle(seed in 0u64..1000) {
        let mut b = corridor_map(seed, 3);
        let victim = *b.map.map_points.keys().next().unwrap();
        b.map.map_points.get_mut(&victim).unwrap().position += Point2::new(0.1, -0.1);
        let kfs: BTreeSet<_> = b.map.keyframes.keys().copied().collect();
        let pts: BTreeSet<_> = b.map.map_points.keys().copied().collect();
        let (op, ol) = dense_oracle(&b.map, &kfs, &BTreeSet::from([b.map.origin_kf]), &pts, 0.02, 0.01);
        global_bundle_adjust(&mut b.map, &tight()).unwrap();
        for (k, pose) in &op {
            let got = b.map.keyframes[k].pose;
            prop_assert!((got.translation() - pose.translation()).norm() < 1e-6);
            prop_assert!(ang_diff(got.theta, pose.theta) < 1e-6);
        }
        for (m, q) in &ol {
            prop_assert!((b.map.map_points[m].position - q).norm() < 1e-6);
        }
    }
}

fn keyframe_from_landmarks(ids: &BTreeSet<u32>) -> Vec<Observation> {
    ids.iter().map(|l| Observation { landmark_id: *l, range: 1.0 + *l as f64 * 0.01, bearing: 0.1 }).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn detector_returns_the_exhaustive_best(
        sigs in prop::collection::vec(prop::collection::btree_set(0u32..30, 1..15), 2..8),
        query in prop::collection::btree_set(0u32..30, 1..15),
        tau in 0.1f64..0.9,
    ) {
        // Each keyframe goes into its own map, so no covisibility exclusion applies.
        let mut maps = BTreeMap::new();
        let mut ids = Vec::new();
        for (i, s) in sigs.iter().enumerate() {
            let mut b = MapBuilder::new(i as u64);
            ids.push(b.add(i as u64, Pose2::IDENTITY, &keyframe_from_landmarks(s), false));
            maps.insert(b.map.map_id, b.map);
        }
        let mut qb = MapBuilder::new(99);
        let q = qb.add(999, Pose2::IDENTITY, &keyframe_from_landmarks(&query), false);
        let qmap = qb.map.map_id;
        maps.insert(qmap, qb.map);

        let mut best: Option<(f64, usize)> = None;
        for (i, s) in sigs.iter().enumerate() {
            let inter = s.intersection(&query).count() as f64;
            let j = inter / (s.len() as f64 + query.len() as f64 - inter);
            if j >= tau && best.is_none_or(|(bj, _)| j > bj) {
                best = Some((j, i));
            }
        }
        let got = detect_loop_or_merge(&maps, qmap, q, tau);
        match best {
            None => prop_assert!(got.is_none()),
            Some((j, i)) => {
                let c = got.expect("candidate above threshold");
                prop_assert!((c.score - j).abs() < 1e-12);
                prop_assert!((jaccard(&sigs[i], &query) - j).abs() < 1e-12);
                prop_assert_eq!(c.candidate, ids[i]);
            }
        }
    }
}
