//! Shared test fixtures: synthetic worlds and an independent dense least-squares oracle.
#![allow(dead_code)]

pub mod net;
pub mod pipeline;
pub mod wire;

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use dslam_core::geometry::{Point2, Pose2};
use dslam_core::kernel::{Frame, KeyFrame, Map, MapPoint, Observation, Version};
use dslam_core::{KeyFrameId, MapId, MapPointId, Role};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Landmarks on a jittered grid covering `[-half, half]²`.
pub fn landmark_field(half: f64, spacing: f64, seed: u64) -> BTreeMap<u32, Point2> {
    let mut r = rng(seed);
    let mut out = BTreeMap::new();
    let n = (2.0 * half / spacing).round() as i32;
    let mut id = 0;
    for i in 0..=n {
        for j in 0..=n {
            let x = -half + i as f64 * spacing + r.random_range(-0.3..0.3) * spacing;
            let y = -half + j as f64 * spacing + r.random_range(-0.3..0.3) * spacing;
            out.insert(id, Point2::new(x, y));
            id += 1;
        }
    }
    out
}

fn wrap(a: f64) -> f64 {
    let mut r = a % (2.0 * PI);
    if r <= -PI {
        r += 2.0 * PI;
    } else if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Exact range-bearing measurement, computed without the crate's geometry helpers.
pub fn measure(pose: &Pose2, p: &Point2) -> (f64, f64) {
    let dx = p.x - pose.x;
    let dy = p.y - pose.y;
    ((dx * dx + dy * dy).sqrt(), wrap(dy.atan2(dx) - pose.theta))
}

pub fn observe(pose: &Pose2, landmarks: &BTreeMap<u32, Point2>, max_range: f64) -> Vec<Observation> {
    landmarks
        .iter()
        .filter_map(|(id, p)| {
            let (r, b) = measure(pose, p);
            (r <= max_range && r > 1e-6).then_some(Observation { landmark_id: *id, range: r, bearing: b })
        })
        .collect()
}

pub fn noisy(obs: &[Observation], sigma_r: f64, sigma_b: f64, r: &mut ChaCha8Rng) -> Vec<Observation> {
    let nr = Normal::new(0.0, sigma_r.max(1e-300)).unwrap();
    let nb = Normal::new(0.0, sigma_b.max(1e-300)).unwrap();
    obs.iter()
        .map(|o| Observation {
            landmark_id: o.landmark_id,
            range: o.range + if sigma_r > 0.0 { nr.sample(r) } else { 0.0 },
            bearing: wrap(o.bearing + if sigma_b > 0.0 { nb.sample(r) } else { 0.0 }),
        })
        .collect()
}

pub fn frame(id: u64, prev: &Pose2, pose: &Pose2, observations: Vec<Observation>) -> Frame {
    Frame { frame_id: id, timestamp: id as f64 * 0.05, odometry_delta: prev.between(pose), observations }
}

/// Builds a map directly: one keyframe per pose, each observing the given landmarks.
/// Every landmark gets one point, born at its first observer and positioned by
/// back-projection from that observer's *estimated* pose. `duplicate_from` lists
/// keyframe indices from which every observation spawns a fresh point instead.
pub struct MapBuilder {
    pub map: Map,
    pub point_of: BTreeMap<u32, MapPointId>,
    counter: u64,
}

impl MapBuilder {
    pub fn new(map_counter: u64) -> Self {
        let map_id = MapId::new(Role::Tr, map_counter);
        Self {
            map: Map::new(map_id, KeyFrameId::new(Role::Tr, 0)),
            point_of: BTreeMap::new(),
            counter: 1000 * map_counter,
        }
    }

    pub fn add(&mut self, seq: u64, est: Pose2, obs: &[Observation], fresh_points: bool) -> KeyFrameId {
        let id = KeyFrameId::new(Role::Tr, seq);
        if self.map.keyframes.is_empty() {
            self.map.origin_kf = id;
        }
        let mut observations = BTreeMap::new();
        let mut new_points = Vec::new();
        for o in obs {
            let existing = if fresh_points { None } else { self.point_of.get(&o.landmark_id).copied() };
            let mp_id = match existing {
                Some(m) => m,
                None => {
                    self.counter += 1;
                    let m = MapPointId::mint(Role::Tr, self.counter);
                    new_points.push(MapPoint {
                        id: m,
                        position: o.back_project(&est),
                        observers: BTreeSet::new(),
                        origin_landmark: o.landmark_id,
                        birth: id,
                        version: Version::default(),
                        dirty: false,
                    });
                    self.point_of.insert(o.landmark_id, m);
                    m
                }
            };
            observations.insert(mp_id, *o);
        }
        let kf = KeyFrame {
            id,
            pose: est,
            timestamp: seq as f64,
            ref_point_count: observations.len() as u32,
            observations,
            covisible: BTreeMap::new(),
            map_id: self.map.map_id,
            version: Version::default(),
            dirty: false,
        };
        self.map.insert_keyframe(kf, new_points);
        id
    }
}

/// Independent dense Gauss-Newton: forward-difference Jacobian over all free
/// variables, normal equations solved by LU, iterated to a tight tolerance.
pub fn dense_oracle(
    map: &Map,
    kfs: &BTreeSet<KeyFrameId>,
    fixed: &BTreeSet<KeyFrameId>,
    pts: &BTreeSet<MapPointId>,
    sigma_r: f64,
    sigma_b: f64,
) -> (BTreeMap<KeyFrameId, Pose2>, BTreeMap<MapPointId, Point2>) {
    let free: Vec<KeyFrameId> = kfs.iter().filter(|k| !fixed.contains(k)).copied().collect();
    let ptv: Vec<MapPointId> = pts.iter().copied().collect();
    let mut x = DVector::<f64>::zeros(3 * free.len() + 2 * ptv.len());
    for (i, k) in free.iter().enumerate() {
        let p = map.keyframes[k].pose;
        x[3 * i] = p.x;
        x[3 * i + 1] = p.y;
        x[3 * i + 2] = p.theta;
    }
    let off = 3 * free.len();
    for (j, m) in ptv.iter().enumerate() {
        x[off + 2 * j] = map.map_points[m].position.x;
        x[off + 2 * j + 1] = map.map_points[m].position.y;
    }
    let mut obs = Vec::new();
    for k in kfs {
        for (m, o) in &map.keyframes[k].observations {
            if let Some(j) = ptv.iter().position(|p| p == m) {
                obs.push((*k, j, o.range, o.bearing));
            }
        }
    }
    let residuals = |x: &DVector<f64>| -> DVector<f64> {
        let mut r = DVector::zeros(2 * obs.len());
        for (n, (k, j, range, bearing)) in obs.iter().enumerate() {
            let pose = match free.iter().position(|f| f == k) {
                Some(i) => Pose2 { x: x[3 * i], y: x[3 * i + 1], theta: x[3 * i + 2] },
                None => map.keyframes[k].pose,
            };
            let p = Point2::new(x[off + 2 * j], x[off + 2 * j + 1]);
            let (pr, pb) = measure(&pose, &p);
            r[2 * n] = (pr - range) / sigma_r;
            r[2 * n + 1] = wrap(pb - bearing) / sigma_b;
        }
        r
    };
    for _ in 0..100 {
        let r0 = residuals(&x);
        let mut jac = DMatrix::<f64>::zeros(r0.len(), x.len());
        for c in 0..x.len() {
            let h = 1e-7 * (1.0 + x[c].abs());
            let mut xp = x.clone();
            xp[c] += h;
            let mut xm = x.clone();
            xm[c] -= h;
            let d = (residuals(&xp) - residuals(&xm)) / (2.0 * h);
            jac.set_column(c, &d);
        }
        let jt = jac.transpose();
        let step = (&jt * &jac).lu().solve(&(-(&jt * &r0))).expect("oracle system solvable");
        x += &step;
        if step.norm() < 1e-13 {
            break;
        }
    }
    let poses = free
        .iter()
        .enumerate()
        .map(|(i, k)| (*k, Pose2 { x: x[3 * i], y: x[3 * i + 1], theta: wrap(x[3 * i + 2]) }))
        .collect();
    let points = ptv.iter().enumerate().map(|(j, m)| (*m, Point2::new(x[off + 2 * j], x[off + 2 * j + 1]))).collect();
    (poses, points)
}

pub fn ang_diff(a: f64, b: f64) -> f64 {
    wrap(a - b).abs()
}
