//! Synthetic worlds and trajectories with ground truth.
//!
//! The robot carries an omnidirectional range-bearing sensor and drives at
//! constant speed along a path built from lines and arcs, sampled at 20 Hz.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::geometry::{wrap_angle, Point2, Pose2};
use crate::kernel::{Frame, LandmarkId, Observation};

use super::kv::{parse_kv, KvError};
use super::trajectory::TrajectoryRecord;

pub const FRAME_RATE_HZ: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TrajectoryKind {
    Loop,
    Lawnmower,
    FigureEight,
    TwoSegment,
}

impl TrajectoryKind {
    pub const ALL: [TrajectoryKind; 4] =
        [TrajectoryKind::Loop, TrajectoryKind::Lawnmower, TrajectoryKind::FigureEight, TrajectoryKind::TwoSegment];

    pub fn name(self) -> &'static str {
        match self {
            TrajectoryKind::Loop => "LOOP",
            TrajectoryKind::Lawnmower => "LAWNMOWER",
            TrajectoryKind::FigureEight => "FIGURE_EIGHT",
            TrajectoryKind::TwoSegment => "TWO_SEGMENT",
        }
    }
}

impl fmt::Display for TrajectoryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrajectoryKind {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let k = s.trim().to_ascii_uppercase().replace('-', "_");
        Self::ALL.into_iter().find(|t| t.name() == k).ok_or_else(|| ScenarioError::UnknownTrajectory(s.to_string()))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("no landmark is ever within sensor range")]
    EmptyWorld,
    #[error("unknown trajectory `{0}`")]
    UnknownTrajectory(String),
    #[error("unknown scenario key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: `{value}`")]
    BadValue { key: String, value: String },
    #[error(transparent)]
    Syntax(#[from] KvError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Noise {
    pub sigma_range: f64,
    pub sigma_bearing: f64,
    /// Per-frame odometry noise on x, y and theta.
    pub sigma_odometry: [f64; 3],
}

impl Noise {
    pub const NONE: Noise = Noise { sigma_range: 0.0, sigma_bearing: 0.0, sigma_odometry: [0.0; 3] };
}

impl Default for Noise {
    fn default() -> Self {
        Self { sigma_range: 0.02, sigma_bearing: 0.01, sigma_odometry: [0.01, 0.01, 0.005] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub trajectory: TrajectoryKind,
    pub landmarks: usize,
    /// `[min_x, min_y, max_x, max_y]`
    pub bbox: [f64; 4],
    pub n_frames: usize,
    pub sensor_range: f64,
    pub noise: Noise,
    pub seed: u64,
}

impl ScenarioSpec {
    /// The catalog entry for `kind`.
    pub fn preset(kind: TrajectoryKind, seed: u64) -> Self {
        let (bbox, n_frames): ([f64; 4], usize) = match kind {
            TrajectoryKind::Loop => ([-5.5, -5.5, 5.5, 5.5], 400),
            TrajectoryKind::Lawnmower => ([-5.5, -4.5, 5.5, 4.5], 660),
            TrajectoryKind::FigureEight => ([-8.0, -4.5, 8.0, 4.5], 800),
            TrajectoryKind::TwoSegment => ([-5.5, -5.5, 5.5, 5.5], 540),
        };
        let area = (bbox[2] - bbox[0]) * (bbox[3] - bbox[1]);
        Self {
            trajectory: kind,
            landmarks: (area / (0.45 * 0.45)).round() as usize,
            bbox,
            n_frames,
            sensor_range: 1.6,
            noise: Noise::default(),
            seed,
        }
    }

    pub fn name(&self) -> &'static str {
        self.trajectory.name()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ScenarioError> {
        let bad = || ScenarioError::BadValue { key: key.into(), value: value.into() };
        let f = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
        match key {
            "trajectory" | "scenario" => self.trajectory = value.parse()?,
            "landmarks" => self.landmarks = value.trim().parse().map_err(|_| bad())?,
            "n_frames" => self.n_frames = value.trim().parse().map_err(|_| bad())?,
            "seed" => self.seed = value.trim().parse().map_err(|_| bad())?,
            "sensor_range" => self.sensor_range = f(value)?,
            "sigma_range" => self.noise.sigma_range = f(value)?,
            "sigma_bearing" => self.noise.sigma_bearing = f(value)?,
            "sigma_odometry" => {
                let v: Vec<f64> = value.split_whitespace().map(f).collect::<Result<_, _>>()?;
                self.noise.sigma_odometry = match v.as_slice() {
                    [s] => [*s, *s, *s],
                    [x, y, t] => [*x, *y, *t],
                    _ => return Err(bad()),
                };
            }
            "bbox" => {
                let v: Vec<f64> = value.split_whitespace().map(f).collect::<Result<_, _>>()?;
                self.bbox = v.try_into().map_err(|_| bad())?;
            }
            _ => return Err(ScenarioError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Reads a scenario file: `trajectory` picks the preset, later keys override it.
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let kv = parse_kv(text)?;
        let kind = kv
            .iter()
            .find(|(k, _)| k == "trajectory" || k == "scenario")
            .map(|(_, v)| v.parse())
            .transpose()?
            .unwrap_or(TrajectoryKind::Loop);
        let mut spec = Self::preset(kind, 0);
        for (k, v) in &kv {
            spec.set(k, v)?;
        }
        Ok(spec)
    }

    pub fn to_kv(&self) -> String {
        let n = &self.noise;
        let b = &self.bbox;
        format!(
            "trajectory = {}\nlandmarks = {}\nbbox = {} {} {} {}\nn_frames = {}\nsensor_range = {}\nsigma_range = {}\nsigma_bearing = {}\nsigma_odometry = {} {} {}\nseed = {}\n",
            self.trajectory, self.landmarks, b[0], b[1], b[2], b[3], self.n_frames, self.sensor_range,
            n.sigma_range, n.sigma_bearing, n.sigma_odometry[0], n.sigma_odometry[1], n.sigma_odometry[2], self.seed
        )
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub landmarks: BTreeMap<LandmarkId, Point2>,
    pub frames: Vec<Frame>,
    pub ground_truth: TrajectoryRecord,
}

#[derive(Debug, Clone, Copy)]
enum Segment {
    Line {
        from: Point2,
        to: Point2,
    },
    /// Counter-clockwise when `sweep > 0`.
    Arc {
        center: Point2,
        radius: f64,
        start: f64,
        sweep: f64,
    },
}

impl Segment {
    fn length(&self) -> f64 {
        match *self {
            Segment::Line { from, to } => (to - from).norm(),
            Segment::Arc { radius, sweep, .. } => radius * sweep.abs(),
        }
    }

    /// Pose after travelling `s` metres along the segment.
    fn at(&self, s: f64) -> Pose2 {
        match *self {
            Segment::Line { from, to } => {
                let d = to - from;
                let u = d / d.norm();
                let p = from + u * s;
                Pose2::new(p.x, p.y, u.y.atan2(u.x))
            }
            Segment::Arc { center, radius, start, sweep } => {
                let a = start + sweep.signum() * s / radius;
                let heading = a + sweep.signum() * PI / 2.0;
                Pose2::new(center.x + radius * a.cos(), center.y + radius * a.sin(), heading)
            }
        }
    }
}

fn path(kind: TrajectoryKind) -> Vec<Segment> {
    let p = Point2::new;
    match kind {
        TrajectoryKind::Loop => vec![Segment::Arc { center: p(0.0, 0.0), radius: 3.5, start: 0.0, sweep: TAU }],
        TrajectoryKind::TwoSegment => {
            vec![Segment::Arc { center: p(0.0, 0.0), radius: 3.5, start: 0.0, sweep: TAU * 1.35 }]
        }
        TrajectoryKind::FigureEight => vec![
            Segment::Arc { center: p(3.5, 0.0), radius: 3.5, start: PI, sweep: -TAU },
            Segment::Arc { center: p(-3.5, 0.0), radius: 3.5, start: 0.0, sweep: TAU },
        ],
        TrajectoryKind::Lawnmower => {
            let (x0, x1, r) = (-3.5, 3.5, 0.9);
            let rows = 4;
            let mut segs = Vec::new();
            for i in 0..rows {
                let y = -2.7 + i as f64 * 2.0 * r;
                let (a, b) = if i % 2 == 0 { (x0, x1) } else { (x1, x0) };
                segs.push(Segment::Line { from: p(a, y), to: p(b, y) });
                if i + 1 < rows {
                    let (start, sweep) = if i % 2 == 0 { (-PI / 2.0, PI) } else { (-PI / 2.0, -PI) };
                    segs.push(Segment::Arc { center: p(b, y + r), radius: r, start, sweep });
                }
            }
            segs
        }
    }
}

/// Ground-truth poses of `n` frames evenly spaced along the path by arc length.
pub fn ground_truth_poses(kind: TrajectoryKind, n: usize) -> Vec<Pose2> {
    let segs = path(kind);
    let total: f64 = segs.iter().map(Segment::length).sum();
    (0..n)
        .map(|i| {
            let mut s = if n > 1 { total * i as f64 / (n - 1) as f64 } else { 0.0 };
            for (j, seg) in segs.iter().enumerate() {
                let l = seg.length();
                if s <= l || j + 1 == segs.len() {
                    return seg.at(s.min(l));
                }
                s -= l;
            }
            unreachable!("path has at least one segment")
        })
        .collect()
}

/// Frames during which the sensor returns nothing.
fn blackout(spec: &ScenarioSpec) -> std::ops::Range<usize> {
    match spec.trajectory {
        TrajectoryKind::TwoSegment => {
            let s = spec.n_frames * 2 / 5;
            s..s + 12
        }
        _ => 0..0,
    }
}

fn landmark_field(spec: &ScenarioSpec, r: &mut ChaCha8Rng) -> BTreeMap<LandmarkId, Point2> {
    // Stratified: one landmark per cell of a near-square grid.
    let [x0, y0, x1, y1] = spec.bbox;
    let (w, h) = (x1 - x0, y1 - y0);
    let n = spec.landmarks;
    if n == 0 {
        return BTreeMap::new();
    }
    let cols = ((n as f64 * w / h).sqrt().ceil() as usize).max(1);
    let rows = n.div_ceil(cols);
    let (cw, ch) = (w / cols as f64, h / rows as f64);
    (0..n)
        .map(|i| {
            let (c, rr) = (i % cols, i / cols);
            let x = x0 + (c as f64 + r.random::<f64>()) * cw;
            let y = y0 + (rr as f64 + r.random::<f64>()) * ch;
            (i as LandmarkId, Point2::new(x, y))
        })
        .collect()
}

fn gauss(r: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).expect("finite sigma").sample(r)
    } else {
        0.0
    }
}

pub fn generate(spec: &ScenarioSpec) -> Result<Scenario, ScenarioError> {
    let [x0, y0, x1, y1] = spec.bbox;
    if spec.n_frames < 2 || !(x1 > x0 && y1 > y0) || spec.sensor_range <= 0.0 {
        return Err(ScenarioError::Invalid("need 2+ frames, a non-empty box and a positive range".into()));
    }
    let mut r = ChaCha8Rng::seed_from_u64(spec.seed);
    let landmarks = landmark_field(spec, &mut r);
    let gt = ground_truth_poses(spec.trajectory, spec.n_frames);
    let dark = blackout(spec);
    let n = &spec.noise;
    let dt = 1.0 / FRAME_RATE_HZ;
    let mut frames = Vec::with_capacity(gt.len());
    let mut seen = false;
    for (i, pose) in gt.iter().enumerate() {
        let mut observations = Vec::new();
        if !dark.contains(&i) {
            for (id, p) in &landmarks {
                let d = p - pose.translation();
                let range = d.norm();
                if range <= spec.sensor_range && range > 1e-9 {
                    let bearing = wrap_angle(d.y.atan2(d.x) - pose.theta);
                    observations.push(Observation {
                        landmark_id: *id,
                        range: range + gauss(&mut r, n.sigma_range),
                        bearing: wrap_angle(bearing + gauss(&mut r, n.sigma_bearing)),
                    });
                }
            }
        }
        seen |= !observations.is_empty();
        let prev = if i == 0 { *pose } else { gt[i - 1] };
        let d = prev.between(pose);
        let odometry_delta = Pose2::new(
            d.x + gauss(&mut r, n.sigma_odometry[0]),
            d.y + gauss(&mut r, n.sigma_odometry[1]),
            d.theta + gauss(&mut r, n.sigma_odometry[2]),
        );
        frames.push(Frame { frame_id: i as u64, timestamp: i as f64 * dt, odometry_delta, observations });
    }
    if !seen {
        return Err(ScenarioError::EmptyWorld);
    }
    let ground_truth = TrajectoryRecord::new(frames.iter().zip(&gt).map(|(f, p)| (f.timestamp, *p)).collect());
    Ok(Scenario { spec: spec.clone(), landmarks, frames, ground_truth })
}
