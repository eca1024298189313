//! Timestamped pose sequences, their text format and absolute trajectory error.

use std::fmt::Write as _;

use thiserror::Error;

use crate::alignment::{compute_alignment, rms_residual, AlignmentError};
use crate::geometry::{Point2, Pose2};

/// Largest timestamp difference for two poses to be associated.
pub const ASSOCIATION_WINDOW_S: f64 = 0.025;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryRecord {
    pub poses: Vec<(f64, Pose2)>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("timestamps must increase strictly (line {0})")]
    NotIncreasing(usize),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AteError {
    #[error("only {0} poses associate within the window")]
    NoAssociation(usize),
    #[error(transparent)]
    Alignment(#[from] AlignmentError),
}

impl TrajectoryRecord {
    pub fn new(poses: Vec<(f64, Pose2)>) -> Self {
        Self { poses }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// `timestamp x y theta` per line, 9 decimals.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (t, p) in &self.poses {
            let _ = writeln!(s, "{t:.9} {:.9} {:.9} {:.9}", p.x, p.y, p.theta);
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, TrajectoryError> {
        let mut poses: Vec<(f64, Pose2)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let v: Vec<f64> = line
                .split_whitespace()
                .map(|w| w.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| TrajectoryError::Parse { line: i + 1, msg: e.to_string() })?;
            let [t, x, y, th] = v[..] else {
                return Err(TrajectoryError::Parse { line: i + 1, msg: format!("expected 4 fields, got {}", v.len()) });
            };
            if poses.last().is_some_and(|(prev, _)| t <= *prev) {
                return Err(TrajectoryError::NotIncreasing(i + 1));
            }
            poses.push((t, Pose2 { x, y, theta: th }));
        }
        Ok(Self { poses })
    }

    /// Index of the pose nearest in time to `t`, if within `window`.
    fn nearest(&self, t: f64, window: f64) -> Option<usize> {
        let i = self.poses.partition_point(|(s, _)| *s < t);
        [i.checked_sub(1), Some(i)]
            .into_iter()
            .flatten()
            .filter(|&j| j < self.poses.len())
            .map(|j| (j, (self.poses[j].0 - t).abs()))
            .filter(|(_, d)| *d <= window)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(j, _)| j)
    }

    /// `(estimate, ground truth)` position pairs by nearest timestamp.
    pub fn associate(&self, gt: &TrajectoryRecord) -> Vec<(Point2, Point2)> {
        self.poses
            .iter()
            .filter_map(|(t, p)| {
                gt.nearest(*t, ASSOCIATION_WINDOW_S).map(|j| (p.translation(), gt.poses[j].1.translation()))
            })
            .collect()
    }
}

/// RMS of translational residuals after aligning the estimate onto the ground truth.
pub fn evaluate_ate(est: &TrajectoryRecord, gt: &TrajectoryRecord, with_scale: bool) -> Result<f64, AteError> {
    let pairs = est.associate(gt);
    if pairs.len() < 2 {
        return Err(AteError::NoAssociation(pairs.len()));
    }
    let sim = compute_alignment(&pairs, with_scale)?;
    Ok(rms_residual(&sim, &pairs))
}
