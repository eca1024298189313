//! Closed-form least-squares similarity alignment of planar point sets.

use thiserror::Error;

use crate::geometry::{wrap_angle, Point2, Similarity2};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlignmentError {
    #[error("need at least 2 point pairs, got {0}")]
    TooFewPairs(usize),
    #[error("all source points coincide")]
    DegenerateConfiguration,
}

/// Finds the similarity minimizing `Σ |s·R·a_i + t − b_i|²` over the pairs `(a_i, b_i)`.
///
/// With `with_scale == false` the scale is pinned to 1 and the result is rigid.
pub fn compute_alignment(pairs: &[(Point2, Point2)], with_scale: bool) -> Result<Similarity2, AlignmentError> {
    if pairs.len() < 2 {
        return Err(AlignmentError::TooFewPairs(pairs.len()));
    }
    let n = pairs.len() as f64;
    let (sum_a, sum_b) = pairs.iter().fold((Point2::zeros(), Point2::zeros()), |(sa, sb), (a, b)| (sa + a, sb + b));
    let mu_a = sum_a / n;
    let mu_b = sum_b / n;

    let mut dot = 0.0;
    let mut cross = 0.0;
    let mut var_a = 0.0;
    for (a, b) in pairs {
        let da = a - mu_a;
        let db = b - mu_b;
        dot += da.x * db.x + da.y * db.y;
        cross += da.x * db.y - da.y * db.x;
        var_a += da.norm_squared();
    }
    if var_a <= f64::EPSILON * f64::EPSILON * n {
        return Err(AlignmentError::DegenerateConfiguration);
    }

    let theta = if dot == 0.0 && cross == 0.0 { 0.0 } else { wrap_angle(cross.atan2(dot)) };
    let (s, c) = theta.sin_cos();
    let scale = if with_scale { (dot * c + cross * s) / var_a } else { 1.0 };
    let rotated = Point2::new(c * mu_a.x - s * mu_a.y, s * mu_a.x + c * mu_a.y);
    let t = mu_b - rotated * scale;
    Ok(Similarity2 { scale, theta, t })
}

/// Root-mean-square distance between transformed sources and targets.
pub fn rms_residual(sim: &Similarity2, pairs: &[(Point2, Point2)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let sq: f64 = pairs.iter().map(|(a, b)| (sim.apply(a) - b).norm_squared()).sum();
    (sq / pairs.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn square() -> Vec<Point2> {
        vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(1.0, 1.0),
            Point2::new(0.0, 1.0),
            Point2::new(0.3, 2.0),
        ]
    }

    #[test]
    fn pure_translation_is_recovered_exactly() {
        let pairs: Vec<_> = square().into_iter().map(|p| (p, p + Point2::new(1.0, 2.0))).collect();
        let sim = compute_alignment(&pairs, true).unwrap();
        assert!((sim.scale - 1.0).abs() < 1e-12);
        assert!(sim.theta.abs() < 1e-12);
        assert!((sim.t - Point2::new(1.0, 2.0)).norm() < 1e-12);
    }

    #[test]
    fn scale_and_quarter_turn() {
        let truth = Similarity2 { scale: 2.0, theta: FRAC_PI_2, t: Point2::new(-0.5, 4.0) };
        let pairs: Vec<_> = square().into_iter().map(|p| (p, truth.apply(&p))).collect();
        let sim = compute_alignment(&pairs, true).unwrap();
        assert!((sim.scale - 2.0).abs() < 1e-12);
        assert!((sim.theta - FRAC_PI_2).abs() < 1e-12);
        assert!(rms_residual(&sim, &pairs) < 1e-12);
    }

    #[test]
    fn identical_sets_give_identity() {
        let pairs: Vec<_> = square().into_iter().map(|p| (p, p)).collect();
        let sim = compute_alignment(&pairs, true).unwrap();
        assert_eq!(sim.theta, 0.0);
        assert!((sim.scale - 1.0).abs() < 1e-15);
        assert!(sim.t.norm() < 1e-15);
        assert_eq!(rms_residual(&sim, &pairs), 0.0);
    }

    #[test]
    fn rigid_mode_pins_scale() {
        let truth = Similarity2 { scale: 3.0, theta: 0.4, t: Point2::new(1.0, 1.0) };
        let pairs: Vec<_> = square().into_iter().map(|p| (p, truth.apply(&p))).collect();
        let sim = compute_alignment(&pairs, false).unwrap();
        assert_eq!(sim.scale, 1.0);
        assert!((sim.theta - 0.4).abs() < 1e-12);
    }

    #[test]
    fn coincident_sources_are_degenerate() {
        let p = Point2::new(2.0, 2.0);
        let pairs = vec![(p, Point2::new(0.0, 0.0)), (p, Point2::new(1.0, 0.0))];
        assert_eq!(compute_alignment(&pairs, true), Err(AlignmentError::DegenerateConfiguration));
        assert_eq!(compute_alignment(&pairs[..1], true), Err(AlignmentError::TooFewPairs(1)));
    }
}
