//! Planar rigid-body and similarity transforms.

use std::f64::consts::{PI, TAU};
use std::ops::Mul;

pub type Point2 = nalgebra::Vector2<f64>;

/// Wraps an angle into `(-pi, pi]`. Values already in range are returned untouched.
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let r = a - TAU * ((a + PI) / TAU).floor();
    if r <= -PI {
        r + TAU
    } else if r > PI {
        r - TAU
    } else {
        r
    }
}

/// An element of SE(2): rotation by `theta` followed by translation `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    pub const IDENTITY: Pose2 = Pose2 { x: 0.0, y: 0.0, theta: 0.0 };

    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta: wrap_angle(theta) }
    }

    pub fn translation(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    /// `self ∘ other`: applies `other` in the frame of `self`.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2 {
            x: self.x + c * other.x - s * other.y,
            y: self.y + s * other.x + c * other.y,
            theta: wrap_angle(self.theta + other.theta),
        }
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2 { x: -c * self.x - s * self.y, y: s * self.x - c * self.y, theta: wrap_angle(-self.theta) }
    }

    /// Relative pose `self⁻¹ ∘ other`.
    pub fn between(&self, other: &Pose2) -> Pose2 {
        self.inverse().compose(other)
    }

    /// Maps a point from this pose's local frame into the parent frame.
    pub fn transform_point(&self, p: &Point2) -> Point2 {
        let (s, c) = self.theta.sin_cos();
        Point2::new(self.x + c * p.x - s * p.y, self.y + s * p.x + c * p.y)
    }

    /// Maps a point from the parent frame into this pose's local frame.
    pub fn inverse_transform_point(&self, p: &Point2) -> Point2 {
        let (s, c) = self.theta.sin_cos();
        let dx = p.x - self.x;
        let dy = p.y - self.y;
        Point2::new(c * dx + s * dy, -s * dx + c * dy)
    }

    pub fn translation_norm(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

impl Mul for Pose2 {
    type Output = Pose2;
    fn mul(self, rhs: Pose2) -> Pose2 {
        self.compose(&rhs)
    }
}

/// A planar similarity `p ↦ s·R(theta)·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity2 {
    pub scale: f64,
    pub theta: f64,
    pub t: Point2,
}

impl Similarity2 {
    pub fn identity() -> Self {
        Self { scale: 1.0, theta: 0.0, t: Point2::zeros() }
    }

    pub fn apply(&self, p: &Point2) -> Point2 {
        let (s, c) = self.theta.sin_cos();
        Point2::new(self.scale * (c * p.x - s * p.y) + self.t.x, self.scale * (s * p.x + c * p.y) + self.t.y)
    }

    /// Applies the transform to a pose. Translation is scaled, heading rotated.
    pub fn apply_pose(&self, pose: &Pose2) -> Pose2 {
        let p = self.apply(&pose.translation());
        Pose2::new(p.x, p.y, pose.theta + self.theta)
    }

    /// The rigid part as an SE(2) element; only meaningful when `scale == 1`.
    pub fn as_pose(&self) -> Pose2 {
        Pose2::new(self.t.x, self.t.y, self.theta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wrap_keeps_pi_and_maps_minus_pi() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-0.5 - TAU) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn identity_composition_is_exact() {
        let p = Pose2::new(1.25, -3.5, 2.9);
        assert_eq!(p.compose(&Pose2::IDENTITY), p);
        assert_eq!(Pose2::IDENTITY.compose(&p), p);
    }

    proptest! {
        #[test]
        fn composition_stays_normalized(
            a in (-10.0f64..10.0, -10.0f64..10.0, -7.0f64..7.0),
            b in (-10.0f64..10.0, -10.0f64..10.0, -7.0f64..7.0),
        ) {
            let p = Pose2::new(a.0, a.1, a.2);
            let q = Pose2::new(b.0, b.1, b.2);
            let r = p.compose(&q);
            prop_assert!(r.theta > -PI && r.theta <= PI);
            let back = p.compose(&p.between(&r));
            prop_assert!((back.x - r.x).abs() < 1e-9 && (back.y - r.y).abs() < 1e-9);
            prop_assert!(wrap_angle(back.theta - r.theta).abs() < 1e-9);
        }

        #[test]
        fn point_round_trip(a in (-10.0f64..10.0, -10.0f64..10.0, -4.0f64..4.0), px in -5.0f64..5.0, py in -5.0f64..5.0) {
            let pose = Pose2::new(a.0, a.1, a.2);
            let p = Point2::new(px, py);
            let q = pose.inverse_transform_point(&pose.transform_point(&p));
            prop_assert!((p - q).norm() < 1e-9);
        }
    }
}
