//! Gauss-Newton over planar poses and landmark positions with range-bearing factors.
//!
//! The normal equations are reduced onto the pose block with a Schur complement;
//! landmark blocks are 2x2 and eliminated in closed form. Each iteration applies
//! step halving so that accepted iterates never increase the cost.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix2x3, Matrix3x2, Vector2};
use thiserror::Error;

use crate::geometry::{wrap_angle, Point2, Pose2};

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum SolveError {
    #[error("normal equations are rank deficient")]
    SingularSystem,
}

/// Measurement weights (inverse standard deviations are derived from these sigmas).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub sigma_range: f64,
    pub sigma_bearing: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self { sigma_range: 0.02, sigma_bearing: 0.01 }
    }
}

/// Predicted `(range, bearing)` of `point` seen from `pose`.
pub fn predict(pose: &Pose2, point: &Point2) -> (f64, f64) {
    let dx = point.x - pose.x;
    let dy = point.y - pose.y;
    (dx.hypot(dy), wrap_angle(dy.atan2(dx) - pose.theta))
}

/// Weighted residual `predicted − measured`, bearing wrapped.
pub fn residual(pose: &Pose2, point: &Point2, range: f64, bearing: f64, noise: &NoiseModel) -> Vector2<f64> {
    let (r, b) = predict(pose, point);
    Vector2::new((r - range) / noise.sigma_range, wrap_angle(b - bearing) / noise.sigma_bearing)
}

/// Weighted Jacobians of the residual with respect to the pose and the point.
pub fn jacobians(pose: &Pose2, point: &Point2, noise: &NoiseModel) -> (Matrix2x3<f64>, Matrix2<f64>) {
    let dx = point.x - pose.x;
    let dy = point.y - pose.y;
    let q = (dx * dx + dy * dy).max(1e-18);
    let rho = q.sqrt();
    let wr = 1.0 / noise.sigma_range;
    let wb = 1.0 / noise.sigma_bearing;
    let j_point = Matrix2::new(wr * dx / rho, wr * dy / rho, wb * -dy / q, wb * dx / q);
    let j_pose = Matrix2x3::new(wr * -dx / rho, wr * -dy / rho, 0.0, wb * dy / q, wb * -dx / q, -wb);
    (j_pose, j_point)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaObservation {
    pub pose: usize,
    pub point: usize,
    pub range: f64,
    pub bearing: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
}

/// Pose steps by pose index (`None` when fixed) and point steps.
type Step = (Vec<Option<[f64; 3]>>, Vec<Vector2<f64>>);

/// A bundle-adjustment problem. Fixed poses act as anchors; every point is free.
#[derive(Debug, Clone)]
pub struct BaProblem {
    pub poses: Vec<Pose2>,
    pub pose_fixed: Vec<bool>,
    pub points: Vec<Point2>,
    pub observations: Vec<BaObservation>,
    pub noise: NoiseModel,
}

impl BaProblem {
    /// Half the sum of squared weighted residuals.
    pub fn cost(&self) -> f64 {
        cost_of(&self.poses, &self.points, &self.observations, &self.noise)
    }

    /// Runs at most `max_iter` Gauss-Newton iterations, stopping early when the
    /// relative cost decrease falls below `rel_tol`. On error nothing is modified.
    pub fn solve(&mut self, max_iter: usize, rel_tol: f64) -> Result<SolveReport, SolveError> {
        let initial_cost = self.cost();
        let mut cost = initial_cost;
        let mut iterations = 0;
        let mut first = true;
        while iterations < max_iter && cost > 0.0 {
            let step = match self.gauss_newton_step() {
                Ok(s) => s,
                Err(e) if first => return Err(e),
                Err(_) => break,
            };
            first = false;
            iterations += 1;
            let mut alpha = 1.0;
            let mut accepted = None;
            for _ in 0..12 {
                let (poses, points) = self.stepped(&step, alpha);
                let c = cost_of(&poses, &points, &self.observations, &self.noise);
                if c < cost {
                    accepted = Some((poses, points, c));
                    break;
                }
                alpha *= 0.5;
            }
            let Some((poses, points, new_cost)) = accepted else { break };
            self.poses = poses;
            self.points = points;
            let rel = (cost - new_cost) / cost;
            cost = new_cost;
            if rel < rel_tol {
                break;
            }
        }
        Ok(SolveReport { iterations, initial_cost, final_cost: cost })
    }

    fn free_pose_index(&self) -> (Vec<Option<usize>>, usize) {
        let mut n = 0;
        let idx = self
            .pose_fixed
            .iter()
            .map(|fixed| {
                if *fixed {
                    None
                } else {
                    n += 1;
                    Some(n - 1)
                }
            })
            .collect();
        (idx, n)
    }

    /// Solves the Gauss-Newton system, returning `(pose steps by free index, point steps)`.
    fn gauss_newton_step(&self) -> Result<Step, SolveError> {
        let (free_idx, n_free) = self.free_pose_index();
        let n_pts = self.points.len();
        let mut hll = vec![Matrix2::<f64>::zeros(); n_pts];
        let mut bl = vec![Vector2::<f64>::zeros(); n_pts];
        // Off-diagonal blocks W = Jpᵀ Jl grouped by point.
        let mut w: Vec<Vec<(usize, Matrix3x2<f64>)>> = vec![Vec::new(); n_pts];
        let mut hpp = DMatrix::<f64>::zeros(3 * n_free, 3 * n_free);
        let mut bp = DVector::<f64>::zeros(3 * n_free);

        // Points whose own block is near rank deficient (a landmark almost on top
        // of the observer) would swamp the reduced system. Freeze them this step.
        for o in &self.observations {
            let (_, jl) = jacobians(&self.poses[o.pose], &self.points[o.point], &self.noise);
            hll[o.point] += jl.transpose() * jl;
        }
        let frozen: Vec<bool> = hll.iter().map(|h| !well_conditioned(h)).collect();
        if frozen.iter().all(|&f| f) && n_pts > 0 {
            return Err(SolveError::SingularSystem);
        }
        let mut hll = vec![Matrix2::<f64>::zeros(); n_pts];
        for o in &self.observations {
            if frozen[o.point] {
                continue;
            }
            let pose = &self.poses[o.pose];
            let pt = &self.points[o.point];
            let e = residual(pose, pt, o.range, o.bearing, &self.noise);
            let (jp, jl) = jacobians(pose, pt, &self.noise);
            hll[o.point] += jl.transpose() * jl;
            bl[o.point] += jl.transpose() * e;
            if let Some(i) = free_idx[o.pose] {
                let hp = jp.transpose() * jp;
                let gp = jp.transpose() * e;
                for r in 0..3 {
                    bp[3 * i + r] += gp[r];
                    for c in 0..3 {
                        hpp[(3 * i + r, 3 * i + c)] += hp[(r, c)];
                    }
                }
                let wij = jp.transpose() * jl;
                match w[o.point].iter_mut().find(|(k, _)| *k == i) {
                    Some((_, m)) => *m += wij,
                    None => w[o.point].push((i, wij)),
                }
            }
        }

        let mut hll_inv = Vec::with_capacity(n_pts);
        for (h, &f) in hll.iter().zip(&frozen) {
            if f {
                hll_inv.push(Matrix2::zeros());
                continue;
            }
            hll_inv.push(h.try_inverse().ok_or(SolveError::SingularSystem)?);
        }

        let mut dp = DVector::<f64>::zeros(3 * n_free);
        if n_free > 0 {
            let mut s = hpp;
            let mut rhs = -bp;
            for j in 0..n_pts {
                let inv = &hll_inv[j];
                for (i, wi) in &w[j] {
                    let wi_inv = wi * inv;
                    let g = wi_inv * bl[j];
                    for r in 0..3 {
                        rhs[3 * i + r] += g[r];
                    }
                    for (k, wk) in &w[j] {
                        let blk = wi_inv * wk.transpose();
                        for r in 0..3 {
                            for c in 0..3 {
                                s[(3 * i + r, 3 * k + c)] -= blk[(r, c)];
                            }
                        }
                    }
                }
            }
            let scale = (0..s.nrows()).map(|i| s[(i, i)]).fold(0.0f64, f64::max).max(1e-300);
            let chol = s.cholesky().ok_or(SolveError::SingularSystem)?;
            let l = chol.l_dirty();
            if (0..l.nrows()).any(|i| l[(i, i)] * l[(i, i)] < 1e-10 * scale) {
                return Err(SolveError::SingularSystem);
            }
            dp = chol.solve(&rhs);
            if dp.iter().any(|v| !v.is_finite()) {
                return Err(SolveError::SingularSystem);
            }
        }

        let mut dl = Vec::with_capacity(n_pts);
        for j in 0..n_pts {
            let mut r = -bl[j];
            for (i, wi) in &w[j] {
                let d = nalgebra::Vector3::new(dp[3 * i], dp[3 * i + 1], dp[3 * i + 2]);
                r -= wi.transpose() * d;
            }
            dl.push(hll_inv[j] * r);
        }
        let pose_steps = free_idx.iter().map(|fi| fi.map(|i| [dp[3 * i], dp[3 * i + 1], dp[3 * i + 2]])).collect();
        Ok((pose_steps, dl))
    }

    fn stepped(&self, step: &Step, alpha: f64) -> (Vec<Pose2>, Vec<Point2>) {
        let poses = self
            .poses
            .iter()
            .zip(&step.0)
            .map(|(p, s)| match s {
                Some(d) => Pose2::new(p.x + alpha * d[0], p.y + alpha * d[1], p.theta + alpha * d[2]),
                None => *p,
            })
            .collect();
        let points = self.points.iter().zip(&step.1).map(|(p, d)| p + d * alpha).collect();
        (poses, points)
    }
}

fn well_conditioned(h: &Matrix2<f64>) -> bool {
    let tr = h.trace();
    let det = h.determinant();
    // det / tr² bounds λmin / λmax from below up to a factor of 4.
    tr > 0.0 && det.is_finite() && det > 1e-10 * tr * tr
}

fn cost_of(poses: &[Pose2], points: &[Point2], obs: &[BaObservation], noise: &NoiseModel) -> f64 {
    0.5 * obs
        .iter()
        .map(|o| residual(&poses[o.pose], &points[o.point], o.range, o.bearing, noise).norm_squared())
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobians_match_finite_differences() {
        let noise = NoiseModel::default();
        let pose = Pose2::new(0.3, -0.2, 0.7);
        let pt = Point2::new(2.0, 1.5);
        let (jp, jl) = jacobians(&pose, &pt, &noise);
        let h = 1e-7;
        let base = residual(&pose, &pt, 0.0, 0.0, &noise);
        for c in 0..3 {
            let mut p = pose;
            match c {
                0 => p.x += h,
                1 => p.y += h,
                _ => p.theta += h,
            }
            let d = (residual(&p, &pt, 0.0, 0.0, &noise) - base) / h;
            assert!((d - jp.column(c)).norm() < 1e-4, "pose column {c}");
        }
        for c in 0..2 {
            let mut q = pt;
            q[c] += h;
            let d = (residual(&pose, &q, 0.0, 0.0, &noise) - base) / h;
            assert!((d - jl.column(c)).norm() < 1e-4, "point column {c}");
        }
    }

    #[test]
    fn unobserved_geometry_is_singular() {
        // One free pose observing one point: 2 equations, 5 unknowns.
        let mut p = BaProblem {
            poses: vec![Pose2::IDENTITY],
            pose_fixed: vec![false],
            points: vec![Point2::new(1.0, 0.0)],
            observations: vec![BaObservation { pose: 0, point: 0, range: 1.1, bearing: 0.0 }],
            noise: NoiseModel::default(),
        };
        let before = p.clone();
        assert_eq!(p.solve(10, 1e-6), Err(SolveError::SingularSystem));
        assert_eq!(p.poses, before.poses);
        assert_eq!(p.points, before.points);
    }
}
