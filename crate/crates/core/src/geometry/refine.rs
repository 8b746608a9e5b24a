use nalgebra::{DMatrix, DVector, Rotation3};

use super::Pose;
use crate::Vec3;

/// Gauss-Newton polish of a pose against centered image observations,
/// optionally including the focal length. Steps that do not lower the
/// squared reprojection error are rejected, so the result is never worse
/// than the input.
pub fn refine_pose(
    pose: &Pose,
    observations: &[[f64; 2]],
    world: &[Vec3],
    optimize_focal: bool,
    max_iterations: usize,
) -> Pose {
    let n_params = if optimize_focal { 7 } else { 6 };
    let mut current = *pose;
    let Some(mut cost) = cost(&current, observations, world) else {
        return current;
    };
    for _ in 0..max_iterations {
        let m = 2 * observations.len();
        let mut j = DMatrix::<f64>::zeros(m, n_params);
        let mut r = DVector::<f64>::zeros(m);
        for (i, (obs, x)) in observations.iter().zip(world).enumerate() {
            let pc = current.to_camera(x);
            let f = current.focal_px;
            let (iz, u, v) = (1.0 / pc.z, pc.x / pc.z, pc.y / pc.z);
            r[2 * i] = f * u - obs[0];
            r[2 * i + 1] = -f * v - obs[1];
            // d(proj)/d(pc)
            let dp = nalgebra::Matrix2x3::new(f * iz, 0.0, -f * u * iz, 0.0, -f * iz, f * v * iz);
            // left perturbation R ← exp([w]x) R gives d(pc)/dw = −[pc]x
            let dw = dp * (-pc.cross_matrix());
            let dc = dp * (-current.rotation);
            for k in 0..3 {
                j[(2 * i, k)] = dw[(0, k)];
                j[(2 * i + 1, k)] = dw[(1, k)];
                j[(2 * i, 3 + k)] = dc[(0, k)];
                j[(2 * i + 1, 3 + k)] = dc[(1, k)];
            }
            if optimize_focal {
                j[(2 * i, 6)] = u;
                j[(2 * i + 1, 6)] = -v;
            }
        }
        let Some(step) = j.clone().svd(true, true).solve(&(-&r), 1e-14).ok() else {
            break;
        };
        let w = Vec3::new(step[0], step[1], step[2]);
        let candidate = Pose::new(
            Rotation3::new(w).into_inner() * current.rotation,
            current.center + Vec3::new(step[3], step[4], step[5]),
            if optimize_focal {
                current.focal_px + step[6]
            } else {
                current.focal_px
            },
        );
        match self::cost(&candidate, observations, world) {
            Some(c) if c < cost => {
                let done = step.norm() < 1e-15 * (1.0 + current.center.norm());
                current = candidate;
                cost = c;
                if done {
                    break;
                }
            }
            _ => break,
        }
    }
    current.rotation = super::nearest_rotation(&current.rotation);
    current
}

fn cost(pose: &Pose, observations: &[[f64; 2]], world: &[Vec3]) -> Option<f64> {
    let mut c = 0.0;
    for (o, x) in observations.iter().zip(world) {
        let p = pose.project(x)?;
        c += (p[0] - o[0]).powi(2) + (p[1] - o[1]).powi(2);
    }
    Some(c)
}

/// Largest reprojection residual, infinite if any point is behind.
pub(crate) fn max_residual(pose: &Pose, observations: &[[f64; 2]], world: &[Vec3]) -> f64 {
    observations
        .iter()
        .zip(world)
        .map(|(o, x)| match pose.project(x) {
            Some(p) => ((p[0] - o[0]).powi(2) + (p[1] - o[1]).powi(2)).sqrt(),
            None => f64::INFINITY,
        })
        .fold(0.0, f64::max)
}
