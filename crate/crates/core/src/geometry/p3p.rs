//! Kneip–Scaramuzza–Siegwart P3P: the pose is parametrized directly in
//! intermediate camera and world frames, giving one quartic in cos θ.

use super::poly::quartic_real_roots;
use super::refine::{max_residual, refine_pose};
use super::{Pose, SolverError};
use crate::{Mat3, Vec3};

/// Candidate poses for three bearing/world correspondences. Bearings are
/// unit vectors in the internal camera frame; the returned poses carry
/// `focal_px` unchanged.
pub fn solve_p3p(
    bearings: &[Vec3; 3],
    world: &[Vec3; 3],
    focal_px: f64,
) -> Result<Vec<Pose>, SolverError> {
    let scale = (world[1] - world[0]).norm().max((world[2] - world[0]).norm());
    let area = (world[1] - world[0]).cross(&(world[2] - world[0])).norm();
    if !(area > 1e-10 * scale * scale) {
        return Err(SolverError::DegenerateConfiguration("collinear world points"));
    }
    let f: [Vec3; 3] = [
        bearings[0].normalize(),
        bearings[1].normalize(),
        bearings[2].normalize(),
    ];
    if f[0].cross(&f[1]).norm() < 1e-12
        || f[0].cross(&f[2]).norm() < 1e-12
        || f[1].cross(&f[2]).norm() < 1e-12
    {
        return Err(SolverError::DegenerateConfiguration("coincident bearings"));
    }

    let frame = |a: &Vec3, b: &Vec3| {
        let e1 = *a;
        let e3 = a.cross(b).normalize();
        let e2 = e3.cross(&e1);
        Mat3::from_rows(&[e1.transpose(), e2.transpose(), e3.transpose()])
    };

    let (mut f1, mut f2) = (f[0], f[1]);
    let (mut p1, mut p2, p3) = (world[0], world[1], world[2]);
    let mut t = frame(&f1, &f2);
    let mut f3 = t * f[2];
    // keep θ in [0, π]
    if f3.z > 0.0 {
        std::mem::swap(&mut f1, &mut f2);
        std::mem::swap(&mut p1, &mut p2);
        t = frame(&f1, &f2);
        f3 = t * f[2];
    }

    let n1 = (p2 - p1).normalize();
    let n3 = n1.cross(&(p3 - p1)).normalize();
    let n2 = n3.cross(&n1);
    let n = Mat3::from_rows(&[n1.transpose(), n2.transpose(), n3.transpose()]);
    let p3n = n * (p3 - p1);

    let d12 = (p2 - p1).norm();
    let phi1 = f3.x / f3.z;
    let phi2 = f3.y / f3.z;
    let (q1, q2) = (p3n.x, p3n.y);

    let cos_beta = f1.dot(&f2);
    let mut b = 1.0 / (1.0 - cos_beta * cos_beta) - 1.0;
    b = if cos_beta < 0.0 { -b.sqrt() } else { b.sqrt() };

    let phi1_2 = phi1 * phi1;
    let phi2_2 = phi2 * phi2;
    let q1_2 = q1 * q1;
    let q1_3 = q1_2 * q1;
    let q1_4 = q1_3 * q1;
    let q2_2 = q2 * q2;
    let q2_3 = q2_2 * q2;
    let q2_4 = q2_3 * q2;
    let d12_2 = d12 * d12;
    let b2 = b * b;

    let c4 = -phi2_2 * q2_4 - q2_4 * phi1_2 - q2_4;
    let c3 = 2.0 * q2_3 * d12 * b + 2.0 * phi2_2 * q2_3 * d12 * b - 2.0 * phi2 * q2_3 * phi1 * d12;
    let c2 = -phi2_2 * q2_2 * q1_2 - phi2_2 * q2_2 * d12_2 * b2 - phi2_2 * q2_2 * d12_2
        + phi2_2 * q2_4
        + q2_4 * phi1_2
        + 2.0 * q1 * q2_2 * d12
        + 2.0 * phi1 * phi2 * q1 * q2_2 * d12 * b
        - q2_2 * q1_2 * phi1_2
        + 2.0 * q1 * q2_2 * phi2_2 * d12
        - q2_2 * d12_2 * b2
        - 2.0 * q1_2 * q2_2;
    let c1 = 2.0 * q1_2 * q2 * d12 * b + 2.0 * phi2 * q2_3 * phi1 * d12
        - 2.0 * phi2_2 * q2_3 * d12 * b
        - 2.0 * q1 * q2 * d12_2 * b;
    let c0 = -2.0 * phi2 * q2_2 * phi1 * q1 * d12 * b
        + phi2_2 * q2_2 * d12_2
        + 2.0 * q1_3 * d12
        - q1_2 * d12_2
        + phi2_2 * q2_2 * q1_2
        - q1_4
        - 2.0 * phi2_2 * q2_2 * q1 * d12
        + q2_2 * phi1_2 * q1_2
        + phi2_2 * q2_2 * d12_2 * b2;

    // normalized image observations for the polish step (unit focal)
    let obs: Vec<[f64; 2]> = f.iter().map(|v| [v.x / v.z, -v.y / v.z]).collect();
    let can_polish = f.iter().all(|v| v.z > 1e-6);

    let mut out = Vec::with_capacity(4);
    for cos_theta in quartic_real_roots([c4, c3, c2, c1, c0]) {
        let cos_theta = cos_theta.clamp(-1.0, 1.0);
        let cot_alpha = (-phi1 * q1 / phi2 - cos_theta * q2 + d12 * b)
            / (-phi1 * cos_theta * q2 / phi2 + q1 - d12);
        if !cot_alpha.is_finite() {
            continue;
        }
        let sin_theta = (1.0 - cos_theta * cos_theta).max(0.0).sqrt();
        let sin_alpha = (1.0 / (cot_alpha * cot_alpha + 1.0)).sqrt();
        let mut cos_alpha = (1.0 - sin_alpha * sin_alpha).max(0.0).sqrt();
        if cot_alpha < 0.0 {
            cos_alpha = -cos_alpha;
        }
        let k = sin_alpha * b + cos_alpha;
        let c_local = Vec3::new(
            d12 * cos_alpha * k,
            cos_theta * d12 * sin_alpha * k,
            sin_theta * d12 * sin_alpha * k,
        );
        let center = p1 + n.transpose() * c_local;
        #[rustfmt::skip]
        let r_local = Mat3::new(
            -cos_alpha, -sin_alpha * cos_theta, -sin_alpha * sin_theta,
            sin_alpha, -cos_alpha * cos_theta, -cos_alpha * sin_theta,
            0.0, -sin_theta, cos_theta,
        );
        let rotation = t.transpose() * r_local * n;
        let mut pose = Pose::new(rotation, center, 1.0);
        if can_polish {
            let polished = refine_pose(&pose, &obs, world, false, 3);
            if max_residual(&polished, &obs, world) <= max_residual(&pose, &obs, world) {
                pose = polished;
            }
        }
        pose.focal_px = focal_px;
        out.push(pose);
    }
    if out.is_empty() {
        return Err(SolverError::NoRealSolution);
    }
    Ok(out)
}
