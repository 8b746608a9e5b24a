//! Absolute pose with unknown focal length from four correspondences.
//!
//! With `w = 1/f` the projection reads `λ (a, b, 1) = [p1; p2; p3] X̃`
//! where `p1 = [r1 t1]`, `p2 = [r2 t2]` and `p3 = w [r3 t3]`. Eliminating
//! `p3` leaves `b p1·X̃ − a p2·X̃ = 0`, linear in `(p1, p2)`: four points give
//! a 4-dimensional null space. `p3` then follows linearly from the remaining
//! projection equations, and the orthogonality of the rotation rows gives
//! quadrics in the null-space coefficients, solved with an action matrix.
//!
//! Coplanar points make the `p3` system singular; they are handled through
//! the plane-to-image homography instead, whose rotation columns fix `w²`.

use nalgebra::{Matrix4, SMatrix, SVector, Vector4};

use super::poly::{solve_three_quadrics, QuadricForm};
use super::refine::{max_residual, refine_pose};
use super::{nearest_rotation, Pose, SolverError};
use crate::{Mat3, Vec3};

/// Relative planarity below which only the homography branch runs.
const PLANAR_ONLY: f64 = 1e-9;
/// Relative planarity below which the homography branch also runs.
const NEAR_PLANAR: f64 = 1e-2;
/// Candidates whose worst residual after polishing exceeds this fraction of
/// the image point spread are dropped.
const RESIDUAL_GATE: f64 = 0.02;
/// Largest cosine between the second and third rotation rows accepted from
/// the algebraic stage.
const ORTHOGONALITY_TOL: f64 = 0.05;

/// Candidate poses (each with its own focal length) for four centered
/// (y-up) image points and their world points.
pub fn solve_p4pf(image: &[[f64; 2]; 4], world: &[Vec3; 4]) -> Result<Vec<Pose>, SolverError> {
    // camera-oriented (y down) image coordinates, scaled to unit spread
    let spread = image.iter().map(|p| (p[0] * p[0] + p[1] * p[1]).sqrt()).sum::<f64>() / 4.0;
    if !(spread > 0.0) || !spread.is_finite() {
        return Err(SolverError::DegenerateConfiguration("image points at the principal point"));
    }
    for i in 0..4 {
        for j in i + 1..4 {
            let d = ((image[i][0] - image[j][0]).powi(2) + (image[i][1] - image[j][1]).powi(2)).sqrt();
            if d < 1e-9 * spread {
                return Err(SolverError::DegenerateConfiguration("coincident image points"));
            }
        }
    }
    let ab: [[f64; 2]; 4] = std::array::from_fn(|i| [image[i][0] / spread, -image[i][1] / spread]);

    let centroid = world.iter().sum::<Vec3>() / 4.0;
    let sigma = world.iter().map(|x| (x - centroid).norm()).sum::<f64>() / 4.0;
    if !(sigma > 0.0) {
        return Err(SolverError::DegenerateConfiguration("coincident world points"));
    }
    let xs: [Vec3; 4] = std::array::from_fn(|i| (world[i] - centroid) / sigma);
    for (i, j, k) in [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)] {
        let u = xs[j] - xs[i];
        let v = xs[k] - xs[i];
        if u.cross(&v).norm() < 1e-9 * u.norm() * v.norm() {
            return Err(SolverError::DegenerateConfiguration("three collinear world points"));
        }
    }

    let planarity = {
        let m = SMatrix::<f64, 4, 3>::from_fn(|r, c| xs[r][c]);
        let sv = m.svd(false, false).singular_values;
        sv.min() / sv.max()
    };

    let mut raw: Vec<(Mat3, Vec3, f64)> = Vec::new();
    if planarity >= PLANAR_ONLY {
        raw.extend(general_branch(&ab, &xs));
    }
    if planarity < NEAR_PLANAR {
        raw.extend(planar_branch(&ab, &xs));
    }

    // observations in scaled image units, internal y-up convention
    let obs: Vec<[f64; 2]> = ab.iter().map(|p| [p[0], -p[1]]).collect();
    let mut polished: Vec<(Pose, f64)> = Vec::new();
    for (r, t, f) in raw {
        if !(f > 0.0) || !f.is_finite() {
            continue;
        }
        let start = Pose::from_rt(r, t, f);
        if xs.iter().any(|x| start.to_camera(x).z <= 0.0) {
            continue;
        }
        let pose = refine_pose(&start, &obs, &xs, true, 8);
        let residual = max_residual(&pose, &obs, &xs);
        if pose.focal_px > 0.0 && residual <= RESIDUAL_GATE {
            polished.push((pose, residual));
        }
    }
    // consistent data makes every true candidate exact; anything far above
    // the best one is then a spurious root
    let best = polished.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let gate = (best * 1e4).clamp(1e-9, RESIDUAL_GATE);

    let mut out: Vec<Pose> = Vec::new();
    for (pose, residual) in polished {
        if residual > gate {
            continue;
        }
        let full = Pose::new(pose.rotation, pose.center * sigma + centroid, pose.focal_px * spread);
        let duplicate = out.iter().any(|p| {
            (p.rotation - full.rotation).norm() < 1e-9
                && (p.center - full.center).norm() < 1e-9 * sigma
                && (p.focal_px - full.focal_px).abs() < 1e-9 * full.focal_px
        });
        if !duplicate {
            out.push(full);
        }
    }
    if out.is_empty() {
        return Err(SolverError::NoRealSolution);
    }
    Ok(out)
}

/// Fixed orthogonal mixing of the null-space basis so that dehomogenizing on
/// the last coefficient is generic.
fn mixing() -> Matrix4<f64> {
    let v = Vector4::new(1.0, 0.3, -0.7, 0.45);
    Matrix4::identity() - v * v.transpose() * (2.0 / v.norm_squared())
}

fn general_branch(ab: &[[f64; 2]; 4], xs: &[Vec3; 4]) -> Vec<(Mat3, Vec3, f64)> {
    let xh: [Vector4<f64>; 4] = std::array::from_fn(|i| xs[i].push(1.0));

    // b (p1·X) − a (p2·X) = 0, padded to square for a full right basis
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    for i in 0..4 {
        for k in 0..4 {
            a[(i, k)] = ab[i][1] * xh[i][k];
            a[(i, 4 + k)] = -ab[i][0] * xh[i][k];
        }
    }
    let svd = a.svd(false, true);
    let Some(vt) = svd.v_t else { return Vec::new() };
    let mut order: Vec<usize> = (0..8).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let basis = SMatrix::<f64, 8, 4>::from_fn(|r, c| vt[(order[c], r)]) * mixing();

    // p3 = h · alpha from one projection equation per point
    let mut m = Matrix4::<f64>::zeros();
    let mut g = Matrix4::<f64>::zeros();
    for i in 0..4 {
        let use_a = ab[i][0].abs() >= ab[i][1].abs();
        let coef = if use_a { ab[i][0] } else { ab[i][1] };
        let off = if use_a { 0 } else { 4 };
        for k in 0..4 {
            m[(i, k)] = coef * xh[i][k];
        }
        for c in 0..4 {
            g[(i, c)] = (0..4).map(|k| xh[i][k] * basis[(off + k, c)]).sum();
        }
    }
    let Some(m_inv) = m.try_inverse() else { return Vec::new() };
    let h = m_inv * g;

    let a1 = SMatrix::<f64, 3, 4>::from_fn(|r, c| basis[(r, c)]);
    let a2 = SMatrix::<f64, 3, 4>::from_fn(|r, c| basis[(4 + r, c)]);
    let a3 = SMatrix::<f64, 3, 4>::from_fn(|r, c| h[(r, c)]);
    let sym = |q: Matrix4<f64>| (q + q.transpose()) * 0.5;
    let forms: [QuadricForm; 3] = [
        sym(a1.transpose() * a2),
        sym(a1.transpose() * a1 - a2.transpose() * a2),
        sym(a1.transpose() * a3),
    ];

    let mut out = Vec::new();
    for s in solve_three_quadrics(&forms) {
        let alpha = Vector4::new(s[0], s[1], s[2], 1.0);
        let p12: SVector<f64, 8> = basis * alpha;
        let p3 = h * alpha;
        let (m1, m2, m3) = (
            Vec3::new(p12[0], p12[1], p12[2]),
            Vec3::new(p12[4], p12[5], p12[6]),
            Vec3::new(p3[0], p3[1], p3[2]),
        );
        let scale = (m1.norm() + m2.norm()) / 2.0;
        if !(scale > 0.0) || !(m3.norm() > 0.0) {
            continue;
        }
        // the unused orthogonality condition separates spurious roots
        if m2.dot(&m3).abs() > ORTHOGONALITY_TOL * m2.norm() * m3.norm() {
            continue;
        }
        let w = m3.norm() / scale;
        let mut r = Mat3::from_rows(&[
            (m1 / scale).transpose(),
            (m2 / scale).transpose(),
            (m3 / (w * scale)).transpose(),
        ]);
        let mut t = Vec3::new(p12[3] / scale, p12[7] / scale, p3[3] / (w * scale));
        if r.determinant() < 0.0 {
            r = -r;
            t = -t;
        }
        out.push((nearest_rotation(&r), t, 1.0 / w));
    }
    out
}

fn planar_branch(ab: &[[f64; 2]; 4], xs: &[Vec3; 4]) -> Vec<(Mat3, Vec3, f64)> {
    // plane frame: rows are the in-plane axes and the normal
    let pts = SMatrix::<f64, 4, 3>::from_fn(|r, c| xs[r][c]);
    let svd = pts.svd(false, true);
    let Some(vt) = svd.v_t else { return Vec::new() };
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let e1 = Vec3::new(vt[(order[0], 0)], vt[(order[0], 1)], vt[(order[0], 2)]);
    let e2 = Vec3::new(vt[(order[1], 0)], vt[(order[1], 1)], vt[(order[1], 2)]);
    let e3 = e1.cross(&e2);
    let to_plane = Mat3::from_rows(&[e1.transpose(), e2.transpose(), e3.transpose()]);
    let uv: [[f64; 2]; 4] = std::array::from_fn(|i| {
        let p = to_plane * xs[i];
        [p.x, p.y]
    });

    // homography (u, v, 1) -> (a, b, 1), DLT on exactly four points
    let mut a = SMatrix::<f64, 9, 9>::zeros();
    for i in 0..4 {
        let [u, v] = uv[i];
        let [x, y] = ab[i];
        let r0 = [u, v, 1.0, 0.0, 0.0, 0.0, -x * u, -x * v, -x];
        let r1 = [0.0, 0.0, 0.0, u, v, 1.0, -y * u, -y * v, -y];
        for k in 0..9 {
            a[(2 * i, k)] = r0[k];
            a[(2 * i + 1, k)] = r1[k];
        }
    }
    let svd = a.svd(false, true);
    let Some(vt) = svd.v_t else { return Vec::new() };
    let (k, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
    let hv = vt.row(k);
    let h = Mat3::new(hv[0], hv[1], hv[2], hv[3], hv[4], hv[5], hv[6], hv[7], hv[8]);

    // K⁻¹H has orthogonal, equal-norm first two columns; solve for w² by
    // least squares over both conditions
    let c1 = h[(0, 0)] * h[(0, 1)] + h[(1, 0)] * h[(1, 1)];
    let d1 = h[(2, 0)] * h[(2, 1)];
    let c2 = h[(0, 0)].powi(2) + h[(1, 0)].powi(2) - h[(0, 1)].powi(2) - h[(1, 1)].powi(2);
    let d2 = h[(2, 0)].powi(2) - h[(2, 1)].powi(2);
    let denom = c1 * c1 + c2 * c2;
    if denom == 0.0 {
        return Vec::new();
    }
    let w2 = -(c1 * d1 + c2 * d2) / denom;
    if !(w2 > 0.0) {
        return Vec::new();
    }
    let w = w2.sqrt();
    let kinv = Mat3::from_diagonal(&Vec3::new(w, w, 1.0));
    let g = kinv * h;
    let mut g1 = g.column(0).into_owned();
    let mut g2 = g.column(1).into_owned();
    let mut g3 = g.column(2).into_owned();
    let lambda = (g1.norm() + g2.norm()) / 2.0;
    g1 /= lambda;
    g2 /= lambda;
    g3 /= lambda;
    // plane origin (the centroid) must lie in front of the camera
    if g3.z < 0.0 {
        g1 = -g1;
        g2 = -g2;
        g3 = -g3;
    }
    let rp = nearest_rotation(&Mat3::from_columns(&[g1, g2, g1.cross(&g2)]));
    vec![(rp * to_plane, g3, 1.0 / w)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rotation_angle;
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn instance(rng: &mut ChaCha8Rng, planar: bool) -> (Pose, [[f64; 2]; 4], [Vec3; 4]) {
        let rot = Rotation3::from_scaled_axis(Vec3::new(
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
        ))
        .into_inner();
        let center = Vec3::new(
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
        );
        let pose = Pose::new(rot, center, 800.0);
        let world: [Vec3; 4] = std::array::from_fn(|_| {
            let pc = if planar {
                let u: f64 = rng.random_range(-2.0..2.0);
                let v: f64 = rng.random_range(-1.5..1.5);
                Vec3::new(u, v, 6.0 + 0.3 * u - 0.2 * v)
            } else {
                Vec3::new(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-1.5..1.5),
                    rng.random_range(4.0..8.0),
                )
            };
            center + rot.transpose() * pc
        });
        let image = world.map(|x| pose.project(&x).unwrap());
        (pose, image, world)
    }

    #[test]
    fn recovers_focal_and_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let (truth, image, world) = instance(&mut rng, false);
            let sols = solve_p4pf(&image, &world).unwrap();
            assert!(sols.len() <= 10);
            assert!(sols.iter().any(|p| {
                (p.focal_px - 800.0).abs() / 800.0 < 1e-8
                    && rotation_angle(&p.rotation, &truth.rotation) < 1e-8
                    && (p.center - truth.center).norm() < 1e-8
            }));
            for p in &sols {
                assert!(p.focal_px > 0.0);
                assert!(max_residual(p, &image, &world) < 1e-6);
            }
        }
    }

    #[test]
    fn coplanar_points_solvable() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let (truth, image, world) = instance(&mut rng, true);
            let sols = solve_p4pf(&image, &world).unwrap();
            assert!(sols.iter().any(|p| {
                (p.focal_px - 800.0).abs() / 800.0 < 1e-6
                    && (p.center - truth.center).norm() < 1e-6
            }));
        }
    }

    #[test]
    fn collinear_triple_rejected() {
        let world = [
            Vec3::new(0.0, 0.0, 5.0),
            Vec3::new(1.0, 0.0, 5.0),
            Vec3::new(2.0, 0.0, 5.0),
            Vec3::new(0.0, 1.0, 6.0),
        ];
        let image = [[0.0, 1.0], [10.0, 2.0], [20.0, 3.0], [4.0, 50.0]];
        assert!(matches!(
            solve_p4pf(&image, &world),
            Err(SolverError::DegenerateConfiguration(_))
        ));
    }
}
