//! Camera pose representation, frame conventions and minimal solvers.
//!
//! Internal conventions:
//! * camera frame is right-handed with +X right, +Y down and the optical
//!   axis along +Z;
//! * image coordinates are centered at the principal point with +x right and
//!   +y up, so a camera-frame point projects to `(f·X/Z, −f·Y/Z)`;
//! * bundler cameras look along −Z with +Y up; the two frames differ by
//!   [`BUNDLER_FLIP`] applied on the camera side.

mod p3p;
mod p4pf;
mod poly;
mod refine;

use thiserror::Error;

use crate::sfm::CameraRecord;
use crate::{Mat3, Vec3};

pub use p3p::solve_p3p;
pub use p4pf::solve_p4pf;
pub use refine::refine_pose;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(&'static str),
    #[error("no real solution")]
    NoRealSolution,
}

/// Camera-side flip between bundler's −Z looking frame and the internal
/// +Z looking frame.
pub const BUNDLER_FLIP: Mat3 = Mat3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0);

/// World-to-camera rotation, camera center and focal length in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Mat3,
    pub center: Vec3,
    pub focal_px: f64,
}

impl Pose {
    pub fn new(rotation: Mat3, center: Vec3, focal_px: f64) -> Self {
        Pose {
            rotation,
            center,
            focal_px,
        }
    }

    /// Builds a pose from a world-to-camera transform `X_c = R X + t`.
    pub fn from_rt(rotation: Mat3, translation: Vec3, focal_px: f64) -> Self {
        Pose::new(rotation, -rotation.transpose() * translation, focal_px)
    }

    pub fn translation(&self) -> Vec3 {
        -self.rotation * self.center
    }

    pub fn to_camera(&self, world: &Vec3) -> Vec3 {
        self.rotation * (world - self.center)
    }

    /// Centered, y-up image position of a world point, or `None` when the
    /// point is not strictly in front of the camera.
    pub fn project(&self, world: &Vec3) -> Option<[f64; 2]> {
        let pc = self.to_camera(world);
        if pc.z <= 0.0 {
            return None;
        }
        Some([
            self.focal_px * pc.x / pc.z,
            -self.focal_px * pc.y / pc.z,
        ])
    }

    /// Unit viewing ray in world coordinates through a centered image point.
    pub fn world_ray(&self, centered: [f64; 2]) -> Vec3 {
        self.rotation.transpose() * bearing(centered, self.focal_px)
    }

    /// Orthonormality and determinant within `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        let r = &self.rotation;
        (r.transpose() * r - Mat3::identity()).norm() < tol
            && (r.determinant() - 1.0).abs() < tol
            && self.focal_px > 0.0
    }

    /// Applies the rigid motion `X ↦ Q X + s` to the world frame.
    pub fn transformed(&self, q: &Mat3, s: &Vec3) -> Pose {
        Pose::new(self.rotation * q.transpose(), q * self.center + s, self.focal_px)
    }
}

/// Camera-frame unit bearing of a centered (y-up) image point.
pub fn bearing(centered: [f64; 2], focal_px: f64) -> Vec3 {
    Vec3::new(centered[0], -centered[1], focal_px).normalize()
}

/// Pixel (x right, y down, origin top-left) to centered y-up coordinates.
pub fn normalize_point(px: [f64; 2], width: u32, height: u32) -> [f64; 2] {
    [px[0] - width as f64 / 2.0, height as f64 / 2.0 - px[1]]
}

pub fn denormalize_point(c: [f64; 2], width: u32, height: u32) -> [f64; 2] {
    [c[0] + width as f64 / 2.0, height as f64 / 2.0 - c[1]]
}

pub fn normalize_points(px: &[[f64; 2]], width: u32, height: u32) -> Vec<[f64; 2]> {
    px.iter().map(|&p| normalize_point(p, width, height)).collect()
}

/// Converts a bundler camera into the internal convention. The center is
/// `−Rᵀt` from the bundler rotation/translation; the rotation gains the
/// camera-side flip.
pub fn bundler_to_internal(record: &CameraRecord) -> Pose {
    let center = -record.rotation.transpose() * record.translation;
    Pose::new(BUNDLER_FLIP * record.rotation, center, record.focal_px)
}

pub fn internal_to_bundler(pose: &Pose) -> CameraRecord {
    let rotation = BUNDLER_FLIP * pose.rotation;
    CameraRecord {
        focal_px: pose.focal_px,
        k1: 0.0,
        k2: 0.0,
        rotation,
        translation: -rotation * pose.center,
    }
}

/// Projects a 3×3 matrix onto SO(3).
pub(crate) fn nearest_rotation(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let d = (u * vt).determinant().signum();
    u * Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * vt
}

/// Geodesic angle between two rotations, radians.
pub fn rotation_angle(a: &Mat3, b: &Mat3) -> f64 {
    let q = a * b.transpose();
    let c = (q.trace() - 1.0) / 2.0;
    let s = Vec3::new(q[(2, 1)] - q[(1, 2)], q[(0, 2)] - q[(2, 0)], q[(1, 0)] - q[(0, 1)]).norm() / 2.0;
    s.atan2(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_point([200.0, 150.0], 400, 300), [0.0, 0.0]);
        assert_eq!(normalize_point([0.0, 0.0], 400, 300), [-200.0, 150.0]);
        let p = [123.456, 78.9];
        let back = denormalize_point(normalize_point(p, 640, 481), 640, 481);
        assert!((back[0] - p[0]).abs() < 1e-12 && (back[1] - p[1]).abs() < 1e-12);
    }

    #[test]
    fn bundler_identity() {
        let rec = CameraRecord {
            focal_px: 700.0,
            k1: 0.0,
            k2: 0.0,
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        };
        let p = bundler_to_internal(&rec);
        assert_eq!(p.center, Vec3::zeros());
        assert_eq!(p.rotation, BUNDLER_FLIP);
    }

    #[test]
    fn bundler_translated() {
        let rec = CameraRecord {
            focal_px: 700.0,
            k1: 0.0,
            k2: 0.0,
            rotation: Mat3::identity(),
            translation: Vec3::new(0.0, 0.0, -5.0),
        };
        assert_eq!(bundler_to_internal(&rec).center, Vec3::new(0.0, 0.0, 5.0));
    }

    #[test]
    fn bundler_round_trip() {
        let r = nalgebra::Rotation3::from_euler_angles(0.3, -1.1, 2.0).into_inner();
        let pose = Pose::new(r, Vec3::new(1.0, -2.0, 3.5), 812.0);
        let back = bundler_to_internal(&internal_to_bundler(&pose));
        assert_relative_eq!(back.rotation, pose.rotation, epsilon = 1e-12);
        assert_relative_eq!(back.center, pose.center, epsilon = 1e-12);
    }

    #[test]
    fn projection_agrees_with_bundler_model() {
        // bundler: P = R X + t, p = -f P.xy / P.z (y up, centered)
        let r = nalgebra::Rotation3::from_euler_angles(0.1, 0.2, 0.3).into_inner();
        let rec = CameraRecord {
            focal_px: 600.0,
            k1: 0.0,
            k2: 0.0,
            rotation: r,
            translation: Vec3::new(0.2, -0.1, -8.0),
        };
        let x = Vec3::new(0.5, 0.7, -0.3);
        let pb = rec.rotation * x + rec.translation;
        let expect = [-600.0 * pb.x / pb.z, -600.0 * pb.y / pb.z];
        let got = bundler_to_internal(&rec).project(&x).unwrap();
        assert_relative_eq!(got[0], expect[0], epsilon = 1e-9);
        assert_relative_eq!(got[1], expect[1], epsilon = 1e-9);
    }

    #[test]
    fn rotation_angle_small() {
        let r = nalgebra::Rotation3::from_axis_angle(&Vec3::x_axis(), 1e-10).into_inner();
        assert_relative_eq!(rotation_angle(&r, &Mat3::identity()), 1e-10, max_relative = 1e-6);
    }

    #[test]
    fn rotation_angle_half_turn() {
        let r = nalgebra::Rotation3::from_axis_angle(&Vec3::y_axis(), std::f64::consts::PI);
        assert_relative_eq!(
            rotation_angle(&r.into_inner(), &Mat3::identity()).to_degrees(),
            180.0,
            epsilon = 1e-9
        );
    }
}
