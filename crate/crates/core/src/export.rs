//! Viewer exports: ASCII PLY point cloud, MeshLab project with a virtual
//! camera, OBJ camera glyph with a textured image sprite and OBJ match
//! polylines.
//!
//! Every number is written with 9 significant digits so output is stable
//! byte for byte.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::geometry::{Pose, BUNDLER_FLIP};
use crate::index::GoodMatch;
use crate::quality::match_centered;
use crate::ransac::PoseEstimate;
use crate::sfm::{QueryImage, SfmModel};
use crate::Vec3;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("nothing to export: {0}")]
    EmptyInput(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// MeshLab pixel size in millimetres. Only `focal_mm / pixel_size_mm`
/// matters to the viewer.
pub const PIXEL_SIZE_MM: f64 = 0.01;

/// Glyph size relative to the model bounding-box diagonal.
pub const GLYPH_FRACTION: f64 = 0.01;

pub const MESH_FILE: &str = "model.ply";
pub const MLP_FILE: &str = "project.mlp";
pub const CAMERA_OBJ_FILE: &str = "camera.obj";
pub const CAMERA_MTL_FILE: &str = "camera.mtl";
pub const PROJECTION_OBJ_FILE: &str = "projection.obj";
pub const IMAGE_FILE: &str = "camera.jpg";

/// Files written for one localized query.
#[derive(Debug, Clone, PartialEq)]
pub struct ExportBundle {
    pub mesh_path: PathBuf,
    pub mlp_path: PathBuf,
    pub camera_obj_path: PathBuf,
    pub projection_obj_path: PathBuf,
    /// Present only when a source image was available to copy.
    pub image_path: Option<PathBuf>,
}

/// Formats `x` with 9 significant digits, dropping trailing zeros.
pub fn fmt_num(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.8e}").parse().unwrap_or(x);
    if rounded == 0.0 {
        // avoid "-0"
        return "0".to_string();
    }
    format!("{rounded}")
}

fn fmt_vec(v: &Vec3) -> String {
    format!("{} {} {}", fmt_num(v.x), fmt_num(v.y), fmt_num(v.z))
}

fn create(path: &Path) -> std::io::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_ply<W: Write>(model: &SfmModel, mut w: W) -> Result<(), ExportError> {
    if model.is_empty() {
        return Err(ExportError::EmptyInput("model has no points"));
    }
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", model.points.len())?;
    for p in ["x", "y", "z"] {
        writeln!(w, "property float {p}")?;
    }
    for p in ["red", "green", "blue"] {
        writeln!(w, "property uchar {p}")?;
    }
    writeln!(w, "end_header")?;
    for p in &model.points {
        let [r, g, b] = p.color;
        writeln!(w, "{} {r} {g} {b}", fmt_vec(&p.position))?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_ply(model: &SfmModel, path: &Path) -> Result<(), ExportError> {
    write_ply(model, create(path)?)
}

/// MeshLab project referencing `mesh_file` and declaring the query camera
/// as a raster layer textured with `image_file`.
pub fn write_mlp<W: Write>(
    pose: &Pose,
    query: &QueryImage,
    mesh_file: &str,
    image_file: &str,
    mut w: W,
) -> Result<(), ExportError> {
    // the viewer's camera looks down -Z with +Y up, like bundler
    let r = BUNDLER_FLIP * pose.rotation;
    let t = -pose.center;
    let mut rot = String::new();
    for i in 0..3 {
        for j in 0..3 {
            rot.push_str(&fmt_num(r[(i, j)]));
            rot.push(' ');
        }
        rot.push_str("0 ");
    }
    rot.push_str("0 0 0 1");

    writeln!(w, "<!DOCTYPE MeshLabDocument>")?;
    writeln!(w, "<MeshLabProject>")?;
    writeln!(w, " <MeshGroup>")?;
    writeln!(w, "  <MLMesh label=\"{0}\" filename=\"{0}\">", xml_escape(mesh_file))?;
    writeln!(w, "   <MLMatrix44>")?;
    writeln!(w, "1 0 0 0 \n0 1 0 0 \n0 0 1 0 \n0 0 0 1 ")?;
    writeln!(w, "</MLMatrix44>")?;
    writeln!(w, "  </MLMesh>")?;
    writeln!(w, " </MeshGroup>")?;
    writeln!(w, " <RasterGroup>")?;
    writeln!(w, "  <MLRaster label=\"{}\">", xml_escape(&query.name))?;
    writeln!(
        w,
        "   <VCGCamera TranslationVector=\"{} 1\" LensDistortion=\"0 0\" ViewportPx=\"{} {}\" \
         PixelSizeMm=\"{} {}\" CenterPx=\"{} {}\" FocalMm=\"{}\" RotationMatrix=\"{}\" CameraType=\"0\"/>",
        fmt_vec(&t),
        query.width,
        query.height,
        fmt_num(PIXEL_SIZE_MM),
        fmt_num(PIXEL_SIZE_MM),
        fmt_num(query.width as f64 / 2.0),
        fmt_num(query.height as f64 / 2.0),
        fmt_num(pose.focal_px * PIXEL_SIZE_MM),
        rot,
    )?;
    writeln!(w, "   <Plane semantic=\"\" fileName=\"{}\"/>", xml_escape(image_file))?;
    writeln!(w, "  </MLRaster>")?;
    writeln!(w, " </RasterGroup>")?;
    writeln!(w, "</MeshLabProject>")?;
    w.flush()?;
    Ok(())
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

pub fn export_mlp(pose: &Pose, query: &QueryImage, mesh_file: &str, path: &Path) -> Result<(), ExportError> {
    write_mlp(pose, query, mesh_file, IMAGE_FILE, create(path)?)
}

/// World positions of the camera glyph: the center, then the four image
/// plane corners (top-left, top-right, bottom-right, bottom-left as seen in
/// the image) at depth `scale` in front of the center.
pub fn camera_glyph(pose: &Pose, width: u32, height: u32, scale: f64) -> [Vec3; 5] {
    let hw = width as f64 / 2.0 / pose.focal_px * scale;
    let hh = height as f64 / 2.0 / pose.focal_px * scale;
    // camera frame is y-down, so the image top edge has negative y
    let corners = [(-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)];
    let to_world = |c: Vec3| pose.center + pose.rotation.transpose() * c;
    let mut out = [pose.center; 5];
    for (o, (x, y)) in out[1..].iter_mut().zip(corners) {
        *o = to_world(Vec3::new(x, y, scale));
    }
    out
}

/// Camera glyph OBJ: a pyramid from the center to the image plane plus a
/// quad carrying the query image through `mtl_file`.
pub fn write_camera_obj<W: Write>(
    pose: &Pose,
    width: u32,
    height: u32,
    scale: f64,
    mtl_file: &str,
    mut w: W,
) -> Result<(), ExportError> {
    let g = camera_glyph(pose, width, height, scale);
    writeln!(w, "mtllib {mtl_file}")?;
    writeln!(w, "o camera")?;
    for v in &g {
        writeln!(w, "v {}", fmt_vec(v))?;
    }
    for (a, b) in [(2, 3), (3, 4), (4, 5), (5, 2)] {
        writeln!(w, "f 1 {a} {b}")?;
    }
    writeln!(w, "o sprite")?;
    for v in &g[1..] {
        writeln!(w, "v {}", fmt_vec(v))?;
    }
    for t in ["0 1", "1 1", "1 0", "0 0"] {
        writeln!(w, "vt {t}")?;
    }
    writeln!(w, "usemtl image")?;
    // counter-clockwise seen from the camera
    writeln!(w, "f 6/1 9/4 8/3 7/2")?;
    w.flush()?;
    Ok(())
}

pub fn write_camera_mtl<W: Write>(image_file: &str, mut w: W) -> Result<(), ExportError> {
    writeln!(w, "newmtl image")?;
    writeln!(w, "Ka 1 1 1")?;
    writeln!(w, "Kd 1 1 1")?;
    writeln!(w, "map_Kd {image_file}")?;
    w.flush()?;
    Ok(())
}

/// Writes `camera.obj` at `path` and `camera.mtl` beside it.
pub fn export_camera_obj(pose: &Pose, width: u32, height: u32, scale: f64, path: &Path) -> Result<(), ExportError> {
    let mtl = path.with_file_name(CAMERA_MTL_FILE);
    write_camera_mtl(IMAGE_FILE, create(&mtl)?)?;
    write_camera_obj(pose, width, height, scale, CAMERA_MTL_FILE, create(path)?)
}

/// For each match: camera center, the feature's point on the image plane at
/// depth `plane_depth`, and the matched model point.
pub fn projection_polylines(
    pose: &Pose,
    fitted: &[GoodMatch],
    query: &QueryImage,
    model: &SfmModel,
    plane_depth: f64,
) -> Vec<[Vec3; 3]> {
    let rt = pose.rotation.transpose();
    fitted
        .iter()
        .map(|m| {
            let c = match_centered(m, query);
            let cam = Vec3::new(c[0], -c[1], pose.focal_px) * (plane_depth / pose.focal_px);
            [pose.center, pose.center + rt * cam, model.points[m.point_idx].position]
        })
        .collect()
}

pub fn write_projection_obj<W: Write>(lines: &[[Vec3; 3]], mut w: W) -> Result<(), ExportError> {
    if lines.is_empty() {
        return Err(ExportError::EmptyInput("no fitted matches"));
    }
    writeln!(w, "o projection")?;
    for l in lines {
        for v in l {
            writeln!(w, "v {}", fmt_vec(v))?;
        }
    }
    for i in 0..lines.len() {
        let b = 3 * i + 1;
        writeln!(w, "l {} {} {}", b, b + 1, b + 2)?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_projection_obj(
    pose: &Pose,
    fitted: &[GoodMatch],
    query: &QueryImage,
    model: &SfmModel,
    plane_depth: f64,
    path: &Path,
) -> Result<(), ExportError> {
    let lines = projection_polylines(pose, fitted, query, model, plane_depth);
    if lines.is_empty() {
        return Err(ExportError::EmptyInput("no fitted matches"));
    }
    write_projection_obj(&lines, create(path)?)
}

/// Glyph size for a model: 1% of its bounding-box diagonal, or 1 for
/// degenerate models.
pub fn default_glyph_scale(model: &SfmModel) -> f64 {
    let d = model.bbox_diagonal() * GLYPH_FRACTION;
    if d > 0.0 {
        d
    } else {
        1.0
    }
}

/// Writes the per-query bundle into `dir`. `mesh_path` must already exist
/// (the point cloud is shared by all queries); the project file references
/// it relative to `dir` when possible. The source image, if given and
/// present, is copied verbatim as `camera.jpg`.
pub fn export_query(
    dir: &Path,
    mesh_path: &Path,
    model: &SfmModel,
    query: &QueryImage,
    estimate: &PoseEstimate,
    glyph_scale: f64,
    image_source: Option<&Path>,
) -> Result<ExportBundle, ExportError> {
    let (pose, fitted) = (&estimate.pose, &estimate.fitted);
    if fitted.is_empty() {
        return Err(ExportError::EmptyInput("no fitted matches"));
    }
    std::fs::create_dir_all(dir)?;
    let mesh_ref = relative_to(mesh_path, dir);
    let mlp_path = dir.join(MLP_FILE);
    export_mlp(pose, query, &mesh_ref, &mlp_path)?;
    let camera_obj_path = dir.join(CAMERA_OBJ_FILE);
    export_camera_obj(pose, query.width, query.height, glyph_scale, &camera_obj_path)?;
    let projection_obj_path = dir.join(PROJECTION_OBJ_FILE);
    export_projection_obj(pose, fitted, query, model, glyph_scale, &projection_obj_path)?;

    let image_path = match image_source {
        Some(src) if src.is_file() => {
            let dst = dir.join(IMAGE_FILE);
            std::fs::copy(src, &dst)?;
            Some(dst)
        }
        Some(src) => {
            log::warn!("{}: image {} not found, sprite has no texture", query.name, src.display());
            None
        }
        None => None,
    };
    Ok(ExportBundle {
        mesh_path: mesh_path.to_path_buf(),
        mlp_path,
        camera_obj_path,
        projection_obj_path,
        image_path,
    })
}

/// `path` relative to `base` when `path` sits in `base` or its parent,
/// otherwise `path` as given.
fn relative_to(path: &Path, base: &Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned());
    match (path.parent(), name) {
        (Some(p), Some(n)) if p == base => n,
        (Some(p), Some(n)) if Some(p) == base.parent() => format!("../{n}"),
        _ => path.to_string_lossy().into_owned(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sfm::{Descriptor, Feature, ModelPoint};
    use crate::Mat3;
    use nalgebra::Rotation3;

    fn model(points: &[(Vec3, [u8; 3])]) -> SfmModel {
        SfmModel {
            cameras: vec![],
            points: points.iter().map(|&(p, c)| ModelPoint::new(p, c, vec![])).collect(),
        }
    }

    fn text<F: FnOnce(&mut Vec<u8>) -> Result<(), ExportError>>(f: F) -> String {
        let mut buf = Vec::new();
        f(&mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    fn parse_vertices(obj: &str) -> Vec<Vec3> {
        obj.lines()
            .filter_map(|l| l.strip_prefix("v "))
            .map(|l| {
                let v: Vec<f64> = l.split_whitespace().map(|t| t.parse().unwrap()).collect();
                Vec3::new(v[0], v[1], v[2])
            })
            .collect()
    }

    fn query(w: u32, h: u32, features: &[[f64; 2]]) -> QueryImage {
        QueryImage {
            name: "q.jpg".into(),
            width: w,
            height: h,
            exif_focal_px: None,
            features: features
                .iter()
                .map(|p| Feature {
                    x: p[0],
                    y: p[1],
                    scale: 1.0,
                    orientation: 0.0,
                    descriptor: Descriptor::splat(0),
                })
                .collect(),
        }
    }

    #[test]
    fn number_format() {
        assert_eq!(fmt_num(0.0), "0");
        assert_eq!(fmt_num(-0.0), "0");
        assert_eq!(fmt_num(1.0), "1");
        assert_eq!(fmt_num(-2.5), "-2.5");
        assert_eq!(fmt_num(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_num(123456789.4), "123456789");
        assert_eq!(fmt_num(1e-12), "0.000000000001");
    }

    #[test]
    fn ply_single_point() {
        let m = model(&[(Vec3::new(1.0, -2.0, 0.5), [255, 0, 0])]);
        let s = text(|b| write_ply(&m, b));
        assert!(s.starts_with("ply\nformat ascii 1.0\nelement vertex 1\n"));
        let body: Vec<&str> = s.split("end_header\n").nth(1).unwrap().lines().collect();
        assert_eq!(body, vec!["1 -2 0.5 255 0 0"]);
        assert!(matches!(write_ply(&SfmModel::default(), Vec::new()), Err(ExportError::EmptyInput(_))));
    }

    #[test]
    fn mlp_units_and_identity() {
        let pose = Pose::new(Mat3::identity(), Vec3::zeros(), 1000.0);
        let s = text(|b| write_mlp(&pose, &query(640, 480, &[]), "model.ply", "camera.jpg", b));
        assert!(s.contains("TranslationVector=\"0 0 0 1\""));
        assert!(s.contains("FocalMm=\"10\""));
        assert!(s.contains("PixelSizeMm=\"0.01 0.01\""));
        assert!(s.contains("ViewportPx=\"640 480\""));
        assert!(s.contains("CenterPx=\"320 240\""));
        assert!(s.contains("RotationMatrix=\"1 0 0 0 0 -1 0 0 0 0 -1 0 0 0 0 1\""));
    }

    #[test]
    fn identity_sprite_on_axis() {
        let pose = Pose::new(Mat3::identity(), Vec3::zeros(), 500.0);
        let g = camera_glyph(&pose, 1000, 500, 2.0);
        let mid = (g[1] + g[2] + g[3] + g[4]) / 4.0;
        assert!((mid - Vec3::new(0.0, 0.0, 2.0)).norm() < 1e-12);
        assert_eq!(g[1], Vec3::new(-2.0, -1.0, 2.0));
    }

    #[test]
    fn glyph_translates_rigidly() {
        let r = *Rotation3::from_euler_angles(0.3, -0.2, 1.1).matrix();
        let a = Pose::new(r, Vec3::new(3.0, 1.0, -2.0), 800.0);
        let b = Pose::new(r, a.center + Vec3::x(), 800.0);
        let va = parse_vertices(&text(|w| write_camera_obj(&a, 640, 480, 0.5, "camera.mtl", w)));
        let vb = parse_vertices(&text(|w| write_camera_obj(&b, 640, 480, 0.5, "camera.mtl", w)));
        assert_eq!(va.len(), 9);
        for (p, q) in va.iter().zip(&vb) {
            assert!((q - p - Vec3::x()).norm() < 1e-7);
        }
    }

    #[test]
    fn projection_middle_vertex_on_feature_ray() {
        let r = *Rotation3::from_euler_angles(0.1, 0.4, -0.3).matrix();
        let pose = Pose::new(r, Vec3::new(1.0, 2.0, 3.0), 700.0);
        let q = query(800, 600, &[[100.0, 50.0], [650.0, 590.0]]);
        let m = model(&[(Vec3::new(5.0, 5.0, 20.0), [0; 3]), (Vec3::new(-3.0, 1.0, 9.0), [0; 3])]);
        let fitted: Vec<GoodMatch> = (0..2)
            .map(|i| GoodMatch {
                feature_idx: i,
                point_idx: 1 - i,
                d1: 0.0,
                d2: 1.0,
                visibility: vec![],
            })
            .collect();
        let lines = projection_polylines(&pose, &fitted, &q, &m, 1.0);
        for (l, f) in lines.iter().zip(&fitted) {
            assert_eq!(l[0], pose.center);
            let c = pose.to_camera(&l[1]);
            assert!((c.z - 1.0).abs() < 1e-9);
            let px = pose.project(&l[1]).unwrap();
            let want = match_centered(f, &q);
            assert!((px[0] - want[0]).abs() < 1e-9 && (px[1] - want[1]).abs() < 1e-9);
            assert_eq!(l[2], m.points[f.point_idx].position);
        }
        let s = text(|w| write_projection_obj(&lines, w));
        assert_eq!(parse_vertices(&s).len(), 6);
        assert_eq!(s.lines().filter(|l| l.starts_with("l ")).count(), 2);
        assert!(matches!(write_projection_obj(&[], Vec::new()), Err(ExportError::EmptyInput(_))));
    }

    #[test]
    fn relative_mesh_reference() {
        assert_eq!(relative_to(Path::new("/o/model.ply"), Path::new("/o/q1")), "../model.ply");
        assert_eq!(relative_to(Path::new("/o/q1/model.ply"), Path::new("/o/q1")), "model.ply");
        assert_eq!(relative_to(Path::new("/x/model.ply"), Path::new("/o/q1")), "/x/model.ply");
    }
}
