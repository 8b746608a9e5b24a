use std::io::{BufRead, Write};

use super::tokens::Tokens;
use super::{CameraRecord, ModelPoint, SfmError, SfmModel, View};
use crate::{Mat3, Vec3};

const MAGIC: &str = "# Bundle file v0.3";

/// Parses a bundler v0.3 reconstruction.
pub fn parse_bundle<R: BufRead>(reader: R) -> Result<SfmModel, SfmError> {
    let mut t = Tokens::new(reader);
    let header = t.raw_line()?.ok_or(SfmError::TruncatedFile {
        line: 0,
        context: "header",
    })?;
    if header.trim() != MAGIC {
        return Err(SfmError::MalformedHeader {
            line: 1,
            expected: MAGIC.into(),
            found: header,
        });
    }
    let n_cameras: usize = t.parse("camera count")?;
    let n_points: usize = t.parse("point count")?;

    let mut cameras = Vec::with_capacity(n_cameras.min(1 << 20));
    for _ in 0..n_cameras {
        let focal_px = t.parse("camera focal")?;
        let k1 = t.parse("camera k1")?;
        let k2 = t.parse("camera k2")?;
        let mut r = [0.0f64; 9];
        for v in &mut r {
            *v = t.parse("camera rotation")?;
        }
        let mut tr = [0.0f64; 3];
        for v in &mut tr {
            *v = t.parse("camera translation")?;
        }
        cameras.push(CameraRecord {
            focal_px,
            k1,
            k2,
            rotation: Mat3::from_row_slice(&r),
            translation: Vec3::from(tr),
        });
    }

    let mut points = Vec::with_capacity(n_points.min(1 << 24));
    for _ in 0..n_points {
        let x = t.parse("point position")?;
        let y = t.parse("point position")?;
        let z = t.parse("point position")?;
        let r = t.parse("point color")?;
        let g = t.parse("point color")?;
        let b = t.parse("point color")?;
        let n_views: usize = t.parse("view count")?;
        let mut views = Vec::with_capacity(n_views.min(4096));
        for _ in 0..n_views {
            let camera: u32 = t.parse("view camera")?;
            if camera as usize >= n_cameras {
                return Err(SfmError::IndexOutOfRange {
                    what: "camera",
                    index: camera as usize,
                    count: n_cameras,
                });
            }
            let key = t.parse("view key")?;
            let vx = t.parse("view x")?;
            let vy = t.parse("view y")?;
            views.push(View {
                camera,
                key,
                x: vx,
                y: vy,
            });
        }
        points.push(ModelPoint::new(Vec3::new(x, y, z), [r, g, b], views));
    }
    if !t.at_end()? {
        log::warn!("trailing data after line {} ignored", t.line_no());
    }
    Ok(SfmModel { cameras, points })
}

/// Writes a model in bundler v0.3 text. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_bundle<W: Write>(model: &SfmModel, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "{} {}", model.cameras.len(), model.points.len())?;
    for c in &model.cameras {
        writeln!(w, "{} {} {}", c.focal_px, c.k1, c.k2)?;
        for r in 0..3 {
            let row = c.rotation.row(r);
            writeln!(w, "{} {} {}", row[0], row[1], row[2])?;
        }
        let t = &c.translation;
        writeln!(w, "{} {} {}", t.x, t.y, t.z)?;
    }
    for p in &model.points {
        writeln!(w, "{} {} {}", p.position.x, p.position.y, p.position.z)?;
        writeln!(w, "{} {} {}", p.color[0], p.color[1], p.color[2])?;
        write!(w, "{}", p.views.len())?;
        for v in &p.views {
            write!(w, " {} {} {} {}", v.camera, v.key, v.x, v.y)?;
        }
        writeln!(w)?;
    }
    Ok(())
}
