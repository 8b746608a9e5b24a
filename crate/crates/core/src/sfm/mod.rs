//! Structure-from-Motion data: bundler models, Lowe keyfiles, image lists,
//! golden/working model split and per-point descriptor averaging.

mod bundle;
mod keyfile;
mod list;
mod tokens;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use thiserror::Error;

use crate::{Mat3, Vec3};

pub use bundle::{parse_bundle, write_bundle};
pub use keyfile::{parse_keyfile, write_keyfile};
pub use list::{parse_image_list, ListEntry};

/// SIFT descriptor length.
pub const DESCRIPTOR_LEN: usize = 128;

#[derive(Debug, Error)]
pub enum SfmError {
    #[error("line {line}: malformed header, expected `{expected}`, found `{found}`")]
    MalformedHeader {
        line: usize,
        expected: String,
        found: String,
    },
    #[error("line {line}: unexpected end of file while reading {context}")]
    TruncatedFile { line: usize, context: &'static str },
    #[error("line {line}: invalid token `{token}` for {context}")]
    InvalidToken {
        line: usize,
        token: String,
        context: &'static str,
    },
    #[error("{what} index {index} out of range (count {count})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        count: usize,
    },
    #[error("line {line}: descriptor dimension {found}, expected 128")]
    DimensionMismatch { line: usize, found: usize },
    #[error("unknown query `{0}`")]
    UnknownQuery(String),
    #[error("cannot average an empty descriptor track")]
    EmptyTrack,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A 128-dimensional SIFT descriptor with components in `[0, 255]`.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Descriptor(pub [u8; DESCRIPTOR_LEN]);

impl Descriptor {
    pub fn splat(v: u8) -> Self {
        Descriptor([v; DESCRIPTOR_LEN])
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    /// Euclidean distance in descriptor space.
    pub fn distance(&self, other: &Descriptor) -> f64 {
        (squared_distance(&self.0, &other.0) as f64).sqrt()
    }
}

impl Default for Descriptor {
    fn default() -> Self {
        Descriptor::splat(0)
    }
}

impl fmt::Debug for Descriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Descriptor({:?}..)", &self.0[..8])
    }
}

pub(crate) fn squared_distance(a: &[u8], b: &[u8]) -> u32 {
    let (a, b): (&[u8; DESCRIPTOR_LEN], &[u8; DESCRIPTOR_LEN]) =
        (a.try_into().expect("descriptor length"), b.try_into().expect("descriptor length"));
    let mut acc = 0u32;
    for i in 0..DESCRIPTOR_LEN {
        let d = a[i] as i32 - b[i] as i32;
        acc += (d * d) as u32;
    }
    acc
}

/// A bundler camera: world-to-camera rotation and translation in bundler's
/// `-Z` looking convention.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraRecord {
    pub focal_px: f64,
    pub k1: f64,
    pub k2: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl CameraRecord {
    /// Bundler writes all-zero records for cameras it failed to register.
    pub fn is_registered(&self) -> bool {
        self.focal_px > 0.0 && (self.rotation.determinant() - 1.0).abs() < 1e-6
    }
}

/// One observation of a point: camera index, keypoint index in that
/// camera's keyfile and the bundler (centered, y-up) image position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct View {
    pub camera: u32,
    pub key: u32,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelPoint {
    pub position: Vec3,
    pub color: [u8; 3],
    pub views: Vec<View>,
    /// Sorted, deduplicated camera indices from `views`.
    pub visibility: Vec<u32>,
    pub mean_descriptor: Option<Descriptor>,
}

impl ModelPoint {
    pub fn new(position: Vec3, color: [u8; 3], views: Vec<View>) -> Self {
        let visibility = visibility_of(&views);
        ModelPoint {
            position,
            color,
            views,
            visibility,
            mean_descriptor: None,
        }
    }
}

fn visibility_of(views: &[View]) -> Vec<u32> {
    let mut v: Vec<u32> = views.iter().map(|v| v.camera).collect();
    v.sort_unstable();
    v.dedup();
    v
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SfmModel {
    pub cameras: Vec<CameraRecord>,
    pub points: Vec<ModelPoint>,
}

impl SfmModel {
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Diagonal of the axis-aligned bounding box of all points.
    pub fn bbox_diagonal(&self) -> f64 {
        let mut it = self.points.iter().map(|p| p.position);
        let Some(first) = it.next() else { return 0.0 };
        let (lo, hi) = it.fold((first, first), |(lo, hi), p| (lo.inf(&p), hi.sup(&p)));
        (hi - lo).norm()
    }
}

/// A SIFT keypoint. Coordinates are image pixels with `x` = column and
/// `y` = row (origin top-left), converted from the keyfile's row/column order.
#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub x: f64,
    pub y: f64,
    pub scale: f64,
    pub orientation: f64,
    pub descriptor: Descriptor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryImage {
    pub name: String,
    pub width: u32,
    pub height: u32,
    pub features: Vec<Feature>,
    pub exif_focal_px: Option<f64>,
}

/// Result of removing the query cameras from a full reconstruction.
#[derive(Debug, Clone)]
pub struct GoldenSplit {
    /// Working model without any query camera or observation by one.
    pub info: SfmModel,
    /// Reference poses of the query cameras, by name.
    pub golden: BTreeMap<String, CameraRecord>,
    /// Original camera index of every camera kept in `info`.
    pub kept_cameras: Vec<usize>,
    /// Points dropped because only query cameras observed them.
    pub dropped_points: usize,
}

/// Hides the query cameras: their records move to the golden map, their
/// observations are stripped from every track and points left without
/// observations are dropped.
pub fn split_golden(
    full: &SfmModel,
    query_names: &[String],
    camera_names: &[String],
) -> Result<GoldenSplit, SfmError> {
    if camera_names.len() != full.cameras.len() {
        return Err(SfmError::IndexOutOfRange {
            what: "camera name list",
            index: camera_names.len(),
            count: full.cameras.len(),
        });
    }
    let by_name: HashMap<&str, usize> = camera_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();

    let mut is_query = vec![false; full.cameras.len()];
    let mut golden = BTreeMap::new();
    for q in query_names {
        let &idx = by_name
            .get(q.as_str())
            .ok_or_else(|| SfmError::UnknownQuery(q.clone()))?;
        is_query[idx] = true;
        golden.insert(q.clone(), full.cameras[idx].clone());
    }

    let mut remap = vec![u32::MAX; full.cameras.len()];
    let mut kept_cameras = Vec::new();
    let mut cameras = Vec::new();
    for (i, cam) in full.cameras.iter().enumerate() {
        if !is_query[i] {
            remap[i] = kept_cameras.len() as u32;
            kept_cameras.push(i);
            cameras.push(cam.clone());
        }
    }

    let mut points = Vec::with_capacity(full.points.len());
    let mut dropped_points = 0;
    for p in &full.points {
        let views: Vec<View> = p
            .views
            .iter()
            .filter(|v| !is_query[v.camera as usize])
            .map(|v| View {
                camera: remap[v.camera as usize],
                ..*v
            })
            .collect();
        if views.is_empty() {
            dropped_points += 1;
            continue;
        }
        let mut np = ModelPoint::new(p.position, p.color, views);
        np.mean_descriptor = p.mean_descriptor;
        points.push(np);
    }

    Ok(GoldenSplit {
        info: SfmModel { cameras, points },
        golden,
        kept_cameras,
        dropped_points,
    })
}

/// Component-wise mean of a descriptor track, rounded half-up.
pub fn average_descriptors<'a, I>(track: I) -> Result<Descriptor, SfmError>
where
    I: IntoIterator<Item = &'a Descriptor>,
{
    let mut sums = [0u64; DESCRIPTOR_LEN];
    let mut n = 0u64;
    for d in track {
        for (s, &v) in sums.iter_mut().zip(d.0.iter()) {
            *s += v as u64;
        }
        n += 1;
    }
    if n == 0 {
        return Err(SfmError::EmptyTrack);
    }
    let mut out = [0u8; DESCRIPTOR_LEN];
    for (o, &s) in out.iter_mut().zip(sums.iter()) {
        // floor(s/n + 1/2) in integers
        *o = ((2 * s + n) / (2 * n)).min(255) as u8;
    }
    Ok(Descriptor(out))
}

/// Fills `mean_descriptor` of every point from the keyfiles of the model's
/// cameras (`keyfiles[c]` holds the features of camera `c`).
pub fn attach_mean_descriptors(
    model: &mut SfmModel,
    keyfiles: &[Vec<Feature>],
) -> Result<(), SfmError> {
    if keyfiles.len() != model.cameras.len() {
        return Err(SfmError::IndexOutOfRange {
            what: "keyfile list",
            index: keyfiles.len(),
            count: model.cameras.len(),
        });
    }
    for p in &mut model.points {
        let mut track = Vec::with_capacity(p.views.len());
        for v in &p.views {
            let feats = &keyfiles[v.camera as usize];
            let f = feats.get(v.key as usize).ok_or(SfmError::IndexOutOfRange {
                what: "keypoint",
                index: v.key as usize,
                count: feats.len(),
            })?;
            track.push(&f.descriptor);
        }
        p.mean_descriptor = Some(average_descriptors(track)?);
    }
    Ok(())
}
