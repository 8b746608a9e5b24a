use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::BenchmarkError;
use crate::dataset::keyfile_name;
use crate::geometry::{denormalize_point, internal_to_bundler, normalize_point, Pose};
use crate::sfm::{
    attach_mean_descriptors, split_golden, write_bundle, write_keyfile, Descriptor, Feature, ModelPoint, QueryImage,
    SfmModel, View,
};
use crate::{Mat3, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    pub n_points: usize,
    pub n_cameras: usize,
    pub n_queries: usize,
    pub width: u32,
    pub height: u32,
    pub focal_px: f64,
    pub noise_px: f64,
    pub outlier_fraction: f64,
    /// Whether query images carry their focal length.
    pub query_focal_known: bool,
    /// Chance that a point in a model camera's view was detected there.
    pub detection_probability: f64,
    pub query_detection_probability: f64,
    /// Largest per-component deviation of an observed descriptor from the
    /// point's base descriptor.
    pub descriptor_noise: u8,
    /// Horizontal half-size of the point volume in world units; the volume
    /// is a quarter as tall.
    pub extent: f64,
    /// Radius of the camera ring relative to `extent`.
    pub ring_factor: f64,
    pub seed: u64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            n_points: 5000,
            n_cameras: 50,
            n_queries: 100,
            width: 4000,
            height: 3000,
            focal_px: 3200.0,
            noise_px: 1.0,
            outlier_fraction: 0.3,
            query_focal_known: true,
            detection_probability: 0.5,
            query_detection_probability: 0.1,
            descriptor_noise: 8,
            extent: 80.0,
            ring_factor: 1.0,
            seed: 1,
        }
    }
}

/// A query with its reference pose and per-feature ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticQuery {
    pub image: QueryImage,
    pub golden: Pose,
    /// Model point each feature was rendered from; `None` for outliers.
    pub feature_point: Vec<Option<usize>>,
}

impl SyntheticQuery {
    pub fn outlier_count(&self) -> usize {
        self.feature_point.iter().filter(|p| p.is_none()).count()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub params: SceneParams,
    /// Localization model: model cameras only, mean descriptors attached.
    pub model: SfmModel,
    pub queries: Vec<SyntheticQuery>,
    /// Reconstruction including the query cameras, as a bundler file would
    /// hold it.
    pub full: SfmModel,
    pub camera_names: Vec<String>,
    /// Features of every camera of `full`, in the same order.
    pub keyfiles: Vec<Vec<Feature>>,
    pub diameter: f64,
}

fn look_at(center: Vec3, target: Vec3) -> Mat3 {
    let fwd = (target - center).normalize();
    let right = fwd.cross(&Vec3::y()).normalize();
    let down = fwd.cross(&right);
    Mat3::from_rows(&[right.transpose(), down.transpose(), fwd.transpose()])
}

fn perturb<R: Rng>(base: &Descriptor, amount: u8, rng: &mut R) -> Descriptor {
    let a = amount as i16;
    let mut out = *base;
    for v in out.0.iter_mut() {
        *v = (*v as i16 + rng.random_range(-a..=a)).clamp(0, 255) as u8;
    }
    out
}

fn random_feature<R: Rng>(px: [f64; 2], descriptor: Descriptor, rng: &mut R) -> Feature {
    Feature {
        x: px[0],
        y: px[1],
        scale: rng.random_range(1.0..5.0),
        orientation: rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
        descriptor,
    }
}

fn inside(px: [f64; 2], w: u32, h: u32) -> bool {
    px[0] >= 0.0 && px[1] >= 0.0 && px[0] < w as f64 && px[1] < h as f64
}

fn ring_camera<R: Rng>(rng: &mut R, extent: f64, angle: f64, radius: f64, focal: f64) -> Pose {
    let e = extent / 20.0;
    let center = Vec3::new(radius * angle.cos(), e * rng.random_range(-1.0..3.0), radius * angle.sin());
    let target = Vec3::new(
        e * rng.random_range(-3.0..3.0),
        e * rng.random_range(-2.0..2.0),
        e * rng.random_range(-3.0..3.0),
    );
    Pose::new(look_at(center, target), center, focal)
}

/// Noisy pixel position of a point in a camera, if it lands in the image.
fn observe<R: Rng>(pose: &Pose, x: &Vec3, params: &SceneParams, noise: &Normal<f64>, rng: &mut R) -> Option<[f64; 2]> {
    let depth = pose.to_camera(x).z;
    if !(depth > 0.0 && depth < 10.0 * params.extent) {
        return None;
    }
    let c = pose.project(x)?;
    let px = denormalize_point(c, params.width, params.height);
    if !inside(px, params.width, params.height) {
        return None;
    }
    let noisy = [px[0] + noise.sample(rng), px[1] + noise.sample(rng)];
    inside(noisy, params.width, params.height).then_some(noisy)
}

/// Random points in a box viewed by a ring of cameras, with query cameras
/// rendered from the same points plus labeled outlier features.
pub fn generate_synthetic_scene(params: &SceneParams) -> Result<SyntheticScene, BenchmarkError> {
    let p = params;
    let bad = |m: &str| Err(BenchmarkError::InvalidParams(m.to_string()));
    if p.n_points < 10 {
        return bad("need at least 10 points");
    }
    if p.n_cameras < 2 {
        return bad("need at least 2 cameras");
    }
    if p.width == 0 || p.height == 0 || !(p.focal_px > 0.0) {
        return bad("image size and focal length must be positive");
    }
    if !(0.0..1.0).contains(&p.outlier_fraction) || !(p.noise_px >= 0.0) {
        return bad("outlier fraction must be in [0, 1) and noise non-negative");
    }
    if !(p.extent > 0.0 && p.ring_factor > 0.0) {
        return bad("extent and ring radius must be positive");
    }
    if !(p.detection_probability > 0.0 && p.query_detection_probability > 0.0) {
        return bad("detection probabilities must be positive");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let noise = Normal::new(0.0, p.noise_px).expect("finite noise");

    let cameras: Vec<Pose> = (0..p.n_cameras)
        .map(|i| {
            let angle = std::f64::consts::TAU * i as f64 / p.n_cameras as f64 + rng.random_range(-0.05..0.05);
            let focal = p.focal_px * rng.random_range(0.9..1.1);
            ring_camera(&mut rng, p.extent, angle, p.ring_factor * p.extent, focal)
        })
        .collect();

    // every point needs at least two model observations
    let mut positions = Vec::with_capacity(p.n_points);
    let mut observations: Vec<Vec<(usize, [f64; 2])>> = Vec::with_capacity(p.n_points);
    let mut attempts = 0usize;
    while positions.len() < p.n_points {
        attempts += 1;
        if attempts > 100 * p.n_points {
            return bad("cameras see too few points");
        }
        let x = Vec3::new(
            rng.random_range(-p.extent..p.extent),
            rng.random_range(-p.extent / 4.0..p.extent / 4.0),
            rng.random_range(-p.extent..p.extent),
        );
        let obs: Vec<(usize, [f64; 2])> = cameras
            .iter()
            .enumerate()
            .filter_map(|(ci, cam)| {
                let seen = observe(cam, &x, p, &noise, &mut rng)?;
                (rng.random::<f64>() < p.detection_probability).then_some((ci, seen))
            })
            .collect();
        if obs.len() >= 2 {
            positions.push(x);
            observations.push(obs);
        }
    }
    let base: Vec<Descriptor> = (0..p.n_points)
        .map(|_| {
            let mut d = [0u8; 128];
            rng.fill(&mut d[..]);
            Descriptor(d)
        })
        .collect();
    let colors: Vec<[u8; 3]> = (0..p.n_points).map(|_| rng.random()).collect();

    let n_total = p.n_cameras + p.n_queries;
    let mut keyfiles: Vec<Vec<Feature>> = vec![Vec::new(); n_total];
    let mut views: Vec<Vec<View>> = vec![Vec::new(); p.n_points];
    for (pi, obs) in observations.iter().enumerate() {
        for &(ci, px) in obs {
            let key = keyfiles[ci].len() as u32;
            let d = perturb(&base[pi], p.descriptor_noise, &mut rng);
            keyfiles[ci].push(random_feature(px, d, &mut rng));
            let c = normalize_point(px, p.width, p.height);
            views[pi].push(View {
                camera: ci as u32,
                key,
                x: c[0],
                y: c[1],
            });
        }
    }

    let mut queries = Vec::with_capacity(p.n_queries);
    for qi in 0..p.n_queries {
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let radius = rng.random_range(0.85..1.15) * p.ring_factor * p.extent;
        let focal = p.focal_px * rng.random_range(0.8..1.2);
        let golden = ring_camera(&mut rng, p.extent, angle, radius, focal);

        let mut rendered: Vec<(Option<usize>, Feature)> = Vec::new();
        for (pi, x) in positions.iter().enumerate() {
            if let Some(px) = observe(&golden, x, p, &noise, &mut rng) {
                if rng.random::<f64>() < p.query_detection_probability {
                    let d = perturb(&base[pi], p.descriptor_noise, &mut rng);
                    rendered.push((Some(pi), random_feature(px, d, &mut rng)));
                }
            }
        }
        let n_out = (p.outlier_fraction * rendered.len() as f64).round() as usize;
        let mut order: Vec<usize> = (0..rendered.len()).collect();
        order.shuffle(&mut rng);
        for &i in order.iter().take(n_out) {
            let px = [
                rng.random_range(0.0..p.width as f64),
                rng.random_range(0.0..p.height as f64),
            ];
            let donor = rng.random_range(0..p.n_points);
            let d = perturb(&base[donor], p.descriptor_noise, &mut rng);
            rendered[i] = (None, random_feature(px, d, &mut rng));
        }
        rendered.shuffle(&mut rng);

        let cam = p.n_cameras + qi;
        for (key, (pt, f)) in rendered.iter().enumerate() {
            if let Some(pi) = pt {
                let c = normalize_point([f.x, f.y], p.width, p.height);
                views[*pi].push(View {
                    camera: cam as u32,
                    key: key as u32,
                    x: c[0],
                    y: c[1],
                });
            }
        }
        keyfiles[cam] = rendered.iter().map(|r| r.1.clone()).collect();
        queries.push(SyntheticQuery {
            image: QueryImage {
                name: format!("query_{qi:04}.jpg"),
                width: p.width,
                height: p.height,
                features: keyfiles[cam].clone(),
                exif_focal_px: p.query_focal_known.then_some(focal),
            },
            golden,
            feature_point: rendered.iter().map(|r| r.0).collect(),
        });
    }

    let full = SfmModel {
        cameras: cameras
            .iter()
            .chain(queries.iter().map(|q| &q.golden))
            .map(internal_to_bundler)
            .collect(),
        points: positions
            .iter()
            .zip(colors)
            .zip(views)
            .map(|((x, c), v)| ModelPoint::new(*x, c, v))
            .collect(),
    };
    let camera_names: Vec<String> = (0..p.n_cameras)
        .map(|i| format!("cam_{i:04}.jpg"))
        .chain(queries.iter().map(|q| q.image.name.clone()))
        .collect();
    let query_names: Vec<String> = queries.iter().map(|q| q.image.name.clone()).collect();
    let split = split_golden(&full, &query_names, &camera_names).expect("query names are camera names");
    debug_assert_eq!(split.dropped_points, 0);
    let mut model = split.info;
    attach_mean_descriptors(&mut model, &keyfiles[..p.n_cameras]).expect("keys match views");
    let diameter = model.bbox_diagonal();

    Ok(SyntheticScene {
        params: p.clone(),
        model,
        queries,
        full,
        camera_names,
        keyfiles,
        diameter,
    })
}

/// Writes `bundle.out`, `list.txt` (all cameras), `queries.txt` and one
/// keyfile per camera under `keys/`.
pub fn write_dataset(scene: &SyntheticScene, dir: &Path) -> Result<(), BenchmarkError> {
    std::fs::create_dir_all(dir.join("keys"))?;
    write_bundle(&scene.full, BufWriter::new(File::create(dir.join("bundle.out"))?))?;

    let mut list = BufWriter::new(File::create(dir.join("list.txt"))?);
    for (name, cam) in scene.camera_names.iter().zip(&scene.full.cameras) {
        writeln!(list, "{name} 0 {}", cam.focal_px)?;
    }
    list.flush()?;

    let mut ql = BufWriter::new(File::create(dir.join("queries.txt"))?);
    for q in &scene.queries {
        let im = &q.image;
        match im.exif_focal_px {
            Some(f) => writeln!(ql, "{} {} {} {}", im.name, im.width, im.height, f)?,
            None => writeln!(ql, "{} {} {}", im.name, im.width, im.height)?,
        }
    }
    ql.flush()?;

    for (name, feats) in scene.camera_names.iter().zip(&scene.keyfiles) {
        let path = dir.join("keys").join(keyfile_name(name));
        write_keyfile(feats, BufWriter::new(File::create(path)?))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SceneParams {
        SceneParams {
            n_points: 300,
            n_cameras: 8,
            n_queries: 3,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_synthetic_scene(&small()).unwrap();
        let b = generate_synthetic_scene(&small()).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.queries, b.queries);
    }

    #[test]
    fn outlier_count_exact() {
        let s = generate_synthetic_scene(&small()).unwrap();
        for q in &s.queries {
            let n = q.image.features.len();
            assert_eq!(q.outlier_count(), (0.3 * n as f64).round() as usize);
        }
    }

    #[test]
    fn inliers_project_near_features() {
        let s = generate_synthetic_scene(&small()).unwrap();
        for q in &s.queries {
            assert!(q.golden.is_valid(1e-9));
            for (f, pt) in q.image.features.iter().zip(&q.feature_point) {
                if let Some(pi) = pt {
                    let c = q.golden.project(&s.model.points[*pi].position).unwrap();
                    let px = denormalize_point(c, s.params.width, s.params.height);
                    assert!((px[0] - f.x).hypot(px[1] - f.y) < 6.0);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_params() {
        let p = SceneParams {
            n_points: 5,
            ..small()
        };
        assert!(matches!(generate_synthetic_scene(&p), Err(BenchmarkError::InvalidParams(_))));
    }
}
