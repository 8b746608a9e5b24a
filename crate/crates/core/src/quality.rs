//! Inlier tests for candidate poses and the image-coverage quality score.

use thiserror::Error;

use crate::geometry::{normalize_point, Pose};
use crate::index::GoodMatch;
use crate::sfm::{QueryImage, SfmModel};
use crate::Vec3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QualityError {
    #[error("point is behind the camera")]
    BehindCamera,
}

/// Centered, y-up projection of a world point.
pub fn reproject(pose: &Pose, point: &Vec3) -> Result<[f64; 2], QualityError> {
    pose.project(point).ok_or(QualityError::BehindCamera)
}

/// How a match is judged consistent with a pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InlierMetric {
    /// Distance in world units between the model point and the viewing ray
    /// through the feature.
    RayDistance(f64),
    /// Reprojection error in pixels.
    Pixel(f64),
}

impl Default for InlierMetric {
    fn default() -> Self {
        InlierMetric::RayDistance(0.5)
    }
}

impl InlierMetric {
    pub fn threshold(&self) -> f64 {
        match *self {
            InlierMetric::RayDistance(t) | InlierMetric::Pixel(t) => t,
        }
    }

    /// Error of one correspondence, `None` when the point is behind the
    /// camera.
    pub fn error(&self, pose: &Pose, point: &Vec3, centered: [f64; 2]) -> Option<f64> {
        match self {
            InlierMetric::RayDistance(_) => {
                let ray = pose.world_ray(centered);
                let d = point - pose.center;
                let along = d.dot(&ray);
                if along <= 0.0 || pose.to_camera(point).z <= 0.0 {
                    return None;
                }
                Some((d - ray * along).norm())
            }
            InlierMetric::Pixel(_) => {
                let p = pose.project(point)?;
                Some(((p[0] - centered[0]).powi(2) + (p[1] - centered[1]).powi(2)).sqrt())
            }
        }
    }

    pub fn is_inlier(&self, pose: &Pose, point: &Vec3, centered: [f64; 2]) -> bool {
        matches!(self.error(pose, point, centered), Some(e) if e < self.threshold())
    }
}

/// Centered coordinates of a match's query feature.
pub fn match_centered(m: &GoodMatch, query: &QueryImage) -> [f64; 2] {
    let f = &query.features[m.feature_idx];
    normalize_point([f.x, f.y], query.width, query.height)
}

/// Matches consistent with `pose` under `metric`; points behind the camera
/// are never fitted.
pub fn fitted_matches(
    pose: &Pose,
    matches: &[GoodMatch],
    query: &QueryImage,
    model: &SfmModel,
    metric: InlierMetric,
) -> Vec<GoodMatch> {
    matches
        .iter()
        .filter(|m| metric.is_inlier(pose, &model.points[m.point_idx].position, match_centered(m, query)))
        .cloned()
        .collect()
}

/// Half-window size used for a query of the given width.
pub fn half_window(width: u32) -> u32 {
    (width / 40).max(1)
}

/// Number of image pixels covered by the union of `(2c+1)²` windows centered
/// on the given pixel positions (x right, y down), clipped to the image.
pub fn coverage_of_pixels(centers: &[[f64; 2]], width: u32, height: u32, c: u32) -> u64 {
    let (w, h, c) = (width as i64, height as i64, c as i64);
    // half-open rectangles [x0, x1) × [y0, y1)
    let mut rects: Vec<[i64; 4]> = centers
        .iter()
        .filter(|p| p[0].is_finite() && p[1].is_finite())
        .filter_map(|p| {
            let (cx, cy) = (p[0].round() as i64, p[1].round() as i64);
            let r = [(cx - c).max(0), (cx + c + 1).min(w), (cy - c).max(0), (cy + c + 1).min(h)];
            (r[0] < r[1] && r[2] < r[3]).then_some(r)
        })
        .collect();
    if rects.is_empty() {
        return 0;
    }
    rects.sort_unstable();
    rects.dedup();

    let mut ys: Vec<i64> = rects.iter().flat_map(|r| [r[2], r[3]]).collect();
    ys.sort_unstable();
    ys.dedup();

    let mut area = 0u64;
    let mut spans: Vec<(i64, i64)> = Vec::with_capacity(rects.len());
    for band in ys.windows(2) {
        let (y0, y1) = (band[0], band[1]);
        spans.clear();
        // rects are sorted by x0, so active spans come out sorted too
        spans.extend(rects.iter().filter(|r| r[2] <= y0 && r[3] >= y1).map(|r| (r[0], r[1])));
        let mut covered = 0i64;
        let mut cur: Option<(i64, i64)> = None;
        for &(a, b) in &spans {
            match cur {
                Some((s, e)) if a <= e => cur = Some((s, e.max(b))),
                Some((s, e)) => {
                    covered += e - s;
                    cur = Some((a, b));
                }
                None => cur = Some((a, b)),
            }
        }
        if let Some((s, e)) = cur {
            covered += e - s;
        }
        area += (covered * (y1 - y0)) as u64;
    }
    area
}

/// Pixel area covered by the matches' windows with half-size `c`.
pub fn coverage_area(matches: &[GoodMatch], query: &QueryImage, c: u32) -> u64 {
    let centers: Vec<[f64; 2]> = matches
        .iter()
        .map(|m| {
            let f = &query.features[m.feature_idx];
            [f.x, f.y]
        })
        .collect();
    coverage_of_pixels(&centers, query.width, query.height, c)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CoverageStats {
    pub area_good: u64,
    pub area_fitted: u64,
    pub q: f64,
}

impl CoverageStats {
    pub fn from_areas(area_good: u64, area_fitted: u64) -> Self {
        let q = if area_good == 0 {
            0.0
        } else {
            (area_fitted as f64 / area_good as f64).clamp(0.0, 1.0)
        };
        CoverageStats {
            area_good,
            area_fitted,
            q,
        }
    }
}

/// Coverage ratio of the fitted matches over the good matches.
pub fn quality_score(good: &[GoodMatch], fitted: &[GoodMatch], query: &QueryImage) -> CoverageStats {
    let c = half_window(query.width);
    CoverageStats::from_areas(coverage_area(good, query, c), coverage_area(fitted, query, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sfm::{Descriptor, Feature};
    use proptest::prelude::*;

    fn query_with(points: &[[f64; 2]], w: u32, h: u32) -> (QueryImage, Vec<GoodMatch>) {
        let features = points
            .iter()
            .map(|p| Feature {
                x: p[0],
                y: p[1],
                scale: 1.0,
                orientation: 0.0,
                descriptor: Descriptor::splat(0),
            })
            .collect();
        let matches = (0..points.len())
            .map(|i| GoodMatch {
                feature_idx: i,
                point_idx: i,
                d1: 0.0,
                d2: 1.0,
                visibility: vec![],
            })
            .collect();
        let q = QueryImage {
            name: "q".into(),
            width: w,
            height: h,
            features,
            exif_focal_px: None,
        };
        (q, matches)
    }

    /// Direct per-pixel count used as the oracle for the sweep.
    fn brute_area(centers: &[[f64; 2]], w: u32, h: u32, c: u32) -> u64 {
        let c = c as i64;
        let mut n = 0;
        for j in 0..h as i64 {
            for i in 0..w as i64 {
                if centers.iter().any(|p| {
                    (i - p[0].round() as i64).abs() <= c && (j - p[1].round() as i64).abs() <= c
                }) {
                    n += 1;
                }
            }
        }
        n
    }

    #[test]
    fn reproject_examples() {
        let pose = Pose::new(crate::Mat3::identity(), Vec3::zeros(), 100.0);
        assert_eq!(reproject(&pose, &Vec3::new(0.0, 0.0, 10.0)).unwrap(), [0.0, 0.0]);
        let p = reproject(&pose, &Vec3::new(1.0, 0.0, 10.0)).unwrap();
        assert!((p[0] - 10.0).abs() < 1e-12 && p[1].abs() < 1e-12);
        assert_eq!(
            reproject(&pose, &Vec3::new(0.0, 0.0, -1.0)),
            Err(QualityError::BehindCamera)
        );
    }

    #[test]
    fn single_window_areas() {
        assert_eq!(coverage_of_pixels(&[[200.0, 150.0]], 400, 300, 10), 441);
        assert_eq!(coverage_of_pixels(&[[0.0, 0.0]], 400, 300, 10), 121);
        assert_eq!(coverage_of_pixels(&[[5.0, 5.0], [5.0, 5.0]], 400, 300, 10), coverage_of_pixels(&[[5.0, 5.0]], 400, 300, 10));
    }

    #[test]
    fn half_of_two_windows() {
        let (q, m) = query_with(&[[100.0, 100.0], [300.0, 200.0]], 400, 300);
        assert_eq!(half_window(400), 10);
        let s = quality_score(&m, &m[..1], &q);
        assert_eq!((s.area_good, s.area_fitted), (882, 441));
        assert_eq!(s.q, 0.5);
        assert_eq!(quality_score(&m, &m, &q).q, 1.0);
        assert_eq!(quality_score(&m, &[], &q).q, 0.0);
        assert_eq!(quality_score(&[], &[], &q).q, 0.0);
    }

    #[test]
    fn narrow_image_window_floor() {
        assert_eq!(half_window(30), 1);
        assert_eq!(half_window(79), 1);
        assert_eq!(half_window(80), 2);
    }

    #[test]
    fn ray_metric_excludes_behind() {
        let pose = Pose::new(crate::Mat3::identity(), Vec3::zeros(), 100.0);
        let m = InlierMetric::default();
        assert!(m.is_inlier(&pose, &Vec3::new(0.0, 0.0, 10.0), [0.0, 0.0]));
        assert!(m.is_inlier(&pose, &Vec3::new(0.4, 0.0, 10.0), [0.0, 0.0]));
        assert!(!m.is_inlier(&pose, &Vec3::new(0.6, 0.0, 10.0), [0.0, 0.0]));
        assert!(!m.is_inlier(&pose, &Vec3::new(0.0, 0.0, -10.0), [0.0, 0.0]));
        let px = InlierMetric::Pixel(2.0);
        assert!(px.is_inlier(&pose, &Vec3::new(0.1, 0.0, 10.0), [0.5, 0.0]));
        assert!(!px.is_inlier(&pose, &Vec3::new(0.1, 0.0, 10.0), [3.5, 0.0]));
    }

    fn centers() -> impl Strategy<Value = Vec<[f64; 2]>> {
        prop::collection::vec((-5.0..70.0f64, -5.0..50.0f64).prop_map(|(x, y)| [x, y]), 0..12)
    }

    proptest! {
        #[test]
        fn sweep_matches_pixel_count(cs in centers(), c in 1u32..6) {
            prop_assert_eq!(coverage_of_pixels(&cs, 64, 45, c), brute_area(&cs, 64, 45, c));
        }

        #[test]
        fn coverage_permutation_and_duplication(mut cs in centers(), c in 1u32..6) {
            let a = coverage_of_pixels(&cs, 64, 45, c);
            prop_assert!(a <= 64 * 45);
            cs.reverse();
            if let Some(first) = cs.first().copied() {
                cs.push(first);
            }
            prop_assert_eq!(coverage_of_pixels(&cs, 64, 45, c), a);
        }

        #[test]
        fn quality_monotone(cs in centers(), k in 0usize..12, extra in (0.0..64.0f64, 0.0..45.0f64)) {
            let (q, good) = query_with(&cs, 64, 45);
            let k = k.min(good.len());
            let base = quality_score(&good, &good[..k], &q);
            prop_assert!((0.0..=1.0).contains(&base.q));
            prop_assert!(base.area_fitted <= base.area_good);
            if k < good.len() {
                let more = quality_score(&good, &good[..k + 1], &q);
                prop_assert!(more.q >= base.q);
            }
            let mut pts = cs.clone();
            pts.push([extra.0, extra.1]);
            let (q2, good2) = query_with(&pts, 64, 45);
            let grown = quality_score(&good2, &good2[..k], &q2);
            prop_assert!(grown.q <= base.q + 1e-15);
        }
    }
}
