//! Pose accuracy and timing against golden poses, plus a synthetic scene
//! generator with known ground truth.

mod synthetic;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{rotation_angle, Pose};
use crate::ransac::{Localizer, LocalizerParams, PoseEstimate, RansacError};
use crate::sfm::QueryImage;

pub use synthetic::{generate_synthetic_scene, write_dataset, SceneParams, SyntheticQuery, SyntheticScene};

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error("no golden pose for query {0}")]
    MissingGolden(String),
    #[error("invalid scene parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Error of an estimated pose against its reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseError {
    pub rotation_deg: f64,
    /// Frobenius norm of the rotation difference.
    pub rotation_frobenius: f64,
    pub translation: f64,
    pub focal_px_delta: f64,
}

pub fn pose_error(estimate: &Pose, golden: &Pose) -> PoseError {
    PoseError {
        rotation_deg: rotation_angle(&estimate.rotation, &golden.rotation).to_degrees(),
        rotation_frobenius: (estimate.rotation - golden.rotation).norm(),
        translation: (estimate.center - golden.center).norm(),
        focal_px_delta: (estimate.focal_px - golden.focal_px).abs(),
    }
}

/// Outcome of one query; `error` is absent when no pose was found.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRow {
    pub name: String,
    pub error: Option<PoseError>,
    pub seconds: f64,
    pub used_backmatching: bool,
    pub fitted: usize,
    pub failure: Option<String>,
}

impl QueryRow {
    pub fn new(name: &str, result: &Result<PoseEstimate, RansacError>, golden: &Pose, seconds: f64) -> Self {
        match result {
            Ok(e) => QueryRow {
                name: name.to_string(),
                error: Some(pose_error(&e.pose, golden)),
                seconds,
                used_backmatching: e.used_backmatching,
                fitted: e.fitted.len(),
                failure: None,
            },
            Err(err) => QueryRow {
                name: name.to_string(),
                error: None,
                seconds,
                used_backmatching: false,
                fitted: 0,
                failure: Some(err.to_string()),
            },
        }
    }
}

/// Thresholds used by the aggregates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportThresholds {
    pub good_translation: f64,
    pub wrong_translation: f64,
    pub focal_split_px: f64,
}

impl Default for ReportThresholds {
    fn default() -> Self {
        ReportThresholds {
            good_translation: 0.5,
            wrong_translation: 30.0,
            focal_split_px: 1000.0,
        }
    }
}

/// Per-query rows and aggregates over the queries that produced a pose.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub per_query: Vec<QueryRow>,
    pub thresholds: ReportThresholds,
    pub registered: usize,
    pub median_translation: Option<f64>,
    pub mean_translation: Option<f64>,
    pub median_rotation_deg: Option<f64>,
    pub frac_under_good: Option<f64>,
    pub wrong_pose_count: usize,
    /// Wrong poses whose focal length is also off by more than the split.
    pub wrong_with_focal_off: usize,
    /// Mean translation error of poses with focal error above / below the
    /// split.
    pub mean_translation_focal_off: Option<f64>,
    pub mean_translation_focal_ok: Option<f64>,
    pub total_seconds: f64,
    pub load_seconds: Option<f64>,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl BenchmarkReport {
    pub fn from_rows(per_query: Vec<QueryRow>, thresholds: ReportThresholds) -> Self {
        let errors: Vec<PoseError> = per_query.iter().filter_map(|r| r.error).collect();
        let trans: Vec<f64> = errors.iter().map(|e| e.translation).collect();
        let wrong: Vec<&PoseError> = errors
            .iter()
            .filter(|e| e.translation >= thresholds.wrong_translation)
            .collect();
        let (off, ok): (Vec<&PoseError>, Vec<&PoseError>) =
            errors.iter().partition(|e| e.focal_px_delta > thresholds.focal_split_px);
        BenchmarkReport {
            registered: errors.len(),
            median_translation: median(trans.clone()),
            mean_translation: mean(&trans),
            median_rotation_deg: median(errors.iter().map(|e| e.rotation_deg).collect()),
            frac_under_good: (!trans.is_empty()).then(|| {
                trans.iter().filter(|&&t| t < thresholds.good_translation).count() as f64 / trans.len() as f64
            }),
            wrong_pose_count: wrong.len(),
            wrong_with_focal_off: wrong
                .iter()
                .filter(|e| e.focal_px_delta > thresholds.focal_split_px)
                .count(),
            mean_translation_focal_off: mean(&off.iter().map(|e| e.translation).collect::<Vec<_>>()),
            mean_translation_focal_ok: mean(&ok.iter().map(|e| e.translation).collect::<Vec<_>>()),
            total_seconds: per_query.iter().map(|r| r.seconds).sum(),
            load_seconds: None,
            per_query,
            thresholds,
        }
    }

    /// Writes `per_query.csv`, the three histogram tables and `summary.txt`.
    pub fn write_csv(&self, dir: &Path) -> Result<(), BenchmarkError> {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("per_query.csv"))?;
        w.write_record([
            "name",
            "registered",
            "rotation_deg",
            "rotation_frobenius",
            "translation",
            "focal_px_delta",
            "seconds",
            "used_backmatching",
            "fitted",
            "failure",
        ])?;
        for r in &self.per_query {
            let num = |f: fn(&PoseError) -> f64| r.error.map(|e| format!("{:.9}", f(&e))).unwrap_or_default();
            w.write_record([
                r.name.clone(),
                r.error.is_some().to_string(),
                num(|e| e.rotation_deg),
                num(|e| e.rotation_frobenius),
                num(|e| e.translation),
                num(|e| e.focal_px_delta),
                format!("{:.6}", r.seconds),
                r.used_backmatching.to_string(),
                r.fitted.to_string(),
                r.failure.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;

        let times: Vec<f64> = self.per_query.iter().map(|r| r.seconds).collect();
        let errors: Vec<PoseError> = self.per_query.iter().filter_map(|r| r.error).collect();
        let l2: Vec<f64> = errors.iter().map(|e| e.translation).collect();
        let focal: Vec<f64> = errors.iter().map(|e| e.focal_px_delta).collect();
        write_histogram(&dir.join("histogram_time.csv"), &uniform_edges(&times, 20), &times)?;
        write_histogram(&dir.join("histogram_l2.csv"), &L2_EDGES, &l2)?;
        write_histogram(&dir.join("histogram_focal.csv"), &FOCAL_EDGES, &focal)?;

        let mut s = std::fs::File::create(dir.join("summary.txt"))?;
        s.write_all(self.summary().as_bytes())?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into());
        let t = &self.thresholds;
        let mut out = String::new();
        out += &format!("queries: {}\n", self.per_query.len());
        out += &format!("registered: {}\n", self.registered);
        out += &format!("median translation error: {}\n", opt(self.median_translation));
        out += &format!("mean translation error: {}\n", opt(self.mean_translation));
        out += &format!("median rotation error (deg): {}\n", opt(self.median_rotation_deg));
        out += &format!(
            "fraction under {}: {}\n",
            t.good_translation,
            opt(self.frac_under_good)
        );
        out += &format!(
            "wrong poses (>= {}): {}\n",
            t.wrong_translation, self.wrong_pose_count
        );
        out += &format!(
            "wrong poses with focal off > {} px: {}\n",
            t.focal_split_px, self.wrong_with_focal_off
        );
        out += &format!(
            "mean translation error, focal off > {} px: {}\n",
            t.focal_split_px,
            opt(self.mean_translation_focal_off)
        );
        out += &format!(
            "mean translation error, focal off <= {} px: {}\n",
            t.focal_split_px,
            opt(self.mean_translation_focal_ok)
        );
        out += &format!("total query time (s): {:.3}\n", self.total_seconds);
        if let Some(l) = self.load_seconds {
            out += &format!("load time (s): {l:.3}\n");
        }
        out
    }
}

const L2_EDGES: [f64; 10] = [0.0, 0.1, 0.25, 0.5, 1.0, 2.0, 5.0, 10.0, 30.0, 100.0];
const FOCAL_EDGES: [f64; 9] = [0.0, 1.0, 5.0, 10.0, 50.0, 100.0, 250.0, 500.0, 1000.0];

fn uniform_edges(values: &[f64], bins: usize) -> Vec<f64> {
    let hi = values.iter().copied().fold(0.0, f64::max);
    let hi = if hi > 0.0 { hi } else { 1.0 };
    (0..=bins).map(|i| hi * i as f64 / bins as f64).collect()
}

/// Counts per `[edge_i, edge_i+1)` bin; the last bin is open-ended.
pub fn histogram(edges: &[f64], values: &[f64]) -> Vec<usize> {
    let mut counts = vec![0; edges.len()];
    for &v in values {
        let i = edges.partition_point(|&e| e <= v).saturating_sub(1);
        counts[i] += 1;
    }
    counts
}

fn write_histogram(path: &Path, edges: &[f64], values: &[f64]) -> Result<(), BenchmarkError> {
    let counts = histogram(edges, values);
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["bin_start", "bin_end", "count"])?;
    for (i, c) in counts.iter().enumerate() {
        let end = edges.get(i + 1).map(|e| e.to_string()).unwrap_or_else(|| "inf".into());
        w.write_record([edges[i].to_string(), end, c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Localizes every query in parallel and compares with the golden poses.
/// Timing covers matching and estimation of each query.
pub fn run_benchmark(
    localizer: &Localizer,
    queries: &[QueryImage],
    golden: &BTreeMap<String, Pose>,
    params: &LocalizerParams,
) -> Result<BenchmarkReport, BenchmarkError> {
    for q in queries {
        if !golden.contains_key(&q.name) {
            return Err(BenchmarkError::MissingGolden(q.name.clone()));
        }
    }
    let rows: Vec<QueryRow> = queries
        .par_iter()
        .map(|q| {
            let start = Instant::now();
            let result = localizer.localize(q, params);
            let secs = start.elapsed().as_secs_f64();
            QueryRow::new(&q.name, &result, &golden[&q.name], secs)
        })
        .collect();
    Ok(BenchmarkReport::from_rows(rows, ReportThresholds::default()))
}
