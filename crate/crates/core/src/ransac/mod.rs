//! Robust pose estimation for one query image.
//!
//! Both pipelines share the same iteration machinery: every iteration draws
//! its sample from its own ChaCha stream (seed, iteration index), so
//! iterations can be evaluated in parallel batches and reduced in order with
//! results identical to a sequential run.

mod advanced;
mod basic;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{bearing, solve_p3p, solve_p4pf, Pose};
use crate::index::{find_good_matches, DescriptorIndex, GoodMatch, IndexError, IndexParams};
use crate::quality::{coverage_of_pixels, half_window, match_centered, CoverageStats, InlierMetric};
use crate::sfm::{QueryImage, SfmModel};
use crate::Vec3;

pub use advanced::{
    accept_probability, backmatch, draw_cooccurrence_points, estimate_pose_advanced, intersection_size,
    AdvancedParams, BackmatchParams, CooccurrenceState,
};
pub use basic::{estimate_pose_basic, BasicParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RansacError {
    #[error("need {needed} matches with distinct points, have {available}")]
    InsufficientMatches { needed: usize, available: usize },
    #[error("no candidate pose reached the minimum number of fitted matches")]
    NoSolution,
    #[error("co-occurrence sampling gave up after {0} restarts")]
    SamplingExhausted(usize),
    #[error("solver requires a known focal length")]
    MissingFocal,
}

/// Which minimal solver(s) produce candidate poses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolverChoice {
    /// P3P when the focal length is known, P4Pf otherwise.
    #[default]
    Auto,
    P3p,
    P4pf,
    /// P3P on the first three and P4Pf on all four points of each sample.
    Both,
}

impl SolverChoice {
    /// Sample size for this choice given whether the focal is known.
    pub fn sample_size(self, focal: Option<f64>) -> Result<usize, RansacError> {
        match (self, focal) {
            (SolverChoice::Auto, Some(_)) | (SolverChoice::P3p, Some(_)) => Ok(3),
            (SolverChoice::P3p, None) => Err(RansacError::MissingFocal),
            _ => Ok(4),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseEstimate {
    pub pose: Pose,
    pub fitted: Vec<GoodMatch>,
    pub quality: CoverageStats,
    pub iterations_used: usize,
    pub used_backmatching: bool,
}

/// Draws `n` matches uniformly without replacement, with pairwise distinct
/// model points.
pub fn sample_unique<R: Rng>(matches: &[GoodMatch], n: usize, rng: &mut R) -> Result<Vec<GoodMatch>, RansacError> {
    let idx = sample_unique_indices(matches, n, rng)?;
    Ok(idx.into_iter().map(|i| matches[i].clone()).collect())
}

pub(crate) fn distinct_points(matches: &[GoodMatch]) -> usize {
    let mut p: Vec<usize> = matches.iter().map(|m| m.point_idx).collect();
    p.sort_unstable();
    p.dedup();
    p.len()
}

pub(crate) fn sample_unique_indices<R: Rng>(
    matches: &[GoodMatch],
    n: usize,
    rng: &mut R,
) -> Result<Vec<usize>, RansacError> {
    let available = distinct_points(matches);
    if available < n {
        return Err(RansacError::InsufficientMatches { needed: n, available });
    }
    let mut out: Vec<usize> = Vec::with_capacity(n);
    while out.len() < n {
        let i = rng.random_range(0..matches.len());
        if out.iter().any(|&j| j == i || matches[j].point_idx == matches[i].point_idx) {
            continue;
        }
        out.push(i);
    }
    Ok(out)
}

/// Random stream for one iteration.
pub(crate) fn iteration_rng(seed: u64, iteration: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64);
    rng
}

pub(crate) fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(rand::random)
}

/// A scored candidate; `fitted` indexes into the match list it was scored
/// against.
#[derive(Debug, Clone)]
pub(crate) struct Candidate {
    pub pose: Pose,
    pub fitted: Vec<usize>,
    pub stats: CoverageStats,
}

/// Precomputed per-query data for scoring candidate poses.
pub(crate) struct Evaluator<'a> {
    pub matches: &'a [GoodMatch],
    query: &'a QueryImage,
    centered: Vec<[f64; 2]>,
    positions: Vec<Vec3>,
    metric: InlierMetric,
    min_fitted: usize,
    area_good: u64,
    c: u32,
    solver: SolverChoice,
    pub sample_size: usize,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        query: &'a QueryImage,
        matches: &'a [GoodMatch],
        model: &SfmModel,
        metric: InlierMetric,
        min_fitted: usize,
        solver: SolverChoice,
    ) -> Result<Self, RansacError> {
        let sample_size = solver.sample_size(query.exif_focal_px)?;
        let available = distinct_points(matches);
        if available < sample_size {
            return Err(RansacError::InsufficientMatches {
                needed: sample_size,
                available,
            });
        }
        let c = half_window(query.width);
        let pixels: Vec<[f64; 2]> = matches
            .iter()
            .map(|m| {
                let f = &query.features[m.feature_idx];
                [f.x, f.y]
            })
            .collect();
        Ok(Evaluator {
            matches,
            query,
            centered: matches.iter().map(|m| match_centered(m, query)).collect(),
            positions: matches.iter().map(|m| model.points[m.point_idx].position).collect(),
            metric,
            min_fitted,
            area_good: coverage_of_pixels(&pixels, query.width, query.height, c),
            c,
            solver,
            sample_size,
        })
    }

    fn candidates(&self, sample: &[usize]) -> Vec<Pose> {
        let focal = self.query.exif_focal_px;
        let mut out = Vec::new();
        let run_p3p = |out: &mut Vec<Pose>, f: f64| {
            let b = [0, 1, 2].map(|k| bearing(self.centered[sample[k]], f));
            let w = [0, 1, 2].map(|k| self.positions[sample[k]]);
            if let Ok(poses) = solve_p3p(&b, &w, f) {
                out.extend(poses);
            }
        };
        let run_p4pf = |out: &mut Vec<Pose>| {
            let img = [0, 1, 2, 3].map(|k| self.centered[sample[k]]);
            let w = [0, 1, 2, 3].map(|k| self.positions[sample[k]]);
            if let Ok(poses) = solve_p4pf(&img, &w) {
                out.extend(poses);
            }
        };
        match (self.solver, focal) {
            (SolverChoice::Auto | SolverChoice::P3p, Some(f)) => run_p3p(&mut out, f),
            (SolverChoice::Both, Some(f)) => {
                run_p3p(&mut out, f);
                run_p4pf(&mut out);
            }
            _ => run_p4pf(&mut out),
        }
        // physically valid only: every sampled point in front of the camera
        out.retain(|p| p.focal_px > 0.0 && sample.iter().all(|&i| p.to_camera(&self.positions[i]).z > 0.0));
        out
    }

    /// Scores a pose; `None` when it fits fewer than the minimum.
    pub fn score(&self, pose: &Pose) -> Option<Candidate> {
        let fitted: Vec<usize> = (0..self.matches.len())
            .filter(|&i| self.metric.is_inlier(pose, &self.positions[i], self.centered[i]))
            .collect();
        if fitted.len() < self.min_fitted {
            return None;
        }
        let pixels: Vec<[f64; 2]> = fitted
            .iter()
            .map(|&i| {
                let f = &self.query.features[self.matches[i].feature_idx];
                [f.x, f.y]
            })
            .collect();
        let area_fitted = coverage_of_pixels(&pixels, self.query.width, self.query.height, self.c);
        Some(Candidate {
            pose: *pose,
            fitted,
            stats: CoverageStats::from_areas(self.area_good, area_fitted),
        })
    }

    /// Best eligible candidate for one sample (strictly greater q wins).
    pub fn evaluate_sample(&self, sample: &[usize]) -> Option<Candidate> {
        let mut best: Option<Candidate> = None;
        for pose in self.candidates(sample) {
            if let Some(c) = self.score(&pose) {
                if best.as_ref().is_none_or(|b| c.stats.q > b.stats.q) {
                    best = Some(c);
                }
            }
        }
        best
    }

    pub fn estimate(&self, c: Candidate, iterations_used: usize, used_backmatching: bool) -> PoseEstimate {
        PoseEstimate {
            pose: c.pose,
            fitted: c.fitted.iter().map(|&i| self.matches[i].clone()).collect(),
            quality: c.stats,
            iterations_used,
            used_backmatching,
        }
    }
}

/// Outcome of one iteration: its best candidate, or why it produced none.
pub(crate) enum Step {
    Candidate(Candidate),
    Nothing,
    Exhausted(usize),
}

/// Iterations evaluated together before the in-order reduction.
const BATCH: usize = 64;

/// Runs iterations `range` with `step`, folding candidates into `best` in
/// iteration order. `stop` is checked after every iteration that changed the
/// best candidate. Returns the number of iterations consumed and whether any
/// iteration hit sampling exhaustion.
pub(crate) fn run_iterations<F, S>(
    range: std::ops::Range<usize>,
    best: &mut Option<Candidate>,
    step: F,
    stop: S,
) -> (usize, Option<usize>)
where
    F: Fn(usize) -> Step + Sync,
    S: Fn(&Candidate) -> bool,
{
    let mut exhausted = None;
    let mut start = range.start;
    while start < range.end {
        let end = (start + BATCH).min(range.end);
        let results: Vec<Step> = (start..end).into_par_iter().map(&step).collect();
        for (offset, r) in results.into_iter().enumerate() {
            match r {
                Step::Candidate(c) => {
                    if best.as_ref().is_none_or(|b| c.stats.q > b.stats.q) {
                        *best = Some(c);
                        if stop(best.as_ref().unwrap()) {
                            return (start + offset + 1 - range.start, exhausted);
                        }
                    }
                }
                Step::Exhausted(n) => exhausted = Some(n),
                Step::Nothing => {}
            }
        }
        start = end;
    }
    (range.end - range.start, exhausted)
}

/// Camera-to-points adjacency of a model.
#[derive(Debug, Clone, Default)]
pub struct VisibilityGraph {
    pub camera_points: Vec<Vec<u32>>,
}

impl VisibilityGraph {
    pub fn new(model: &SfmModel) -> Self {
        let mut camera_points = vec![Vec::new(); model.cameras.len()];
        for (pi, p) in model.points.iter().enumerate() {
            for &c in &p.visibility {
                if let Some(list) = camera_points.get_mut(c as usize) {
                    list.push(pi as u32);
                }
            }
        }
        VisibilityGraph { camera_points }
    }
}

/// Pipeline selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Basic,
    Advanced,
}

/// Ratio used by the basic pipeline's match filter.
pub const BASIC_RATIO: f64 = 0.7;
/// Looser ratio used by the advanced pipeline's match filter.
pub const ADVANCED_RATIO: f64 = 0.9;

/// A model ready for localization: descriptor index and visibility graph.
pub struct Localizer {
    pub model: SfmModel,
    pub index: DescriptorIndex,
    pub graph: VisibilityGraph,
}

#[derive(Debug, Clone)]
pub struct LocalizerParams {
    pub mode: Mode,
    /// Ratio-test threshold for the basic pipeline's matches.
    pub basic_ratio: f64,
    /// Ratio-test threshold for the advanced pipeline's matches.
    pub advanced_ratio: f64,
    pub basic: BasicParams,
    pub advanced: AdvancedParams,
    pub backmatch: BackmatchParams,
}

impl Default for LocalizerParams {
    fn default() -> Self {
        LocalizerParams {
            mode: Mode::Basic,
            basic_ratio: BASIC_RATIO,
            advanced_ratio: ADVANCED_RATIO,
            basic: BasicParams::default(),
            advanced: AdvancedParams::default(),
            backmatch: BackmatchParams::default(),
        }
    }
}

impl Localizer {
    pub fn new(model: SfmModel, index_params: IndexParams) -> Result<Self, IndexError> {
        let index = DescriptorIndex::from_model(&model, index_params)?;
        Ok(Self::with_index(model, index))
    }

    pub fn with_index(model: SfmModel, index: DescriptorIndex) -> Self {
        let graph = VisibilityGraph::new(&model);
        Localizer { model, index, graph }
    }

    pub fn good_matches(&self, query: &QueryImage, ratio: f64) -> Vec<GoodMatch> {
        find_good_matches(&self.index, &self.model, query, ratio)
    }

    /// Matches the query against the model and runs the selected pipeline.
    pub fn localize(&self, query: &QueryImage, params: &LocalizerParams) -> Result<PoseEstimate, RansacError> {
        match params.mode {
            Mode::Basic => {
                let matches = self.good_matches(query, params.basic_ratio);
                estimate_pose_basic(query, &matches, &self.model, &params.basic)
            }
            Mode::Advanced => {
                let matches = self.good_matches(query, params.advanced_ratio);
                estimate_pose_advanced(
                    query,
                    &matches,
                    &self.model,
                    &self.graph,
                    &params.advanced,
                    &params.backmatch,
                )
            }
        }
    }
}
