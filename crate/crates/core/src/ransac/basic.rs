use super::{
    iteration_rng, resolve_seed, run_iterations, sample_unique_indices, Evaluator, PoseEstimate, RansacError,
    SolverChoice, Step,
};
use crate::index::GoodMatch;
use crate::quality::InlierMetric;
use crate::sfm::{QueryImage, SfmModel};

#[derive(Debug, Clone, PartialEq)]
pub struct BasicParams {
    pub max_iterations: usize,
    pub metric: InlierMetric,
    pub stop_fraction: f64,
    pub stop_count: usize,
    /// Fitted matches a candidate needs before it can become the best.
    pub min_fitted: usize,
    pub solver: SolverChoice,
    pub rng_seed: Option<u64>,
}

impl Default for BasicParams {
    fn default() -> Self {
        BasicParams {
            max_iterations: 10_000,
            metric: InlierMetric::default(),
            stop_fraction: 0.1,
            stop_count: 12,
            min_fitted: 6,
            solver: SolverChoice::Auto,
            rng_seed: None,
        }
    }
}

/// Uniform-sampling RANSAC ranked by coverage quality, stopping as soon as
/// the best candidate fits `stop_count` matches or `stop_fraction` of them.
pub fn estimate_pose_basic(
    query: &QueryImage,
    matches: &[GoodMatch],
    model: &SfmModel,
    params: &BasicParams,
) -> Result<PoseEstimate, RansacError> {
    let eval = Evaluator::new(query, matches, model, params.metric, params.min_fitted, params.solver)?;
    let seed = resolve_seed(params.rng_seed);
    let n = eval.sample_size;
    let stop_fraction = params.stop_fraction * matches.len() as f64;

    let mut best = None;
    let (used, _) = run_iterations(
        0..params.max_iterations.max(1),
        &mut best,
        |i| {
            let mut rng = iteration_rng(seed, i);
            match sample_unique_indices(matches, n, &mut rng) {
                Ok(sample) => eval.evaluate_sample(&sample).map_or(Step::Nothing, Step::Candidate),
                Err(_) => Step::Nothing,
            }
        },
        |b| b.fitted.len() >= params.stop_count || b.fitted.len() as f64 >= stop_fraction,
    );
    log::debug!("{}: basic RANSAC used {used} iterations", query.name);
    best.map(|c| eval.estimate(c, used, false)).ok_or(RansacError::NoSolution)
}
