use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};

use rand::Rng;

use super::{
    distinct_points, iteration_rng, resolve_seed, run_iterations, Candidate, Evaluator, PoseEstimate, RansacError,
    SolverChoice, Step, VisibilityGraph,
};
use crate::index::{ratio_test, DescriptorIndex, GoodMatch, IndexParams};
use crate::quality::InlierMetric;
use crate::sfm::{Descriptor, QueryImage, SfmModel};

#[derive(Debug, Clone, PartialEq)]
pub struct AdvancedParams {
    pub iterations_per_phase: usize,
    pub metric: InlierMetric,
    pub skip_fraction: f64,
    pub skip_count: usize,
    pub k_sigmoid: f64,
    pub dead_end_limit: usize,
    pub min_seed_cameras: usize,
    /// Restarts of the first point before a draw is abandoned.
    pub max_restarts: usize,
    pub min_fitted: usize,
    pub solver: SolverChoice,
    pub rng_seed: Option<u64>,
}

impl Default for AdvancedParams {
    fn default() -> Self {
        AdvancedParams {
            iterations_per_phase: 100,
            metric: InlierMetric::default(),
            skip_fraction: 0.1,
            skip_count: 12,
            k_sigmoid: 5.0,
            dead_end_limit: 30,
            min_seed_cameras: 5,
            max_restarts: 100,
            min_fitted: 6,
            solver: SolverChoice::Auto,
            rng_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackmatchParams {
    pub knn: usize,
    pub target_backmatches: usize,
    pub ratio: f64,
    pub priority_booster: i64,
    /// Queue pops allowed per requested backmatch.
    pub pops_per_target: usize,
    /// Consider every model point instead of only those co-visible with a
    /// good match.
    pub all_points: bool,
}

impl Default for BackmatchParams {
    fn default() -> Self {
        BackmatchParams {
            knn: 2,
            target_backmatches: 100,
            ratio: 0.7,
            priority_booster: 10,
            pops_per_target: 50,
            all_points: false,
        }
    }
}

/// Size of the intersection of two sorted camera lists.
pub fn intersection_size(running: &[u32], candidate: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < running.len() && j < candidate.len() {
        match running[i].cmp(&candidate[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

fn intersect(running: &[u32], candidate: &[u32]) -> Vec<u32> {
    running.iter().copied().filter(|c| candidate.binary_search(c).is_ok()).collect()
}

/// Probability of accepting a candidate point whose camera set meets the
/// running intersection in `inter` cameras.
pub fn accept_probability(inter: usize, prev_inter: usize, candidate_size: usize, k: f64) -> f64 {
    let denom = prev_inter.min(candidate_size);
    if inter == 0 || denom == 0 {
        return 0.0;
    }
    let x = inter as f64;
    let scaling = 1.0 / (1.0 + (-x / k).exp());
    (scaling * x / denom as f64).clamp(0.0, 1.0)
}

/// Progress of one co-occurrence draw.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CooccurrenceState {
    /// Indices into the match list, in draw order.
    pub chosen: Vec<usize>,
    pub running_intersection: Vec<u32>,
    pub zero_streak: usize,
}

impl CooccurrenceState {
    fn start(first: usize, matches: &[GoodMatch]) -> Self {
        CooccurrenceState {
            chosen: vec![first],
            running_intersection: matches[first].visibility.clone(),
            zero_streak: 0,
        }
    }
}

/// Candidate draws allowed within one restart, so that tiny but non-zero
/// acceptance probabilities cannot stall a draw.
const DRAWS_PER_RESTART: usize = 10_000;

/// Draws `n` matches whose camera sets keep a non-empty common
/// intersection, favouring candidates that share many cameras.
pub fn draw_cooccurrence_points<R: Rng>(
    matches: &[GoodMatch],
    n: usize,
    params: &AdvancedParams,
    rng: &mut R,
) -> Result<Vec<GoodMatch>, RansacError> {
    let idx = draw_cooccurrence_indices(matches, n, params, rng)?;
    Ok(idx.into_iter().map(|i| matches[i].clone()).collect())
}

pub(crate) fn draw_cooccurrence_indices<R: Rng>(
    matches: &[GoodMatch],
    n: usize,
    params: &AdvancedParams,
    rng: &mut R,
) -> Result<Vec<usize>, RansacError> {
    let available = distinct_points(matches);
    if available < n {
        return Err(RansacError::InsufficientMatches { needed: n, available });
    }
    let mut seeds: Vec<usize> = (0..matches.len())
        .filter(|&i| matches[i].visibility.len() >= params.min_seed_cameras)
        .collect();
    if seeds.is_empty() {
        let most = matches.iter().map(|m| m.visibility.len()).max().unwrap_or(0);
        seeds = (0..matches.len()).filter(|&i| matches[i].visibility.len() == most).collect();
    }

    for _ in 0..=params.max_restarts {
        let mut state = CooccurrenceState::start(seeds[rng.random_range(0..seeds.len())], matches);
        let mut draws = 0;
        while state.chosen.len() < n && draws < DRAWS_PER_RESTART {
            draws += 1;
            let cand = rng.random_range(0..matches.len());
            if state
                .chosen
                .iter()
                .any(|&j| j == cand || matches[j].point_idx == matches[cand].point_idx)
            {
                continue;
            }
            let vis = &matches[cand].visibility;
            let inter = intersection_size(&state.running_intersection, vis);
            if inter == 0 {
                state.zero_streak += 1;
                if state.zero_streak >= params.dead_end_limit {
                    break;
                }
                continue;
            }
            state.zero_streak = 0;
            let p = accept_probability(inter, state.running_intersection.len(), vis.len(), params.k_sigmoid);
            if rng.random::<f64>() < p {
                state.running_intersection = intersect(&state.running_intersection, vis);
                state.chosen.push(cand);
            }
        }
        if state.chosen.len() == n {
            return Ok(state.chosen);
        }
    }
    Err(RansacError::SamplingExhausted(params.max_restarts))
}

/// Prioritized 3D-to-2D matching seeded by the good matches: model points
/// co-visible with already matched points are searched among the query's
/// features, and every accepted backmatch promotes the points of the
/// cameras that observe it. Returns the input followed by new matches.
pub fn backmatch(
    query: &QueryImage,
    model: &SfmModel,
    graph: &VisibilityGraph,
    good: &[GoodMatch],
    params: &BackmatchParams,
) -> Vec<GoodMatch> {
    let mut out = good.to_vec();
    if good.is_empty() || model.points.is_empty() || query.features.len() < 2 {
        return out;
    }
    let descs: Vec<Descriptor> = query.features.iter().map(|f| f.descriptor).collect();
    let Ok(feature_index) = DescriptorIndex::build(&descs, IndexParams::default()) else {
        return out;
    };

    let pool: HashSet<u32> = if params.all_points {
        (0..model.points.len() as u32).collect()
    } else {
        let mut pool = HashSet::new();
        for m in good {
            pool.insert(m.point_idx as u32);
            for &c in &m.visibility {
                if let Some(pts) = graph.camera_points.get(c as usize) {
                    pool.extend(pts.iter().copied());
                }
            }
        }
        pool
    };

    let mut priority: HashMap<u32, i64> = pool.iter().map(|&p| (p, 0)).collect();
    let boosted = priority.values().copied().max().unwrap_or(0) + params.priority_booster;
    for m in good {
        priority.insert(m.point_idx as u32, boosted);
    }
    // max-heap on priority, ties to the lower point index
    let mut heap: BinaryHeap<(i64, Reverse<u32>)> = priority.iter().map(|(&p, &pr)| (pr, Reverse(p))).collect();

    let mut matched_features: HashSet<usize> = good.iter().map(|m| m.feature_idx).collect();
    let mut done: HashSet<u32> = HashSet::new();
    let max_pops = params.pops_per_target.saturating_mul(params.target_backmatches);
    let (mut pops, mut added) = (0usize, 0usize);

    while added < params.target_backmatches && pops < max_pops {
        let Some((pr, Reverse(p))) = heap.pop() else { break };
        if done.contains(&p) || priority.get(&p) != Some(&pr) {
            continue;
        }
        done.insert(p);
        pops += 1;
        let point = &model.points[p as usize];
        let Some(desc) = point.mean_descriptor else { continue };
        let nn = feature_index.knn(&desc, params.knn.max(2));
        if nn.len() < 2 || !ratio_test(nn[0].1, nn[1].1, params.ratio) {
            continue;
        }
        let feature = nn[0].0;
        if matched_features.insert(feature) {
            out.push(GoodMatch {
                feature_idx: feature,
                point_idx: p as usize,
                d1: nn[0].1,
                d2: nn[1].1,
                visibility: point.visibility.clone(),
            });
            added += 1;
        }
        let mut raised: HashSet<u32> = HashSet::new();
        for &c in &point.visibility {
            let Some(pts) = graph.camera_points.get(c as usize) else { continue };
            for &q in pts {
                if done.contains(&q) || !raised.insert(q) {
                    continue;
                }
                if let Some(v) = priority.get_mut(&q) {
                    *v += 1;
                    heap.push((*v, Reverse(q)));
                }
            }
        }
    }
    log::debug!("{}: backmatching added {added} matches in {pops} pops", query.name);
    out
}

/// Two fixed-length phases of co-occurrence RANSAC with backmatching in
/// between, skipped when the first phase already fits enough matches.
pub fn estimate_pose_advanced(
    query: &QueryImage,
    matches: &[GoodMatch],
    model: &SfmModel,
    graph: &VisibilityGraph,
    adv: &AdvancedParams,
    back: &BackmatchParams,
) -> Result<PoseEstimate, RansacError> {
    let seed = resolve_seed(adv.rng_seed);
    let iters = adv.iterations_per_phase.max(1);
    let phase = |eval: &Evaluator, offset: usize, best: &mut Option<Candidate>| {
        let n = eval.sample_size;
        let (_, exhausted) = run_iterations(
            offset..offset + iters,
            best,
            |i| {
                let mut rng = iteration_rng(seed, i);
                match draw_cooccurrence_indices(eval.matches, n, adv, &mut rng) {
                    Ok(sample) => eval.evaluate_sample(&sample).map_or(Step::Nothing, Step::Candidate),
                    Err(RansacError::SamplingExhausted(r)) => Step::Exhausted(r),
                    Err(_) => Step::Nothing,
                }
            },
            |_| false,
        );
        exhausted
    };
    let finish = |eval: &Evaluator, best: Option<Candidate>, exhausted: Option<usize>, used: usize, bm: bool| {
        match (best, exhausted) {
            (Some(c), _) => Ok(eval.estimate(c, used, bm)),
            (None, Some(r)) => Err(RansacError::SamplingExhausted(r)),
            (None, None) => Err(RansacError::NoSolution),
        }
    };

    let eval1 = Evaluator::new(query, matches, model, adv.metric, adv.min_fitted, adv.solver)?;
    let mut best1 = None;
    let exhausted1 = phase(&eval1, 0, &mut best1);
    let skip = best1.as_ref().is_some_and(|b| {
        b.fitted.len() >= adv.skip_count || b.fitted.len() as f64 >= adv.skip_fraction * matches.len() as f64
    });
    if skip {
        log::debug!("{}: phase one sufficient, backmatching skipped", query.name);
        return finish(&eval1, best1, exhausted1, iters, false);
    }

    let augmented = backmatch(query, model, graph, matches, back);
    let eval2 = Evaluator::new(query, &augmented, model, adv.metric, adv.min_fitted, adv.solver)?;
    // carry the phase-one winner over, rescored against the augmented set
    let mut best2 = best1.and_then(|b| eval2.score(&b.pose));
    let exhausted2 = phase(&eval2, iters, &mut best2);
    finish(&eval2, best2, exhausted2.or(exhausted1), 2 * iters, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn with_vis(vis: &[&[u32]]) -> Vec<GoodMatch> {
        vis.iter()
            .enumerate()
            .map(|(i, v)| GoodMatch {
                feature_idx: i,
                point_idx: i,
                d1: 0.0,
                d2: 1.0,
                visibility: v.to_vec(),
            })
            .collect()
    }

    #[test]
    fn intersection_examples() {
        assert_eq!(intersection_size(&[1, 2, 3], &[2, 3, 4]), 2);
        assert_eq!(intersection_size(&[1, 2], &[3, 4]), 0);
        assert_eq!(intersection_size(&[1, 2, 3, 4], &[2, 4]), 2);
    }

    #[test]
    fn accept_probability_examples() {
        let e = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((accept_probability(5, 5, 5, 5.0) - e).abs() < 1e-15);
        assert_eq!(accept_probability(0, 5, 5, 5.0), 0.0);
        let v = accept_probability(50, 50, 60, 5.0);
        assert!((v - 1.0 / (1.0 + (-10.0f64).exp())).abs() < 1e-15);
        assert!((v - 0.99995).abs() < 1e-5);
    }

    #[test]
    fn cooccurrence_stays_in_cluster() {
        let a: &[u32] = &[0, 1, 2, 3, 4, 5];
        let b: &[u32] = &[10, 11, 12, 13, 14, 15];
        let m = with_vis(&[a, a, a, a, a, b, b, b, b, b]);
        let params = AdvancedParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let s = draw_cooccurrence_points(&m, 4, &params, &mut rng).unwrap();
            let first = s[0].visibility.clone();
            assert!(s.iter().all(|g| g.visibility == first));
            let mut pts: Vec<usize> = s.iter().map(|g| g.point_idx).collect();
            pts.sort();
            pts.dedup();
            assert_eq!(pts.len(), 4);
        }
    }

    #[test]
    fn cooccurrence_insufficient_and_exhausted() {
        let a: &[u32] = &[0, 1, 2, 3, 4];
        let m = with_vis(&[a, a]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            draw_cooccurrence_points(&m, 3, &AdvancedParams::default(), &mut rng),
            Err(RansacError::InsufficientMatches { .. })
        ));
        // three pairwise disjoint camera sets can never co-occur
        let m = with_vis(&[&[0, 1, 2, 3, 4], &[5, 6, 7, 8, 9], &[10, 11, 12, 13, 14]]);
        let params = AdvancedParams {
            max_restarts: 5,
            ..Default::default()
        };
        assert_eq!(
            draw_cooccurrence_points(&m, 2, &params, &mut rng),
            Err(RansacError::SamplingExhausted(5))
        );
    }
}
