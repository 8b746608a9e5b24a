//! Approximate nearest-neighbour search over 128-d descriptors with a forest
//! of randomized kd-trees and best-bin-first traversal, plus Lowe ratio-test
//! filtering into good matches.

use std::cmp::Reverse;
use std::cell::RefCell;
use std::collections::BinaryHeap;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::sfm::{squared_distance, Descriptor, QueryImage, SfmModel, DESCRIPTOR_LEN};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot build an index over zero descriptors")]
    EmptyInput,
    #[error("model point {0} has no mean descriptor")]
    MissingDescriptor(usize),
    #[error("index cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mean descriptors of all model points, in point order.
pub fn model_descriptors(model: &SfmModel) -> Result<Vec<Descriptor>, IndexError> {
    model
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| p.mean_descriptor.ok_or(IndexError::MissingDescriptor(i)))
        .collect()
}

/// Search budget. `checks` bounds the number of descriptors compared per
/// query; indexes with at most `checks` entries are scanned exhaustively.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexParams {
    pub trees: usize,
    pub checks: usize,
    pub leaf_size: usize,
    pub seed: u64,
}

impl Default for IndexParams {
    fn default() -> Self {
        IndexParams {
            trees: 8,
            checks: 8000,
            leaf_size: 8,
            seed: 0x5eed,
        }
    }
}

/// A 2D-feature to 3D-point correspondence that passed the ratio test.
#[derive(Debug, Clone, PartialEq)]
pub struct GoodMatch {
    pub feature_idx: usize,
    pub point_idx: usize,
    pub d1: f64,
    pub d2: f64,
    /// Cameras observing the matched point (sorted).
    pub visibility: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Node {
    Split {
        dim: u8,
        value: f32,
        left: u32,
        right: u32,
    },
    Leaf {
        start: u32,
        end: u32,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
    perm: Vec<u32>,
}

/// Immutable descriptor index; safe to query from many threads.
#[derive(Debug, Clone)]
pub struct DescriptorIndex {
    data: Vec<u8>,
    trees: Vec<Tree>,
    params: IndexParams,
}

const SAMPLE_FOR_VARIANCE: usize = 100;
const TOP_VARIANCE_DIMS: usize = 5;

impl DescriptorIndex {
    pub fn build(descriptors: &[Descriptor], params: IndexParams) -> Result<Self, IndexError> {
        if descriptors.is_empty() {
            return Err(IndexError::EmptyInput);
        }
        let mut data = Vec::with_capacity(descriptors.len() * DESCRIPTOR_LEN);
        for d in descriptors {
            data.extend_from_slice(&d.0);
        }
        let mut index = DescriptorIndex {
            data,
            trees: Vec::new(),
            params,
        };
        if descriptors.len() > params.checks {
            index.trees = (0..params.trees.max(1))
                .into_par_iter()
                .map(|t| index.build_tree(params.seed.wrapping_add(t as u64)))
                .collect();
        }
        Ok(index)
    }

    /// Indexes the mean descriptors of a model; entry `i` is point `i`.
    pub fn from_model(model: &SfmModel, params: IndexParams) -> Result<Self, IndexError> {
        Self::build(&model_descriptors(model)?, params)
    }

    pub fn len(&self) -> usize {
        self.data.len() / DESCRIPTOR_LEN
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn params(&self) -> IndexParams {
        self.params
    }

    fn row(&self, i: usize) -> &[u8] {
        &self.data[i * DESCRIPTOR_LEN..(i + 1) * DESCRIPTOR_LEN]
    }

    fn build_tree(&self, seed: u64) -> Tree {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut perm: Vec<u32> = (0..self.len() as u32).collect();
        perm.shuffle(&mut rng);
        let mut nodes = vec![Node::Leaf { start: 0, end: 0 }];
        let mut stack = vec![(0usize, 0usize, perm.len())];
        while let Some((node, start, end)) = stack.pop() {
            match self.choose_split(&perm[start..end], &mut rng) {
                Some((dim, value)) if end - start > self.params.leaf_size => {
                    let slice = &mut perm[start..end];
                    let mut mid = 0;
                    for i in 0..slice.len() {
                        if (self.row(slice[i] as usize)[dim] as f32) < value {
                            slice.swap(i, mid);
                            mid += 1;
                        }
                    }
                    if mid == 0 || mid == slice.len() {
                        nodes[node] = Node::Leaf {
                            start: start as u32,
                            end: end as u32,
                        };
                        continue;
                    }
                    let left = nodes.len();
                    nodes.push(Node::Leaf { start: 0, end: 0 });
                    nodes.push(Node::Leaf { start: 0, end: 0 });
                    nodes[node] = Node::Split {
                        dim: dim as u8,
                        value,
                        left: left as u32,
                        right: left as u32 + 1,
                    };
                    stack.push((left, start, start + mid));
                    stack.push((left + 1, start + mid, end));
                }
                _ => {
                    nodes[node] = Node::Leaf {
                        start: start as u32,
                        end: end as u32,
                    }
                }
            }
        }
        Tree { nodes, perm }
    }

    /// Random choice among the highest-variance dimensions of a sample;
    /// split value is the sample mean.
    fn choose_split(&self, ids: &[u32], rng: &mut ChaCha8Rng) -> Option<(usize, f32)> {
        if ids.len() <= self.params.leaf_size {
            return None;
        }
        let sample = &ids[..ids.len().min(SAMPLE_FOR_VARIANCE)];
        let mut sum = [0f64; DESCRIPTOR_LEN];
        let mut sum2 = [0f64; DESCRIPTOR_LEN];
        for &i in sample {
            for (d, &v) in self.row(i as usize).iter().enumerate() {
                sum[d] += v as f64;
                sum2[d] += (v as f64) * (v as f64);
            }
        }
        let n = sample.len() as f64;
        let mut var: Vec<(f64, usize)> = (0..DESCRIPTOR_LEN)
            .map(|d| (sum2[d] / n - (sum[d] / n).powi(2), d))
            .collect();
        var.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        if var[0].0 <= 0.0 {
            return None;
        }
        let top = var.iter().take_while(|v| v.0 > 0.0).count().min(TOP_VARIANCE_DIMS);
        let dim = var[rng.random_range(0..top)].1;
        Some((dim, (sum[dim] / n) as f32))
    }

    /// The `k` nearest entries to `query`, ascending by Euclidean distance.
    pub fn knn(&self, query: &Descriptor, k: usize) -> Vec<(usize, f64)> {
        let k = k.max(1).min(self.len());
        let mut best = Best::new(k);
        if self.trees.is_empty() {
            for i in 0..self.len() {
                best.insert(squared_distance(&query.0, self.row(i)), i as u32);
            }
        } else {
            self.search_forest(query, &mut best);
        }
        best.items
            .into_iter()
            .map(|(d, i)| (i as usize, (d as f64).sqrt()))
            .collect()
    }

    fn search_forest(&self, query: &Descriptor, best: &mut Best) {
        let q = &query.0;
        SEEN.with(|cell| {
            let mut seen = cell.borrow_mut();
            seen.reset(self.len());
            self.search_forest_with(q, best, &mut seen);
        });
    }

    fn search_forest_with(&self, q: &[u8; DESCRIPTOR_LEN], best: &mut Best, seen: &mut SeenSet) {
        let mut heap: BinaryHeap<Reverse<(u32, u32, u32)>> = BinaryHeap::new();
        let mut checks = 0usize;
        for t in 0..self.trees.len() {
            heap.push(Reverse((0, t as u32, 0)));
        }
        while let Some(Reverse((bound, t, node))) = heap.pop() {
            if checks >= self.params.checks && best.is_full() {
                break;
            }
            if best.is_full() && bound >= best.worst() {
                continue;
            }
            let tree = &self.trees[t as usize];
            let mut node = node as usize;
            loop {
                match tree.nodes[node] {
                    Node::Split {
                        dim,
                        value,
                        left,
                        right,
                    } => {
                        let diff = q[dim as usize] as f32 - value;
                        let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                        let far_bound = bound.saturating_add((diff * diff) as u32);
                        heap.push(Reverse((far_bound, t, far)));
                        node = near as usize;
                    }
                    Node::Leaf { start, end } => {
                        for &i in &tree.perm[start as usize..end as usize] {
                            if seen.insert(i) {
                                checks += 1;
                                best.insert(squared_distance(q, self.row(i as usize)), i);
                            }
                        }
                        break;
                    }
                }
            }
        }
    }

    /// Writes the tree structure with a checksum of the indexed descriptors.
    pub fn save_cache<W: Write>(&self, mut w: W) -> Result<(), IndexError> {
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&CACHE_VERSION.to_le_bytes())?;
        w.write_all(&checksum(&self.data).to_le_bytes())?;
        for v in [
            self.len(),
            self.params.trees,
            self.params.checks,
            self.params.leaf_size,
        ] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        w.write_all(&self.params.seed.to_le_bytes())?;
        w.write_all(&(self.trees.len() as u64).to_le_bytes())?;
        for tree in &self.trees {
            w.write_all(&(tree.nodes.len() as u64).to_le_bytes())?;
            for n in &tree.nodes {
                match *n {
                    Node::Split {
                        dim,
                        value,
                        left,
                        right,
                    } => {
                        w.write_all(&[0, dim])?;
                        w.write_all(&value.to_le_bytes())?;
                        w.write_all(&left.to_le_bytes())?;
                        w.write_all(&right.to_le_bytes())?;
                    }
                    Node::Leaf { start, end } => {
                        w.write_all(&[1, 0])?;
                        w.write_all(&0f32.to_le_bytes())?;
                        w.write_all(&start.to_le_bytes())?;
                        w.write_all(&end.to_le_bytes())?;
                    }
                }
            }
            for &p in &tree.perm {
                w.write_all(&p.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Restores an index from a cache written for exactly these descriptors.
    /// Any mismatch (version, size, checksum) is an error so the caller can
    /// rebuild.
    pub fn load_cache<R: Read>(descriptors: &[Descriptor], mut r: R) -> Result<Self, IndexError> {
        let mut data = Vec::with_capacity(descriptors.len() * DESCRIPTOR_LEN);
        for d in descriptors {
            data.extend_from_slice(&d.0);
        }
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(IndexError::Cache("bad magic".into()));
        }
        if read_u32(&mut r)? != CACHE_VERSION {
            return Err(IndexError::Cache("unsupported version".into()));
        }
        if read_u64(&mut r)? != checksum(&data) {
            return Err(IndexError::Cache("model checksum changed".into()));
        }
        let n = read_u64(&mut r)? as usize;
        if n != descriptors.len() {
            return Err(IndexError::Cache("descriptor count changed".into()));
        }
        let params = IndexParams {
            trees: read_u64(&mut r)? as usize,
            checks: read_u64(&mut r)? as usize,
            leaf_size: read_u64(&mut r)? as usize,
            seed: read_u64(&mut r)?,
        };
        let n_trees = read_u64(&mut r)? as usize;
        let mut trees = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            let n_nodes = read_u64(&mut r)? as usize;
            let mut nodes = Vec::with_capacity(n_nodes);
            for _ in 0..n_nodes {
                let mut tag = [0u8; 2];
                r.read_exact(&mut tag)?;
                let mut fb = [0u8; 4];
                r.read_exact(&mut fb)?;
                let a = read_u32(&mut r)?;
                let b = read_u32(&mut r)?;
                nodes.push(match tag[0] {
                    0 => Node::Split {
                        dim: tag[1],
                        value: f32::from_le_bytes(fb),
                        left: a,
                        right: b,
                    },
                    1 => Node::Leaf { start: a, end: b },
                    _ => return Err(IndexError::Cache("corrupt node".into())),
                });
            }
            let mut perm = Vec::with_capacity(n);
            for _ in 0..n {
                perm.push(read_u32(&mut r)?);
            }
            trees.push(Tree { nodes, perm });
        }
        Ok(DescriptorIndex {
            data,
            trees,
            params,
        })
    }
}

const CACHE_MAGIC: &[u8; 8] = b"PLOCIDX\0";
const CACHE_VERSION: u32 = 1;

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// 64-bit FNV-1a.
fn checksum(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf29ce484222325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x100000001b3)
    })
}

/// Bounded ascending result list.
/// Visited-entry bitmap reused across queries on one thread; only the
/// touched words are cleared between queries.
#[derive(Default)]
struct SeenSet {
    bits: Vec<u64>,
    touched: Vec<u32>,
}

impl SeenSet {
    fn reset(&mut self, n: usize) {
        for &w in &self.touched {
            self.bits[w as usize] = 0;
        }
        self.touched.clear();
        let words = n.div_ceil(64);
        if self.bits.len() < words {
            self.bits.resize(words, 0);
        }
    }

    /// Marks `i`; true when it was not marked before.
    fn insert(&mut self, i: u32) -> bool {
        let (w, b) = ((i / 64) as usize, i % 64);
        let word = &mut self.bits[w];
        if *word & (1 << b) != 0 {
            return false;
        }
        if *word == 0 {
            self.touched.push(w as u32);
        }
        *word |= 1 << b;
        true
    }
}

thread_local! {
    static SEEN: RefCell<SeenSet> = RefCell::new(SeenSet::default());
}

struct Best {
    k: usize,
    items: Vec<(u32, u32)>,
}

impl Best {
    fn new(k: usize) -> Self {
        Best {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    fn is_full(&self) -> bool {
        self.items.len() >= self.k
    }

    fn worst(&self) -> u32 {
        self.items.last().map_or(u32::MAX, |x| x.0)
    }

    fn insert(&mut self, d: u32, i: u32) {
        if self.is_full() && d >= self.worst() {
            return;
        }
        let pos = self.items.partition_point(|&(bd, bi)| (bd, bi) < (d, i));
        self.items.insert(pos, (d, i));
        self.items.truncate(self.k);
    }
}

/// Lowe's test: accept when `d1 < ratio * d2`; a zero second distance is
/// never accepted.
pub fn ratio_test(d1: f64, d2: f64, ratio: f64) -> bool {
    d2 > 0.0 && d1 < ratio * d2
}

/// Matches every query feature against the model index (2-NN + ratio test).
/// Features whose index has fewer than two entries are rejected.
pub fn find_good_matches(
    index: &DescriptorIndex,
    model: &SfmModel,
    query: &QueryImage,
    ratio: f64,
) -> Vec<GoodMatch> {
    query
        .features
        .par_iter()
        .enumerate()
        .filter_map(|(fi, f)| {
            let nn = index.knn(&f.descriptor, 2);
            if nn.len() < 2 || !ratio_test(nn[0].1, nn[1].1, ratio) {
                return None;
            }
            let point_idx = nn[0].0;
            Some(GoodMatch {
                feature_idx: fi,
                point_idx,
                d1: nn[0].1,
                d2: nn[1].1,
                visibility: model.points[point_idx].visibility.clone(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sfm::{Feature, ModelPoint};
    use crate::Vec3;

    fn random_descriptors(n: usize, seed: u64) -> Vec<Descriptor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let mut d = [0u8; DESCRIPTOR_LEN];
                rng.fill(&mut d[..]);
                Descriptor(d)
            })
            .collect()
    }

    fn brute_force(data: &[Descriptor], q: &Descriptor, k: usize) -> Vec<usize> {
        let mut all: Vec<(u32, usize)> = data
            .iter()
            .enumerate()
            .map(|(i, d)| (squared_distance(&q.0, &d.0), i))
            .collect();
        all.sort();
        all.into_iter().take(k).map(|x| x.1).collect()
    }

    #[test]
    fn single_entry_exact() {
        let d = random_descriptors(1, 1);
        let idx = DescriptorIndex::build(&d, IndexParams::default()).unwrap();
        assert_eq!(idx.knn(&d[0], 1), vec![(0, 0.0)]);
    }

    #[test]
    fn empty_input() {
        assert!(matches!(
            DescriptorIndex::build(&[], IndexParams::default()),
            Err(IndexError::EmptyInput)
        ));
    }

    #[test]
    fn k_larger_than_index() {
        let d = random_descriptors(5, 2);
        let idx = DescriptorIndex::build(&d, IndexParams::default()).unwrap();
        let r = idx.knn(&d[3], 10);
        assert_eq!(r.len(), 5);
        assert_eq!(r[0], (3, 0.0));
        assert!(r.windows(2).all(|w| w[0].1 <= w[1].1));
    }

    #[test]
    fn two_entries_query_first() {
        let d = random_descriptors(2, 3);
        let idx = DescriptorIndex::build(&d, IndexParams::default()).unwrap();
        assert_eq!(idx.knn(&d[0], 2)[0].1, 0.0);
    }

    #[test]
    fn forest_top2_matches_brute_force() {
        let data = random_descriptors(100, 4);
        let idx = DescriptorIndex::build(&data, IndexParams::default()).unwrap();
        let queries = random_descriptors(1000, 5);
        let agree = queries
            .iter()
            .filter(|q| {
                let got: Vec<usize> = idx.knn(q, 2).iter().map(|x| x.0).collect();
                got == brute_force(&data, q, 2)
            })
            .count();
        assert!(agree >= 950, "top-2 agreement {agree}/1000");
    }

    #[test]
    fn forest_finds_exact_duplicates() {
        let data = random_descriptors(5000, 6);
        let idx = DescriptorIndex::build(
            &data,
            IndexParams {
                checks: 64,
                ..Default::default()
            },
        )
        .unwrap();
        for i in (0..5000).step_by(97) {
            assert_eq!(idx.knn(&data[i], 1)[0], (i, 0.0));
        }
    }

    #[test]
    fn ratio_rules() {
        assert!(ratio_test(0.4, 1.0, 0.7));
        assert!(!ratio_test(0.8, 1.0, 0.7));
        assert!(ratio_test(0.8, 1.0, 0.9));
        assert!(!ratio_test(0.5, 0.5, 0.99));
        assert!(!ratio_test(0.0, 0.0, 0.9));
    }

    proptest::proptest! {
        #[test]
        fn ratio_monotone(d1 in 0.0f64..10.0, extra in 0.0f64..10.0, r in 0.01f64..0.98, dr in 0.0f64..0.5) {
            let d2 = d1 + extra;
            let r2 = (r + dr).min(0.999);
            if ratio_test(d1, d2, r) {
                proptest::prop_assert!(ratio_test(d1, d2, r2));
            }
        }
    }

    fn model_with(descs: &[Descriptor]) -> SfmModel {
        SfmModel {
            cameras: vec![],
            points: descs
                .iter()
                .enumerate()
                .map(|(i, d)| {
                    let mut p = ModelPoint::new(
                        Vec3::zeros(),
                        [0; 3],
                        vec![crate::sfm::View {
                            camera: (i % 3) as u32,
                            key: 0,
                            x: 0.0,
                            y: 0.0,
                        }],
                    );
                    p.mean_descriptor = Some(*d);
                    p
                })
                .collect(),
        }
    }

    fn query_of(descs: &[Descriptor]) -> QueryImage {
        QueryImage {
            name: "q".into(),
            width: 100,
            height: 100,
            exif_focal_px: None,
            features: descs
                .iter()
                .map(|d| Feature {
                    x: 1.0,
                    y: 1.0,
                    scale: 1.0,
                    orientation: 0.0,
                    descriptor: *d,
                })
                .collect(),
        }
    }

    #[test]
    fn good_matches_on_exact_copies() {
        let descs = random_descriptors(200, 7);
        let model = model_with(&descs);
        let idx = DescriptorIndex::from_model(&model, IndexParams::default()).unwrap();
        let q = query_of(&descs[..10]);
        let m = find_good_matches(&idx, &model, &q, 0.7);
        assert_eq!(m.len(), 10);
        for g in &m {
            assert_eq!(g.point_idx, g.feature_idx);
            assert_eq!(g.visibility, model.points[g.point_idx].visibility);
            assert!(g.d1 <= g.d2);
        }
        assert!(find_good_matches(&idx, &model, &query_of(&[]), 0.7).is_empty());
    }

    #[test]
    fn duplicate_neighbours_rejected() {
        let mut descs = random_descriptors(20, 8);
        descs[1] = descs[0];
        let model = model_with(&descs);
        let idx = DescriptorIndex::from_model(&model, IndexParams::default()).unwrap();
        assert!(find_good_matches(&idx, &model, &query_of(&descs[..1]), 0.9).is_empty());
    }

    #[test]
    fn cache_round_trip_and_invalidation() {
        let data = random_descriptors(3000, 9);
        let params = IndexParams {
            checks: 64,
            ..Default::default()
        };
        let idx = DescriptorIndex::build(&data, params).unwrap();
        let mut buf = Vec::new();
        idx.save_cache(&mut buf).unwrap();
        let back = DescriptorIndex::load_cache(&data, buf.as_slice()).unwrap();
        assert_eq!(back.trees, idx.trees);
        assert_eq!(back.params, idx.params);

        let mut changed = data.clone();
        changed[10].0[0] ^= 1;
        assert!(matches!(
            DescriptorIndex::load_cache(&changed, buf.as_slice()),
            Err(IndexError::Cache(_))
        ));
    }
}
