//! Baselines and downstream evaluation of orderings.
//!
//! Subsets come from one of three selection methods: uniform random,
//! farthest-point sampling, or the learned ordering (hard extraction).
//! Frozen task networks score the subsets: classification accuracy,
//! retrieval mean average precision over pooled-feature distances, and
//! Chamfer reconstruction error. At n = N every method feeds the whole
//! cloud, and because the task networks pool over points, all methods tie
//! exactly there.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::encode_value;
use crate::data::{LabeledDataset, PointCloud};
use crate::scorer::{score_exact, score_maxpool, score_soft, score_sum, ScorerConfig, ScorerMode};
use crate::sorter::{hard_ordering, Ordering, SinkhornConfig, SorterError};
use crate::tasks::{Autoencoder, Classifier};
use crate::tensor::Tensor2;
use crate::train::{Model, TrainError};

#[derive(Debug, Clone, PartialEq)]
pub enum EvalError {
    /// Requested subset size is 0 or exceeds the cloud.
    BadSubsetSize { n: usize, len: usize },
    /// FPS start index outside the cloud.
    BadStart { start: usize, len: usize },
    EmptyDataset,
    /// Every retrieval query was skipped (no same-class gallery items).
    NoQueries,
    Train(TrainError),
    Sorter(SorterError),
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::BadSubsetSize { n, len } => {
                write!(f, "subset size {n} invalid for a cloud of {len}")
            }
            EvalError::BadStart { start, len } => {
                write!(f, "start index {start} invalid for a cloud of {len}")
            }
            EvalError::EmptyDataset => write!(f, "empty dataset"),
            EvalError::NoQueries => write!(f, "no usable retrieval queries"),
            EvalError::Train(e) => write!(f, "{e}"),
            EvalError::Sorter(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for EvalError {}

impl From<TrainError> for EvalError {
    fn from(e: TrainError) -> Self {
        EvalError::Train(e)
    }
}
impl From<SorterError> for EvalError {
    fn from(e: SorterError) -> Self {
        EvalError::Sorter(e)
    }
}

/// Uniform subset of `n` point indices without replacement, deterministic
/// per seed.
pub fn random_select(cloud: &PointCloud, n: usize, seed: u64) -> Result<Vec<usize>, EvalError> {
    let len = cloud.len();
    if n == 0 || n > len {
        return Err(EvalError::BadSubsetSize { n, len });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, len, n).into_vec())
}

/// Greedy farthest-point sampling from `start`: repeatedly add the point
/// with the largest distance to the selected set, lowest index on ties.
pub fn fps_select(cloud: &PointCloud, n: usize, start: usize) -> Result<Vec<usize>, EvalError> {
    let len = cloud.len();
    if n == 0 || n > len {
        return Err(EvalError::BadSubsetSize { n, len });
    }
    if start >= len {
        return Err(EvalError::BadStart { start, len });
    }
    let pts = cloud.points();
    let sq_dist = |a: usize, b: usize| -> f64 {
        let (pa, pb) = (pts.row(a), pts.row(b));
        pa.iter().zip(pb).map(|(x, y)| (x - y) * (x - y)).sum()
    };

    let mut selected = Vec::with_capacity(n);
    selected.push(start);
    // min squared distance from each point to the selected set
    let mut min_d: Vec<f64> = (0..len).map(|i| sq_dist(i, start)).collect();
    while selected.len() < n {
        let mut best = 0;
        let mut best_d = f64::NEG_INFINITY;
        for (i, &d) in min_d.iter().enumerate() {
            if d > best_d {
                best_d = d;
                best = i;
            }
        }
        selected.push(best);
        for (i, slot) in min_d.iter_mut().enumerate() {
            let d = sq_dist(i, best);
            if d < *slot {
                *slot = d;
            }
        }
    }
    Ok(selected)
}

/// Score the cloud with the frozen model and extract the hard ordering.
pub fn learned_ordering(
    model: &Model,
    scorer: &ScorerConfig,
    sinkhorn: &SinkhornConfig,
    cloud: &PointCloud,
) -> Result<Ordering, EvalError> {
    let features = encode_value(&model.scorer_encoder, cloud.points()).map_err(TrainError::Engine)?;
    let scores = match scorer.mode {
        ScorerMode::Exact => score_exact(&features),
        ScorerMode::Soft => {
            let gmax = features.col_max().0;
            score_soft(&features, &gmax, scorer.tau).map_err(TrainError::Engine)?
        }
        ScorerMode::Maxpool => score_maxpool(&features),
        ScorerMode::Sum => score_sum(&features),
    };
    Ok(hard_ordering(&scores, sinkhorn)?)
}

/// How subsets are chosen for evaluation.
pub enum SelectionMethod<'a> {
    Random { seed: u64 },
    Fps { start: usize },
    Learned { model: &'a Model, scorer: ScorerConfig, sinkhorn: SinkhornConfig },
}

impl SelectionMethod<'_> {
    pub fn tag(&self) -> &'static str {
        match self {
            SelectionMethod::Random { .. } => "random",
            SelectionMethod::Fps { .. } => "fps",
            SelectionMethod::Learned { .. } => "learned",
        }
    }
}

/// Per-cloud selection state: nested methods compute one full order and
/// take prefixes; the random baseline draws per size.
pub enum PreparedSelection {
    Nested(Vec<usize>),
    PerSize { seed: u64 },
}

impl PreparedSelection {
    pub fn take(&self, cloud: &PointCloud, n: usize) -> Result<Vec<usize>, EvalError> {
        let len = cloud.len();
        if n == 0 || n > len {
            return Err(EvalError::BadSubsetSize { n, len });
        }
        match self {
            PreparedSelection::Nested(order) => Ok(order[..n].to_vec()),
            PreparedSelection::PerSize { seed } => {
                random_select(cloud, n, crate::mix_seed(*seed, n as u64))
            }
        }
    }
}

/// Resolve a method against one cloud. `cloud_index` decorrelates the
/// random baseline across clouds.
pub fn prepare_selection(
    method: &SelectionMethod<'_>,
    cloud: &PointCloud,
    cloud_index: usize,
) -> Result<PreparedSelection, EvalError> {
    match method {
        SelectionMethod::Random { seed } => Ok(PreparedSelection::PerSize {
            seed: crate::mix_seed(*seed, 0x1000 + cloud_index as u64),
        }),
        SelectionMethod::Fps { start } => {
            let order = fps_select(cloud, cloud.len(), (*start).min(cloud.len() - 1))?;
            Ok(PreparedSelection::Nested(order))
        }
        SelectionMethod::Learned { model, scorer, sinkhorn } => {
            let ord = learned_ordering(model, scorer, sinkhorn, cloud)?;
            Ok(PreparedSelection::Nested(ord.by_rank()))
        }
    }
}

fn gather_rows(pts: &Tensor2, indices: &[usize]) -> Tensor2 {
    Tensor2::from_fn(indices.len(), pts.cols(), |i, j| pts.get(indices[i], j))
}

/// What a [`MetricCurve`] measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    Accuracy,
    Map,
    Chamfer,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::Map => "map",
            MetricKind::Chamfer => "chamfer",
        }
    }
}

/// Metric values of one method over a grid of subset sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricCurve {
    pub method: String,
    pub kind: MetricKind,
    pub points: Vec<(usize, f64)>,
}

impl MetricCurve {
    pub fn value_at(&self, size: usize) -> Option<f64> {
        self.points.iter().find(|(s, _)| *s == size).map(|&(_, v)| v)
    }
}

/// Resolve a method against every cloud of a dataset. Pure per cloud, so
/// callers may parallelize this step and pass the results to the
/// `*_prepared` harnesses.
pub fn prepare_all(
    method: &SelectionMethod<'_>,
    data: &LabeledDataset,
) -> Result<Vec<PreparedSelection>, EvalError> {
    data.clouds
        .iter()
        .enumerate()
        .map(|(idx, cloud)| prepare_selection(method, cloud, idx))
        .collect()
}

/// Accuracy of the frozen classifier on top-n subsets, per size.
pub fn classify_eval(
    net: &Classifier,
    data: &LabeledDataset,
    method: &SelectionMethod<'_>,
    sizes: &[usize],
) -> Result<MetricCurve, EvalError> {
    let prepared = prepare_all(method, data)?;
    classify_eval_prepared(net, data, &prepared, method.tag(), sizes)
}

/// Same, over selections resolved in advance.
pub fn classify_eval_prepared(
    net: &Classifier,
    data: &LabeledDataset,
    prepared: &[PreparedSelection],
    tag: &str,
    sizes: &[usize],
) -> Result<MetricCurve, EvalError> {
    if data.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    assert_eq!(prepared.len(), data.len());
    let mut correct = vec![0usize; sizes.len()];
    for ((cloud, &label), prep) in data.clouds.iter().zip(&data.labels).zip(prepared) {
        for (si, &n) in sizes.iter().enumerate() {
            let subset = gather_rows(cloud.points(), &prep.take(cloud, n)?);
            if net.predict(&subset)? == label {
                correct[si] += 1;
            }
        }
    }
    let points = sizes
        .iter()
        .zip(&correct)
        .map(|(&n, &c)| (n, c as f64 / data.len() as f64))
        .collect();
    Ok(MetricCurve { method: String::from(tag), kind: MetricKind::Accuracy, points })
}

/// Average precision of one ranked relevance list; `None` when nothing is
/// relevant.
pub fn average_precision(ranked_relevance: &[bool]) -> Option<f64> {
    let total_relevant = ranked_relevance.iter().filter(|&&r| r).count();
    if total_relevant == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &rel) in ranked_relevance.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    Some(sum / total_relevant as f64)
}

/// Leave-one-out retrieval: each item queries the rest, ranked by Euclidean
/// distance between embeddings; relevance is class equality. Returns the
/// mean AP and how many queries were skipped for lack of same-class items.
pub fn map_from_embeddings(
    embeddings: &[Tensor2],
    labels: &[usize],
) -> Result<(f64, usize), EvalError> {
    assert_eq!(embeddings.len(), labels.len());
    let n = embeddings.len();
    if n < 2 {
        return Err(EvalError::EmptyDataset);
    }
    let dist = |a: &Tensor2, b: &Tensor2| -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
    };

    let mut ap_sum = 0.0;
    let mut queries = 0usize;
    let mut skipped = 0usize;
    for q in 0..n {
        let mut gallery: Vec<usize> = (0..n).filter(|&i| i != q).collect();
        gallery.sort_by(|&a, &b| {
            dist(&embeddings[q], &embeddings[a])
                .partial_cmp(&dist(&embeddings[q], &embeddings[b]))
                .expect("finite distances")
                .then(a.cmp(&b))
        });
        let relevance: Vec<bool> = gallery.iter().map(|&i| labels[i] == labels[q]).collect();
        match average_precision(&relevance) {
            Some(ap) => {
                ap_sum += ap;
                queries += 1;
            }
            None => skipped += 1,
        }
    }
    if queries == 0 {
        return Err(EvalError::NoQueries);
    }
    Ok((ap_sum / queries as f64, skipped))
}

/// Retrieval mAP of top-n subsets through the frozen embedder, per size.
pub fn retrieval_map_eval(
    net: &Classifier,
    data: &LabeledDataset,
    method: &SelectionMethod<'_>,
    sizes: &[usize],
) -> Result<(MetricCurve, usize), EvalError> {
    let prepared = prepare_all(method, data)?;
    retrieval_map_eval_prepared(net, data, &prepared, method.tag(), sizes)
}

/// Same, over selections resolved in advance.
pub fn retrieval_map_eval_prepared(
    net: &Classifier,
    data: &LabeledDataset,
    prepared: &[PreparedSelection],
    tag: &str,
    sizes: &[usize],
) -> Result<(MetricCurve, usize), EvalError> {
    if data.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    assert_eq!(prepared.len(), data.len());
    let mut points = Vec::with_capacity(sizes.len());
    let mut total_skipped = 0usize;
    for &n in sizes {
        let mut embeddings = Vec::with_capacity(data.len());
        for (cloud, prep) in data.clouds.iter().zip(prepared) {
            let subset = gather_rows(cloud.points(), &prep.take(cloud, n)?);
            embeddings.push(net.pooled_feature(&subset)?);
        }
        let (map, skipped) = map_from_embeddings(&embeddings, &data.labels)?;
        total_skipped += skipped;
        points.push((n, map));
    }
    Ok((
        MetricCurve { method: String::from(tag), kind: MetricKind::Map, points },
        total_skipped,
    ))
}

/// Symmetric squared Chamfer distance: mean over x of the min squared
/// distance to y, plus the same with the roles swapped.
pub fn chamfer(x: &Tensor2, y: &Tensor2) -> Result<f64, EvalError> {
    if x.rows() == 0 {
        return Err(EvalError::BadSubsetSize { n: 0, len: 0 });
    }
    if y.rows() == 0 {
        return Err(EvalError::BadSubsetSize { n: 0, len: 0 });
    }
    let one_way = |a: &Tensor2, b: &Tensor2| -> f64 {
        let mut total = 0.0;
        for i in 0..a.rows() {
            let pa = a.row(i);
            let mut best = f64::INFINITY;
            for j in 0..b.rows() {
                let d: f64 = pa
                    .iter()
                    .zip(b.row(j))
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                if d < best {
                    best = d;
                }
            }
            total += best;
        }
        total / a.rows() as f64
    };
    Ok(one_way(x, y) + one_way(y, x))
}

/// Mean Chamfer error of reconstructions decoded from top-n subsets,
/// against the full original clouds, per size.
pub fn reconstruct_eval(
    net: &Autoencoder,
    data: &LabeledDataset,
    method: &SelectionMethod<'_>,
    sizes: &[usize],
) -> Result<MetricCurve, EvalError> {
    let prepared = prepare_all(method, data)?;
    reconstruct_eval_prepared(net, data, &prepared, method.tag(), sizes)
}

/// Same, over selections resolved in advance.
pub fn reconstruct_eval_prepared(
    net: &Autoencoder,
    data: &LabeledDataset,
    prepared: &[PreparedSelection],
    tag: &str,
    sizes: &[usize],
) -> Result<MetricCurve, EvalError> {
    if data.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    assert_eq!(prepared.len(), data.len());
    let mut sums = vec![0.0f64; sizes.len()];
    for (cloud, prep) in data.clouds.iter().zip(prepared) {
        for (si, &n) in sizes.iter().enumerate() {
            let subset = gather_rows(cloud.points(), &prep.take(cloud, n)?);
            let rec = net.reconstruct(&subset)?;
            sums[si] += chamfer(&rec, cloud.points())?;
        }
    }
    let points = sizes
        .iter()
        .zip(&sums)
        .map(|(&n, &s)| (n, s / data.len() as f64))
        .collect();
    Ok(MetricCurve { method: String::from(tag), kind: MetricKind::Chamfer, points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, make_dataset, normalize_unit_sphere, ShapeClass};
    use crate::tasks::{train_classifier, ClassifierConfig};
    use rand::Rng;

    fn line_cloud(n: usize) -> PointCloud {
        PointCloud::new(Tensor2::from_fn(n, 3, |i, j| if j == 0 { i as f64 } else { 0.0 }))
            .unwrap()
    }

    #[test]
    fn random_select_full_size_is_a_permutation() {
        let cloud = line_cloud(9);
        let mut sel = random_select(&cloud, 9, 4).unwrap();
        sel.sort_unstable();
        assert_eq!(sel, (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn random_select_is_deterministic_per_seed() {
        let cloud = line_cloud(20);
        assert_eq!(random_select(&cloud, 1, 7).unwrap(), random_select(&cloud, 1, 7).unwrap());
        assert_eq!(random_select(&cloud, 5, 9).unwrap(), random_select(&cloud, 5, 9).unwrap());
    }

    #[test]
    fn random_select_rejects_bad_sizes() {
        let cloud = line_cloud(4);
        assert!(random_select(&cloud, 0, 1).is_err());
        assert!(random_select(&cloud, 5, 1).is_err());
    }

    #[test]
    fn random_select_frequencies_match_binomial() {
        let cloud = line_cloud(16);
        let n = 4;
        let draws = 10_000;
        let mut counts = vec![0usize; 16];
        for d in 0..draws {
            for i in random_select(&cloud, n, crate::mix_seed(99, d)).unwrap() {
                counts[i] += 1;
            }
        }
        let p = n as f64 / 16.0;
        let expected = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - expected).abs() <= 3.0 * sigma,
                "point {i}: {c} vs {expected} +- {sigma}"
            );
        }
    }

    #[test]
    fn fps_collinear_hand_case() {
        let cloud = line_cloud(4);
        assert_eq!(fps_select(&cloud, 3, 0).unwrap(), vec![0, 3, 1]);
    }

    #[test]
    fn fps_second_pick_is_globally_farthest() {
        let cloud = PointCloud::new(Tensor2::from_fn(10, 3, |i, j| {
            ((i * 3 + j) as f64 * 0.77).sin() * 2.0
        }))
        .unwrap();
        let sel = fps_select(&cloud, 2, 3).unwrap();
        let pts = cloud.points();
        let d = |a: usize, b: usize| -> f64 {
            pts.row(a)
                .iter()
                .zip(pts.row(b))
                .map(|(x, y)| (x - y) * (x - y))
                .sum()
        };
        let far = (0..10).max_by(|&a, &b| d(3, a).partial_cmp(&d(3, b)).unwrap()).unwrap();
        assert_eq!(sel, vec![3, far]);
    }

    /// Brute-force greedy oracle: recompute every min-distance from scratch
    /// at each step.
    fn fps_oracle(pts: &Tensor2, n: usize, start: usize) -> Vec<usize> {
        let len = pts.rows();
        let d = |a: usize, b: usize| -> f64 {
            pts.row(a)
                .iter()
                .zip(pts.row(b))
                .map(|(x, y)| (x - y) * (x - y))
                .sum()
        };
        let mut selected = vec![start];
        while selected.len() < n {
            let mut best = usize::MAX;
            let mut best_d = f64::NEG_INFINITY;
            for cand in 0..len {
                let min_d = selected
                    .iter()
                    .map(|&s| d(cand, s))
                    .fold(f64::INFINITY, f64::min);
                if min_d > best_d || (min_d == best_d && cand < best) {
                    best_d = min_d;
                    best = cand;
                }
            }
            selected.push(best);
        }
        selected
    }

    #[test]
    fn fps_matches_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..25 {
            let len = rng.gen_range(4..48);
            let pts = Tensor2::from_fn(len, 3, |_, _| rng.gen_range(-1.0..1.0));
            let cloud = PointCloud::new(pts.clone()).unwrap();
            let n = rng.gen_range(2..=len);
            let start = rng.gen_range(0..len);
            assert_eq!(
                fps_select(&cloud, n, start).unwrap(),
                fps_oracle(&pts, n, start),
                "trial {trial}"
            );
        }
    }

    #[test]
    fn chamfer_examples() {
        let x = Tensor2::from_fn(6, 3, |i, j| (i + j) as f64 * 0.21);
        assert_eq!(chamfer(&x, &x).unwrap(), 0.0);

        let a = Tensor2::from_vec(1, 3, vec![0.0, 0.0, 0.0]).unwrap();
        let b = Tensor2::from_vec(1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(chamfer(&a, &b).unwrap(), 2.0);

        let y = Tensor2::from_fn(4, 3, |i, j| (i * 2 + j) as f64 * -0.4 + 1.0);
        let ab = chamfer(&x, &y).unwrap();
        let ba = chamfer(&y, &x).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        assert!(chamfer(&x, &Tensor2::zeros(0, 3)).is_err());
    }

    #[test]
    fn average_precision_hand_case() {
        let ap = average_precision(&[true, false, true]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(average_precision(&[false, false]), None);
        assert_eq!(average_precision(&[true]), Some(1.0));
    }

    #[test]
    fn map_is_one_for_separable_embeddings() {
        // classes in tight, far-apart clusters
        let mut embeddings = Vec::new();
        let mut labels = Vec::new();
        for class in 0..3usize {
            for k in 0..4usize {
                let offset = class as f64 * 100.0 + k as f64 * 0.01;
                embeddings.push(Tensor2::from_vec(1, 2, vec![offset, 0.0]).unwrap());
                labels.push(class);
            }
        }
        let (map, skipped) = map_from_embeddings(&embeddings, &labels).unwrap();
        assert_eq!(map, 1.0);
        assert_eq!(skipped, 0);
    }

    #[test]
    fn singleton_classes_are_skipped_with_warning_count() {
        let embeddings: Vec<Tensor2> = (0..3)
            .map(|i| Tensor2::from_vec(1, 1, vec![i as f64]).unwrap())
            .collect();
        let labels = vec![0, 0, 1];
        let (_, skipped) = map_from_embeddings(&embeddings, &labels).unwrap();
        assert_eq!(skipped, 1);

        let lonely = vec![0, 1, 2];
        assert!(matches!(
            map_from_embeddings(&embeddings, &lonely),
            Err(EvalError::NoQueries)
        ));
    }

    #[test]
    fn random_embedding_map_matches_permutation_null() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let labels: Vec<usize> = (0..40).map(|i| i % 2).collect();

        // mAP of random embeddings
        let embeddings: Vec<Tensor2> = (0..40)
            .map(|_| Tensor2::from_fn(1, 8, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let (map, _) = map_from_embeddings(&embeddings, &labels).unwrap();

        // permutation-null oracle: expected AP of a uniformly shuffled
        // gallery of 19 relevant among 39
        let mut null_aps = Vec::new();
        for _ in 0..2000 {
            let mut flags = vec![false; 39];
            for f in flags.iter_mut().take(19) {
                *f = true;
            }
            for i in (1..39usize).rev() {
                let j = rng.gen_range(0..=i);
                flags.swap(i, j);
            }
            null_aps.push(average_precision(&flags).unwrap());
        }
        let null_mean: f64 = null_aps.iter().sum::<f64>() / null_aps.len() as f64;
        let null_var: f64 = null_aps
            .iter()
            .map(|a| (a - null_mean) * (a - null_mean))
            .sum::<f64>()
            / null_aps.len() as f64;
        // the measured mAP averages 40 queries; allow 3 sigma of that mean
        let sigma_of_mean = (null_var / 40.0).sqrt();
        assert!(
            (map - null_mean).abs() <= 3.0 * sigma_of_mean,
            "map {map} vs null {null_mean} +- {sigma_of_mean}"
        );
    }

    #[test]
    fn full_subset_metrics_tie_exactly_across_methods() {
        let classes = [ShapeClass::Sphere, ShapeClass::Cube];
        let mut data = make_dataset(&classes, 3, 24, 13).unwrap();
        data.labels = data
            .labels
            .iter()
            .map(|&l| usize::from(l == ShapeClass::Cube.id()))
            .collect();
        let cfg = ClassifierConfig {
            hidden: vec![8],
            feature_dim: 8,
            num_classes: 2,
            epochs: 2,
            batch_size: 4,
            ..ClassifierConfig::default()
        };
        let net = train_classifier(&data, &cfg).unwrap();

        let n = 24;
        let random = classify_eval(&net, &data, &SelectionMethod::Random { seed: 3 }, &[n]).unwrap();
        let fps = classify_eval(&net, &data, &SelectionMethod::Fps { start: 0 }, &[n]).unwrap();
        assert_eq!(random.value_at(n), fps.value_at(n));

        let (rmap, _) =
            retrieval_map_eval(&net, &data, &SelectionMethod::Random { seed: 3 }, &[n]).unwrap();
        let (fmap, _) =
            retrieval_map_eval(&net, &data, &SelectionMethod::Fps { start: 0 }, &[n]).unwrap();
        assert_eq!(rmap.value_at(n), fmap.value_at(n));
    }

    #[test]
    fn prepared_selection_sizes_are_validated() {
        let cloud = normalize_unit_sphere(&gen_synthetic(ShapeClass::Sphere, 16, 3).unwrap());
        let prep = prepare_selection(&SelectionMethod::Fps { start: 0 }, &cloud, 0).unwrap();
        assert!(prep.take(&cloud, 17).is_err());
        assert!(prep.take(&cloud, 0).is_err());
        assert_eq!(prep.take(&cloud, 16).unwrap().len(), 16);
    }
}
