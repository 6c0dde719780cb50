//! Similar-trajectory retrieval over normalized flattened input fields.
//!
//! The index stores one mean-centered, L2-normalized vector per training
//! sample. Ranking is a full scan plus sort — `O(N_field · N + N log N)` —
//! which is where desk-scale retrieval stays cheap. Ties always break toward
//! the smaller sample id so reruns over duplicated data are deterministic.

use crate::datagen::Dataset;
use crate::field::{flatten_normalized, fourier_resample, GridField, GridShape, NormalizedField};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Distance used for similarity ranking; all variants are distances
/// (0 = identical normalized inputs, larger = less similar).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimilarityMetric {
    /// `1 − x·y / (‖x‖‖y‖)`.
    CosineDistance,
    Euclidean,
    Manhattan,
}

/// Maximal cosine distance, returned for zero-norm (degenerate) vectors.
pub const COSINE_DEGENERATE_DISTANCE: f64 = 2.0;

/// Distance between two normalized vectors under the given metric.
/// Zero-norm vectors under the cosine metric are maximally distant.
pub fn distance(x: &NormalizedField, y: &NormalizedField, metric: SimilarityMetric) -> f64 {
    assert_eq!(x.values.len(), y.values.len(), "vector length mismatch");
    match metric {
        SimilarityMetric::CosineDistance => {
            if x.degenerate || y.degenerate {
                return COSINE_DEGENERATE_DISTANCE;
            }
            let dot: f64 = x
                .values
                .iter()
                .zip(y.values.iter())
                .map(|(a, b)| a * b)
                .sum();
            1.0 - dot
        }
        SimilarityMetric::Euclidean => x
            .values
            .iter()
            .zip(y.values.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt(),
        SimilarityMetric::Manhattan => x
            .values
            .iter()
            .zip(y.values.iter())
            .map(|(a, b)| (a - b).abs())
            .sum(),
    }
}

/// Precomputed retrieval memory over a dataset's input fields. Immutable
/// after construction; queries may run concurrently.
#[derive(Debug, Clone)]
pub struct RetrievalIndex {
    vectors: Vec<NormalizedField>,
    metric: SimilarityMetric,
    input_shape: GridShape,
}

impl RetrievalIndex {
    pub fn build(dataset: &Dataset, metric: SimilarityMetric) -> Self {
        let vectors = dataset
            .samples()
            .iter()
            .map(|s| flatten_normalized(&s.input))
            .collect();
        Self {
            vectors,
            metric,
            input_shape: dataset.input_shape(),
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn metric(&self) -> SimilarityMetric {
        self.metric
    }

    pub fn input_shape(&self) -> GridShape {
        self.input_shape
    }

    pub fn vector(&self, i: usize) -> &NormalizedField {
        &self.vectors[i]
    }
}

/// Neighbors ordered by ascending distance (ties by ascending id), with the
/// excluded id absent.
#[derive(Debug, Clone)]
pub struct RankedNeighbors {
    /// `(sample id, distance)` pairs, nearest first.
    pub entries: Vec<(usize, f64)>,
}

/// Full similarity ranking of the index against a query vector.
pub fn rank_neighbors(
    index: &RetrievalIndex,
    query: &NormalizedField,
    exclude_id: Option<usize>,
) -> RankedNeighbors {
    let mut entries: Vec<(usize, f64)> = index
        .vectors
        .iter()
        .enumerate()
        .filter(|(id, _)| Some(*id) != exclude_id)
        .map(|(id, v)| (id, distance(query, v, index.metric)))
        .collect();
    entries.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    RankedNeighbors { entries }
}

/// Training-stage sampling: one id drawn uniformly from the `k` nearest
/// neighbors of sample `i` (self excluded). `k` larger than `N-1` is clamped
/// with a warning.
pub fn sample_training_auxiliary(
    index: &RetrievalIndex,
    i: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> usize {
    assert!(k >= 1, "sampling range k must be at least 1");
    assert!(index.len() >= 2, "need at least two samples to pair");
    let max_k = index.len() - 1;
    let k_eff = if k > max_k {
        log::warn!("sampling range k={k} exceeds N-1={max_k}; clamped");
        max_k
    } else {
        k
    };
    let ranked = rank_neighbors(index, index.vector(i), Some(i));
    let pick = rng.random_range(0..k_eff);
    ranked.entries[pick].0
}

/// Inference-stage retrieval result.
#[derive(Debug, Clone, Copy)]
pub struct Retrieved {
    pub id: usize,
    /// True when the query field was constant (zero-variance).
    pub degenerate: bool,
}

/// Inference-stage retrieval: the most similar training sample (smallest
/// distance, ties toward the smaller id).
pub fn retrieve_inference(index: &RetrievalIndex, query: &GridField) -> Retrieved {
    assert_eq!(
        query.shape(),
        index.input_shape,
        "query shape must match the indexed inputs"
    );
    let q = flatten_normalized(query);
    let ranked = rank_neighbors(index, &q, None);
    Retrieved {
        id: ranked.entries[0].0,
        degenerate: q.degenerate,
    }
}

/// Cross-resolution retrieval: spectrally downsample a finer query to the
/// index resolution, then retrieve as usual.
pub fn retrieve_cross_resolution(index: &RetrievalIndex, query: &GridField) -> Retrieved {
    let target = index.input_shape;
    let qs = query.shape();
    assert_eq!(qs.channels, target.channels, "channel count mismatch");
    assert!(
        qs.height >= target.height && qs.width >= target.width,
        "query resolution {qs} below index resolution {target}"
    );
    if qs == target {
        return retrieve_inference(index, query);
    }
    let down = fourier_resample(query, target).expect("channel counts already checked");
    retrieve_inference(index, &down)
}

/// Empirical initial sampling-range selection: the smallest rank `r` such
/// that every training sample's `r`-th nearest training neighbor is at least
/// as distant as the worst-case nearest-neighbor distance of the test inputs.
pub fn suggest_initial_k(train: &Dataset, test: &Dataset, metric: SimilarityMetric) -> usize {
    assert!(train.len() >= 2, "need at least two training samples");
    assert!(!test.is_empty(), "need at least one test input");
    let train_vecs: Vec<NormalizedField> = train
        .samples()
        .iter()
        .map(|s| flatten_normalized(&s.input))
        .collect();
    let s_max = test
        .samples()
        .iter()
        .map(|s| {
            let q = flatten_normalized(&s.input);
            train_vecs
                .iter()
                .map(|v| distance(&q, v, metric))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(f64::NEG_INFINITY, f64::max);

    // Ascending neighbor distances per training sample, self excluded.
    let n = train.len();
    let sorted_dists: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut d: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| distance(&train_vecs[i], &train_vecs[j], metric))
                .collect();
            d.sort_by(f64::total_cmp);
            d
        })
        .collect();

    for r in 1..=n - 1 {
        if sorted_dists.iter().all(|d| s_max <= d[r - 1]) {
            return r;
        }
    }
    log::warn!("no rank satisfies the worst-case test distance; falling back to N-1");
    n - 1
}
