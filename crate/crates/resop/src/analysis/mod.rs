//! Statistical studies over datasets: similarity-rank distance curves and
//! PCA label-distribution comparisons, with CSV as the testable artifact and
//! SVG as the presentation artifact.

mod csv;
mod svg;

pub use csv::{
    parse_distribution_points_csv, parse_distribution_stats_csv, parse_rank_curve_csv,
    write_distribution_points_csv, write_distribution_stats_csv, write_rank_curve_csv,
    AnalysisError,
};
pub use svg::{svg_label_distribution, svg_rank_curve};

use crate::datagen::Dataset;
use crate::field::{flatten_normalized, relative_l2};
use crate::residual::ResidualPair;
use crate::retrieval::{rank_neighbors, retrieve_inference, RetrievalIndex, SimilarityMetric};
use nalgebra::{DMatrix, SymmetricEigen};

/// Mean output distance per input-similarity rank.
#[derive(Debug, Clone, PartialEq)]
pub struct RankCurve {
    pub ranks: Vec<usize>,
    pub mean_distance: Vec<f64>,
    pub retrieval_size: usize,
}

/// For each test sample, retrieves the `r`-th most similar training input and
/// averages the relative L2 distance between the test output and the
/// retrieved output, per rank. A training sample sharing the test sample's id
/// is excluded from its own ranking.
pub fn similarity_rank_curve(
    train_set: &Dataset,
    test_set: &Dataset,
    max_rank: usize,
    metric: SimilarityMetric,
) -> RankCurve {
    assert!(max_rank >= 1 && max_rank <= train_set.len(), "max_rank out of range");
    let index = RetrievalIndex::build(train_set, metric);
    let mut sums = vec![0.0; max_rank];
    for test in test_set.samples() {
        let exclude = train_set
            .samples()
            .iter()
            .position(|s| s.id == test.id);
        let q = flatten_normalized(&test.input);
        let ranked = rank_neighbors(&index, &q, exclude);
        assert!(
            ranked.entries.len() >= max_rank,
            "max_rank {max_rank} exceeds the {} available neighbors",
            ranked.entries.len()
        );
        for r in 0..max_rank {
            let neighbor = ranked.entries[r].0;
            sums[r] += relative_l2(&train_set.sample(neighbor).output, &test.output)
                .expect("nonzero test outputs");
        }
    }
    let n = test_set.len() as f64;
    RankCurve {
        ranks: (1..=max_rank).collect(),
        mean_distance: sums.into_iter().map(|s| s / n).collect(),
        retrieval_size: train_set.len(),
    }
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    pearson(&rx, &ry)
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (x, y) in xs.iter().zip(ys.iter()) {
        cov += (x - mx) * (y - my);
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
    }
    cov / (vx * vy).sqrt()
}

/// A rank-2 linear projection fit on training labels.
#[derive(Debug, Clone)]
pub struct PcaBasis {
    pub mean: Vec<f64>,
    pub axes: [Vec<f64>; 2],
    /// Top-2 eigenvalues of the label covariance.
    pub variances: [f64; 2],
    /// Set when the covariance had numerical rank < 2 and the second axis was
    /// chosen arbitrarily in the orthogonal complement.
    pub rank_deficient: bool,
}

impl PcaBasis {
    pub fn project(&self, label: &[f64]) -> [f64; 2] {
        assert_eq!(label.len(), self.mean.len(), "label dimension mismatch");
        let mut out = [0.0; 2];
        for (k, axis) in self.axes.iter().enumerate() {
            out[k] = label
                .iter()
                .zip(self.mean.iter())
                .zip(axis.iter())
                .map(|((x, m), a)| (x - m) * a)
                .sum();
        }
        out
    }
}

const RANK_EPS: f64 = 1e-12;

/// Fits the top-2 principal axes of the label covariance (via the Gram-matrix
/// eigendecomposition) and projects the labels. The basis is reusable for
/// held-out labels.
pub fn pca_project(labels: &[Vec<f64>]) -> (Vec<[f64; 2]>, PcaBasis) {
    let n = labels.len();
    assert!(n >= 3, "need at least three labels");
    let d = labels[0].len();
    assert!(d >= 2, "label dimension must be at least 2");
    assert!(labels.iter().all(|l| l.len() == d), "ragged labels");

    let mut mean = vec![0.0; d];
    for l in labels {
        for (m, v) in mean.iter_mut().zip(l.iter()) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let centered: Vec<Vec<f64>> = labels
        .iter()
        .map(|l| l.iter().zip(mean.iter()).map(|(v, m)| v - m).collect())
        .collect();

    // Gram trick: eigenvectors of (X Xᵀ)/n lift to covariance eigenvectors.
    let gram = DMatrix::from_fn(n, n, |i, j| {
        centered[i]
            .iter()
            .zip(centered[j].iter())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64
    });
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let lift = |col: usize| -> Option<Vec<f64>> {
        let u = eig.eigenvectors.column(col);
        let mut axis = vec![0.0; d];
        for (i, c) in centered.iter().enumerate() {
            for (a, v) in axis.iter_mut().zip(c.iter()) {
                *a += u[i] * v;
            }
        }
        let norm = axis.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < RANK_EPS {
            return None;
        }
        for a in &mut axis {
            *a /= norm;
        }
        fix_sign(&mut axis);
        Some(axis)
    };

    let lambda1 = eig.eigenvalues[order[0]].max(0.0);
    let lambda2 = eig.eigenvalues[order[1]].max(0.0);
    let axis1 = lift(order[0]).unwrap_or_else(|| {
        // All labels identical: any deterministic direction works.
        let mut a = vec![0.0; d];
        a[0] = 1.0;
        a
    });
    let mut rank_deficient = lambda1 < RANK_EPS;
    let axis2 = if lambda2 > lambda1 * RANK_EPS && lambda2 > RANK_EPS {
        match lift(order[1]) {
            Some(a) => a,
            None => {
                rank_deficient = true;
                orthogonal_complement(&axis1)
            }
        }
    } else {
        rank_deficient = true;
        orthogonal_complement(&axis1)
    };

    let basis = PcaBasis {
        mean,
        axes: [axis1, axis2],
        variances: [lambda1, lambda2.max(0.0)],
        rank_deficient,
    };
    let points = labels.iter().map(|l| basis.project(l)).collect();
    (points, basis)
}

/// Deterministic sign: the component with the largest magnitude is positive.
fn fix_sign(axis: &mut [f64]) {
    let mut best = 0;
    for (i, v) in axis.iter().enumerate() {
        if v.abs() > axis[best].abs() {
            best = i;
        }
    }
    if axis[best] < 0.0 {
        for v in axis.iter_mut() {
            *v = -*v;
        }
    }
}

/// A deterministic unit vector orthogonal to `axis` (Gram-Schmidt on the
/// least-aligned standard basis vector).
fn orthogonal_complement(axis: &[f64]) -> Vec<f64> {
    let d = axis.len();
    let mut pick = 0;
    for i in 0..d {
        if axis[i].abs() < axis[pick].abs() {
            pick = i;
        }
    }
    let mut out = vec![0.0; d];
    out[pick] = 1.0;
    let dot: f64 = out.iter().zip(axis.iter()).map(|(a, b)| a * b).sum();
    for (o, a) in out.iter_mut().zip(axis.iter()) {
        *o -= dot * a;
    }
    let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    for o in &mut out {
        *o /= norm;
    }
    fix_sign(&mut out);
    out
}

/// Axis-aligned ellipse in PCA coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub center: [f64; 2],
    pub radii: [f64; 2],
}

impl Ellipse {
    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.radii[0] * self.radii[1]
    }
}

/// Projected label clouds for one learning formulation.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDistribution {
    pub train_points: Vec<[f64; 2]>,
    pub test_points: Vec<[f64; 2]>,
    /// 1-sigma per axis around the per-set mean.
    pub train_std: Ellipse,
    pub test_std: Ellipse,
    /// Min/max per axis.
    pub train_range: Ellipse,
    pub test_range: Ellipse,
    pub rank_deficient: bool,
}

fn std_ellipse(points: &[[f64; 2]]) -> Ellipse {
    let n = points.len() as f64;
    let mut center = [0.0; 2];
    for p in points {
        center[0] += p[0];
        center[1] += p[1];
    }
    center[0] /= n;
    center[1] /= n;
    let mut var = [0.0; 2];
    for p in points {
        var[0] += (p[0] - center[0]) * (p[0] - center[0]);
        var[1] += (p[1] - center[1]) * (p[1] - center[1]);
    }
    Ellipse {
        center,
        radii: [(var[0] / n).sqrt(), (var[1] / n).sqrt()],
    }
}

fn range_ellipse(points: &[[f64; 2]]) -> Ellipse {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in points {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    Ellipse {
        center: [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0],
        radii: [(hi[0] - lo[0]) / 2.0, (hi[1] - lo[1]) / 2.0],
    }
}

fn distribution(train_labels: &[Vec<f64>], test_labels: &[Vec<f64>]) -> LabelDistribution {
    let (train_points, basis) = pca_project(train_labels);
    let test_points: Vec<[f64; 2]> = test_labels.iter().map(|l| basis.project(l)).collect();
    LabelDistribution {
        train_std: std_ellipse(&train_points),
        train_range: range_ellipse(&train_points),
        test_std: std_ellipse(&test_points),
        test_range: range_ellipse(&test_points),
        train_points,
        test_points,
        rank_deficient: basis.rank_deficient,
    }
}

/// The direct-vs-residual label-distribution comparison. The direct study
/// projects raw output labels; the residual study projects output residuals,
/// pairing test samples with their most similar training trajectory.
pub fn label_distribution_study(
    train_set: &Dataset,
    residual_pairs: &[ResidualPair],
    test_set: &Dataset,
    index: &RetrievalIndex,
) -> (LabelDistribution, LabelDistribution) {
    assert_eq!(
        residual_pairs.len(),
        train_set.len(),
        "pairs must cover the training set"
    );
    let direct_train: Vec<Vec<f64>> = train_set
        .samples()
        .iter()
        .map(|s| s.output.values().to_vec())
        .collect();
    let direct_test: Vec<Vec<f64>> = test_set
        .samples()
        .iter()
        .map(|s| s.output.values().to_vec())
        .collect();
    let direct = distribution(&direct_train, &direct_test);

    let residual_train: Vec<Vec<f64>> = residual_pairs
        .iter()
        .map(|p| p.target_residual.values().to_vec())
        .collect();
    let residual_test: Vec<Vec<f64>> = test_set
        .samples()
        .iter()
        .map(|s| {
            let aux_id = retrieve_inference(index, &s.input).id;
            s.output
                .sub(&train_set.sample(aux_id).output)
                .expect("uniform shapes")
                .into_values()
        })
        .collect();
    let residual = distribution(&residual_train, &residual_test);

    (direct, residual)
}
