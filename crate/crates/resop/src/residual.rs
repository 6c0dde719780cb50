//! Residual dataset construction: pair every training sample with a similar
//! auxiliary trajectory, learn the output difference, and reconstruct
//! solutions by adding the auxiliary solution back.

use crate::datagen::Dataset;
use crate::field::{fourier_resample, GridField, GridShape};
use crate::retrieval::{distance, sample_training_auxiliary, RetrievalIndex, SimilarityMetric};
use rand_chacha::ChaCha8Rng;

/// Which channels of the auxiliary input field enter the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuxInputChannels {
    All,
    /// Keep the trailing `n` channels; `Last(0)` omits the auxiliary input.
    Last(usize),
}

/// Selection of customized auxiliary inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuxiliaryPolicy {
    pub aux_input: AuxInputChannels,
    pub include_aux_solution: bool,
    pub include_score_channel: bool,
}

impl AuxiliaryPolicy {
    /// Everything on, full auxiliary input — the steady-problem default.
    pub fn full() -> Self {
        Self {
            aux_input: AuxInputChannels::All,
            include_aux_solution: true,
            include_score_channel: true,
        }
    }

    /// Last three auxiliary input steps — the time-series default.
    pub fn partial() -> Self {
        Self {
            aux_input: AuxInputChannels::Last(3),
            ..Self::full()
        }
    }

    pub fn validate(&self) {
        let has_aux_input = !matches!(self.aux_input, AuxInputChannels::Last(0));
        assert!(
            has_aux_input || self.include_aux_solution || self.include_score_channel,
            "policy must enable at least one auxiliary source"
        );
    }

    /// Channels of the auxiliary input that survive selection.
    pub fn selected_aux_channels(&self, aux_input_channels: usize) -> usize {
        match self.aux_input {
            AuxInputChannels::All => aux_input_channels,
            AuxInputChannels::Last(n) => n.min(aux_input_channels),
        }
    }

    /// Total network input channels for a dataset with `c_a` input and `c_u`
    /// output channels.
    pub fn network_input_channels(&self, c_a: usize, c_u: usize) -> usize {
        c_a + self.selected_aux_channels(c_a)
            + if self.include_aux_solution { c_u } else { 0 }
            + if self.include_score_channel { 1 } else { 0 }
    }
}

/// One assembled residual training record.
#[derive(Debug, Clone)]
pub struct ResidualPair {
    pub primary_input: GridField,
    /// Policy-selected channels of the auxiliary input; `None` when omitted.
    pub aux_input: Option<GridField>,
    pub aux_solution: GridField,
    /// Cosine distance between the normalized primary and auxiliary inputs.
    pub score: f64,
    pub target_residual: GridField,
    pub aux_id: usize,
}

/// Transforms a direct-learning dataset into residual pairs by sampling one
/// auxiliary trajectory per sample from its `k` nearest neighbors. A fresh
/// `rng` yields fresh pairings, which is how per-epoch resampling works.
pub fn build_residual_dataset(
    dataset: &Dataset,
    index: &RetrievalIndex,
    k: usize,
    policy: &AuxiliaryPolicy,
    rng: &mut ChaCha8Rng,
) -> Vec<ResidualPair> {
    assert!(dataset.len() >= 2, "need at least two samples to pair");
    assert_eq!(index.len(), dataset.len(), "index built over a different set");
    policy.validate();
    (0..dataset.len())
        .map(|i| {
            let aux_id = sample_training_auxiliary(index, i, k, rng);
            make_pair(dataset, index, i, aux_id, policy)
        })
        .collect()
}

/// Builds the pair record for a fixed (sample, auxiliary) assignment.
pub fn make_pair(
    dataset: &Dataset,
    index: &RetrievalIndex,
    i: usize,
    aux_id: usize,
    policy: &AuxiliaryPolicy,
) -> ResidualPair {
    assert_ne!(aux_id, i, "auxiliary must differ from the primary sample");
    let primary = dataset.sample(i);
    let aux = dataset.sample(aux_id);
    let target_residual = primary
        .output
        .sub(&aux.output)
        .expect("dataset shapes are uniform");
    let score = distance(
        index.vector(i),
        index.vector(aux_id),
        SimilarityMetric::CosineDistance,
    );
    ResidualPair {
        primary_input: primary.input.clone(),
        aux_input: select_aux_input(&aux.input, policy),
        aux_solution: aux.output.clone(),
        score,
        target_residual,
        aux_id,
    }
}

pub(crate) fn select_aux_input(aux_input: &GridField, policy: &AuxiliaryPolicy) -> Option<GridField> {
    let c = aux_input.shape().channels;
    match policy.selected_aux_channels(c) {
        0 => None,
        n if n == c => Some(aux_input.clone()),
        n => Some(
            aux_input
                .select_channels(c - n, c)
                .expect("selection within channel range"),
        ),
    }
}

/// Stacks the network input channels in the fixed order
/// `[primary | selected auxiliary input | auxiliary solution | score]`.
/// The score channel is a constant field holding the similarity score.
pub fn assemble_input(pair: &ResidualPair, policy: &AuxiliaryPolicy) -> GridField {
    policy.validate();
    let c_a = pair.primary_input.shape().channels;
    let expected = policy.selected_aux_channels(c_a);
    let got = pair.aux_input.as_ref().map_or(0, |f| f.shape().channels);
    assert_eq!(
        got, expected,
        "pair auxiliary channels inconsistent with policy"
    );

    let mut parts: Vec<&GridField> = vec![&pair.primary_input];
    if let Some(aux) = &pair.aux_input {
        parts.push(aux);
    }
    if policy.include_aux_solution {
        parts.push(&pair.aux_solution);
    }
    let score_field;
    if policy.include_score_channel {
        let shape = pair.primary_input.shape();
        score_field = GridField::constant(
            GridShape::new(shape.height, shape.width, 1).expect("valid spatial shape"),
            pair.score,
        );
        parts.push(&score_field);
    }
    GridField::concat_channels(&parts).expect("parts share the spatial grid")
}

/// Trajectory residual connection: `û = predicted_residual + aux_solution`.
pub fn reconstruct_solution(predicted_residual: &GridField, aux_solution: &GridField) -> GridField {
    predicted_residual
        .add(aux_solution)
        .expect("residual and auxiliary solution must share shape")
}

/// Spectrally upsamples auxiliary channels to a finer evaluation grid before
/// assembly.
pub fn integrate_cross_resolution(aux: &GridField, target_height: usize, target_width: usize) -> GridField {
    let s = aux.shape();
    assert!(
        target_height >= s.height && target_width >= s.width,
        "target grid must be at least as fine as the auxiliary grid"
    );
    let target = GridShape::new(target_height, target_width, s.channels).expect("valid shape");
    fourier_resample(aux, target).expect("channel counts match")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_darcy_dataset, DarcyConfig, TrajectorySample};
    use crate::field::GridShape;
    use crate::testutil::pseudo_random_field;
    use rand_chacha::rand_core::SeedableRng;
    use std::f64::consts::PI;

    fn toy_dataset(n: usize, c_in: usize, c_out: usize, seed: u64) -> Dataset {
        let in_shape = GridShape::new(8, 8, c_in).unwrap();
        let out_shape = GridShape::new(8, 8, c_out).unwrap();
        Dataset::new(
            (0..n)
                .map(|id| TrajectorySample {
                    input: pseudo_random_field(in_shape, seed + 2 * id as u64),
                    output: pseudo_random_field(out_shape, seed + 2 * id as u64 + 1),
                    id,
                })
                .collect(),
        )
    }

    #[test]
    fn two_samples_pair_with_each_other() {
        let data = toy_dataset(2, 1, 1, 5);
        let index = RetrievalIndex::build(&data, SimilarityMetric::CosineDistance);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pairs = build_residual_dataset(&data, &index, 1, &AuxiliaryPolicy::full(), &mut rng);
        assert_eq!(pairs[0].aux_id, 1);
        assert_eq!(pairs[1].aux_id, 0);
    }

    #[test]
    fn duplicated_outputs_give_zero_residual() {
        let shape = GridShape::new(8, 8, 1).unwrap();
        let shared_output = pseudo_random_field(shape, 9);
        let data = Dataset::new(
            (0..2)
                .map(|id| TrajectorySample {
                    input: pseudo_random_field(shape, 20 + id as u64),
                    output: shared_output.clone(),
                    id,
                })
                .collect(),
        );
        let index = RetrievalIndex::build(&data, SimilarityMetric::CosineDistance);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pairs = build_residual_dataset(&data, &index, 1, &AuxiliaryPolicy::full(), &mut rng);
        assert!(pairs[0].target_residual.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_arithmetic_matches_policy_table() {
        // (c_a, c_u) = (10, 10) mirrors the time-series layout; expected
        // totals are c_a + selected + (c_u if solution) + (1 if score).
        let cases: [(AuxInputChannels, bool, bool, usize); 8] = [
            (AuxInputChannels::All, true, true, 31),
            (AuxInputChannels::All, true, false, 30),
            (AuxInputChannels::All, false, true, 21),
            (AuxInputChannels::All, false, false, 20),
            (AuxInputChannels::Last(3), true, true, 24),
            (AuxInputChannels::Last(3), false, false, 13),
            (AuxInputChannels::Last(0), true, true, 21),
            (AuxInputChannels::Last(0), true, false, 20),
        ];
        for (aux_input, sol, score, want) in cases {
            let policy = AuxiliaryPolicy {
                aux_input,
                include_aux_solution: sol,
                include_score_channel: score,
            };
            assert_eq!(policy.network_input_channels(10, 10), want);
        }
        // Darcy single-channel case with everything enabled.
        assert_eq!(AuxiliaryPolicy::full().network_input_channels(1, 1), 4);
    }

    #[test]
    #[should_panic(expected = "at least one auxiliary source")]
    fn empty_policy_is_rejected() {
        AuxiliaryPolicy {
            aux_input: AuxInputChannels::Last(0),
            include_aux_solution: false,
            include_score_channel: false,
        }
        .validate();
    }

    #[test]
    fn assembled_channels_and_order() {
        let data = toy_dataset(4, 10, 10, 50);
        let index = RetrievalIndex::build(&data, SimilarityMetric::CosineDistance);
        let policy = AuxiliaryPolicy::partial();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pairs = build_residual_dataset(&data, &index, 2, &policy, &mut rng);
        let p = &pairs[0];
        let stacked = assemble_input(p, &policy);
        assert_eq!(stacked.shape().channels, 24);
        // Primary first, then the last 3 aux-input channels, aux solution, score.
        assert_eq!(stacked.channel(0), p.primary_input.channel(0));
        let aux = p.aux_input.as_ref().unwrap();
        assert_eq!(stacked.channel(10), aux.channel(0));
        assert_eq!(
            aux.channel(2),
            data.sample(p.aux_id).input.channel(9),
            "selection keeps the trailing channels"
        );
        assert_eq!(stacked.channel(13), p.aux_solution.channel(0));
        assert!(stacked.channel(23).iter().all(|&v| v == p.score));
    }

    #[test]
    fn omitted_aux_input_assembles_without_it() {
        let data = toy_dataset(4, 2, 3, 51);
        let index = RetrievalIndex::build(&data, SimilarityMetric::CosineDistance);
        let policy = AuxiliaryPolicy {
            aux_input: AuxInputChannels::Last(0),
            include_aux_solution: true,
            include_score_channel: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pairs = build_residual_dataset(&data, &index, 2, &policy, &mut rng);
        assert!(pairs[0].aux_input.is_none());
        let stacked = assemble_input(&pairs[0], &policy);
        assert_eq!(stacked.shape().channels, 2 + 3);
    }

    #[test]
    fn zero_residual_reconstructs_auxiliary() {
        let shape = GridShape::new(8, 8, 2).unwrap();
        let aux = pseudo_random_field(shape, 3);
        let zero = GridField::zeros(shape);
        let got = reconstruct_solution(&zero, &aux);
        assert_eq!(got.values(), aux.values());
    }

    #[test]
    fn reconstruction_inverts_the_residual_to_rounding() {
        // (uᵢ − u_k) + u_k recovers uᵢ up to one rounding of each element;
        // same-scale fields make this at-worst 1 ulp of the larger value.
        let data = toy_dataset(6, 1, 1, 52);
        let index = RetrievalIndex::build(&data, SimilarityMetric::CosineDistance);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pairs = build_residual_dataset(&data, &index, 3, &AuxiliaryPolicy::full(), &mut rng);
        for (i, p) in pairs.iter().enumerate() {
            let got = reconstruct_solution(&p.target_residual, &p.aux_solution);
            let truth = &data.sample(i).output;
            for (a, b) in got.values().iter().zip(truth.values()) {
                let tol = f64::EPSILON * a.abs().max(b.abs()).max(1.0);
                assert!((a - b).abs() <= tol, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn reconstruction_is_linear() {
        let shape = GridShape::new(8, 8, 1).unwrap();
        let r1 = pseudo_random_field(shape, 60);
        let r2 = pseudo_random_field(shape, 61);
        let aux = pseudo_random_field(shape, 62);
        let sum = r1.add(&r2).unwrap();
        let lhs = reconstruct_solution(&sum, &aux);
        let rhs = reconstruct_solution(&r1, &aux)
            .add(&reconstruct_solution(&r2, &GridField::zeros(shape)))
            .unwrap();
        assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn fixed_seed_reproducible_distinct_seeds_differ() {
        let data = toy_dataset(12, 1, 1, 53);
        let index = RetrievalIndex::build(&data, SimilarityMetric::CosineDistance);
        let build = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            build_residual_dataset(&data, &index, 5, &AuxiliaryPolicy::full(), &mut rng)
                .iter()
                .map(|p| p.aux_id)
                .collect::<Vec<_>>()
        };
        assert_eq!(build(7), build(7));
        assert_ne!(build(7), build(8));
    }

    #[test]
    fn tighter_sampling_range_gives_smaller_residuals() {
        let cfg = DarcyConfig {
            resolution: 16,
            num_samples: 24,
            seed: 200,
            coefficient_low: 3.0,
            coefficient_high: 12.0,
            correlation_length: 0.25,
        };
        let data = generate_darcy_dataset(&cfg, 1.0).unwrap();
        let index = RetrievalIndex::build(&data, SimilarityMetric::CosineDistance);
        let mean_residual_norm = |k: usize, seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pairs = build_residual_dataset(&data, &index, k, &AuxiliaryPolicy::full(), &mut rng);
            pairs
                .iter()
                .map(|p| p.target_residual.l2_norm())
                .sum::<f64>()
                / pairs.len() as f64
        };
        let tight: f64 = (0..5).map(|s| mean_residual_norm(1, s)).sum::<f64>() / 5.0;
        let loose: f64 = (0..5).map(|s| mean_residual_norm(23, s)).sum::<f64>() / 5.0;
        assert!(
            tight < loose,
            "nearest-neighbor residuals should be smaller: {tight} vs {loose}"
        );
    }

    #[test]
    fn cross_resolution_integration_preserves_constants_and_identity() {
        let shape = GridShape::new(8, 8, 2).unwrap();
        let aux = pseudo_random_field(shape, 70);
        let same = integrate_cross_resolution(&aux, 8, 8);
        assert!(aux.max_abs_diff(&same) < 1e-12);
        let constant = GridField::constant(shape, 2.5);
        let up = integrate_cross_resolution(&constant, 32, 32);
        for &v in up.values() {
            assert!((v - 2.5).abs() < 1e-13);
        }
    }

    #[test]
    fn upsampled_single_mode_reconstruction_matches_analytic() {
        // A band-limited auxiliary solution upsampled to a fine grid and used
        // in the residual connection reproduces the analytic fine-grid field.
        let coarse = GridShape::new(16, 16, 1).unwrap();
        let aux = GridField::from_fn(coarse, |_, y, _| (2.0 * PI * y as f64 / 16.0).cos());
        let up = integrate_cross_resolution(&aux, 64, 64);
        let fine_shape = up.shape();
        let residual = GridField::zeros(fine_shape);
        let got = reconstruct_solution(&residual, &up);
        for y in 0..64 {
            for x in 0..64 {
                let want = (2.0 * PI * y as f64 / 64.0).cos();
                assert!((got.at(0, y, x) - want).abs() < 1e-10);
            }
        }
    }
}
