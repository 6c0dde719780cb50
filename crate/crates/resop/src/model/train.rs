//! Training and evaluation loops: Adam with step-decay schedule, relative-L2
//! batch loss, per-epoch auxiliary resampling in residual mode.

use super::{
    broadcast_channels, forward_on_tape, forward_values, normalized_input_tensor,
    register_params, Architecture, ModelError, OperatorParams, OperatorSpec, Result,
};
use crate::autodiff::{Tape, Tensor};
use crate::datagen::Dataset;
use crate::field::{flatten_normalized, fourier_resample, GridField, GridShape};
use crate::residual::{
    build_residual_dataset, integrate_cross_resolution, select_aux_input, AuxiliaryPolicy,
    ResidualPair,
};
use crate::retrieval::{
    distance, rank_neighbors, retrieve_cross_resolution, retrieve_inference, RetrievalIndex,
    SimilarityMetric,
};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Direct,
    Residual,
}

/// Optimization setup. Desk-scale defaults: 50 epochs, batch 8, Adam at 1e-3
/// with weight decay 1e-4 and a step-decay schedule (x0.5 every 100 epochs).
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub lr_step: usize,
    pub lr_gamma: f64,
    /// Training-stage auxiliary sampling range.
    pub k: usize,
    pub mode: TrainMode,
    pub seed: u64,
    pub policy: AuxiliaryPolicy,
    /// Keeps the first epoch's auxiliary pairing for the whole run.
    pub freeze_pairs: bool,
}

impl TrainConfig {
    pub fn desk_default(mode: TrainMode, seed: u64) -> Self {
        Self {
            epochs: 50,
            batch_size: 8,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            lr_step: 100,
            lr_gamma: 0.5,
            k: 20,
            mode,
            seed,
            policy: AuxiliaryPolicy::full(),
            freeze_pairs: false,
        }
    }

    /// `lr(epoch) = lr0 · gamma^floor(epoch / step)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_gamma.powi((epoch / self.lr_step) as i32)
    }
}

/// Per-run record; everything except `wall_seconds` is deterministic in
/// (config, seed).
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub test_rel_l2: Vec<f64>,
    pub lr: Vec<f64>,
    pub final_test_rel_l2: f64,
    pub wall_seconds: f64,
    pub seed: u64,
    pub config: TrainConfig,
}

/// Auxiliary selection rule at evaluation time.
#[derive(Debug, Clone, Copy)]
pub enum AuxRule {
    /// Most similar training sample.
    Best,
    /// Uniform draw among the `k` most similar.
    RandomTopK(usize),
}

#[derive(Debug, Clone)]
pub struct EvalMetrics {
    pub per_sample: Vec<f64>,
    pub mean: f64,
    /// Degenerate (constant) query flags, one per test sample.
    pub degenerate: Vec<bool>,
    /// Auxiliary trajectory chosen per sample; `None` in direct mode.
    pub aux_ids: Vec<Option<usize>>,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
    weight_decay: f64,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(params: &OperatorParams, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            weight_decay,
        }
    }

    /// One update; weight decay enters as an L2 term added to the gradient.
    fn step(&mut self, params: &mut OperatorParams, grads: &[Option<Vec<f64>>], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t);
        let bc2 = 1.0 - BETA2.powi(self.t);
        for (i, gopt) in grads.iter().enumerate() {
            if !params.tensors()[i].requires_grad {
                continue;
            }
            let theta = params.tensor_mut(i);
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for j in 0..theta.values.len() {
                let g = gopt.as_ref().map_or(0.0, |g| g[j]) + self.weight_decay * theta.values[j];
                m[j] = BETA1 * m[j] + (1.0 - BETA1) * g;
                v[j] = BETA2 * v[j] + (1.0 - BETA2) * g * g;
                theta.values[j] -= lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + ADAM_EPS);
            }
        }
    }
}

fn arc_tensor(field: &GridField) -> Arc<Tensor> {
    Arc::new(super::tensor_from_field(field))
}

/// Per-channel mean and standard deviation pooled over all samples and grid
/// points. Near-constant channels keep unit scale.
fn channel_stats<'a>(fields: impl Iterator<Item = &'a GridField> + Clone) -> (Vec<f64>, Vec<f64>) {
    let mut count = 0usize;
    let mut mean: Vec<f64> = Vec::new();
    for f in fields.clone() {
        let s = f.shape();
        let n = s.height * s.width;
        if mean.is_empty() {
            mean = vec![0.0; s.channels];
        }
        for (c, chunk) in f.values().chunks_exact(n).enumerate() {
            mean[c] += chunk.iter().sum::<f64>();
        }
        count += n;
    }
    for m in &mut mean {
        *m /= count as f64;
    }
    let mut var = vec![0.0; mean.len()];
    for f in fields {
        let s = f.shape();
        let n = s.height * s.width;
        for (c, chunk) in f.values().chunks_exact(n).enumerate() {
            var[c] += chunk.iter().map(|v| (v - mean[c]) * (v - mean[c])).sum::<f64>();
        }
    }
    let std = var
        .iter()
        .map(|v| {
            let s = (v / count as f64).sqrt();
            if s > 1e-8 {
                s
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

/// Fits the per-channel normalization of a model to the training split and
/// installs it: inputs are z-scored per channel (the assembled residual stack
/// reuses the source-channel statistics; the score channel stays raw), and
/// the decoder output is interpreted in output-sigma units — anchored at the
/// output mean in direct mode, at the auxiliary solution in residual mode.
pub fn fit_normalization(
    params: &mut OperatorParams,
    train_set: &Dataset,
    mode: TrainMode,
    policy: &AuxiliaryPolicy,
) {
    let (a_mean, a_std) = channel_stats(train_set.samples().iter().map(|s| &s.input));
    let (u_mean, u_std) = channel_stats(train_set.samples().iter().map(|s| &s.output));
    let c_a = train_set.input_shape().channels;
    let (in_shift, in_scale) = match mode {
        TrainMode::Direct => (a_mean.clone(), a_std.clone()),
        TrainMode::Residual => {
            let mut shift = a_mean.clone();
            let mut scale = a_std.clone();
            let n_sel = policy.selected_aux_channels(c_a);
            for j in 0..n_sel {
                shift.push(a_mean[c_a - n_sel + j]);
                scale.push(a_std[c_a - n_sel + j]);
            }
            if policy.include_aux_solution {
                shift.extend_from_slice(&u_mean);
                scale.extend_from_slice(&u_std);
            }
            if policy.include_score_channel {
                shift.push(0.0);
                scale.push(1.0);
            }
            (shift, scale)
        }
    };
    let out_shift = match mode {
        TrainMode::Direct => u_mean,
        // The residual connection anchors the output; no mean shift.
        TrainMode::Residual => vec![0.0; u_std.len()],
    };
    params.set_normalization(in_shift, in_scale, out_shift, u_std);
}

/// Relative L2 on raw buffers; any non-finite prediction maps to infinity so
/// a diverged model reads as a bad score instead of a crash.
fn rel_l2_raw(pred: &[f64], truth: &[f64]) -> f64 {
    debug_assert_eq!(pred.len(), truth.len());
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, t) in pred.iter().zip(truth.iter()) {
        num += (p - t) * (p - t);
        den += t * t;
    }
    let r = (num / den).sqrt();
    if r.is_finite() {
        r
    } else {
        f64::INFINITY
    }
}

/// Builds the network input stack for one (primary, auxiliary) assignment.
pub(crate) fn assemble_stack(
    primary: &GridField,
    aux_input_full: &GridField,
    aux_solution: &GridField,
    score: f64,
    policy: &AuxiliaryPolicy,
) -> GridField {
    let mut parts: Vec<GridField> = vec![primary.clone()];
    if let Some(sel) = select_aux_input(aux_input_full, policy) {
        parts.push(sel);
    }
    if policy.include_aux_solution {
        parts.push(aux_solution.clone());
    }
    if policy.include_score_channel {
        let s = primary.shape();
        parts.push(GridField::constant(
            GridShape::new(s.height, s.width, 1).expect("valid spatial shape"),
            score,
        ));
    }
    let refs: Vec<&GridField> = parts.iter().collect();
    GridField::concat_channels(&refs).expect("parts share the spatial grid")
}

fn stack_from_pair(pair: &ResidualPair, policy: &AuxiliaryPolicy) -> GridField {
    crate::residual::assemble_input(pair, policy)
}

/// One sample of a loss batch for [`loss_and_gradient`].
#[derive(Debug, Clone)]
pub struct BatchItem {
    /// Network input (already assembled in residual setups).
    pub input: GridField,
    /// Auxiliary solution for the residual connection; `None` for direct.
    pub aux_solution: Option<GridField>,
    pub truth: GridField,
}

/// Batch loss (mean per-sample relative L2, through the residual connection
/// where an auxiliary solution is given) and its gradient with respect to
/// every parameter, flattened in declaration order. This is exactly the
/// quantity the training loop differentiates.
pub fn loss_and_gradient(params: &OperatorParams, items: &[BatchItem]) -> (f64, Vec<f64>) {
    assert!(!items.is_empty(), "empty batch");
    let s0 = items[0].input.shape();
    let scale_field = Arc::new(broadcast_channels(params.output_scale(), s0.height, s0.width));
    let shift_field = Arc::new(broadcast_channels(params.output_shift(), s0.height, s0.width));
    let mut tape = Tape::new();
    let nodes = register_params(&mut tape, params);
    let mut total = None;
    for item in items {
        let x = tape.constant(normalized_input_tensor(params, &item.input));
        let net_out = forward_on_tape(&mut tape, &params.spec, &nodes, x);
        let sc = tape.leaf(scale_field.clone());
        let scaled = tape.mul(net_out, sc);
        let pred = match &item.aux_solution {
            None => {
                let sh = tape.leaf(shift_field.clone());
                tape.add(scaled, sh)
            }
            Some(aux) => {
                let a = tape.leaf(arc_tensor(aux));
                tape.add(scaled, a)
            }
        };
        let truth_norm = item.truth.l2_norm();
        assert!(truth_norm > 0.0, "zero-norm truth");
        let truth = tape.leaf(arc_tensor(&item.truth));
        let diff = tape.sub(pred, truth);
        let norm = tape.l2_norm(diff);
        let li = tape.scale(norm, 1.0 / truth_norm);
        total = Some(match total {
            None => li,
            Some(t) => tape.add(t, li),
        });
    }
    let loss = tape.scale(total.expect("nonempty batch"), 1.0 / items.len() as f64);
    let loss_val = tape.values(loss)[0];
    let mut grads = tape.backward(loss);
    let mut flat = Vec::with_capacity(params.num_params());
    for (&id, tensor) in nodes.ids.iter().zip(params.tensors()) {
        if !tensor.requires_grad {
            continue;
        }
        match grads.take(id) {
            Some(g) => flat.extend(g),
            None => flat.extend(std::iter::repeat_n(0.0, tensor.len())),
        }
    }
    (loss_val, flat)
}

/// Trains an operator network, returning the parameters and the run report.
pub fn train(
    train_set: &Dataset,
    test_set: &Dataset,
    spec: &OperatorSpec,
    config: &TrainConfig,
    index: Option<&RetrievalIndex>,
) -> Result<(OperatorParams, TrainReport)> {
    let started = Instant::now();
    let in_shape = train_set.input_shape();
    let out_shape = train_set.output_shape();
    spec.validate_for_resolution(in_shape.height, in_shape.width);
    assert_eq!(spec.out_channels, out_shape.channels, "output channel mismatch");
    let expected_in = match config.mode {
        TrainMode::Direct => in_shape.channels,
        TrainMode::Residual => config
            .policy
            .network_input_channels(in_shape.channels, out_shape.channels),
    };
    assert_eq!(
        spec.in_channels, expected_in,
        "spec.in_channels must match the {} inputs",
        match config.mode {
            TrainMode::Direct => "direct",
            TrainMode::Residual => "assembled residual",
        }
    );
    if config.mode == TrainMode::Residual {
        let index = index.expect("residual mode requires a retrieval index");
        assert_eq!(index.len(), train_set.len(), "index/train size mismatch");
    }

    let n = train_set.len();
    let truths: Vec<Arc<Tensor>> = train_set.samples().iter().map(|s| arc_tensor(&s.output)).collect();
    let truth_norms: Vec<f64> = train_set
        .samples()
        .iter()
        .map(|s| {
            let norm = s.output.l2_norm();
            assert!(norm > 0.0, "training target with zero norm");
            norm
        })
        .collect();

    let mut params = super::init_model(spec, config.seed);
    fit_normalization(&mut params, train_set, config.mode, &config.policy);
    let direct_inputs: Vec<Arc<Tensor>> = match config.mode {
        TrainMode::Direct => train_set
            .samples()
            .iter()
            .map(|s| Arc::new(normalized_input_tensor(&params, &s.input)))
            .collect(),
        TrainMode::Residual => Vec::new(),
    };
    let scale_field = Arc::new(broadcast_channels(
        params.output_scale(),
        in_shape.height,
        in_shape.width,
    ));
    let shift_field = Arc::new(broadcast_channels(
        params.output_shift(),
        in_shape.height,
        in_shape.width,
    ));
    let mut adam = Adam::new(&params, config.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut report = TrainReport {
        train_loss: Vec::with_capacity(config.epochs),
        test_rel_l2: Vec::with_capacity(config.epochs),
        lr: Vec::with_capacity(config.epochs),
        final_test_rel_l2: f64::NAN,
        wall_seconds: 0.0,
        seed: config.seed,
        config: config.clone(),
    };

    let mut frozen_epoch_data: Option<(Vec<Arc<Tensor>>, Vec<Arc<Tensor>>)> = None;
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);

        // Residual mode redraws auxiliaries every epoch unless frozen.
        let (inputs, aux_solutions): (&[Arc<Tensor>], &[Arc<Tensor>]) = match config.mode {
            TrainMode::Direct => (&direct_inputs, &[]),
            TrainMode::Residual => {
                let rebuild = frozen_epoch_data.is_none() || !config.freeze_pairs;
                if rebuild {
                    let pairs = build_residual_dataset(
                        train_set,
                        index.expect("checked above"),
                        config.k,
                        &config.policy,
                        &mut rng,
                    );
                    let ins = pairs
                        .iter()
                        .map(|p| {
                            Arc::new(normalized_input_tensor(
                                &params,
                                &stack_from_pair(p, &config.policy),
                            ))
                        })
                        .collect();
                    let auxs = pairs.iter().map(|p| arc_tensor(&p.aux_solution)).collect();
                    frozen_epoch_data = Some((ins, auxs));
                }
                let (ins, auxs) = frozen_epoch_data.as_ref().expect("just built");
                (ins, auxs)
            }
        };

        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            let mut tape = Tape::new();
            let nodes = register_params(&mut tape, &params);
            let mut total = None;
            for &si in batch {
                let x = tape.leaf(inputs[si].clone());
                let net_out = forward_on_tape(&mut tape, spec, &nodes, x);
                let sc = tape.leaf(scale_field.clone());
                let scaled = tape.mul(net_out, sc);
                let pred = match config.mode {
                    TrainMode::Direct => {
                        let sh = tape.leaf(shift_field.clone());
                        tape.add(scaled, sh)
                    }
                    TrainMode::Residual => {
                        let aux = tape.leaf(aux_solutions[si].clone());
                        tape.add(scaled, aux)
                    }
                };
                let truth = tape.leaf(truths[si].clone());
                let diff = tape.sub(pred, truth);
                let norm = tape.l2_norm(diff);
                let li = tape.scale(norm, 1.0 / truth_norms[si]);
                total = Some(match total {
                    None => li,
                    Some(t) => tape.add(t, li),
                });
            }
            let total = total.expect("nonempty batch");
            let batch_loss = tape.scale(total, 1.0 / batch.len() as f64);
            let loss_val = tape.values(batch_loss)[0];
            if !loss_val.is_finite() {
                return Err(ModelError::NanLoss {
                    epoch,
                    batch: batch_idx,
                    lr,
                });
            }
            let mut grads = tape.backward(batch_loss);
            let g: Vec<Option<Vec<f64>>> = nodes.ids.iter().map(|&id| grads.take(id)).collect();
            drop(grads);
            drop(tape);
            adam.step(&mut params, &g, lr);
            loss_sum += loss_val * batch.len() as f64;
        }

        let aux_source = match config.mode {
            TrainMode::Direct => None,
            TrainMode::Residual => Some((train_set, index.expect("checked above"))),
        };
        let test_metrics = evaluate(
            &params,
            test_set,
            config.mode,
            aux_source,
            &config.policy,
            AuxRule::Best,
            None,
        );
        if !test_metrics.mean.is_finite() {
            // Divergence surfaced at the post-epoch evaluation point; report
            // it with the past-the-end batch index.
            return Err(ModelError::NanLoss {
                epoch,
                batch: n.div_ceil(config.batch_size),
                lr,
            });
        }
        report.train_loss.push(loss_sum / n as f64);
        report.test_rel_l2.push(test_metrics.mean);
        report.lr.push(lr);
    }

    report.final_test_rel_l2 = *report.test_rel_l2.last().expect("at least one epoch");
    report.wall_seconds = started.elapsed().as_secs_f64();
    Ok((params, report))
}

/// Evaluates mean and per-sample relative L2 on a test set. Direct mode
/// ignores the auxiliary source entirely.
pub fn evaluate(
    params: &OperatorParams,
    test_set: &Dataset,
    mode: TrainMode,
    aux_source: Option<(&Dataset, &RetrievalIndex)>,
    policy: &AuxiliaryPolicy,
    aux_rule: AuxRule,
    mut rng: Option<&mut ChaCha8Rng>,
) -> EvalMetrics {
    let mut per_sample = Vec::with_capacity(test_set.len());
    let mut degenerate = Vec::with_capacity(test_set.len());
    let mut aux_ids = Vec::with_capacity(test_set.len());
    for sample in test_set.samples() {
        let (pred, flag, chosen) = match mode {
            TrainMode::Direct => (forward_values(params, &sample.input, mode, None), false, None),
            TrainMode::Residual => {
                let (train_set, index) =
                    aux_source.expect("residual evaluation requires the training set and index");
                let qv = flatten_normalized(&sample.input);
                let aux_id = match aux_rule {
                    AuxRule::Best => retrieve_inference(index, &sample.input).id,
                    AuxRule::RandomTopK(k) => {
                        let ranked = rank_neighbors(index, &qv, None);
                        let k = k.min(ranked.entries.len());
                        let pick = rng
                            .as_deref_mut()
                            .expect("random top-k rule needs an rng")
                            .random_range(0..k);
                        ranked.entries[pick].0
                    }
                };
                let aux = train_set.sample(aux_id);
                let score = distance(&qv, index.vector(aux_id), SimilarityMetric::CosineDistance);
                let stack = assemble_stack(&sample.input, &aux.input, &aux.output, score, policy);
                (
                    forward_values(params, &stack, mode, Some(&aux.output)),
                    qv.degenerate,
                    Some(aux_id),
                )
            }
        };
        per_sample.push(rel_l2_raw(&pred, sample.output.values()));
        degenerate.push(flag);
        aux_ids.push(chosen);
    }
    let mean = per_sample.iter().sum::<f64>() / per_sample.len().max(1) as f64;
    EvalMetrics {
        per_sample,
        mean,
        degenerate,
        aux_ids,
    }
}

/// Zero-shot resolution generalization: a spectrally parameterized model
/// trained on the coarse grid is evaluated on finer test fields, retrieving
/// auxiliaries through the coarse index and upsampling them spectrally.
pub fn evaluate_cross_resolution(
    params: &OperatorParams,
    test_set_high: &Dataset,
    train_set_low: &Dataset,
    index_low: &RetrievalIndex,
    mode: TrainMode,
    policy: &AuxiliaryPolicy,
) -> Result<EvalMetrics> {
    if params.spec.architecture == Architecture::Resnet {
        return Err(ModelError::ResnetCrossResolution);
    }
    let hi = test_set_high.input_shape();
    let lo = index_low.input_shape();
    assert!(
        hi.height >= lo.height && hi.width >= lo.width,
        "test resolution must not be below the training resolution"
    );

    let mut per_sample = Vec::with_capacity(test_set_high.len());
    let mut degenerate = Vec::with_capacity(test_set_high.len());
    let mut aux_ids = Vec::with_capacity(test_set_high.len());
    for sample in test_set_high.samples() {
        let (pred, flag, chosen) = match mode {
            TrainMode::Direct => (forward_values(params, &sample.input, mode, None), false, None),
            TrainMode::Residual => {
                let retrieved = retrieve_cross_resolution(index_low, &sample.input);
                let aux = train_set_low.sample(retrieved.id);
                let down = if sample.input.shape() == lo {
                    sample.input.clone()
                } else {
                    fourier_resample(&sample.input, lo).expect("channels match")
                };
                let qv = flatten_normalized(&down);
                let score = distance(
                    &qv,
                    index_low.vector(retrieved.id),
                    SimilarityMetric::CosineDistance,
                );
                let aux_solution_hi =
                    integrate_cross_resolution(&aux.output, hi.height, hi.width);
                let aux_input_hi = integrate_cross_resolution(&aux.input, hi.height, hi.width);
                let stack =
                    assemble_stack(&sample.input, &aux_input_hi, &aux_solution_hi, score, policy);
                (
                    forward_values(params, &stack, mode, Some(&aux_solution_hi)),
                    retrieved.degenerate,
                    Some(retrieved.id),
                )
            }
        };
        per_sample.push(rel_l2_raw(&pred, sample.output.values()));
        degenerate.push(flag);
        aux_ids.push(chosen);
    }
    let mean = per_sample.iter().sum::<f64>() / per_sample.len().max(1) as f64;
    Ok(EvalMetrics {
        per_sample,
        mean,
        degenerate,
        aux_ids,
    })
}
