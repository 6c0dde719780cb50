//! Operator network architectures and parameter handling.
//!
//! Both architectures share the encoder/decoder layout: a per-point channel
//! encoder `P`, `depth` hidden layers each summing a kernel path (spectral
//! convolution, or 3x3 spatial convolution for the convolutional baseline)
//! with a per-point linear path, an elementwise nonlinearity after the sum,
//! and a per-point channel decoder `Q`.
//!
//! Two grid-coordinate channels are appended to every input before `P`. The
//! kernel and pointwise paths are translation-equivariant, so boundary-value
//! problems are unlearnable without positional input; the coordinates are
//! generated per grid and keep the network resolution-agnostic.

mod train;

pub use train::{
    evaluate, evaluate_cross_resolution, fit_normalization, loss_and_gradient, train, AuxRule,
    BatchItem, EvalMetrics, TrainConfig, TrainMode, TrainReport,
};

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::field::{GridField, GridShape};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("loss became non-finite at epoch {epoch}, batch {batch} (lr {lr:.3e})")]
    NanLoss { epoch: usize, batch: usize, lr: f64 },
    #[error("the convolutional baseline has no spectral consistency across resolutions; cross-resolution evaluation requires the spectral architecture")]
    ResnetCrossResolution,
    #[error("checkpoint parse failure at byte offset {offset}: {reason}")]
    Parse { offset: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    Fno,
    Resnet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Relu,
}

/// Hyperparameters fixing an operator network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OperatorSpec {
    pub architecture: Architecture,
    /// Hidden channels.
    pub width: usize,
    /// Hidden layers.
    pub depth: usize,
    /// Retained spectral modes per axis (spectral architecture only).
    pub modes: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub activation: Activation,
}

impl OperatorSpec {
    pub fn fno(width: usize, depth: usize, modes: usize, in_channels: usize, out_channels: usize) -> Self {
        Self {
            architecture: Architecture::Fno,
            width,
            depth,
            modes,
            in_channels,
            out_channels,
            activation: Activation::Gelu,
        }
    }

    pub fn resnet(width: usize, depth: usize, in_channels: usize, out_channels: usize) -> Self {
        Self {
            architecture: Architecture::Resnet,
            width,
            depth,
            modes: 0,
            in_channels,
            out_channels,
            activation: Activation::Gelu,
        }
    }

    pub fn validate(&self) {
        assert!(self.width >= 1 && self.depth >= 1, "width/depth must be positive");
        assert!(self.in_channels >= 1 && self.out_channels >= 1, "channel counts must be positive");
        if self.architecture == Architecture::Fno {
            assert!(self.modes >= 1, "spectral architecture needs at least one mode");
        }
    }

    /// Panics when the spectral mode count exceeds the Nyquist limit of the
    /// training grid.
    pub fn validate_for_resolution(&self, height: usize, width: usize) {
        self.validate();
        if self.architecture == Architecture::Fno {
            assert!(
                2 * self.modes <= height.min(width),
                "modes {} exceed floor(resolution/2) of a {height}x{width} grid",
                self.modes
            );
        }
    }

    /// Closed-form trainable parameter count; kept in sync with
    /// [`OperatorParams::num_params`] by test.
    ///
    /// Spectral: `P ((in+2)·w + w)` (the `+2` is the coordinate channels)
    /// `+ depth · (2·w²·m² complex = 4·w²·m² reals + w² + w) + Q (w·out +
    /// out)`. The convolutional baseline replaces the `4·w²·m²` spectral
    /// block with `9·w²` kernel weights.
    pub fn param_count(&self) -> usize {
        let w = self.width;
        // The kernel path carries no bias in either architecture; the local
        // path's bias covers the layer.
        let kernel = match self.architecture {
            Architecture::Fno => 2 * w * w * self.modes * self.modes * 2,
            Architecture::Resnet => 9 * w * w,
        };
        let per_layer = kernel + w * w + w;
        ((self.in_channels + COORD_CHANNELS) * w + w)
            + self.depth * per_layer
            + (w * self.out_channels + self.out_channels)
    }
}

/// A parameterized operator network: the spec plus all trainable tensors in
/// declaration order (encoder, per-layer kernel + local path, decoder).
#[derive(Debug, Clone)]
pub struct OperatorParams {
    pub spec: OperatorSpec,
    tensors: Vec<Arc<Tensor>>,
}

fn uniform_fan_in(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize, complex_pairs: bool) -> Tensor {
    // Uniform with Var = 1/fan_in; complex entries split the variance over
    // the real and imaginary parts.
    let denom = if complex_pairs { 2 * fan_in } else { fan_in };
    let bound = (3.0 / denom as f64).sqrt();
    let len = shape.iter().product();
    let values = (0..len).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::param(shape, values)
}

/// Number of frozen normalization tensors at the head of the layout:
/// input shift/scale and output shift/scale, one value per channel.
pub(crate) const STATS_TENSORS: usize = 4;

/// Grid-coordinate channels appended to every network input.
pub(crate) const COORD_CHANNELS: usize = 2;

/// Deterministic parameter initialization for a given seed. The normalization
/// tensors start as the identity (shift 0, scale 1); `train` fits them on the
/// training split.
pub fn init_model(spec: &OperatorSpec, seed: u64) -> OperatorParams {
    spec.validate();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = spec.width;
    let m = spec.modes;
    let mut tensors = Vec::new();
    tensors.push(Tensor::new(vec![spec.in_channels], vec![0.0; spec.in_channels]));
    tensors.push(Tensor::new(vec![spec.in_channels], vec![1.0; spec.in_channels]));
    tensors.push(Tensor::new(vec![spec.out_channels], vec![0.0; spec.out_channels]));
    tensors.push(Tensor::new(vec![spec.out_channels], vec![1.0; spec.out_channels]));
    let p_in = spec.in_channels + COORD_CHANNELS;
    tensors.push(uniform_fan_in(&mut rng, vec![w, p_in], p_in, false));
    tensors.push(Tensor::param(vec![w], vec![0.0; w]));
    for _ in 0..spec.depth {
        match spec.architecture {
            Architecture::Fno => {
                tensors.push(uniform_fan_in(&mut rng, vec![w, w, m, m, 2], w, true));
                tensors.push(uniform_fan_in(&mut rng, vec![w, w, m, m, 2], w, true));
            }
            Architecture::Resnet => {
                tensors.push(uniform_fan_in(&mut rng, vec![w, w, 3, 3], 9 * w, false));
            }
        }
        tensors.push(uniform_fan_in(&mut rng, vec![w, w], w, false));
        tensors.push(Tensor::param(vec![w], vec![0.0; w]));
    }
    tensors.push(uniform_fan_in(&mut rng, vec![spec.out_channels, w], w, false));
    tensors.push(Tensor::param(vec![spec.out_channels], vec![0.0; spec.out_channels]));
    OperatorParams {
        spec: spec.clone(),
        tensors: tensors.into_iter().map(Arc::new).collect(),
    }
}

impl OperatorParams {
    pub fn tensors(&self) -> &[Arc<Tensor>] {
        &self.tensors
    }

    pub(crate) fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        Arc::make_mut(&mut self.tensors[i])
    }

    /// Trainable parameter count (normalization statistics excluded).
    pub fn num_params(&self) -> usize {
        self.tensors
            .iter()
            .filter(|t| t.requires_grad)
            .map(|t| t.len())
            .sum()
    }

    /// Trainable parameter values flattened in declaration order.
    pub fn flat_values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for t in self.tensors.iter().filter(|t| t.requires_grad) {
            out.extend_from_slice(&t.values);
        }
        out
    }

    /// Overwrites every trainable parameter from a flat buffer in
    /// declaration order.
    pub fn set_flat_values(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length mismatch");
        let mut offset = 0;
        for i in 0..self.tensors.len() {
            if !self.tensors[i].requires_grad {
                continue;
            }
            let t = self.tensor_mut(i);
            let len = t.values.len();
            t.values.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
    }

    /// Installs per-channel input/output normalization statistics.
    pub fn set_normalization(
        &mut self,
        input_shift: Vec<f64>,
        input_scale: Vec<f64>,
        output_shift: Vec<f64>,
        output_scale: Vec<f64>,
    ) {
        assert_eq!(input_shift.len(), self.spec.in_channels);
        assert_eq!(input_scale.len(), self.spec.in_channels);
        assert_eq!(output_shift.len(), self.spec.out_channels);
        assert_eq!(output_scale.len(), self.spec.out_channels);
        assert!(input_scale.iter().chain(&output_scale).all(|&s| s > 0.0));
        for (i, values) in [input_shift, input_scale, output_shift, output_scale]
            .into_iter()
            .enumerate()
        {
            self.tensor_mut(i).values = values;
        }
    }

    pub fn input_shift(&self) -> &[f64] {
        &self.tensors[0].values
    }

    pub fn input_scale(&self) -> &[f64] {
        &self.tensors[1].values
    }

    pub fn output_shift(&self) -> &[f64] {
        &self.tensors[2].values
    }

    pub fn output_scale(&self) -> &[f64] {
        &self.tensors[3].values
    }

    /// Zeroes the decoder `Q` (weights and bias); in residual mode the
    /// network output then collapses to exactly zero.
    pub fn zero_decoder(&mut self) {
        let n = self.tensors.len();
        for i in [n - 2, n - 1] {
            self.tensor_mut(i).values.fill(0.0);
        }
    }
}

/// Node handles for one registration of the parameters on a tape.
pub(crate) struct ParamNodes {
    pub ids: Vec<NodeId>,
}

pub(crate) fn register_params(tape: &mut Tape, params: &OperatorParams) -> ParamNodes {
    ParamNodes {
        ids: params.tensors.iter().map(|t| tape.leaf(t.clone())).collect(),
    }
}

/// Runs the network body on a tape, returning the decoder output node.
pub(crate) fn forward_on_tape(
    tape: &mut Tape,
    spec: &OperatorSpec,
    nodes: &ParamNodes,
    input: NodeId,
) -> NodeId {
    let act = |tape: &mut Tape, id: NodeId| match spec.activation {
        Activation::Gelu => tape.gelu(id),
        Activation::Relu => tape.relu(id),
    };
    let mut v = tape.channel_linear(input, nodes.ids[STATS_TENSORS], nodes.ids[STATS_TENSORS + 1]);
    let mut idx = STATS_TENSORS + 2;
    for _ in 0..spec.depth {
        let (kernel, consumed) = match spec.architecture {
            Architecture::Fno => (
                tape.spectral_conv(v, nodes.ids[idx], nodes.ids[idx + 1], spec.modes, spec.modes),
                2,
            ),
            Architecture::Resnet => {
                // Kernel path carries no bias; the local path's bias covers the layer.
                let zero_bias = tape.constant(Tensor::zeros(vec![spec.width]));
                (tape.conv3x3(v, nodes.ids[idx], zero_bias), 1)
            }
        };
        let local = tape.channel_linear(v, nodes.ids[idx + consumed], nodes.ids[idx + consumed + 1]);
        let summed = tape.add(kernel, local);
        v = act(tape, summed);
        idx += consumed + 2;
    }
    tape.channel_linear(v, nodes.ids[idx], nodes.ids[idx + 1])
}

pub(crate) fn tensor_from_field(field: &GridField) -> Tensor {
    let s = field.shape();
    Tensor::new(vec![s.channels, s.height, s.width], field.values().to_vec())
}

pub(crate) fn field_from_values(shape: GridShape, values: Vec<f64>) -> GridField {
    GridField::new(shape, values).expect("network produced non-finite values")
}

/// Raw network application; the returned buffer may contain non-finite
/// values when the parameters have diverged (evaluation handles that case
/// without panicking).
pub(crate) fn forward_values(
    params: &OperatorParams,
    input: &GridField,
    mode: TrainMode,
    aux_solution: Option<&GridField>,
) -> Vec<f64> {
    let s = input.shape();
    assert_eq!(s.channels, params.spec.in_channels, "input channel mismatch");
    params.spec.validate_for_resolution(s.height, s.width);
    let mut tape = Tape::new();
    let nodes = register_params(&mut tape, params);
    let x = tape.constant(normalized_input_tensor(params, input));
    let out = forward_on_tape(&mut tape, &params.spec, &nodes, x);
    // Decoder output is in normalized output units; rescale and anchor.
    let n = s.height * s.width;
    let mut values = tape.values(out).to_vec();
    let scale = params.output_scale();
    for (c, chunk) in values.chunks_exact_mut(n).enumerate() {
        for v in chunk.iter_mut() {
            *v *= scale[c];
        }
    }
    match mode {
        TrainMode::Direct => {
            let shift = params.output_shift();
            for (c, chunk) in values.chunks_exact_mut(n).enumerate() {
                for v in chunk.iter_mut() {
                    *v += shift[c];
                }
            }
        }
        TrainMode::Residual => {
            let aux = aux_solution.expect("residual mode requires an auxiliary solution");
            assert_eq!(aux.values().len(), values.len(), "auxiliary solution shape mismatch");
            for (v, a) in values.iter_mut().zip(aux.values()) {
                *v += a;
            }
        }
    }
    values
}

/// Applies the stored input normalization to a physical field and appends
/// the two grid-coordinate channels (x then y, inclusive over [0,1]).
pub(crate) fn normalized_input_tensor(params: &OperatorParams, input: &GridField) -> Tensor {
    let s = input.shape();
    let n = s.height * s.width;
    let shift = params.input_shift();
    let scale = params.input_scale();
    let mut values = input.values().to_vec();
    for (c, chunk) in values.chunks_exact_mut(n).enumerate() {
        for v in chunk.iter_mut() {
            *v = (*v - shift[c]) / scale[c];
        }
    }
    values.reserve(COORD_CHANNELS * n);
    for y in 0..s.height {
        for x in 0..s.width {
            let _ = y;
            values.push(x as f64 / (s.width - 1) as f64);
        }
    }
    for y in 0..s.height {
        for x in 0..s.width {
            let _ = x;
            values.push(y as f64 / (s.height - 1) as f64);
        }
    }
    Tensor::new(
        vec![s.channels + COORD_CHANNELS, s.height, s.width],
        values,
    )
}

/// Constant per-channel field tensor broadcast over an `h x w` grid.
pub(crate) fn broadcast_channels(per_channel: &[f64], h: usize, w: usize) -> Tensor {
    let n = h * w;
    let mut values = Vec::with_capacity(per_channel.len() * n);
    for &v in per_channel {
        values.extend(std::iter::repeat_n(v, n));
    }
    Tensor::new(vec![per_channel.len(), h, w], values)
}

/// Applies the network to one input field. In residual mode the auxiliary
/// solution is added to the decoder output (trajectory residual connection).
pub fn forward(
    params: &OperatorParams,
    input: &GridField,
    mode: TrainMode,
    aux_solution: Option<&GridField>,
) -> GridField {
    let s = input.shape();
    let out_shape = GridShape::new(s.height, s.width, params.spec.out_channels)
        .expect("valid output shape");
    field_from_values(out_shape, forward_values(params, input, mode, aux_solution))
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"DPHM";
const CHECKPOINT_VERSION: u32 = 1;

/// Writes `DPHM`, version, the spec fields, then every parameter tensor as
/// little-endian f64 in declaration order. Round-trips are bit-exact.
pub fn save_model(params: &OperatorParams, path: &Path) -> Result<()> {
    let spec = &params.spec;
    let mut bytes = Vec::with_capacity(40 + 8 * params.num_params());
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    for v in [
        CHECKPOINT_VERSION,
        match spec.architecture {
            Architecture::Fno => 0,
            Architecture::Resnet => 1,
        },
        spec.width as u32,
        spec.depth as u32,
        spec.modes as u32,
        spec.in_channels as u32,
        spec.out_channels as u32,
        match spec.activation {
            Activation::Gelu => 0,
            Activation::Relu => 1,
        },
    ] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for t in &params.tensors {
        for &v in &t.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<OperatorParams> {
    let bytes = std::fs::read(path)?;
    let parse_err = |offset: usize, reason: String| ModelError::Parse { offset, reason };
    if bytes.len() < 36 {
        return Err(parse_err(bytes.len(), "truncated header".into()));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(parse_err(0, format!("bad magic {:?}", &bytes[..4])));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().expect("bounds checked"));
    if u32_at(4) != CHECKPOINT_VERSION {
        return Err(parse_err(4, format!("unsupported version {}", u32_at(4))));
    }
    let architecture = match u32_at(8) {
        0 => Architecture::Fno,
        1 => Architecture::Resnet,
        other => return Err(parse_err(8, format!("unknown architecture tag {other}"))),
    };
    let activation = match u32_at(32) {
        0 => Activation::Gelu,
        1 => Activation::Relu,
        other => return Err(parse_err(32, format!("unknown activation tag {other}"))),
    };
    let spec = OperatorSpec {
        architecture,
        width: u32_at(12) as usize,
        depth: u32_at(16) as usize,
        modes: u32_at(20) as usize,
        in_channels: u32_at(24) as usize,
        out_channels: u32_at(28) as usize,
        activation,
    };
    spec.validate();

    // Template gives the per-tensor shapes; values are then read in order.
    let template = init_model(&spec, 0);
    let mut offset = 36;
    let mut tensors = Vec::with_capacity(template.tensors.len());
    for t in &template.tensors {
        let need = t.len() * 8;
        if offset + need > bytes.len() {
            return Err(parse_err(
                offset,
                format!("truncated parameters: need {need} bytes, {} left", bytes.len() - offset),
            ));
        }
        let values: Vec<f64> = bytes[offset..offset + need]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunked")))
            .collect();
        offset += need;
        let mut tensor = Tensor::new(t.shape.clone(), values);
        tensor.requires_grad = t.requires_grad;
        tensors.push(Arc::new(tensor));
    }
    if offset != bytes.len() {
        return Err(parse_err(offset, format!("{} trailing bytes", bytes.len() - offset)));
    }
    Ok(OperatorParams { spec, tensors })
}
