//! Synthetic desk-scale PDE datasets with trusted numerical oracles.
//!
//! Two generators are provided: a steady Darcy-style diffusion problem with a
//! two-level random coefficient (solved by finite differences + conjugate
//! gradient), and a periodic 2D diffusion-advection time series (spectral
//! stepping). Datasets serialize to a flat little-endian binary format.

mod darcy;
mod io;
mod timeseries;

pub use darcy::{relative_residual, solve_darcy, solve_darcy_field};
pub use io::{load_dataset, save_dataset};
pub use timeseries::{evolve, generate_timeseries, VelocityField};

use crate::fft::{fft2_real, ifft2_real_part, signed_freq};
use crate::field::{FieldError, GridField, GridShape};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("conjugate gradient did not converge: residual {residual:.3e} after {iterations} iterations")]
    SolveDidNotConverge { iterations: usize, residual: f64 },
    #[error("time stepping unstable at step {step}: norm grew by {growth:.2}x")]
    Unstable { step: usize, growth: f64 },
    #[error("dataset parse failure at byte offset {offset}: {reason}")]
    Parse { offset: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Field(#[from] FieldError),
}

pub type Result<T> = std::result::Result<T, DatagenError>;

/// Configuration of the steady Darcy-style dataset.
#[derive(Debug, Clone)]
pub struct DarcyConfig {
    /// Square grid resolution (boundary points included).
    pub resolution: usize,
    pub num_samples: usize,
    pub seed: u64,
    pub coefficient_low: f64,
    pub coefficient_high: f64,
    /// Length scale of the underlying Gaussian random field.
    pub correlation_length: f64,
}

impl DarcyConfig {
    pub fn validate(&self) {
        assert!(self.resolution >= 8, "resolution must be at least 8");
        assert!(self.num_samples >= 1, "need at least one sample");
        assert!(
            self.coefficient_low > 0.0 && self.coefficient_low < self.coefficient_high,
            "need 0 < coefficient_low < coefficient_high"
        );
        assert!(self.correlation_length > 0.0, "correlation length must be positive");
    }
}

/// Configuration of the diffusion-advection time-series dataset.
#[derive(Debug, Clone)]
pub struct TimeSeriesConfig {
    pub resolution: usize,
    pub num_samples: usize,
    pub seed: u64,
    /// History steps forming the input field (channels 1..=input_steps).
    pub input_steps: usize,
    /// Forecast steps forming the output field.
    pub output_steps: usize,
    pub viscosity: f64,
    pub dt: f64,
}

impl Default for TimeSeriesConfig {
    fn default() -> Self {
        Self {
            resolution: 32,
            num_samples: 16,
            seed: 0,
            input_steps: 10,
            output_steps: 10,
            viscosity: 1e-3,
            dt: 0.008,
        }
    }
}

impl TimeSeriesConfig {
    pub fn validate(&self) {
        assert!(self.resolution >= 8, "resolution must be at least 8");
        assert!(self.num_samples >= 1, "need at least one sample");
        assert!(
            self.input_steps >= 3,
            "input_steps must be >= 3 (the partial-channel policy keeps the last 3)"
        );
        assert!(self.output_steps >= 1, "need at least one output step");
        assert!(self.viscosity > 0.0 && self.dt > 0.0, "rates must be positive");
        // Advective CFL guard for the explicit part of the spectral step.
        let k_max = std::f64::consts::PI * self.resolution as f64;
        assert!(
            self.dt * k_max <= 1.5,
            "dt {} too large for resolution {} (explicit advection unstable)",
            self.dt,
            self.resolution
        );
    }
}

/// One input/output function pair.
#[derive(Debug, Clone)]
pub struct TrajectorySample {
    pub input: GridField,
    pub output: GridField,
    pub id: usize,
}

/// An ordered collection of trajectory samples with uniform shapes.
#[derive(Debug, Clone)]
pub struct Dataset {
    samples: Vec<TrajectorySample>,
}

impl Dataset {
    pub fn new(samples: Vec<TrajectorySample>) -> Self {
        assert!(!samples.is_empty(), "dataset must be nonempty");
        let in_shape = samples[0].input.shape();
        let out_shape = samples[0].output.shape();
        for s in &samples {
            assert_eq!(s.input.shape(), in_shape, "non-uniform input shapes");
            assert_eq!(s.output.shape(), out_shape, "non-uniform output shapes");
            assert_eq!(
                (in_shape.height, in_shape.width),
                (s.output.shape().height, s.output.shape().width),
                "input and output must share spatial shape"
            );
        }
        Self { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[TrajectorySample] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &TrajectorySample {
        &self.samples[i]
    }

    pub fn input_shape(&self) -> GridShape {
        self.samples[0].input.shape()
    }

    pub fn output_shape(&self) -> GridShape {
        self.samples[0].output.shape()
    }

    /// Splits into the first `n_train` samples and the `n_test` samples that
    /// follow them; sample ids are preserved.
    pub fn split(&self, n_train: usize, n_test: usize) -> (Dataset, Dataset) {
        assert!(
            n_train + n_test <= self.len(),
            "split {}+{} exceeds dataset size {}",
            n_train,
            n_test,
            self.len()
        );
        let train = Dataset::new(self.samples[..n_train].to_vec());
        let test = Dataset::new(self.samples[n_train..n_train + n_test].to_vec());
        (train, test)
    }
}

/// Smooth Gaussian random field via spectral synthesis: iid normals filtered
/// by `exp(-(π ℓ |f|)²)`.
fn gaussian_random_field(rng: &mut ChaCha8Rng, n: usize, correlation_length: f64) -> Vec<f64> {
    let white: Vec<f64> = (0..n * n).map(|_| rng.sample(StandardNormal)).collect();
    let mut spec = fft2_real(&white, n, n);
    let scale = std::f64::consts::PI * correlation_length;
    for ky in 0..n {
        let fy = signed_freq(ky, n) as f64;
        for kx in 0..n {
            let fx = signed_freq(kx, n) as f64;
            let damp = (-(scale * scale) * (fy * fy + fx * fx)).exp();
            spec[ky * n + kx] *= damp;
        }
    }
    ifft2_real_part(&spec, n, n, (n * n) as f64)
}

/// A smooth random scalar field, exposed for synthetic tasks and tests.
pub fn smooth_random_field(resolution: usize, correlation_length: f64, seed: u64) -> GridField {
    assert!(resolution >= 4, "resolution too small");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = gaussian_random_field(&mut rng, resolution, correlation_length);
    let shape = GridShape::new(resolution, resolution, 1).expect("valid shape");
    GridField::new(shape, values).expect("finite values")
}

/// Piecewise two-level diffusion coefficient: a smooth random field
/// thresholded at its median, mapping to `coefficient_high` above and
/// `coefficient_low` below.
pub fn generate_darcy_coefficient(config: &DarcyConfig, index: usize) -> GridField {
    config.validate();
    assert!(index < config.num_samples, "sample index out of range");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ index as u64);
    let n = config.resolution;
    let smooth = gaussian_random_field(&mut rng, n, config.correlation_length);
    let mut sorted = smooth.clone();
    sorted.sort_by(f64::total_cmp);
    let median = 0.5 * (sorted[n * n / 2 - 1] + sorted[n * n / 2]);
    let values = smooth
        .iter()
        .map(|&v| {
            if v > median {
                config.coefficient_high
            } else {
                config.coefficient_low
            }
        })
        .collect();
    let shape = GridShape::new(n, n, 1).expect("validated resolution");
    GridField::new(shape, values).expect("finite coefficient values")
}

/// Generates the full Darcy dataset: thresholded coefficients as inputs,
/// pressure solutions under constant forcing as outputs.
pub fn generate_darcy_dataset(config: &DarcyConfig, forcing: f64) -> Result<Dataset> {
    config.validate();
    let mut samples = Vec::with_capacity(config.num_samples);
    for index in 0..config.num_samples {
        let input = generate_darcy_coefficient(config, index);
        let output = solve_darcy(&input, forcing)?;
        samples.push(TrajectorySample { input, output, id: index });
    }
    Ok(Dataset::new(samples))
}

/// Generates the diffusion-advection time-series dataset.
pub fn generate_timeseries_dataset(config: &TimeSeriesConfig) -> Result<Dataset> {
    config.validate();
    let mut samples = Vec::with_capacity(config.num_samples);
    for index in 0..config.num_samples {
        samples.push(generate_timeseries(config, index)?);
    }
    Ok(Dataset::new(samples))
}
