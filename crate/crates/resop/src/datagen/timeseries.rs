//! Periodic 2D diffusion-advection time series with spectral stepping.
//!
//! A smooth random scalar is transported by a fixed divergence-free velocity
//! field and diffused. Diffusion is integrated exactly in Fourier space
//! (integrating factor); advection uses an explicit midpoint step. The mean
//! mode of the advection tendency is zeroed each evaluation, so the scalar's
//! total integral is conserved exactly as divergence-free transport demands.
//!
//! Grid convention here is periodic: point `j` sits at `j/n`.

use super::{gaussian_random_field, DatagenError, Result, TimeSeriesConfig, TrajectorySample};
use crate::fft::{fft2_inplace, signed_freq};
use crate::field::{GridField, GridShape};
use num_complex::Complex64;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

/// A sampled velocity field on the periodic grid.
#[derive(Debug, Clone)]
pub struct VelocityField {
    pub vx: Vec<f64>,
    pub vy: Vec<f64>,
    pub n: usize,
}

impl VelocityField {
    /// The fixed cellular flow `v = (sin 2πx cos 2πy, −cos 2πx sin 2πy)`,
    /// divergence-free with unit peak speed.
    pub fn cellular(n: usize) -> Self {
        let mut vx = vec![0.0; n * n];
        let mut vy = vec![0.0; n * n];
        for y in 0..n {
            let fy = 2.0 * PI * y as f64 / n as f64;
            for x in 0..n {
                let fx = 2.0 * PI * x as f64 / n as f64;
                vx[y * n + x] = fx.sin() * fy.cos();
                vy[y * n + x] = -fx.cos() * fy.sin();
            }
        }
        Self { vx, vy, n }
    }

    /// Zero velocity (pure diffusion), used by oracle tests.
    pub fn still(n: usize) -> Self {
        Self {
            vx: vec![0.0; n * n],
            vy: vec![0.0; n * n],
            n,
        }
    }
}

struct Spectral {
    n: usize,
    /// Angular wavenumbers per axis bin.
    k: Vec<f64>,
    /// exp(−ν k² dt) and exp(−ν k² dt/2).
    decay_full: Vec<f64>,
    decay_half: Vec<f64>,
}

impl Spectral {
    fn new(n: usize, viscosity: f64, dt: f64) -> Self {
        let k: Vec<f64> = (0..n).map(|i| 2.0 * PI * signed_freq(i, n) as f64).collect();
        let mut decay_full = vec![0.0; n * n];
        let mut decay_half = vec![0.0; n * n];
        for y in 0..n {
            for x in 0..n {
                let k2 = k[y] * k[y] + k[x] * k[x];
                decay_full[y * n + x] = (-viscosity * k2 * dt).exp();
                decay_half[y * n + x] = (-viscosity * k2 * dt * 0.5).exp();
            }
        }
        Self {
            n,
            k,
            decay_full,
            decay_half,
        }
    }

    fn to_physical(&self, spec: &[Complex64]) -> Vec<f64> {
        let mut buf = spec.to_vec();
        fft2_inplace(&mut buf, self.n, self.n, false);
        let norm = (self.n * self.n) as f64;
        buf.iter().map(|c| c.re / norm).collect()
    }

    fn to_spectral(&self, phys: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = phys.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft2_inplace(&mut buf, self.n, self.n, true);
        buf
    }

    /// Advection tendency `−v·∇w` in spectral space, with the mean mode
    /// zeroed (divergence-free transport cannot change the mean).
    fn advection(&self, spec: &[Complex64], velocity: &VelocityField) -> Vec<Complex64> {
        let n = self.n;
        let mut dx = vec![Complex64::default(); n * n];
        let mut dy = vec![Complex64::default(); n * n];
        let i = Complex64::new(0.0, 1.0);
        for y in 0..n {
            for x in 0..n {
                let idx = y * n + x;
                dx[idx] = i * self.k[x] * spec[idx];
                dy[idx] = i * self.k[y] * spec[idx];
            }
        }
        let dx_phys = self.to_physical(&dx);
        let dy_phys = self.to_physical(&dy);
        let tendency: Vec<f64> = (0..n * n)
            .map(|idx| -(velocity.vx[idx] * dx_phys[idx] + velocity.vy[idx] * dy_phys[idx]))
            .collect();
        let mut out = self.to_spectral(&tendency);
        out[0] = Complex64::default();
        out
    }
}

/// One integrating-factor midpoint step of the diffusion-advection equation,
/// operating on and returning the spectral state.
fn diffusion_advection_step(
    spec: &[Complex64],
    velocity: &VelocityField,
    ops: &Spectral,
    dt: f64,
) -> Vec<Complex64> {
    let n2 = ops.n * ops.n;
    let k1 = ops.advection(spec, velocity);
    let mid: Vec<Complex64> = (0..n2)
        .map(|i| ops.decay_half[i] * (spec[i] + 0.5 * dt * k1[i]))
        .collect();
    let k2 = ops.advection(&mid, velocity);
    (0..n2)
        .map(|i| ops.decay_full[i] * spec[i] + dt * ops.decay_half[i] * k2[i])
        .collect()
}

/// Evolves an initial scalar for `steps` steps, returning the physical state
/// after every step (the initial state is not included).
pub fn evolve(
    initial: &[f64],
    velocity: &VelocityField,
    config: &TimeSeriesConfig,
    steps: usize,
) -> Result<Vec<Vec<f64>>> {
    let n = config.resolution;
    let ops = Spectral::new(n, config.viscosity, config.dt);
    let mut spec = ops.to_spectral(initial);
    let norm0 = initial.iter().map(|v| v * v).sum::<f64>().sqrt();
    let guard = 10.0 * norm0.max(1e-12);
    let mut states = Vec::with_capacity(steps);
    for step in 0..steps {
        spec = diffusion_advection_step(&spec, velocity, &ops, config.dt);
        let phys = ops.to_physical(&spec);
        let norm = phys.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > guard {
            return Err(DatagenError::Unstable {
                step: step + 1,
                growth: norm / norm0.max(1e-300),
            });
        }
        states.push(phys);
    }
    Ok(states)
}

/// Generates one trajectory: the first `input_steps` recorded states form the
/// input channels, the next `output_steps` the output channels.
pub fn generate_timeseries(config: &TimeSeriesConfig, index: usize) -> Result<TrajectorySample> {
    config.validate();
    assert!(index < config.num_samples, "sample index out of range");
    let n = config.resolution;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ index as u64);
    let initial = gaussian_random_field(&mut rng, n, 0.2);
    let velocity = VelocityField::cellular(n);

    let total = config.input_steps + config.output_steps - 1;
    let states = evolve(&initial, &velocity, config, total)?;

    let mut input_values = Vec::with_capacity(config.input_steps * n * n);
    input_values.extend_from_slice(&initial);
    for s in &states[..config.input_steps - 1] {
        input_values.extend_from_slice(s);
    }
    let mut output_values = Vec::with_capacity(config.output_steps * n * n);
    for s in &states[config.input_steps - 1..] {
        output_values.extend_from_slice(s);
    }

    let in_shape = GridShape::new(n, n, config.input_steps).expect("valid shape");
    let out_shape = GridShape::new(n, n, config.output_steps).expect("valid shape");
    Ok(TrajectorySample {
        input: GridField::new(in_shape, input_values)?,
        output: GridField::new(out_shape, output_values)?,
        id: index,
    })
}
