//! Multi-channel scalar fields on uniform rectangular grids over `[0,1]²`,
//! with the Fourier resampling and error metrics shared by every other module.
//!
//! Values are stored channel-major, row-major: `values[c*h*w + y*w + x]`.

use crate::fft::{fft2_real, ifft2_real_part, signed_freq};
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("invalid grid shape {height}x{width}x{channels}: need height,width >= 2 and channels >= 1")]
    BadShape {
        height: usize,
        width: usize,
        channels: usize,
    },
    #[error("value buffer has length {found}, shape requires {expected}")]
    BadLength { expected: usize, found: usize },
    #[error("field contains a non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("shape mismatch: {left} vs {right}")]
    ShapeMismatch { left: GridShape, right: GridShape },
    #[error("channel count mismatch: {left} vs {right}")]
    ChannelMismatch { left: usize, right: usize },
    #[error("degenerate input: reference field has zero norm")]
    ZeroNormTruth,
}

pub type Result<T> = std::result::Result<T, FieldError>;

/// Grid dimensions of a discretized field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl GridShape {
    pub fn new(height: usize, width: usize, channels: usize) -> Result<Self> {
        if height < 2 || width < 2 || channels < 1 {
            return Err(FieldError::BadShape {
                height,
                width,
                channels,
            });
        }
        Ok(Self {
            height,
            width,
            channels,
        })
    }

    /// Total number of stored values.
    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Points per channel.
    pub fn spatial_len(&self) -> usize {
        self.height * self.width
    }

    pub fn with_channels(&self, channels: usize) -> Result<Self> {
        Self::new(self.height, self.width, channels)
    }
}

impl std::fmt::Display for GridShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// A discretized multi-channel function field on the unit square.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    shape: GridShape,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(shape: GridShape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(FieldError::BadLength {
                expected: shape.len(),
                found: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(FieldError::NonFinite { index });
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: GridShape) -> Self {
        Self {
            values: vec![0.0; shape.len()],
            shape,
        }
    }

    pub fn constant(shape: GridShape, value: f64) -> Self {
        Self {
            values: vec![value; shape.len()],
            shape,
        }
    }

    /// Builds a field from a function of (channel, y, x) grid indices.
    pub fn from_fn(shape: GridShape, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(shape.len());
        for c in 0..shape.channels {
            for y in 0..shape.height {
                for x in 0..shape.width {
                    values.push(f(c, y, x));
                }
            }
        }
        Self { shape, values }
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.values[(c * self.shape.height + y) * self.shape.width + x]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.shape.spatial_len();
        &self.values[c * n..(c + 1) * n]
    }

    /// A new field containing the channel range `[from, to)`.
    pub fn select_channels(&self, from: usize, to: usize) -> Result<Self> {
        assert!(from < to && to <= self.shape.channels, "bad channel range");
        let shape = self.shape.with_channels(to - from)?;
        let n = self.shape.spatial_len();
        Ok(Self {
            shape,
            values: self.values[from * n..to * n].to_vec(),
        })
    }

    /// Concatenates fields along the channel dimension.
    pub fn concat_channels(parts: &[&GridField]) -> Result<Self> {
        assert!(!parts.is_empty(), "nothing to concatenate");
        let first = parts[0].shape;
        let mut channels = 0;
        for p in parts {
            if (p.shape.height, p.shape.width) != (first.height, first.width) {
                return Err(FieldError::ShapeMismatch {
                    left: first,
                    right: p.shape,
                });
            }
            channels += p.shape.channels;
        }
        let shape = first.with_channels(channels)?;
        let mut values = Vec::with_capacity(shape.len());
        for p in parts {
            values.extend_from_slice(&p.values);
        }
        Ok(Self { shape, values })
    }

    pub fn add(&self, other: &GridField) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &GridField) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &GridField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(FieldError::ShapeMismatch {
                left: self.shape,
                right: other.shape,
            });
        }
        let values = self
            .values
            .iter()
            .zip(other.values.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self {
            shape: self.shape,
            values,
        })
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &GridField) -> f64 {
        self.values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Relative L2 error `‖pred − truth‖₂ / ‖truth‖₂` over all channels and points.
pub fn relative_l2(pred: &GridField, truth: &GridField) -> Result<f64> {
    if pred.shape != truth.shape {
        return Err(FieldError::ShapeMismatch {
            left: pred.shape,
            right: truth.shape,
        });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, t) in pred.values.iter().zip(truth.values.iter()) {
        num += (p - t) * (p - t);
        den += t * t;
    }
    if den <= 0.0 {
        return Err(FieldError::ZeroNormTruth);
    }
    Ok((num / den).sqrt())
}

/// Per-axis resampling map: for each source bin, the target bins it feeds and
/// the weight of the contribution. Even-length source Nyquist bins are split
/// over `±n/2`; aliased target Nyquist contributions accumulate, so an
/// upsample followed by the matching downsample is exact.
fn axis_map(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    // Largest |signed frequency| the target grid can hold; even targets keep
    // ±dst/2 as one aliased Nyquist bin.
    let limit = (dst / 2) as i64;
    let mut map = vec![Vec::new(); src];
    for (k, entry) in map.iter_mut().enumerate() {
        let f = signed_freq(k, src);
        let candidates: &[(i64, f64)] = if src % 2 == 0 && k == src / 2 {
            &[(f, 0.5), (-f, 0.5)]
        } else {
            &[(f, 1.0)]
        };
        for &(g, weight) in candidates {
            if g.abs() <= limit {
                let bin = g.rem_euclid(dst as i64) as usize;
                entry.push((bin, weight));
            }
        }
    }
    map
}

/// Spectral resampling: per channel, zero-pad or truncate the symmetric
/// frequency blocks of the 2D spectrum to the target grid, then inverse
/// transform. A constant field maps to the same constant.
pub fn fourier_resample(field: &GridField, target: GridShape) -> Result<GridField> {
    let src = field.shape();
    if src.channels != target.channels {
        return Err(FieldError::ChannelMismatch {
            left: src.channels,
            right: target.channels,
        });
    }
    let row_map = axis_map(src.height, target.height);
    let col_map = axis_map(src.width, target.width);
    let norm = (src.height * src.width) as f64;
    let mut out = Vec::with_capacity(target.len());
    for c in 0..src.channels {
        let spectrum = fft2_real(field.channel(c), src.height, src.width);
        let mut resampled = vec![Complex64::default(); target.height * target.width];
        for ky in 0..src.height {
            for kx in 0..src.width {
                let v = spectrum[ky * src.width + kx];
                for &(ty, wy) in &row_map[ky] {
                    for &(tx, wx) in &col_map[kx] {
                        resampled[ty * target.width + tx] += v * (wy * wx);
                    }
                }
            }
        }
        out.extend(ifft2_real_part(
            &resampled,
            target.height,
            target.width,
            norm,
        ));
    }
    Ok(GridField {
        shape: target,
        values: out,
    })
}

/// A flattened, mean-centered, L2-normalized view of a field.
#[derive(Debug, Clone)]
pub struct NormalizedField {
    pub values: Vec<f64>,
    /// True when the field had (numerically) zero variance; `values` is then all zeros.
    pub degenerate: bool,
}

const DEGENERACY_EPS: f64 = 1e-12;

/// Flattens all channels, subtracts the mean, and divides by the L2 norm.
/// Constant fields are degenerate and map to the zero vector.
pub fn flatten_normalized(field: &GridField) -> NormalizedField {
    let n = field.values.len() as f64;
    let mean = field.values.iter().sum::<f64>() / n;
    let mut values: Vec<f64> = field.values.iter().map(|v| v - mean).collect();
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < DEGENERACY_EPS {
        return NormalizedField {
            values: vec![0.0; values.len()],
            degenerate: true,
        };
    }
    for v in &mut values {
        *v /= norm;
    }
    NormalizedField {
        values,
        degenerate: false,
    }
}
