//! Shared 2D FFT helpers on row-major complex buffers.
//!
//! rustfft plans are cached per (length, direction) in a thread-local map so
//! hot loops (spectral layers, data generation) do not replan every call.

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};
use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

thread_local! {
    static PLANS: RefCell<HashMap<(usize, bool), Arc<dyn Fft<f64>>>> = RefCell::new(HashMap::new());
}

fn plan(len: usize, forward: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|cache| {
        cache
            .borrow_mut()
            .entry((len, forward))
            .or_insert_with(|| {
                let dir = if forward {
                    FftDirection::Forward
                } else {
                    FftDirection::Inverse
                };
                FftPlanner::new().plan_fft(len, dir)
            })
            .clone()
    })
}

/// Unnormalized in-place 2D FFT of a `height x width` row-major buffer.
pub fn fft2_inplace(data: &mut [Complex64], height: usize, width: usize, forward: bool) {
    assert_eq!(data.len(), height * width, "fft2 buffer size mismatch");
    let row_fft = plan(width, forward);
    for row in data.chunks_exact_mut(width) {
        row_fft.process(row);
    }
    let col_fft = plan(height, forward);
    let mut col = vec![Complex64::default(); height];
    for x in 0..width {
        for y in 0..height {
            col[y] = data[y * width + x];
        }
        col_fft.process(&mut col);
        for y in 0..height {
            data[y * width + x] = col[y];
        }
    }
}

/// Forward unnormalized 2D FFT of a real row-major buffer.
pub fn fft2_real(values: &[f64], height: usize, width: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_inplace(&mut buf, height, width, true);
    buf
}

/// Inverse 2D FFT scaled by `1 / norm`, returning only the real parts.
pub fn ifft2_real_part(spectrum: &[Complex64], height: usize, width: usize, norm: f64) -> Vec<f64> {
    let mut buf = spectrum.to_vec();
    fft2_inplace(&mut buf, height, width, false);
    buf.iter().map(|c| c.re / norm).collect()
}

/// Signed frequency of bin `k` on an axis of length `n` (even-`n` Nyquist maps to `+n/2`).
pub fn signed_freq(k: usize, n: usize) -> i64 {
    let k = k as i64;
    let n = n as i64;
    if k <= n / 2 {
        k
    } else {
        k - n
    }
}
