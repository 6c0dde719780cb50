//! Truncated-mode spectral convolution and its exact adjoint.
//!
//! Layout: the input `[ci,h,w]` is transformed per channel with an
//! unnormalized 2D FFT. Learnable complex weights act on the corner blocks of
//! the half spectrum — rows `0..modes_h` (`w_pos`) and `h-modes_h..h`
//! (`w_neg`), columns `0..modes_w` — and the remaining bins are filled by
//! Hermitian symmetry (column 0 is Hermitian-projected), so the inverse
//! transform is exactly real.

use super::Tensor;
use crate::fft::{fft2_real, ifft2_real_part};
use num_complex::Complex64;

pub(super) struct Adjoints {
    pub x: Option<Vec<f64>>,
    pub w_pos: Option<Vec<f64>>,
    pub w_neg: Option<Vec<f64>>,
}

struct Geometry {
    ci: usize,
    co: usize,
    h: usize,
    w: usize,
    modes_h: usize,
    modes_w: usize,
    /// Flat spectrum index of every direct block bin, `w_pos` block first.
    bins: Vec<usize>,
}

impl Geometry {
    fn new(tx: &Tensor, tp: &Tensor, tn: &Tensor, modes_h: usize, modes_w: usize) -> Self {
        assert_eq!(tx.shape.len(), 3, "spectral_conv input must be [c,h,w]");
        let (ci, h, w) = (tx.shape[0], tx.shape[1], tx.shape[2]);
        assert!(
            modes_h >= 1 && modes_w >= 1 && 2 * modes_h <= h && 2 * modes_w <= w,
            "modes ({modes_h},{modes_w}) exceed the Nyquist limit of a {h}x{w} grid"
        );
        let co = tp.shape[0];
        for t in [tp, tn] {
            assert_eq!(
                t.shape,
                vec![co, ci, modes_h, modes_w, 2],
                "spectral weight shape mismatch"
            );
        }
        let mut bins = Vec::with_capacity(2 * modes_h * modes_w);
        for r in 0..modes_h {
            for c in 0..modes_w {
                bins.push(r * w + c);
            }
        }
        for r in (h - modes_h)..h {
            for c in 0..modes_w {
                bins.push(r * w + c);
            }
        }
        Self {
            ci,
            co,
            h,
            w,
            modes_h,
            modes_w,
            bins,
        }
    }

    fn block_len(&self) -> usize {
        2 * self.modes_h * self.modes_w
    }

    fn row_col(&self, j: usize) -> (usize, usize) {
        let bin = self.bins[j];
        (bin / self.w, bin % self.w)
    }

    fn mirror(&self, r: usize, c: usize) -> usize {
        ((self.h - r) % self.h) * self.w + ((self.w - c) % self.w)
    }
}

fn weight_at(tp: &Tensor, tn: &Tensor, geo: &Geometry, o: usize, i: usize, j: usize) -> Complex64 {
    let half = geo.block_len() / 2;
    let (tensor, jj) = if j < half { (tp, j) } else { (tn, j - half) };
    let base = (((o * geo.ci + i) * half) + jj) * 2;
    Complex64::new(tensor.values[base], tensor.values[base + 1])
}

pub(super) fn forward(
    tx: &Tensor,
    tp: &Tensor,
    tn: &Tensor,
    modes_h: usize,
    modes_w: usize,
) -> (Tensor, Vec<Complex64>) {
    let geo = Geometry::new(tx, tp, tn, modes_h, modes_w);
    let (h, w, n) = (geo.h, geo.w, geo.h * geo.w);
    let block = geo.block_len();

    // Only the block bins are kept for the adjoint; the rest of the input
    // spectrum never enters the weight gradient.
    let mut blk_x = vec![Complex64::default(); geo.ci * block];
    for i in 0..geo.ci {
        let spec = fft2_real(&tx.values[i * n..(i + 1) * n], h, w);
        for (j, &bin) in geo.bins.iter().enumerate() {
            blk_x[i * block + j] = spec[bin];
        }
    }

    let mut out = Vec::with_capacity(geo.co * n);
    let mut acc = vec![Complex64::default(); block];
    let mut z = vec![Complex64::default(); n];
    let mut col0 = vec![Complex64::default(); h];
    for o in 0..geo.co {
        acc.fill(Complex64::default());
        for i in 0..geo.ci {
            let xb = &blk_x[i * block..(i + 1) * block];
            for (j, a) in acc.iter_mut().enumerate() {
                *a += weight_at(tp, tn, &geo, o, i, j) * xb[j];
            }
        }
        z.fill(Complex64::default());
        col0.fill(Complex64::default());
        for (j, &a) in acc.iter().enumerate() {
            let (r, c) = geo.row_col(j);
            if c == 0 {
                col0[r] = a;
            } else {
                z[r * w + c] = a;
                z[geo.mirror(r, c)] = a.conj();
            }
        }
        // Hermitian projection of column 0 keeps the inverse transform real.
        for r in 0..h {
            let paired = col0[(h - r) % h].conj();
            z[r * w] = 0.5 * (col0[r] + paired);
        }
        out.extend(ifft2_real_part(&z, h, w, n as f64));
    }

    (Tensor::new(vec![geo.co, h, w], out), blk_x)
}

#[allow(clippy::too_many_arguments)]
pub(super) fn backward(
    g: &[f64],
    tx: &Tensor,
    tp: &Tensor,
    tn: &Tensor,
    modes_h: usize,
    modes_w: usize,
    input_block: &[Complex64],
    need_x: bool,
    need_w: bool,
) -> Adjoints {
    let geo = Geometry::new(tx, tp, tn, modes_h, modes_w);
    let (h, w, n) = (geo.h, geo.w, geo.h * geo.w);
    let block = geo.block_len();
    let half = block / 2;

    let mut grad_pos = need_w.then(|| vec![0.0; tp.len()]);
    let mut grad_neg = need_w.then(|| vec![0.0; tn.len()]);
    let mut xbar = need_x.then(|| vec![Complex64::default(); geo.ci * n]);

    let mut ybar = vec![Complex64::default(); block];
    for o in 0..geo.co {
        // Adjoint of the normalized inverse transform and of the Hermitian
        // completion, evaluated on the direct block bins only.
        let zbar: Vec<Complex64> = fft2_real(&g[o * n..(o + 1) * n], h, w)
            .into_iter()
            .map(|v| v / n as f64)
            .collect();
        for (j, y) in ybar.iter_mut().enumerate() {
            let (r, c) = geo.row_col(j);
            *y = if c == 0 {
                0.5 * zbar[r * w] + 0.5 * zbar[((h - r) % h) * w].conj()
            } else {
                zbar[r * w + c] + zbar[geo.mirror(r, c)].conj()
            };
        }
        for i in 0..geo.ci {
            let xs = &input_block[i * block..(i + 1) * block];
            if let (Some(gp), Some(gn)) = (grad_pos.as_mut(), grad_neg.as_mut()) {
                for (j, &y) in ybar.iter().enumerate() {
                    let gw = xs[j].conj() * y;
                    let (buf, jj) = if j < half {
                        (&mut *gp, j)
                    } else {
                        (&mut *gn, j - half)
                    };
                    let base = (((o * geo.ci + i) * half) + jj) * 2;
                    buf[base] += gw.re;
                    buf[base + 1] += gw.im;
                }
            }
            if let Some(xb) = xbar.as_mut() {
                for (j, &y) in ybar.iter().enumerate() {
                    xb[i * n + geo.bins[j]] += weight_at(tp, tn, &geo, o, i, j).conj() * y;
                }
            }
        }
    }

    let grad_x = xbar.map(|xb| {
        let mut out = Vec::with_capacity(geo.ci * n);
        for i in 0..geo.ci {
            // Adjoint of the unnormalized forward FFT on a real input.
            out.extend(ifft2_real_part(&xb[i * n..(i + 1) * n], h, w, 1.0));
        }
        out
    });

    Adjoints {
        x: grad_x,
        w_pos: grad_pos,
        w_neg: grad_neg,
    }
}
