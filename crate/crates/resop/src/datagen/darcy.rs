//! Finite-difference solver for the steady diffusion equation
//! `-∇·(a ∇u) = f` on `[0,1]²` with zero Dirichlet boundary.
//!
//! Standard 5-point stencil with harmonic-mean edge coefficients; the
//! resulting SPD system is solved with plain conjugate gradient.

use super::{DatagenError, Result};
use crate::field::{GridField, GridShape};

/// Harmonic mean of two cell coefficients, the flux-continuous edge value.
fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// Dot product folded symmetrically within each row, so that mirroring both
/// arguments left-right reproduces the exact same floating-point value. This
/// keeps the whole CG iteration bitwise equivariant under mirror reflection
/// of the coefficient field.
fn mirror_dot(a: &[f64], b: &[f64], row_len: usize) -> f64 {
    let mut total = 0.0;
    for (ra, rb) in a.chunks_exact(row_len).zip(b.chunks_exact(row_len)) {
        let mut row = 0.0;
        let half = row_len / 2;
        for j in 0..half {
            let k = row_len - 1 - j;
            row += ra[j] * rb[j] + ra[k] * rb[k];
        }
        if row_len % 2 == 1 {
            row += ra[half] * rb[half];
        }
        total += row;
    }
    total
}

struct Stencil {
    /// Interior rows/cols.
    my: usize,
    mx: usize,
    /// Edge coefficients divided by h², one per interior node and direction.
    west: Vec<f64>,
    east: Vec<f64>,
    north: Vec<f64>,
    south: Vec<f64>,
}

impl Stencil {
    fn new(a: &GridField) -> Self {
        let shape = a.shape();
        let (h, w) = (shape.height, shape.width);
        let (my, mx) = (h - 2, w - 2);
        // 1/hx², 1/hy² on the unit square with boundary-inclusive grids.
        let hx2 = ((w - 1) * (w - 1)) as f64;
        let hy2 = ((h - 1) * (h - 1)) as f64;
        let grid = a.channel(0);
        let at = |y: usize, x: usize| grid[y * w + x];
        let mut west = vec![0.0; my * mx];
        let mut east = vec![0.0; my * mx];
        let mut north = vec![0.0; my * mx];
        let mut south = vec![0.0; my * mx];
        for iy in 0..my {
            let y = iy + 1;
            for ix in 0..mx {
                let x = ix + 1;
                let p = iy * mx + ix;
                west[p] = harmonic(at(y, x), at(y, x - 1)) * hx2;
                east[p] = harmonic(at(y, x), at(y, x + 1)) * hx2;
                north[p] = harmonic(at(y, x), at(y - 1, x)) * hy2;
                south[p] = harmonic(at(y, x), at(y + 1, x)) * hy2;
            }
        }
        Self {
            my,
            mx,
            west,
            east,
            north,
            south,
        }
    }

    /// `out = A u` on interior unknowns, with the W/E and N/S contributions
    /// grouped pairwise so mirrored inputs produce mirrored outputs bitwise.
    fn apply(&self, u: &[f64], out: &mut [f64]) {
        let (my, mx) = (self.my, self.mx);
        for iy in 0..my {
            for ix in 0..mx {
                let p = iy * mx + ix;
                let c = u[p];
                let uw = if ix > 0 { u[p - 1] } else { 0.0 };
                let ue = if ix + 1 < mx { u[p + 1] } else { 0.0 };
                let un = if iy > 0 { u[p - mx] } else { 0.0 };
                let us = if iy + 1 < my { u[p + mx] } else { 0.0 };
                let horiz = self.west[p] * (c - uw) + self.east[p] * (c - ue);
                let vert = self.north[p] * (c - un) + self.south[p] * (c - us);
                out[p] = horiz + vert;
            }
        }
    }
}

const CG_TOLERANCE: f64 = 1e-10;

/// Solves `-∇·(a ∇u) = f` for a spatially varying right-hand side; both
/// fields are single-channel on the same grid. The returned solution carries
/// exact zeros on the boundary ring.
pub fn solve_darcy_field(a: &GridField, f: &GridField) -> Result<GridField> {
    let shape = a.shape();
    assert_eq!(shape.channels, 1, "coefficient must be single-channel");
    assert_eq!(f.shape(), shape, "forcing grid mismatch");
    assert!(
        a.values().iter().all(|&v| v > 0.0),
        "coefficient must be strictly positive"
    );
    let stencil = Stencil::new(a);
    let (my, mx) = (stencil.my, stencil.mx);
    let m = my * mx;

    let mut rhs = vec![0.0; m];
    for iy in 0..my {
        for ix in 0..mx {
            rhs[iy * mx + ix] = f.at(0, iy + 1, ix + 1);
        }
    }

    let rhs_norm = mirror_dot(&rhs, &rhs, mx).sqrt();
    let mut u = vec![0.0; m];
    if rhs_norm > 0.0 {
        let mut r = rhs.clone();
        let mut p = r.clone();
        let mut ap = vec![0.0; m];
        let mut rr = mirror_dot(&r, &r, mx);
        let cap = 10 * shape.spatial_len();
        let mut converged = false;
        for _ in 0..cap {
            stencil.apply(&p, &mut ap);
            let alpha = rr / mirror_dot(&p, &ap, mx);
            for i in 0..m {
                u[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rr_next = mirror_dot(&r, &r, mx);
            if rr_next.sqrt() <= CG_TOLERANCE * rhs_norm {
                converged = true;
                break;
            }
            let beta = rr_next / rr;
            rr = rr_next;
            for i in 0..m {
                p[i] = r[i] + beta * p[i];
            }
        }
        if !converged {
            return Err(DatagenError::SolveDidNotConverge {
                iterations: cap,
                residual: rr.sqrt() / rhs_norm,
            });
        }
    }

    let mut full = vec![0.0; shape.spatial_len()];
    for iy in 0..my {
        for ix in 0..mx {
            full[(iy + 1) * shape.width + ix + 1] = u[iy * mx + ix];
        }
    }
    Ok(GridField::new(shape, full)?)
}

/// Solves the Darcy problem under constant forcing.
pub fn solve_darcy(a: &GridField, forcing: f64) -> Result<GridField> {
    let f = GridField::constant(
        GridShape::new(a.shape().height, a.shape().width, 1).expect("valid shape"),
        forcing,
    );
    solve_darcy_field(a, &f)
}

/// Relative linear residual `‖Au − f‖ / ‖f‖` of a candidate solution, for
/// verification independent of the CG stopping test.
pub fn relative_residual(a: &GridField, u: &GridField, f: &GridField) -> f64 {
    let stencil = Stencil::new(a);
    let (my, mx) = (stencil.my, stencil.mx);
    let m = my * mx;
    let mut ui = vec![0.0; m];
    let mut fi = vec![0.0; m];
    for iy in 0..my {
        for ix in 0..mx {
            ui[iy * mx + ix] = u.at(0, iy + 1, ix + 1);
            fi[iy * mx + ix] = f.at(0, iy + 1, ix + 1);
        }
    }
    let mut au = vec![0.0; m];
    stencil.apply(&ui, &mut au);
    let num: f64 = au
        .iter()
        .zip(fi.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let den: f64 = fi.iter().map(|v| v * v).sum();
    (num / den).sqrt()
}
