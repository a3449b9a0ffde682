//! Spectral projectors from an ordered complex Schur form.
//!
//! `A = Q T Q^H` with `T` upper triangular is reordered by adjacent Givens
//! swaps until every eigenvalue with negative real part precedes the others.
//! With `T = [[T11, T12], [0, T22]]` the stable spectral projector in Schur
//! coordinates is `[[I, R], [0, 0]]` where `T11 R - R T22 = T12`.

use alloc::vec::Vec;

use nalgebra::{Complex, DMatrix};

use crate::error::{Error, Result};
use crate::linalg::Mat;

type C64 = Complex<f64>;
type CMat = DMatrix<C64>;

/// Stable spectral projector of a hyperbolic matrix and the spectrum it splits.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSplit {
    pub projector: Mat,
    pub stable_dim: usize,
    /// Eigenvalues in Schur order: the stable ones first.
    pub eigenvalues: Vec<C64>,
}

impl SpectralSplit {
    /// `max Re(lambda)` over the stable eigenvalues (negative), if any.
    pub fn stable_abscissa(&self) -> Option<f64> {
        self.eigenvalues[..self.stable_dim].iter().map(|z| z.re).reduce(f64::max)
    }

    /// `min Re(lambda)` over the unstable eigenvalues (positive), if any.
    pub fn unstable_abscissa(&self) -> Option<f64> {
        self.eigenvalues[self.stable_dim..].iter().map(|z| z.re).reduce(f64::min)
    }
}

fn complex_schur(a: &Mat) -> Result<(CMat, CMat)> {
    let c: CMat = a.map(|x| C64::new(x, 0.0));
    let n = a.nrows();
    let schur = nalgebra::linalg::Schur::try_new(c, f64::EPSILON, 200 * n.max(10))
        .ok_or(Error::NoConvergence(200 * n.max(10)))?;
    let (q, mut t) = schur.unpack();
    // the QR sweep may leave rounding-level entries below the diagonal
    for j in 0..n {
        for i in j + 1..n {
            t[(i, j)] = C64::new(0.0, 0.0);
        }
    }
    Ok((q, t))
}

/// Swaps the adjacent diagonal entries `k` and `k + 1` of the triangular `t`,
/// updating the unitary factor `q`.
fn swap_adjacent(t: &mut CMat, q: &mut CMat, k: usize) {
    let a = t[(k, k)];
    let b = t[(k + 1, k + 1)];
    let c = t[(k, k + 1)];
    // eigenvector of [[a, c], [0, b]] for eigenvalue b
    let v1 = c;
    let v2 = b - a;
    let r = libm::sqrt(v1.norm_sqr() + v2.norm_sqr());
    if r == 0.0 {
        return;
    }
    let (g11, g21) = (v1 / r, v2 / r);
    let (g12, g22) = (-g21.conj(), g11.conj());
    let n = t.nrows();
    // rows: T <- G^H T
    for j in 0..n {
        let (x, y) = (t[(k, j)], t[(k + 1, j)]);
        t[(k, j)] = g11.conj() * x + g21.conj() * y;
        t[(k + 1, j)] = g12.conj() * x + g22.conj() * y;
    }
    // columns: T <- T G, Q <- Q G
    for i in 0..n {
        let (x, y) = (t[(i, k)], t[(i, k + 1)]);
        t[(i, k)] = x * g11 + y * g21;
        t[(i, k + 1)] = x * g12 + y * g22;
        let (x, y) = (q[(i, k)], q[(i, k + 1)]);
        q[(i, k)] = x * g11 + y * g21;
        q[(i, k + 1)] = x * g12 + y * g22;
    }
    t[(k + 1, k)] = C64::new(0.0, 0.0);
    t[(k, k)] = b;
    t[(k + 1, k + 1)] = a;
}

/// Solves `T11 R - R T22 = T12` for upper-triangular `T11`, `T22` with
/// disjoint spectra.
fn triangular_sylvester(t11: &CMat, t22: &CMat, t12: &CMat) -> CMat {
    let (k, m) = (t11.nrows(), t22.nrows());
    let mut r = CMat::zeros(k, m);
    for j in 0..m {
        let mut rhs: Vec<C64> = (0..k).map(|i| t12[(i, j)]).collect();
        for l in 0..j {
            let s = t22[(l, j)];
            for i in 0..k {
                rhs[i] += r[(i, l)] * s;
            }
        }
        let shift = t22[(j, j)];
        for i in (0..k).rev() {
            let mut acc = rhs[i];
            for p in i + 1..k {
                acc -= t11[(i, p)] * r[(p, j)];
            }
            r[(i, j)] = acc / (t11[(i, i)] - shift);
        }
    }
    r
}

/// Projector onto the generalized eigenspace of eigenvalues with negative
/// real part, along the one with positive real part.
///
/// Fails with [`Error::NotHyperbolic`] if some eigenvalue has `|Re| <= tol`.
pub fn stable_projector(a: &Mat, tol: f64) -> Result<SpectralSplit> {
    if !a.is_square() {
        return Err(Error::Shape(alloc::format!("stable_projector: {:?} is not square", a.shape())));
    }
    let n = a.nrows();
    let (mut q, mut t) = complex_schur(a)?;
    for i in 0..n {
        let z = t[(i, i)];
        if !(z.re.abs() > tol) {
            return Err(Error::NotHyperbolic { block: None, re: z.re, im: z.im, tol });
        }
    }
    // bubble the stable eigenvalues to the front
    for pass in 0..n {
        let mut swapped = false;
        for k in 0..n.saturating_sub(1 + pass) {
            if t[(k, k)].re > 0.0 && t[(k + 1, k + 1)].re < 0.0 {
                swap_adjacent(&mut t, &mut q, k);
                swapped = true;
            }
        }
        if !swapped {
            break;
        }
    }
    let stable_dim = (0..n).take_while(|&i| t[(i, i)].re < 0.0).count();
    let eigenvalues: Vec<C64> = (0..n).map(|i| t[(i, i)]).collect();

    let m = n - stable_dim;
    let mut ps = CMat::zeros(n, n);
    for i in 0..stable_dim {
        ps[(i, i)] = C64::new(1.0, 0.0);
    }
    if stable_dim > 0 && m > 0 {
        let t11 = t.view((0, 0), (stable_dim, stable_dim)).into_owned();
        let t22 = t.view((stable_dim, stable_dim), (m, m)).into_owned();
        let t12 = t.view((0, stable_dim), (stable_dim, m)).into_owned();
        let r = triangular_sylvester(&t11, &t22, &t12);
        ps.view_mut((0, stable_dim), (stable_dim, m)).copy_from(&r);
    }
    let p = &q * ps * q.adjoint();
    let projector = p.map(|z| z.re);
    crate::linalg::ensure_finite(&projector, "spectral projector")?;
    Ok(SpectralSplit { projector, stable_dim, eigenvalues })
}
