//! Time grids and quadrature of sampled matrix-valued functions.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{spectral_norm, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadratureScheme {
    /// Composite trapezoid on the sample points (with Gregory end corrections
    /// on uniform grids of six or more points); anything beyond the last point
    /// is dropped and bounded by the exponential tail estimate.
    Trapezoid,
    /// Composite Gauss-Legendre panels on `[start, cutoff]` followed by a
    /// Gauss-Laguerre rule for `[cutoff, inf)` weighted by `exp(-tail_rate t)`.
    GaussLaguerreTail,
}

/// Sample points of a (possibly semi-infinite) integration domain with
/// quadrature weights attached.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    points: Vec<f64>,
    weights: Vec<f64>,
    scheme: QuadratureScheme,
    tail_cutoff: Option<f64>,
    tail_rate: f64,
}

/// Quadrature value plus the certified bound on the dropped tail mass.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelIntegral {
    pub value: Mat,
    /// `|g(cutoff)| / tail_rate`; zero for finite intervals.
    pub tail_bound: f64,
    /// Whether the tail beyond the cutoff is part of `value`.
    pub tail_included: bool,
}

impl TimeGrid {
    /// Finite trapezoid grid on arbitrary strictly increasing points.
    pub fn trapezoid(points: Vec<f64>) -> Result<Self> {
        Self::check_points(&points)?;
        let weights = trapezoid_weights(&points);
        Ok(Self { points, weights, scheme: QuadratureScheme::Trapezoid, tail_cutoff: None, tail_rate: 1.0 })
    }

    /// `steps + 1` equally spaced points on `[start, end]`.
    pub fn uniform(start: f64, end: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Self::trapezoid(alloc::vec![start]);
        }
        if !(end > start) {
            return Err(Error::Validation(format!("uniform grid needs start < end, got [{start}, {end}]")));
        }
        let h = (end - start) / steps as f64;
        let mut pts: Vec<f64> = (0..=steps).map(|k| start + h * k as f64).collect();
        pts[steps] = end;
        Self::trapezoid(pts)
    }

    /// Trapezoid grid approximating `int_start^inf`, truncated at the last point.
    pub fn trapezoid_semi_infinite(points: Vec<f64>, tail_rate: f64) -> Result<Self> {
        let mut g = Self::trapezoid(points)?;
        if !(tail_rate > 0.0) {
            return Err(Error::Validation("tail_rate must be positive".into()));
        }
        g.tail_cutoff = g.points.last().copied();
        g.tail_rate = tail_rate;
        Ok(g)
    }

    /// Gauss-Legendre panels of the given order on `[start, cutoff]` and an
    /// `laguerre_order`-point Gauss-Laguerre rule for the tail.
    pub fn gauss_laguerre_tail(
        start: f64,
        cutoff: f64,
        panels: usize,
        order: usize,
        laguerre_order: usize,
        tail_rate: f64,
    ) -> Result<Self> {
        if !(cutoff > start) || panels == 0 || order == 0 || laguerre_order == 0 {
            return Err(Error::Validation("gauss_laguerre_tail: degenerate layout".into()));
        }
        if !(tail_rate > 0.0) {
            return Err(Error::Validation("tail_rate must be positive".into()));
        }
        let (xs, ws) = gauss_legendre(order);
        let h = (cutoff - start) / panels as f64;
        let mut points = Vec::with_capacity(panels * order + laguerre_order);
        let mut weights = Vec::with_capacity(points.capacity());
        for p in 0..panels {
            let a = start + h * p as f64;
            for (x, w) in xs.iter().zip(&ws) {
                points.push(a + 0.5 * h * (x + 1.0));
                weights.push(0.5 * h * w);
            }
        }
        // int_cutoff^inf g(t) dt = int_0^inf e^{-s} [e^{s} g(cutoff + s/r)] ds / r
        let (ls, lw) = gauss_laguerre(laguerre_order);
        for (s, w) in ls.iter().zip(&lw) {
            points.push(cutoff + s / tail_rate);
            weights.push(w * libm::exp(*s) / tail_rate);
        }
        Ok(Self {
            points,
            weights,
            scheme: QuadratureScheme::GaussLaguerreTail,
            tail_cutoff: Some(cutoff),
            tail_rate,
        })
    }

    fn check_points(points: &[f64]) -> Result<()> {
        if points.is_empty() {
            return Err(Error::Validation("time grid needs at least one point".into()));
        }
        if points.iter().any(|t| !t.is_finite()) {
            return Err(Error::Validation("time grid has non-finite points".into()));
        }
        if points.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Validation("time grid points must be strictly increasing".into()));
        }
        Ok(())
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn scheme(&self) -> QuadratureScheme {
        self.scheme
    }

    pub fn tail_cutoff(&self) -> Option<f64> {
        self.tail_cutoff
    }

    pub fn tail_rate(&self) -> f64 {
        self.tail_rate
    }

    pub fn start(&self) -> f64 {
        self.points[0]
    }

    pub fn end(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    /// Common step if the points are equally spaced (relative tolerance 1e-9).
    pub fn uniform_step(&self) -> Option<f64> {
        if self.points.len() < 2 {
            return None;
        }
        let h = (self.end() - self.start()) / (self.points.len() - 1) as f64;
        let ok = self.points.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h.abs().max(1.0));
        ok.then_some(h)
    }

    /// Uniform grid with every step halved.
    pub fn refined(&self) -> Result<Self> {
        let mut pts = Vec::with_capacity(2 * self.points.len() - 1);
        for w in self.points.windows(2) {
            pts.push(w[0]);
            pts.push(0.5 * (w[0] + w[1]));
        }
        pts.push(self.end());
        Self::trapezoid(pts)
    }
}

fn trapezoid_weights(points: &[f64]) -> Vec<f64> {
    let n = points.len();
    if n >= 6 {
        let h = (points[n - 1] - points[0]) / (n - 1) as f64;
        if points.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h.abs().max(1.0)) {
            // Gregory: exact for cubics
            let mut w = alloc::vec![h; n];
            for (k, c) in [3.0 / 8.0, 7.0 / 6.0, 23.0 / 24.0].into_iter().enumerate() {
                w[k] = c * h;
                w[n - 1 - k] = c * h;
            }
            return w;
        }
    }
    let mut w = alloc::vec![0.0; n];
    for k in 0..n.saturating_sub(1) {
        let h = points[k + 1] - points[k];
        w[k] += 0.5 * h;
        w[k + 1] += 0.5 * h;
    }
    w
}

/// Integrates sampled matrix values against the grid's quadrature weights.
pub fn integrate_kernel(values: &[Mat], grid: &TimeGrid) -> Result<KernelIntegral> {
    if values.len() != grid.len() {
        return Err(Error::Shape(format!("{} samples for a grid of {} points", values.len(), grid.len())));
    }
    let Some(first) = values.first() else {
        return Err(Error::Shape("no samples".into()));
    };
    let (r, c) = first.shape();
    if values.iter().any(|v| v.shape() != (r, c)) {
        return Err(Error::Shape("samples have inconsistent shapes".into()));
    }
    let mut acc: Mat = DMatrix::zeros(r, c);
    for (v, w) in values.iter().zip(grid.weights()) {
        acc += v * *w;
    }
    let (tail_bound, tail_included) = match (grid.scheme, grid.tail_cutoff) {
        (_, None) => (0.0, false),
        (QuadratureScheme::Trapezoid, Some(_)) => {
            (spectral_norm(&values[values.len() - 1]) / grid.tail_rate, false)
        }
        (QuadratureScheme::GaussLaguerreTail, Some(cut)) => {
            // sample closest to the cutoff from below
            let k = grid.points.iter().rposition(|t| *t <= cut).unwrap_or(0);
            (spectral_norm(&values[k]) / grid.tail_rate, true)
        }
    };
    Ok(KernelIntegral { value: acc, tail_bound, tail_included })
}

/// Golub-Welsch nodes and weights for a symmetric Jacobi matrix.
fn golub_welsch(diag: &[f64], off: &[f64], mu0: f64) -> (Vec<f64>, Vec<f64>) {
    let n = diag.len();
    let mut j = Mat::zeros(n, n);
    for k in 0..n {
        j[(k, k)] = diag[k];
        if k + 1 < n {
            j[(k, k + 1)] = off[k];
            j[(k + 1, k)] = off[k];
        }
    }
    let eig = j.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let v0 = eig.eigenvectors[(0, k)];
            (eig.eigenvalues[k], mu0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Gauss-Legendre nodes/weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let diag = alloc::vec![0.0; n];
    let off: Vec<f64> = (1..n)
        .map(|k| {
            let k = k as f64;
            k / libm::sqrt(4.0 * k * k - 1.0)
        })
        .collect();
    golub_welsch(&diag, &off, 2.0)
}

/// Gauss-Laguerre nodes/weights for `int_0^inf e^{-x} f(x) dx`.
pub fn gauss_laguerre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let diag: Vec<f64> = (0..n).map(|k| 2.0 * k as f64 + 1.0).collect();
    let off: Vec<f64> = (1..n).map(|k| k as f64).collect();
    golub_welsch(&diag, &off, 1.0)
}
