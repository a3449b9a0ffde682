//! Sign-changing quadratic forms `v(x) = (Cx, x)` with `A^T C + C A = -H`.
//!
//! Per block, `C_i = int_0^inf (e^{tA}P)^T (e^{tA}P) dt - int_0^inf (e^{-tA}Q)^T (e^{-tA}Q) dt`
//! with `Q = I - P`, which solves the Lyapunov equation for
//! `H_i = P^T P + Q^T Q`.

use alloc::format;
use alloc::vec::Vec;

use crate::dichotomy::{AggregateDichotomy, SubsystemDichotomy};
use crate::error::{Error, Result};
use crate::linalg::{matrix_exponential, min_symmetric_eigenvalue, solve, spectral_norm, BlockSystem, Mat};
use crate::quadrature::{integrate_kernel, TimeGrid};
use crate::report::{ConditionId, ConditionReport};

/// Threshold below which a symmetric part is not considered definite.
pub const DEFINITENESS_TOL: f64 = 1e-10;

const GL_ORDER: usize = 10;
const LAGUERRE_ORDER: usize = 16;

/// Solution of one block's Lyapunov equation.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockLyapunov {
    /// From the integral representation.
    pub c: Mat,
    /// From the Kronecker linear system.
    pub direct: Mat,
    pub h: Mat,
    /// `|A^T C + C A + H| / |H|`
    pub residual: f64,
    /// `|C - C_direct|`
    pub cross_check: f64,
    /// `M^2 / (2 alpha) + N^2 / (2 beta)`
    pub bound: f64,
}

/// `P^T P + (I - P)^T (I - P)`
pub fn quasidiagonal_rhs(p: &Mat) -> Mat {
    let d = p.nrows();
    let q = Mat::identity(d, d) - p;
    p.transpose() * p + q.transpose() * &q
}

/// Solves `A^T C + C A = -H` through `(I (x) A^T + A^T (x) I) vec C = -vec H`.
pub fn solve_lyapunov_direct(a: &Mat, h: &Mat) -> Result<Mat> {
    let d = a.nrows();
    if !a.is_square() || h.shape() != (d, d) {
        return Err(Error::Shape(format!("A {:?}, H {:?}", a.shape(), h.shape())));
    }
    let at = a.transpose();
    let id = Mat::identity(d, d);
    let k = id.kronecker(&at) + at.kronecker(&id);
    let rhs = Mat::from_column_slice(d * d, 1, (-h).as_slice());
    let v = solve(&k, &rhs)?;
    Ok(Mat::from_column_slice(d, d, v.as_slice()))
}

/// `int_0^inf (e^{tG} P)^T (e^{tG} P) dt` for the restricted generator `G`
/// decaying at least at `rate`.
fn gramian(gen: &Mat, p: &Mat, rate: f64, m: f64) -> Result<Mat> {
    let scale = spectral_norm(gen).max(rate);
    // integrand is below 1e-16 |P|^2 past the cutoff
    let cutoff = (libm::log(m.max(1.0) * m.max(1.0)) + 37.0) / (2.0 * rate);
    let panels = (libm::ceil(cutoff * scale) as usize).clamp(4, 200_000);
    let grid = TimeGrid::gauss_laguerre_tail(0.0, cutoff, panels, GL_ORDER, LAGUERRE_ORDER, 2.0 * rate)?;
    let mut vals = Vec::with_capacity(grid.len());
    for &t in grid.points() {
        let e = matrix_exponential(gen, t)? * p;
        vals.push(e.transpose() * e);
    }
    Ok(integrate_kernel(&vals, &grid)?.value)
}

/// `C_i` for one block by quadrature, cross-checked by a direct solve.
pub fn solve_block_lyapunov(a: &Mat, dich: &SubsystemDichotomy) -> Result<BlockLyapunov> {
    let d = a.nrows();
    if !a.is_square() || dich.dim() != d {
        return Err(Error::Shape(format!("block {:?} with projector of dimension {}", a.shape(), dich.dim())));
    }
    let p = &dich.projector;
    let q = Mat::identity(d, d) - p;
    let mut c = Mat::zeros(d, d);
    if dich.has_stable() {
        c += gramian(&(a * p), p, dich.alpha, dich.m)?;
    }
    if dich.has_unstable() {
        c -= gramian(&(-(a * &q)), &q, dich.beta, dich.n)?;
    }
    let c = (&c + c.transpose()) * 0.5;
    let h = quasidiagonal_rhs(p);
    let direct = solve_lyapunov_direct(a, &h)?;
    let residual = spectral_norm(&(a.transpose() * &c + &c * a + &h)) / spectral_norm(&h);
    let cross_check = spectral_norm(&(&c - &direct));
    let sq = |k: f64, r: f64| if k == 0.0 { 0.0 } else { k * k / (2.0 * r) };
    let bound = sq(dich.m, dich.alpha) + sq(dich.n, dich.beta);
    Ok(BlockLyapunov { c, direct, h, residual, cross_check, bound })
}

/// Block-diagonal quadratic form of the uncoupled system and its behavior
/// under the coupling.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovCertificate {
    pub blocks: Vec<BlockLyapunov>,
    pub c: Mat,
    pub h: Mat,
    /// `1 - |C| (|B| + |B^T|)`
    pub positivity_margin: f64,
    /// Smallest eigenvalue of the symmetric part of `H - B^T C - C B`.
    pub derivative_margin: f64,
    /// All block projectors are symmetric, so `H = I`.
    pub symmetric_projectors: bool,
    pub reports: Vec<ConditionReport>,
    /// The derivative of the form is negative definite along the coupled flow.
    pub satisfied: bool,
}

impl LyapunovCertificate {
    /// `|A^T C + C A + H| / |H|` for the assembled operators.
    pub fn assembled_residual(&self, sys: &BlockSystem) -> f64 {
        let a = sys.diagonal();
        spectral_norm(&(a.transpose() * &self.c + &self.c * &a + &self.h)) / spectral_norm(&self.h)
    }
}

/// Solves every block, assembles `C`, `H` and evaluates the sufficient
/// conditions together with the exact definiteness check. The printed
/// thresholds need symmetric projectors and are skipped otherwise.
pub fn lyapunov_certificate(sys: &BlockSystem, agg: &AggregateDichotomy) -> Result<LyapunovCertificate> {
    if agg.n() != sys.n() {
        return Err(Error::Shape(format!("{} dichotomies for {} blocks", agg.n(), sys.n())));
    }
    let blocks: Vec<BlockLyapunov> =
        sys.blocks().iter().zip(&agg.per_block).map(|(a, d)| solve_block_lyapunov(a, d)).collect::<Result<_>>()?;
    let dim = sys.total_dim();
    let mut c = Mat::zeros(dim, dim);
    let mut h = Mat::zeros(dim, dim);
    for (i, b) in blocks.iter().enumerate() {
        let o = sys.offsets()[i];
        let k = b.c.nrows();
        c.view_mut((o, o), (k, k)).copy_from(&b.c);
        h.view_mut((o, o), (k, k)).copy_from(&b.h);
    }
    let bmat = sys.coupling_matrix();
    let bt = bmat.transpose();
    // C carries quadrature error of the size of the cross-check; take the
    // larger of the two solutions plus that error so that rounding cannot
    // pass a condition that holds with equality
    let cross = blocks.iter().map(|b| b.cross_check).fold(0.0, f64::max);
    let c_norm = spectral_norm(&c);
    let c_upper = blocks.iter().map(|b| spectral_norm(&b.direct)).fold(c_norm, f64::max) + cross;
    let coupling_lhs = c_upper * (spectral_norm(&bmat) + spectral_norm(&bt)) * (1.0 + 4.0 * f64::EPSILON);
    let derivative_margin = min_symmetric_eigenvalue(&(&h - &bt * &c - &c * &bmat));
    let symmetric_projectors =
        agg.per_block.iter().all(|d| spectral_norm(&(&d.projector - d.projector.transpose())) <= 1e-10);

    let mut reports = Vec::new();
    let mut exact = ConditionReport::strict(ConditionId::LyapunovExact, -derivative_margin, -DEFINITENESS_TOL);
    exact.derive("derivative_margin", derivative_margin);
    if symmetric_projectors {
        let norms = sys.coupling_norms();
        let n = agg.n() as f64;
        let weights: Vec<f64> = agg
            .per_block
            .iter()
            .map(|d| {
                let s = if d.has_stable() { d.m * d.m / d.alpha } else { 0.0 };
                let u = if d.has_unstable() { d.n * d.n / d.beta } else { 0.0 };
                s + u
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let largest = weights.iter().copied().fold(0.0, f64::max);
        let inv = |x: f64| if x == 0.0 { f64::INFINITY } else { 1.0 / x };
        reports.push(ConditionReport::strict(ConditionId::LyapunovSum, norms.sum, inv(total)));
        reports.push(ConditionReport::strict(
            ConditionId::LyapunovMax,
            norms.max,
            inv(n * libm::sqrt(n - 1.0) * largest),
        ));
        let mut cp = ConditionReport::strict(ConditionId::LyapunovCoupling, coupling_lhs, 1.0);
        cp.derive("c_norm", c_norm);
        reports.push(cp);
    } else {
        exact.note("projectors are not symmetric; only the general definiteness check applies");
    }
    let satisfied = exact.satisfied;
    reports.push(exact);
    Ok(LyapunovCertificate {
        blocks,
        c,
        h,
        positivity_margin: 1.0 - coupling_lhs,
        derivative_margin,
        symmetric_projectors,
        reports,
        satisfied,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dichotomy::{aggregate, extract_dichotomy};
    use approx::assert_relative_eq;

    fn m(r: usize, c: usize, v: &[f64]) -> Mat {
        Mat::from_row_slice(r, c, v)
    }

    fn block(a: &Mat) -> BlockLyapunov {
        solve_block_lyapunov(a, &extract_dichotomy(a, 0.0).unwrap()).unwrap()
    }

    #[test]
    fn scalar_blocks() {
        assert_relative_eq!(block(&m(1, 1, &[-1.0])).c[(0, 0)], 0.5, epsilon = 1e-12);
        assert_relative_eq!(block(&m(1, 1, &[1.0])).c[(0, 0)], -0.5, epsilon = 1e-12);
    }

    #[test]
    fn diagonal_block_and_residual() {
        let b = block(&m(2, 2, &[-1.0, 0.0, 0.0, 2.0]));
        assert_relative_eq!(b.c, m(2, 2, &[0.5, 0.0, 0.0, -0.25]), epsilon = 1e-12);
        assert!(b.residual < 1e-10);
        assert!(b.cross_check < 1e-10);
    }

    #[test]
    fn non_normal_block_agrees_with_direct_solve() {
        let a = m(3, 3, &[-1.0, 4.0, 0.5, 0.0, -0.5, 2.0, 0.0, 0.0, 1.5]);
        let d = extract_dichotomy(&a, 0.1).unwrap();
        let b = solve_block_lyapunov(&a, &d).unwrap();
        assert!(b.cross_check < 1e-8, "{}", b.cross_check);
        assert!(b.residual < 1e-8);
        assert!(spectral_norm(&b.c) <= b.bound + 1e-8);
        // sign structure on the two ranges
        let x = &d.projector * nalgebra::DVector::from_vec(alloc::vec![0.3, -1.0, 0.0]);
        assert!(x.dot(&(&b.c * &x)) > 0.0);
        let q = Mat::identity(3, 3) - &d.projector;
        let y = &q * nalgebra::DVector::from_vec(alloc::vec![0.2, 0.5, 1.0]);
        assert!(y.dot(&(&b.c * &y)) < 0.0);
    }

    #[test]
    fn running_example_certificate() {
        let sys = BlockSystem::new(
            alloc::vec![m(1, 1, &[-1.0]), m(1, 1, &[1.0])],
            [((0, 1), m(1, 1, &[0.1])), ((1, 0), m(1, 1, &[0.1]))],
        )
        .unwrap();
        let agg = aggregate(sys.blocks().iter().map(|a| extract_dichotomy(a, 0.0).unwrap()).collect()).unwrap();
        let cert = lyapunov_certificate(&sys, &agg).unwrap();
        assert_relative_eq!(cert.c, m(2, 2, &[0.5, 0.0, 0.0, -0.5]), epsilon = 1e-12);
        let coupling = cert.reports.iter().find(|r| r.id == ConditionId::LyapunovCoupling).unwrap();
        assert_relative_eq!(coupling.lhs, 0.1, epsilon = 1e-12);
        let sum = cert.reports.iter().find(|r| r.id == ConditionId::LyapunovSum).unwrap();
        assert_relative_eq!(sum.threshold, 0.5, epsilon = 1e-12);
        assert!(sum.satisfied && cert.satisfied);
        assert!(cert.assembled_residual(&sys) < 1e-10);
    }

    #[test]
    fn zero_coupling_margin_is_one() {
        let sys = BlockSystem::new(alloc::vec![m(1, 1, &[-2.0]), m(1, 1, &[3.0])], []).unwrap();
        let agg = aggregate(sys.blocks().iter().map(|a| extract_dichotomy(a, 0.1).unwrap()).collect()).unwrap();
        let cert = lyapunov_certificate(&sys, &agg).unwrap();
        assert_relative_eq!(cert.derivative_margin, 1.0, epsilon = 1e-12);
        assert!(cert.reports.iter().all(|r| r.satisfied));
    }
}
