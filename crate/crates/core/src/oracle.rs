//! Reference computations on the assembled system, kept apart from the
//! certification path: the stable projector from the matrix sign function,
//! adaptive Runge-Kutta time stepping and decay fits.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::Complex;

use crate::error::{Error, Result};
use crate::greens::{Extrapolation, GridTrajectory};
use crate::linalg::{matrix_exponential, projector_range_basis, spectral_norm, Mat, Vector};
use crate::quadrature::TimeGrid;

/// Eigenvalues closer than this to the imaginary axis are rejected.
pub const AXIS_TOL: f64 = 1e-8;

/// Ground-truth splitting of a constant matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDichotomy {
    pub stable_projector: Mat,
    /// `min -Re(lambda)` over the stable eigenvalues; infinite if none.
    pub stable_rate: f64,
    /// `min Re(lambda)` over the unstable eigenvalues; infinite if none.
    pub unstable_rate: f64,
    /// Sampled `sup |e^{tM} P| e^{(1 - margin) rate t}` over both parts.
    pub fitted_m: f64,
    pub sample_count: usize,
    pub stable_rank: usize,
    pub eigenvalues: Vec<Complex<f64>>,
}

pub fn eigenvalues(m: &Mat) -> Result<Vec<Complex<f64>>> {
    if !m.is_square() {
        return Err(Error::Shape(format!("{:?} is not square", m.shape())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("oracle input"));
    }
    Ok(m.complex_eigenvalues().iter().copied().collect())
}

/// `sign(M)` by scaled Newton iteration.
pub fn matrix_sign(m: &Mat) -> Result<Mat> {
    let d = m.nrows();
    let mut s = m.clone();
    for _ in 0..100 {
        let inv = s.clone().try_inverse().ok_or(Error::NonFinite("sign iteration hit a singular matrix"))?;
        let det = s.determinant().abs();
        // determinant scaling speeds up the early iterations
        let mu = if det > 0.0 && det.is_finite() { libm::pow(det, -1.0 / d as f64) } else { 1.0 };
        let next = (&s * mu + &inv / mu) * 0.5;
        let diff = (&next - &s).norm();
        let size = next.norm();
        s = next;
        if diff <= 1e-14 * size {
            // two unscaled steps polish the result
            for _ in 0..2 {
                let inv = s.clone().try_inverse().ok_or(Error::NonFinite("sign iteration hit a singular matrix"))?;
                s = (&s + inv) * 0.5;
            }
            return Ok(s);
        }
    }
    Err(Error::NoConvergence(100))
}

/// Stable projector, rates and a sampled constant for `x' = M x`.
pub fn spectral_dichotomy(full: &Mat, margin: f64) -> Result<EmpiricalDichotomy> {
    let eig = eigenvalues(full)?;
    if let Some(e) = eig.iter().find(|e| e.re.abs() <= AXIS_TOL) {
        return Err(Error::NotHyperbolic { block: None, re: e.re, im: e.im, tol: AXIS_TOL });
    }
    let stable_rate = eig.iter().filter(|e| e.re < 0.0).map(|e| -e.re).fold(f64::INFINITY, f64::min);
    let unstable_rate = eig.iter().filter(|e| e.re > 0.0).map(|e| e.re).fold(f64::INFINITY, f64::min);
    let stable_rank = eig.iter().filter(|e| e.re < 0.0).count();
    let d = full.nrows();
    let sign = matrix_sign(full)?;
    let p = (Mat::identity(d, d) - sign) * 0.5;
    let samples = 600;
    let mut fitted_m: f64 = 0.0;
    for (proj, gen, rate) in [(p.clone(), full.clone(), stable_rate), (Mat::identity(d, d) - &p, -full, unstable_rate)] {
        if !rate.is_finite() {
            continue;
        }
        let w = (1.0 - margin) * rate;
        let h = 30.0 / rate / samples as f64;
        let step = matrix_exponential(&gen, h)?;
        let mut e = proj.clone();
        for k in 0..=samples {
            fitted_m = fitted_m.max(spectral_norm(&e) * libm::exp(w * h * k as f64));
            e = &step * e;
        }
    }
    Ok(EmpiricalDichotomy {
        stable_projector: p,
        stable_rate,
        unstable_rate,
        fitted_m,
        sample_count: samples + 1,
        stable_rank,
        eigenvalues: eig,
    })
}

/// `e^{tM} x0` at every grid point.
pub fn linear_flow(m: &Mat, x0: &Vector, grid: &TimeGrid) -> Result<GridTrajectory> {
    let t0 = grid.start();
    let values = grid
        .points()
        .iter()
        .map(|t| matrix_exponential(m, t - t0).map(|e| e * x0))
        .collect::<Result<Vec<_>>>()?;
    GridTrajectory::new(grid.clone(), values, Extrapolation::Hold)
}

/// `e^{tM} x0` for `x0` in the range of the invariant projector `p`,
/// computed on that subspace so that rounding cannot excite the other part.
pub fn stable_flow(m: &Mat, p: &Mat, x0: &Vector, grid: &TimeGrid) -> Result<GridTrajectory> {
    let q = projector_range_basis(p);
    let s = q.transpose() * m * &q;
    let c = q.transpose() * x0;
    let t0 = grid.start();
    let values = grid
        .points()
        .iter()
        .map(|t| matrix_exponential(&s, t - t0).map(|e| &q * (e * &c)))
        .collect::<Result<Vec<_>>>()?;
    GridTrajectory::new(grid.clone(), values, Extrapolation::Hold)
}

/// Settings of the adaptive integrator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorOptions {
    pub rtol: f64,
    pub atol: f64,
    pub min_step: f64,
    pub max_steps: usize,
}

impl IntegratorOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { rtol: tol, atol: tol, min_step: 1e-12, max_steps: 10_000_000 }
    }
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self::with_tol(1e-10)
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// fifth-order weights minus the embedded fourth-order ones
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Dormand-Prince 5(4) integration of `x' = f(t, x)` from `grid.start()`,
/// landing exactly on every grid point.
pub fn integrate(
    f: &dyn Fn(f64, &Vector) -> Vector,
    x0: &Vector,
    grid: &TimeGrid,
    opts: &IntegratorOptions,
) -> Result<GridTrajectory> {
    let pts = grid.points();
    let mut t = pts[0];
    let mut x = x0.clone();
    let mut values = Vec::with_capacity(pts.len());
    values.push(x.clone());
    let mut k1 = f(t, &x);
    let mut h = {
        let scale = opts.atol + x.norm() * opts.rtol;
        (0.01 * scale / k1.norm().max(1e-300)).clamp(opts.min_step, (pts.get(1).copied().unwrap_or(t) - t).max(opts.min_step))
    };
    let mut steps = 0;
    for &target in &pts[1..] {
        while t < target {
            steps += 1;
            if steps > opts.max_steps {
                return Err(Error::NoConvergence(opts.max_steps));
            }
            let last = target - t <= h * (1.0 + 1e-12);
            let hs = if last { target - t } else { h };
            let mut k: [Vector; 7] = core::array::from_fn(|_| Vector::zeros(0));
            k[0] = k1.clone();
            for s in 1..7 {
                let mut xs = x.clone();
                for (j, kj) in k.iter().enumerate().take(s) {
                    if A[s][j] != 0.0 {
                        xs.axpy(hs * A[s][j], kj, 1.0);
                    }
                }
                k[s] = f(t + C[s] * hs, &xs);
            }
            // the last stage is evaluated at the fifth-order solution
            let mut xn = x.clone();
            for (j, kj) in k.iter().enumerate().take(6) {
                if A[6][j] != 0.0 {
                    xn.axpy(hs * A[6][j], kj, 1.0);
                }
            }
            let mut err = Vector::zeros(x.len());
            for (j, kj) in k.iter().enumerate() {
                if E[j] != 0.0 {
                    err.axpy(hs * E[j], kj, 1.0);
                }
            }
            let en = err
                .iter()
                .zip(x.iter().zip(xn.iter()))
                .map(|(e, (a, b))| {
                    let sc = opts.atol + opts.rtol * a.abs().max(b.abs());
                    (e / sc) * (e / sc)
                })
                .sum::<f64>();
            let en = libm::sqrt(en / x.len().max(1) as f64);
            if !en.is_finite() {
                return Err(Error::NonFinite("integrator"));
            }
            if en <= 1.0 {
                t = if last { target } else { t + hs };
                x = xn;
                k1 = k[6].clone();
            }
            let factor = if en == 0.0 { 5.0 } else { (0.9 * libm::pow(en, -0.2)).clamp(0.2, 5.0) };
            if en <= 1.0 && last {
                // keep the step suggested before truncating to the target
                h = h.max(hs * factor).max(opts.min_step);
            } else {
                h = hs * factor;
            }
            if h < opts.min_step {
                return Err(Error::Stiffness { t });
            }
        }
        values.push(x.clone());
    }
    GridTrajectory::new(grid.clone(), values, Extrapolation::Hold)
}

/// Adaptive integration of `x' = M x`, cross-checked against the matrix
/// exponential at the final time.
pub fn integrate_linear(m: &Mat, x0: &Vector, grid: &TimeGrid, tol: f64) -> Result<GridTrajectory> {
    let traj = integrate(&|_, x| m * x, x0, grid, &IntegratorOptions::with_tol(tol))?;
    let exact = matrix_exponential(m, grid.end() - grid.start())? * x0;
    let last = &traj.values()[traj.values().len() - 1];
    let gap = (last - &exact).norm();
    let scale = exact.norm().max(x0.norm()).max(1.0);
    // the tolerance is local; allow for accumulation along the interval
    let span = grid.end() - grid.start();
    if gap > 10.0 * tol * scale * (1.0 + span) {
        return Err(Error::Validation(format!("integrator disagrees with the exponential by {gap:e}")));
    }
    Ok(traj)
}

/// Adaptive integration of `x' = M x + R(x)`.
pub fn integrate_nonlinear(
    m: &Mat,
    r: &dyn Fn(&Vector) -> Vector,
    x0: &Vector,
    grid: &TimeGrid,
    tol: f64,
) -> Result<GridTrajectory> {
    integrate(&|_, x| m * x + r(x), x0, grid, &IntegratorOptions::with_tol(tol))
}

/// Least-squares fit `log|x(t)| ~ log(prefactor) - rate t` on the last 80%
/// of the trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub rate: f64,
    pub prefactor: f64,
    pub points: usize,
}

pub fn measure_decay(traj: &GridTrajectory) -> Result<DecayFit> {
    let pts = traj.grid().points();
    let (t0, t1) = (traj.grid().start(), traj.grid().end());
    let from = t0 + 0.2 * (t1 - t0);
    let mut data = Vec::new();
    for (t, v) in pts.iter().zip(traj.values()) {
        let n = v.norm();
        if n < 1e-300 {
            // rounding floor: the window ends here
            if *t >= from {
                break;
            }
            continue;
        }
        if *t >= from {
            data.push((*t, libm::log(n)));
        }
    }
    if data.len() < 2 {
        return Err(Error::Validation("too few positive samples in the fit window".into()));
    }
    let k = data.len() as f64;
    let mt = data.iter().map(|p| p.0).sum::<f64>() / k;
    let my = data.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx = data.iter().map(|p| (p.0 - mt) * (p.0 - mt)).sum::<f64>();
    let sxy = data.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum::<f64>();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * (mt - t0);
    Ok(DecayFit { rate: -slope, prefactor: libm::exp(intercept), points: data.len() })
}

/// Largest `|x(t)| / (m e^{-rate (t - s)} |x(s)|)` over `t >= s`, with `s`
/// taken from up to `starts` evenly spaced samples.
pub fn envelope_ratio(traj: &GridTrajectory, m: f64, rate: f64, starts: usize) -> f64 {
    let pts = traj.grid().points();
    let norms: Vec<f64> = traj.values().iter().map(|v| v.norm()).collect();
    let stride = (pts.len() / starts.max(1)).max(1);
    let mut worst: f64 = 0.0;
    for s in (0..pts.len()).step_by(stride) {
        if norms[s] == 0.0 {
            continue;
        }
        for t in s..pts.len() {
            let env = m * libm::exp(-rate * (pts[t] - pts[s])) * norms[s];
            worst = worst.max(norms[t] / env);
        }
    }
    worst
}

/// Largest central-difference residual `|x' - f(x)|` at interior points.
pub fn ode_residual(traj: &GridTrajectory, f: &dyn Fn(&Vector) -> Vector) -> f64 {
    let pts = traj.grid().points();
    let v = traj.values();
    (1..v.len().saturating_sub(1))
        .map(|k| ((&v[k + 1] - &v[k - 1]) / (pts[k + 1] - pts[k - 1]) - f(&v[k])).norm())
        .fold(0.0, f64::max)
}
