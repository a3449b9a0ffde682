//! Linear roughness: sufficient conditions, bounded solutions on the
//! half-lines and the perturbed projectors built from them.
//!
//! For `c_- = P_- c_-` the bounded solution on `[0, inf)` is the fixed point of
//! `x = e^{tA}c_- + S_1 x` and its initial value is `(I - Z) c_-`; on
//! `(-inf, 0]` with `c_+ = P_+ c_+` it is `(I - Z') c_+`. With `L = I - Z - Z'`
//! the stable and unstable subspaces of `A + B` are `L P_- B` and `L P_+ B`.

use alloc::format;
use alloc::vec::Vec;

use crate::dichotomy::AggregateDichotomy;
use crate::error::{Error, Result};
use crate::greens::{contraction_factor, Domain, Extrapolation, GreensFunction, GridTrajectory, Propagators};
use crate::linalg::{assemble_full, spectral_norm, BlockSystem, CouplingNorms, Mat, Vector};
use crate::quadrature::TimeGrid;
use crate::report::{ConditionId, ConditionReport};

/// Fraction of a strict upper bound on the decay rate that is reported.
pub const MU_FRACTION: f64 = 0.99;

pub(crate) fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

pub(crate) fn sqrt_pairs(n: f64) -> f64 {
    libm::sqrt(n * (n - 1.0))
}

/// Bounded-solution conditions on `[0, inf)`, sum and max forms, with the
/// amplification `|||x||| <= factor |c_-|` and the bound on `|Z|`.
pub fn check_halfline(agg: &AggregateDichotomy, norms: &CouplingNorms) -> Vec<ConditionReport> {
    let n = agg.n() as f64;
    let w = agg.weight_sum();
    let q_sum = w * norms.sum;
    let mut sum = ConditionReport::strict(ConditionId::HalfLineSum, norms.sum, ratio(1.0, w));
    sum.derive("q", q_sum)
        .derive("amplification", agg.m_sum / (1.0 - q_sum))
        .derive("z_bound", agg.m_sum * agg.unstable_weight_sum * norms.sum / (1.0 - q_sum));

    let k = agg.k1 + agg.k2;
    let q_max = n * libm::sqrt(n - 1.0) * k * norms.max;
    let q_tight = sqrt_pairs(n) * k * norms.max;
    let mut max = ConditionReport::strict(ConditionId::HalfLineMax, norms.max, ratio(1.0, n * libm::sqrt(n - 1.0) * k));
    max.derive("q", q_max)
        .derive("amplification", agg.m_max / (1.0 - q_tight))
        .derive("z_bound", libm::sqrt(n) * agg.m_max * agg.k2 * norms.max / (1.0 - q_tight));
    alloc::vec![sum, max]
}

/// Bounded-solution conditions on `(-inf, 0]`.
pub fn check_negative_halfline(agg: &AggregateDichotomy, norms: &CouplingNorms) -> Vec<ConditionReport> {
    let n = agg.n() as f64;
    let w = agg.weight_sum();
    let q_sum = w * norms.sum;
    let mut sum = ConditionReport::strict(ConditionId::NegHalfLineSum, norms.sum, ratio(1.0, w));
    sum.derive("q", q_sum)
        .derive("amplification", agg.n_sum / (1.0 - q_sum))
        .derive("z_bound", agg.n_sum * agg.stable_weight_sum * norms.sum / (1.0 - q_sum));

    let k = agg.k1 + agg.k2;
    let q = 2.0 * sqrt_pairs(n) * k * norms.max;
    let mut max = ConditionReport::strict(ConditionId::NegHalfLineMax, norms.max, ratio(1.0, 2.0 * sqrt_pairs(n) * k));
    max.derive("q", q)
        .derive("amplification", agg.n_max / (1.0 - q))
        .derive("z_bound", libm::sqrt(n) * agg.n_max * agg.k1 * norms.max / (1.0 - q));
    max.note("the max form on the negative half-line carries a factor 2 absent on the positive side");
    alloc::vec![sum, max]
}

fn finish_decay(r: &mut ConditionReport, m1: f64, m2: f64, mu_max: f64) {
    r.derive("mu_max", mu_max).derive("mu", MU_FRACTION * mu_max).derive("m_tilde", m1).derive("m_tilde_2", m2);
    if r.satisfied && !m1.is_finite() {
        r.note("the constant degenerates at zero coupling; the uncoupled amplification applies instead");
    }
}

/// First decay estimate for the perturbed stable part: sum form
/// `sum |A_ij| < Lambda / (2 Mbar)` and max form
/// `max |A_ij| < Lambda / (2 sqrt(n(n-1)) Nbar)`.
pub fn estimate_decay(agg: &AggregateDichotomy, norms: &CouplingNorms) -> Vec<ConditionReport> {
    let n = agg.n() as f64;
    let lam = agg.lambda;

    let mut sum = ConditionReport::strict(ConditionId::DecaySum, norms.sum, ratio(lam, 2.0 * agg.m_bar));
    if sum.satisfied {
        let mu_max = libm::sqrt(lam * lam - 2.0 * lam * agg.m_bar * norms.sum);
        let den = agg.m_bar * norms.sum;
        finish_decay(&mut sum, ratio(agg.m_sum * lam, den), ratio(agg.n_sum * lam, den), mu_max);
        sum.derive("amplification", agg.m_sum);
    }

    let c = sqrt_pairs(n) * agg.n_bar;
    let mut max = ConditionReport::strict(ConditionId::DecayMax, norms.max, ratio(lam, 2.0 * c));
    if max.satisfied {
        let mu_max = libm::sqrt(lam * lam - 2.0 * lam * c * norms.max);
        let den = libm::sqrt(n - 1.0) * agg.n_bar * norms.max;
        finish_decay(&mut max, ratio(agg.m_max * lam, den), ratio(agg.n_max * lam, den), mu_max);
        max.derive("amplification", libm::sqrt(n) * agg.m_max);
    }
    alloc::vec![sum, max]
}

/// Refined decay estimate: sum form with
/// `q_1 = n Nbar max(alpha_i + beta_i) sum|A_ij| / (Lambda^2 - mu^2)` and max
/// form with `q_2 = sqrt(n(n-1)) Nbar max|A_ij| / (Lambda^2 - mu^2)`.
pub fn estimate_decay_refined(agg: &AggregateDichotomy, norms: &CouplingNorms) -> Vec<ConditionReport> {
    let n = agg.n() as f64;
    let lam2 = agg.lambda * agg.lambda;

    let c1 = n * agg.n_bar * agg.max_rate_sum;
    let mut sum = ConditionReport::strict(ConditionId::DecayRefinedSum, norms.sum, ratio(lam2, c1));
    if sum.satisfied {
        let mu_max = libm::sqrt(lam2 - c1 * norms.sum);
        let mu = MU_FRACTION * mu_max;
        let q1 = ratio(c1 * norms.sum, lam2 - mu * mu);
        finish_decay(&mut sum, agg.m_sum / (1.0 - q1), agg.n_sum / (1.0 - q1), mu_max);
        sum.derive("q1", q1);
    }

    let c2 = sqrt_pairs(n) * agg.n_bar;
    let mut max = ConditionReport::strict(ConditionId::DecayRefinedMax, norms.max, ratio(lam2, c2));
    if max.satisfied {
        let mu_max = libm::sqrt(lam2 - c2 * norms.max);
        let mu = MU_FRACTION * mu_max;
        let q2 = ratio(c2 * norms.max, lam2 - mu * mu);
        let rn = libm::sqrt(n);
        finish_decay(&mut max, rn * agg.m_max / (1.0 - q2), rn * agg.n_max / (1.0 - q2), mu_max);
        max.derive("q2", q2);
    }
    max.note("the max form omits the max(alpha_i + beta_i) factor of the sum form");
    alloc::vec![sum, max]
}

/// Whole-line conditions (non-strict printed thresholds) and the direct
/// check `|Z + Z'| < 1` when the operators are available; holds if any part
/// holds.
pub fn check_wholeline(agg: &AggregateDichotomy, norms: &CouplingNorms, splitting_norm: Option<f64>) -> ConditionReport {
    let n = agg.n() as f64;
    let den1 = agg.n_sum * agg.stable_weight_sum + agg.m_sum * agg.unstable_weight_sum + agg.weight_sum();
    let sum = ConditionReport::non_strict(ConditionId::WholeLineSum, norms.sum, ratio(1.0, den1));
    let den2 = libm::sqrt(n) * (agg.n_max * agg.k1 + agg.m_max * agg.k2) + sqrt_pairs(n) * (agg.k1 + agg.k2);
    let max = ConditionReport::non_strict(ConditionId::WholeLineMax, norms.max, ratio(1.0, den2));
    let mut parts = alloc::vec![sum, max];
    if let Some(s) = splitting_norm {
        parts.push(ConditionReport::strict(ConditionId::WholeLineDirect, s, 1.0));
    }
    ConditionReport::any_of(ConditionId::WholeLine, parts)
}

/// Decay constants of the perturbed system: `|x(t)| <= m1 e^{-mu (t-s)} |x(s)|`
/// on the stable part forward and the mirror with `m2` on the unstable part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbedConstants {
    pub m1: f64,
    pub m2: f64,
    pub mu: f64,
    pub source: ConditionId,
}

/// First certified finite pair, preferring the sum forms of the first and
/// then the refined estimate.
pub fn select_constants(reports: &[ConditionReport]) -> Option<PerturbedConstants> {
    use ConditionId::*;
    for id in [DecaySum, DecayRefinedSum, DecayMax, DecayRefinedMax] {
        if let Some(r) = reports.iter().find(|r| r.id == id) {
            if let (Some((m1, mu)), Some(m2)) = (r.decay_pair(), r.get("m_tilde_2")) {
                if m2.is_finite() {
                    return Some(PerturbedConstants { m1, m2, mu, source: id });
                }
            }
        }
    }
    None
}

/// Numerical parameters of the bounded-solution solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearOptions {
    /// Target accuracy of fixed points and bound on neglected tails.
    pub tol: f64,
    /// Length of the truncated half-line; chosen from the decay rates if unset.
    pub t_infinity: Option<f64>,
    /// Grid step; `min(Lambda / 50, 0.1 / |A + B|)` if unset.
    pub step: Option<f64>,
    pub max_iter: usize,
    /// Combine steps `h` and `h / 2` by Richardson extrapolation for `Z`, `Z'`.
    pub richardson: bool,
}

impl Default for LinearOptions {
    fn default() -> Self {
        Self { tol: 1e-10, t_infinity: None, step: None, max_iter: 2000, richardson: true }
    }
}

/// `min(q_sum, q_max)`, failing when neither is below one.
pub fn contraction_q(agg: &AggregateDichotomy, norms: &CouplingNorms) -> Result<f64> {
    let (qs, qm) = contraction_factor(agg, norms);
    let q = qs.min(qm);
    if q < 1.0 {
        Ok(q)
    } else {
        Err(Error::ContractionViolated { q })
    }
}

/// Truncation length and step count for a half-line grid.
pub fn halfline_grid_size(sys: &BlockSystem, agg: &AggregateDichotomy, opts: &LinearOptions) -> Result<(f64, usize)> {
    let norms = sys.coupling_norms();
    let q = contraction_q(agg, &norms)?;
    let lam = agg.lambda;
    let t = match opts.t_infinity {
        Some(t) => t,
        None => {
            let amp = (agg.m_sum.max(agg.n_sum) / (1.0 - q)).max(1.0);
            let c = (agg.m_sum + agg.n_sum) / lam * norms.full.max(1e-300) * amp;
            libm::log(c.max(1.0) / opts.tol).max(1.0) / lam + 2.0 / lam
        }
    };
    let full = spectral_norm(&assemble_full(sys));
    let h = opts.step.unwrap_or_else(|| (lam / 50.0).min(0.1 / full.max(1e-300)));
    if !(t > 0.0 && h > 0.0 && t.is_finite()) {
        return Err(Error::Validation(format!("invalid truncation {t} or step {h}")));
    }
    let steps = libm::ceil(t / h) as usize;
    Ok((t, steps.max(2)))
}

/// Bounded solution on a half-line and the Picard history that produced it.
#[derive(Debug, Clone)]
pub struct HalfLineSolution {
    pub trajectory: GridTrajectory,
    /// `|||x_{k+1} - x_k|||` for every iteration.
    pub increments: Vec<f64>,
    /// `|||x - e^{tA}c - S x|||` at the returned iterate.
    pub residual: f64,
    pub tail_bound: f64,
    pub q: f64,
}

impl HalfLineSolution {
    /// Ratios of successive Picard increments.
    pub fn ratios(&self) -> Vec<f64> {
        self.increments.windows(2).filter(|w| w[0] > 0.0).map(|w| w[1] / w[0]).collect()
    }
}

pub(crate) struct PicardRun {
    pub values: Vec<Mat>,
    pub increments: Vec<f64>,
    pub residual: f64,
    pub tail_bound: f64,
}

/// `e^{tA} c` on the grid, propagated away from `t = 0`; zero on the line.
pub(crate) fn homogeneous(props: &Propagators, c: &Mat, n: usize, domain: Domain) -> Vec<Mat> {
    let mut base = alloc::vec![c.clone(); n];
    match domain {
        Domain::PositiveHalfLine => {
            for k in 1..n {
                base[k] = props.stable_step() * &base[k - 1];
            }
        }
        Domain::NegativeHalfLine => {
            for k in (0..n - 1).rev() {
                base[k] = props.unstable_step() * &base[k + 1];
            }
        }
        Domain::WholeLine => base.iter_mut().for_each(|b| b.fill(0.0)),
    }
    base
}

/// Fixed-point iteration `x = base + int G f(x)` starting from `base`.
/// `inspect` sees every iterate and may abort.
#[allow(clippy::too_many_arguments)]
pub(crate) fn picard_iterate(
    g: &GreensFunction,
    props: &Propagators,
    grid: &TimeGrid,
    base: Vec<Mat>,
    domain: Domain,
    q: f64,
    tol: f64,
    max_iter: usize,
    norm: fn(&Mat) -> f64,
    forcing: &dyn Fn(&Mat) -> Mat,
    inspect: &mut dyn FnMut(&[Mat]) -> Result<()>,
) -> Result<PicardRun> {
    let stop = if q > 0.0 { tol * (1.0 - q) / q } else { f64::INFINITY };
    let sup = |v: &[Mat]| v.iter().map(norm).fold(0.0, f64::max);
    let apply = |x: &[Mat]| -> Result<Vec<Mat>> {
        let f: Vec<Mat> = x.iter().map(forcing).collect();
        g.convolve(props, grid, &f, domain, Extrapolation::Hold)
    };
    let mut x = base.clone();
    inspect(&x)?;
    let mut increments = Vec::new();
    let mut converged = false;
    for _ in 0..max_iter {
        let y = apply(&x)?;
        let next: Vec<Mat> = base.iter().zip(y).map(|(b, y)| b + y).collect();
        let delta = x.iter().zip(&next).map(|(a, b)| norm(&(b - a))).fold(0.0, f64::max);
        let size = sup(&next);
        x = next;
        inspect(&x)?;
        increments.push(delta);
        // stop once the a-posteriori error is below tol or at rounding level
        if delta <= stop || delta <= 1e-13 * size {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence(max_iter));
    }
    let y = apply(&x)?;
    let residual = x.iter().zip(&base).zip(&y).map(|((x, b), y)| norm(&(x - b - y))).fold(0.0, f64::max);
    let forcing_sup = x.iter().map(|xk| norm(&forcing(xk))).fold(0.0, f64::max);
    let tail_bound = g.tail_bound(grid, forcing_sup, domain);
    if tail_bound > tol {
        return Err(Error::TailTooLarge { bound: tail_bound, tol });
    }
    Ok(PicardRun { values: x, increments, residual, tail_bound })
}

#[allow(clippy::too_many_arguments)]
fn picard(
    sys: &BlockSystem,
    g: &GreensFunction,
    grid: &TimeGrid,
    c: &Mat,
    domain: Domain,
    q: f64,
    opts: &LinearOptions,
    norm: fn(&Mat) -> f64,
) -> Result<PicardRun> {
    let h = grid.uniform_step().ok_or_else(|| Error::Validation("solver needs a uniform grid".into()))?;
    let props = g.propagators(h)?;
    let bmat = sys.coupling_matrix();
    if domain == Domain::WholeLine {
        return Err(Error::Validation("the homogeneous part is unbounded on the line".into()));
    }
    let base = homogeneous(&props, c, grid.len(), domain);
    picard_iterate(g, &props, grid, base, domain, q, opts.tol, opts.max_iter, norm, &|x| &bmat * x, &mut |_| Ok(()))
}

pub(crate) fn frobenius(m: &Mat) -> f64 {
    m.norm()
}

pub(crate) fn check_subspace(p: &Mat, c: &Vector) -> Result<Mat> {
    if c.len() != p.nrows() {
        return Err(Error::Shape(format!("initial vector of length {} for dimension {}", c.len(), p.nrows())));
    }
    let defect = (p * c - c).norm();
    if defect > 1e-10 * c.norm().max(1.0) {
        return Err(Error::InvalidInitialData { defect });
    }
    Ok(Mat::from_column_slice(c.len(), 1, c.as_slice()))
}

fn solve_side(
    sys: &BlockSystem,
    agg: &AggregateDichotomy,
    g: &GreensFunction,
    c: &Vector,
    grid: &TimeGrid,
    opts: &LinearOptions,
    domain: Domain,
) -> Result<HalfLineSolution> {
    let p = if domain == Domain::PositiveHalfLine { &agg.p_minus } else { &agg.p_plus };
    let c = check_subspace(p, c)?;
    let q = contraction_q(agg, &sys.coupling_norms())?;
    match domain {
        Domain::PositiveHalfLine if grid.start().abs() > 1e-12 => {
            return Err(Error::Validation("the grid must start at 0".into()))
        }
        Domain::NegativeHalfLine if grid.end().abs() > 1e-12 => {
            return Err(Error::Validation("the grid must end at 0".into()))
        }
        _ => {}
    }
    let run = picard(sys, g, grid, &c, domain, q, opts, frobenius)?;
    Ok(HalfLineSolution {
        trajectory: GridTrajectory::from_columns(grid.clone(), run.values, Extrapolation::Hold)?,
        increments: run.increments,
        residual: run.residual,
        tail_bound: run.tail_bound,
        q,
    })
}

/// Bounded solution on `[0, T]` of `x' = (A + B) x` with `P_- x(0) = c_-`.
pub fn solve_bounded_halfline(
    sys: &BlockSystem,
    agg: &AggregateDichotomy,
    g: &GreensFunction,
    c_minus: &Vector,
    grid: &TimeGrid,
    opts: &LinearOptions,
) -> Result<HalfLineSolution> {
    solve_side(sys, agg, g, c_minus, grid, opts, Domain::PositiveHalfLine)
}

/// Bounded solution on `[-T, 0]` with `P_+ x(0) = c_+`.
pub fn solve_bounded_negative_halfline(
    sys: &BlockSystem,
    agg: &AggregateDichotomy,
    g: &GreensFunction,
    c_plus: &Vector,
    grid: &TimeGrid,
    opts: &LinearOptions,
) -> Result<HalfLineSolution> {
    solve_side(sys, agg, g, c_plus, grid, opts, Domain::NegativeHalfLine)
}

/// An operator obtained on two grids and extrapolated.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorEstimate {
    pub value: Mat,
    pub coarse: Mat,
    pub fine: Option<Mat>,
    /// `|fine - coarse|`, an estimate of the coarse-grid error.
    pub step_error: f64,
    pub t_infinity: f64,
    pub steps: usize,
    pub iterations: usize,
}

fn initial_value_operator(
    sys: &BlockSystem,
    agg: &AggregateDichotomy,
    g: &GreensFunction,
    opts: &LinearOptions,
    domain: Domain,
) -> Result<OperatorEstimate> {
    let q = contraction_q(agg, &sys.coupling_norms())?;
    let (t, steps) = halfline_grid_size(sys, agg, opts)?;
    let (p, q_out) = match domain {
        Domain::PositiveHalfLine => (&agg.p_minus, &agg.p_plus),
        _ => (&agg.p_plus, &agg.p_minus),
    };
    let run = |steps: usize| -> Result<(Mat, usize)> {
        let grid = match domain {
            Domain::PositiveHalfLine => TimeGrid::uniform(0.0, t, steps)?,
            _ => TimeGrid::uniform(-t, 0.0, steps)?,
        };
        let r = picard(sys, g, &grid, p, domain, q, opts, frobenius)?;
        let x0 = match domain {
            Domain::PositiveHalfLine => &r.values[0],
            _ => &r.values[r.values.len() - 1],
        };
        // x(0) = (I - Z) c, restricted to the off-diagonal block
        Ok((q_out * (p - x0) * p, r.increments.len()))
    };
    let (coarse, it) = run(steps)?;
    if !opts.richardson {
        return Ok(OperatorEstimate { value: coarse.clone(), coarse, fine: None, step_error: f64::NAN, t_infinity: t, steps, iterations: it });
    }
    let (fine, it2) = run(2 * steps)?;
    let value = (&fine * 4.0 - &coarse) / 3.0;
    let step_error = spectral_norm(&(&fine - &coarse));
    Ok(OperatorEstimate { value, coarse, fine: Some(fine), step_error, t_infinity: t, steps, iterations: it.max(it2) })
}

/// `Z = P_+ Z P_-` with `x(0) = (I - Z) c_-` for the bounded solution on
/// `[0, inf)`, computed for all of `range(P_-)` at once.
pub fn compute_z(sys: &BlockSystem, agg: &AggregateDichotomy, g: &GreensFunction, opts: &LinearOptions) -> Result<OperatorEstimate> {
    initial_value_operator(sys, agg, g, opts, Domain::PositiveHalfLine)
}

/// `Z' = P_- Z' P_+` with `x(0) = (I - Z') c_+` for the bounded solution on
/// `(-inf, 0]`.
pub fn compute_z_prime(
    sys: &BlockSystem,
    agg: &AggregateDichotomy,
    g: &GreensFunction,
    opts: &LinearOptions,
) -> Result<OperatorEstimate> {
    initial_value_operator(sys, agg, g, opts, Domain::NegativeHalfLine)
}

/// Operators and projectors of the coupled system.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedDichotomy {
    pub z: Mat,
    pub z_prime: Mat,
    /// `F = I - Z`, mapping `range(P_-)` onto the stable initial data.
    pub f: Mat,
    pub f_inv: Mat,
    /// `H = I - Z'`, mapping `range(P_+)` onto the unstable initial data.
    pub h: Mat,
    pub h_inv: Mat,
    /// `L = I - Z - Z' = F P_- + H P_+`.
    pub l: Mat,
    pub l_inv: Mat,
    /// `F P_- F^{-1}`: onto the stable data along `range(P_+)`.
    pub halfline_minus: Mat,
    /// `H P_+ H^{-1}`: onto the unstable data along `range(P_-)`.
    pub halfline_plus: Mat,
    /// `L P_- L^{-1}`: the dichotomy projector of the coupled system.
    pub p_tilde_minus: Mat,
    pub p_tilde_plus: Mat,
    /// `|Z + Z'|`
    pub splitting_norm: f64,
    pub constants: Option<PerturbedConstants>,
}

/// Assembles `F`, `H`, `L` and the projectors from `Z`, `Z'`. Fails unless
/// `|Z + Z'| < 1`.
pub fn build_perturbed_projectors(z: &Mat, z_prime: &Mat, agg: &AggregateDichotomy) -> Result<PerturbedDichotomy> {
    let d = agg.p_minus.nrows();
    if z.shape() != (d, d) || z_prime.shape() != (d, d) {
        return Err(Error::Shape(format!("Z {:?} and Z' {:?} for dimension {d}", z.shape(), z_prime.shape())));
    }
    let (pm, pp) = (&agg.p_minus, &agg.p_plus);
    let z = pp * z * pm;
    let z_prime = pm * z_prime * pp;
    let splitting_norm = spectral_norm(&(&z + &z_prime));
    if !(splitting_norm < 1.0) {
        return Err(Error::SplittingNotCertified { norm: splitting_norm });
    }
    let id = Mat::identity(d, d);
    let f = &id - &z;
    let f_inv = &id + &z;
    let h = &id - &z_prime;
    let h_inv = &id + &z_prime;
    let l = &id - &z - &z_prime;
    let l_inv = crate::linalg::solve(&l, &id)?;
    Ok(PerturbedDichotomy {
        halfline_minus: &f * pm * &f_inv,
        halfline_plus: &h * pp * &h_inv,
        p_tilde_minus: &l * pm * &l_inv,
        p_tilde_plus: &l * pp * &l_inv,
        z,
        z_prime,
        f,
        f_inv,
        h,
        h_inv,
        l,
        l_inv,
        splitting_norm,
        constants: None,
    })
}

/// Computes `Z`, `Z'` and the perturbed projectors, attaching the first
/// certified decay constants.
pub fn perturb(sys: &BlockSystem, agg: &AggregateDichotomy, opts: &LinearOptions) -> Result<PerturbedDichotomy> {
    let g = GreensFunction::uncoupled(sys, agg)?;
    let z = compute_z(sys, agg, &g, opts)?;
    let zp = compute_z_prime(sys, agg, &g, opts)?;
    let mut pd = build_perturbed_projectors(&z.value, &zp.value, agg)?;
    let norms = sys.coupling_norms();
    let mut reports = estimate_decay(agg, &norms);
    reports.extend(estimate_decay_refined(agg, &norms));
    pd.constants = select_constants(&reports);
    Ok(pd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dichotomy::{aggregate, extract_dichotomy};
    use approx::assert_relative_eq;

    fn m(r: usize, c: usize, v: &[f64]) -> Mat {
        Mat::from_row_slice(r, c, v)
    }

    fn running(eps: f64, margin: f64) -> (BlockSystem, AggregateDichotomy) {
        let sys = BlockSystem::new(
            alloc::vec![m(1, 1, &[-1.0]), m(1, 1, &[1.0])],
            [((0, 1), m(1, 1, &[eps])), ((1, 0), m(1, 1, &[eps]))],
        )
        .unwrap();
        let agg = aggregate(sys.blocks().iter().map(|a| extract_dichotomy(a, margin).unwrap()).collect()).unwrap();
        (sys, agg)
    }

    #[test]
    fn halfline_conditions_on_the_running_example() {
        let (sys, agg) = running(0.1, 0.0);
        let r = check_halfline(&agg, &sys.coupling_norms());
        assert!(r[0].satisfied);
        assert_relative_eq!(r[0].lhs, 0.2, epsilon = 1e-15);
        assert_relative_eq!(r[0].threshold, 0.5, epsilon = 1e-15);
        assert_relative_eq!(r[0].get("amplification").unwrap(), 1.0 / 0.6, epsilon = 1e-12);
        let (sys, agg) = running(0.3, 0.0);
        let r = check_halfline(&agg, &sys.coupling_norms());
        assert!(!r[0].satisfied);
        assert!(r[0].derived.is_empty());
    }

    #[test]
    fn zero_coupling_degenerates_cleanly() {
        let (sys, agg) = running(0.0, 0.1);
        let norms = sys.coupling_norms();
        let h = check_halfline(&agg, &norms);
        assert_relative_eq!(h[0].get("amplification").unwrap(), agg.m_sum);
        let d = estimate_decay(&agg, &norms);
        assert!(d[0].satisfied);
        assert_relative_eq!(d[0].get("mu_max").unwrap(), agg.lambda, epsilon = 1e-14);
        assert_eq!(d[0].get("m_tilde"), Some(f64::INFINITY));
        assert!(!d[0].notes.is_empty());
        let r = estimate_decay_refined(&agg, &norms);
        assert_eq!(r[0].get("q1"), Some(0.0));
        assert_relative_eq!(r[0].get("m_tilde").unwrap(), agg.m_sum);
        assert!(check_wholeline(&agg, &norms, Some(0.0)).satisfied);
    }

    #[test]
    fn decay_estimates_on_the_running_example() {
        let (sys, agg) = running(0.1, 0.0);
        let norms = sys.coupling_norms();
        let d = estimate_decay(&agg, &norms);
        assert_relative_eq!(d[0].get("mu_max").unwrap(), libm::sqrt(0.6), epsilon = 1e-12);
        assert_relative_eq!(d[0].get("m_tilde").unwrap(), 5.0, epsilon = 1e-12);
        let r = estimate_decay_refined(&agg, &norms);
        assert_relative_eq!(r[0].get("mu_max").unwrap(), libm::sqrt(0.2), epsilon = 1e-12);
        let mu = 0.99 * libm::sqrt(0.2);
        assert_relative_eq!(r[0].get("q1").unwrap(), 0.8 / (1.0 - mu * mu), epsilon = 1e-12);
        let w = check_wholeline(&agg, &norms, None);
        assert_relative_eq!(w.parts[0].threshold, 0.25, epsilon = 1e-12);
        assert!(w.parts[0].satisfied);
    }

    #[test]
    fn z_and_projector_match_the_eigenvectors() {
        let (sys, agg) = running(0.1, 0.0);
        let pd = perturb(&sys, &agg, &LinearOptions::default()).unwrap();
        let s = libm::sqrt(1.01);
        // stable eigenvector (1, (1 - s)/0.1), unstable (0.1/(1 + s), 1)
        assert_relative_eq!(pd.z[(1, 0)], -(1.0 - s) / 0.1, epsilon = 1e-9);
        assert_relative_eq!(pd.z_prime[(0, 1)], -0.1 / (1.0 + s), epsilon = 1e-9);
        // symmetric matrix: the spectral projector is orthogonal
        let v = Vector::from_vec(alloc::vec![1.0, (1.0 - s) / 0.1]).normalize();
        let p = &v * v.transpose();
        assert_relative_eq!(pd.p_tilde_minus, p, epsilon = 1e-9);
        assert_relative_eq!(&pd.p_tilde_minus * &pd.p_tilde_minus, pd.p_tilde_minus.clone(), epsilon = 1e-12);
        assert_relative_eq!(&pd.f * &pd.f_inv, Mat::identity(2, 2), epsilon = 1e-14);
        assert_eq!(pd.constants.unwrap().source, ConditionId::DecaySum);
    }

    #[test]
    fn zero_operators_give_the_unperturbed_projectors() {
        let (_, agg) = running(0.0, 0.0);
        let pd = build_perturbed_projectors(&Mat::zeros(2, 2), &Mat::zeros(2, 2), &agg).unwrap();
        assert_eq!(pd.p_tilde_minus, agg.p_minus);
        assert_eq!(pd.halfline_plus, agg.p_plus);
    }

    #[test]
    fn large_splitting_is_rejected() {
        let (_, agg) = running(0.0, 0.0);
        let z = m(2, 2, &[0.0, 0.0, 1.5, 0.0]);
        assert!(matches!(
            build_perturbed_projectors(&z, &Mat::zeros(2, 2), &agg),
            Err(Error::SplittingNotCertified { .. })
        ));
    }

    #[test]
    fn halfline_solution_respects_the_contraction() {
        let (sys, agg) = running(0.1, 0.0);
        let g = GreensFunction::uncoupled(&sys, &agg).unwrap();
        let grid = TimeGrid::uniform(0.0, 30.0, 3000).unwrap();
        let c = Vector::from_vec(alloc::vec![1.0, 0.0]);
        let sol = solve_bounded_halfline(&sys, &agg, &g, &c, &grid, &LinearOptions::default()).unwrap();
        assert!(sol.ratios().iter().all(|r| *r <= 0.4 * (1.0 + 1e-6)));
        assert!(sol.residual < 1e-9);
        assert!(sol.trajectory.norm_sup() <= 1.0 / 0.6);
        let bad = Vector::from_vec(alloc::vec![1.0, 1.0]);
        assert!(matches!(
            solve_bounded_halfline(&sys, &agg, &g, &bad, &grid, &LinearOptions::default()),
            Err(Error::InvalidInitialData { .. })
        ));
        let (sys, agg) = running(0.6, 0.0);
        let g = GreensFunction::uncoupled(&sys, &agg).unwrap();
        assert!(matches!(
            solve_bounded_halfline(&sys, &agg, &g, &c, &grid, &LinearOptions::default()),
            Err(Error::ContractionViolated { .. })
        ));
    }
}
