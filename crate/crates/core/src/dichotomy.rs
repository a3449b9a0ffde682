//! Per-block dichotomy data and its aggregation over the whole system.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{is_normal, matrix_exponential, spectral_norm, BlockSystem, Mat};
use crate::schur::stable_projector;

/// Default distance from the imaginary axis below which a block is rejected.
pub const HYPERBOLICITY_TOL: f64 = 1e-8;
/// Default fraction of the spectral gap given up to obtain finite constants.
pub const DEFAULT_MARGIN: f64 = 0.1;

const SAMPLES: usize = 2000;
const HORIZON: f64 = 50.0;
const INFLATION: f64 = 1.01;

/// Projector and constants with `|e^{tA}P| <= M e^{-alpha t}` and
/// `|e^{-tA}(I - P)| <= N e^{-beta t}` for `t >= 0`.
///
/// An empty part has constant 0; its rate copies the rate of the other part
/// so that it never lowers a minimum nor inflates a maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsystemDichotomy {
    pub projector: Mat,
    pub m: f64,
    pub alpha: f64,
    pub n: f64,
    pub beta: f64,
    pub stable_dim: usize,
}

impl SubsystemDichotomy {
    pub fn dim(&self) -> usize {
        self.projector.nrows()
    }

    pub fn has_stable(&self) -> bool {
        self.stable_dim > 0
    }

    pub fn has_unstable(&self) -> bool {
        self.stable_dim < self.dim()
    }

    /// `M/alpha`, zero for an empty stable part.
    pub fn stable_weight(&self) -> f64 {
        if self.has_stable() { self.m / self.alpha } else { 0.0 }
    }

    /// `N/beta`, zero for an empty unstable part.
    pub fn unstable_weight(&self) -> f64 {
        if self.has_unstable() { self.n / self.beta } else { 0.0 }
    }

    /// Largest ratios `|e^{tA}P| / (M e^{-alpha t})` and
    /// `|e^{-tA}(I-P)| / (N e^{-beta t})` over `samples` uniform points of
    /// `[0, t_max]`, evaluated by direct exponentials. Empty parts give 0.
    pub fn bound_ratios(&self, a: &Mat, t_max: f64, samples: usize) -> Result<(f64, f64)> {
        let d = self.dim();
        let q = Mat::identity(d, d) - &self.projector;
        let gs = a * &self.projector;
        let gu = -(a * &q);
        let mut worst = (0.0f64, 0.0f64);
        for k in 0..=samples {
            let t = t_max * k as f64 / samples.max(1) as f64;
            if self.has_stable() {
                let v = spectral_norm(&(matrix_exponential(&gs, t)? * &self.projector));
                worst.0 = worst.0.max(v / (self.m * libm::exp(-self.alpha * t)));
            }
            if self.has_unstable() {
                let v = spectral_norm(&(matrix_exponential(&gu, t)? * &q));
                worst.1 = worst.1.max(v / (self.n * libm::exp(-self.beta * t)));
            }
        }
        Ok(worst)
    }
}

/// Options for [`extract_dichotomy_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractOptions {
    pub margin: f64,
    pub hyperbolicity_tol: f64,
    /// Number of samples of the sup search.
    pub samples: usize,
    /// The sup search covers `[0, horizon / rate]`.
    pub horizon: f64,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self { margin: DEFAULT_MARGIN, hyperbolicity_tol: HYPERBOLICITY_TOL, samples: SAMPLES, horizon: HORIZON }
    }
}

/// Dichotomy data of one block with the given margin and default options.
pub fn extract_dichotomy(a: &Mat, margin: f64) -> Result<SubsystemDichotomy> {
    extract_dichotomy_with(a, &ExtractOptions { margin, ..ExtractOptions::default() })
}

pub fn extract_dichotomy_with(a: &Mat, opts: &ExtractOptions) -> Result<SubsystemDichotomy> {
    if !(0.0..1.0).contains(&opts.margin) {
        return Err(Error::Validation(format!("margin {} outside [0, 1)", opts.margin)));
    }
    let split = stable_projector(a, opts.hyperbolicity_tol)?;
    let d = a.nrows();
    let scale = 1.0 - opts.margin;
    let alpha = split.stable_abscissa().map(|r| -r * scale);
    let beta = split.unstable_abscissa().map(|r| r * scale);
    let p = split.projector;
    let q = Mat::identity(d, d) - &p;
    let normal = is_normal(a, 1e-12);

    let m = match alpha {
        Some(_) if normal => 1.0,
        Some(rate) => sup_constant(&(a * &p), &p, rate, opts)?,
        None => 0.0,
    };
    let n = match beta {
        Some(_) if normal => 1.0,
        Some(rate) => sup_constant(&(-(a * &q)), &q, rate, opts)?,
        None => 0.0,
    };
    // an empty part borrows the other rate
    let (alpha, beta) = match (alpha, beta) {
        (Some(x), Some(y)) => (x, y),
        (Some(x), None) => (x, x),
        (None, Some(y)) => (y, y),
        (None, None) => unreachable!("a nonempty block has a stable or an unstable part"),
    };
    Ok(SubsystemDichotomy { projector: p, m, alpha, n, beta, stable_dim: split.stable_dim })
}

/// Certified-by-sampling `sup_t |e^{tG} P| e^{rate t}` where `G = A P` is the
/// generator restricted to the range of `P`.
fn sup_constant(generator: &Mat, p: &Mat, rate: f64, opts: &ExtractOptions) -> Result<f64> {
    let f = |t: f64| -> Result<f64> {
        Ok(spectral_norm(&(matrix_exponential(generator, t)? * p)) * libm::exp(rate * t))
    };
    let samples = opts.samples.max(10);
    let mut horizon = opts.horizon / rate;
    for _ in 0..4 {
        let h = horizon / samples as f64;
        // projecting every step keeps rounding out of the kernel of P, where
        // the restricted generator does not decay
        let step = p * matrix_exponential(generator, h)?;
        let mut e = p.clone();
        let (mut best, mut arg) = (spectral_norm(&e), 0usize);
        // e is kept rescaled; its true size is e * exp(log_scale)
        let mut log_scale = 0.0;
        for k in 1..=samples {
            e = &step * e;
            let mut s = spectral_norm(&e);
            if s > 0.0 && s < 1e-100 {
                e *= 1e100;
                log_scale -= libm::log(1e100);
                s = spectral_norm(&e);
            }
            let v = if s == 0.0 { 0.0 } else { libm::exp(libm::log(s) + log_scale + rate * h * k as f64) };
            if !v.is_finite() {
                return Err(Error::NonFinite("dichotomy constant"));
            }
            if v > best {
                best = v;
                arg = k;
            }
        }
        if arg < samples {
            let lo = arg.saturating_sub(1) as f64 * h;
            let hi = (arg + 1) as f64 * h;
            let refined = golden_max(&f, lo, hi, 40)?;
            return Ok(best.max(refined) * INFLATION);
        }
        // still growing at the end of the window: look further out
        horizon *= 4.0;
    }
    Err(Error::Validation(format!(
        "no finite dichotomy constant at rate {rate}; the margin is too small for this block"
    )))
}

fn golden_max(f: &dyn Fn(f64) -> Result<f64>, mut lo: f64, mut hi: f64, iters: usize) -> Result<f64> {
    let g = 0.5 * (libm::sqrt(5.0) - 1.0);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1)?, f(x2)?);
    let mut best = f(lo)?.max(f(hi)?);
    for _ in 0..iters {
        if f1 > f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2)?;
        }
        best = best.max(f1).max(f2);
    }
    Ok(best)
}

/// Block projectors assembled on the full space with the derived constants.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateDichotomy {
    pub per_block: Vec<SubsystemDichotomy>,
    pub p_minus: Mat,
    pub p_plus: Mat,
    /// `max M_i / alpha_i`
    pub k1: f64,
    /// `max N_i / beta_i`
    pub k2: f64,
    /// `min_i {alpha_i, beta_i}` over nonempty parts.
    pub lambda: f64,
    /// `max {sum M_i, sum N_i}`
    pub m_bar: f64,
    /// `max_i {M_i, N_i}`
    pub n_bar: f64,
    pub m_max: f64,
    pub n_max: f64,
    pub m_sum: f64,
    pub n_sum: f64,
    pub alpha: f64,
    pub beta: f64,
    /// `sum M_i / alpha_i`
    pub stable_weight_sum: f64,
    /// `sum N_i / beta_i`
    pub unstable_weight_sum: f64,
    /// `max_i (alpha_i + beta_i)`
    pub max_rate_sum: f64,
}

impl AggregateDichotomy {
    pub fn n(&self) -> usize {
        self.per_block.len()
    }

    /// `sum_i (M_i/alpha_i + N_i/beta_i)`
    pub fn weight_sum(&self) -> f64 {
        self.stable_weight_sum + self.unstable_weight_sum
    }

    pub fn stable_rank(&self) -> usize {
        self.per_block.iter().map(|b| b.stable_dim).sum()
    }
}

pub fn aggregate(per_block: Vec<SubsystemDichotomy>) -> Result<AggregateDichotomy> {
    if per_block.is_empty() {
        return Err(Error::Validation("aggregate needs at least one block".into()));
    }
    let d: usize = per_block.iter().map(|b| b.dim()).sum();
    let mut p_minus = Mat::zeros(d, d);
    let mut off = 0;
    for b in &per_block {
        p_minus.view_mut((off, off), (b.dim(), b.dim())).copy_from(&b.projector);
        off += b.dim();
    }
    let p_plus = Mat::identity(d, d) - &p_minus;

    let fold_max = |f: &dyn Fn(&SubsystemDichotomy) -> f64| per_block.iter().map(f).fold(0.0, f64::max);
    let fold_sum = |f: &dyn Fn(&SubsystemDichotomy) -> f64| per_block.iter().map(f).sum::<f64>();
    let stable_rates = per_block.iter().filter(|b| b.has_stable()).map(|b| b.alpha);
    let unstable_rates = per_block.iter().filter(|b| b.has_unstable()).map(|b| b.beta);
    let lambda = stable_rates.clone().chain(unstable_rates.clone()).fold(f64::INFINITY, f64::min);
    let alpha = stable_rates.fold(f64::INFINITY, f64::min);
    let beta = unstable_rates.fold(f64::INFINITY, f64::min);
    let m_sum = fold_sum(&|b| b.m);
    let n_sum = fold_sum(&|b| b.n);
    let m_max = fold_max(&|b| b.m);
    let n_max = fold_max(&|b| b.n);
    Ok(AggregateDichotomy {
        k1: fold_max(&|b| b.stable_weight()),
        k2: fold_max(&|b| b.unstable_weight()),
        lambda,
        m_bar: m_sum.max(n_sum),
        n_bar: m_max.max(n_max),
        m_max,
        n_max,
        m_sum,
        n_sum,
        alpha: if alpha.is_finite() { alpha } else { lambda },
        beta: if beta.is_finite() { beta } else { lambda },
        stable_weight_sum: fold_sum(&|b| b.stable_weight()),
        unstable_weight_sum: fold_sum(&|b| b.unstable_weight()),
        max_rate_sum: fold_max(&|b| b.alpha + b.beta),
        per_block,
        p_minus,
        p_plus,
    })
}

/// Extracts every block of `sys` and aggregates; a non-hyperbolic block is
/// reported with its index.
pub fn extract_system(sys: &BlockSystem, opts: &ExtractOptions) -> Result<AggregateDichotomy> {
    let mut per_block = Vec::with_capacity(sys.n());
    for (i, a) in sys.blocks().iter().enumerate() {
        match extract_dichotomy_with(a, opts) {
            Ok(b) => per_block.push(b),
            Err(Error::NotHyperbolic { re, im, tol, .. }) => {
                return Err(Error::NotHyperbolic { block: Some(i), re, im, tol })
            }
            Err(e) => return Err(e),
        }
    }
    aggregate(per_block)
}
