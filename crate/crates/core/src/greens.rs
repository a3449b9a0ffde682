//! Green's function `G(t) = e^{tA}P_-` for `t > 0`, `-e^{tA}P_+` for `t < 0`,
//! and the integral operators built from it on the half-lines and the line.
//!
//! Convolutions are evaluated with an exponential integrator that is exact
//! for piecewise-linear forcing: with `I(t) = int_{-inf}^t e^{(t-s)A}P_- f(s) ds`
//! and `J(t) = int_t^inf e^{(t-s)A}P_+ f(s) ds` the convolution is `I - J`, and
//! both satisfy one-step recursions driven by `phi_1`, `phi_2` of `hA`.

use alloc::format;
use alloc::vec::Vec;

use crate::dichotomy::AggregateDichotomy;
use crate::error::{Error, Result};
use crate::linalg::{matrix_exponential, spectral_norm, BlockSystem, CouplingNorms, Mat, Vector};
use crate::quadrature::TimeGrid;

/// Exponential bounds `|G(t)| <= m e^{-alpha t}` (t > 0) and
/// `|G(t)| <= n e^{-beta |t|}` (t < 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreenBound {
    pub m: f64,
    pub alpha: f64,
    pub n: f64,
    pub beta: f64,
}

impl GreenBound {
    /// `sup_t int |G(t - s)| ds`
    pub fn mass(&self) -> f64 {
        self.m / self.alpha + self.n / self.beta
    }
}

/// One-sided value at `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Right,
    Left,
}

/// Integration domain of a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    PositiveHalfLine,
    NegativeHalfLine,
    WholeLine,
}

/// How a sampled function continues outside its grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extrapolation {
    /// Constant continuation of the boundary values.
    Hold,
    /// Zero outside the grid.
    Zero,
}

#[derive(Debug, Clone)]
pub struct GreensFunction {
    generator: Mat,
    p_minus: Mat,
    p_plus: Mat,
    stable_gen: Mat,
    unstable_gen: Mat,
    inverse: Mat,
    bound: GreenBound,
}

impl GreensFunction {
    /// Green's function of `x' = generator x` split by `p_minus`, which must
    /// be an invariant projector of the generator.
    pub fn new(generator: Mat, p_minus: Mat, bound: GreenBound) -> Result<Self> {
        let d = generator.nrows();
        if !generator.is_square() || p_minus.shape() != (d, d) {
            return Err(Error::Shape(format!(
                "generator {:?} and projector {:?}",
                generator.shape(),
                p_minus.shape()
            )));
        }
        let comm = spectral_norm(&(&generator * &p_minus - &p_minus * &generator));
        let scale = spectral_norm(&generator).max(1.0) * spectral_norm(&p_minus).max(1.0);
        if comm > 1e-8 * scale {
            return Err(Error::Validation(format!("projector does not commute with the generator ({comm:e})")));
        }
        let inverse = generator
            .clone()
            .try_inverse()
            .filter(|m| m.iter().all(|v| v.is_finite()))
            .ok_or(Error::NonFinite("generator is singular"))?;
        let p_plus = Mat::identity(d, d) - &p_minus;
        Ok(Self {
            stable_gen: &generator * &p_minus,
            unstable_gen: &generator * &p_plus,
            generator,
            p_minus,
            p_plus,
            inverse,
            bound,
        })
    }

    /// Green's function of the uncoupled block-diagonal part.
    pub fn uncoupled(sys: &BlockSystem, agg: &AggregateDichotomy) -> Result<Self> {
        let bound = GreenBound { m: agg.m_sum, alpha: agg.alpha, n: agg.n_sum, beta: agg.beta };
        Self::new(sys.diagonal(), agg.p_minus.clone(), bound)
    }

    pub fn dim(&self) -> usize {
        self.generator.nrows()
    }

    pub fn generator(&self) -> &Mat {
        &self.generator
    }

    pub fn p_minus(&self) -> &Mat {
        &self.p_minus
    }

    pub fn p_plus(&self) -> &Mat {
        &self.p_plus
    }

    pub fn bound(&self) -> GreenBound {
        self.bound
    }

    /// `G(t)` for `t != 0`; at `t = 0` the right limit `P_-`.
    pub fn eval(&self, t: f64) -> Result<Mat> {
        self.eval_side(t, Side::Right)
    }

    /// `G(t)`, with `side` selecting the one-sided limit at `t = 0`.
    pub fn eval_side(&self, t: f64, side: Side) -> Result<Mat> {
        let g = if t > 0.0 || (t == 0.0 && side == Side::Right) {
            matrix_exponential(&self.stable_gen, t)? * &self.p_minus
        } else {
            -(matrix_exponential(&self.unstable_gen, t)? * &self.p_plus)
        };
        debug_assert!({
            let b = self.bound;
            let env = if t > 0.0 { b.m * libm::exp(-b.alpha * t) } else { b.n * libm::exp(b.beta * t) };
            spectral_norm(&g) <= env * (1.0 + 1e-6) + 1e-12
        });
        Ok(g)
    }

    /// Precomputed one-step propagators for step `h`.
    pub fn propagators(&self, h: f64) -> Result<Propagators> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Validation(format!("step {h} must be positive")));
        }
        let (e, p1, p2) = phi_blocks(&(&self.stable_gen * h))?;
        let (u, q1, q2) = phi_blocks(&(&self.unstable_gen * -h))?;
        Ok(Propagators {
            h,
            fwd: &e * &self.p_minus,
            fwd_a: (&p1 - &p2) * &self.p_minus * h,
            fwd_b: &p2 * &self.p_minus * h,
            bwd: &u * &self.p_plus,
            bwd_a: &q2 * &self.p_plus * h,
            bwd_b: (&q1 - &q2) * &self.p_plus * h,
        })
    }

    /// Convolution `y(t) = int G(t - s) f(s) ds` over `domain` at every grid
    /// point, for forcing sampled on a uniform grid and interpolated linearly.
    ///
    /// The half-line domains require the grid to end (resp. start) at 0.
    /// Under [`Extrapolation::Hold`] the parts of the domain beyond the grid
    /// are integrated exactly for constant continuation.
    pub fn convolve(
        &self,
        props: &Propagators,
        grid: &TimeGrid,
        forcing: &[Mat],
        domain: Domain,
        extrapolation: Extrapolation,
    ) -> Result<Vec<Mat>> {
        let h = grid.uniform_step().ok_or_else(|| Error::Validation("convolution needs a uniform grid".into()))?;
        if (h - props.h).abs() > 1e-12 * h {
            return Err(Error::Validation(format!("grid step {h} differs from propagator step {}", props.h)));
        }
        if forcing.len() != grid.len() {
            return Err(Error::Shape(format!("{} samples on a grid of {}", forcing.len(), grid.len())));
        }
        match domain {
            Domain::PositiveHalfLine if grid.start().abs() > 1e-12 => {
                return Err(Error::Validation("a positive half-line grid must start at 0".into()))
            }
            Domain::NegativeHalfLine if grid.end().abs() > 1e-12 => {
                return Err(Error::Validation("a negative half-line grid must end at 0".into()))
            }
            _ => {}
        }
        let d = self.dim();
        if forcing.iter().any(|f| f.nrows() != d) {
            return Err(Error::Shape(format!("forcing rows differ from dimension {d}")));
        }
        let n = forcing.len();
        let left_open = matches!(domain, Domain::NegativeHalfLine | Domain::WholeLine);
        let right_open = matches!(domain, Domain::PositiveHalfLine | Domain::WholeLine);
        let hold = extrapolation == Extrapolation::Hold;

        // I(t_0): nothing before the grid unless the domain extends to -inf
        let mut acc = if left_open && hold {
            -(&self.inverse * (&self.p_minus * &forcing[0]))
        } else {
            forcing[0].map(|_| 0.0)
        };
        let mut out = Vec::with_capacity(n);
        out.push(acc.clone());
        for k in 0..n - 1 {
            acc = &props.fwd * &acc + &props.fwd_a * &forcing[k] + &props.fwd_b * &forcing[k + 1];
            out.push(acc.clone());
        }
        let mut acc = if right_open && hold {
            &self.inverse * (&self.p_plus * &forcing[n - 1])
        } else {
            forcing[n - 1].map(|_| 0.0)
        };
        out[n - 1] -= &acc;
        for k in (0..n - 1).rev() {
            acc = &props.bwd * &acc + &props.bwd_a * &forcing[k] + &props.bwd_b * &forcing[k + 1];
            out[k] -= &acc;
        }
        if out.iter().any(|m| m.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("convolution"));
        }
        Ok(out)
    }

    /// Bound on the contribution, at the domain origin, of forcing of size
    /// `sup_norm` outside `grid`.
    pub fn tail_bound(&self, grid: &TimeGrid, sup_norm: f64, domain: Domain) -> f64 {
        let b = self.bound;
        let right = b.n / b.beta * libm::exp(-b.beta * grid.end().max(0.0));
        let left = b.m / b.alpha * libm::exp(b.alpha * grid.start().min(0.0));
        sup_norm
            * match domain {
                Domain::PositiveHalfLine => right,
                Domain::NegativeHalfLine => left,
                Domain::WholeLine => left + right,
            }
    }
}

/// `(e^X, phi_1(X), phi_2(X))` from one exponential of a block matrix.
fn phi_blocks(x: &Mat) -> Result<(Mat, Mat, Mat)> {
    let d = x.nrows();
    let mut big = Mat::zeros(3 * d, 3 * d);
    big.view_mut((0, 0), (d, d)).copy_from(x);
    for i in 0..d {
        big[(i, d + i)] = 1.0;
        big[(d + i, 2 * d + i)] = 1.0;
    }
    let e = matrix_exponential(&big, 1.0)?;
    Ok((
        e.view((0, 0), (d, d)).into_owned(),
        e.view((0, d), (d, d)).into_owned(),
        e.view((0, 2 * d), (d, d)).into_owned(),
    ))
}

/// One-step matrices of the forward and backward recursions.
#[derive(Debug, Clone)]
pub struct Propagators {
    pub h: f64,
    fwd: Mat,
    fwd_a: Mat,
    fwd_b: Mat,
    bwd: Mat,
    bwd_a: Mat,
    bwd_b: Mat,
}

impl Propagators {
    /// `e^{hA} P_-`
    pub fn stable_step(&self) -> &Mat {
        &self.fwd
    }

    /// `e^{-hA} P_+`
    pub fn unstable_step(&self) -> &Mat {
        &self.bwd
    }
}

/// A vector function sampled on a time grid, linear between samples.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTrajectory {
    grid: TimeGrid,
    values: Vec<Vector>,
    norm_sup: f64,
    extrapolation: Extrapolation,
}

impl GridTrajectory {
    pub fn new(grid: TimeGrid, values: Vec<Vector>, extrapolation: Extrapolation) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!("{} values on a grid of {}", values.len(), grid.len())));
        }
        if let Some(d) = values.first().map(|v| v.len()) {
            if values.iter().any(|v| v.len() != d) {
                return Err(Error::Shape("values have inconsistent lengths".into()));
            }
        }
        if values.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite("trajectory values"));
        }
        let norm_sup = values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        Ok(Self { grid, values, norm_sup, extrapolation })
    }

    /// Samples `f` at the grid points.
    pub fn from_fn(grid: TimeGrid, extrapolation: Extrapolation, f: impl Fn(f64) -> Vector) -> Result<Self> {
        let values = grid.points().iter().map(|&t| f(t)).collect();
        Self::new(grid, values, extrapolation)
    }

    pub fn constant(grid: TimeGrid, v: Vector) -> Result<Self> {
        let values = alloc::vec![v; grid.len()];
        Self::new(grid, values, Extrapolation::Hold)
    }

    pub fn zeros(grid: TimeGrid, dim: usize) -> Result<Self> {
        Self::constant(grid, Vector::zeros(dim))
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[Vector] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, |v| v.len())
    }

    /// `sup_t |x(t)|` over the samples.
    pub fn norm_sup(&self) -> f64 {
        self.norm_sup
    }

    pub fn extrapolation(&self) -> Extrapolation {
        self.extrapolation
    }

    /// Value at `t`, interpolated linearly and continued per the
    /// extrapolation rule outside the grid.
    pub fn eval(&self, t: f64) -> Vector {
        let pts = self.grid.points();
        let last = pts.len() - 1;
        if t <= pts[0] || t >= pts[last] {
            let edge = if t <= pts[0] { 0 } else { last };
            let inside = t == pts[edge];
            return match self.extrapolation {
                Extrapolation::Zero if !inside => Vector::zeros(self.dim()),
                _ => self.values[edge].clone(),
            };
        }
        let k = pts.partition_point(|&p| p <= t) - 1;
        let w = (t - pts[k]) / (pts[k + 1] - pts[k]);
        &self.values[k] * (1.0 - w) + &self.values[k + 1] * w
    }

    /// `sup_t |x(t) - y(t)|` over common samples.
    pub fn distance(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    pub fn map_values(&self, f: impl Fn(&Vector) -> Vector) -> Result<Self> {
        Self::new(self.grid.clone(), self.values.iter().map(f).collect(), self.extrapolation)
    }

    pub fn linear_combination(a: f64, x: &Self, b: f64, y: &Self) -> Result<Self> {
        if x.grid != y.grid {
            return Err(Error::Shape("trajectories live on different grids".into()));
        }
        let values = x.values.iter().zip(&y.values).map(|(u, v)| u * a + v * b).collect();
        Self::new(x.grid.clone(), values, x.extrapolation)
    }

    pub(crate) fn from_columns(grid: TimeGrid, cols: Vec<Mat>, extrapolation: Extrapolation) -> Result<Self> {
        let values = cols.into_iter().map(|m| Vector::from_column_slice(m.as_slice())).collect();
        Self::new(grid, values, extrapolation)
    }
}

/// Result of applying an integral operator.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorOutput {
    pub trajectory: GridTrajectory,
    /// Bound on the contribution of the coupling term outside the grid at the
    /// domain origin.
    pub tail_bound: f64,
}

fn apply(
    sys: &BlockSystem,
    g: &GreensFunction,
    x: &GridTrajectory,
    domain: Domain,
    tol: f64,
) -> Result<OperatorOutput> {
    if x.dim() != sys.total_dim() || g.dim() != sys.total_dim() {
        return Err(Error::Shape(format!(
            "trajectory of dimension {} for a system of dimension {}",
            x.dim(),
            sys.total_dim()
        )));
    }
    let h = x.grid.uniform_step().ok_or_else(|| Error::Validation("operators need a uniform grid".into()))?;
    let props = g.propagators(h)?;
    let mut bx = Vector::zeros(sys.total_dim());
    let forcing: Vec<Mat> = x
        .values
        .iter()
        .map(|v| {
            sys.apply_coupling(v, &mut bx);
            Mat::from_column_slice(bx.len(), 1, bx.as_slice())
        })
        .collect();
    let sup = forcing.iter().map(|f| f.norm()).fold(0.0, f64::max);
    let tail_bound = g.tail_bound(&x.grid, sup, domain);
    if tail_bound > tol {
        return Err(Error::TailTooLarge { bound: tail_bound, tol });
    }
    let y = g.convolve(&props, &x.grid, &forcing, domain, x.extrapolation)?;
    Ok(OperatorOutput { trajectory: GridTrajectory::from_columns(x.grid.clone(), y, x.extrapolation)?, tail_bound })
}

/// `(S_1 x)(t) = int_0^inf G(t - s) B x(s) ds` on a grid `[0, T]`.
pub fn apply_s1(sys: &BlockSystem, g: &GreensFunction, x: &GridTrajectory, tol: f64) -> Result<OperatorOutput> {
    apply(sys, g, x, Domain::PositiveHalfLine, tol)
}

/// `(S_2 x)(t) = int_{-inf}^0 G(t - s) B x(s) ds` on a grid `[-T, 0]`.
pub fn apply_s2(sys: &BlockSystem, g: &GreensFunction, x: &GridTrajectory, tol: f64) -> Result<OperatorOutput> {
    apply(sys, g, x, Domain::NegativeHalfLine, tol)
}

/// `(S x)(t) = int_R G(t - s) B x(s) ds` on a grid `[-T, T]`.
pub fn apply_s_fullline(
    sys: &BlockSystem,
    g: &GreensFunction,
    x: &GridTrajectory,
    tol: f64,
) -> Result<OperatorOutput> {
    apply(sys, g, x, Domain::WholeLine, tol)
}

/// Contraction factors `(q_sum, q_max)` of the coupled integral operator:
/// `q_sum = sum_i (M_i/alpha_i + N_i/beta_i) * sum_{i != j} |A_ij|` and
/// `q_max = n sqrt(n - 1) (K_1 + K_2) max_{i != j} |A_ij|`.
pub fn contraction_factor(agg: &AggregateDichotomy, norms: &CouplingNorms) -> (f64, f64) {
    let n = agg.n() as f64;
    let q_sum = agg.weight_sum() * norms.sum;
    let q_max = n * libm::sqrt(n - 1.0) * (agg.k1 + agg.k2) * norms.max;
    (q_sum, q_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dichotomy::{aggregate, extract_dichotomy};
    use approx::assert_relative_eq;

    fn m(r: usize, c: usize, v: &[f64]) -> Mat {
        Mat::from_row_slice(r, c, v)
    }

    fn two_scalars(coupling: f64, margin: f64) -> (BlockSystem, AggregateDichotomy) {
        let sys = BlockSystem::new(
            alloc::vec![m(1, 1, &[-1.0]), m(1, 1, &[1.0])],
            [((0, 1), m(1, 1, &[coupling])), ((1, 0), m(1, 1, &[coupling]))],
        )
        .unwrap();
        let agg = aggregate(sys.blocks().iter().map(|a| extract_dichotomy(a, margin).unwrap()).collect()).unwrap();
        (sys, agg)
    }

    #[test]
    fn green_values_and_signs() {
        let b = GreenBound { m: 1.0, alpha: 1.0, n: 1.0, beta: 1.0 };
        let g = GreensFunction::new(m(1, 1, &[-1.0]), m(1, 1, &[1.0]), b).unwrap();
        assert_relative_eq!(g.eval(1.0).unwrap()[(0, 0)], libm::exp(-1.0), epsilon = 1e-14);
        let g = GreensFunction::new(m(1, 1, &[1.0]), m(1, 1, &[0.0]), b).unwrap();
        assert_eq!(g.eval(1.0).unwrap()[(0, 0)], 0.0);
        assert_relative_eq!(g.eval(-1.0).unwrap()[(0, 0)], -libm::exp(-1.0), epsilon = 1e-14);
        assert_relative_eq!(g.eval_side(0.0, Side::Left).unwrap()[(0, 0)], -1.0);
        let g = GreensFunction::new(m(2, 2, &[-1.0, 0.0, 0.0, 1.0]), m(2, 2, &[1.0, 0.0, 0.0, 0.0]), b).unwrap();
        assert_relative_eq!(g.eval(2.0).unwrap(), m(2, 2, &[libm::exp(-2.0), 0.0, 0.0, 0.0]), epsilon = 1e-14);
    }

    #[test]
    fn non_invariant_projector_is_rejected() {
        let b = GreenBound { m: 1.0, alpha: 1.0, n: 1.0, beta: 1.0 };
        let r = GreensFunction::new(m(2, 2, &[-1.0, 0.0, 0.0, 1.0]), m(2, 2, &[0.5, 0.5, 0.5, 0.5]), b);
        assert!(matches!(r, Err(Error::Validation(_))));
    }

    #[test]
    fn s1_of_constant_matches_closed_form() {
        let (sys, agg) = two_scalars(0.1, 0.0);
        let g = GreensFunction::uncoupled(&sys, &agg).unwrap();
        let grid = TimeGrid::uniform(0.0, 30.0, 1500).unwrap();
        let x = GridTrajectory::constant(grid, Vector::from_vec(alloc::vec![1.0, 1.0])).unwrap();
        let y = apply_s1(&sys, &g, &x, 1e-9).unwrap();
        for (t, v) in y.trajectory.grid().points().iter().zip(y.trajectory.values()) {
            assert!((v[0] - 0.1 * (1.0 - libm::exp(-t))).abs() < 1e-12);
            assert!((v[1] + 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn s2_mirrors_s1() {
        let sys = BlockSystem::new(
            alloc::vec![m(1, 1, &[1.0]), m(1, 1, &[-1.0])],
            [((0, 1), m(1, 1, &[0.1])), ((1, 0), m(1, 1, &[0.1]))],
        )
        .unwrap();
        let agg = aggregate(sys.blocks().iter().map(|a| extract_dichotomy(a, 0.0).unwrap()).collect()).unwrap();
        let g = GreensFunction::uncoupled(&sys, &agg).unwrap();
        let grid = TimeGrid::uniform(-30.0, 0.0, 1500).unwrap();
        let x = GridTrajectory::constant(grid, Vector::from_vec(alloc::vec![1.0, 1.0])).unwrap();
        let y = apply_s2(&sys, &g, &x, 1e-9).unwrap();
        for (t, v) in y.trajectory.grid().points().iter().zip(y.trajectory.values()) {
            // reflected: y_1(t) = -0.1 (1 - e^{t}), y_2(t) = 0.1
            assert!((v[0] + 0.1 * (1.0 - libm::exp(*t))).abs() < 1e-12, "{t} {v}");
            assert!((v[1] - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn fullline_steady_state() {
        let (sys, agg) = two_scalars(0.1, 0.0);
        let g = GreensFunction::uncoupled(&sys, &agg).unwrap();
        let grid = TimeGrid::uniform(-30.0, 30.0, 3000).unwrap();
        let x = GridTrajectory::constant(grid, Vector::from_vec(alloc::vec![2.0, 3.0])).unwrap();
        let y = apply_s_fullline(&sys, &g, &x, 1e-9).unwrap();
        for v in y.trajectory.values() {
            assert!((v[0] - 0.3).abs() < 1e-12);
            assert!((v[1] + 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn piecewise_linear_forcing_is_exact() {
        // y' = -y + f with f(t) = t on [0, 2]: y(t) = t - 1 + e^{-t}
        let b = GreenBound { m: 1.0, alpha: 1.0, n: 0.0, beta: 1.0 };
        let g = GreensFunction::new(m(1, 1, &[-1.0]), m(1, 1, &[1.0]), b).unwrap();
        let grid = TimeGrid::uniform(0.0, 2.0, 7).unwrap();
        let props = g.propagators(grid.uniform_step().unwrap()).unwrap();
        let f: Vec<Mat> = grid.points().iter().map(|t| m(1, 1, &[*t])).collect();
        let y = g.convolve(&props, &grid, &f, Domain::PositiveHalfLine, Extrapolation::Zero).unwrap();
        for (t, v) in grid.points().iter().zip(&y) {
            assert_relative_eq!(v[(0, 0)], t - 1.0 + libm::exp(-t), epsilon = 1e-13);
        }
    }

    #[test]
    fn tail_check_rejects_short_horizons() {
        let (sys, agg) = two_scalars(0.1, 0.0);
        let g = GreensFunction::uncoupled(&sys, &agg).unwrap();
        let grid = TimeGrid::uniform(0.0, 2.0, 100).unwrap();
        let x = GridTrajectory::constant(grid, Vector::from_vec(alloc::vec![1.0, 1.0])).unwrap();
        assert!(matches!(apply_s1(&sys, &g, &x, 1e-9), Err(Error::TailTooLarge { .. })));
    }

    #[test]
    fn contraction_factors() {
        let (_, agg) = two_scalars(0.1, 0.0);
        let sys = two_scalars(0.1, 0.0).0;
        let (qs, qm) = contraction_factor(&agg, &sys.coupling_norms());
        assert_relative_eq!(qs, 0.4, epsilon = 1e-12);
        assert_relative_eq!(qm, 2.0 * 2.0 * 0.1, epsilon = 1e-12);
        let (_, agg) = two_scalars(0.1, 0.1);
        let (qs, _) = contraction_factor(&agg, &sys.coupling_norms());
        assert_relative_eq!(qs, (2.0 / 0.9) * 0.2, epsilon = 1e-12);
        let zero = BlockSystem::new(sys.blocks().to_vec(), []).unwrap();
        assert_eq!(contraction_factor(&agg, &zero.coupling_norms()), (0.0, 0.0));
    }

    #[test]
    fn interpolation_and_extrapolation() {
        let grid = TimeGrid::uniform(0.0, 1.0, 2).unwrap();
        let x = GridTrajectory::from_fn(grid.clone(), Extrapolation::Zero, |t| Vector::from_vec(alloc::vec![t]))
            .unwrap();
        assert_relative_eq!(x.eval(0.25)[0], 0.25);
        assert_eq!(x.eval(2.0)[0], 0.0);
        assert_eq!(x.eval(1.0)[0], 1.0);
        let x = GridTrajectory::from_fn(grid, Extrapolation::Hold, |t| Vector::from_vec(alloc::vec![t])).unwrap();
        assert_eq!(x.eval(2.0)[0], 1.0);
        assert_eq!(x.norm_sup(), 1.0);
    }
}
