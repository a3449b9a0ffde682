//! Weakly nonlinear couplings `x' = A x + R(x)` where block `i` of `R` reads
//! only the other blocks.
//!
//! A nonlinearity belongs to the class `(T_i, L_i, rho)` when on the ball
//! `|x| <= rho` every block satisfies `|R_i(x)| <= T_i`, is `L_i`-Lipschitz in
//! the other blocks, and `R(0) = 0`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dichotomy::AggregateDichotomy;
use crate::error::{Error, Result};
use crate::greens::{Domain, Extrapolation, GreenBound, GreensFunction, GridTrajectory};
use crate::linalg::{assemble_full, spectral_norm, BlockSystem, CouplingNorms, Mat, Vector};
use crate::quadrature::TimeGrid;
use crate::report::{ConditionId, ConditionReport};
use crate::roughness::{
    check_subspace, estimate_decay, estimate_decay_refined, homogeneous, picard_iterate, ratio, sqrt_pairs,
    HalfLineSolution, LinearOptions, PerturbedDichotomy, MU_FRACTION,
};

/// Default number of sample points for [`NonlinearitySpec::validate`].
pub const DEFAULT_SAMPLES: usize = 1000;

const SAMPLE_SLACK: f64 = 1e-8;

/// A coupling term on the full space.
pub trait Nonlinearity: Send + Sync + fmt::Debug {
    /// `R(x)`. Block `i` of the result must not depend on block `i` of `x`.
    fn apply(&self, x: &Vector) -> Vector;
}

/// Elementwise profile of the built-in couplings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Profile {
    /// `sin u`
    Sin,
    /// `u^3`
    Cubic,
    /// `sin(u + u^3)`
    SinCubic,
    /// `u` clamped to `[-1, 1]`
    Saturated,
}

impl Profile {
    pub const ALL: [Profile; 4] = [Profile::Sin, Profile::Cubic, Profile::SinCubic, Profile::Saturated];

    pub fn name(self) -> &'static str {
        match self {
            Profile::Sin => "sin",
            Profile::Cubic => "cubic",
            Profile::SinCubic => "sin_cubic",
            Profile::Saturated => "saturated",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    pub fn eval(self, u: f64) -> f64 {
        match self {
            Profile::Sin => libm::sin(u),
            Profile::Cubic => u * u * u,
            Profile::SinCubic => libm::sin(u + u * u * u),
            Profile::Saturated => u.clamp(-1.0, 1.0),
        }
    }

    /// Lipschitz constant on `[-r, r]`.
    pub fn lipschitz(self, r: f64) -> f64 {
        match self {
            Profile::Sin | Profile::Saturated => 1.0,
            Profile::Cubic => 3.0 * r * r,
            Profile::SinCubic => 1.0 + 3.0 * r * r,
        }
    }

    /// `sup |phi(u)|` over vectors of dimension `d` with `|u| <= r`.
    pub fn bound(self, r: f64, d: usize) -> f64 {
        let cap = libm::sqrt(d as f64);
        match self {
            Profile::Sin | Profile::Saturated => r.min(cap),
            // sum u_k^6 <= (sum u_k^2)^3
            Profile::Cubic => r * r * r,
            Profile::SinCubic => (r + r * r * r).min(cap),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `R_i(x) = gain * sum_{j != i} W_ij phi(x_j)` with `phi` applied entrywise.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingNonlinearity {
    profile: Profile,
    gain: f64,
    dims: Vec<usize>,
    offsets: Vec<usize>,
    weights: BTreeMap<(usize, usize), Mat>,
}

impl CouplingNonlinearity {
    pub fn new(
        profile: Profile,
        gain: f64,
        dims: Vec<usize>,
        weights: impl IntoIterator<Item = ((usize, usize), Mat)>,
    ) -> Result<Self> {
        if !gain.is_finite() {
            return Err(Error::Validation(format!("gain {gain} is not finite")));
        }
        let n = dims.len();
        let mut map = BTreeMap::new();
        for ((i, j), w) in weights {
            if i == j || i >= n || j >= n {
                return Err(Error::Validation(format!("weight ({i}, {j}) is not an off-diagonal pair of {n} blocks")));
            }
            if w.shape() != (dims[i], dims[j]) {
                return Err(Error::Shape(format!("weight ({i}, {j}) is {:?}, expected {:?}", w.shape(), (dims[i], dims[j]))));
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("weight ({i}, {j}) has non-finite entries")));
            }
            map.insert((i, j), w);
        }
        Ok(Self { profile, gain, offsets: offsets(&dims), dims, weights: map })
    }

    /// Weights taken from the couplings of `sys`.
    pub fn on_couplings(profile: Profile, gain: f64, sys: &BlockSystem) -> Result<Self> {
        Self::new(profile, gain, sys.dims(), sys.couplings().map(|(k, w)| (*k, w.clone())))
    }

    pub fn profile(&self) -> Profile {
        self.profile
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    /// Per-block `(T_i, L_i)` on the ball of radius `rho`.
    pub fn bounds(&self, rho: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.dims.len();
        let mut t = alloc::vec![0.0; n];
        let mut l2 = alloc::vec![0.0; n];
        for ((i, j), w) in &self.weights {
            let nw = spectral_norm(w);
            t[*i] += nw * self.profile.bound(rho, self.dims[*j]);
            l2[*i] += nw * nw;
        }
        let g = self.gain.abs();
        let lip = self.profile.lipschitz(rho);
        (t.into_iter().map(|v| g * v).collect(), l2.into_iter().map(|v| g * lip * libm::sqrt(v)).collect())
    }

    /// A [`NonlinearitySpec`] with the analytic bounds on the ball of radius `rho`.
    pub fn into_spec(self, rho: f64) -> Result<NonlinearitySpec> {
        let (t, l) = self.bounds(rho);
        let dims = self.dims.clone();
        NonlinearitySpec::new(Arc::new(self), dims, t, l, rho)
    }
}

impl Nonlinearity for CouplingNonlinearity {
    fn apply(&self, x: &Vector) -> Vector {
        let mut out = Vector::zeros(x.len());
        for ((i, j), w) in &self.weights {
            let xj = x.rows(self.offsets[*j], self.dims[*j]).map(|u| self.profile.eval(u));
            let mut oi = out.rows_mut(self.offsets[*i], self.dims[*i]);
            oi += w * xj * self.gain;
        }
        out
    }
}

/// The zero coupling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZeroNonlinearity;

impl Nonlinearity for ZeroNonlinearity {
    fn apply(&self, x: &Vector) -> Vector {
        Vector::zeros(x.len())
    }
}

/// `B x + R(x)` for a linear coupling `B`.
#[derive(Debug, Clone)]
struct LinearPlus {
    linear: BlockSystem,
    rest: Arc<dyn Nonlinearity>,
}

impl Nonlinearity for LinearPlus {
    fn apply(&self, x: &Vector) -> Vector {
        let mut out = Vector::zeros(x.len());
        self.linear.apply_coupling(x, &mut out);
        out + self.rest.apply(x)
    }
}

fn offsets(dims: &[usize]) -> Vec<usize> {
    let mut acc = 0;
    dims.iter()
        .map(|d| {
            let o = acc;
            acc += d;
            o
        })
        .collect()
}

/// A nonlinearity together with its claimed class `(T_i, L_i, rho)`.
#[derive(Debug, Clone)]
pub struct NonlinearitySpec {
    map: Arc<dyn Nonlinearity>,
    dims: Vec<usize>,
    offsets: Vec<usize>,
    /// `T_i`
    pub bounds: Vec<f64>,
    /// `L_i`
    pub lipschitz: Vec<f64>,
    pub radius: f64,
}

/// Outcome of a successful sampling check.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingSummary {
    pub samples: usize,
    pub seed: u64,
    /// Largest observed `|R_i(x)| / T_i`.
    pub bound_ratio: Vec<f64>,
    /// Largest observed difference quotient over `L_i`.
    pub lipschitz_ratio: Vec<f64>,
}

impl NonlinearitySpec {
    pub fn new(
        map: Arc<dyn Nonlinearity>,
        dims: Vec<usize>,
        bounds: Vec<f64>,
        lipschitz: Vec<f64>,
        radius: f64,
    ) -> Result<Self> {
        let n = dims.len();
        if n == 0 || dims.contains(&0) {
            return Err(Error::Validation("block dimensions must be positive".into()));
        }
        if bounds.len() != n || lipschitz.len() != n {
            return Err(Error::Shape(format!("{} bounds and {} Lipschitz constants for {n} blocks", bounds.len(), lipschitz.len())));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::Validation(format!("radius {radius} must be positive")));
        }
        if let Some(i) = bounds.iter().chain(&lipschitz).position(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Validation(format!("constant {} of block {} must be finite and nonnegative", i / n, i % n)));
        }
        Ok(Self { map, offsets: offsets(&dims), dims, bounds, lipschitz, radius })
    }

    pub fn zero(dims: Vec<usize>, radius: f64) -> Result<Self> {
        let n = dims.len();
        Self::new(Arc::new(ZeroNonlinearity), dims, alloc::vec![0.0; n], alloc::vec![0.0; n], radius)
    }

    pub fn n(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn total_dim(&self) -> usize {
        self.dims.iter().sum()
    }

    pub fn apply(&self, x: &Vector) -> Vector {
        self.map.apply(x)
    }

    pub fn bound_sum(&self) -> f64 {
        self.bounds.iter().sum()
    }

    pub fn bound_max(&self) -> f64 {
        self.bounds.iter().copied().fold(0.0, f64::max)
    }

    pub fn lipschitz_sum(&self) -> f64 {
        self.lipschitz.iter().sum()
    }

    pub fn lipschitz_max(&self) -> f64 {
        self.lipschitz.iter().copied().fold(0.0, f64::max)
    }

    fn block_norm(&self, v: &Vector, i: usize) -> f64 {
        v.rows(self.offsets[i], self.dims[i]).norm()
    }

    /// `sqrt(sum_{j != i} |v_j|^2)`
    fn others_norm(&self, v: &Vector, i: usize) -> f64 {
        let own = self.block_norm(v, i);
        libm::sqrt((v.norm_squared() - own * own).max(0.0))
    }

    /// Checks the class membership on random points of the ball: `R(0) = 0`,
    /// the bounds, the Lipschitz constants, and that block `i` ignores `x_i`.
    pub fn validate(&self, samples: usize, seed: u64) -> Result<SamplingSummary> {
        let n = self.n();
        let d = self.total_dim();
        let r0 = self.apply(&Vector::zeros(d));
        if r0.len() != d {
            return Err(Error::Shape(format!("nonlinearity returned {} values for dimension {d}", r0.len())));
        }
        for i in 0..n {
            let v = self.block_norm(&r0, i);
            if !(v <= 1e-12) {
                return Err(class_error(i, format!("|R_i(0)| = {v:e}")));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut bound_ratio = alloc::vec![0.0; n];
        let mut lipschitz_ratio = alloc::vec![0.0; n];
        for k in 0..samples {
            let x = self.sample(&mut rng, k % 4);
            let rx = self.apply(&x);
            // a nearby point for local slopes, an independent one otherwise
            let y = if k % 2 == 0 {
                let mut y = &x + self.sample(&mut rng, 0) * 1e-3;
                clamp_to_ball(&mut y, self.radius);
                y
            } else {
                self.sample(&mut rng, (k / 2) % 4)
            };
            let ry = self.apply(&y);
            let dx = &y - &x;
            for i in 0..n {
                let ri = self.block_norm(&rx, i);
                if !ri.is_finite() || ri > self.bounds[i] * (1.0 + SAMPLE_SLACK) + 1e-14 {
                    return Err(class_error(i, format!("|R_i(x)| = {ri:e} exceeds the bound {:e}", self.bounds[i])));
                }
                bound_ratio[i] = f64::max(bound_ratio[i], ratio(ri, self.bounds[i]));
                let num = self.block_norm(&(&ry - &rx), i);
                let den = self.others_norm(&dx, i);
                if num > self.lipschitz[i] * den * (1.0 + SAMPLE_SLACK) + 1e-14 {
                    return Err(class_error(
                        i,
                        format!("difference quotient {:e} exceeds the Lipschitz constant {:e}", num / den, self.lipschitz[i]),
                    ));
                }
                if den > 0.0 {
                    lipschitz_ratio[i] = f64::max(lipschitz_ratio[i], ratio(num / den, self.lipschitz[i]));
                }
            }
            // moving block i alone, on its sphere, must leave R_i unchanged
            let i = k % n;
            let (o, di) = (self.offsets[i], self.dims[i]);
            let mut z = x.clone();
            let mut w = Vector::from_fn(di, |_, _| gaussian(&mut rng));
            let xi = x.rows(o, di).norm();
            let wn = w.norm();
            if xi > 0.0 && wn > 0.0 {
                w *= xi / wn;
                z.rows_mut(o, di).copy_from(&w);
                let rz = self.apply(&z);
                let moved = self.block_norm(&(&rz - &rx), i);
                if moved > 1e-12 * (1.0 + self.block_norm(&rx, i)) {
                    return Err(class_error(i, "block depends on its own component".into()));
                }
            }
        }
        Ok(SamplingSummary { samples, seed, bound_ratio, lipschitz_ratio })
    }

    /// Points of the ball: uniform, on the sphere, one block on the sphere,
    /// or clustered near zero.
    fn sample(&self, rng: &mut ChaCha8Rng, mode: usize) -> Vector {
        let d = self.total_dim();
        let mut v = Vector::from_fn(d, |_, _| gaussian(rng));
        if mode == 2 {
            let i = rng.random_range(0..self.n());
            for j in 0..self.n() {
                if j != i {
                    v.rows_mut(self.offsets[j], self.dims[j]).fill(0.0);
                }
            }
        }
        let nv = v.norm();
        if nv == 0.0 {
            return v;
        }
        let u: f64 = rng.random();
        let r = match mode {
            0 => libm::pow(u, 1.0 / d as f64),
            3 => u * u * u,
            _ => 1.0,
        };
        v * (self.radius * r / nv)
    }
}

fn class_error(block: usize, detail: String) -> Error {
    Error::NonlinearityClass { block, detail }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn clamp_to_ball(v: &mut Vector, radius: f64) {
    let nv = v.norm();
    if nv > radius {
        *v *= radius / nv;
    }
}

/// Conditions for a unique solution bounded on the line and staying in the
/// ball: either bound condition together with either Lipschitz condition.
pub fn check_existence(agg: &AggregateDichotomy, spec: &NonlinearitySpec) -> ConditionReport {
    let n = agg.n() as f64;
    let w = agg.weight_sum();
    let c = sqrt_pairs(n) * (agg.k1 + agg.k2);
    let rho = spec.radius;
    let bound = ConditionReport::any_of(
        ConditionId::NonlinearBound,
        alloc::vec![
            ConditionReport::non_strict(ConditionId::NonlinearBoundSum, spec.bound_sum(), ratio(rho, w)),
            ConditionReport::non_strict(ConditionId::NonlinearBoundMax, spec.bound_max(), ratio(rho, c)),
        ],
    );
    let mut ls = ConditionReport::strict(ConditionId::NonlinearLipschitzSum, spec.lipschitz_sum(), ratio(1.0, w));
    ls.derive("q", w * spec.lipschitz_sum());
    let mut lm = ConditionReport::strict(ConditionId::NonlinearLipschitzMax, spec.lipschitz_max(), ratio(1.0, c));
    lm.derive("q", c * spec.lipschitz_max());
    let lip = ConditionReport::any_of(ConditionId::NonlinearLipschitz, alloc::vec![ls, lm]);
    ConditionReport::all_of(ConditionId::NonlinearExistence, alloc::vec![bound, lip])
}

/// Bound conditions keeping trajectories from the initial ball inside the
/// ball of radius `rho`, each with its admissible initial radius.
pub fn check_confinement(agg: &AggregateDichotomy, spec: &NonlinearitySpec) -> ConditionReport {
    let n = agg.n() as f64;
    let rho = spec.radius;
    let mut sum = ConditionReport::non_strict(ConditionId::ConfinementSum, spec.bound_sum(), ratio(rho, 2.0 * agg.weight_sum()));
    sum.derive("initial_radius", ratio(rho, 2.0 * agg.m_sum));
    let c = 2.0 * sqrt_pairs(n) * (agg.k1 + agg.k2);
    let mut max = ConditionReport::non_strict(ConditionId::ConfinementMax, spec.bound_max(), ratio(rho, c));
    max.derive("initial_radius", ratio(rho, 2.0 * libm::sqrt(n) * agg.m_max));
    let mut all = ConditionReport::any_of(ConditionId::Confinement, alloc::vec![sum, max]);
    let r = all.parts.iter().filter_map(|p| p.get("initial_radius")).fold(f64::NEG_INFINITY, f64::max);
    if r > f64::NEG_INFINITY {
        all.derive("initial_radius", r);
    }
    all
}

/// Decay of trajectories in the stable set: the linear estimates with the
/// Lipschitz constants in place of the coupling norms, each requiring the
/// confinement condition. Returns the confinement report followed by the
/// first and refined estimates, sum and max forms.
pub fn certify_decay(agg: &AggregateDichotomy, spec: &NonlinearitySpec) -> Vec<ConditionReport> {
    let norms = CouplingNorms { sum: spec.lipschitz_sum(), max: spec.lipschitz_max(), full: f64::NAN };
    let conf = check_confinement(agg, spec);
    let mut out = estimate_decay(agg, &norms);
    out.extend(estimate_decay_refined(agg, &norms));
    for r in &mut out {
        r.id = match r.id {
            ConditionId::DecaySum => ConditionId::NonlinearDecaySum,
            ConditionId::DecayMax => ConditionId::NonlinearDecayMax,
            ConditionId::DecayRefinedSum => ConditionId::NonlinearDecayRefinedSum,
            _ => ConditionId::NonlinearDecayRefinedMax,
        };
        match conf.get("initial_radius") {
            Some(radius) => {
                r.derive("initial_radius", radius);
            }
            None => {
                r.reject("the bounds do not confine trajectories to the ball");
            }
        }
    }
    out.insert(0, conf);
    out
}

/// `min(q_sum, q_max)` for the nonlinear operator, failing unless below one.
pub fn nonlinear_contraction(agg: &AggregateDichotomy, spec: &NonlinearitySpec) -> Result<f64> {
    let n = agg.n() as f64;
    let q_sum = agg.weight_sum() * spec.lipschitz_sum();
    let q_max = sqrt_pairs(n) * (agg.k1 + agg.k2) * spec.lipschitz_max();
    let q = q_sum.min(q_max);
    if q < 1.0 {
        Ok(q)
    } else {
        Err(Error::ContractionViolated { q })
    }
}

fn frobenius(m: &Mat) -> f64 {
    m.norm()
}

#[allow(clippy::too_many_arguments)]
fn solve_with(
    g: &GreensFunction,
    spec: &NonlinearitySpec,
    forcing: &dyn Nonlinearity,
    c: Option<&Mat>,
    grid: &TimeGrid,
    domain: Domain,
    q: f64,
    opts: &LinearOptions,
) -> Result<HalfLineSolution> {
    let d = spec.total_dim();
    if g.dim() != d {
        return Err(Error::Shape(format!("Green's function of dimension {} for a nonlinearity of dimension {d}", g.dim())));
    }
    let h = grid.uniform_step().ok_or_else(|| Error::Validation("solver needs a uniform grid".into()))?;
    if domain == Domain::PositiveHalfLine && grid.start().abs() > 1e-12 {
        return Err(Error::Validation("the grid must start at 0".into()));
    }
    let props = g.propagators(h)?;
    let base = match c {
        Some(c) => homogeneous(&props, c, grid.len(), domain),
        None => alloc::vec![Mat::zeros(d, 1); grid.len()],
    };
    let rho = spec.radius;
    let f = |x: &Mat| -> Mat {
        let v = forcing.apply(&Vector::from_column_slice(x.as_slice()));
        Mat::from_column_slice(d, 1, v.as_slice())
    };
    let mut confine = |xs: &[Mat]| -> Result<()> {
        let norm = xs.iter().map(|x| x.norm()).fold(0.0, f64::max);
        if norm > rho * (1.0 + 1e-9) {
            return Err(Error::ConfinementViolated { rho, norm });
        }
        Ok(())
    };
    let run = picard_iterate(g, &props, grid, base, domain, q, opts.tol, opts.max_iter, frobenius, &f, &mut confine)?;
    Ok(HalfLineSolution {
        trajectory: GridTrajectory::from_columns(grid.clone(), run.values, Extrapolation::Hold)?,
        increments: run.increments,
        residual: run.residual,
        tail_bound: run.tail_bound,
        q,
    })
}

/// Solution of `x' = A x + R(x)` bounded on the line, on the grid, by Picard
/// iteration from zero with the uncoupled Green's function.
pub fn solve_bounded_nonlinear(
    agg: &AggregateDichotomy,
    g: &GreensFunction,
    spec: &NonlinearitySpec,
    grid: &TimeGrid,
    opts: &LinearOptions,
) -> Result<HalfLineSolution> {
    let q = nonlinear_contraction(agg, spec)?;
    solve_with(g, spec, spec.map.as_ref(), None, grid, Domain::WholeLine, q, opts)
}

/// Solution on `[0, inf)` bounded in the ball with `P_- x(0) = c_-`.
pub fn solve_nonlinear_halfline(
    agg: &AggregateDichotomy,
    g: &GreensFunction,
    spec: &NonlinearitySpec,
    c_minus: &Vector,
    grid: &TimeGrid,
    opts: &LinearOptions,
) -> Result<HalfLineSolution> {
    let q = nonlinear_contraction(agg, spec)?;
    let c = check_subspace(&agg.p_minus, c_minus)?;
    solve_with(g, spec, spec.map.as_ref(), Some(&c), grid, Domain::PositiveHalfLine, q, opts)
}

/// A nonlinearity `R(x) = B x + R~(x)` whose linear part is the coupling of
/// a block system.
#[derive(Debug, Clone)]
pub struct SplitNonlinearity {
    pub linear: BlockSystem,
    pub remainder: NonlinearitySpec,
}

impl SplitNonlinearity {
    pub fn new(linear: BlockSystem, remainder: NonlinearitySpec) -> Result<Self> {
        if linear.dims() != remainder.dims() {
            return Err(Error::Shape(format!("block dimensions {:?} and {:?}", linear.dims(), remainder.dims())));
        }
        Ok(Self { linear, remainder })
    }

    /// The whole coupling as one spec: `T_i + rho sqrt(sum_j |A_ij|^2)` and
    /// `L_i + sqrt(sum_j |A_ij|^2)`.
    pub fn combined(&self) -> NonlinearitySpec {
        let rem = &self.remainder;
        let n = rem.n();
        let mut row = alloc::vec![0.0; n];
        for ((i, _), a) in self.linear.couplings() {
            let na = spectral_norm(a);
            row[*i] += na * na;
        }
        let row: Vec<f64> = row.into_iter().map(libm::sqrt).collect();
        NonlinearitySpec {
            map: Arc::new(LinearPlus { linear: self.linear.clone(), rest: rem.map.clone() }),
            dims: rem.dims.clone(),
            offsets: rem.offsets.clone(),
            bounds: rem.bounds.iter().zip(&row).map(|(t, r)| t + rem.radius * r).collect(),
            lipschitz: rem.lipschitz.iter().zip(&row).map(|(l, r)| l + r).collect(),
            radius: rem.radius,
        }
    }

    /// `L_eff = min(sum L_i, sqrt(n) max L_i)`, a Lipschitz constant of the
    /// whole remainder.
    pub fn effective_lipschitz(&self) -> f64 {
        let r = &self.remainder;
        r.lipschitz_sum().min(libm::sqrt(r.n() as f64) * r.lipschitz_max())
    }

    fn effective_bound(&self) -> f64 {
        let r = &self.remainder;
        r.bound_sum().min(libm::sqrt(r.n() as f64) * r.bound_max())
    }
}

fn linear_constants(lin: &PerturbedDichotomy) -> Result<(f64, f64, f64)> {
    let c = lin.constants.ok_or(Error::PrerequisiteMissing("certified decay constants of the linear part"))?;
    Ok((c.m1, c.m2, c.mu))
}

/// Green's function of the coupled linear part, split by its perturbed
/// projector, with the certified constants as bound.
pub fn coupled_greens(split: &SplitNonlinearity, lin: &PerturbedDichotomy) -> Result<GreensFunction> {
    let (m1, m2, mu) = linear_constants(lin)?;
    GreensFunction::new(
        assemble_full(&split.linear),
        lin.p_tilde_minus.clone(),
        GreenBound { m: m1, alpha: mu, n: m2, beta: mu },
    )
}

/// Conditions on the remainder once the linear coupling is absorbed into the
/// dichotomy `(M~_1, M~_2, mu)`, and the decay `M~ e^{-nu t}` they give.
///
/// The bound and Lipschitz conditions are evaluated as stated with
/// `M~_3 = max(M~_1, M~_2)`; the rate and constant use the Lipschitz constant
/// of the whole remainder, `min(sum L_i, sqrt(n) max L_i)`.
pub fn certify_split(split: &SplitNonlinearity, lin: &PerturbedDichotomy) -> Result<ConditionReport> {
    use ConditionId::*;
    let (m1, m2, mu) = linear_constants(lin)?;
    let m3 = m1.max(m2);
    let rem = &split.remainder;
    let rho = rem.radius;
    let mut bs = ConditionReport::strict(SplitBoundSum, rem.bound_sum(), ratio(rho * mu, m1 + m2));
    bs.derive("initial_radius", ratio(rho, 2.0 * (m1 + m2)));
    let mut bm = ConditionReport::strict(SplitBoundMax, rem.bound_max(), ratio(rho * mu, 2.0 * m3));
    bm.derive("initial_radius", ratio(rho, 4.0 * m3));
    let bound = ConditionReport::any_of(SplitBound, alloc::vec![bs, bm]);
    let lip = ConditionReport::any_of(
        SplitLipschitz,
        alloc::vec![
            ConditionReport::strict(SplitLipschitzSum, rem.lipschitz_sum(), ratio(mu, 2.0 * m3)),
            ConditionReport::strict(SplitLipschitzMax, rem.lipschitz_max(), ratio(mu, 2.0 * m3)),
        ],
    );
    let radius = bound.parts.iter().filter_map(|p| p.get("initial_radius")).fold(0.0, f64::max);
    let mut r = ConditionReport::all_of(SplitDecay, alloc::vec![bound, lip]);
    let l = split.effective_lipschitz();
    let nu2 = mu * mu - 2.0 * mu * m3 * l;
    if r.satisfied && !(nu2 > 0.0) {
        r.reject("the Lipschitz constant of the whole remainder leaves no decay rate");
        return Ok(r);
    }
    let nu_max = libm::sqrt(nu2.max(0.0));
    let nu = MU_FRACTION * nu_max;
    let gap = mu * mu - nu * nu;
    let confinement = m1 * radius + (m1 + m2) / mu * split.effective_bound();
    r.derive("linear_mu", mu)
        .derive("nu_max", nu_max)
        .derive("nu", nu)
        .derive("m_tilde", m1 * gap / (gap - 2.0 * mu * l * m3))
        .derive("m_tilde_alt", ratio(m1 * mu, m3 * l))
        .derive("initial_radius", radius)
        .derive("confinement_bound", confinement)
        .derive("q", (m1 + m2) / mu * l);
    if r.satisfied && confinement > rho {
        r.note("the stated bound on the remainder does not by itself keep trajectories in the ball");
    }
    Ok(r)
}

/// Solution on `[0, inf)` of the split system with `P~_- x(0) = c`, using
/// the coupled Green's function.
pub fn solve_split_halfline(
    split: &SplitNonlinearity,
    lin: &PerturbedDichotomy,
    c: &Vector,
    grid: &TimeGrid,
    opts: &LinearOptions,
) -> Result<HalfLineSolution> {
    let g = coupled_greens(split, lin)?;
    let (m1, m2, mu) = linear_constants(lin)?;
    let q = (m1 + m2) / mu * split.effective_lipschitz();
    if !(q < 1.0) {
        return Err(Error::ContractionViolated { q });
    }
    let c = check_subspace(&lin.p_tilde_minus, c)?;
    solve_with(&g, &split.remainder, split.remainder.map.as_ref(), Some(&c), grid, Domain::PositiveHalfLine, q, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dichotomy::{aggregate, extract_dichotomy};
    use crate::roughness::perturb;
    use approx::assert_relative_eq;

    fn m(v: f64) -> Mat {
        Mat::from_element(1, 1, v)
    }

    fn running(eps: f64) -> (BlockSystem, AggregateDichotomy) {
        let sys = BlockSystem::new(alloc::vec![m(-1.0), m(1.0)], [((0, 1), m(eps)), ((1, 0), m(eps))]).unwrap();
        let agg = aggregate(sys.blocks().iter().map(|a| extract_dichotomy(a, 0.0).unwrap()).collect()).unwrap();
        (sys, agg)
    }

    fn coupling(profile: Profile, gain: f64, rho: f64) -> NonlinearitySpec {
        let (sys, _) = running(1.0);
        CouplingNonlinearity::on_couplings(profile, gain, &sys).unwrap().into_spec(rho).unwrap()
    }

    #[derive(Debug)]
    struct Custom(fn(&Vector) -> Vector);

    impl Nonlinearity for Custom {
        fn apply(&self, x: &Vector) -> Vector {
            (self.0)(x)
        }
    }

    fn custom(f: fn(&Vector) -> Vector, t: f64, l: f64) -> NonlinearitySpec {
        NonlinearitySpec::new(Arc::new(Custom(f)), alloc::vec![1, 1], alloc::vec![t; 2], alloc::vec![l; 2], 1.0).unwrap()
    }

    #[test]
    fn zero_nonlinearity_always_qualifies() {
        let (sys, agg) = running(0.0);
        for rho in [1e-3, 1.0, 1e3] {
            let spec = NonlinearitySpec::zero(sys.dims(), rho).unwrap();
            assert!(check_existence(&agg, &spec).satisfied);
            spec.validate(200, 1).unwrap();
        }
        let spec = NonlinearitySpec::zero(sys.dims(), 1.0).unwrap();
        let g = GreensFunction::uncoupled(&sys, &agg).unwrap();
        let grid = TimeGrid::uniform(-10.0, 10.0, 200).unwrap();
        let sol = solve_bounded_nonlinear(&agg, &g, &spec, &grid, &LinearOptions::default()).unwrap();
        assert_eq!(sol.trajectory.norm_sup(), 0.0);
    }

    #[test]
    fn sin_coupling_bounds() {
        let (_, agg) = running(0.0);
        let spec = coupling(Profile::Sin, 0.1, 1.0);
        assert_eq!(spec.bounds, alloc::vec![0.1, 0.1]);
        assert_eq!(spec.lipschitz, alloc::vec![0.1, 0.1]);
        let summary = spec.validate(DEFAULT_SAMPLES, 7).unwrap();
        assert!(summary.bound_ratio.iter().all(|r| *r <= 1.0 && *r > 0.5));
        let r = check_existence(&agg, &spec);
        assert!(r.satisfied);
        let ls = r.part(ConditionId::NonlinearLipschitzSum).unwrap();
        assert_relative_eq!(ls.lhs, 0.2, epsilon = 1e-15);
        assert_relative_eq!(ls.threshold, 0.5, epsilon = 1e-15);
        let bs = r.part(ConditionId::NonlinearBoundSum).unwrap();
        assert!(bs.satisfied);
        assert_relative_eq!(bs.threshold, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn failing_bound_is_identified() {
        let (_, agg) = running(0.0);
        let spec = coupling(Profile::Sin, 0.4, 1.0);
        let r = check_existence(&agg, &spec);
        assert!(!r.satisfied);
        assert!(!r.part(ConditionId::NonlinearBound).unwrap().satisfied);
        assert!(!r.part(ConditionId::NonlinearBoundSum).unwrap().satisfied);
        assert!(!r.part(ConditionId::NonlinearBoundMax).unwrap().satisfied);
    }

    #[test]
    fn sampling_rejects_false_claims() {
        // understated bound
        let s = custom(|x| Vector::from_vec(alloc::vec![0.5 * libm::sin(x[1]), 0.5 * libm::sin(x[0])]), 0.1, 0.5);
        assert!(matches!(s.validate(200, 3), Err(Error::NonlinearityClass { .. })));
        // understated Lipschitz constant
        let s = custom(|x| Vector::from_vec(alloc::vec![0.5 * libm::sin(x[1]), 0.0]), 0.5, 0.1);
        assert!(matches!(s.validate(200, 3), Err(Error::NonlinearityClass { block: 0, .. })));
        // nonzero at the origin
        let s = custom(|x| Vector::from_vec(alloc::vec![0.05 * libm::cos(x[1]), 0.0]), 1.0, 1.0);
        assert!(matches!(s.validate(200, 3), Err(Error::NonlinearityClass { block: 0, .. })));
        // reads its own block
        let s = custom(|x| Vector::from_vec(alloc::vec![0.0, 0.1 * libm::sin(x[1])]), 1.0, 1.0);
        assert!(matches!(s.validate(200, 3), Err(Error::NonlinearityClass { block: 1, .. })));
    }

    #[test]
    fn profiles_respect_their_bounds() {
        for p in Profile::ALL {
            assert_eq!(Profile::from_name(p.name()), Some(p));
            let spec = coupling(p, 0.3, 0.7);
            spec.validate(DEFAULT_SAMPLES, 11).unwrap();
        }
    }

    #[test]
    fn decay_for_the_sin_example() {
        let (_, agg) = running(0.0);
        let spec = coupling(Profile::Sin, 0.1, 1.0);
        let r = certify_decay(&agg, &spec);
        assert_eq!(r[0].id, ConditionId::Confinement);
        assert!(r[0].satisfied);
        let d = &r[1];
        assert_eq!(d.id, ConditionId::NonlinearDecaySum);
        assert_relative_eq!(d.get("mu_max").unwrap(), libm::sqrt(0.6), epsilon = 1e-12);
        assert_relative_eq!(d.get("m_tilde").unwrap(), 5.0, epsilon = 1e-12);
        assert_relative_eq!(d.get("initial_radius").unwrap(), 0.5, epsilon = 1e-12);
        let zero = NonlinearitySpec::zero(alloc::vec![1, 1], 1.0).unwrap();
        let z = certify_decay(&agg, &zero);
        assert_relative_eq!(z[1].get("mu_max").unwrap(), agg.lambda, epsilon = 1e-14);
        assert_eq!(z[1].get("m_tilde"), Some(f64::INFINITY));
        // bounds too large for confinement
        let big = coupling(Profile::Sin, 0.2, 1.0);
        let b = certify_decay(&agg, &big);
        assert!(!b[0].satisfied);
        assert!(b[1..].iter().all(|r| !r.satisfied && r.derived.is_empty()));
    }

    fn fd_residual(sol: &HalfLineSolution, a: &Mat, spec: &NonlinearitySpec) -> f64 {
        let v = sol.trajectory.values();
        let h = sol.trajectory.grid().uniform_step().unwrap();
        (1..v.len() - 1)
            .map(|k| ((&v[k + 1] - &v[k - 1]) / (2.0 * h) - a * &v[k] - spec.apply(&v[k])).norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn halfline_solution_satisfies_the_equation() {
        let (sys, agg) = running(0.0);
        let spec = coupling(Profile::SinCubic, 0.1, 0.5);
        assert!(check_existence(&agg, &spec).satisfied);
        let g = GreensFunction::uncoupled(&sys, &agg).unwrap();
        let whole = solve_bounded_nonlinear(&agg, &g, &spec, &TimeGrid::uniform(-20.0, 20.0, 400).unwrap(), &LinearOptions::default()).unwrap();
        assert!(whole.trajectory.norm_sup() < 1e-10);
        let grid = TimeGrid::uniform(0.0, 30.0, 6000).unwrap();
        let c = Vector::from_vec(alloc::vec![0.2, 0.0]);
        let sol = solve_nonlinear_halfline(&agg, &g, &spec, &c, &grid, &LinearOptions::default()).unwrap();
        assert!(sol.trajectory.norm_sup() <= 0.5);
        assert!(sol.ratios().iter().all(|r| *r <= sol.q * (1.0 + 1e-8)));
        assert!(fd_residual(&sol, &sys.diagonal(), &spec) < 1e-4);
        assert!(sol.trajectory.values()[0][1].abs() > 1e-4);
    }

    #[test]
    fn escaping_the_ball_is_reported() {
        let (sys, agg) = running(0.0);
        let spec = coupling(Profile::Sin, 0.1, 0.1);
        let g = GreensFunction::uncoupled(&sys, &agg).unwrap();
        let grid = TimeGrid::uniform(0.0, 30.0, 600).unwrap();
        let c = Vector::from_vec(alloc::vec![0.5, 0.0]);
        assert!(matches!(
            solve_nonlinear_halfline(&agg, &g, &spec, &c, &grid, &LinearOptions::default()),
            Err(Error::ConfinementViolated { .. })
        ));
    }

    #[test]
    fn split_with_zero_remainder_is_the_linear_case() {
        let (sys, agg) = running(0.1);
        let lin = perturb(&sys, &agg, &LinearOptions::default()).unwrap();
        let mu = lin.constants.unwrap().mu;
        let split = SplitNonlinearity::new(sys.clone(), NonlinearitySpec::zero(sys.dims(), 1.0).unwrap()).unwrap();
        let r = certify_split(&split, &lin).unwrap();
        assert!(r.satisfied);
        assert_relative_eq!(r.get("nu_max").unwrap(), mu, epsilon = 1e-14);
        assert_relative_eq!(r.get("m_tilde").unwrap(), lin.constants.unwrap().m1, epsilon = 1e-12);
        let mut bare = lin.clone();
        bare.constants = None;
        assert!(matches!(certify_split(&split, &bare), Err(Error::PrerequisiteMissing(_))));
    }

    #[test]
    fn split_running_example() {
        let (sys, agg) = running(0.1);
        let lin = perturb(&sys, &agg, &LinearOptions::default()).unwrap();
        let rem = coupling(Profile::Sin, 0.01, 1.0);
        let split = SplitNonlinearity::new(sys.clone(), rem).unwrap();
        let r = certify_split(&split, &lin).unwrap();
        let c = lin.constants.unwrap();
        assert_relative_eq!(c.m1, 5.0, epsilon = 1e-12);
        let lip = r.part(ConditionId::SplitLipschitzSum).unwrap();
        assert_relative_eq!(lip.lhs, 0.02, epsilon = 1e-15);
        assert_relative_eq!(lip.threshold, c.mu / 10.0, epsilon = 1e-12);
        assert!(r.satisfied);
        let (m_tilde, nu) = r.decay_pair().unwrap();
        assert!(nu < c.mu && m_tilde >= c.m1);

        let v = lin.p_tilde_minus.column(0).into_owned();
        let c0 = &v * (0.5 * r.get("initial_radius").unwrap() / v.norm());
        let grid = TimeGrid::uniform(0.0, 40.0, 8000).unwrap();
        let sol = solve_split_halfline(&split, &lin, &c0, &grid, &LinearOptions::default()).unwrap();
        let x0 = sol.trajectory.values()[0].norm();
        for (t, x) in grid.points().iter().zip(sol.trajectory.values()) {
            assert!(x.norm() <= m_tilde * libm::exp(-nu * t) * x0 * (1.0 + 1e-6) + 1e-9);
        }
        let combined = split.combined();
        assert!(fd_residual(&sol, &sys.diagonal(), &combined) < 1e-4);
        combined.validate(300, 5).unwrap();
    }
}
