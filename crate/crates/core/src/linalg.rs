//! Dense-matrix substrate: block systems, the matrix exponential, spectral
//! norms and a few symmetric-part helpers.
//!
//! All norms are taken with respect to the Euclidean norm on the concatenated
//! coordinates, so the induced operator norm is the spectral norm.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// An interconnected system `x' = (A + B) x`: the diagonal blocks `A_ii` of `A`
/// and the off-diagonal couplings `A_ij` making up `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSystem {
    blocks: Vec<Mat>,
    couplings: BTreeMap<(usize, usize), Mat>,
    offsets: Vec<usize>,
}

/// Aggregated coupling magnitudes used by every sufficient condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingNorms {
    /// `sum_{i != j} |A_ij|`
    pub sum: f64,
    /// `max_{i != j} |A_ij|`
    pub max: f64,
    /// `|B|`, the spectral norm of the assembled coupling matrix.
    pub full: f64,
}

impl BlockSystem {
    /// Builds a system from diagonal blocks and `(i, j) -> A_ij` couplings
    /// (zero-based indices). Absent couplings are zero.
    pub fn new(
        blocks: Vec<Mat>,
        couplings: impl IntoIterator<Item = ((usize, usize), Mat)>,
    ) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::Validation("a block system needs at least one block".into()));
        }
        for (i, b) in blocks.iter().enumerate() {
            if !b.is_square() || b.nrows() == 0 {
                return Err(Error::Shape(format!(
                    "block {i} is {}x{}, expected a nonempty square matrix",
                    b.nrows(),
                    b.ncols()
                )));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("block {i} has non-finite entries")));
            }
        }
        let n = blocks.len();
        let mut map = BTreeMap::new();
        for ((i, j), m) in couplings {
            if i == j {
                return Err(Error::Validation(format!("coupling ({i},{i}) lies on the diagonal")));
            }
            if i >= n || j >= n {
                return Err(Error::Validation(format!("coupling ({i},{j}) refers to a missing block")));
            }
            let (di, dj) = (blocks[i].nrows(), blocks[j].nrows());
            if m.nrows() != di || m.ncols() != dj {
                return Err(Error::Shape(format!(
                    "coupling ({i},{j}) is {}x{}, expected {di}x{dj}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("coupling ({i},{j}) has non-finite entries")));
            }
            if map.insert((i, j), m).is_some() {
                return Err(Error::Validation(format!("coupling ({i},{j}) given twice")));
            }
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut acc = 0;
        offsets.push(0);
        for b in &blocks {
            acc += b.nrows();
            offsets.push(acc);
        }
        Ok(Self { blocks, couplings: map, offsets })
    }

    pub fn n(&self) -> usize {
        self.blocks.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.nrows()).collect()
    }

    pub fn total_dim(&self) -> usize {
        self.offsets[self.blocks.len()]
    }

    /// Start offsets of each block in the concatenated coordinates, plus the total.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn block(&self, i: usize) -> &Mat {
        &self.blocks[i]
    }

    pub fn blocks(&self) -> &[Mat] {
        &self.blocks
    }

    pub fn coupling(&self, i: usize, j: usize) -> Option<&Mat> {
        self.couplings.get(&(i, j))
    }

    pub fn couplings(&self) -> impl Iterator<Item = (&(usize, usize), &Mat)> {
        self.couplings.iter()
    }

    /// Same diagonal, couplings multiplied by `lambda`.
    pub fn scaled(&self, lambda: f64) -> Self {
        Self {
            blocks: self.blocks.clone(),
            couplings: self
                .couplings
                .iter()
                .map(|(k, m)| (*k, m * lambda))
                .collect(),
            offsets: self.offsets.clone(),
        }
    }

    /// Same diagonal, no couplings.
    pub fn uncoupled(&self) -> Self {
        Self { blocks: self.blocks.clone(), couplings: BTreeMap::new(), offsets: self.offsets.clone() }
    }

    /// The block-diagonal part `A`.
    pub fn diagonal(&self) -> Mat {
        let d = self.total_dim();
        let mut a = Mat::zeros(d, d);
        for (i, b) in self.blocks.iter().enumerate() {
            let o = self.offsets[i];
            a.view_mut((o, o), b.shape()).copy_from(b);
        }
        a
    }

    /// The coupling part `B` (zero diagonal blocks).
    pub fn coupling_matrix(&self) -> Mat {
        let d = self.total_dim();
        let mut b = Mat::zeros(d, d);
        for (&(i, j), m) in &self.couplings {
            b.view_mut((self.offsets[i], self.offsets[j]), m.shape()).copy_from(m);
        }
        b
    }

    pub fn coupling_norms(&self) -> CouplingNorms {
        let mut sum = 0.0;
        let mut max: f64 = 0.0;
        for m in self.couplings.values() {
            let v = spectral_norm(m);
            sum += v;
            max = max.max(v);
        }
        CouplingNorms { sum, max, full: spectral_norm(&self.coupling_matrix()) }
    }

    /// `sqrt(sum_{j != i} |A_ij|^2)` for each row block `i`: the Lipschitz
    /// constant of `x -> sum_j A_ij x_j` with respect to the other components.
    pub fn row_coupling_norms(&self) -> Vec<f64> {
        let mut rows = alloc::vec![0.0; self.n()];
        for (&(i, _), m) in &self.couplings {
            let v = spectral_norm(m);
            rows[i] += v * v;
        }
        rows.into_iter().map(libm::sqrt).collect()
    }

    /// Writes `Bx` into `out`.
    pub fn apply_coupling(&self, x: &Vector, out: &mut Vector) {
        out.fill(0.0);
        for (&(i, j), m) in &self.couplings {
            let (oi, oj) = (self.offsets[i], self.offsets[j]);
            let xj = x.rows(oj, m.ncols());
            let mut yi = out.rows_mut(oi, m.nrows());
            yi.gemv(1.0, m, &xj, 1.0);
        }
    }

    /// Splits a full-space matrix back into its `(i, j)` blocks.
    pub fn split_blocks(&self, full: &Mat) -> Result<BTreeMap<(usize, usize), Mat>> {
        let d = self.total_dim();
        if full.shape() != (d, d) {
            return Err(Error::Shape(format!("expected {d}x{d}, got {:?}", full.shape())));
        }
        let mut out = BTreeMap::new();
        for i in 0..self.n() {
            for j in 0..self.n() {
                let (oi, oj) = (self.offsets[i], self.offsets[j]);
                let (di, dj) = (self.offsets[i + 1] - oi, self.offsets[j + 1] - oj);
                out.insert((i, j), full.view((oi, oj), (di, dj)).into_owned());
            }
        }
        Ok(out)
    }
}

/// Builds the dense matrix `A + B`.
pub fn assemble_full(sys: &BlockSystem) -> Mat {
    sys.diagonal() + sys.coupling_matrix()
}

/// Spectral norm (largest singular value). Assumes finite entries.
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if m.nrows() == 1 || m.ncols() == 1 {
        return m.norm();
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Induced Euclidean operator norm, rejecting non-finite input.
pub fn operator_norm(m: &Mat) -> Result<f64> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("operator_norm: non-finite entries".into()));
    }
    Ok(spectral_norm(m))
}

/// Smallest eigenvalue of the symmetric part `(M + M^T) / 2`.
pub fn min_symmetric_eigenvalue(m: &Mat) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

/// Largest eigenvalue of the symmetric part `(M + M^T) / 2`.
pub fn max_symmetric_eigenvalue(m: &Mat) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().max()
}

/// `|M M^T - M^T M| <= tol * |M|^2`.
pub fn is_normal(m: &Mat, tol: f64) -> bool {
    let mt = m.transpose();
    let comm = m * &mt - &mt * m;
    let scale = m.norm();
    comm.norm() <= tol * (scale * scale).max(f64::MIN_POSITIVE)
}

/// Orthonormal basis of the range of a projector, read off its left singular
/// vectors (nonzero singular values of a projector are at least one).
pub fn projector_range_basis(p: &Mat) -> Mat {
    let d = p.nrows();
    if d == 0 {
        return Mat::zeros(0, 0);
    }
    let svd = p.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let keep: Vec<usize> =
        (0..svd.singular_values.len()).filter(|&k| svd.singular_values[k] > 0.5).collect();
    let mut basis = Mat::zeros(d, keep.len());
    for (c, &k) in keep.iter().enumerate() {
        basis.set_column(c, &u.column(k));
    }
    basis
}

pub(crate) fn ensure_finite(m: &Mat, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

// Padé coefficients for the [m/m] approximant of exp, m = 3, 5, 7, 9, 13.
const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
// 1-norm thresholds below which each approximant is accurate to unit roundoff.
const THETA: [f64; 5] =
    [1.495585217958292e-2, 2.53939833006323e-1, 9.504178996162932e-1, 2.097847961257068e0, 5.371920351148152e0];

fn one_norm(m: &Mat) -> f64 {
    m.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

fn pade_low(a: &Mat, b: &[f64]) -> (Mat, Mat) {
    let d = a.nrows();
    let id = Mat::identity(d, d);
    let a2 = a * a;
    let mut u_even = &id * b[1];
    let mut v = &id * b[0];
    let mut pow = id.clone();
    let mut k = 1;
    while 2 * k < b.len() {
        pow = &pow * &a2;
        v += &pow * b[2 * k];
        if 2 * k + 1 < b.len() {
            u_even += &pow * b[2 * k + 1];
        }
        k += 1;
    }
    (a * u_even, v)
}

fn pade13(a: &Mat) -> (Mat, Mat) {
    let b = &PADE13;
    let d = a.nrows();
    let id = Mat::identity(d, d);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u = a * (inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1]);
    let inner_v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
    let v = inner_v + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &id * b[0];
    (u, v)
}

fn expm_core(a: &Mat) -> Result<Mat> {
    let norm = one_norm(a);
    let (u, v, squarings) = if norm <= THETA[0] {
        let (u, v) = pade_low(a, &PADE3);
        (u, v, 0)
    } else if norm <= THETA[1] {
        let (u, v) = pade_low(a, &PADE5);
        (u, v, 0)
    } else if norm <= THETA[2] {
        let (u, v) = pade_low(a, &PADE7);
        (u, v, 0)
    } else if norm <= THETA[3] {
        let (u, v) = pade_low(a, &PADE9);
        (u, v, 0)
    } else {
        let s = libm::ceil(libm::log2(norm / THETA[4])).max(0.0) as i32;
        let scaled = a * libm::pow(2.0, -(s as f64));
        let (u, v) = pade13(&scaled);
        (u, v, s)
    };
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.lu().solve(&p).ok_or(Error::NonFinite("matrix exponential (singular Pade denominator)"))?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    Ok(r)
}

/// `e^{tM}` by scaling and squaring with a diagonal Padé approximant.
///
/// If the plain evaluation overflows, the trace is shifted out first
/// (`e^{tM} = e^{tc} e^{t(M - cI)}`), which helps when the spectrum sits far
/// from the origin; the result is rejected only if it is still non-finite.
pub fn matrix_exponential(m: &Mat, t: f64) -> Result<Mat> {
    if !m.is_square() {
        return Err(Error::Shape(format!("matrix_exponential: {}x{} is not square", m.nrows(), m.ncols())));
    }
    if !t.is_finite() || m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("matrix_exponential: non-finite input".into()));
    }
    let d = m.nrows();
    if d == 0 {
        return Ok(Mat::zeros(0, 0));
    }
    let a = m * t;
    let r = expm_core(&a)?;
    if r.iter().all(|v| v.is_finite()) {
        return Ok(r);
    }
    let c = a.trace() / d as f64;
    let shifted = &a - Mat::identity(d, d) * c;
    let r = expm_core(&shifted)? * libm::exp(c);
    ensure_finite(&r, "matrix exponential")?;
    Ok(r)
}

/// Solves `M X = R` by LU, failing on singular `M`.
pub fn solve(m: &Mat, rhs: &Mat) -> Result<Mat> {
    m.clone().lu().solve(rhs).ok_or(Error::NonFinite("singular linear system"))
}
