//! Random hyperbolic block systems for testing and sweeps.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::linalg::{spectral_norm, BlockSystem, Mat};

/// Shape of the generated systems.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusOptions {
    pub min_blocks: usize,
    pub max_blocks: usize,
    pub max_dim: usize,
    /// Real parts of the eigenvalues are drawn from `±[lo, hi]`.
    pub rate_range: (f64, f64),
    /// Size of the random change of basis; 0 gives normal blocks.
    pub skew: f64,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        Self { min_blocks: 2, max_blocks: 3, max_dim: 4, rate_range: (0.5, 2.0), skew: 0.3 }
    }
}

pub fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// A `dim x dim` block `V D V^{-1}` with `D` made of real eigenvalues and
/// rotation pairs whose real parts avoid the imaginary axis.
pub fn random_block(rng: &mut impl Rng, dim: usize, opts: &CorpusOptions) -> Mat {
    let (lo, hi) = opts.rate_range;
    let mut d = Mat::zeros(dim, dim);
    let mut k = 0;
    while k < dim {
        let re = lo + (hi - lo) * rng.random::<f64>();
        let re = if rng.random::<bool>() { re } else { -re };
        if k + 1 < dim && rng.random::<f64>() < 0.3 {
            let im = 0.2 + 1.5 * rng.random::<f64>();
            d[(k, k)] = re;
            d[(k + 1, k + 1)] = re;
            d[(k, k + 1)] = im;
            d[(k + 1, k)] = -im;
            k += 2;
        } else {
            d[(k, k)] = re;
            k += 1;
        }
    }
    loop {
        let v = Mat::identity(dim, dim) + gaussian_matrix(rng, dim, dim) * (opts.skew / libm::sqrt(dim as f64));
        if let Some(inv) = v.clone().try_inverse() {
            if spectral_norm(&v) * spectral_norm(&inv) < 20.0 {
                return &v * d * inv;
            }
        }
    }
}

/// A random system whose couplings are all present and normalised to
/// `sum_{i != j} |A_ij| = 1`; use [`BlockSystem::scaled`] to set the size.
pub fn random_system(rng: &mut impl Rng, opts: &CorpusOptions) -> Result<BlockSystem> {
    let n = rng.random_range(opts.min_blocks..=opts.max_blocks);
    let dims: Vec<usize> = (0..n).map(|_| rng.random_range(1..=opts.max_dim)).collect();
    let blocks: Vec<Mat> = dims.iter().map(|d| random_block(rng, *d, opts)).collect();
    let mut couplings = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                couplings.push(((i, j), gaussian_matrix(rng, dims[i], dims[j])));
            }
        }
    }
    let total: f64 = couplings.iter().map(|(_, m)| spectral_norm(m)).sum();
    let couplings = couplings.into_iter().map(|(k, m)| (k, m / total));
    BlockSystem::new(blocks, couplings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn systems_are_hyperbolic_and_normalised() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let opts = CorpusOptions::default();
        for _ in 0..20 {
            let sys = random_system(&mut rng, &opts).unwrap();
            assert!((sys.coupling_norms().sum - 1.0).abs() < 1e-12);
            for b in sys.blocks() {
                let e = b.complex_eigenvalues();
                assert!(e.iter().all(|z| z.re.abs() > 0.49));
            }
        }
    }
}
