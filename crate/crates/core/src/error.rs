use alloc::string::String;

/// Errors raised by the analysis pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("{}eigenvalue {re}{im:+}i lies within {tol:e} of the imaginary axis", where_(block))]
    NotHyperbolic {
        block: Option<usize>,
        re: f64,
        im: f64,
        tol: f64,
    },
    #[error("non-finite result in {0}")]
    NonFinite(&'static str),
    #[error("tail bound {bound:e} exceeds tolerance {tol:e}; increase the cutoff")]
    TailTooLarge { bound: f64, tol: f64 },
    #[error("operator is not contractive (q = {q})")]
    ContractionViolated { q: f64 },
    #[error("initial data is not in the required invariant subspace (defect {defect:e})")]
    InvalidInitialData { defect: f64 },
    #[error("splitting not certified: |Z + Z'| = {norm} >= 1")]
    SplittingNotCertified { norm: f64 },
    #[error("iterate left the ball of radius {rho} (norm {norm})")]
    ConfinementViolated { rho: f64, norm: f64 },
    #[error("nonlinearity outside its declared class at block {block}: {detail}")]
    NonlinearityClass { block: usize, detail: String },
    #[error("prerequisite missing: {0}")]
    PrerequisiteMissing(&'static str),
    #[error("step size underflow at t = {t}")]
    Stiffness { t: f64 },
    #[error("iteration did not converge within {0} steps")]
    NoConvergence(usize),
}

/// `block K: ` counting from 1, or nothing for the assembled system.
fn where_(block: &Option<usize>) -> String {
    match block {
        Some(b) => alloc::format!("block {}: ", b + 1),
        None => String::new(),
    }
}

pub type Result<T> = core::result::Result<T, Error>;
