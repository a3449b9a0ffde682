//! Roughness of exponential dichotomies for block-coupled linear and
//! nonlinear systems `x' = (D + B) x + R(x)`.
//!
//! The crate is `no_std` with `alloc`.

#![no_std]
// `!(x > y)` is used on purpose so that NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod linalg;
pub mod quadrature;
pub mod schur;
pub mod dichotomy;
pub mod greens;
pub mod report;
pub mod roughness;
pub mod lyapunov;
pub mod nonlinear;
pub mod oracle;
pub mod corpus;

pub use error::{Error, Result};
pub use linalg::{BlockSystem, CouplingNorms, Mat, Vector};
