//! Polynomial low-rank tensor models.
//!
//! A function of `d` variables is represented as a sum of `r` separable
//! products of 1D polynomials, each a combination of `b` Legendre-based basis
//! functions. Because every factor is a polynomial, integrals of the model and
//! of its gradient over a box reduce to products of small 1D Gram matrices and
//! are computed exactly. This crate uses that to
//!
//! - minimize Rayleigh quotients and find the smallest eigenvalue of the
//!   Laplacian and of the harmonic oscillator in hundreds of dimensions
//!   ([`eigen`]), and
//! - train a multi-output model with a softmax head on MNIST ([`classifier`]).

pub mod classifier;
pub mod cli;
pub mod eigen;
pub mod gradcheck;
pub mod error;
pub mod idx;
pub mod legendre;
pub mod model;
pub mod numeric;
pub mod optim;
pub mod quadrature;
pub mod rayleigh;

#[cfg(test)]
mod test_oracles;

pub use error::{PltmError, Result};
pub use legendre::{assemble_forms, eval_basis, eval_basis_deriv, BasisFamily, BasisSpec, FormMatrices, Interval};
pub use model::{init_model, InitConfig, LtmModel};
pub use optim::{gd_step, AdamConfig, AdamState};
pub use rayleigh::{denominator, numerator, rayleigh, ProblemKind, ProblemSpec, RayleighEvaluation};
