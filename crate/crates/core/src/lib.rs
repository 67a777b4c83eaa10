//! Heat-kernel and ground-state comparison for perturbed discrete Dirichlet forms.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod comparison;
pub mod domain;
pub mod error;
pub mod heat;
pub mod linalg;
pub mod orlicz;
pub mod perturbation;
pub mod quadrature;
pub mod spectral;

pub use error::{Error, Result};
