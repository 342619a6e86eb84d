//! Energy-dissipating descent with learned direction models.
//!
//! A direction oracle proposes `d` at the iterate `u`; a cone layer forces
//! `d` into a descent cone of the energy's gradient, and a backtracking line
//! search along `u - τd` guarantees that the energy never increases.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod cli;
pub mod cone;
pub mod energies;
pub mod error;
pub mod feasibility;
pub mod models;
pub mod operators;
pub mod optimizer;
pub mod problems;
pub mod tensor;
pub mod trainer;

pub use cone::{ConeMode, ConeSpec};
pub use energies::{Energy, Smoothness};
pub use error::{Error, Result};
pub use models::{DirectionModel, DirectionOracle, ModelKind};
pub use operators::LinearOperator;
pub use tensor::Tensor;
