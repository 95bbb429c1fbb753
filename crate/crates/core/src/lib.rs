//! Numerical laboratory for the cone-degenerate p-Laplace equation
//!
//! ```text
//! t^{-p} div_𝔹(|∇_𝔹u|^{p-2} ∇_𝔹u) + t^{-p}(n-p)|∇_𝔹u|^{p-2}(t∂_t u) = f(t, x)
//! ```
//!
//! on the stretched cone `𝔹 = (0,1) × X` with `∇_𝔹 = (t∂_t, ∂_{x₁}, …)`.
//! All discretisation happens in log coordinates `a = ln t`, where the cone
//! gradient and Hessian become the ordinary ones.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod calculus;
pub mod cli;
pub mod error;
pub mod field;
pub mod geometry;
pub mod operators;
pub mod regularization;
pub mod solver;
pub mod sparse;

pub use error::{ConeError, Result};
