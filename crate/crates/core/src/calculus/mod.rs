//! Log-coordinate grids, discrete cone derivatives, quadrature and weighted norms.

pub mod grid;
pub mod norms;
pub mod stencil;

pub use grid::{GridFunction, LogGrid, NodeKind};
pub use norms::{
    cone_integral, derivative_field, hoelder_norm, weighted_lp_norm, weighted_sobolev_norm,
    HoelderReport, NormParams, NormReport,
};
pub use stencil::{b_gradient, b_hessian, Stencil};
