//! Cubic trivariate B-spline interpolation of sampled signed distances.

pub mod basis;
mod field;
pub mod system;

pub use basis::{bspline_b, bspline_b_d1, bspline_b_d2, tensor_b, tensor_b_full, B_ZERO};
pub(crate) use field::symmetric;
pub use field::{basis_value, fit, FieldSample, FitOptions, ImplicitField, SplineField};

pub use system::{
    assemble_system, conjugate_gradient, solve_coefficients, LinearOperator, SolveReport,
    SparseSystem, StencilOperator,
};
