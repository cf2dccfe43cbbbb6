//! Topology-aware implicit shape editing.
//!
//! A mesh is normalized into the unit cube, its signed distance is sampled on a
//! regular lattice and interpolated by a cubic tensor-product B-spline. Saddle
//! points of the fitted field mark places where the surface topology is close to
//! changing; compactly supported bumps aligned with the Hessian eigenframe at
//! those points join, break, fill or open the surface. The composite field is
//! displayed by sphere tracing and exported through marching tetrahedra.

pub mod critical;
pub mod deformer;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod mesh;
pub mod metrics;
pub mod sdf;
pub mod session;
pub mod spline;
pub mod surfacing;

pub use error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
