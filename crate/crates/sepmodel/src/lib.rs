//! Separable first-order models of the discrete heat compliance
//! `J(λ) = fᵀ K(λ)⁻¹ f` for multi-material topology optimization.
//!
//! The exact single-element model follows from a rank-two update of the
//! stiffness matrix. Cheaper variants replace the 2×2 matrix `Γ` by a
//! diagonal surrogate or by values tabulated from exterior problems around
//! a reference triangle.

pub mod error;
pub mod experiments;
pub mod exterior;
pub mod fem;
pub mod geometry;
pub mod linalg;
pub mod mesh;
pub mod models;
pub mod parallel;
pub mod tables;

pub use error::{Error, LoadError, Result};
pub use parallel::Execution;
