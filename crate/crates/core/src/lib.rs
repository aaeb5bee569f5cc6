//! Exactly solvable Schrödinger bridge with quadratic state cost.
//!
//! The uncontrolled dynamics are `dx = √2 dw` with state cost `½xᵀQx`. The
//! Markov kernel of the factor equations is a rotated Mehler kernel, which
//! makes the forward/backward factor propagation, the Sinkhorn iteration
//! and the optimal control explicit.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod bridge;
pub mod density;
pub mod error;
pub mod exec;
pub mod grid;
pub mod hermite;
pub mod hyperbolic;
pub mod kernels;
pub mod sde;
pub mod sinkhorn;
pub mod spectral;

pub use bridge::{BridgeSolution, ControlField};
pub use density::{DensitySpec, Gaussian, TabulatedDensity};
pub use error::{QsbError, Result};
pub use exec::Exec;
pub use grid::{build_grid, GridSpec, KernelMatrix};
pub use kernels::{KernelEval, KernelPlan};
pub use sde::{simulate_paths, ControlSchedule, PathEnsemble};
pub use sinkhorn::{sinkhorn_solve, SinkhornOptions, SinkhornState};
pub use spectral::{eigendecompose_q, SpectralQ};
