//! f-divergence variational inference.
//!
//! The crate is organised around [`DivergenceGenerator`]: a convex `f` with
//! `f(1) = 0` and its dual `f*(t) = t f(1/t)`. For a model `p(z, D)` and a
//! recognition density `q`, `E_q[f*(p/q)] >= f*(p(D))`, which yields evidence
//! bounds, stochastic training objectives and coordinate-ascent updates.
//!
//! ```
//! use fvi_core::divergence::kl_reverse;
//! let g = kl_reverse();
//! assert!((g.f_dual(2.0) + 2f64.ln()).abs() < 1e-15);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod check;
pub mod divergence;
pub mod estimators;
pub mod families;
pub mod meanfield;
pub mod models;
pub mod optimizer;
pub mod oracle;
pub mod stats;

/// RNG used for every Monte Carlo substream.
pub type RngStream = rand_chacha::ChaCha8Rng;

pub use divergence::{
    make_dual, make_surrogate, registry_lookup, Direction, DivergenceError, DivergenceGenerator,
    DivergenceSpec, HomogeneityClass, HomogeneityTag, Monotone, MonotonicityMap,
};
pub use estimators::{
    bound_mc, grad_iw_reparam, grad_reparam, grad_score, iw_bound_mc, sandwich, BoundEstimate,
    EstimatorError, GradientEstimate, GradientKind, McConfig, Objective, SandwichResult,
};
pub use families::{
    diag_gaussian_family, family_lookup, uniform_width_family, FamilyError, VariationalFamily,
};
pub use meanfield::{run_meanfield, Factor, MeanFieldConfig, MeanFieldError, MeanFieldState};
pub use models::{Conditioned, Dataset, LatentModel, LogJoint, ModelError, Observation};
pub use optimizer::{train, TrainConfig, TrainError, TrainTrace};
pub use oracle::{Density1D, OracleError, QuadratureResult};
