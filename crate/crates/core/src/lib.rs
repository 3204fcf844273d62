//! Policy-aligned CATE estimation.
//!
//! The firm's stepwise profit objective `1{τ ≥ c}(τ0 − c)` is smoothed by
//! treating the treatment cost as a random threshold `C ~ F_C` centred at
//! `c`. Maximizing the resulting surrogate recovers both a near-optimal
//! targeting policy and CATEs that rationalize it. The scale of `F_C`
//! trades accuracy at the decision boundary against global fit; a uniform
//! threshold reduces the problem to least squares on transformed outcomes.
//!
//! Module map:
//!
//! * [`surrogate`]: threshold distributions, per-observation loss and its
//!   derivatives, the covariate-free objective.
//! * [`data`]: experiment records, transformed outcomes, CSV I/O.
//! * [`linear`]: parametric M-estimation with sandwich covariance.
//! * [`neural`]: MLP sieve estimator and a direct-policy baseline.
//! * [`dgp`]: seeded synthetic data generators with oracle CATEs.
//! * [`evaluation`]: profit, MSE and Qini metrics.
//! * [`selection`]: cross-validated choice of the threshold scale.
//! * [`experiment`]: the end-to-end method comparison pipeline.

pub mod data;
pub mod dgp;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod linear;
pub mod model;
pub mod neural;
pub mod numfmt;
pub mod selection;
pub mod special;
pub mod surrogate;

pub use error::{Error, Result};
