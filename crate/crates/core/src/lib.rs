//! Bayesian epidemic monitoring on regional hospital-load data.
//!
//! A linear compartment state-space model drives a Kalman-filter
//! marginal likelihood, an adaptive-Metropolis posterior sampler, a
//! dynamic transmission-rate optimizer, and a parametric bootstrap for
//! bias diagnostics. All numerics are generic over the floating-point
//! scalar; `f64` aliases are exported at the crate root.

pub mod analysis;
pub mod bootstrap;
pub mod data;
pub mod error;
pub mod kalman;
pub mod model;
pub mod network;
pub mod optimizer;
pub mod params;
pub mod priors;
pub mod sampler;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default concrete scalar used by the command-line tools.
pub type Real = f64;

pub type ParameterVector = params::ParameterVector<Real>;
pub type FractionSet = params::FractionSet<Real>;
pub type DynamicSchedule = params::DynamicSchedule<Real>;
pub type PriorSet = priors::PriorSet<Real>;
pub type CommuteNetwork = network::CommuteNetwork<Real>;
pub type BetaTrajectory = optimizer::BetaTrajectory<Real>;
pub type HorizonConfig = optimizer::HorizonConfig<Real>;
