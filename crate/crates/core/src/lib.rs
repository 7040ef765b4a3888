//! Pricing engine for European exchange options in a finite-liquidity market.
//!
//! Asset 1 is illiquid: market makers delta-hedging the frictionless
//! (Margrabe) option move its price through a truncated impact function.
//! The crate provides the closed-form Margrabe analytics, the effective
//! impact-model coefficients, a two-dimensional Milstein engine with Lévy
//! areas and pathwise Jacobians, and control-variate Monte Carlo estimators.

pub mod convergence;
pub mod error;
pub mod impact;
pub mod margrabe;
pub mod mc;
pub mod normal;
pub mod rng;
pub mod sde;
pub mod stats;

pub use convergence::{strong_convergence, ConvergenceReport, ConvergenceSpec};
pub use error::{FlmmError, Result};
pub use impact::{coeff_jacobians, effective_coeffs, lambda_bar, CoeffJacobians, EffectiveCoeffs, ImpactParams};
pub use margrabe::{effective_vol, margrabe_greeks, margrabe_price, GreeksBundle, MarketState, ModelParams};
pub use mc::{delta_estimate, lva_table, price_estimate, ControlStatus, DeltaEstimate, EstimateWithCI, LvaRow};
pub use sde::{GridSpec, PathJacobian, StepNoise};
