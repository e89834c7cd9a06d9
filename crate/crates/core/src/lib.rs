//! Physics-informed Kolmogorov–Arnold networks (PI-KAN) for vessel performance
//! prediction.
//!
//! The crate covers the full modelling workflow for the shaft RPM → shaft power →
//! fuel chain:
//!
//! - [`data`]: CSV ingestion, validation, derived features, chronological splits,
//!   time-block folds and standardization.
//! - [`synth`]: a ground-truth physics generator for desk-scale experiments.
//! - [`physics`]: empirical resistance, cube-law prior and the fuel/power relation.
//! - [`kan`]: per-feature univariate subnetworks with a linear head and exact
//!   analytic gradients.
//! - [`train`]: data/physics/elastic-net losses, the λ auto-balance controller,
//!   Adam and early stopping.
//! - [`pipeline`]: leakage-free chained out-of-fold stacking and fleet-wide λ tuning.
//! - [`baselines`]: the multiplicative polynomial model and an MLP.
//! - [`eval`]: metrics, benchmark reports and response-curve export.
//! - [`gradcheck`]: central finite-difference checks of every training objective.
//!
//! All physics runs in SI units. Conversions from knots, kW and kg per 15-minute
//! interval happen once, at the CSV boundary.

pub mod baselines;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod kan;
pub mod physics;
pub mod pipeline;
pub mod synth;
pub mod train;

mod linalg;

pub use error::{Error, Result};
