//! Utility of post-market-surveillance sampling plans over a two-echelon
//! supply chain.
//!
//! Binary test results on (test node, supply node) traces inform a Bayesian
//! model of SFP rates. Plans are scored by the expected reduction of a
//! configurable loss, and allocations across a budget range come from a greedy
//! sweep.

pub mod error;
pub mod estimators;
pub mod inference;
pub mod loss;
pub mod planner;
pub mod priors;
pub mod rng;
pub mod supply_model;
pub mod utility;
pub mod worked_example;

pub use error::{Error, Result};
pub use inference::{sample_posterior, DrawSet, SamplerConfig};
pub use loss::{LossSpec, Prioritization, ScoreKind};
pub use priors::{PriorSpec, RiskCategory};
pub use supply_model::{CountMatrices, Dataset, Network, RateVector, SourcingMatrix, TestRecord};
pub use utility::{SamplingPlan, UtilityEstimate};
