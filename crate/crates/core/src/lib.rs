//! Offline policy evaluation under unmeasured confounding.
//!
//! The crate fits lasso-logit nuisance models on observational decision
//! data, evaluates threshold/quantile policies by direct outcome modeling,
//! and quantifies how far those estimates can move when a latent
//! confounder drives both treatment and outcomes: a Bayesian sensitivity
//! model sampled with an adaptive Hamiltonian sampler, plus a classical
//! four-parameter sweep baseline. A synthetic-data lab with known potential
//! outcomes provides ground truth for end-to-end validation.

pub mod confound;
pub mod data;
pub mod error;
pub mod glm;
pub mod mathutil;
pub mod mcmc;
pub mod policy;
pub mod ranking;
pub mod rr;
pub mod synth;
pub mod truncnorm;

pub use error::{Error, Result};
