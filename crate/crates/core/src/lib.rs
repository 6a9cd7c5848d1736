//! Bayesian variable selection for survival and probit regression.
//!
//! Each covariate is excluded, linear, or linear plus a spline deviation.
//! Models are scored by Laplace-approximated marginal likelihoods under
//! local or non-local coefficient priors and explored by enumeration or an
//! augmented-space Gibbs sampler. Start from [`inference::Problem`] and
//! [`search::explore`].

pub mod design;
pub mod error;
pub mod inference;
pub mod likelihoods;
pub mod model;
pub mod numeric;
pub mod priors;
pub mod search;
pub mod sim;
pub mod specfun;

pub use nalgebra;
