//! Estimation of controlled-risk and controlled vaccine-efficacy curves for
//! immune correlates of protection from two-phase (case-cohort) randomized
//! trial data.
//!
//! The crate covers the full workflow:
//!
//! - [`dataset`]: CSV ingestion, two-phase sampling weights, tertile coding,
//!   positivity and confounder diagnostics.
//! - [`riskreg`]: weighted logistic and case-cohort Cox conditional risk
//!   models with Newton solvers.
//! - [`marginal`]: IPW g-computation of the marginalized risk curve and
//!   derived ratio contrasts.
//! - [`sensitivity`]: E-values, bias factors, and conservative
//!   controlled-risk bounds under user-specified unmeasured confounding.
//! - [`cve`]: controlled vaccine-efficacy curves against the placebo-arm
//!   marginalized risk, with a full-mediation probe below the assay limit.
//! - [`bootstrap`]: stratified, seed-reproducible percentile bootstrap.
//! - [`sim`]: synthetic trials with exact counterfactual truth for
//!   validation.
//! - [`analysis`]: the orchestrated pipeline used by the CLI.

// Validation guards use negated comparisons (`!(x > 0.0)`) so NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod bootstrap;
pub mod cve;
pub mod dataset;
mod error;
pub mod marginal;
pub mod record;
pub mod riskreg;
pub mod sensitivity;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
pub use record::{Arm, Covariate, Outcome, ParticipantRecord};
