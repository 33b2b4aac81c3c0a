//! Learning and grounding multi-object visual situations.
//!
//! The crate learns a joint Gaussian over the box parameters of a situation's
//! object categories, per-category size/shape priors, and linear
//! localization/refinement models. A stochastic agent loop then grounds the
//! situation in a test image and produces a match score used to rank images.

pub mod geometry;
pub mod prob_models;
mod util;
pub mod data_io;
pub mod features;
pub mod learners;
pub mod engine;
pub mod evaluation;
