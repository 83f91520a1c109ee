//! Off-policy evaluation for contextual bandits, plus a harness that
//! iteratively proposes and scores edits to experiment specs.

// `!(x > 0.0)` style checks are used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bandit;
pub mod batch;
pub mod cache;
pub mod estimators;
pub mod experiment;
pub mod optimizer;
pub mod patch;
pub mod spec;
