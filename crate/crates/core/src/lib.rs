//! Desk-scale automated decision optimization.
//!
//! - [`gymspec`]: declarative environments, their interpreter and source generation.
//! - [`engine`]: tabular agents and the joint agent/hyperparameter search.
//! - [`analytics`]: transition matrices, temporal graphs, state clustering and layouts.
//! - [`rules`]: surrogate decision lists explaining observed agent behavior.
//! - [`catalog`]: the template catalog over optimization-type and industry taxonomies.

pub mod analytics;
pub mod catalog;
pub mod engine;
pub mod gymspec;
pub mod rules;
