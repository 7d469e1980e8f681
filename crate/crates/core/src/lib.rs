//! Conditional-analysis toolkit for stochastic optimal control on finite
//! scenario trees.
//!
//! The building blocks are stage-measurable values on a [`tree::ScenarioTree`],
//! conditional risk measures, state-dependent control sets and forward/backward
//! generators. [`solver`] runs the Bellman recursion
//! `y_t(x) = max_{z in Theta_t(x)} u_t(x, y_{t+1}(v_t(x, z)), z)` and
//! extracts optimal policies; [`sharing`] and [`random_sets`] cover the
//! closed-form risk-sharing problem and finite random closed sets.

pub mod conditional;
pub mod conditions;
pub mod config;
pub mod control;
pub mod error;
pub mod generators;
pub mod random_sets;
pub mod report;
pub mod risk;
pub mod sharing;
pub mod solver;
pub mod tree;

pub use error::{Error, Result};
