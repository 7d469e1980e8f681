//! Backward recursion for `y_t`, forward policy extraction and the
//! brute-force oracle.

mod backward;
mod brute;
pub mod inner;
mod kbound;
mod policy;
mod refine;
mod value;

pub use backward::{build_grids, solve_backward};
pub use brute::{brute_force_value, composed_objective, count_assignments, BruteForceResult};
pub use kbound::{estimate_k, verify_k_bound, KEstimate};
pub use policy::{extract_policy, lookup_policy_value, Trajectory};
pub use refine::{refinement_study, RefinementLevel, RefinementStudy};
pub use value::{interpolate, Policy, ValueFunction};

use crate::control::ControlSetSpec;
use crate::generators::{BackwardGenerator, ForwardGenerator, TerminalGenerator};
use crate::tree::ScenarioTree;

/// Brute-force guard on the number of joint control assignments.
pub const DEFAULT_BRUTE_FORCE_BUDGET: u128 = 10_000_000;

/// A dynamic problem on a scenario tree. The same backward generator is used
/// at every non-terminal stage.
#[derive(Debug, Clone)]
pub struct Problem {
    pub tree: ScenarioTree,
    pub forward: ForwardGenerator,
    pub backward: BackwardGenerator,
    pub terminal: TerminalGenerator,
    pub controls: ControlSetSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StateBounds {
    /// Root interval around `x0`, child intervals propagated through the
    /// control set's extreme points and padded by 10%.
    Auto,
    /// The same interval on every node.
    Fixed { lo: f64, hi: f64 },
    /// Exactly the states reachable from `x0` through the discretized
    /// control sets. Polishing is disabled so that the solver stays on them.
    Reachable { max_states: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub state_points: usize,
    pub control_resolution: f64,
    pub polish: bool,
    pub polish_tolerance: f64,
    pub bounds: StateBounds,
    /// Worker threads; 0 uses all available cores.
    pub workers: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            state_points: 41,
            control_resolution: 0.1,
            polish: true,
            polish_tolerance: 1e-7,
            bounds: StateBounds::Auto,
            workers: 0,
        }
    }
}

impl SolverConfig {
    pub fn polishing(&self) -> bool {
        self.polish && !matches!(self.bounds, StateBounds::Reachable { .. })
    }

    pub(crate) fn inner_settings(&self) -> inner::InnerSettings {
        inner::InnerSettings {
            resolution: self.control_resolution,
            polish: self.polishing(),
            tolerance: self.polish_tolerance,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x0: f64,
    /// `y_0 .. y_T`.
    pub values: Vec<ValueFunction>,
    /// Policies for stages `0 .. T-1`.
    pub policies: Vec<Policy>,
    pub warnings: Vec<String>,
}

impl Solution {
    /// `y_0(x0)`.
    pub fn root_value(&self) -> f64 {
        self.values[0].eval_at(0, self.x0)
    }
}
