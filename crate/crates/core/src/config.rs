//! JSON problem descriptions and the named presets.
//!
//! Every kind is an internally tagged object (`{"kind": "binomial", ...}`).
//! Unknown fields are rejected so that typos surface as config errors.

use serde::{Deserialize, Serialize};

use crate::control::{AffineBound, ControlSetSpec, UpperLevelSet};
use crate::error::{Error, Result};
use crate::generators::{BackwardGenerator, ForwardGenerator, GammaSchedule, Kernel, Reward, TerminalGenerator};
use crate::risk::RiskMeasure;
use crate::sharing::SharingProblem;
use crate::solver::{estimate_k, Problem, SolverConfig, StateBounds};
use crate::tree::{Branch, NodeSpec, ScenarioTree};

pub const PRESETS: [&str; 2] = ["risk-constrained-consumption", "wealth-dependent-entropic"];
pub const SHARING_PRESETS: [&str; 1] = ["risk-sharing"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TreeConfig {
    Binomial {
        horizon: usize,
        p: f64,
        up: f64,
        down: f64,
    },
    Trinomial {
        horizon: usize,
        probabilities: [f64; 3],
        shocks: [f64; 3],
    },
    Lattice {
        horizon: usize,
        branches: Vec<Branch>,
    },
    Explicit {
        nodes: Vec<NodeSpec>,
    },
}

impl TreeConfig {
    pub fn build(&self) -> Result<ScenarioTree> {
        match self {
            TreeConfig::Binomial { horizon, p, up, down } => ScenarioTree::binomial(*horizon, *p, *up, *down),
            TreeConfig::Trinomial {
                horizon,
                probabilities,
                shocks,
            } => ScenarioTree::trinomial(*horizon, *probabilities, *shocks),
            TreeConfig::Lattice { horizon, branches } => ScenarioTree::lattice(*horizon, branches),
            TreeConfig::Explicit { nodes } => ScenarioTree::from_specs(nodes),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ForwardConfig {
    WealthConsumption,
    SelfFinancing,
    PortfolioIdentity,
}

impl ForwardConfig {
    pub fn build(&self) -> ForwardGenerator {
        match self {
            ForwardConfig::WealthConsumption => ForwardGenerator::WealthConsumption,
            ForwardConfig::SelfFinancing => ForwardGenerator::SelfFinancing,
            ForwardConfig::PortfolioIdentity => ForwardGenerator::PortfolioIdentity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelConfig {
    Entropic { gamma: f64 },
    Expectation,
}

impl KernelConfig {
    pub fn build(&self) -> Result<Kernel> {
        match *self {
            KernelConfig::Entropic { gamma } => {
                positive("kernel.gamma", gamma)?;
                Ok(Kernel::Entropic { gamma })
            }
            KernelConfig::Expectation => Ok(Kernel::Expectation),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RewardConfig {
    Zero,
    Linear {
        state: f64,
        #[serde(default)]
        control: Vec<f64>,
    },
    Consumption {
        weight: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackwardConfig {
    /// Entropic certainty equivalent with wealth-dependent risk aversion.
    Entropic { gamma_at_zero: f64, gamma_at_infinity: f64 },
    Scaling { kernel: KernelConfig },
    Additive { kernel: KernelConfig, reward: RewardConfig },
}

impl BackwardConfig {
    pub fn build(&self) -> Result<BackwardGenerator> {
        Ok(match self {
            BackwardConfig::Entropic {
                gamma_at_zero,
                gamma_at_infinity,
            } => {
                let gamma = GammaSchedule {
                    at_zero: *gamma_at_zero,
                    at_infinity: *gamma_at_infinity,
                };
                gamma
                    .validate()
                    .map_err(|e| Error::Config(format!("backward: {e}")))?;
                BackwardGenerator::Entropic { gamma }
            }
            BackwardConfig::Scaling { kernel } => BackwardGenerator::Scaling { kernel: kernel.build()? },
            BackwardConfig::Additive { kernel, reward } => BackwardGenerator::Additive {
                kernel: kernel.build()?,
                reward: match reward {
                    RewardConfig::Zero => Reward::Zero,
                    RewardConfig::Linear { state, control } => Reward::Linear {
                        state: *state,
                        control: control.clone(),
                    },
                    RewardConfig::Consumption { weight } => Reward::Consumption { weight: *weight },
                },
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TerminalConfig {
    #[default]
    Identity,
    Liquidation { initial_prices: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RiskConfig {
    Entropic { gamma: f64 },
    NegativeExpectation,
}

/// A box bound: a constant, or `constant + state_slope * x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BoundConfig {
    Constant(f64),
    Affine { constant: f64, state_slope: f64 },
}

impl BoundConfig {
    fn build(&self) -> AffineBound {
        match *self {
            BoundConfig::Constant(c) => AffineBound::fixed(c),
            BoundConfig::Affine { constant, state_slope } => AffineBound { constant, state_slope },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlConfig {
    Box {
        lower: Vec<BoundConfig>,
        upper: Vec<BoundConfig>,
        #[serde(default)]
        open: bool,
    },
    RiskConstrained {
        risk: RiskConfig,
        #[serde(default)]
        consumption: bool,
    },
    /// `{z : u(x, v(x, z), z) >= x - (T - t - 1) K}`. Without `k`, K is
    /// estimated over `battery` (default: 41 states spanning `x0 +- 20`).
    Induced {
        #[serde(default)]
        k: Option<f64>,
        #[serde(default)]
        battery: Option<Vec<f64>>,
    },
    /// The same finite control list at every non-terminal node.
    ExplicitGrid { controls: Vec<Vec<f64>> },
    Unbounded { dimension: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundsConfig {
    #[default]
    Auto,
    Fixed {
        lo: f64,
        hi: f64,
    },
    Reachable {
        max_states: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub state_points: usize,
    pub control_resolution: f64,
    pub polish: bool,
    pub polish_tolerance: f64,
    pub bounds: BoundsConfig,
    /// Halvings reported by the refinement study of `solve` (0 disables it).
    pub refinement_levels: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let d = SolverConfig::default();
        Self {
            state_points: d.state_points,
            control_resolution: d.control_resolution,
            polish: d.polish,
            polish_tolerance: d.polish_tolerance,
            bounds: BoundsConfig::Auto,
            refinement_levels: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub tree: TreeConfig,
    pub forward: ForwardConfig,
    pub backward: BackwardConfig,
    #[serde(default)]
    pub terminal: TerminalConfig,
    pub controls: ControlConfig,
    #[serde(default)]
    pub solver: SolverSettings,
    pub initial_state: f64,
    #[serde(default)]
    pub seed: u64,
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{field} must be positive and finite, got {v}")))
    }
}

fn finite(field: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{field} must be finite, got {v}")))
    }
}

/// Parses JSON, reporting line and column on syntax or schema errors.
pub fn parse_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

impl ProblemConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = parse_json(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        finite("initial_state", self.initial_state)?;
        let s = &self.solver;
        if s.state_points < 2 {
            return Err(Error::Config(format!(
                "solver.state_points must be at least 2, got {}",
                s.state_points
            )));
        }
        positive("solver.control_resolution", s.control_resolution)?;
        positive("solver.polish_tolerance", s.polish_tolerance)?;
        match s.bounds {
            BoundsConfig::Fixed { lo, hi } if !(lo < hi && lo.is_finite() && hi.is_finite()) => {
                return Err(Error::Config(format!("solver.bounds: need finite lo < hi, got [{lo}, {hi}]")))
            }
            BoundsConfig::Reachable { max_states: 0 } => {
                return Err(Error::Config("solver.bounds.max_states must be positive".into()))
            }
            _ => {}
        }
        match &self.controls {
            ControlConfig::Box { lower, upper, .. } => {
                if lower.is_empty() || lower.len() != upper.len() {
                    return Err(Error::Config(format!(
                        "controls: box needs matching nonempty bounds, got {} lower and {} upper",
                        lower.len(),
                        upper.len()
                    )));
                }
            }
            ControlConfig::RiskConstrained { risk, .. } => {
                if let RiskConfig::Entropic { gamma } = risk {
                    positive("controls.risk.gamma", *gamma)?;
                }
            }
            ControlConfig::Induced { k, battery } => {
                if let Some(k) = k {
                    if !(*k >= 0.0 && k.is_finite()) {
                        return Err(Error::Config(format!("controls.k must be finite and nonnegative, got {k}")));
                    }
                }
                if battery.as_ref().is_some_and(|b| b.is_empty()) {
                    return Err(Error::Config("controls.battery must not be empty".into()));
                }
            }
            ControlConfig::ExplicitGrid { controls } => {
                let d = controls.first().map(Vec::len).unwrap_or(0);
                if d == 0 || controls.iter().any(|z| z.len() != d) {
                    return Err(Error::Config(
                        "controls: explicit_grid needs a nonempty list of equal-length controls".into(),
                    ));
                }
            }
            ControlConfig::Unbounded { dimension } => {
                if *dimension == 0 {
                    return Err(Error::Config("controls.dimension must be positive".into()));
                }
            }
        }
        if let TerminalConfig::Liquidation { initial_prices } = &self.terminal {
            if initial_prices.is_empty() {
                return Err(Error::Config("terminal.initial_prices must not be empty".into()));
            }
        }
        Ok(())
    }

    pub fn solver_config(&self, workers: usize) -> SolverConfig {
        let s = &self.solver;
        SolverConfig {
            state_points: s.state_points,
            control_resolution: s.control_resolution,
            polish: s.polish,
            polish_tolerance: s.polish_tolerance,
            bounds: match s.bounds {
                BoundsConfig::Auto => StateBounds::Auto,
                BoundsConfig::Fixed { lo, hi } => StateBounds::Fixed { lo, hi },
                BoundsConfig::Reachable { max_states } => StateBounds::Reachable { max_states },
            },
            workers,
        }
    }

    /// Default K battery: 41 states spanning `x0 +- 20`.
    pub fn k_battery(&self) -> Vec<f64> {
        match &self.controls {
            ControlConfig::Induced { battery: Some(b), .. } => b.clone(),
            _ => (0..41).map(|i| self.initial_state - 20.0 + i as f64).collect(),
        }
    }

    /// Builds the problem. For induced controls without an explicit `k`
    /// this runs the K estimate, which fails with `NoK` on arbitrage trees.
    pub fn build(&self) -> Result<Problem> {
        self.validate()?;
        let tree = self
            .tree
            .build()
            .map_err(|e| Error::Config(format!("tree: {e}")))?;
        let forward = self.forward.build();
        let backward = self.backward.build()?;
        let terminal = match &self.terminal {
            TerminalConfig::Identity => TerminalGenerator::Identity,
            TerminalConfig::Liquidation { initial_prices } => TerminalGenerator::Liquidation {
                initial_prices: initial_prices.clone(),
            },
        };
        let controls = match &self.controls {
            ControlConfig::Box { lower, upper, open } => ControlSetSpec::Box {
                lower: lower.iter().map(BoundConfig::build).collect(),
                upper: upper.iter().map(BoundConfig::build).collect(),
                open: *open,
            },
            ControlConfig::RiskConstrained { risk, consumption } => ControlSetSpec::RiskConstrained {
                risk: match *risk {
                    RiskConfig::Entropic { gamma } => RiskMeasure::entropic(gamma),
                    RiskConfig::NegativeExpectation => RiskMeasure::NegativeExpectation,
                },
                consumption: *consumption,
            },
            ControlConfig::Induced { k, .. } => {
                let k = match k {
                    Some(k) => *k,
                    None => estimate_k(&tree, &forward, &backward, &self.k_battery())?.overall,
                };
                let horizon = tree.horizon();
                ControlSetSpec::UpperLevel(UpperLevelSet {
                    forward: forward.clone(),
                    backward: backward.clone(),
                    slack_by_stage: (0..=horizon)
                        .map(|t| horizon.saturating_sub(t + 1) as f64 * k)
                        .collect(),
                    nonnegative_last: matches!(forward, ForwardGenerator::WealthConsumption),
                })
            }
            ControlConfig::ExplicitGrid { controls } => ControlSetSpec::ExplicitGrid {
                grids: tree
                    .nodes()
                    .iter()
                    .map(|n| if n.children.is_empty() { Vec::new() } else { controls.clone() })
                    .collect(),
            },
            ControlConfig::Unbounded { dimension } => ControlSetSpec::Unbounded { dimension: *dimension },
        };
        Ok(Problem {
            tree,
            forward,
            backward,
            terminal,
            controls,
        })
    }

    pub fn preset(name: &str) -> Result<Self> {
        let binomial = TreeConfig::Binomial {
            horizon: 2,
            p: 0.6,
            up: 1.0,
            down: -1.0,
        };
        let cfg = match name {
            "risk-constrained-consumption" => ProblemConfig {
                tree: binomial,
                forward: ForwardConfig::WealthConsumption,
                backward: BackwardConfig::Additive {
                    kernel: KernelConfig::Entropic { gamma: 1.0 },
                    reward: RewardConfig::Consumption { weight: 3.0 },
                },
                terminal: TerminalConfig::Identity,
                controls: ControlConfig::RiskConstrained {
                    risk: RiskConfig::Entropic { gamma: 2.0 },
                    consumption: true,
                },
                solver: SolverSettings::default(),
                initial_state: 1.0,
                seed: 7,
            },
            "wealth-dependent-entropic" => ProblemConfig {
                tree: binomial,
                forward: ForwardConfig::SelfFinancing,
                backward: BackwardConfig::Entropic {
                    gamma_at_zero: 2.0,
                    gamma_at_infinity: 0.5,
                },
                terminal: TerminalConfig::Identity,
                controls: ControlConfig::Induced { k: None, battery: None },
                solver: SolverSettings::default(),
                initial_state: 1.0,
                seed: 7,
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown preset {other:?}; known: {}",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(cfg)
    }
}

/// Endowment of one agent: explicit per-node values (by node id) or
/// `initial * exp(exposure . cumulative shock)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EndowmentConfig {
    Values { values: Vec<f64> },
    Exposure { initial: f64, exposure: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SharingConfig {
    pub tree: TreeConfig,
    pub kernel: KernelConfig,
    pub agents: Vec<EndowmentConfig>,
    /// Stage at which the allocation is chosen.
    #[serde(default)]
    pub stage: usize,
    /// Cap on the number of lattice evaluations in the cross-check.
    #[serde(default = "default_grid_budget")]
    pub grid_budget: u64,
    #[serde(default)]
    pub seed: u64,
}

fn default_grid_budget() -> u64 {
    crate::sharing::DEFAULT_GRID_BUDGET as u64
}

impl SharingConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        parse_json(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn build(&self) -> Result<SharingProblem> {
        let tree = self
            .tree
            .build()
            .map_err(|e| Error::Config(format!("tree: {e}")))?;
        if self.stage >= tree.horizon() {
            return Err(Error::Config(format!(
                "stage must be below the horizon {}, got {}",
                tree.horizon(),
                self.stage
            )));
        }
        let endowments = self
            .agents
            .iter()
            .enumerate()
            .map(|(a, e)| match e {
                EndowmentConfig::Values { values } => Ok(values.clone()),
                EndowmentConfig::Exposure { initial, exposure } => Ok((0..tree.len())
                    .map(|i| {
                        let s = tree.cumulative_shock(crate::tree::NodeId(i));
                        let tilt: f64 = exposure.iter().zip(&s).map(|(b, x)| b * x).sum();
                        initial * tilt.exp()
                    })
                    .collect::<Vec<f64>>())
                .and_then(|v| {
                    positive(&format!("agents[{a}].initial"), *initial)?;
                    Ok(v)
                }),
            })
            .collect::<Result<Vec<_>>>()?;
        SharingProblem::new(tree, endowments, self.kernel.build()?).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "risk-sharing" => Ok(SharingConfig {
                tree: TreeConfig::Binomial {
                    horizon: 2,
                    p: 0.6,
                    up: 1.0,
                    down: -1.0,
                },
                kernel: KernelConfig::Entropic { gamma: 1.0 },
                agents: vec![
                    EndowmentConfig::Exposure {
                        initial: 1.0,
                        exposure: vec![0.3],
                    },
                    EndowmentConfig::Exposure {
                        initial: 2.0,
                        exposure: vec![-0.2],
                    },
                ],
                stage: 0,
                grid_budget: default_grid_budget(),
                seed: 7,
            }),
            other => Err(Error::Config(format!(
                "unknown sharing preset {other:?}; known: {}",
                SHARING_PRESETS.join(", ")
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_roundtrip_through_json() {
        for name in PRESETS {
            let cfg = ProblemConfig::preset(name).unwrap();
            let back = ProblemConfig::from_json(&cfg.to_json()).unwrap();
            assert_eq!(back, cfg);
            back.build().unwrap();
        }
        let s = SharingConfig::preset("risk-sharing").unwrap();
        assert_eq!(SharingConfig::from_json(&s.to_json()).unwrap(), s);
        assert_eq!(s.build().unwrap().agents(), 2);
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let text = r#"{
            "tree": {"kind": "binomial", "horizon": 1, "p": 0.5, "up": 1, "down": -1},
            "forward": {"kind": "self_financing"},
            "backward": {"kind": "entropic", "gamma_at_zero": 1, "gamma_at_infinity": 1},
            "controls": {"kind": "box", "lower": [-1], "upper": [{"constant": 1, "state_slope": 0.5}]},
            "initial_state": 0.5
        }"#;
        let cfg = ProblemConfig::from_json(text).unwrap();
        assert_eq!(cfg.solver.state_points, 41);
        assert_eq!(cfg.terminal, TerminalConfig::Identity);
        let p = cfg.build().unwrap();
        assert!(matches!(p.controls, ControlSetSpec::Box { open: false, .. }));
    }

    #[test]
    fn errors_name_the_location() {
        let err = ProblemConfig::from_json("{\n \"tree\": {\"kind\": \"binomial\", \"horizon\": 1, \"p\": 0.5, \"up\": 1, \"down\": -1, \"typo\": 3}\n}")
            .unwrap_err()
            .to_string();
        // tagged objects are buffered, so the position is the end of the object
        assert!(err.contains("`typo`") && err.contains("line 3"), "{err}");
        let err = ProblemConfig::from_json("{\"tree\": ").unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
    }

    #[test]
    fn rejects_out_of_range_numbers() {
        let mut cfg = ProblemConfig::preset("risk-constrained-consumption").unwrap();
        cfg.solver.control_resolution = 0.0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = ProblemConfig::preset("wealth-dependent-entropic").unwrap();
        cfg.backward = BackwardConfig::Entropic {
            gamma_at_zero: -1.0,
            gamma_at_infinity: 1.0,
        };
        assert!(matches!(cfg.build(), Err(Error::Config(_))));
    }

    #[test]
    fn zero_endowment_is_a_config_error() {
        let mut s = SharingConfig::preset("risk-sharing").unwrap();
        s.agents[1] = EndowmentConfig::Values { values: vec![0.0; 7] };
        assert!(matches!(s.build(), Err(Error::Config(_))));
    }

    #[test]
    fn explicit_grid_skips_leaves() {
        let mut cfg = ProblemConfig::preset("risk-constrained-consumption").unwrap();
        cfg.controls = ControlConfig::ExplicitGrid {
            controls: vec![vec![0.0, 0.0], vec![0.5, 0.1]],
        };
        let p = cfg.build().unwrap();
        let ControlSetSpec::ExplicitGrid { grids } = &p.controls else { panic!() };
        assert_eq!(grids.iter().filter(|g| g.is_empty()).count(), 4);
    }
}
