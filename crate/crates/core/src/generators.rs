//! Forward generators `v_t(x, z)` (state dynamics) and backward generators
//! `u_t(x, y, z)` (one-step aggregators of the continuation value).
//!
//! States are slices because portfolio problems carry vector states; the
//! scalar wealth families read `x[0]`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::risk::log_mean_exp;
use crate::tree::{NodeId, ScenarioTree};

/// `(tree, parent, child, x, z) -> next state on child`.
pub type ForwardFn = Arc<dyn Fn(&ScenarioTree, NodeId, NodeId, &[f64], &[f64]) -> Vec<f64> + Send + Sync>;

/// `(probabilities, x, child values, z) -> value`.
pub type BackwardFn = Arc<dyn Fn(&[f64], &[f64], &[f64], &[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum ForwardGenerator {
    /// `x + theta . dS - c` with `z = (theta, c)`.
    WealthConsumption,
    /// `x + theta . dS` with `z = theta`.
    SelfFinancing,
    /// `x' = z`: the control becomes the next state (portfolio rebalancing).
    PortfolioIdentity,
    Custom {
        name: String,
        control_dimension: usize,
        map: ForwardFn,
    },
}

impl fmt::Debug for ForwardGenerator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ForwardGenerator::WealthConsumption => f.write_str("WealthConsumption"),
            ForwardGenerator::SelfFinancing => f.write_str("SelfFinancing"),
            ForwardGenerator::PortfolioIdentity => f.write_str("PortfolioIdentity"),
            ForwardGenerator::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

fn shock_of<'a>(tree: &'a ScenarioTree, child: NodeId) -> Result<&'a [f64]> {
    let s = tree.shock(child);
    if s.is_empty() {
        Err(Error::MissingShock { node: child })
    } else {
        Ok(s)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl ForwardGenerator {
    /// Control dimension at `node` for state `x`.
    pub fn control_dimension(&self, tree: &ScenarioTree, node: NodeId, x: &[f64]) -> Result<usize> {
        let shock_dim = || -> Result<usize> {
            let child = *tree
                .children(node)
                .first()
                .ok_or_else(|| Error::InvalidInput(format!("node {node} is terminal")))?;
            Ok(shock_of(tree, child)?.len())
        };
        match self {
            ForwardGenerator::WealthConsumption => Ok(shock_dim()? + 1),
            ForwardGenerator::SelfFinancing => shock_dim(),
            ForwardGenerator::PortfolioIdentity => Ok(x.len()),
            ForwardGenerator::Custom { control_dimension, .. } => Ok(*control_dimension),
        }
    }

    /// Next state on `child` (a child of `node`).
    pub fn advance_child(
        &self,
        tree: &ScenarioTree,
        node: NodeId,
        child: NodeId,
        x: &[f64],
        z: &[f64],
    ) -> Result<Vec<f64>> {
        match self {
            ForwardGenerator::WealthConsumption | ForwardGenerator::SelfFinancing => {
                Ok(vec![self.scalar_step(tree, node, child, x, z)?])
            }
            ForwardGenerator::PortfolioIdentity => Ok(z.to_vec()),
            ForwardGenerator::Custom { map, .. } => Ok(map(tree, node, child, x, z)),
        }
    }

    fn scalar_step(&self, tree: &ScenarioTree, node: NodeId, child: NodeId, x: &[f64], z: &[f64]) -> Result<f64> {
        let ds = shock_of(tree, child)?;
        let (theta, c) = match self {
            ForwardGenerator::WealthConsumption => (&z[..z.len().saturating_sub(1)], z.last().copied().unwrap_or(0.0)),
            _ => (z, 0.0),
        };
        if theta.len() != ds.len() {
            return Err(Error::DimensionMismatch {
                node,
                expected: ds.len(),
                found: theta.len(),
            });
        }
        if x.len() != 1 {
            return Err(Error::DimensionMismatch {
                node,
                expected: 1,
                found: x.len(),
            });
        }
        Ok(x[0] + dot(theta, ds) - c)
    }

    /// Next state on every child of `node`, in child order.
    pub fn advance(&self, tree: &ScenarioTree, node: NodeId, x: &[f64], z: &[f64]) -> Result<Vec<Vec<f64>>> {
        tree.children(node)
            .iter()
            .map(|&c| self.advance_child(tree, node, c, x, z))
            .collect()
    }

    /// Scalar-state fast path; `out` receives one state per child.
    pub fn advance_scalar(
        &self,
        tree: &ScenarioTree,
        node: NodeId,
        x: f64,
        z: &[f64],
        out: &mut Vec<f64>,
    ) -> Result<()> {
        out.clear();
        match self {
            ForwardGenerator::WealthConsumption | ForwardGenerator::SelfFinancing => {
                for &c in tree.children(node) {
                    out.push(self.scalar_step(tree, node, c, &[x], z)?);
                }
                Ok(())
            }
            _ => {
                for &c in tree.children(node) {
                    let next = self.advance_child(tree, node, c, &[x], z)?;
                    if next.len() != 1 {
                        return Err(Error::Unsupported(format!(
                            "{self:?} produces {}-dimensional states",
                            next.len()
                        )));
                    }
                    out.push(next[0]);
                }
                Ok(())
            }
        }
    }
}

/// Wealth-dependent risk aversion `g(x) = g_inf + (g_0 - g_inf) / (1 + max(x, 0))`.
///
/// Decreasing in `x` when `at_zero >= at_infinity`, with range between the two.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaSchedule {
    pub at_zero: f64,
    pub at_infinity: f64,
}

impl GammaSchedule {
    pub fn constant(gamma: f64) -> Self {
        Self {
            at_zero: gamma,
            at_infinity: gamma,
        }
    }

    pub fn at(&self, x: f64) -> f64 {
        self.at_infinity + (self.at_zero - self.at_infinity) / (1.0 + x.max(0.0))
    }

    pub fn validate(&self) -> Result<()> {
        for g in [self.at_zero, self.at_infinity] {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::NonPositiveGamma(g));
            }
        }
        Ok(())
    }
}

/// Certainty-equivalent kernels `g(y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Kernel {
    /// `-(1/gamma) log E[exp(-gamma y)]`.
    Entropic { gamma: f64 },
    /// `E[y]`.
    Expectation,
}

impl Kernel {
    pub fn apply(&self, probs: &[f64], y: &[f64]) -> f64 {
        match *self {
            Kernel::Entropic { gamma } => entropic_ce(probs, y, gamma),
            Kernel::Expectation => {
                let mass: f64 = probs.iter().sum();
                probs.iter().zip(y).map(|(p, v)| p * v).sum::<f64>() / mass
            }
        }
    }
}

/// `-(1/gamma) log E[exp(-gamma y)]`; a `-inf` child gives `-inf`.
pub fn entropic_ce(probs: &[f64], y: &[f64], gamma: f64) -> f64 {
    let mut buf = [0.0f64; 16];
    if y.len() <= buf.len() {
        for (b, v) in buf.iter_mut().zip(y) {
            *b = -gamma * v;
        }
        -log_mean_exp(probs, &buf[..y.len()]) / gamma
    } else {
        let scaled: Vec<f64> = y.iter().map(|v| -gamma * v).collect();
        -log_mean_exp(probs, &scaled) / gamma
    }
}

/// Running reward `r(x, z)` of the additive family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Reward {
    Zero,
    Linear { state: f64, control: Vec<f64> },
    /// `weight * ln(1 + c)` on the last control component.
    Consumption { weight: f64 },
}

impl Reward {
    pub fn evaluate(&self, x: &[f64], z: &[f64]) -> f64 {
        match self {
            Reward::Zero => 0.0,
            Reward::Linear { state, control } => {
                state * x.first().copied().unwrap_or(0.0) + dot(control, z)
            }
            Reward::Consumption { weight } => {
                let c = z.last().copied().unwrap_or(0.0);
                if c <= -1.0 {
                    f64::NEG_INFINITY
                } else {
                    weight * c.ln_1p()
                }
            }
        }
    }
}

#[derive(Clone)]
pub enum BackwardGenerator {
    /// `(1/gamma(x)) g(gamma(x) y)` with `g = -log E[exp(-.)]`.
    Entropic { gamma: GammaSchedule },
    /// `x g(y / x)` for `x > 0`.
    Scaling { kernel: Kernel },
    /// `g(y) + r(x, z)`.
    Additive { kernel: Kernel, reward: Reward },
    Custom { name: String, map: BackwardFn },
}

impl fmt::Debug for BackwardGenerator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackwardGenerator::Entropic { gamma } => f.debug_struct("Entropic").field("gamma", gamma).finish(),
            BackwardGenerator::Scaling { kernel } => f.debug_struct("Scaling").field("kernel", kernel).finish(),
            BackwardGenerator::Additive { kernel, reward } => f
                .debug_struct("Additive")
                .field("kernel", kernel)
                .field("reward", reward)
                .finish(),
            BackwardGenerator::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

impl BackwardGenerator {
    pub fn entropic(gamma: f64) -> Self {
        BackwardGenerator::Entropic {
            gamma: GammaSchedule::constant(gamma),
        }
    }

    /// `u_t(x, y, z)` at `node`; `probs` and `y` follow the child order.
    pub fn aggregate(&self, node: NodeId, probs: &[f64], x: &[f64], y: &[f64], z: &[f64]) -> Result<f64> {
        match self {
            BackwardGenerator::Entropic { gamma } => {
                let g = gamma.at(x.first().copied().unwrap_or(0.0));
                if !(g > 0.0) {
                    return Err(Error::NonPositiveGamma(g));
                }
                Ok(entropic_ce(probs, y, g))
            }
            BackwardGenerator::Scaling { kernel } => {
                let s = x.first().copied().unwrap_or(0.0);
                if !(s > 0.0) {
                    return Err(Error::NonPositiveScale { node, value: s });
                }
                let mut scaled = y.to_vec();
                for v in &mut scaled {
                    *v /= s;
                }
                Ok(s * kernel.apply(probs, &scaled))
            }
            BackwardGenerator::Additive { kernel, reward } => {
                let r = reward.evaluate(x, z);
                Ok(kernel.apply(probs, y) + r)
            }
            BackwardGenerator::Custom { map, .. } => Ok(map(probs, x, y, z)),
        }
    }

    /// Same as [`aggregate`](Self::aggregate) with probabilities read from the tree.
    pub fn aggregate_at(&self, tree: &ScenarioTree, node: NodeId, x: &[f64], y: &[f64], z: &[f64]) -> Result<f64> {
        let probs = child_probabilities(tree, node);
        if probs.len() != y.len() {
            return Err(Error::DimensionMismatch {
                node,
                expected: probs.len(),
                found: y.len(),
            });
        }
        self.aggregate(node, &probs, x, y, z)
    }
}

pub fn child_probabilities(tree: &ScenarioTree, node: NodeId) -> Vec<f64> {
    tree.children(node).iter().map(|&c| tree.edge_probability(c)).collect()
}

/// Terminal generator `u_T`.
#[derive(Debug, Clone, PartialEq)]
pub enum TerminalGenerator {
    Identity,
    /// Portfolio value `theta . S_T` with `S_T = S_0 + cumulative shocks`.
    Liquidation { initial_prices: Vec<f64> },
}

impl TerminalGenerator {
    pub fn evaluate(&self, tree: &ScenarioTree, leaf: NodeId, x: &[f64]) -> Result<f64> {
        match self {
            TerminalGenerator::Identity => {
                if x.len() != 1 {
                    return Err(Error::DimensionMismatch {
                        node: leaf,
                        expected: 1,
                        found: x.len(),
                    });
                }
                Ok(x[0])
            }
            TerminalGenerator::Liquidation { initial_prices } => {
                let prices = prices_at(tree, leaf, initial_prices)?;
                if prices.len() != x.len() {
                    return Err(Error::DimensionMismatch {
                        node: leaf,
                        expected: prices.len(),
                        found: x.len(),
                    });
                }
                Ok(dot(&prices, x))
            }
        }
    }
}

/// `S_0 + sum of shocks along the path to node`.
pub fn prices_at(tree: &ScenarioTree, node: NodeId, initial: &[f64]) -> Result<Vec<f64>> {
    let cum = tree.cumulative_shock(node);
    if node != tree.root() && cum.len() != initial.len() {
        return Err(Error::MissingShock { node });
    }
    Ok(initial
        .iter()
        .enumerate()
        .map(|(i, s)| s + cum.get(i).copied().unwrap_or(0.0))
        .collect())
}
