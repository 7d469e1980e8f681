//! Per-node piecewise-linear value functions and stored policies.

use crate::error::{Error, Result};
use crate::tree::{NodeId, ScenarioTree};

/// `y_t` on each stage-`t` atom: a strictly increasing state grid with
/// extended-real values. Interpolation is linear inside the grid and constant
/// beyond its edges; a `-inf` neighbour makes the open cell `-inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    pub stage: usize,
    pub grids: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
}

impl ValueFunction {
    pub fn grid(&self, tree: &ScenarioTree, node: NodeId) -> &[f64] {
        &self.grids[tree.position(node)]
    }

    pub fn node_values(&self, tree: &ScenarioTree, node: NodeId) -> &[f64] {
        &self.values[tree.position(node)]
    }

    /// Grid range `[lo, hi]` at atom position `pos`.
    pub fn range(&self, pos: usize) -> (f64, f64) {
        let g = &self.grids[pos];
        (g[0], g[g.len() - 1])
    }

    pub fn eval_at(&self, pos: usize, x: f64) -> f64 {
        interpolate(&self.grids[pos], &self.values[pos], x)
    }

    pub fn eval(&self, tree: &ScenarioTree, node: NodeId, x: f64) -> f64 {
        self.eval_at(tree.position(node), x)
    }

    /// Errors when `x` lies outside the node's grid.
    pub fn check_inside(&self, tree: &ScenarioTree, node: NodeId, x: f64) -> Result<()> {
        let (lo, hi) = self.range(tree.position(node));
        let tol = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
        if x < lo - tol || x > hi + tol || x.is_nan() {
            Err(Error::OutsideGrid { node, state: x, lo, hi })
        } else {
            Ok(())
        }
    }
}

/// Piecewise-linear interpolation with clamped extrapolation. Exact knots
/// return the stored value bit for bit.
pub fn interpolate(grid: &[f64], values: &[f64], x: f64) -> f64 {
    let n = grid.len();
    if x <= grid[0] {
        return values[0];
    }
    if x >= grid[n - 1] {
        return values[n - 1];
    }
    let i = grid.partition_point(|&g| g <= x);
    // grid[i - 1] <= x < grid[i]
    let (x0, x1) = (grid[i - 1], grid[i]);
    let (y0, y1) = (values[i - 1], values[i]);
    if x == x0 {
        return y0;
    }
    if y0 == f64::NEG_INFINITY || y1 == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s = (x - x0) / (x1 - x0);
    y0 + s * (y1 - y0)
}

/// Optimal controls per stage, atom and grid point. An empty vector marks a
/// grid point with an empty control set.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub stage: usize,
    pub controls: Vec<Vec<Vec<f64>>>,
}

impl Policy {
    pub fn at(&self, tree: &ScenarioTree, node: NodeId, index: usize) -> &[f64] {
        &self.controls[tree.position(node)][index]
    }
}
