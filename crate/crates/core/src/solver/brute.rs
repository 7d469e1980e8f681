use super::Problem;
use crate::error::{Error, Result};
use crate::tree::NodeId;

#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceResult {
    pub value: f64,
    /// Best control per node id; empty for leaves and empty control sets.
    pub assignment: Vec<Vec<f64>>,
    pub evaluated: u128,
}

/// The composed objective `u_0(x_0, ., z_0) o ... o u_T(x_T)` for a control
/// assignment indexed by node id. Controls are not checked for feasibility.
pub fn composed_objective(problem: &Problem, x0: &[f64], assignment: &[Vec<f64>]) -> Result<f64> {
    let tree = &problem.tree;
    if assignment.len() != tree.len() {
        return Err(Error::InvalidInput(format!(
            "assignment covers {} nodes, tree has {}",
            assignment.len(),
            tree.len()
        )));
    }
    let mut states: Vec<Vec<f64>> = vec![Vec::new(); tree.len()];
    states[tree.root().0] = x0.to_vec();
    for id in 0..tree.len() {
        let node = NodeId(id);
        for &c in tree.children(node) {
            states[c.0] = problem.forward.advance_child(tree, node, c, &states[id], &assignment[id])?;
        }
    }
    evaluate_backward(problem, &states, assignment, None)
}

fn evaluate_backward(
    problem: &Problem,
    states: &[Vec<f64>],
    assignment: &[Vec<f64>],
    empty: Option<&[bool]>,
) -> Result<f64> {
    let tree = &problem.tree;
    let mut off = vec![false; tree.len()];
    if let Some(empty) = empty {
        for id in 0..tree.len() {
            off[id] = empty[id] || tree.parent(NodeId(id)).is_some_and(|p| off[p.0]);
        }
    }
    let mut values = vec![0.0; tree.len()];
    for id in (0..tree.len()).rev() {
        let node = NodeId(id);
        if off[id] {
            values[id] = f64::NEG_INFINITY;
            continue;
        }
        values[id] = if tree.is_leaf(node) {
            problem.terminal.evaluate(tree, node, &states[id])?
        } else {
            let ys: Vec<f64> = tree.children(node).iter().map(|c| values[c.0]).collect();
            problem.backward.aggregate_at(tree, node, &states[id], &ys, &assignment[id])?
        };
    }
    Ok(values[tree.root().0])
}

/// Number of joint control assignments on the discretized problem, capped
/// just above `cap`.
pub fn count_assignments(problem: &Problem, x0: &[f64], h: f64, cap: u128) -> Result<u128> {
    fn count(problem: &Problem, node: NodeId, x: &[f64], h: f64, cap: u128) -> Result<u128> {
        let tree = &problem.tree;
        if tree.is_leaf(node) {
            return Ok(1);
        }
        let controls = match problem.controls.discretize(tree, node, x, h) {
            Ok(c) => c,
            Err(Error::EmptyControlSet { .. }) => return Ok(1),
            Err(e) => return Err(e),
        };
        let mut total: u128 = 0;
        for z in &controls {
            let mut product: u128 = 1;
            for &c in tree.children(node) {
                let next = problem.forward.advance_child(tree, node, c, x, z)?;
                product = product.saturating_mul(count(problem, c, &next, h, cap)?);
                if product > cap {
                    return Ok(cap + 1);
                }
            }
            total = total.saturating_add(product);
            if total > cap {
                return Ok(cap + 1);
            }
        }
        Ok(total)
    }
    count(problem, problem.tree.root(), x0, h, cap)
}

struct Search<'a> {
    problem: &'a Problem,
    h: f64,
    budget: u128,
    order: Vec<NodeId>,
    states: Vec<Vec<f64>>,
    assignment: Vec<Vec<f64>>,
    empty: Vec<bool>,
    evaluated: u128,
    best: Option<(f64, Vec<Vec<f64>>)>,
}

impl Search<'_> {
    fn below_empty(&self, node: NodeId) -> bool {
        let tree = &self.problem.tree;
        let mut cur = tree.parent(node);
        while let Some(p) = cur {
            if self.empty[p.0] {
                return true;
            }
            cur = tree.parent(p);
        }
        false
    }

    fn run(&mut self, k: usize) -> Result<()> {
        let tree = &self.problem.tree;
        if k == self.order.len() {
            self.evaluated += 1;
            if self.evaluated > self.budget {
                return Err(Error::BudgetExceeded {
                    count: self.evaluated,
                    budget: self.budget,
                });
            }
            let v = evaluate_backward(self.problem, &self.states, &self.assignment, Some(&self.empty))?;
            if v.is_nan() {
                return Err(Error::Divergence {
                    node: tree.root(),
                    reason: "composed objective is undefined".into(),
                });
            }
            if self.best.as_ref().map_or(true, |(b, _)| v > *b) {
                self.best = Some((v, self.assignment.clone()));
            }
            return Ok(());
        }
        let node = self.order[k];
        if self.below_empty(node) {
            self.assignment[node.0].clear();
            return self.run(k + 1);
        }
        let controls = match self.problem.controls.discretize(tree, node, &self.states[node.0], self.h) {
            Ok(c) => c,
            Err(Error::EmptyControlSet { .. }) => Vec::new(),
            Err(e) => return Err(e),
        };
        if controls.is_empty() {
            self.empty[node.0] = true;
            self.assignment[node.0].clear();
            let r = self.run(k + 1);
            self.empty[node.0] = false;
            return r;
        }
        for z in controls {
            for &c in tree.children(node) {
                self.states[c.0] = self.problem.forward.advance_child(tree, node, c, &self.states[node.0], &z)?;
            }
            self.assignment[node.0] = z;
            self.run(k + 1)?;
        }
        Ok(())
    }
}

/// Exhaustive maximization of the composed objective over every admissible
/// assignment of discretized controls reachable from `x0`. Nodes whose
/// control set is empty contribute `-inf`. Ties keep the first assignment in
/// enumeration order.
pub fn brute_force_value(problem: &Problem, x0: &[f64], h: f64, budget: u128) -> Result<BruteForceResult> {
    let tree = &problem.tree;
    let order: Vec<NodeId> = (0..tree.len()).map(NodeId).filter(|&n| !tree.is_leaf(n)).collect();
    let mut states = vec![Vec::new(); tree.len()];
    states[tree.root().0] = x0.to_vec();
    let mut search = Search {
        problem,
        h,
        budget,
        order,
        states,
        assignment: vec![Vec::new(); tree.len()],
        empty: vec![false; tree.len()],
        evaluated: 0,
        best: None,
    };
    search.run(0)?;
    let (value, assignment) = search.best.expect("at least one assignment is evaluated");
    Ok(BruteForceResult {
        value,
        assignment,
        evaluated: search.evaluated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::ControlSetSpec;
    use crate::generators::{BackwardGenerator, ForwardGenerator, TerminalGenerator};
    use crate::tree::ScenarioTree;

    fn problem(p: f64, horizon: usize, grid: &[f64]) -> Problem {
        let tree = ScenarioTree::binomial(horizon, p, 1.0, -1.0).unwrap();
        let grids = (0..tree.len())
            .map(|id| {
                if tree.is_leaf(NodeId(id)) {
                    Vec::new()
                } else {
                    grid.iter().map(|&g| vec![g]).collect()
                }
            })
            .collect();
        Problem {
            tree,
            forward: ForwardGenerator::SelfFinancing,
            backward: BackwardGenerator::entropic(1.0),
            terminal: TerminalGenerator::Identity,
            controls: ControlSetSpec::ExplicitGrid { grids },
        }
    }

    #[test]
    fn single_control_gives_unique_trajectory() {
        let pr = problem(0.6, 2, &[0.0]);
        let r = brute_force_value(&pr, &[2.0], 0.1, 100).unwrap();
        assert_eq!(r.value, 2.0);
        assert_eq!(r.evaluated, 1);
    }

    #[test]
    fn symmetric_binomial_prefers_no_position() {
        let pr = problem(0.5, 1, &[-1.0, 0.0, 1.0]);
        let r = brute_force_value(&pr, &[0.0], 0.1, 100).unwrap();
        assert_eq!(r.assignment[0], vec![0.0]);
        assert_eq!(r.value, 0.0);
        assert_eq!(r.evaluated, 3);
    }

    #[test]
    fn budget_guard() {
        let pr = problem(0.6, 2, &[-1.0, 0.0, 1.0]);
        assert_eq!(count_assignments(&pr, &[0.0], 0.1, 1000).unwrap(), 27);
        let r = brute_force_value(&pr, &[0.0], 0.1, 10);
        assert!(matches!(r, Err(Error::BudgetExceeded { .. })));
    }

    #[test]
    fn empty_sets_contribute_minus_infinity() {
        let mut pr = problem(0.6, 2, &[0.0, 1.0]);
        if let ControlSetSpec::ExplicitGrid { grids } = &mut pr.controls {
            grids[2].clear();
        }
        let r = brute_force_value(&pr, &[0.0], 0.1, 100).unwrap();
        assert_eq!(r.value, f64::NEG_INFINITY);
        assert_eq!(r.evaluated, 4);
    }
}
