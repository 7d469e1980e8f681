use super::backward::one_period;
use super::brute::composed_objective;
use super::{Problem, Solution, SolverConfig};
use crate::error::{Error, Result};
use crate::tree::NodeId;

/// Optimal states and controls by node id. Leaves carry no control.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<f64>,
    pub controls: Vec<Vec<f64>>,
    /// Composed objective along the trajectory.
    pub value: f64,
    /// `y_0(x0)` from the backward pass.
    pub predicted: f64,
}

/// Forward recursion: at every node the one-period problem is re-solved at
/// the realized state against the interpolated continuation value.
pub fn extract_policy(problem: &Problem, solution: &Solution, x0: f64, config: &SolverConfig) -> Result<Trajectory> {
    let tree = &problem.tree;
    solution.values[0].check_inside(tree, tree.root(), x0)?;
    let settings = config.inner_settings();
    let mut states = vec![f64::NAN; tree.len()];
    let mut controls = vec![Vec::new(); tree.len()];
    states[tree.root().0] = x0;
    let mut next_states = Vec::new();
    for id in 0..tree.len() {
        let node = NodeId(id);
        if tree.is_leaf(node) {
            continue;
        }
        let t = tree.stage(node);
        let x = states[id];
        let r = one_period(problem, &solution.values[t + 1], node, x, &settings)?;
        let z = r.control.ok_or_else(|| Error::Infeasible {
            node,
            reason: format!("control set is empty at state {x}"),
        })?;
        problem.forward.advance_scalar(tree, node, x, &z, &mut next_states)?;
        for (&c, &s) in tree.children(node).iter().zip(&next_states) {
            solution.values[t + 1].check_inside(tree, c, s)?;
            states[c.0] = s;
        }
        controls[id] = z;
    }
    let value = composed_objective(problem, &[x0], &controls)?;
    Ok(Trajectory {
        states,
        controls,
        value,
        predicted: solution.values[0].eval_at(0, x0),
    })
}

/// Rolls out the stored policy at the grid point nearest to each realized
/// state. A stored control that is infeasible at the realized state, or a
/// missing one, makes the value `-inf`.
pub fn lookup_policy_value(problem: &Problem, solution: &Solution, x0: f64) -> Result<f64> {
    let tree = &problem.tree;
    let mut states = vec![f64::NAN; tree.len()];
    let mut controls = vec![Vec::new(); tree.len()];
    states[tree.root().0] = x0;
    let mut next_states = Vec::new();
    for id in 0..tree.len() {
        let node = NodeId(id);
        if tree.is_leaf(node) {
            continue;
        }
        let t = tree.stage(node);
        let x = states[id];
        let grid = solution.values[t].grid(tree, node);
        let nearest = (0..grid.len())
            .min_by(|&a, &b| (grid[a] - x).abs().total_cmp(&(grid[b] - x).abs()))
            .unwrap_or(0);
        let z = solution.policies[t].at(tree, node, nearest).to_vec();
        if z.is_empty() || !problem.controls.contains(tree, node, &[x], &z)? {
            return Ok(f64::NEG_INFINITY);
        }
        problem.forward.advance_scalar(tree, node, x, &z, &mut next_states)?;
        for (&c, &s) in tree.children(node).iter().zip(&next_states) {
            states[c.0] = s;
        }
        controls[id] = z;
    }
    composed_objective(problem, &[x0], &controls)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::ControlSetSpec;
    use crate::generators::{BackwardGenerator, ForwardGenerator, TerminalGenerator};
    use crate::solver::solve_backward;
    use crate::tree::ScenarioTree;

    fn problem(p: f64) -> Problem {
        Problem {
            tree: ScenarioTree::binomial(2, p, 1.0, -1.0).unwrap(),
            forward: ForwardGenerator::SelfFinancing,
            backward: BackwardGenerator::entropic(1.0),
            terminal: TerminalGenerator::Identity,
            controls: ControlSetSpec::closed_box(&[-5.0], &[5.0]),
        }
    }

    #[test]
    fn symmetric_binomial_keeps_state_constant() {
        let pr = problem(0.5);
        let config = SolverConfig::default();
        let sol = solve_backward(&pr, 1.0, &config).unwrap();
        let tr = extract_policy(&pr, &sol, 1.0, &config).unwrap();
        for id in 0..pr.tree.len() {
            assert!((tr.states[id] - 1.0).abs() < 1e-9);
            if !pr.tree.is_leaf(NodeId(id)) {
                assert!(tr.controls[id][0].abs() < 1e-6);
            }
        }
        assert!((tr.value - tr.predicted).abs() < 1e-8);
    }

    #[test]
    fn reoptimization_is_not_worse_than_lookup() {
        let pr = problem(0.6);
        let config = SolverConfig::default();
        let sol = solve_backward(&pr, 0.0, &config).unwrap();
        let tr = extract_policy(&pr, &sol, 0.0, &config).unwrap();
        let lookup = lookup_policy_value(&pr, &sol, 0.0).unwrap();
        assert!(tr.value >= lookup - 1e-12);
        let gain = -(2.0 * 0.24f64.sqrt()).ln();
        assert!((tr.value - 2.0 * gain).abs() < 1e-6, "{}", tr.value);
    }

    #[test]
    fn initial_state_outside_grid() {
        let pr = problem(0.6);
        let config = SolverConfig::default();
        let sol = solve_backward(&pr, 0.0, &config).unwrap();
        assert!(matches!(
            extract_policy(&pr, &sol, 50.0, &config),
            Err(Error::OutsideGrid { .. })
        ));
    }
}
