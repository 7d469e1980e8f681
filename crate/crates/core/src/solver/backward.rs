use rayon::prelude::*;

use super::inner::{self, InnerResult, InnerSettings};
use super::value::{Policy, ValueFunction};
use super::{Problem, Solution, SolverConfig, StateBounds};
use crate::control::ControlSetSpec;
use crate::error::{Error, Result};
use crate::generators::child_probabilities;
use crate::tree::NodeId;

const SAMPLED_STATES: usize = 9;
const PADDING: f64 = 0.1;

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 || hi <= lo {
        return vec![lo];
    }
    let step = (hi - lo) / (n - 1) as f64;
    let mut g: Vec<f64> = (0..n).map(|k| lo + step * k as f64).collect();
    g[n - 1] = hi;
    g
}

/// Makes `x` a knot: replaces the nearest interior knot or inserts it.
fn pin(grid: &mut Vec<f64>, x: f64) {
    let n = grid.len();
    if x < grid[0] || x > grid[n - 1] {
        return;
    }
    let i = (0..n)
        .min_by(|&a, &b| (grid[a] - x).abs().total_cmp(&(grid[b] - x).abs()))
        .unwrap_or(0);
    if grid[i] == x {
        return;
    }
    if i > 0 && i + 1 < n {
        grid[i] = x;
    } else {
        grid.push(x);
        grid.sort_by(f64::total_cmp);
    }
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    let w = hi - lo;
    if w > 0.0 {
        (lo - PADDING * w, hi + PADDING * w)
    } else {
        let p = PADDING * lo.abs().max(1.0);
        (lo - p, hi + p)
    }
}

/// Points where the value function is known to have a kink or a jump to
/// `-inf`.
fn domain_knots(controls: &ControlSetSpec) -> Vec<f64> {
    match controls {
        ControlSetSpec::RiskConstrained { consumption: true, .. } => vec![0.0],
        _ => Vec::new(),
    }
}

/// State grids per stage and atom position.
pub fn build_grids(problem: &Problem, x0: f64, config: &SolverConfig) -> Result<Vec<Vec<Vec<f64>>>> {
    if !x0.is_finite() {
        return Err(Error::InvalidInput(format!("initial state {x0} is not finite")));
    }
    if config.state_points < 2 && !matches!(config.bounds, StateBounds::Reachable { .. }) {
        return Err(Error::Config("at least 2 state points are required".into()));
    }
    match &config.bounds {
        StateBounds::Reachable { max_states } => reachable_grids(problem, x0, config, *max_states),
        StateBounds::Fixed { lo, hi } => {
            if !(lo < hi) {
                return Err(Error::Config(format!("empty state interval [{lo}, {hi}]")));
            }
            let tree = &problem.tree;
            let mut base = linspace(*lo, *hi, config.state_points);
            for k in domain_knots(&problem.controls) {
                pin(&mut base, k);
            }
            let mut grids = Vec::with_capacity(tree.horizon() + 1);
            for t in 0..=tree.horizon() {
                let mut g = base.clone();
                if t == 0 {
                    if x0 < *lo || x0 > *hi {
                        return Err(Error::OutsideGrid {
                            node: tree.root(),
                            state: x0,
                            lo: *lo,
                            hi: *hi,
                        });
                    }
                    pin(&mut g, x0);
                }
                grids.push(vec![g; tree.atoms(t)?.len()]);
            }
            Ok(grids)
        }
        StateBounds::Auto => auto_grids(problem, x0, config),
    }
}

fn auto_grids(problem: &Problem, x0: f64, config: &SolverConfig) -> Result<Vec<Vec<Vec<f64>>>> {
    let tree = &problem.tree;
    let n = config.state_points;
    let knots = domain_knots(&problem.controls);
    let finish = |lo: f64, hi: f64| {
        let mut g = linspace(lo, hi, n);
        for &k in &knots {
            if k > lo && k < hi {
                pin(&mut g, k);
            }
        }
        g
    };
    let r = PADDING * x0.abs().max(1.0);
    let mut root = finish(x0 - r, x0 + r);
    pin(&mut root, x0);
    let mut grids = vec![vec![root]];
    for t in 1..=tree.horizon() {
        let atoms = tree.atoms(t)?;
        let mut bounds = vec![(f64::INFINITY, f64::NEG_INFINITY); atoms.len()];
        for (ppos, &parent) in tree.atoms(t - 1)?.iter().enumerate() {
            let g = &grids[t - 1][ppos];
            let (a, b) = (g[0], g[g.len() - 1]);
            let mut any = false;
            for k in 0..SAMPLED_STATES {
                let s = a + (b - a) * k as f64 / (SAMPLED_STATES - 1) as f64;
                let extremes = match problem.controls.scan_extremes(tree, parent, &[s]) {
                    Ok(e) => e,
                    Err(Error::EmptyControlSet { .. }) => continue,
                    Err(e) => return Err(e),
                };
                for z in extremes {
                    for &c in tree.children(parent) {
                        let next = problem.forward.advance_child(tree, parent, c, &[s], &z)?;
                        let v = *next.first().ok_or(Error::DimensionMismatch {
                            node: c,
                            expected: 1,
                            found: 0,
                        })?;
                        if !v.is_finite() {
                            return Err(Error::NonFinite { node: c });
                        }
                        let slot = &mut bounds[tree.position(c)];
                        slot.0 = slot.0.min(v);
                        slot.1 = slot.1.max(v);
                        any = true;
                    }
                }
            }
            if !any {
                return Err(Error::Infeasible {
                    node: parent,
                    reason: format!("control set is empty on the whole state range [{a}, {b}]"),
                });
            }
        }
        grids.push(
            bounds
                .into_iter()
                .map(|(lo, hi)| {
                    let (lo, hi) = padded(lo, hi);
                    finish(lo, hi)
                })
                .collect(),
        );
    }
    Ok(grids)
}

fn reachable_grids(
    problem: &Problem,
    x0: f64,
    config: &SolverConfig,
    max_states: usize,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let tree = &problem.tree;
    let mut grids = vec![vec![vec![x0]]];
    for t in 1..=tree.horizon() {
        let atoms = tree.atoms(t)?;
        let mut sets: Vec<Vec<f64>> = vec![Vec::new(); atoms.len()];
        for (ppos, &parent) in tree.atoms(t - 1)?.iter().enumerate() {
            for &x in &grids[t - 1][ppos] {
                let controls = match problem.controls.discretize(tree, parent, &[x], config.control_resolution) {
                    Ok(c) => c,
                    Err(Error::EmptyControlSet { .. }) => continue,
                    Err(e) => return Err(e),
                };
                let mut next = Vec::new();
                for z in &controls {
                    problem.forward.advance_scalar(tree, parent, x, z, &mut next)?;
                    for (&c, &v) in tree.children(parent).iter().zip(&next) {
                        if !v.is_finite() {
                            return Err(Error::NonFinite { node: c });
                        }
                        sets[tree.position(c)].push(v);
                    }
                }
            }
        }
        for (pos, s) in sets.iter_mut().enumerate() {
            s.sort_by(f64::total_cmp);
            s.dedup();
            if s.is_empty() {
                return Err(Error::Infeasible {
                    node: atoms[pos],
                    reason: "no reachable state".into(),
                });
            }
            if s.len() > max_states {
                return Err(Error::BudgetExceeded {
                    count: s.len() as u128,
                    budget: max_states as u128,
                });
            }
        }
        grids.push(sets);
    }
    Ok(grids)
}

/// The one-period problem at `(node, x)` against the continuation `next`.
pub(crate) fn one_period(
    problem: &Problem,
    next: &ValueFunction,
    node: NodeId,
    x: f64,
    settings: &InnerSettings,
) -> Result<InnerResult> {
    let tree = &problem.tree;
    let probs = child_probabilities(tree, node);
    let children = tree.children(node);
    inner::maximize(tree, node, &problem.controls, &[x], settings, |z| {
        continuation(problem, next, node, &probs, children, x, z)
    })
}

fn continuation(
    problem: &Problem,
    next: &ValueFunction,
    node: NodeId,
    probs: &[f64],
    children: &[NodeId],
    x: f64,
    z: &[f64],
) -> Result<f64> {
    let tree = &problem.tree;
    let mut states = Vec::with_capacity(children.len());
    problem.forward.advance_scalar(tree, node, x, z, &mut states)?;
    let ys: Vec<f64> = children
        .iter()
        .zip(&states)
        .map(|(&c, &s)| next.eval(tree, c, s))
        .collect();
    problem.backward.aggregate(node, probs, &[x], &ys, z)
}

pub(crate) fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Backward recursion `y_T = u_T`, `y_t(x) = max_z u_t(x, y_{t+1}(v_t(x, z)), z)`
/// on the grids from [`build_grids`].
pub fn solve_backward(problem: &Problem, x0: f64, config: &SolverConfig) -> Result<Solution> {
    let tree = &problem.tree;
    if !(config.control_resolution > 0.0) {
        return Err(Error::Config(format!(
            "control resolution must be positive, got {}",
            config.control_resolution
        )));
    }
    let anchor = match problem.controls.anchor(tree, tree.root(), &[x0]) {
        Err(Error::EmptyControlSet { .. }) => None,
        r => r?,
    };
    if anchor.is_none() {
        return Err(Error::Infeasible {
            node: tree.root(),
            reason: format!("control set is empty at the initial state {x0}"),
        });
    }
    let grids = build_grids(problem, x0, config)?;
    let horizon = tree.horizon();
    let settings = config.inner_settings();
    let workers = pool(config.workers)?;
    let mut warnings = Vec::new();

    let leaves = tree.atoms(horizon)?;
    let terminal: Vec<Vec<f64>> = leaves
        .iter()
        .enumerate()
        .map(|(pos, &leaf)| {
            grids[horizon][pos]
                .iter()
                .map(|&x| problem.terminal.evaluate(tree, leaf, &[x]))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let mut values = vec![ValueFunction {
        stage: horizon,
        grids: grids[horizon].clone(),
        values: terminal,
    }];
    let mut policies = Vec::new();

    for t in (0..horizon).rev() {
        let atoms = tree.atoms(t)?;
        let next = values.last().expect("terminal stage present");
        let tasks: Vec<(usize, usize)> = (0..atoms.len())
            .flat_map(|pos| (0..grids[t][pos].len()).map(move |i| (pos, i)))
            .collect();
        let results: Vec<Result<InnerResult>> = workers.install(|| {
            tasks
                .par_iter()
                .map(|&(pos, i)| one_period(problem, next, atoms[pos], grids[t][pos][i], &settings))
                .collect()
        });
        let mut stage_values: Vec<Vec<f64>> = grids[t].iter().map(|g| Vec::with_capacity(g.len())).collect();
        let mut stage_controls: Vec<Vec<Vec<f64>>> = grids[t].iter().map(|g| Vec::with_capacity(g.len())).collect();
        for (&(pos, _), r) in tasks.iter().zip(results) {
            let r = r?;
            stage_values[pos].push(r.value);
            stage_controls[pos].push(r.control.unwrap_or_default());
        }
        for (pos, &node) in atoms.iter().enumerate() {
            let g = &grids[t][pos];
            let empty: Vec<f64> = g
                .iter()
                .zip(&stage_controls[pos])
                .filter(|(_, z)| z.is_empty())
                .map(|(&x, _)| x)
                .collect();
            if empty.len() == g.len() {
                return Err(Error::Infeasible {
                    node,
                    reason: format!("control set is empty at every state in [{}, {}]", g[0], g[g.len() - 1]),
                });
            }
            if !empty.is_empty() {
                warnings.push(format!(
                    "stage {t} node {node}: empty control set at {} of {} states in [{}, {}]; value set to -inf",
                    empty.len(),
                    g.len(),
                    empty[0],
                    empty[empty.len() - 1]
                ));
            }
            let minus_inf = stage_values[pos]
                .iter()
                .zip(&stage_controls[pos])
                .filter(|(v, z)| **v == f64::NEG_INFINITY && !z.is_empty())
                .count();
            if minus_inf > 0 {
                warnings.push(format!(
                    "stage {t} node {node}: every control yields -inf at {minus_inf} states"
                ));
            }
            // optimal moves that leave the child grids read clamped values
            let mut escapes = 0;
            let mut next_states = Vec::new();
            for (&x, z) in g.iter().zip(&stage_controls[pos]) {
                if z.is_empty() {
                    continue;
                }
                problem.forward.advance_scalar(tree, node, x, z, &mut next_states)?;
                if tree
                    .children(node)
                    .iter()
                    .zip(&next_states)
                    .any(|(&c, &s)| next.check_inside(tree, c, s).is_err())
                {
                    escapes += 1;
                }
            }
            if escapes > 0 {
                warnings.push(format!(
                    "stage {t} node {node}: the optimal control leaves a child grid at {escapes} of {} states; \
                     values there use clamped extrapolation",
                    g.len()
                ));
            }
        }
        values.push(ValueFunction {
            stage: t,
            grids: grids[t].clone(),
            values: stage_values,
        });
        policies.push(Policy {
            stage: t,
            controls: stage_controls,
        });
    }
    values.reverse();
    policies.reverse();
    Ok(Solution {
        x0,
        values,
        policies,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::ControlSetSpec;
    use crate::generators::{BackwardGenerator, ForwardGenerator, TerminalGenerator};
    use crate::tree::ScenarioTree;

    fn entropic_problem(p: f64, horizon: usize, bound: f64) -> Problem {
        Problem {
            tree: ScenarioTree::binomial(horizon, p, 1.0, -1.0).unwrap(),
            forward: ForwardGenerator::SelfFinancing,
            backward: BackwardGenerator::entropic(1.0),
            terminal: TerminalGenerator::Identity,
            controls: ControlSetSpec::closed_box(&[-bound], &[bound]),
        }
    }

    #[test]
    fn pin_replaces_interior_knot() {
        let mut g = linspace(0.0, 1.0, 5);
        pin(&mut g, 0.3);
        assert_eq!(g, vec![0.0, 0.3, 0.5, 0.75, 1.0]);
        pin(&mut g, 0.01);
        assert_eq!(g, vec![0.0, 0.01, 0.3, 0.5, 0.75, 1.0]);
        let mut h = vec![0.0, 1.0];
        pin(&mut h, 0.4);
        assert_eq!(h, vec![0.0, 0.4, 1.0]);
    }

    #[test]
    fn no_decision_problem_is_identity() {
        let mut problem = entropic_problem(0.6, 1, 0.0);
        problem.controls = ControlSetSpec::closed_box(&[0.0], &[0.0]);
        let sol = solve_backward(&problem, 1.5, &SolverConfig::default()).unwrap();
        assert_eq!(sol.root_value(), 1.5);
        assert_eq!(sol.policies[0].controls[0][0], vec![0.0]);
    }

    #[test]
    fn one_period_entropic_matches_stationarity() {
        let problem = entropic_problem(0.6, 1, 10.0);
        let sol = solve_backward(&problem, 0.0, &SolverConfig::default()).unwrap();
        let gain = -(2.0 * 0.24f64.sqrt()).ln();
        assert!((sol.root_value() - gain).abs() < 1e-9, "{}", sol.root_value());
        let root_pos = sol.values[0].grids[0].iter().position(|&x| x == 0.0).unwrap();
        let theta = sol.policies[0].controls[0][root_pos][0];
        assert!((theta - 0.5 * 1.5f64.ln()).abs() < 1e-6, "{theta}");
    }

    #[test]
    fn symmetric_tree_gives_identity_value() {
        let problem = entropic_problem(0.5, 2, 5.0);
        let sol = solve_backward(&problem, 1.0, &SolverConfig::default()).unwrap();
        for vf in &sol.values {
            for (g, v) in vf.grids.iter().zip(&vf.values) {
                for (x, y) in g.iter().zip(v) {
                    assert!((x - y).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn reachable_grid_is_exact_state_set() {
        let mut problem = entropic_problem(0.6, 2, 1.0);
        problem.controls = ControlSetSpec::ExplicitGrid {
            grids: vec![vec![vec![0.0], vec![1.0]]; problem.tree.len()],
        };
        let config = SolverConfig {
            bounds: StateBounds::Reachable { max_states: 100 },
            ..SolverConfig::default()
        };
        let grids = build_grids(&problem, 0.0, &config).unwrap();
        assert_eq!(grids[1], vec![vec![0.0, 1.0], vec![-1.0, 0.0]]);
        assert_eq!(grids[2][0], vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn infeasible_root_is_an_error() {
        let mut problem = entropic_problem(0.6, 1, 1.0);
        problem.controls = ControlSetSpec::ExplicitGrid {
            grids: vec![vec![]; problem.tree.len()],
        };
        let r = solve_backward(&problem, 0.0, &SolverConfig::default());
        assert!(matches!(r, Err(Error::Infeasible { .. })), "{r:?}");
    }
}
