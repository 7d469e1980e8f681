//! Wealth-dependent dynamic risk sharing with scaling utilities
//! `u_t(x, y) = x g_t(y / x)`.
//!
//! The optimal allocation from stage `t` on is proportional,
//! `x^a_s = (H^a_t / H_t) H_s`, and the shared optimum follows
//! `ybar_T = H_T`, `ybar_s = H_s g(ybar_{s+1} / H_s)`.

use rand::Rng;
use rayon::prelude::*;

use crate::conditional::{ConditionalReal, ConditionalValue, ConditionalVector};
use crate::error::{Error, Result};
use crate::generators::{child_probabilities, Kernel};
use crate::report::{CheckEntry, CheckReport};
use crate::tree::{NodeId, ScenarioTree};

/// Allocations on the cross-check grid stay at least this far inside the
/// simplex.
pub const MIN_SHARE: f64 = 1e-3;
pub const DEFAULT_GRID_BUDGET: u128 = 100_000;

#[derive(Debug, Clone)]
pub struct SharingProblem {
    tree: ScenarioTree,
    /// `endowments[a][node id]`.
    endowments: Vec<Vec<f64>>,
    kernel: Kernel,
}

impl SharingProblem {
    pub fn new(tree: ScenarioTree, endowments: Vec<Vec<f64>>, kernel: Kernel) -> Result<Self> {
        if endowments.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "risk sharing needs at least 2 agents, got {}",
                endowments.len()
            )));
        }
        for (a, h) in endowments.iter().enumerate() {
            if h.len() != tree.len() {
                return Err(Error::InvalidInput(format!(
                    "agent {a} has {} endowment values, tree has {} nodes",
                    h.len(),
                    tree.len()
                )));
            }
            if let Some(id) = h.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::NonPositiveScale {
                    node: NodeId(id),
                    value: h[id],
                });
            }
        }
        if let Kernel::Entropic { gamma } = kernel {
            if !(gamma > 0.0 && gamma.is_finite()) {
                return Err(Error::NonPositiveGamma(gamma));
            }
        }
        Ok(Self {
            tree,
            endowments,
            kernel,
        })
    }

    /// Endowments drawn uniformly from `[lo, hi]` per agent and node.
    pub fn random<R: Rng>(rng: &mut R, tree: ScenarioTree, agents: usize, lo: f64, hi: f64, kernel: Kernel) -> Result<Self> {
        let n = tree.len();
        let endowments = (0..agents)
            .map(|_| (0..n).map(|_| rng.gen_range(lo..=hi)).collect())
            .collect();
        Self::new(tree, endowments, kernel)
    }

    pub fn tree(&self) -> &ScenarioTree {
        &self.tree
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn agents(&self) -> usize {
        self.endowments.len()
    }

    pub fn endowment(&self, agent: usize, node: NodeId) -> f64 {
        self.endowments[agent][node.0]
    }

    /// `H` at `node`.
    pub fn aggregate(&self, node: NodeId) -> f64 {
        self.endowments.iter().map(|h| h[node.0]).sum()
    }

    fn g(&self, node: NodeId, w: &[f64]) -> f64 {
        self.kernel.apply(&child_probabilities(&self.tree, node), w)
    }

    /// `ybar` on every node, indexed by node id.
    pub fn ybar_all(&self) -> Vec<f64> {
        let tree = &self.tree;
        let mut y = vec![0.0; tree.len()];
        for id in (0..tree.len()).rev() {
            let node = NodeId(id);
            let h = self.aggregate(node);
            y[id] = if tree.is_leaf(node) {
                h
            } else {
                let w: Vec<f64> = tree.children(node).iter().map(|c| y[c.0] / h).collect();
                h * self.g(node, &w)
            };
        }
        y
    }

    /// The shared optimum at stage `t`.
    pub fn ybar(&self, t: usize) -> Result<ConditionalReal> {
        let all = self.ybar_all();
        ConditionalValue::from_fn(&self.tree, t, |n| all[n.0])
    }

    /// Proportional allocation from stage `t`: entry `s - t` holds, per
    /// stage-`s` node, one allocation per agent. The last agent receives the
    /// remainder, and the parts add up to `H_s` exactly (see [`exact_split`]).
    pub fn closed_form_allocation(&self, t: usize) -> Result<Vec<ConditionalVector>> {
        let tree = &self.tree;
        let horizon = tree.horizon();
        if t > horizon {
            return Err(Error::StageOutOfRange { stage: t, horizon });
        }
        (t..=horizon)
            .map(|s| {
                ConditionalValue::from_fn(tree, s, |node| {
                    let anchor = tree.ancestor_at(node, t);
                    let h = self.aggregate(node);
                    if s == t {
                        return (0..self.agents()).map(|a| self.endowment(a, node)).collect();
                    }
                    let ht = self.aggregate(anchor);
                    exact_split(h, (0..self.agents() - 1).map(|a| self.endowment(a, anchor) / ht * h))
                })
            })
            .collect()
    }

    /// Per-agent composed objectives at the stage of `start`, for allocations
    /// `alloc[a][node id]` on the strict subtree of `start`; the agent's own
    /// endowment is used at `start`.
    pub fn agent_objectives(&self, start: NodeId, alloc: &[Vec<f64>]) -> Vec<f64> {
        let tree = &self.tree;
        let nodes = subtree(tree, start);
        let mut out = Vec::with_capacity(self.agents());
        let mut y = vec![0.0; tree.len()];
        for (a, xa) in alloc.iter().enumerate() {
            for &node in nodes.iter().rev() {
                let x = if node == start { self.endowment(a, node) } else { xa[node.0] };
                y[node.0] = if tree.is_leaf(node) {
                    x
                } else {
                    let w: Vec<f64> = tree.children(node).iter().map(|c| y[c.0] / x).collect();
                    x * self.g(node, &w)
                };
            }
            out.push(y[start.0]);
        }
        out
    }

    /// Sum of the agents' composed objectives at `start`.
    pub fn total_objective(&self, start: NodeId, alloc: &[Vec<f64>]) -> f64 {
        self.agent_objectives(start, alloc).iter().sum()
    }

    /// The closed-form allocation from stage `t` as `alloc[a][node id]`.
    pub fn closed_form_table(&self, t: usize) -> Result<Vec<Vec<f64>>> {
        let tree = &self.tree;
        let mut table = vec![vec![f64::NAN; tree.len()]; self.agents()];
        for stage in self.closed_form_allocation(t)? {
            for (&node, x) in tree.atoms(stage.stage())?.iter().zip(stage.values()) {
                for (a, v) in x.iter().enumerate() {
                    table[a][node.0] = *v;
                }
            }
        }
        Ok(table)
    }
}

/// Splits `total` into the given targets plus a remainder so that the parts
/// add up to `total` exactly in real arithmetic. With `0 <= target <= rem`,
/// the cut `x = rem - r` for `r = fl(rem - target)` is exact (the fast
/// two-sum error step), so `x + r == rem` holds in floats too.
fn exact_split(total: f64, targets: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut rem = total;
    let mut out = Vec::new();
    for target in targets {
        let r = rem - target;
        out.push(rem - r);
        rem = r;
    }
    out.push(rem);
    out
}

/// `start` and its descendants in breadth-first order.
fn subtree(tree: &ScenarioTree, start: NodeId) -> Vec<NodeId> {
    let mut out = vec![start];
    let mut i = 0;
    while i < out.len() {
        out.extend_from_slice(tree.children(out[i]));
        i += 1;
    }
    out
}

/// Interior simplex lattice: shares `MIN_SHARE + (1 - A MIN_SHARE) k / m`
/// for nonnegative integers `k` summing to `m`, in lexicographic order of `k`.
pub fn simplex_lattice(agents: usize, m: usize) -> Vec<Vec<f64>> {
    fn rec(left: usize, remaining: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left == 1 {
            prefix.push(remaining);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for k in 0..=remaining {
            prefix.push(k);
            rec(left - 1, remaining - k, prefix, out);
            prefix.pop();
        }
    }
    let mut ks = Vec::new();
    rec(agents, m, &mut Vec::new(), &mut ks);
    let scale = 1.0 - agents as f64 * MIN_SHARE;
    ks.into_iter()
        .map(|k| k.iter().map(|&ki| MIN_SHARE + scale * ki as f64 / m as f64).collect())
        .collect()
}

fn lattice_size(agents: usize, m: usize) -> u128 {
    // C(m + A - 1, A - 1)
    let mut c: u128 = 1;
    for i in 1..agents as u128 {
        c = c * (m as u128 + i) / i;
    }
    c
}

/// Largest lattice resolution whose joint grid over `nodes` nodes stays
/// within `budget` points, or `None` if even `m = 1` is too large.
pub fn lattice_resolution(agents: usize, nodes: usize, budget: u128) -> Option<usize> {
    let total = |m: usize| lattice_size(agents, m).checked_pow(nodes as u32);
    let fits = |m: usize| total(m).is_some_and(|t| t <= budget);
    if !fits(1) {
        return None;
    }
    let mut m = 1;
    while m < 1 << 20 && fits(m + 1) {
        m += 1;
    }
    Some(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeCrossCheck {
    pub node: NodeId,
    pub ybar: f64,
    pub closed_form_value: f64,
    pub grid_points: u128,
    pub grid_max: f64,
    /// Shares per descendant (breadth-first) at the grid maximum.
    pub grid_argmax: Vec<Vec<f64>>,
}

impl NodeCrossCheck {
    pub fn gap(&self) -> f64 {
        self.grid_max - self.ybar
    }

    pub fn attainment_error(&self) -> f64 {
        (self.closed_form_value - self.ybar).abs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SharingCrossCheck {
    pub stage: usize,
    pub lattice_resolution: usize,
    pub nodes: Vec<NodeCrossCheck>,
}

impl SharingCrossCheck {
    pub fn report(&self) -> CheckReport {
        let mut r = CheckReport::new(format!(
            "risk sharing at stage {} (lattice resolution {})",
            self.stage, self.lattice_resolution
        ));
        let mut attain = CheckEntry::new("closed form", "proportional allocation attains ybar (tol 1e-10)");
        let mut dominate = CheckEntry::new("dominance", "no grid allocation exceeds ybar (tol 1e-8)");
        for n in &self.nodes {
            attain.record(n.attainment_error() - 1e-10, || {
                format!("node {}: {} vs {}", n.node, n.closed_form_value, n.ybar)
            });
            dominate.record(n.gap() - 1e-8, || {
                format!("node {}: grid max {} > ybar {}", n.node, n.grid_max, n.ybar)
            });
        }
        r.push(attain);
        r.push(dominate);
        r
    }

    pub fn passed(&self) -> bool {
        self.report().all_passed()
    }
}

/// Evaluates the composed objective over every allocation process whose
/// shares at each node after stage `t` come from [`simplex_lattice`] with
/// resolution `m`, separately below every stage-`t` node.
pub fn numeric_cross_check(problem: &SharingProblem, t: usize, m: usize, budget: u128) -> Result<SharingCrossCheck> {
    let tree = problem.tree();
    let agents = problem.agents();
    if m == 0 {
        return Err(Error::InvalidInput("lattice resolution must be positive".into()));
    }
    let lattice = simplex_lattice(agents, m);
    let ybar = problem.ybar_all();
    let closed = problem.closed_form_table(t)?;
    let mut nodes = Vec::new();
    for &start in tree.atoms(t)? {
        let desc: Vec<NodeId> = subtree(tree, start).into_iter().skip(1).collect();
        let points = (lattice.len() as u128)
            .checked_pow(desc.len() as u32)
            .unwrap_or(u128::MAX);
        if points > budget {
            return Err(Error::BudgetExceeded { count: points, budget });
        }
        let closed_form_value = problem.total_objective(start, &closed);
        let l = lattice.len();
        let evaluate = |mut index: u128| -> (f64, u128) {
            let mut alloc = vec![vec![0.0; tree.len()]; agents];
            for &d in &desc {
                let shares = &lattice[(index % l as u128) as usize];
                index /= l as u128;
                let h = problem.aggregate(d);
                for a in 0..agents {
                    alloc[a][d.0] = shares[a] * h;
                }
            }
            (problem.total_objective(start, &alloc), index)
        };
        let (grid_max, best) = (0..points)
            .into_par_iter()
            .map(|i| (evaluate(i).0, i))
            .reduce(
                || (f64::NEG_INFINITY, u128::MAX),
                |a, b| if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a },
            );
        let mut index = best;
        let grid_argmax = desc
            .iter()
            .map(|_| {
                let s = lattice[(index % l as u128) as usize].clone();
                index /= l as u128;
                s
            })
            .collect();
        nodes.push(NodeCrossCheck {
            node: start,
            ybar: ybar[start.0],
            closed_form_value,
            grid_points: points,
            grid_max,
            grid_argmax,
        });
    }
    Ok(SharingCrossCheck {
        stage: t,
        lattice_resolution: m,
        nodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_agents(tree: ScenarioTree, h1: f64, h2: f64) -> SharingProblem {
        let n = tree.len();
        // agent endowments grow along up moves
        let e1: Vec<f64> = (0..n).map(|i| h1 * (1.0 + 0.1 * tree.cumulative_shock(NodeId(i)).first().copied().unwrap_or(0.0))).collect();
        let e2: Vec<f64> = (0..n).map(|i| h2 * (1.0 + 0.05 * i as f64)).collect();
        SharingProblem::new(tree, vec![e1, e2], Kernel::Entropic { gamma: 1.0 }).unwrap()
    }

    #[test]
    fn proportional_split_one_third() {
        let tree = ScenarioTree::binomial(2, 0.6, 1.0, -1.0).unwrap();
        let n = tree.len();
        let p = SharingProblem::new(
            tree,
            vec![
                (0..n).map(|i| if i == 0 { 1.0 } else { 1.0 + i as f64 }).collect(),
                (0..n).map(|i| if i == 0 { 2.0 } else { 0.5 + i as f64 }).collect(),
            ],
            Kernel::Entropic { gamma: 1.0 },
        )
        .unwrap();
        let alloc = p.closed_form_allocation(0).unwrap();
        for stage in &alloc[1..] {
            for (&node, x) in p.tree().atoms(stage.stage()).unwrap().iter().zip(stage.values()) {
                let h = p.aggregate(node);
                assert!((x[0] - h / 3.0).abs() < 1e-14);
                assert!((x[1] - 2.0 * h / 3.0).abs() < 1e-14);
                assert_eq!(x.iter().sum::<f64>(), h);
            }
        }
    }

    #[test]
    fn terminal_ybar_is_aggregate() {
        let p = two_agents(ScenarioTree::binomial(1, 0.3, 1.0, -1.0).unwrap(), 1.0, 2.0);
        let y = p.ybar(1).unwrap();
        for (&n, v) in p.tree().atoms(1).unwrap().iter().zip(y.values()) {
            assert_eq!(*v, p.aggregate(n));
        }
    }

    #[test]
    fn closed_form_attains_and_dominates_grid() {
        let p = two_agents(ScenarioTree::binomial(1, 0.3, 1.0, -1.0).unwrap(), 1.0, 1.5);
        let check = numeric_cross_check(&p, 0, 40, DEFAULT_GRID_BUDGET).unwrap();
        assert!(check.passed(), "{}", check.report());
        assert_eq!(check.nodes[0].grid_points, 41 * 41);
    }

    #[test]
    fn equal_endowments_give_equal_split_on_grid() {
        let tree = ScenarioTree::binomial(1, 0.8, 2.0, -0.5).unwrap();
        let n = tree.len();
        let e: Vec<f64> = (0..n).map(|i| 1.0 + i as f64).collect();
        let p = SharingProblem::new(tree, vec![e.clone(), e], Kernel::Entropic { gamma: 1.0 }).unwrap();
        let check = numeric_cross_check(&p, 0, 20, DEFAULT_GRID_BUDGET).unwrap();
        let node = &check.nodes[0];
        let split: Vec<Vec<f64>> = (0..2).map(|_| (0..3).map(|i| 0.5 * p.aggregate(NodeId(i))).collect()).collect();
        assert!((node.grid_max - p.total_objective(NodeId(0), &split)).abs() < 1e-12);
        assert!((node.grid_max - node.ybar).abs() < 1e-12);
    }

    #[test]
    fn lattice_counts() {
        assert_eq!(simplex_lattice(3, 4).len() as u128, lattice_size(3, 4));
        assert_eq!(lattice_size(2, 10), 11);
        assert_eq!(lattice_resolution(2, 2, 1000), Some(30));
        for s in simplex_lattice(3, 5) {
            assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(s.iter().all(|&v| v >= MIN_SHARE));
        }
    }
}
