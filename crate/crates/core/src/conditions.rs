//! Randomized checks of the structural conditions on forward generators
//! `v_t` (v1)-(v6) and backward generators `u_t` (u1)-(u7).
//!
//! Limit properties (continuity, semi-continuity, sensitivity) are certified
//! on finite test sequences only.

use rand::Rng;

use crate::conditional::{check_stability, random_stability_cases, ConditionalValue};
use crate::error::Result;
use crate::generators::{child_probabilities, BackwardGenerator, ForwardGenerator};
use crate::report::{CheckEntry, CheckReport};
use crate::tree::{NodeId, ScenarioTree};

const TOL: f64 = 1e-10;
const LIPSCHITZ_CAP: f64 = 1e6;
const SENSITIVITY_THRESHOLD: f64 = 1e6;

/// `a - b` in the extended reals, with equal infinities at distance 0.
fn ext_sub(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        a - b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// (v1), (v2), (u1)-(u3): existence over compact control sets.
    Existence,
    /// Additionally (v3)-(v6), (u2'), (u4)-(u7): unbounded controls.
    UnboundedControls,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionBattery {
    pub trials: usize,
    pub state_range: (f64, f64),
    /// Controls are drawn from `[-scale, scale]^d`.
    pub control_scale: f64,
    /// Continuation values are drawn within this distance of the state.
    pub value_spread: f64,
}

impl Default for ConditionBattery {
    fn default() -> Self {
        Self {
            trials: 200,
            state_range: (-2.0, 5.0),
            control_scale: 3.0,
            value_spread: 3.0,
        }
    }
}

struct Sampler<'a> {
    tree: &'a ScenarioTree,
    forward: &'a ForwardGenerator,
    backward: &'a BackwardGenerator,
    battery: &'a ConditionBattery,
    inner: Vec<NodeId>,
}

impl Sampler<'_> {
    fn node<R: Rng>(&self, rng: &mut R) -> NodeId {
        self.inner[rng.gen_range(0..self.inner.len())]
    }

    fn state<R: Rng>(&self, rng: &mut R) -> f64 {
        let (lo, hi) = self.battery.state_range;
        let lo = if matches!(self.backward, BackwardGenerator::Scaling { .. }) {
            lo.max(0.05)
        } else {
            lo
        };
        rng.gen_range(lo..=hi.max(lo))
    }

    fn control<R: Rng>(&self, rng: &mut R, node: NodeId, x: f64) -> Result<Vec<f64>> {
        let d = self.forward.control_dimension(self.tree, node, &[x])?;
        let s = self.battery.control_scale;
        Ok((0..d).map(|_| rng.gen_range(-s..=s)).collect())
    }

    fn values<R: Rng>(&self, rng: &mut R, node: NodeId, x: f64) -> Vec<f64> {
        let s = self.battery.value_spread;
        self.tree
            .children(node)
            .iter()
            .map(|_| x + rng.gen_range(-s..=s))
            .collect()
    }

    fn v(&self, node: NodeId, x: f64, z: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        self.forward.advance_scalar(self.tree, node, x, z, &mut out)?;
        Ok(out)
    }

    fn u(&self, node: NodeId, x: f64, y: &[f64], z: &[f64]) -> Result<f64> {
        let probs = child_probabilities(self.tree, node);
        self.backward.aggregate(node, &probs, &[x], y, z)
    }
}

fn entry_from<F>(label: &str, description: &str, trials: usize, mut trial: F) -> CheckEntry
where
    F: FnMut(&mut CheckEntry) -> Result<()>,
{
    let mut e = CheckEntry::new(label, description);
    for _ in 0..trials {
        if let Err(err) = trial(&mut e) {
            e.fail(err.to_string());
        }
    }
    e
}

fn stability_entries<R: Rng>(s: &Sampler<'_>, rng: &mut R) -> (CheckEntry, CheckEntry) {
    let tree = s.tree;
    let mut v1 = CheckEntry::new("(v1)", "forward generator is stable under pasting");
    let mut u1 = CheckEntry::new("(u1)", "backward generator is stable under pasting");
    let cases = (s.battery.trials / 10).max(5);
    for t in 0..tree.horizon() {
        let partition_stage = rng.gen_range(0..=t);
        let forward_cases = random_stability_cases(tree, t, partition_stage, cases, 3, rng, |r, n| {
            let x = s.state(r);
            let mut p = vec![x];
            p.extend(s.control(r, n, x).unwrap_or_default());
            p
        });
        match forward_cases {
            Ok(cs) => {
                let rep = check_stability(tree, &cs, 0.0, |input| {
                    ConditionalValue::try_from_fn(tree, t + 1, |c| {
                        let p = tree.parent(c).expect("stage t+1 node has a parent");
                        let payload = input.at(tree, p);
                        s.forward.advance_child(tree, p, c, &payload[..1], &payload[1..])
                    })
                });
                record_stability(&mut v1, rep.cases, &rep.violations, &rep.evaluation_failures);
            }
            Err(e) => v1.fail(e.to_string()),
        }
        let backward_cases = random_stability_cases(tree, t, partition_stage, cases, 3, rng, |r, n| {
            let x = s.state(r);
            let z = s.control(r, n, x).unwrap_or_default();
            let mut p = vec![x];
            p.extend(s.values(r, n, x));
            p.extend(z);
            p
        });
        match backward_cases {
            Ok(cs) => {
                let rep = check_stability(tree, &cs, 0.0, |input| {
                    ConditionalValue::try_from_fn(tree, t, |n| {
                        let p = input.at(tree, n);
                        let k = tree.children(n).len();
                        s.u(n, p[0], &p[1..1 + k], &p[1 + k..])
                    })
                });
                record_stability(&mut u1, rep.cases, &rep.violations, &rep.evaluation_failures);
            }
            Err(e) => u1.fail(e.to_string()),
        }
    }
    (v1, u1)
}

fn record_stability(
    entry: &mut CheckEntry,
    cases: usize,
    violations: &[crate::conditional::StabilityViolation],
    failures: &[String],
) {
    for _ in 0..cases.saturating_sub(violations.len() + failures.len()) {
        entry.pass();
    }
    for v in violations {
        entry.record(v.deviation, || format!("case {} node {}", v.case, v.node));
    }
    for f in failures {
        entry.fail(f.clone());
    }
}

/// Runs the condition battery for `regime`. Every entry is required.
pub fn check_generator_conditions<R: Rng>(
    tree: &ScenarioTree,
    forward: &ForwardGenerator,
    backward: &BackwardGenerator,
    regime: Regime,
    battery: &ConditionBattery,
    rng: &mut R,
) -> CheckReport {
    let inner: Vec<NodeId> = (0..tree.len()).map(NodeId).filter(|&n| !tree.is_leaf(n)).collect();
    let s = Sampler {
        tree,
        forward,
        backward,
        battery,
        inner,
    };
    let n = battery.trials;
    let mut report = CheckReport::new(format!("generator conditions ({forward:?}, {backward:?})"));

    let (v1, u1) = stability_entries(&s, rng);
    report.push(v1);

    report.push(entry_from("(v2)", "forward generator is Lipschitz on the battery", n, |e| {
        let node = s.node(rng);
        let x = s.state(rng);
        let z = s.control(rng, node, x)?;
        let h = 1e-7;
        let dx: f64 = rng.gen_range(-1.0..=1.0);
        let dz: Vec<f64> = z.iter().map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let z2: Vec<f64> = z.iter().zip(&dz).map(|(a, b)| a + h * b).collect();
        let base = s.v(node, x, &z)?;
        let moved = s.v(node, x + h * dx, &z2)?;
        let step = h * (dx * dx + dz.iter().map(|d| d * d).sum::<f64>()).sqrt();
        let change = base.iter().zip(&moved).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let lipschitz = if step > 0.0 { change / step } else { 0.0 };
        e.record(lipschitz - LIPSCHITZ_CAP, || format!("node {node} x = {x} z = {z:?}: ratio {lipschitz:e}"));
        Ok(())
    }));

    report.push(u1);

    report.push(entry_from("(u2)", "backward generator is increasing in y", n, |e| {
        let node = s.node(rng);
        let x = s.state(rng);
        let z = s.control(rng, node, x)?;
        let y = s.values(rng, node, x);
        let y2: Vec<f64> = y.iter().map(|v| v + rng.gen_range(0.0..=2.0)).collect();
        let (a, b) = (s.u(node, x, &y, &z)?, s.u(node, x, &y2, &z)?);
        e.record(ext_sub(a, b) - TOL, || format!("node {node} x = {x}: u(y) = {a} > u(y') = {b}"));
        Ok(())
    }));

    report.push(entry_from(
        "(u3)",
        "values along decreasing sequences do not jump above the limit (tol 1e-8)",
        n,
        |e| {
            let node = s.node(rng);
            let x = s.state(rng);
            let z = s.control(rng, node, x)?;
            let y = s.values(rng, node, x);
            let limit = s.u(node, x, &y, &z)?;
            let mut tail = f64::NEG_INFINITY;
            for k in 30..=40 {
                let eps = 0.5f64.powi(k);
                let yk: Vec<f64> = y.iter().map(|v| v + eps).collect();
                tail = tail.max(s.u(node, x + eps, &yk, &z)?);
            }
            e.record(ext_sub(tail, limit) - 1e-8, || format!("node {node} x = {x}: tail {tail} vs {limit}"));
            Ok(())
        },
    ));

    if regime == Regime::Existence {
        return report;
    }

    report.push(entry_from("(v3)", "forward generator is increasing in x", n, |e| {
        let node = s.node(rng);
        let x = s.state(rng);
        let x2 = x + rng.gen_range(0.0..=2.0);
        let z = s.control(rng, node, x)?;
        let (a, b) = (s.v(node, x, &z)?, s.v(node, x2, &z)?);
        let worst = a.iter().zip(&b).map(|(p, q)| p - q).fold(f64::NEG_INFINITY, f64::max);
        e.record(worst - TOL, || format!("node {node} x = {x} < {x2}, z = {z:?}"));
        Ok(())
    }));

    report.push(entry_from("(v4)", "forward generator is concave in z", n, |e| {
        let node = s.node(rng);
        let x = s.state(rng);
        let z = s.control(rng, node, x)?;
        let w = s.control(rng, node, x)?;
        let lambda: f64 = rng.gen_range(0.0..=1.0);
        let mix: Vec<f64> = z.iter().zip(&w).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
        let (vz, vw, vm) = (s.v(node, x, &z)?, s.v(node, x, &w)?, s.v(node, x, &mix)?);
        let worst = (0..vm.len())
            .map(|i| lambda * vz[i] + (1.0 - lambda) * vw[i] - vm[i])
            .fold(f64::NEG_INFINITY, f64::max);
        e.record(worst - TOL, || format!("node {node} x = {x} z = {z:?} z' = {w:?} lambda = {lambda}"));
        Ok(())
    }));

    report.push(entry_from("(v5)", "every nonzero control loses wealth on some child", n, |e| {
        let node = s.node(rng);
        let x = s.state(rng);
        let mut z = s.control(rng, node, x)?;
        if rng.gen_bool(0.5) {
            // axis directions, including pure consumption
            let i = rng.gen_range(0..z.len());
            let m = z[i];
            z.iter_mut().for_each(|c| *c = 0.0);
            z[i] = if m == 0.0 { 1.0 } else { m };
        }
        if z.iter().all(|&c| c == 0.0) {
            e.pass();
            return Ok(());
        }
        let next = s.v(node, x, &z)?;
        if next.iter().any(|&v| v < x) {
            e.pass();
        } else {
            e.fail(format!("node {node} x = {x} z = {z:?}: children {next:?}"));
        }
        Ok(())
    }));

    report.push(entry_from("(v6)", "v(x, 0) = x", n, |e| {
        let node = s.node(rng);
        let x = s.state(rng);
        let d = s.forward.control_dimension(tree, node, &[x])?;
        let next = s.v(node, x, &vec![0.0; d])?;
        let worst = next.iter().map(|v| (v - x).abs()).fold(0.0, f64::max);
        e.record(worst - 1e-12, || format!("node {node} x = {x}: {next:?}"));
        Ok(())
    }));

    report.push(entry_from("(u2')", "backward generator is increasing in x and y", n, |e| {
        let node = s.node(rng);
        let x = s.state(rng);
        let x2 = x + rng.gen_range(0.0..=2.0);
        let z = s.control(rng, node, x)?;
        let y = s.values(rng, node, x);
        let y2: Vec<f64> = y.iter().map(|v| v + rng.gen_range(0.0..=2.0)).collect();
        let (a, b) = (s.u(node, x, &y, &z)?, s.u(node, x2, &y2, &z)?);
        e.record(ext_sub(a, b) - TOL, || format!("node {node}: u({x}, y) = {a} > u({x2}, y') = {b}"));
        Ok(())
    }));

    report.push(entry_from("(u4)", "backward generator is quasi-concave in (y, z)", n, |e| {
        let node = s.node(rng);
        let x = s.state(rng);
        let (z, w) = (s.control(rng, node, x)?, s.control(rng, node, x)?);
        let (y, y2) = (s.values(rng, node, x), s.values(rng, node, x));
        let lambda: f64 = rng.gen_range(0.0..=1.0);
        let ym: Vec<f64> = y.iter().zip(&y2).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
        let zm: Vec<f64> = z.iter().zip(&w).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
        let floor = s.u(node, x, &y, &z)?.min(s.u(node, x, &y2, &w)?);
        let mixed = s.u(node, x, &ym, &zm)?;
        e.record(ext_sub(floor, mixed) - TOL, || format!("node {node} x = {x} lambda = {lambda}: {mixed} < {floor}"));
        Ok(())
    }));

    report.push(entry_from("(u5)", "u(x, y + c, z) = u(x, y, z) + c (tol 1e-10)", n, |e| {
        let node = s.node(rng);
        let x = s.state(rng);
        let z = s.control(rng, node, x)?;
        let y = s.values(rng, node, x);
        let c: f64 = rng.gen_range(-3.0..=3.0);
        let shifted: Vec<f64> = y.iter().map(|v| v + c).collect();
        let (a, b) = (s.u(node, x, &y, &z)?, s.u(node, x, &shifted, &z)?);
        // -inf + c = -inf
        let err = if a == b && a.is_infinite() { 0.0 } else { (b - a - c).abs() };
        e.record(err - TOL, || format!("node {node} x = {x} c = {c}: error {err:e}"));
        Ok(())
    }));

    report.push(entry_from(
        "(u6)",
        "u(x, m y, m z) falls below -1e6 for m = 2^j, j <= 60, when y has a loss",
        n,
        |e| {
            let node = s.node(rng);
            let x = s.state(rng);
            let z = s.control(rng, node, x)?;
            let mut y = s.values(rng, node, 0.0);
            let i = rng.gen_range(0..y.len());
            y[i] = -y[i].abs().max(0.1);
            let mut reached = false;
            let mut last = f64::NAN;
            for j in 0..=60 {
                let m = 2f64.powi(j);
                let my: Vec<f64> = y.iter().map(|v| m * v).collect();
                let mz: Vec<f64> = z.iter().map(|v| m * v).collect();
                last = s.u(node, x, &my, &mz)?;
                if last <= -SENSITIVITY_THRESHOLD {
                    reached = true;
                    break;
                }
            }
            if reached {
                e.pass();
            } else {
                e.fail(format!("node {node} x = {x} y = {y:?} z = {z:?}: last value {last}"));
            }
            Ok(())
        },
    ));

    report.push(entry_from("(u7)", "u(x, 0, 0) = 0", n, |e| {
        let node = s.node(rng);
        let x = s.state(rng);
        let d = s.forward.control_dimension(tree, node, &[x])?;
        let zeros = vec![0.0; tree.children(node).len()];
        let v = s.u(node, x, &zeros, &vec![0.0; d])?;
        e.record(v.abs() - 1e-12, || format!("node {node} x = {x}: u = {v}"));
        Ok(())
    }));

    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{GammaSchedule, Kernel, Reward};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn run(forward: ForwardGenerator, backward: BackwardGenerator, tree: &ScenarioTree) -> CheckReport {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        check_generator_conditions(
            tree,
            &forward,
            &backward,
            Regime::UnboundedControls,
            &ConditionBattery::default(),
            &mut rng,
        )
    }

    #[test]
    fn wealth_dependent_entropic_passes_everything() {
        let tree = ScenarioTree::binomial(2, 0.6, 1.0, -1.0).unwrap();
        let gamma = GammaSchedule {
            at_zero: 2.0,
            at_infinity: 0.5,
        };
        let report = run(ForwardGenerator::SelfFinancing, BackwardGenerator::Entropic { gamma }, &tree);
        assert!(report.all_passed(), "{report}");
        // negative consumption adds wealth on every child
        let report = run(ForwardGenerator::WealthConsumption, BackwardGenerator::Entropic { gamma }, &tree);
        assert!(!report.get("(v5)").unwrap().passed);
    }

    #[test]
    fn arbitrage_tree_fails_v5() {
        let tree = ScenarioTree::binomial(1, 0.6, 1.0, 0.5).unwrap();
        let report = run(ForwardGenerator::SelfFinancing, BackwardGenerator::entropic(1.0), &tree);
        assert!(!report.get("(v5)").unwrap().passed);
    }

    #[test]
    fn additive_reward_breaks_normalization() {
        let tree = ScenarioTree::binomial(1, 0.5, 1.0, -1.0).unwrap();
        let backward = BackwardGenerator::Additive {
            kernel: Kernel::Expectation,
            reward: Reward::Linear {
                state: 0.5,
                control: vec![0.0],
            },
        };
        let report = run(ForwardGenerator::SelfFinancing, backward, &tree);
        assert!(!report.get("(u7)").unwrap().passed);
        assert!(!report.get("(u6)").unwrap().passed);
        assert!(report.get("(u5)").unwrap().passed);
    }

    #[test]
    fn minus_infinity_rewards_compare_as_equal() {
        // log utility of consumption is -inf for c <= -1, which the battery hits
        let tree = ScenarioTree::binomial(2, 0.6, 1.0, -1.0).unwrap();
        let backward = BackwardGenerator::Additive {
            kernel: Kernel::Entropic { gamma: 1.0 },
            reward: Reward::Consumption { weight: 3.0 },
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let report = check_generator_conditions(
            &tree,
            &ForwardGenerator::WealthConsumption,
            &backward,
            Regime::Existence,
            &ConditionBattery::default(),
            &mut rng,
        );
        assert!(report.all_passed(), "{report}");
        assert_eq!(ext_sub(f64::NEG_INFINITY, f64::NEG_INFINITY), 0.0);
        assert_eq!(ext_sub(f64::NEG_INFINITY, 1.0), f64::NEG_INFINITY);
    }
}
