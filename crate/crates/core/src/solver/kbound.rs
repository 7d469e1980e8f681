use super::inner::{self, InnerSettings};
use super::{Problem, Solution};
use crate::control::{ControlSetSpec, UpperLevelSet};
use crate::error::{Error, Result};
use crate::generators::{BackwardGenerator, ForwardGenerator};
use crate::report::{CheckEntry, CheckReport};
use crate::tree::{NodeId, ScenarioTree};

const GRID_DIVISIONS: f64 = 40.0;
const BOUND_TOLERANCE: f64 = 1e-6;

/// One-step advantage bound `sup_z u_t(x, v_t(x, z), z) - x`.
#[derive(Debug, Clone, PartialEq)]
pub struct KEstimate {
    pub per_stage: Vec<f64>,
    pub overall: f64,
    /// Node, state and control attaining the overall maximum.
    pub witness: Option<(NodeId, f64, Vec<f64>)>,
}

/// Maximizes the one-step advantage over its nonnegative upper level set at
/// every non-terminal node and battery state. The level set contains `z = 0`
/// whenever `v(x, 0) = x` and `u(x, x, 0) = x`; it must be bounded.
pub fn estimate_k(
    tree: &ScenarioTree,
    forward: &ForwardGenerator,
    backward: &BackwardGenerator,
    battery: &[f64],
) -> Result<KEstimate> {
    if battery.is_empty() {
        return Err(Error::EmptyFamily);
    }
    let level = UpperLevelSet {
        forward: forward.clone(),
        backward: backward.clone(),
        slack_by_stage: vec![0.0; tree.horizon() + 1],
        nonnegative_last: matches!(forward, ForwardGenerator::WealthConsumption),
    };
    let set = ControlSetSpec::UpperLevel(level.clone());
    let mut per_stage = vec![0.0f64; tree.horizon()];
    let mut overall = 0.0f64;
    let mut witness = None;
    for (t, k_t) in per_stage.iter_mut().enumerate() {
        for &node in tree.atoms(t)? {
            for &x in battery {
                let radius = match set.bounding_radius(tree, node, &[x]) {
                    Ok(m) => m,
                    Err(Error::Unbounded { .. }) => {
                        return Err(Error::NoK(format!(
                            "the advantage has an unbounded upper level set at node {node}, state {x}"
                        )))
                    }
                    Err(Error::EmptyControlSet { .. }) => {
                        return Err(Error::NoK(format!(
                            "z = 0 has negative advantage at node {node}, state {x}"
                        )))
                    }
                    Err(e) => return Err(e),
                };
                let settings = InnerSettings {
                    resolution: if radius > 0.0 { radius / GRID_DIVISIONS } else { 1e-3 },
                    polish: true,
                    tolerance: 1e-9,
                };
                let r = inner::maximize(tree, node, &set, &[x], &settings, |z| level.advantage(tree, node, &[x], z))
                    .map_err(|e| match e {
                        Error::Divergence { node, reason } => Error::NoK(format!("node {node}: {reason}")),
                        e => e,
                    })?;
                if !r.value.is_finite() {
                    return Err(Error::NoK(format!("advantage is {} at node {node}, state {x}", r.value)));
                }
                *k_t = k_t.max(r.value);
                if r.value > overall || witness.is_none() {
                    overall = overall.max(r.value);
                    witness = r.control.map(|z| (node, x, z));
                }
            }
        }
    }
    Ok(KEstimate {
        per_stage,
        overall,
        witness,
    })
}

/// Checks `0 <= y_t(x) - x <= (T - t) K` at every grid point and that every
/// stored control lies in `{z : u_t(x, v_t(x, z), z) >= x - (T - t - 1) K}`.
pub fn verify_k_bound(problem: &Problem, solution: &Solution, k: f64) -> CheckReport {
    let tree = &problem.tree;
    let horizon = tree.horizon();
    let mut report = CheckReport::new(format!("value bounds with K = {k:.6}"));
    let mut sandwich = CheckEntry::new("sandwich", "0 <= y_t(x) - x <= (T - t) K (tol 1e-6)");
    let mut induced = CheckEntry::new("induced set", "stored controls lie in the induced set (slack 1e-6)");
    for vf in &solution.values {
        let t = vf.stage;
        let cap = (horizon - t) as f64 * k;
        for (pos, (g, v)) in vf.grids.iter().zip(&vf.values).enumerate() {
            for (&x, &y) in g.iter().zip(v) {
                let gap = y - x;
                let excess = (-gap).max(gap - cap) - BOUND_TOLERANCE;
                sandwich.record(if gap.is_nan() { f64::NAN } else { excess }, || {
                    format!("stage {t} atom {pos} x = {x}: y - x = {gap:e}, cap {cap:e}")
                });
            }
        }
    }
    let level = UpperLevelSet {
        forward: problem.forward.clone(),
        backward: problem.backward.clone(),
        slack_by_stage: vec![0.0; horizon + 1],
        nonnegative_last: false,
    };
    for policy in &solution.policies {
        let t = policy.stage;
        let slack = (horizon - t - 1) as f64 * k;
        let atoms = match tree.atoms(t) {
            Ok(a) => a,
            Err(e) => {
                induced.fail(e.to_string());
                continue;
            }
        };
        for (pos, &node) in atoms.iter().enumerate() {
            let grid = &solution.values[t].grids[pos];
            for (&x, z) in grid.iter().zip(&policy.controls[pos]) {
                if z.is_empty() {
                    continue;
                }
                match level.advantage(tree, node, &[x], z) {
                    Ok(a) => induced.record(-(a + slack) - BOUND_TOLERANCE, || {
                        format!("stage {t} node {node} x = {x} z = {z:?}: advantage {a:e}")
                    }),
                    Err(e) => induced.fail(format!("node {node} x = {x}: {e}")),
                }
            }
        }
    }
    report.push(sandwich);
    report.push(induced);
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_binomial_has_zero_k() {
        let tree = ScenarioTree::binomial(2, 0.5, 1.0, -1.0).unwrap();
        let k = estimate_k(
            &tree,
            &ForwardGenerator::SelfFinancing,
            &BackwardGenerator::entropic(1.0),
            &[-1.0, 0.0, 2.0],
        )
        .unwrap();
        assert!(k.overall.abs() < 1e-12);
        let z = k.witness.unwrap().2;
        assert!(z[0].abs() < 1e-6);
    }

    #[test]
    fn biased_binomial_matches_stationarity() {
        let tree = ScenarioTree::binomial(1, 0.6, 1.0, -1.0).unwrap();
        let k = estimate_k(
            &tree,
            &ForwardGenerator::SelfFinancing,
            &BackwardGenerator::entropic(1.0),
            &[0.0],
        )
        .unwrap();
        let gain = -(2.0 * 0.24f64.sqrt()).ln();
        assert!((k.overall - gain).abs() < 1e-9, "{}", k.overall);
        let theta = k.witness.unwrap().2[0];
        assert!((theta - 0.5 * 1.5f64.ln()).abs() < 1e-5, "{theta}");
    }

    #[test]
    fn arbitrage_has_no_k() {
        let tree = ScenarioTree::binomial(1, 0.6, 1.0, 0.0).unwrap();
        let r = estimate_k(
            &tree,
            &ForwardGenerator::SelfFinancing,
            &BackwardGenerator::entropic(1.0),
            &[0.0],
        );
        assert!(matches!(r, Err(Error::NoK(_))), "{r:?}");
    }
}
