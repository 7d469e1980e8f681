use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;
use condopt::conditions::{check_generator_conditions, ConditionBattery, Regime};
use condopt::config::{BoundsConfig, ControlConfig, ProblemConfig, RiskConfig, TreeConfig};
use condopt::report::{CheckEntry, CheckReport};
use condopt::risk::RiskMeasure;
use condopt::solver::{brute_force_value, count_assignments, solve_backward, Problem};
use condopt::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::output::{out_dir, text_file};

const RISK_TRIALS: usize = 200;
const BOUNDARY_TERMS: usize = 12;
/// The shrunk oracle instance keeps at most this many stages ...
const ORACLE_HORIZON: usize = 2;
/// ... and coarsens the control resolution until exhaustive search visits at
/// most this many assignments.
const ORACLE_CAP: u128 = 200_000;
const ORACLE_MAX_DOUBLINGS: usize = 10;

/// Runs every applicable checker; `Ok(false)` when a required entry fails.
pub fn run(cfg: &ProblemConfig, out: Option<&Path>, workers: usize) -> Result<bool> {
    let problem = cfg.build()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let regime = match cfg.controls {
        ControlConfig::Induced { .. } | ControlConfig::Unbounded { .. } => Regime::UnboundedControls,
        _ => Regime::Existence,
    };
    let mut reports = vec![check_generator_conditions(
        &problem.tree,
        &problem.forward,
        &problem.backward,
        regime,
        &ConditionBattery::default(),
        &mut rng,
    )];
    if let Some(r) = control_conditions(&problem, cfg.initial_state) {
        reports.push(r);
    }
    if let ControlConfig::RiskConstrained { risk, .. } = &cfg.controls {
        let risk = match *risk {
            RiskConfig::Entropic { gamma } => RiskMeasure::entropic(gamma),
            RiskConfig::NegativeExpectation => RiskMeasure::NegativeExpectation,
        };
        reports.push(risk.check_axioms(&problem.tree, RISK_TRIALS, &mut rng));
    }
    reports.push(oracle(cfg, workers));

    let failed: Vec<String> = reports.iter().flat_map(|r| r.failures().map(|e| e.label.clone())).collect();
    let mut s = String::new();
    for r in &reports {
        write!(s, "{r}")?;
    }
    if failed.is_empty() {
        writeln!(s, "verify: PASS")?;
    } else {
        writeln!(s, "verify: FAIL {}", failed.join(" "))?;
    }
    if let Some(dir) = out {
        out_dir(dir)?;
        text_file(&dir.join("verify.txt"), &s)?;
    }
    print!("{s}");
    Ok(failed.is_empty())
}

/// Closedness and boundedness along `x0 + 2^-n` at the root, picking controls
/// on the boundary along the first coordinate. Finite control lists are
/// closed and bounded by construction and are skipped.
fn control_conditions(problem: &Problem, x0: f64) -> Option<CheckReport> {
    let tree = &problem.tree;
    let root = tree.root();
    let set = &problem.controls;
    if !set.is_continuous() {
        return None;
    }
    let x = [x0];
    let outcome = set.dimension(tree, root, &x).and_then(|d| {
        let mut dir = vec![0.0; d];
        dir[0] = 1.0;
        set.boundary_sequence(tree, root, &x, &dir, BOUNDARY_TERMS)
    });
    Some(match outcome {
        Ok((states, picks, limit)) => set.check_c4_surrogate(tree, root, &states, &x, &picks, Some(&limit)),
        Err(e) => {
            let mut r = CheckReport::new(format!("control set conditions at node {root}"));
            let mut entry = match e {
                Error::Unbounded { .. } => CheckEntry::new("(ii)-bounded", "control set is bounded"),
                _ => CheckEntry::new("(c1)", "control set nonempty along the sequence"),
            };
            entry.fail(e.to_string());
            r.push(entry);
            r
        }
    })
}

fn shrink(tree: &TreeConfig) -> TreeConfig {
    let mut t = tree.clone();
    match &mut t {
        TreeConfig::Binomial { horizon, .. } | TreeConfig::Trinomial { horizon, .. } | TreeConfig::Lattice { horizon, .. } => {
            *horizon = (*horizon).min(ORACLE_HORIZON)
        }
        TreeConfig::Explicit { .. } => {}
    }
    t
}

/// Solver against exhaustive search over the same discretized controls, on
/// the config truncated to at most two stages with reachable-state grids.
fn oracle(cfg: &ProblemConfig, workers: usize) -> CheckReport {
    let mut report = CheckReport::new("oracle equivalence on a shrunk instance");
    let mut entry = CheckEntry::new("oracle", "dynamic programming equals exhaustive search (rel tol 1e-9)");
    let mut small = cfg.clone();
    small.tree = shrink(&cfg.tree);
    small.solver.bounds = BoundsConfig::Reachable { max_states: 100_000 };
    let outcome = (|| -> condopt::Result<String> {
        let problem = small.build()?;
        let x0 = [small.initial_state];
        let mut h = small.solver.control_resolution;
        let mut doublings = 0;
        while count_assignments(&problem, &x0, h, ORACLE_CAP)? > ORACLE_CAP {
            if doublings == ORACLE_MAX_DOUBLINGS {
                return Err(Error::BudgetExceeded {
                    count: ORACLE_CAP + 1,
                    budget: ORACLE_CAP,
                });
            }
            h *= 2.0;
            doublings += 1;
        }
        small.solver.control_resolution = h;
        let dp = solve_backward(&problem, x0[0], &small.solver_config(workers))?.root_value();
        let brute = brute_force_value(&problem, &x0, h, ORACLE_CAP)?;
        let gap = if dp == brute.value { 0.0 } else { (dp - brute.value).abs() };
        entry.record(gap - 1e-9 * (1.0 + brute.value.abs()), || {
            format!("dp {dp} vs exhaustive {}", brute.value)
        });
        Ok(format!(
            "T = {}, h = {h}, {} assignments: dp {dp}, exhaustive {}",
            problem.tree.horizon(),
            brute.evaluated,
            brute.value
        ))
    })();
    match outcome {
        Ok(detail) => entry.description = format!("{} [{detail}]", entry.description),
        Err(e) => entry.fail(format!("shrunk instance: {e}")),
    }
    report.push(entry);
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shrink_caps_template_horizons() {
        let t = TreeConfig::Binomial {
            horizon: 5,
            p: 0.5,
            up: 1.0,
            down: -1.0,
        };
        assert!(matches!(shrink(&t), TreeConfig::Binomial { horizon: 2, .. }));
        let t = TreeConfig::Trinomial {
            horizon: 1,
            probabilities: [0.2, 0.3, 0.5],
            shocks: [1.0, 0.0, -1.0],
        };
        assert_eq!(shrink(&t), t);
    }
}
