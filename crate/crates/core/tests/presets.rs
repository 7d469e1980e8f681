//! Frozen checks on the built-in presets.

use condopt::config::{BoundsConfig, ProblemConfig, PRESETS};
use condopt::solver::{brute_force_value, composed_objective, extract_policy, solve_backward, SolverConfig};

fn preset(name: &str) -> ProblemConfig {
    ProblemConfig::preset(name).unwrap()
}

#[test]
fn risk_constrained_preset_matches_exhaustive_search() {
    let mut cfg = preset("risk-constrained-consumption");
    cfg.solver.bounds = BoundsConfig::Reachable { max_states: 100_000 };
    cfg.solver.control_resolution = 0.2;
    let problem = cfg.build().unwrap();
    let x0 = cfg.initial_state;
    let dp = solve_backward(&problem, x0, &cfg.solver_config(0)).unwrap().root_value();
    let brute = brute_force_value(&problem, &[x0], 0.2, 1_000_000).unwrap();
    assert_eq!(dp, brute.value);
    assert!(brute.evaluated > 1000, "{}", brute.evaluated);
}

#[test]
fn trajectory_value_is_the_composed_objective() {
    for name in PRESETS {
        let cfg = preset(name);
        let problem = cfg.build().unwrap();
        let config = cfg.solver_config(0);
        let x0 = cfg.initial_state;
        let sol = solve_backward(&problem, x0, &config).unwrap();
        let tr = extract_policy(&problem, &sol, x0, &config).unwrap();
        let again = composed_objective(&problem, &[x0], &tr.controls).unwrap();
        assert!((again - tr.value).abs() <= 1e-6, "{name}: {again} vs {}", tr.value);
        assert_eq!(tr.predicted, sol.root_value());
    }
}

/// The re-optimized policy may beat the interpolated `y_0(x0)` of its own
/// grid, but not the value of a much finer solve.
#[test]
fn achieved_value_stays_below_the_refined_optimum() {
    let cfg = preset("risk-constrained-consumption");
    let problem = cfg.build().unwrap();
    let config = cfg.solver_config(0);
    let x0 = cfg.initial_state;
    let sol = solve_backward(&problem, x0, &config).unwrap();
    let tr = extract_policy(&problem, &sol, x0, &config).unwrap();
    let fine = SolverConfig {
        state_points: 4 * (config.state_points - 1) + 1,
        control_resolution: config.control_resolution / 4.0,
        ..config.clone()
    };
    let refined = solve_backward(&problem, x0, &fine).unwrap().root_value();
    assert!(tr.value <= refined + 1e-4, "{} vs {refined}", tr.value);
    // frozen from a 161-point / h = 0.025 solve
    assert!((refined - 2.468409279).abs() < 1e-8, "{refined}");
}
