use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;
use condopt::config::{ControlConfig, ProblemConfig};
use condopt::solver::{estimate_k, extract_policy, refinement_study, solve_backward, verify_k_bound, Problem, Solution};
use condopt::tree::NodeId;

use crate::output::{config_hash, csv_file, num, numbered, out_dir, text_file};

/// Writes `stage_<t>.csv` for every stage, `trajectory.csv` and
/// `summary.txt` into `out`.
pub fn run(cfg: &ProblemConfig, out: &Path, workers: usize) -> Result<()> {
    let problem = cfg.build()?;
    let config = cfg.solver_config(workers);
    let hash = config_hash(&cfg.to_json());
    let x0 = cfg.initial_state;
    out_dir(out)?;

    let solution = solve_backward(&problem, x0, &config)?;
    write_stages(&problem, &solution, out, &hash)?;
    let trajectory = extract_policy(&problem, &solution, x0, &config)?;
    let tree = &problem.tree;
    let dim = trajectory.controls.iter().map(Vec::len).max().unwrap_or(0);
    let mut header: Vec<String> = ["node", "stage", "probability", "x"].map(String::from).to_vec();
    header.extend(numbered("z", dim));
    let mut w = csv_file(&out.join("trajectory.csv"), &hash, &header)?;
    for id in 0..tree.len() {
        let node = NodeId(id);
        let mut row = vec![
            id.to_string(),
            tree.stage(node).to_string(),
            num(tree.path_probability(node)),
            num(trajectory.states[id]),
        ];
        row.extend(padded(&trajectory.controls[id], dim));
        w.write_record(&row)?;
    }
    w.flush()?;

    let mut s = String::new();
    writeln!(s, "config_sha256={hash}")?;
    writeln!(s, "initial_state={}", num(x0))?;
    writeln!(s, "state_points={}", config.state_points)?;
    writeln!(s, "control_resolution={}", num(config.control_resolution))?;
    writeln!(s, "root_value={}", num(solution.root_value()))?;
    writeln!(s, "trajectory_value={}", num(trajectory.value))?;
    writeln!(s, "trajectory_gap={}", num(trajectory.value - trajectory.predicted))?;
    refinement_section(&mut s, &problem, cfg, &config)?;
    k_section(&mut s, &problem, cfg, &solution)?;
    writeln!(s, "warnings={}", solution.warnings.len())?;
    for warning in &solution.warnings {
        writeln!(s, "  {warning}")?;
    }
    text_file(&out.join("summary.txt"), &s)?;
    print!("{s}");
    Ok(())
}

fn padded(z: &[f64], dim: usize) -> Vec<String> {
    (0..dim).map(|i| z.get(i).map(|&v| num(v)).unwrap_or_default()).collect()
}

fn write_stages(problem: &Problem, solution: &Solution, out: &Path, hash: &str) -> Result<()> {
    let tree = &problem.tree;
    for vf in &solution.values {
        let t = vf.stage;
        let policy = solution.policies.iter().find(|p| p.stage == t);
        let dim = policy
            .map(|p| p.controls.iter().flatten().map(Vec::len).max().unwrap_or(0))
            .unwrap_or(0);
        let mut header: Vec<String> = ["node", "x", "y"].map(String::from).to_vec();
        header.extend(numbered("z", dim));
        let mut w = csv_file(&out.join(format!("stage_{t}.csv")), hash, &header)?;
        for &node in tree.atoms(t)? {
            for (i, (&x, &y)) in vf.grid(tree, node).iter().zip(vf.node_values(tree, node)).enumerate() {
                let mut row = vec![node.0.to_string(), num(x), num(y)];
                if let Some(p) = policy {
                    row.extend(padded(p.at(tree, node, i), dim));
                }
                w.write_record(&row)?;
            }
        }
        w.flush()?;
    }
    Ok(())
}

fn refinement_section(s: &mut String, problem: &Problem, cfg: &ProblemConfig, config: &condopt::solver::SolverConfig) -> Result<()> {
    let levels = cfg.solver.refinement_levels;
    if levels < 2 {
        writeln!(s, "refinement=disabled")?;
        return Ok(());
    }
    match refinement_study(problem, cfg.initial_state, config, levels) {
        Ok(study) => {
            writeln!(s, "refinement_levels={levels}")?;
            for l in &study.levels {
                writeln!(
                    s,
                    "  points={} h={} value={}",
                    l.state_points,
                    num(l.control_resolution),
                    num(l.value)
                )?;
            }
            let list = |v: &[f64]| v.iter().map(|d| format!("{d:.3e}")).collect::<Vec<_>>().join(" ");
            writeln!(s, "refinement_deltas={}", list(&study.deltas))?;
            writeln!(s, "refinement_ratios={}", list(&study.ratios))?;
            match study.remaining_error {
                Some(e) => writeln!(s, "refinement_remaining_error={e:.3e}")?,
                None => writeln!(s, "refinement_remaining_error=unknown (deltas do not shrink)")?,
            }
        }
        Err(e) => writeln!(s, "refinement=failed: {e}")?,
    }
    Ok(())
}

fn k_section(s: &mut String, problem: &Problem, cfg: &ProblemConfig, solution: &Solution) -> Result<()> {
    let ControlConfig::Induced { k, .. } = &cfg.controls else {
        writeln!(s, "k_bound=not applicable")?;
        return Ok(());
    };
    let k = match k {
        Some(k) => *k,
        None => estimate_k(&problem.tree, &problem.forward, &problem.backward, &cfg.k_battery())?.overall,
    };
    let report = verify_k_bound(problem, solution, k);
    let status = if report.all_passed() { "pass" } else { "fail" };
    writeln!(s, "k_bound={status} K={}", num(k))?;
    for line in report.to_string().lines() {
        writeln!(s, "  {line}")?;
    }
    Ok(())
}
