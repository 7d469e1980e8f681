use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;
use condopt::config::SharingConfig;
use condopt::sharing::{lattice_resolution, numeric_cross_check, SharingProblem};
use condopt::tree::{NodeId, ScenarioTree};

use crate::output::{config_hash, csv_file, num, numbered, out_dir, text_file};

/// Writes `allocation.csv`, `ybar.csv` and `dominance.txt`. `Ok(false)` when
/// the lattice cross-check finds an allocation above the closed form.
pub fn run(cfg: &SharingConfig, out: &Path) -> Result<bool> {
    let problem = cfg.build()?;
    let hash = config_hash(&cfg.to_json());
    let tree = problem.tree();
    let agents = problem.agents();
    let t = cfg.stage;
    out_dir(out)?;

    let mut header: Vec<String> = ["node", "stage", "aggregate"].map(String::from).to_vec();
    header.extend(numbered("x", agents));
    let mut w = csv_file(&out.join("allocation.csv"), &hash, &header)?;
    for stage in problem.closed_form_allocation(t)? {
        for (&node, x) in tree.atoms(stage.stage())?.iter().zip(stage.values()) {
            let mut row = vec![node.0.to_string(), stage.stage().to_string(), num(problem.aggregate(node))];
            row.extend(x.iter().map(|&v| num(v)));
            w.write_record(&row)?;
        }
    }
    w.flush()?;

    let ybar = problem.ybar_all();
    let header = ["node", "stage", "aggregate", "ybar"].map(String::from);
    let mut w = csv_file(&out.join("ybar.csv"), &hash, &header)?;
    for (id, y) in ybar.iter().enumerate() {
        let node = NodeId(id);
        w.write_record([id.to_string(), tree.stage(node).to_string(), num(problem.aggregate(node)), num(*y)])?;
    }
    w.flush()?;

    let mut s = format!("config_sha256={hash}\nstage={t}\nagents={agents}\n");
    individual_gains(&mut s, &problem, t)?;
    let below = subtree_sizes(tree, t)?;
    let budget = u128::from(cfg.grid_budget);
    let passed = match lattice_resolution(agents, below, budget) {
        Some(m) => {
            let check = numeric_cross_check(&problem, t, m, budget)?;
            write!(s, "{}", check.report())?;
            for n in &check.nodes {
                writeln!(
                    s,
                    "  node {}: ybar={} closed_form={} grid_max={} grid_points={}",
                    n.node.0,
                    num(n.ybar),
                    num(n.closed_form_value),
                    num(n.grid_max),
                    n.grid_points
                )?;
            }
            check.passed()
        }
        None => {
            writeln!(s, "cross-check skipped: a single lattice point per node exceeds grid_budget {budget}")?;
            true
        }
    };
    writeln!(s, "share: {}", if passed { "PASS" } else { "FAIL" })?;
    text_file(&out.join("dominance.txt"), &s)?;
    print!("{s}");
    Ok(passed)
}

/// Strict descendants of the largest stage-`t` subtree.
fn subtree_sizes(tree: &ScenarioTree, t: usize) -> Result<usize> {
    let mut largest = 0;
    for &start in tree.atoms(t)? {
        let mut stack = vec![start];
        let mut count = 0;
        while let Some(n) = stack.pop() {
            count += 1;
            stack.extend_from_slice(tree.children(n));
        }
        largest = largest.max(count - 1);
    }
    Ok(largest)
}

/// Each agent's objective under the shared allocation against keeping the
/// own endowment.
fn individual_gains(s: &mut String, problem: &SharingProblem, t: usize) -> Result<()> {
    let tree = problem.tree();
    let shared = problem.closed_form_table(t)?;
    let own: Vec<Vec<f64>> = (0..problem.agents())
        .map(|a| (0..tree.len()).map(|i| problem.endowment(a, NodeId(i))).collect())
        .collect();
    for &start in tree.atoms(t)? {
        let with = problem.agent_objectives(start, &shared);
        let alone = problem.agent_objectives(start, &own);
        for (a, (w, o)) in with.iter().zip(&alone).enumerate() {
            writeln!(
                s,
                "node {} agent {a}: shared={} autarky={} gain={}",
                start.0,
                num(*w),
                num(*o),
                num(w - o)
            )?;
        }
    }
    Ok(())
}
