//! Property tests for the structural invariants of each module.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use condopt::conditional::{concatenate, select_by_index, ConditionalValue};
use condopt::control::{dimension_stabilization_index, ControlSetSpec, UpperLevelSet};
use condopt::error::Error;
use condopt::generators::{BackwardGenerator, ForwardGenerator, Kernel, TerminalGenerator};
use condopt::random_sets::{
    castaing_family, is_closed_under_pasting, selections, set_from_stable, stable_hull, RandomClosedSet, SelectionSet,
};
use condopt::risk::RiskMeasure;
use condopt::sharing::SharingProblem;
use condopt::solver::{
    brute_force_value, count_assignments, estimate_k, extract_policy, lookup_policy_value, solve_backward, Problem,
    SolverConfig, StateBounds,
};
use condopt::tree::{NodeId, ScenarioTree, StagePartition};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_tree(seed: u64) -> ScenarioTree {
    let mut r = rng(seed);
    let horizon = r.gen_range(1..=3);
    ScenarioTree::random(&mut r, horizon, 3).unwrap()
}

fn random_real(tree: &ScenarioTree, t: usize, r: &mut ChaCha8Rng, spread: f64) -> ConditionalValue<f64> {
    let n = tree.atoms(t).unwrap().len();
    ConditionalValue::new(tree, t, (0..n).map(|_| r.gen_range(-spread..spread)).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conditional_probabilities_sum_to_one(seed in any::<u64>()) {
        let tree = random_tree(seed);
        for id in 0..tree.len() {
            let node = NodeId(id);
            for s in tree.stage(node)..=tree.horizon() {
                let total: f64 = tree.conditional_probability(node, s).unwrap().iter().map(|(_, p)| p).sum();
                prop_assert!((total - 1.0).abs() <= 1e-12, "node {node} stage {s}: {total}");
            }
        }
    }

    #[test]
    fn tower_property_of_kernels(seed in any::<u64>()) {
        let tree = random_tree(seed);
        prop_assume!(tree.horizon() >= 2);
        let direct = tree.conditional_probability(tree.root(), 2).unwrap();
        for (leaf, p) in direct {
            let mid = tree.ancestor_at(leaf, 1);
            let composed = tree.conditional_probability(tree.root(), 1).unwrap()
                .into_iter().find(|(m, _)| *m == mid).unwrap().1
                * tree.conditional_probability(mid, 2).unwrap()
                    .into_iter().find(|(m, _)| *m == leaf).unwrap().1;
            prop_assert!((p - composed).abs() <= 1e-12);
        }
    }

    #[test]
    fn pasting_is_unique(seed in any::<u64>()) {
        let tree = random_tree(seed);
        let mut r = rng(seed ^ 1);
        let t = r.gen_range(0..=tree.horizon());
        let p = StagePartition::random(&tree, t, 3, &mut r).unwrap();
        let parts: Vec<_> = (0..p.block_count()).map(|_| random_real(&tree, t, &mut r, 5.0)).collect();
        let a = concatenate(&tree, &parts, &p).unwrap();
        // any element agreeing blockwise is built atom by atom from the parts
        let b = ConditionalValue::from_fn(&tree, t, |n| *parts[p.block_of(&tree, n)].at(&tree, n)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn measurable_subsequence_is_nodewise_lookup(seed in any::<u64>(), len in 2usize..6) {
        let tree = random_tree(seed);
        let mut r = rng(seed ^ 2);
        let t = r.gen_range(0..=tree.horizon());
        let seq: Vec<_> = (0..len).map(|_| random_real(&tree, t, &mut r, 5.0)).collect();
        let n = tree.atoms(t).unwrap().len();
        // n_1 < n_2 nodewise
        let first: Vec<u64> = (0..n).map(|_| r.gen_range(0..len as u64 - 1)).collect();
        let second: Vec<u64> = first.iter().map(|&k| r.gen_range(k + 1..len as u64)).collect();
        for index in [first, second] {
            let idx = ConditionalValue::new(&tree, t, index.clone()).unwrap();
            let picked = select_by_index(&tree, &seq, &idx).unwrap();
            for (i, &node) in tree.atoms(t).unwrap().iter().enumerate() {
                prop_assert_eq!(picked.values()[i], *seq[index[i] as usize].at(&tree, node));
            }
        }
    }

    #[test]
    fn entropic_risk_is_monotone_convex_and_cash_additive(seed in any::<u64>(), gamma in 0.2f64..3.0) {
        let tree = random_tree(seed);
        let mut r = rng(seed ^ 3);
        let s = r.gen_range(1..=tree.horizon());
        let rho = RiskMeasure::entropic(gamma);
        let x = random_real(&tree, s, &mut r, 3.0);
        let bump = random_real(&tree, s, &mut r, 1.0).map(|v| v.abs());
        let y = ConditionalValue::new(&tree, s, x.values().iter().zip(bump.values()).map(|(a, b)| a + b).collect()).unwrap();
        let rx = rho.evaluate(&tree, &x).unwrap();
        let ry = rho.evaluate(&tree, &y).unwrap();
        for (a, b) in ry.values().iter().zip(rx.values()) {
            prop_assert!(a <= &(b + 1e-10));
        }
        // stage-(s-1) measurable weights and shifts
        let lambda = random_real(&tree, s - 1, &mut r, 1.0).map(|v| v.abs());
        let m = random_real(&tree, s - 1, &mut r, 2.0);
        let lift = |c: &ConditionalValue<f64>, node: NodeId| *c.at(&tree, tree.ancestor_at(node, s - 1));
        let mix = ConditionalValue::from_fn(&tree, s, |n| {
            let l = lift(&lambda, n);
            l * x.at(&tree, n) + (1.0 - l) * y.at(&tree, n)
        }).unwrap();
        let shifted = ConditionalValue::from_fn(&tree, s, |n| x.at(&tree, n) + lift(&m, n)).unwrap();
        let rmix = rho.evaluate(&tree, &mix).unwrap();
        let rshift = rho.evaluate(&tree, &shifted).unwrap();
        for (i, &node) in tree.atoms(s - 1).unwrap().iter().enumerate() {
            let l = *lambda.at(&tree, node);
            prop_assert!(rmix.values()[i] <= l * rx.values()[i] + (1.0 - l) * ry.values()[i] + 1e-10);
            prop_assert!((rshift.values()[i] - (rx.values()[i] - m.at(&tree, node))).abs() <= 1e-10);
        }
    }

    #[test]
    fn entropic_generator_is_cash_additive_and_quasi_concave(
        seed in any::<u64>(), gamma in 0.2f64..3.0, lambda in 0.0f64..1.0, shift in -3.0f64..3.0,
    ) {
        let tree = random_tree(seed);
        let mut r = rng(seed ^ 4);
        let node = tree.root();
        let k = tree.children(node).len();
        let probs: Vec<f64> = tree.children(node).iter().map(|&c| tree.edge_probability(c)).collect();
        let u = BackwardGenerator::entropic(gamma);
        let y1: Vec<f64> = (0..k).map(|_| r.gen_range(-3.0..3.0)).collect();
        let y2: Vec<f64> = (0..k).map(|_| r.gen_range(-3.0..3.0)).collect();
        let x = [r.gen_range(-2.0..4.0)];
        let f = |y: &[f64]| u.aggregate(node, &probs, &x, y, &[]).unwrap();
        let moved: Vec<f64> = y1.iter().map(|v| v + shift).collect();
        prop_assert!((f(&moved) - f(&y1) - shift).abs() <= 1e-10);
        let mix: Vec<f64> = y1.iter().zip(&y2).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
        prop_assert!(f(&mix) >= f(&y1).min(f(&y2)) - 1e-10);
    }

    #[test]
    fn scaling_kernel_concavity_step(seed in any::<u64>(), gamma in 0.2f64..3.0, agents in 2usize..4) {
        let mut r = rng(seed);
        let k = r.gen_range(2..4);
        let w: Vec<f64> = (0..k).map(|_| r.gen_range(0.2..1.0)).collect();
        let total: f64 = w.iter().sum();
        let probs: Vec<f64> = w.iter().map(|v| v / total).collect();
        let shares: Vec<f64> = (0..agents).map(|_| r.gen_range(0.1..1.0)).collect();
        let h: f64 = shares.iter().sum();
        let ws: Vec<Vec<f64>> = (0..agents).map(|_| (0..k).map(|_| r.gen_range(0.1..3.0)).collect()).collect();
        for g in [Kernel::Entropic { gamma }, Kernel::Expectation] {
            let lhs: f64 = shares.iter().zip(&ws).map(|(x, wa)| x / h * g.apply(&probs, wa)).sum();
            let pooled: Vec<f64> = (0..k).map(|j| shares.iter().zip(&ws).map(|(x, wa)| x / h * wa[j]).sum()).collect();
            prop_assert!(lhs <= g.apply(&probs, &pooled) + 1e-12);
        }
    }

    #[test]
    fn pasted_feasible_controls_stay_feasible(seed in any::<u64>(), gamma in 0.5f64..3.0) {
        let tree = ScenarioTree::binomial(2, 0.6, 1.0, -1.0).unwrap();
        let mut r = rng(seed);
        let spec = ControlSetSpec::RiskConstrained { risk: RiskMeasure::entropic(gamma), consumption: true };
        let t = 1;
        let p = StagePartition::random(&tree, t, 2, &mut r).unwrap();
        let atoms = tree.atoms(t).unwrap();
        let mut states = Vec::new();
        let mut controls = Vec::new();
        for _ in 0..p.block_count() {
            let xs: Vec<f64> = atoms.iter().map(|_| r.gen_range(0.1..3.0)).collect();
            let zs: Vec<Vec<f64>> = atoms.iter().zip(&xs).map(|(&n, &x)| {
                let grid = spec.discretize(&tree, n, &[x], 0.1).unwrap();
                grid[r.gen_range(0..grid.len())].clone()
            }).collect();
            states.push(ConditionalValue::new(&tree, t, xs).unwrap());
            controls.push(ConditionalValue::new(&tree, t, zs).unwrap());
        }
        let x = concatenate(&tree, &states, &p).unwrap();
        let z = concatenate(&tree, &controls, &p).unwrap();
        for (i, &n) in atoms.iter().enumerate() {
            prop_assert!(spec.contains(&tree, n, &[x.values()[i]], &z.values()[i]).unwrap());
        }
    }

    #[test]
    fn bounded_sets_discretize_below_the_suggestion(x in 0.05f64..4.0, h in 0.01f64..2.0, gamma in 0.5f64..3.0) {
        let tree = ScenarioTree::binomial(1, 0.6, 1.0, -1.0).unwrap();
        let node = tree.root();
        let spec = ControlSetSpec::RiskConstrained { risk: RiskMeasure::entropic(gamma), consumption: true };
        let radius = spec.bounding_radius(&tree, node, &[x]).unwrap();
        prop_assert!(radius.is_finite());
        match spec.discretize(&tree, node, &[x], h) {
            Ok(grid) => prop_assert!(!grid.is_empty()),
            Err(Error::ResolutionTooCoarse { suggested, .. }) => {
                let grid = spec.discretize(&tree, node, &[x], suggested * 0.99).unwrap();
                prop_assert!(!grid.is_empty());
            }
            Err(e) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn dimension_settles_after_its_index(prefix in proptest::collection::vec(1usize..4, 0..6), limit in 1usize..4, tail in 1usize..5) {
        let mut dims = prefix.clone();
        dims.extend(std::iter::repeat(limit).take(tail));
        let k = dimension_stabilization_index(&dims, limit).unwrap();
        prop_assert!(k <= prefix.len());
        prop_assert!(dims[k..].iter().all(|&d| d == limit));
    }

    #[test]
    fn sharing_allocation_is_feasible_and_ybar_monotone(seed in any::<u64>(), agents in 2usize..4, bump in 0.01f64..1.0) {
        let mut r = rng(seed);
        let tree = random_tree(seed ^ 5);
        let kernel = Kernel::Entropic { gamma: r.gen_range(0.3..2.0) };
        let problem = SharingProblem::random(&mut r, tree.clone(), agents, 0.5, 3.0, kernel).unwrap();
        let t = r.gen_range(0..tree.horizon());
        for stage in problem.closed_form_allocation(t).unwrap() {
            for (&node, x) in tree.atoms(stage.stage()).unwrap().iter().zip(stage.values()) {
                prop_assert!(x.iter().all(|&v| v > 0.0));
                let total = if stage.stage() == t {
                    // the endowments themselves, summed like `aggregate`
                    x.iter().sum()
                } else {
                    // each partial remainder is a float, so the right fold is exact
                    x.iter().rev().fold(0.0, |acc, v| v + acc)
                };
                prop_assert_eq!(total, problem.aggregate(node));
            }
        }
        let before = problem.ybar_all();
        let a = r.gen_range(0..agents);
        let node = r.gen_range(0..tree.len());
        let mut endow: Vec<Vec<f64>> = (0..agents)
            .map(|b| (0..tree.len()).map(|i| problem.endowment(b, NodeId(i))).collect())
            .collect();
        endow[a][node] += bump;
        let after = SharingProblem::new(tree.clone(), endow, kernel).unwrap().ybar_all();
        for (b, c) in before.iter().zip(&after) {
            prop_assert!(*c >= b - 1e-12, "{b} -> {c}");
        }
    }

    #[test]
    fn random_sets_are_reciprocal(seed in any::<u64>()) {
        let mut r = rng(seed);
        let samples = r.gen_range(1..=4);
        let points = r.gen_range(1..=5);
        let s = RandomClosedSet::random(&mut r, samples, points);
        let x = selections(&s);
        let back = set_from_stable(&x, &s.weights, s.points).unwrap();
        prop_assert_eq!(&back, &s);
        prop_assert!(selections(&back).same_members(&x));
        let family = castaing_family(&s);
        for w in 0..samples {
            let mut hit: Vec<usize> = family.iter().map(|f| f[w]).collect();
            hit.sort();
            hit.dedup();
            prop_assert_eq!(hit.as_slice(), s.at(w));
        }
    }

    #[test]
    fn stable_iff_product(seed in any::<u64>()) {
        let mut r = rng(seed);
        let samples = r.gen_range(1..=3);
        let points = r.gen_range(1..=3);
        let all: Vec<Vec<usize>> = SelectionSet::Product { sets: vec![(0..points).collect(); samples] }.iter().collect();
        let members: Vec<Vec<usize>> = all.iter().filter(|_| r.gen_bool(0.5)).cloned().collect();
        prop_assume!(!members.is_empty());
        let x = SelectionSet::explicit(samples, members).unwrap();
        let product = stable_hull(&x).unwrap().same_members(&x);
        prop_assert_eq!(is_closed_under_pasting(&x).unwrap(), product);
    }
}

fn random_grid_problem(seed: u64) -> (Problem, f64) {
    let mut r = rng(seed);
    let tree = random_tree(seed ^ 6);
    let grids = tree
        .nodes()
        .iter()
        .map(|n| {
            if n.children.is_empty() {
                Vec::new()
            } else {
                (0..r.gen_range(1..=4)).map(|_| vec![r.gen_range(-4..=4) as f64 * 0.25]).collect()
            }
        })
        .collect();
    let problem = Problem {
        tree,
        forward: ForwardGenerator::SelfFinancing,
        backward: BackwardGenerator::entropic(r.gen_range(0.5..2.0)),
        terminal: TerminalGenerator::Identity,
        controls: ControlSetSpec::ExplicitGrid { grids },
    };
    (problem, r.gen_range(-1.0..2.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dynamic_programming_matches_the_oracle(seed in any::<u64>()) {
        let (problem, x0) = random_grid_problem(seed);
        let config = SolverConfig { bounds: StateBounds::Reachable { max_states: 100_000 }, ..SolverConfig::default() };
        prop_assume!(count_assignments(&problem, &[x0], 0.1, 200_000).unwrap() <= 200_000);
        let dp = solve_backward(&problem, x0, &config).unwrap().root_value();
        let brute = brute_force_value(&problem, &[x0], 0.1, 200_000).unwrap().value;
        prop_assert!((dp - brute).abs() <= 1e-12, "{dp} vs {brute}");
    }

    #[test]
    fn value_function_commutes_with_pasting(seed in any::<u64>()) {
        let (problem, x0) = random_grid_problem(seed);
        let config = SolverConfig { bounds: StateBounds::Reachable { max_states: 100_000 }, ..SolverConfig::default() };
        prop_assume!(count_assignments(&problem, &[x0], 0.1, 200_000).unwrap() <= 200_000);
        let sol = solve_backward(&problem, x0, &config).unwrap();
        let tree = &problem.tree;
        let mut r = rng(seed ^ 7);
        let t = r.gen_range(0..=tree.horizon());
        let p = StagePartition::random(tree, t, 3, &mut r).unwrap();
        let vf = &sol.values[t];
        let eval = |x: &ConditionalValue<f64>| ConditionalValue::from_fn(tree, t, |n| vf.eval(tree, n, *x.at(tree, n))).unwrap();
        let parts: Vec<_> = (0..p.block_count()).map(|_| random_real(tree, t, &mut r, 3.0)).collect();
        let lhs = eval(&concatenate(tree, &parts, &p).unwrap());
        let images: Vec<_> = parts.iter().map(eval).collect();
        prop_assert_eq!(lhs, concatenate(tree, &images, &p).unwrap());
    }

    #[test]
    fn reoptimized_policy_never_loses_to_lookup(p in 0.52f64..0.7, gamma in 0.5f64..2.0) {
        let tree = ScenarioTree::binomial(2, p, 1.0, -1.0).unwrap();
        let backward = BackwardGenerator::entropic(gamma);
        let battery: Vec<f64> = (0..=20).map(|i| -5.0 + i as f64).collect();
        let k = estimate_k(&tree, &ForwardGenerator::SelfFinancing, &backward, &battery).unwrap().overall;
        let problem = Problem {
            tree,
            forward: ForwardGenerator::SelfFinancing,
            backward: backward.clone(),
            terminal: TerminalGenerator::Identity,
            controls: ControlSetSpec::UpperLevel(UpperLevelSet {
                forward: ForwardGenerator::SelfFinancing,
                backward,
                slack_by_stage: vec![k, 0.0, 0.0],
                nonnegative_last: false,
            }),
        };
        let config = SolverConfig::default();
        let sol = solve_backward(&problem, 1.0, &config).unwrap();
        let reopt = extract_policy(&problem, &sol, 1.0, &config).unwrap().value;
        let lookup = lookup_policy_value(&problem, &sol, 1.0).unwrap();
        prop_assert!(reopt >= lookup - 1e-9, "{reopt} < {lookup}");
    }
}
