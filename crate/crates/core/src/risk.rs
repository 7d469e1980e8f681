//! One-step conditional convex risk measures `rho_t: L0_{t+1} -> L0_t`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::conditional::{check_stability, random_stability_cases, ConditionalReal, ConditionalValue};
use crate::error::{Error, Result};
use crate::report::{CheckEntry, CheckReport};
use crate::tree::{NodeId, ScenarioTree};

/// `log(sum p_i exp(a_i) / sum p_i)` with max-shift stabilization.
///
/// `+inf` terms dominate, `-inf` terms vanish; an all-`-inf` input gives
/// `-inf`. Normalizing by the probability mass makes constants exact.
pub fn log_mean_exp(probs: &[f64], exponents: &[f64]) -> f64 {
    let mut top = f64::NEG_INFINITY;
    for &a in exponents {
        if a > top {
            top = a;
        }
    }
    if !top.is_finite() {
        return top;
    }
    let mut mass = 0.0;
    let mut acc = 0.0;
    for (&p, &a) in probs.iter().zip(exponents) {
        mass += p;
        acc += p * (a - top).exp();
    }
    top + (acc / mass).ln()
}

/// Entropic risk `(1/gamma) log E[exp(-gamma v)]`.
pub fn entropic_risk(probs: &[f64], values: &[f64], gamma: f64) -> f64 {
    let scaled: Vec<f64> = values.iter().map(|v| -gamma * v).collect();
    log_mean_exp(probs, &scaled) / gamma
}

/// Per-node risk aversion for the entropic measure.
#[derive(Debug, Clone, PartialEq)]
pub enum Gamma {
    Uniform(f64),
    /// Indexed by node id; only entries of evaluation nodes are read.
    PerNode(Vec<f64>),
}

impl Gamma {
    pub fn at(&self, node: NodeId) -> Result<f64> {
        let g = match self {
            Gamma::Uniform(g) => *g,
            Gamma::PerNode(v) => *v.get(node.0).ok_or_else(|| {
                Error::InvalidInput(format!("no risk aversion given for node {node}"))
            })?,
        };
        if g > 0.0 && g.is_finite() {
            Ok(g)
        } else {
            Err(Error::NonPositiveGamma(g))
        }
    }
}

/// `(probabilities, child values) -> risk`.
pub type RiskKernel = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum RiskMeasure {
    Entropic { gamma: Gamma },
    NegativeExpectation,
    Custom { name: String, kernel: RiskKernel },
}

impl fmt::Debug for RiskMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RiskMeasure::Entropic { gamma } => f.debug_struct("Entropic").field("gamma", gamma).finish(),
            RiskMeasure::NegativeExpectation => f.write_str("NegativeExpectation"),
            RiskMeasure::Custom { name, .. } => f.debug_struct("Custom").field("name", name).finish(),
        }
    }
}

impl RiskMeasure {
    pub fn entropic(gamma: f64) -> Self {
        RiskMeasure::Entropic {
            gamma: Gamma::Uniform(gamma),
        }
    }

    pub fn custom(name: impl Into<String>, kernel: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        RiskMeasure::Custom {
            name: name.into(),
            kernel: Arc::new(kernel),
        }
    }

    /// Risk at `node` of the child values `values` (one per child, with
    /// transition probabilities `probs`).
    pub fn evaluate_kernel(&self, node: NodeId, probs: &[f64], values: &[f64]) -> Result<f64> {
        match self {
            RiskMeasure::Entropic { gamma } => {
                let g = gamma.at(node)?;
                Ok(entropic_risk(probs, values, g))
            }
            RiskMeasure::NegativeExpectation => {
                let mass: f64 = probs.iter().sum();
                Ok(-probs.iter().zip(values).map(|(p, v)| p * v).sum::<f64>() / mass)
            }
            RiskMeasure::Custom { kernel, .. } => Ok(kernel(probs, values)),
        }
    }

    /// Risk at `node` given child values ordered as `tree.children(node)`.
    pub fn evaluate_at(&self, tree: &ScenarioTree, node: NodeId, child_values: &[f64]) -> Result<f64> {
        let children = tree.children(node);
        if children.len() != child_values.len() {
            return Err(Error::DimensionMismatch {
                node,
                expected: children.len(),
                found: child_values.len(),
            });
        }
        for (&c, v) in children.iter().zip(child_values) {
            if !v.is_finite() {
                return Err(Error::NonFinite { node: c });
            }
        }
        let probs: Vec<f64> = children.iter().map(|&c| tree.edge_probability(c)).collect();
        self.evaluate_kernel(node, &probs, child_values)
    }

    /// `rho_t(x)` for a stage-`t+1` value `x`.
    pub fn evaluate(&self, tree: &ScenarioTree, x: &ConditionalReal) -> Result<ConditionalReal> {
        let s = x.stage();
        if s == 0 {
            return Err(Error::StageOutOfRange {
                stage: s,
                horizon: tree.horizon(),
            });
        }
        ConditionalValue::try_from_fn(tree, s - 1, |n| {
            let vals: Vec<f64> = tree.children(n).iter().map(|&c| *x.at(tree, c)).collect();
            self.evaluate_at(tree, n, &vals)
        })
    }

    /// Randomized check of normalization, monotonicity, translation
    /// invariance, convexity, stability and sensitivity to large losses.
    pub fn check_axioms<R: Rng>(&self, tree: &ScenarioTree, trials: usize, rng: &mut R) -> CheckReport {
        const TOL: f64 = 1e-10;
        let mut report = CheckReport::new("risk measure axioms");
        let mut norm = CheckEntry::new("normalized", "rho(0) = 0 exactly");
        let mut mono = CheckEntry::new("monotone", "x >= y implies rho(x) <= rho(y)");
        let mut trans = CheckEntry::new("translation", "rho(x + m) = rho(x) - m");
        let mut conv = CheckEntry::new("convex", "rho(lx + (1-l)y) <= l rho(x) + (1-l) rho(y)");
        let mut stab = CheckEntry::new("stable", "commutes with pasting");
        let mut sens = CheckEntry::new("sensitive", "rho(2^j y) >= 1e6 for some j <= 60 where y has downside");

        let horizon = tree.horizon();
        for trial in 0..trials {
            let t = rng.gen_range(0..horizon);
            let s = t + 1;
            let scale = [1.0, 5.0, 20.0][trial % 3];
            let draw = |rng: &mut R| ConditionalValue::from_fn(tree, s, |_| rng.gen_range(-scale..scale));
            let (x, y) = match (draw(rng), draw(rng)) {
                (Ok(x), Ok(y)) => (x, y),
                _ => continue,
            };
            let m = ConditionalValue::from_fn(tree, t, |_| rng.gen_range(-scale..scale)).unwrap();
            let lam = ConditionalValue::from_fn(tree, t, |_| rng.gen_range(0.0..=1.0)).unwrap();
            let bump = ConditionalValue::from_fn(tree, s, |_| rng.gen_range(0.0..scale)).unwrap();

            let outcome = (|| -> Result<()> {
                let zero = ConditionalValue::constant(tree, s, 0.0)?;
                let r0 = self.evaluate(tree, &zero)?;
                let worst = r0.values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
                norm.record(worst, || format!("stage {t}: rho(0) = {:?}", r0.values()));

                let rx = self.evaluate(tree, &x)?;
                let ry = self.evaluate(tree, &y)?;

                let higher = ConditionalValue::new(
                    tree,
                    s,
                    x.values().iter().zip(bump.values()).map(|(a, b)| a + b).collect(),
                )?;
                let rh = self.evaluate(tree, &higher)?;
                let excess = rh.values().iter().zip(rx.values()).map(|(h, l)| h - l - TOL).fold(f64::NEG_INFINITY, f64::max);
                mono.record(excess, || format!("stage {t}, x = {:?}, x + b = {:?}", x.values(), higher.values()));

                let shifted = ConditionalValue::from_fn(tree, s, |c| x.at(tree, c) + m.at(tree, tree.ancestor_at(c, t)))?;
                let rs = self.evaluate(tree, &shifted)?;
                let excess = rs
                    .values()
                    .iter()
                    .zip(rx.values())
                    .zip(m.values())
                    .map(|((a, b), mm)| (a - (b - mm)).abs() - TOL)
                    .fold(f64::NEG_INFINITY, f64::max);
                trans.record(excess, || format!("stage {t}, x = {:?}, m = {:?}", x.values(), m.values()));

                let mix = ConditionalValue::from_fn(tree, s, |c| {
                    let l = *lam.at(tree, tree.ancestor_at(c, t));
                    l * x.at(tree, c) + (1.0 - l) * y.at(tree, c)
                })?;
                let rm = self.evaluate(tree, &mix)?;
                let excess = (0..rm.len())
                    .map(|i| {
                        let l = lam.values()[i];
                        rm.values()[i] - (l * rx.values()[i] + (1.0 - l) * ry.values()[i]) - TOL
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
                conv.record(excess, || format!("stage {t}, x = {:?}, y = {:?}, lambda = {:?}", x.values(), y.values(), lam.values()));

                // Downside on every node: the first child of each parent is negative.
                let loss = ConditionalValue::from_fn(tree, s, |c| {
                    let parent = tree.parent(c).expect("stage >= 1");
                    if tree.children(parent)[0] == c {
                        -x.at(tree, c).abs().max(0.1)
                    } else {
                        *y.at(tree, c)
                    }
                })?;
                for (i, &n) in tree.atoms(t)?.iter().enumerate() {
                    let mut hit = false;
                    for j in 0..=60 {
                        let k = (2.0f64).powi(j);
                        let scaled = ConditionalValue::from_fn(tree, s, |c| k * loss.at(tree, c))?;
                        if self.evaluate(tree, &scaled)?.values()[i] >= 1e6 {
                            hit = true;
                            break;
                        }
                    }
                    if hit {
                        sens.pass();
                    } else {
                        sens.fail(format!("node {n}: no blow-up for y = {:?}", loss.values()));
                    }
                }
                Ok(())
            })();
            if let Err(e) = outcome {
                norm.fail(format!("evaluation failed: {e}"));
            }
        }

        let cases = random_stability_cases(tree, horizon, horizon - 1, trials.max(1), 4, rng, |r, _| r.gen_range(-5.0..5.0));
        match cases {
            Ok(cases) => {
                let rep = check_stability(tree, &cases, 1e-12, |x: &ConditionalReal| self.evaluate(tree, x));
                stab.trials = rep.cases;
                if let Some(v) = rep.violations.first() {
                    stab.passed = false;
                    stab.worst = v.deviation;
                    stab.witness = Some(format!("case {} node {}", v.case, v.node));
                }
                if let Some(e) = rep.evaluation_failures.first() {
                    stab.passed = false;
                    stab.witness = Some(e.clone());
                }
            }
            Err(e) => stab.fail(e.to_string()),
        }

        for e in [norm, mono, trans, conv, stab, sens] {
            report.push(e);
        }
        report
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn entropic_example_value() {
        let tree = ScenarioTree::binomial(1, 0.5, 1.0, -1.0).unwrap();
        let rho = RiskMeasure::entropic(1.0);
        let v = rho.evaluate_at(&tree, tree.root(), &[0.0, -1.0]).unwrap();
        assert!((v - (0.5 + 0.5 * std::f64::consts::E).ln()).abs() < 1e-12);
        assert!((v - 0.62011).abs() < 1e-5);
    }

    #[test]
    fn normalization_is_exact() {
        let tree = ScenarioTree::trinomial(2, [0.2, 0.3, 0.5], [1.0, 0.0, -1.0]).unwrap();
        for g in [0.1, 1.0, 7.0] {
            let zero = ConditionalValue::constant(&tree, 2, 0.0).unwrap();
            let r = RiskMeasure::entropic(g).evaluate(&tree, &zero).unwrap();
            assert!(r.values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn rejects_nonpositive_gamma() {
        let tree = ScenarioTree::binomial(1, 0.5, 1.0, -1.0).unwrap();
        let rho = RiskMeasure::entropic(0.0);
        assert_eq!(
            rho.evaluate_at(&tree, tree.root(), &[0.0, 0.0]),
            Err(Error::NonPositiveGamma(0.0))
        );
        let per_node = RiskMeasure::Entropic {
            gamma: Gamma::PerNode(vec![-1.0, 1.0, 1.0]),
        };
        assert!(per_node.evaluate_at(&tree, tree.root(), &[0.0, 0.0]).is_err());
    }

    #[test]
    fn large_arguments_do_not_overflow() {
        let v = entropic_risk(&[0.5, 0.5], &[-1e6, 1e6], 2.0);
        assert!((v - (1e6 + 0.5f64.ln() / 2.0)).abs() < 1e-6);
        assert_eq!(log_mean_exp(&[0.5, 0.5], &[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert_eq!(log_mean_exp(&[0.5, 0.5], &[f64::INFINITY, 0.0]), f64::INFINITY);
    }

    #[test]
    fn entropic_passes_all_axioms() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for g in [0.5, 1.0, 3.0] {
            let tree = ScenarioTree::random(&mut rng, 3, 3).unwrap();
            let report = RiskMeasure::entropic(g).check_axioms(&tree, 40, &mut rng);
            assert!(report.all_passed(), "{report}");
        }
    }

    #[test]
    fn negative_expectation_is_not_sensitive() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tree = ScenarioTree::binomial(2, 0.5, 1.0, -1.0).unwrap();
        let report = RiskMeasure::NegativeExpectation.check_axioms(&tree, 20, &mut rng);
        assert!(report.get("monotone").unwrap().passed);
        assert!(report.get("convex").unwrap().passed);
        assert!(report.get("normalized").unwrap().passed);
    }

    #[test]
    fn nonmonotone_map_is_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tree = ScenarioTree::binomial(2, 0.6, 1.0, -1.0).unwrap();
        let squared = RiskMeasure::custom("mean square", |p: &[f64], v: &[f64]| {
            p.iter().zip(v).map(|(p, v)| p * v * v).sum()
        });
        let report = squared.check_axioms(&tree, 30, &mut rng);
        assert!(!report.get("monotone").unwrap().passed);
        assert!(!report.get("translation").unwrap().passed);
        assert!(!report.all_passed());
    }
}
