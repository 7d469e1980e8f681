//! Stage-measurable random objects on a scenario tree.
//!
//! A [`ConditionalValue`] at stage `t` carries one payload per stage-`t` atom.
//! Pasting, the conditional metric, essential suprema and conditional
//! expectations are all computed atom by atom, which is exact on a finite
//! probability space.
//!
//! Extended reals use the IEEE infinities as sentinels. Sums follow
//! [`ext_add`]: `-inf` absorbs everything, so `-inf + inf = -inf`.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::report::{CheckEntry, CheckReport};
use crate::tree::{NodeId, ScenarioTree, StagePartition};

/// Extended-real addition with `-inf` absorbing.
pub fn ext_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY || b == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        a + b
    }
}

/// Payloads that carry a metric: `|a - b|` for extended reals (infinite when
/// exactly one side is infinite), Euclidean for vectors, discrete for
/// integers.
pub trait MetricPayload {
    /// `None` signals a dimension mismatch.
    fn distance(&self, other: &Self) -> Option<f64>;

    fn dimension(&self) -> usize {
        1
    }
}

impl MetricPayload for f64 {
    fn distance(&self, other: &Self) -> Option<f64> {
        if self == other {
            Some(0.0)
        } else {
            Some((self - other).abs())
        }
    }
}

impl MetricPayload for Vec<f64> {
    fn distance(&self, other: &Self) -> Option<f64> {
        if self.len() != other.len() {
            return None;
        }
        Some(
            self.iter()
                .zip(other)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt(),
        )
    }

    fn dimension(&self) -> usize {
        self.len()
    }
}

impl MetricPayload for u64 {
    fn distance(&self, other: &Self) -> Option<f64> {
        Some(if self == other { 0.0 } else { 1.0 })
    }
}

impl MetricPayload for bool {
    fn distance(&self, other: &Self) -> Option<f64> {
        Some(if self == other { 0.0 } else { 1.0 })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalValue<T> {
    stage: usize,
    values: Vec<T>,
}

pub type ConditionalReal = ConditionalValue<f64>;
pub type ConditionalVector = ConditionalValue<Vec<f64>>;
pub type ConditionalInteger = ConditionalValue<u64>;

impl<T> ConditionalValue<T> {
    /// One value per stage-`stage` atom, in `tree.atoms(stage)` order.
    pub fn new(tree: &ScenarioTree, stage: usize, values: Vec<T>) -> Result<Self> {
        let n = tree.atoms(stage)?.len();
        if values.len() != n {
            return Err(Error::InvalidInput(format!(
                "{} values for {} atoms at stage {stage}",
                values.len(),
                n
            )));
        }
        Ok(Self { stage, values })
    }

    pub fn from_fn(tree: &ScenarioTree, stage: usize, f: impl FnMut(NodeId) -> T) -> Result<Self> {
        let values = tree.atoms(stage)?.iter().copied().map(f).collect();
        Ok(Self { stage, values })
    }

    pub fn try_from_fn(
        tree: &ScenarioTree,
        stage: usize,
        f: impl FnMut(NodeId) -> Result<T>,
    ) -> Result<Self> {
        let values = tree
            .atoms(stage)?
            .iter()
            .copied()
            .map(f)
            .collect::<Result<Vec<T>>>()?;
        Ok(Self { stage, values })
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Payload on `node`, which must belong to this value's stage.
    pub fn at(&self, tree: &ScenarioTree, node: NodeId) -> &T {
        debug_assert_eq!(tree.stage(node), self.stage);
        &self.values[tree.position(node)]
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> ConditionalValue<U> {
        ConditionalValue {
            stage: self.stage,
            values: self.values.iter().map(f).collect(),
        }
    }
}

impl<T: Clone> ConditionalValue<T> {
    pub fn constant(tree: &ScenarioTree, stage: usize, value: T) -> Result<Self> {
        let n = tree.atoms(stage)?.len();
        Ok(Self {
            stage,
            values: vec![value; n],
        })
    }
}

/// Pastes `parts[k]` on block `k` of `partition`.
pub fn concatenate<T: Clone>(
    tree: &ScenarioTree,
    parts: &[ConditionalValue<T>],
    partition: &StagePartition,
) -> Result<ConditionalValue<T>> {
    let stage = partition.stage();
    if parts.len() != partition.block_count() {
        return Err(Error::InvalidPartition(format!(
            "{} parts for {} blocks",
            parts.len(),
            partition.block_count()
        )));
    }
    for p in parts {
        if p.stage != stage {
            return Err(Error::StageMismatch {
                expected: stage,
                found: p.stage,
            });
        }
    }
    let n = tree.atoms(stage)?.len();
    let values = (0..n)
        .map(|i| parts[partition.blocks()[i]].values[i].clone())
        .collect();
    Ok(ConditionalValue { stage, values })
}

/// Pasting inside a conditional Euclidean space whose dimension varies by
/// atom: every pasted vector must have the dimension prescribed on its atom.
pub fn concatenate_with_dims(
    tree: &ScenarioTree,
    parts: &[ConditionalVector],
    partition: &StagePartition,
    dims: &ConditionalValue<usize>,
) -> Result<ConditionalVector> {
    let out = concatenate(tree, parts, partition)?;
    if dims.stage != out.stage {
        return Err(Error::StageMismatch {
            expected: out.stage,
            found: dims.stage,
        });
    }
    let atoms = tree.atoms(out.stage)?;
    for (i, v) in out.values.iter().enumerate() {
        if v.len() != dims.values[i] {
            return Err(Error::DimensionMismatch {
                node: atoms[i],
                expected: dims.values[i],
                found: v.len(),
            });
        }
    }
    Ok(out)
}

/// Nodewise conditional metric.
pub fn metric<T: MetricPayload>(
    tree: &ScenarioTree,
    x: &ConditionalValue<T>,
    y: &ConditionalValue<T>,
) -> Result<ConditionalReal> {
    if x.stage != y.stage {
        return Err(Error::StageMismatch {
            expected: x.stage,
            found: y.stage,
        });
    }
    let atoms = tree.atoms(x.stage)?;
    let values = x
        .values
        .iter()
        .zip(&y.values)
        .enumerate()
        .map(|(i, (a, b))| {
            a.distance(b).ok_or(Error::DimensionMismatch {
                node: atoms[i],
                expected: a.dimension(),
                found: b.dimension(),
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ConditionalValue {
        stage: x.stage,
        values,
    })
}

fn nodewise_fold(
    family: &[ConditionalReal],
    pick: impl Fn(f64, f64) -> f64,
) -> Result<ConditionalReal> {
    let first = family.first().ok_or(Error::EmptyFamily)?;
    let mut out = first.clone();
    for member in &family[1..] {
        if member.stage != first.stage {
            return Err(Error::StageMismatch {
                expected: first.stage,
                found: member.stage,
            });
        }
        for (o, v) in out.values.iter_mut().zip(&member.values) {
            *o = pick(*o, *v);
        }
    }
    Ok(out)
}

/// Essential supremum of a finite family: the nodewise maximum.
pub fn essential_sup(family: &[ConditionalReal]) -> Result<ConditionalReal> {
    nodewise_fold(family, |a, b| if b > a { b } else { a })
}

pub fn essential_inf(family: &[ConditionalReal]) -> Result<ConditionalReal> {
    nodewise_fold(family, |a, b| if b < a { b } else { a })
}

/// `E[x | F_t]` for a stage-`s` value `x` and `t <= s`.
pub fn conditional_expectation(
    tree: &ScenarioTree,
    x: &ConditionalReal,
    t: usize,
) -> Result<ConditionalReal> {
    if t > x.stage {
        return Err(Error::StageMismatch {
            expected: x.stage,
            found: t,
        });
    }
    let source = tree.atoms(x.stage)?;
    for (i, v) in x.values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite { node: source[i] });
        }
    }
    ConditionalValue::try_from_fn(tree, t, |n| {
        Ok(tree
            .conditional_probability(n, x.stage)?
            .into_iter()
            .map(|(m, p)| p * x.values[tree.position(m)])
            .sum())
    })
}

/// Evaluates a measurable index into a sequence: on each atom, the element
/// `sequence[index(atom)]` at that atom.
pub fn select_by_index<T: Clone>(
    tree: &ScenarioTree,
    sequence: &[ConditionalValue<T>],
    index: &ConditionalInteger,
) -> Result<ConditionalValue<T>> {
    let atoms = tree.atoms(index.stage)?;
    let values = index
        .values
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let member = sequence.get(k as usize).ok_or_else(|| {
                Error::InvalidInput(format!("index {k} at {} exceeds sequence length", atoms[i]))
            })?;
            if member.stage != index.stage {
                return Err(Error::StageMismatch {
                    expected: index.stage,
                    found: member.stage,
                });
            }
            Ok(member.values[i].clone())
        })
        .collect::<Result<Vec<T>>>()?;
    Ok(ConditionalValue {
        stage: index.stage,
        values,
    })
}

/// One pasting experiment: inputs pasted along `partition` (given at the
/// stability stage and lifted to the input stage).
#[derive(Debug, Clone)]
pub struct StabilityCase<A> {
    pub parts: Vec<ConditionalValue<A>>,
    pub partition: StagePartition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityViolation {
    pub case: usize,
    pub node: NodeId,
    pub deviation: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StabilityReport {
    pub cases: usize,
    pub violations: Vec<StabilityViolation>,
    pub evaluation_failures: Vec<String>,
}

impl StabilityReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.evaluation_failures.is_empty()
    }
}

/// Checks `f(sum_k 1_{A_k} x_k) = sum_k 1_{A_k} f(x_k)` on every case, up to
/// `tolerance` in the output metric.
pub fn check_stability<A, B, F>(
    tree: &ScenarioTree,
    cases: &[StabilityCase<A>],
    tolerance: f64,
    f: F,
) -> StabilityReport
where
    A: Clone,
    B: Clone + MetricPayload,
    F: Fn(&ConditionalValue<A>) -> Result<ConditionalValue<B>>,
{
    let mut report = StabilityReport {
        cases: cases.len(),
        ..Default::default()
    };
    for (k, case) in cases.iter().enumerate() {
        let outcome = (|| -> Result<Option<StabilityViolation>> {
            let input_stage = case.parts.first().ok_or(Error::EmptyFamily)?.stage;
            let lifted = case.partition.lift(tree, input_stage)?;
            let pasted = concatenate(tree, &case.parts, &lifted)?;
            let lhs = f(&pasted)?;
            let images = case.parts.iter().map(&f).collect::<Result<Vec<_>>>()?;
            let out_partition = case.partition.lift(tree, lhs.stage)?;
            let rhs = concatenate(tree, &images, &out_partition)?;
            let atoms = tree.atoms(lhs.stage)?;
            for (i, (a, b)) in lhs.values.iter().zip(&rhs.values).enumerate() {
                let d = a.distance(b).unwrap_or(f64::INFINITY);
                if d.is_nan() || d > tolerance {
                    return Ok(Some(StabilityViolation {
                        case: k,
                        node: atoms[i],
                        deviation: d,
                    }));
                }
            }
            Ok(None)
        })();
        match outcome {
            Ok(Some(v)) => report.violations.push(v),
            Ok(None) => {}
            Err(e) => report.evaluation_failures.push(format!("case {k}: {e}")),
        }
    }
    report
}

/// Random pasting experiments: `cases` draws of a partition at
/// `partition_stage` (at most `max_blocks` blocks) and one random input at
/// `input_stage` per block.
pub fn random_stability_cases<A, R: Rng>(
    tree: &ScenarioTree,
    input_stage: usize,
    partition_stage: usize,
    cases: usize,
    max_blocks: usize,
    rng: &mut R,
    mut payload: impl FnMut(&mut R, NodeId) -> A,
) -> Result<Vec<StabilityCase<A>>> {
    let atoms = tree.atoms(input_stage)?.to_vec();
    (0..cases)
        .map(|_| {
            let partition = StagePartition::random(tree, partition_stage, max_blocks, rng)?;
            let parts = (0..partition.block_count())
                .map(|_| ConditionalValue {
                    stage: input_stage,
                    values: atoms.iter().map(|&n| payload(rng, n)).collect(),
                })
                .collect();
            Ok(StabilityCase { parts, partition })
        })
        .collect()
}

/// Records the metric axioms on the triple `(a, b, c)` and the pasting
/// axioms on parts `x`, `y` along `partition`.
fn record_axioms<T: Clone + PartialEq + MetricPayload + fmt::Debug>(
    tree: &ScenarioTree,
    triple: [&ConditionalValue<T>; 3],
    x: &[ConditionalValue<T>],
    y: &[ConditionalValue<T>],
    partition: &StagePartition,
    triangle_tolerance: f64,
    entries: &mut [CheckEntry; 5],
) -> Result<()> {
    let atoms = tree.atoms(partition.stage())?;
    let [a, b, c] = triple;
    let dab = metric(tree, a, b)?;
    let dba = metric(tree, b, a)?;
    let daa = metric(tree, a, a)?;
    let dbc = metric(tree, b, c)?;
    let dac = metric(tree, a, c)?;
    for (i, &node) in atoms.iter().enumerate() {
        let same = a.values[i] == b.values[i];
        let bad_identity = daa.values[i] != 0.0 || (dab.values[i] == 0.0) != same;
        entries[0].record(if bad_identity { 1.0 } else { 0.0 }, || {
            format!("node {node}: d(x,x)={}, d(x,y)={}", daa.values[i], dab.values[i])
        });
        let asym = exact_gap(dab.values[i], dba.values[i]);
        entries[1].record(asym, || format!("node {node}: {} vs {}", dab.values[i], dba.values[i]));
        let bound = dab.values[i] + dbc.values[i];
        let excess = if bound.is_infinite() {
            0.0
        } else {
            dac.values[i] - bound - triangle_tolerance
        };
        entries[2].record(excess, || {
            format!("node {node}: d(x,z)={} > {} + {}", dac.values[i], dab.values[i], dbc.values[i])
        });
    }

    let px = concatenate(tree, x, partition)?;
    let py = concatenate(tree, y, partition)?;
    // any element agreeing with x_k on block k must be the paste itself
    let witness: Vec<T> = partition
        .blocks()
        .iter()
        .enumerate()
        .map(|(i, &k)| x[k].values[i].clone())
        .collect();
    let agrees = partition.blocks().iter().enumerate().all(|(i, &k)| {
        x[k].values[i].distance(&px.values[i]) == Some(0.0)
    });
    let unique = px.values == witness && concatenate(tree, x, partition)? == px;
    entries[3].record(if agrees && unique { 0.0 } else { 1.0 }, || {
        format!("paste mismatch on {partition:?}")
    });

    let lhs = metric(tree, &px, &py)?;
    let pieces = x
        .iter()
        .zip(y)
        .map(|(u, v)| metric(tree, u, v))
        .collect::<Result<Vec<_>>>()?;
    let rhs = concatenate(tree, &pieces, partition)?;
    let gap = lhs
        .values
        .iter()
        .zip(&rhs.values)
        .map(|(l, r)| exact_gap(*l, *r))
        .fold(0.0, f64::max);
    entries[4].record(gap, || format!("lhs {:?} rhs {:?}", lhs.values, rhs.values));
    Ok(())
}

/// Zero on exact equality, otherwise a positive size of the difference.
fn exact_gap(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        let d = (a - b).abs();
        if d.is_nan() { f64::INFINITY } else { d.max(f64::MIN_POSITIVE) }
    }
}

fn random_scalar<R: Rng>(rng: &mut R) -> f64 {
    match rng.gen_range(0..20) {
        0 => f64::INFINITY,
        1 => f64::NEG_INFINITY,
        // repeated values exercise d = 0 between independent draws
        2 => 1.0,
        _ => rng.gen_range(-10.0..10.0),
    }
}

fn axioms_for<T, R, G>(
    tree: &ScenarioTree,
    partition: &StagePartition,
    triangle_tolerance: f64,
    entries: &mut [CheckEntry; 5],
    rng: &mut R,
    mut draw: G,
) -> Result<()>
where
    T: Clone + PartialEq + MetricPayload + fmt::Debug,
    R: Rng,
    G: FnMut(&mut R) -> Vec<T>,
{
    let t = partition.stage();
    let mut fresh = |rng: &mut R| ConditionalValue { stage: t, values: draw(rng) };
    let k = partition.block_count();
    let x: Vec<_> = (0..k).map(|_| fresh(rng)).collect();
    let y: Vec<_> = (0..k).map(|_| fresh(rng)).collect();
    let z = fresh(rng);
    record_axioms(tree, [&x[0], &y[0], &z], &x, &y, partition, triangle_tolerance, entries)
}

/// Randomized check of the conditional metric axioms and pasting on
/// extended reals, conditional vectors (dimension varying by atom) and
/// conditional integers. Each trial draws a random tree, a stage, a
/// partition and inputs for every block.
pub fn check_metric_axioms<R: Rng>(
    trials: usize,
    triangle_tolerance: f64,
    rng: &mut R,
) -> Result<CheckReport> {
    let mut entries = [
        CheckEntry::new("identity", "d(x,y) = 0 exactly where x = y"),
        CheckEntry::new("symmetry", "d(x,y) = d(y,x)"),
        CheckEntry::new("triangle", "d(x,z) <= d(x,y) + d(y,z)"),
        CheckEntry::new("pasting", "the paste is unique and agrees with each part on its block"),
        CheckEntry::new("metric stability", "d(paste x, paste y) = paste d(x_k, y_k)"),
    ];
    for _ in 0..trials {
        let horizon = rng.gen_range(1..=3);
        let tree = ScenarioTree::random(rng, horizon, 3)?;
        let t = rng.gen_range(0..=horizon);
        let partition = StagePartition::random(&tree, t, 3, rng)?;
        let n = tree.atoms(t)?.len();
        let tol = triangle_tolerance;

        axioms_for(&tree, &partition, tol, &mut entries, rng, |rng: &mut R| {
            (0..n).map(|_| random_scalar(rng)).collect::<Vec<f64>>()
        })?;
        let dims: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=3)).collect();
        axioms_for(&tree, &partition, tol, &mut entries, rng, |rng: &mut R| {
            dims.iter()
                .map(|&d| (0..d).map(|_| rng.gen_range(-5.0..5.0)).collect::<Vec<f64>>())
                .collect::<Vec<Vec<f64>>>()
        })?;
        axioms_for(&tree, &partition, tol, &mut entries, rng, |rng: &mut R| {
            (0..n).map(|_| rng.gen_range(0..3u64)).collect::<Vec<u64>>()
        })?;
    }
    let mut report = CheckReport::new("conditional metric axioms");
    for e in entries {
        report.push(e);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn binomial() -> ScenarioTree {
        ScenarioTree::binomial(2, 0.6, 1.0, -1.0).unwrap()
    }

    #[test]
    fn metric_axioms_hold_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let report = check_metric_axioms(60, 1e-12, &mut rng).unwrap();
        assert!(report.all_passed(), "{report}");
        assert!(report.get("triangle").unwrap().trials > 60);
    }

    #[test]
    fn pasting_single_block_is_identity() {
        let tree = binomial();
        let x = ConditionalValue::new(&tree, 1, vec![5.0, 7.0]).unwrap();
        let p = StagePartition::trivial(&tree, 1).unwrap();
        assert_eq!(concatenate(&tree, &[x.clone()], &p).unwrap(), x);
    }

    #[test]
    fn pasting_two_blocks() {
        let tree = binomial();
        let x = ConditionalValue::new(&tree, 1, vec![5.0, 7.0]).unwrap();
        let y = ConditionalValue::new(&tree, 1, vec![9.0, 3.0]).unwrap();
        let p = StagePartition::discrete(&tree, 1).unwrap();
        let z = concatenate(&tree, &[x, y], &p).unwrap();
        assert_eq!(z.values(), &[5.0, 3.0]);
    }

    #[test]
    fn pasting_checks_dimensions() {
        let tree = binomial();
        let x = ConditionalValue::new(&tree, 1, vec![vec![1.0], vec![1.0, 2.0]]).unwrap();
        let y = ConditionalValue::new(&tree, 1, vec![vec![0.0, 0.0], vec![3.0]]).unwrap();
        let p = StagePartition::discrete(&tree, 1).unwrap();
        let dims = ConditionalValue::new(&tree, 1, vec![1usize, 1]).unwrap();
        assert!(matches!(
            concatenate_with_dims(&tree, &[x.clone(), y.clone()], &p, &dims),
            Ok(_)
        ));
        let dims = ConditionalValue::new(&tree, 1, vec![1usize, 2]).unwrap();
        assert!(matches!(
            concatenate_with_dims(&tree, &[x, y], &p, &dims),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn metric_examples() {
        let tree = binomial();
        let x = ConditionalValue::new(&tree, 1, vec![1.0, 4.0]).unwrap();
        let y = ConditionalValue::new(&tree, 1, vec![3.0, 1.0]).unwrap();
        assert_eq!(metric(&tree, &x, &y).unwrap().values(), &[2.0, 3.0]);
        assert_eq!(metric(&tree, &x, &x).unwrap().values(), &[0.0, 0.0]);
        let a: ConditionalInteger = ConditionalValue::new(&tree, 1, vec![2, 2]).unwrap();
        let b: ConditionalInteger = ConditionalValue::new(&tree, 1, vec![2, 5]).unwrap();
        assert_eq!(metric(&tree, &a, &b).unwrap().values(), &[0.0, 1.0]);
        let u = ConditionalValue::new(&tree, 1, vec![vec![1.0], vec![0.0]]).unwrap();
        let v = ConditionalValue::new(&tree, 1, vec![vec![1.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(metric(&tree, &u, &v), Err(Error::DimensionMismatch { .. })));
        let z = ConditionalValue::new(&tree, 2, vec![0.0; 4]).unwrap();
        assert!(matches!(metric(&tree, &x, &z), Err(Error::StageMismatch { .. })));
    }

    #[test]
    fn essential_sup_examples() {
        let tree = binomial();
        let a = ConditionalValue::new(&tree, 1, vec![1.0, 5.0]).unwrap();
        let b = ConditionalValue::new(&tree, 1, vec![4.0, 2.0]).unwrap();
        assert_eq!(essential_sup(&[a.clone()]).unwrap(), a);
        assert_eq!(essential_sup(&[a.clone(), b.clone()]).unwrap().values(), &[4.0, 5.0]);
        assert_eq!(essential_inf(&[a.clone(), b]).unwrap().values(), &[1.0, 2.0]);
        let c = ConditionalValue::new(&tree, 1, vec![f64::INFINITY, 0.0]).unwrap();
        assert_eq!(essential_sup(&[a, c]).unwrap().values()[0], f64::INFINITY);
        assert_eq!(essential_sup(&[]), Err(Error::EmptyFamily));
    }

    #[test]
    fn expectation_examples() {
        let tree = binomial();
        let x = ConditionalValue::new(&tree, 1, vec![10.0, 0.0]).unwrap();
        let e = conditional_expectation(&tree, &x, 0).unwrap();
        assert!((e.values()[0] - 6.0).abs() < 1e-12);
        let c = ConditionalValue::constant(&tree, 2, 3.5).unwrap();
        let e = conditional_expectation(&tree, &c, 1).unwrap();
        assert!(e.values().iter().all(|v| (v - 3.5).abs() < 1e-12));
        let bad = ConditionalValue::new(&tree, 1, vec![f64::NEG_INFINITY, 0.0]).unwrap();
        assert!(matches!(conditional_expectation(&tree, &bad, 0), Err(Error::NonFinite { .. })));
        assert!(conditional_expectation(&tree, &x, 2).is_err());
    }

    #[test]
    fn tower_property_on_random_trees() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let tree = ScenarioTree::random(&mut rng, 3, 3).unwrap();
            let x = ConditionalValue::from_fn(&tree, 3, |_| rng.gen_range(-5.0..5.0)).unwrap();
            let direct = conditional_expectation(&tree, &x, 0).unwrap();
            let inner = conditional_expectation(&tree, &x, 1).unwrap();
            let nested = conditional_expectation(&tree, &inner, 0).unwrap();
            assert!((direct.values()[0] - nested.values()[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn measurable_index_selects_nodewise() {
        let tree = binomial();
        let seq: Vec<ConditionalReal> = (0..4)
            .map(|k| ConditionalValue::new(&tree, 1, vec![k as f64, 10.0 + k as f64]).unwrap())
            .collect();
        let idx = ConditionalValue::new(&tree, 1, vec![3u64, 1]).unwrap();
        let picked = select_by_index(&tree, &seq, &idx).unwrap();
        assert_eq!(picked.values(), &[3.0, 11.0]);
        let too_far = ConditionalValue::new(&tree, 1, vec![4u64, 1]).unwrap();
        assert!(select_by_index(&tree, &seq, &too_far).is_err());
    }

    #[test]
    fn stability_of_nodewise_and_nonlocal_maps() {
        let tree = binomial();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cases = random_stability_cases(&tree, 2, 2, 50, 4, &mut rng, |r, _| r.gen_range(-3.0..3.0)).unwrap();
        let square = check_stability(&tree, &cases, 0.0, |x: &ConditionalReal| Ok(x.map(|v| v * v)));
        assert!(square.passed());

        let copy_first = |x: &ConditionalReal| {
            let first = x.values()[0];
            Ok(x.map(|_| first))
        };
        let mut planted = Vec::new();
        for _ in 0..10 {
            let parts = (0..2)
                .map(|_| ConditionalValue::from_fn(&tree, 2, |_| rng.gen_range(-3.0..3.0)).unwrap())
                .collect();
            planted.push(StabilityCase {
                parts,
                partition: StagePartition::new(&tree, 2, vec![0, 1, 1, 1]).unwrap(),
            });
        }
        let report = check_stability(&tree, &planted, 0.0, copy_first);
        assert_eq!(report.violations.len(), 10);

        let failing = check_stability(&tree, &planted, 0.0, |_x: &ConditionalReal| -> Result<ConditionalReal> {
            Err(Error::InvalidInput("boom".into()))
        });
        assert_eq!(failing.evaluation_failures.len(), 10);
    }
}
