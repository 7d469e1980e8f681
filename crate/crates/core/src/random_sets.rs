//! Random closed sets over a finite sample space with values in a finite
//! metric space: selections, stable sets of selections, the reciprocal maps
//! between them, Castaing families and normal integrands.
//!
//! Points of `E'` are indices `0..n`; a selection is one index per sample.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use crate::error::{Error, Result};
use crate::report::{CheckEntry, CheckReport};

/// Selection sets up to this size are materialized.
pub const MATERIALIZE_LIMIT: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMetricSpace {
    distances: Vec<Vec<f64>>,
}

impl FiniteMetricSpace {
    /// `n` points at mutual distance 1.
    pub fn discrete(n: usize) -> Self {
        Self {
            distances: (0..n)
                .map(|i| (0..n).map(|j| if i == j { 0.0 } else { 1.0 }).collect())
                .collect(),
        }
    }

    /// Euclidean distances between `points`.
    pub fn euclidean(points: &[Vec<f64>]) -> Self {
        let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        Self {
            distances: points.iter().map(|a| points.iter().map(|b| d(a, b)).collect()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances.is_empty()
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        self.distances[a][b]
    }
}

/// `S(omega)` for every sample: nonempty, sorted, duplicate-free.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomClosedSet {
    pub weights: Vec<f64>,
    pub points: usize,
    sets: Vec<Vec<usize>>,
}

impl RandomClosedSet {
    pub fn new(weights: Vec<f64>, points: usize, mut sets: Vec<Vec<usize>>) -> Result<Self> {
        if weights.len() != sets.len() || sets.is_empty() {
            return Err(Error::InvalidInput(format!(
                "{} weights for {} samples",
                weights.len(),
                sets.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0)) {
            return Err(Error::InvalidInput(format!("sample weight {w} is not positive")));
        }
        for (omega, s) in sets.iter_mut().enumerate() {
            s.sort_unstable();
            s.dedup();
            if s.is_empty() {
                return Err(Error::InvalidInput(format!("S(omega_{omega}) is empty")));
            }
            if let Some(&e) = s.iter().find(|&&e| e >= points) {
                return Err(Error::InvalidInput(format!("point {e} outside E' of size {points}")));
            }
        }
        Ok(Self { weights, points, sets })
    }

    /// Uniform weights.
    pub fn uniform(points: usize, sets: Vec<Vec<usize>>) -> Result<Self> {
        let n = sets.len();
        Self::new(vec![1.0 / n.max(1) as f64; n], points, sets)
    }

    pub fn samples(&self) -> usize {
        self.sets.len()
    }

    pub fn at(&self, omega: usize) -> &[usize] {
        &self.sets[omega]
    }

    pub fn sets(&self) -> &[Vec<usize>] {
        &self.sets
    }

    pub fn random<R: Rng>(rng: &mut R, samples: usize, points: usize) -> Self {
        let sets = (0..samples)
            .map(|_| {
                let mut s: Vec<usize> = (0..points).filter(|_| rng.gen_bool(0.5)).collect();
                if s.is_empty() {
                    s.push(rng.gen_range(0..points));
                }
                s
            })
            .collect();
        Self::uniform(points, sets).expect("valid by construction")
    }
}

/// A set of selections, either listed or as a product of per-sample sets.
#[derive(Debug, Clone, PartialEq)]
pub enum SelectionSet {
    Explicit { samples: usize, members: BTreeSet<Vec<usize>> },
    Product { sets: Vec<Vec<usize>> },
}

impl SelectionSet {
    pub fn explicit(samples: usize, members: impl IntoIterator<Item = Vec<usize>>) -> Result<Self> {
        let members: BTreeSet<Vec<usize>> = members.into_iter().collect();
        if let Some(x) = members.iter().find(|x| x.len() != samples) {
            return Err(Error::InvalidInput(format!("selection {x:?} does not have {samples} samples")));
        }
        Ok(SelectionSet::Explicit { samples, members })
    }

    pub fn samples(&self) -> usize {
        match self {
            SelectionSet::Explicit { samples, .. } => *samples,
            SelectionSet::Product { sets } => sets.len(),
        }
    }

    pub fn len(&self) -> u128 {
        match self {
            SelectionSet::Explicit { members, .. } => members.len() as u128,
            SelectionSet::Product { sets } => product_size(sets),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, x: &[usize]) -> bool {
        match self {
            SelectionSet::Explicit { members, .. } => members.contains(x),
            SelectionSet::Product { sets } => {
                x.len() == sets.len() && x.iter().zip(sets).all(|(e, s)| s.binary_search(e).is_ok())
            }
        }
    }

    /// Members in lexicographic order.
    pub fn iter(&self) -> Box<dyn Iterator<Item = Vec<usize>> + '_> {
        match self {
            SelectionSet::Explicit { members, .. } => Box::new(members.iter().cloned()),
            SelectionSet::Product { sets } => Box::new(ProductIter::new(sets)),
        }
    }

    /// `{x(omega) : x in X}`, sorted.
    pub fn projection(&self, omega: usize) -> Vec<usize> {
        match self {
            SelectionSet::Explicit { members, .. } => {
                let s: BTreeSet<usize> = members.iter().map(|x| x[omega]).collect();
                s.into_iter().collect()
            }
            SelectionSet::Product { sets } => sets[omega].clone(),
        }
    }

    pub fn projections(&self) -> Vec<Vec<usize>> {
        (0..self.samples()).map(|w| self.projection(w)).collect()
    }

    /// Lists every member.
    pub fn materialize(&self) -> Result<BTreeSet<Vec<usize>>> {
        let n = self.len();
        if n > MATERIALIZE_LIMIT {
            return Err(Error::BudgetExceeded {
                count: n,
                budget: MATERIALIZE_LIMIT,
            });
        }
        Ok(self.iter().collect())
    }

    /// Equality as sets of selections.
    pub fn same_members(&self, other: &SelectionSet) -> bool {
        if self.samples() != other.samples() || self.len() != other.len() {
            return false;
        }
        match (self, other) {
            (SelectionSet::Product { sets: a }, SelectionSet::Product { sets: b }) => a == b,
            (SelectionSet::Explicit { members, .. }, o) | (o, SelectionSet::Explicit { members, .. }) => {
                members.iter().all(|x| o.contains(x))
            }
        }
    }
}

fn product_size(sets: &[Vec<usize>]) -> u128 {
    sets.iter().fold(1u128, |acc, s| acc.saturating_mul(s.len() as u128))
}

struct ProductIter<'a> {
    sets: &'a [Vec<usize>],
    index: Vec<usize>,
    done: bool,
}

impl<'a> ProductIter<'a> {
    fn new(sets: &'a [Vec<usize>]) -> Self {
        let done = sets.iter().any(|s| s.is_empty());
        Self {
            sets,
            index: vec![0; sets.len()],
            done,
        }
    }
}

impl Iterator for ProductIter<'_> {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let item = self.index.iter().zip(self.sets).map(|(&i, s)| s[i]).collect();
        let mut k = self.sets.len();
        loop {
            if k == 0 {
                self.done = true;
                break;
            }
            k -= 1;
            self.index[k] += 1;
            if self.index[k] < self.sets[k].len() {
                break;
            }
            self.index[k] = 0;
        }
        Some(item)
    }
}

/// All measurable selections of `s`, materialized when small.
pub fn selections(s: &RandomClosedSet) -> SelectionSet {
    let product = SelectionSet::Product { sets: s.sets.clone() };
    if product.len() <= MATERIALIZE_LIMIT {
        let samples = s.samples();
        SelectionSet::Explicit {
            samples,
            members: product.iter().collect(),
        }
    } else {
        product
    }
}

/// `x` with its value at `omega` replaced by `y(omega)`.
fn swap(x: &[usize], y: &[usize], omega: usize) -> Vec<usize> {
    let mut z = x.to_vec();
    z[omega] = y[omega];
    z
}

/// A pasting of two members that is missing from `x`, if any. Closure under
/// single-sample swaps is equivalent to closure under all pastings, and a
/// swap of `a` with `b` at `omega` only depends on `b[omega]`, so it suffices
/// to try every projected value instead of every partner.
pub fn pasting_witness(x: &SelectionSet) -> Option<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let SelectionSet::Explicit { samples, members } = x else {
        return None;
    };
    // one representative member per (omega, value)
    let mut carriers: Vec<BTreeMap<usize, &Vec<usize>>> = vec![BTreeMap::new(); *samples];
    for m in members {
        for (omega, c) in carriers.iter_mut().enumerate() {
            c.entry(m[omega]).or_insert(m);
        }
    }
    for a in members {
        for (omega, c) in carriers.iter().enumerate() {
            for (&v, &b) in c {
                if v != a[omega] {
                    let z = swap(a, b, omega);
                    if !members.contains(&z) {
                        return Some((a.clone(), b.clone(), z));
                    }
                }
            }
        }
    }
    None
}

/// Closure under pasting along partitions, tested pair by pair over every
/// two-block partition `{A, A^c}`.
pub fn is_closed_under_pasting(x: &SelectionSet) -> Result<bool> {
    let SelectionSet::Explicit { samples, members } = x else {
        return Ok(true);
    };
    if *samples > 20 {
        return Err(Error::Unsupported(format!("pasting test over {samples} samples")));
    }
    for a in members {
        for b in members {
            for mask in 1u32..(1 << samples) - 1 {
                let z: Vec<usize> = (0..*samples).map(|w| if mask >> w & 1 == 1 { a[w] } else { b[w] }).collect();
                if !members.contains(&z) {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

/// `S_X(omega) = {x(omega) : x in X}` for a nonempty stable `X`.
pub fn set_from_stable(x: &SelectionSet, weights: &[f64], points: usize) -> Result<RandomClosedSet> {
    if x.is_empty() {
        return Err(Error::EmptyFamily);
    }
    if let Some((a, b, z)) = pasting_witness(x) {
        return Err(Error::NotStable(format!("pasting {a:?} with {b:?} gives {z:?}, which is missing")));
    }
    RandomClosedSet::new(weights.to_vec(), points, x.projections())
}

/// Smallest stable superset: the product of the projections.
pub fn stable_hull(x0: &SelectionSet) -> Result<SelectionSet> {
    if x0.is_empty() {
        return Err(Error::EmptyFamily);
    }
    let product = SelectionSet::Product { sets: x0.projections() };
    if product.len() <= MATERIALIZE_LIMIT {
        SelectionSet::explicit(x0.samples(), product.iter())
    } else {
        Ok(product)
    }
}

/// Adds pastings of pairs until nothing changes.
pub fn pasting_fixpoint(x0: &SelectionSet) -> Result<SelectionSet> {
    let mut members = x0.materialize()?;
    let samples = x0.samples();
    loop {
        let mut added = Vec::new();
        for a in &members {
            for b in &members {
                for omega in 0..samples {
                    let z = swap(a, b, omega);
                    if !members.contains(&z) {
                        added.push(z);
                    }
                }
            }
        }
        if added.is_empty() {
            break;
        }
        members.extend(added);
        if members.len() as u128 > MATERIALIZE_LIMIT {
            return Err(Error::BudgetExceeded {
                count: members.len() as u128,
                budget: MATERIALIZE_LIMIT,
            });
        }
    }
    Ok(SelectionSet::Explicit { samples, members })
}

/// Selections `x_k(omega)` = the `k`-th smallest element of `S(omega)`,
/// clamped to the largest, for `k < max |S(omega)|`.
pub fn castaing_family(s: &RandomClosedSet) -> Vec<Vec<usize>> {
    let size = s.sets.iter().map(Vec::len).max().unwrap_or(0);
    (0..size)
        .map(|k| s.sets.iter().map(|set| set[k.min(set.len() - 1)]).collect())
        .collect()
}

/// `f(omega, e)` with values in the reals or `+inf`; every row has a finite
/// entry.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteNormalIntegrand {
    table: Vec<Vec<f64>>,
}

impl FiniteNormalIntegrand {
    pub fn new(table: Vec<Vec<f64>>) -> Result<Self> {
        let width = table.first().map(Vec::len).unwrap_or(0);
        if table.is_empty() || width == 0 {
            return Err(Error::InvalidInput("empty integrand table".into()));
        }
        for (omega, row) in table.iter().enumerate() {
            if row.len() != width {
                return Err(Error::InvalidInput(format!("row {omega} has {} entries, expected {width}", row.len())));
            }
            if row.iter().any(|v| v.is_nan() || *v == f64::NEG_INFINITY) {
                return Err(Error::InvalidInput(format!("row {omega} has a NaN or -inf entry")));
            }
            if !row.iter().any(|v| v.is_finite()) {
                return Err(Error::InvalidInput(format!("epigraph at omega_{omega} is empty")));
            }
        }
        Ok(Self { table })
    }

    /// Membership integrand: `0` on `S(omega)`, `+inf` elsewhere.
    pub fn indicator(s: &RandomClosedSet) -> Self {
        let table = s
            .sets
            .iter()
            .map(|set| {
                (0..s.points)
                    .map(|e| if set.binary_search(&e).is_ok() { 0.0 } else { f64::INFINITY })
                    .collect()
            })
            .collect();
        Self { table }
    }

    pub fn samples(&self) -> usize {
        self.table.len()
    }

    pub fn points(&self) -> usize {
        self.table[0].len()
    }

    pub fn value(&self, omega: usize, e: usize) -> f64 {
        self.table[omega][e]
    }

    pub fn table(&self) -> &[Vec<f64>] {
        &self.table
    }

    /// `u_f(x)(omega) = f(omega, x(omega))`.
    pub fn functional(&self, x: &[usize]) -> Vec<f64> {
        x.iter().enumerate().map(|(w, &e)| self.table[w][e]).collect()
    }

    /// Sorted finite values of the table: the `r`-grid of the epigraph.
    pub fn levels(&self) -> Vec<f64> {
        let mut r: Vec<f64> = self.table.iter().flatten().copied().filter(|v| v.is_finite()).collect();
        r.sort_by(f64::total_cmp);
        r.dedup();
        r
    }
}

/// Epigraph of a selection functional `u` on the level grid: the stable set
/// `{(x, r) : u(x) <= r}` with `(e, r_j)` encoded as `e * levels + j`.
pub fn epigraph_set<U>(samples: usize, points: usize, levels: &[f64], u: U, budget: u128) -> Result<SelectionSet>
where
    U: Fn(&[usize]) -> Vec<f64>,
{
    let all = SelectionSet::Product {
        sets: vec![(0..points).collect(); samples],
    };
    let l = levels.len();
    let mut members = BTreeSet::new();
    for x in all.iter() {
        let ux = u(&x);
        let admissible: Vec<Vec<usize>> = ux
            .iter()
            .zip(&x)
            .map(|(&v, &e)| (0..l).filter(|&j| levels[j] >= v).map(|j| e * l + j).collect())
            .collect();
        let block = SelectionSet::Product { sets: admissible };
        if members.len() as u128 + block.len() > budget {
            return Err(Error::BudgetExceeded {
                count: members.len() as u128 + block.len(),
                budget,
            });
        }
        members.extend(block.iter());
    }
    Ok(SelectionSet::Explicit { samples, members })
}

/// `f_u(omega, e) = inf {r : (e, r) in S_X(omega)}` for the epigraph `X` of
/// `u`; `+inf` when the section is empty.
pub fn integrand_from_epigraph(epigraph: &SelectionSet, points: usize, levels: &[f64]) -> Vec<Vec<f64>> {
    let l = levels.len().max(1);
    (0..epigraph.samples())
        .map(|w| {
            let mut row = vec![f64::INFINITY; points];
            for code in epigraph.projection(w) {
                let (e, j) = (code / l, code % l);
                row[e] = row[e].min(levels[j]);
            }
            row
        })
        .collect()
}

/// Checks `f_{u_f} = f` on the table and `u_{f_u} = u` on every selection.
pub fn integrand_roundtrip(f: &FiniteNormalIntegrand, budget: u128) -> Result<CheckReport> {
    let (samples, points) = (f.samples(), f.points());
    let levels = f.levels();
    let epigraph = epigraph_set(samples, points, &levels, |x| f.functional(x), budget)?;
    let mut report = CheckReport::new(format!("integrand roundtrip on a {samples}x{points} table"));
    let mut stable = CheckEntry::new("epigraph", "epigraph of u_f is a stable set");
    match pasting_witness(&epigraph) {
        None => stable.pass(),
        Some((a, b, z)) => stable.fail(format!("{a:?} pasted with {b:?} gives missing {z:?}")),
    }
    let back = integrand_from_epigraph(&epigraph, points, &levels);
    let mut table = CheckEntry::new("f_u = f", "integrand recovered exactly from the epigraph");
    for w in 0..samples {
        for e in 0..points {
            let (a, b) = (f.value(w, e), back[w][e]);
            if a == b {
                table.pass();
            } else {
                table.fail(format!("omega_{w}, e = {e}: {a} vs {b}"));
            }
        }
    }
    let recovered = FiniteNormalIntegrand { table: back };
    let mut functional = CheckEntry::new("u_f_u = u", "functional recovered on every selection");
    let all = SelectionSet::Product {
        sets: vec![(0..points).collect(); samples],
    };
    for x in all.iter() {
        let (a, b) = (f.functional(&x), recovered.functional(&x));
        if a == b {
            functional.pass();
        } else {
            functional.fail(format!("x = {x:?}: {a:?} vs {b:?}"));
        }
    }
    report.push(stable);
    report.push(table);
    report.push(functional);
    Ok(report)
}

/// Both reciprocality identities, stability as product structure in both
/// directions, and Castaing coverage for one random set.
pub fn reciprocality_checks(s: &RandomClosedSet, entries: &mut [CheckEntry; 4]) -> Result<()> {
    let label = || format!("{:?}", s.sets);
    let xs = selections(s);
    let back = set_from_stable(&xs, &s.weights, s.points)?;
    if back == *s {
        entries[0].pass();
    } else {
        entries[0].fail(format!("S = {} but S_(X_S) = {:?}", label(), back.sets));
    }
    let again = selections(&back);
    if again.same_members(&xs) {
        entries[1].pass();
    } else {
        entries[1].fail(format!("X_(S_X) differs from X for S = {}", label()));
    }
    let product = stable_hull(&xs)?;
    let closed = is_closed_under_pasting(&xs)?;
    if closed && product.same_members(&xs) {
        entries[2].pass();
    } else {
        entries[2].fail(format!("selection set of {} is not a stable product", label()));
    }
    let family = castaing_family(s);
    let covers = (0..s.samples()).all(|w| {
        let union: BTreeSet<usize> = family.iter().map(|x| x[w]).collect();
        union.into_iter().collect::<Vec<_>>() == s.sets[w]
    });
    if covers && family.iter().all(|x| xs.contains(x)) {
        entries[3].pass();
    } else {
        entries[3].fail(format!("Castaing family {family:?} does not cover {}", label()));
    }
    Ok(())
}

fn reciprocality_entries() -> [CheckEntry; 4] {
    [
        CheckEntry::new("S_X_S = S", "set recovered from its selections"),
        CheckEntry::new("X_S_X = X", "selections recovered from their set"),
        CheckEntry::new("product", "selection sets are stable products"),
        CheckEntry::new("castaing", "Castaing family selections cover S"),
    ]
}

/// Every random set with `1..=max_samples` samples and values in
/// `1..=max_points` points, plus the equivalence of stability and product
/// structure on every subset of `E'^Omega` with at most `max_subset_bits`
/// candidate selections.
pub fn exhaustive_reciprocality(max_samples: usize, max_points: usize, max_subset_bits: u32) -> Result<CheckReport> {
    let mut report = CheckReport::new(format!(
        "reciprocality, exhaustive up to {max_samples} samples and {max_points} points"
    ));
    let mut entries = reciprocality_entries();
    let mut equivalence = CheckEntry::new("stable <=> product", "pasting closure equals product structure on all subsets");
    for samples in 1..=max_samples {
        for points in 1..=max_points {
            let subsets: Vec<Vec<usize>> = (1u32..1 << points)
                .map(|mask| (0..points).filter(|&e| mask >> e & 1 == 1).collect())
                .collect();
            let mut index = vec![0usize; samples];
            loop {
                let sets: Vec<Vec<usize>> = index.iter().map(|&i| subsets[i].clone()).collect();
                let s = RandomClosedSet::uniform(points, sets)?;
                reciprocality_checks(&s, &mut entries)?;
                let mut k = samples;
                loop {
                    if k == 0 {
                        break;
                    }
                    k -= 1;
                    index[k] += 1;
                    if index[k] < subsets.len() {
                        break;
                    }
                    index[k] = 0;
                }
                if index.iter().all(|&i| i == 0) {
                    break;
                }
            }
            let universe: Vec<Vec<usize>> = SelectionSet::Product {
                sets: vec![(0..points).collect(); samples],
            }
            .iter()
            .collect();
            if universe.len() as u32 <= max_subset_bits {
                for mask in 1u64..1 << universe.len() {
                    let x = SelectionSet::explicit(
                        samples,
                        universe
                            .iter()
                            .enumerate()
                            .filter(|(i, _)| mask >> i & 1 == 1)
                            .map(|(_, v)| v.clone()),
                    )?;
                    check_equivalence(&x, &mut equivalence)?;
                }
            }
        }
    }
    for e in entries {
        report.push(e);
    }
    report.push(equivalence);
    Ok(report)
}

fn check_equivalence(x: &SelectionSet, entry: &mut CheckEntry) -> Result<()> {
    let closed = is_closed_under_pasting(x)?;
    let product = stable_hull(x)?.same_members(x);
    let fixpoint = pasting_fixpoint(x)?.same_members(&stable_hull(x)?);
    if closed == product && fixpoint {
        entry.pass();
    } else {
        entry.fail(format!("X = {:?}: closed {closed}, product {product}, hull agrees {fixpoint}", x.materialize()));
    }
    Ok(())
}

/// Randomized instances with up to `max_samples` samples and `max_points`
/// points, including random (mostly non-stable) subsets of selections.
pub fn random_reciprocality<R: Rng>(
    rng: &mut R,
    instances: usize,
    max_samples: usize,
    max_points: usize,
) -> Result<CheckReport> {
    let mut report = CheckReport::new(format!("reciprocality, {instances} random instances"));
    let mut entries = reciprocality_entries();
    let mut equivalence = CheckEntry::new("stable <=> product", "pasting closure equals product structure");
    for _ in 0..instances {
        let samples = rng.gen_range(1..=max_samples);
        let points = rng.gen_range(1..=max_points);
        let s = RandomClosedSet::random(rng, samples, points);
        reciprocality_checks(&s, &mut entries)?;
        let xs = selections(&s);
        if xs.len() <= 4096 {
            let members: Vec<Vec<usize>> = xs.iter().filter(|_| rng.gen_bool(0.6)).collect();
            if !members.is_empty() && samples <= 12 {
                check_equivalence(&SelectionSet::explicit(samples, members)?, &mut equivalence)?;
            }
        }
    }
    for e in entries {
        report.push(e);
    }
    report.push(equivalence);
    Ok(report)
}
