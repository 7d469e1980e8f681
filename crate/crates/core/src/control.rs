//! State-dependent control sets `Theta_t(x)` with feasibility, boundedness
//! and discretization queries.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conditional::{ConditionalValue, ConditionalVector};
use crate::error::{Error, Result};
use crate::generators::{child_probabilities, prices_at, BackwardGenerator, ForwardGenerator};
use crate::report::{CheckEntry, CheckReport};
use crate::risk::RiskMeasure;
use crate::tree::{NodeId, ScenarioTree};

/// Slack on risk and level constraints; boundary controls are feasible.
pub const FEASIBILITY_SLACK: f64 = 1e-9;
/// Safety factor on scanned radii.
pub const RADIUS_FACTOR: f64 = 1.1;
const MAX_DOUBLINGS: i32 = 60;
const SCAN_SEED: u64 = 0x5ca1_ab1e;
/// Largest grid `discretize` will enumerate.
pub const MAX_GRID_POINTS: u128 = 2_000_000;

/// `constant + state_slope * x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineBound {
    pub constant: f64,
    pub state_slope: f64,
}

impl AffineBound {
    pub fn fixed(constant: f64) -> Self {
        Self {
            constant,
            state_slope: 0.0,
        }
    }

    pub fn at(&self, x: f64) -> f64 {
        if self.state_slope == 0.0 {
            self.constant
        } else {
            self.constant + self.state_slope * x
        }
    }
}

/// `{z : u(x, v(x, z), z) >= x - slack_t}`, optionally with a nonnegative
/// last coordinate (consumption).
#[derive(Debug, Clone)]
pub struct UpperLevelSet {
    pub forward: ForwardGenerator,
    pub backward: BackwardGenerator,
    /// Slack indexed by stage.
    pub slack_by_stage: Vec<f64>,
    pub nonnegative_last: bool,
}

impl UpperLevelSet {
    /// `u(x, v(x, z), z) - x` at `node`.
    pub fn advantage(&self, tree: &ScenarioTree, node: NodeId, x: &[f64], z: &[f64]) -> Result<f64> {
        let next: Vec<f64> = self
            .forward
            .advance(tree, node, x, z)?
            .into_iter()
            .map(|s| s.first().copied().unwrap_or(f64::NAN))
            .collect();
        let probs = child_probabilities(tree, node);
        Ok(self.backward.aggregate(node, &probs, x, &next, z)? - x[0])
    }
}

#[derive(Debug, Clone)]
pub enum ControlSetSpec {
    /// Componentwise bounds, closed unless `open`.
    Box {
        lower: Vec<AffineBound>,
        upper: Vec<AffineBound>,
        open: bool,
    },
    Unbounded { dimension: usize },
    /// `{(theta, c) : rho(theta . dS) <= x - c, 0 <= c <= x}`; without
    /// consumption `c = 0` and `z = theta`.
    RiskConstrained { risk: RiskMeasure, consumption: bool },
    UpperLevel(UpperLevelSet),
    /// Finite control list per node, indexed by node id.
    ExplicitGrid { grids: Vec<Vec<Vec<f64>>> },
    /// Frictionless rebalancing `{theta >= 0 : theta . S = x . S}` where the
    /// state `x` is the previous portfolio.
    Rebalance { initial_prices: Vec<f64> },
}

fn norm(z: &[f64]) -> f64 {
    z.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

/// Sorts control vectors lexicographically and removes exact duplicates.
pub fn sort_controls(points: &mut Vec<Vec<f64>>) {
    points.sort_by(|a, b| lex_cmp(a, b));
    points.dedup();
}

pub fn lexicographic_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    lex_cmp(a, b)
}

/// Multiples of `h` in `[lo, hi]`, plus the endpoints when `with_ends`.
fn axis_points(lo: f64, hi: f64, h: f64, with_ends: bool) -> Vec<f64> {
    let mut pts = Vec::new();
    if lo > hi {
        return pts;
    }
    let start = (lo / h).ceil() as i64;
    let end = (hi / h).floor() as i64;
    if with_ends {
        pts.push(lo);
    }
    for k in start..=end {
        let v = k as f64 * h;
        if v >= lo && v <= hi {
            pts.push(v);
        }
    }
    if with_ends {
        pts.push(hi);
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

impl ControlSetSpec {
    pub fn closed_box(lower: &[f64], upper: &[f64]) -> Self {
        ControlSetSpec::Box {
            lower: lower.iter().map(|&v| AffineBound::fixed(v)).collect(),
            upper: upper.iter().map(|&v| AffineBound::fixed(v)).collect(),
            open: false,
        }
    }

    /// Whether the set is a continuum (grid search is followed by a polish).
    pub fn is_continuous(&self) -> bool {
        !matches!(self, ControlSetSpec::ExplicitGrid { .. })
    }

    pub fn dimension(&self, tree: &ScenarioTree, node: NodeId, x: &[f64]) -> Result<usize> {
        match self {
            ControlSetSpec::Box { lower, upper, .. } => {
                if lower.len() != upper.len() {
                    return Err(Error::InvalidInput("box bounds differ in length".into()));
                }
                Ok(lower.len())
            }
            ControlSetSpec::Unbounded { dimension } => Ok(*dimension),
            ControlSetSpec::RiskConstrained { consumption, .. } => {
                let child = *tree
                    .children(node)
                    .first()
                    .ok_or_else(|| Error::InvalidInput(format!("node {node} is terminal")))?;
                let d = tree.shock(child).len();
                if d == 0 {
                    return Err(Error::MissingShock { node: child });
                }
                Ok(d + usize::from(*consumption))
            }
            ControlSetSpec::UpperLevel(set) => set.forward.control_dimension(tree, node, x),
            ControlSetSpec::ExplicitGrid { grids } => grids
                .get(node.0)
                .and_then(|g| g.first())
                .map(|z| z.len())
                .ok_or(Error::EmptyControlSet {
                    node,
                    state: x.first().copied().unwrap_or(f64::NAN),
                }),
            ControlSetSpec::Rebalance { initial_prices } => Ok(initial_prices.len()),
        }
    }

    /// Membership test with the standard slack.
    pub fn contains(&self, tree: &ScenarioTree, node: NodeId, x: &[f64], z: &[f64]) -> Result<bool> {
        self.contains_with_tolerance(tree, node, x, z, 0.0)
    }

    /// Membership with closed constraints relaxed by `tol`; strict
    /// inequalities of open sets are never relaxed.
    pub fn contains_with_tolerance(
        &self,
        tree: &ScenarioTree,
        node: NodeId,
        x: &[f64],
        z: &[f64],
        tol: f64,
    ) -> Result<bool> {
        let d = self.dimension(tree, node, x)?;
        if z.len() != d {
            return Err(Error::DimensionMismatch {
                node,
                expected: d,
                found: z.len(),
            });
        }
        let xs = x.first().copied().unwrap_or(0.0);
        match self {
            ControlSetSpec::Box { lower, upper, open } => Ok(z.iter().zip(lower.iter().zip(upper)).all(|(&v, (lo, hi))| {
                let (lo, hi) = (lo.at(xs), hi.at(xs));
                if *open {
                    v > lo && v < hi
                } else {
                    v >= lo - tol && v <= hi + tol
                }
            })),
            ControlSetSpec::Unbounded { .. } => Ok(true),
            ControlSetSpec::RiskConstrained { risk, consumption } => {
                let (theta, c) = if *consumption {
                    (&z[..d - 1], z[d - 1])
                } else {
                    (z, 0.0)
                };
                if *consumption && (c < -tol || c > xs + tol) {
                    return Ok(false);
                }
                let rho = self.position_risk(tree, node, risk, theta)?;
                Ok(rho <= xs - c + FEASIBILITY_SLACK.max(tol))
            }
            ControlSetSpec::UpperLevel(set) => {
                if set.nonnegative_last && z.last().is_some_and(|&c| c < -tol) {
                    return Ok(false);
                }
                let slack = set.slack_by_stage.get(tree.stage(node)).copied().unwrap_or(0.0);
                let adv = set.advantage(tree, node, x, z)?;
                Ok(adv >= -slack - FEASIBILITY_SLACK.max(tol))
            }
            ControlSetSpec::ExplicitGrid { grids } => Ok(grids[node.0].iter().any(|g| {
                g.len() == z.len() && g.iter().zip(z).all(|(a, b)| (a - b).abs() <= tol)
            })),
            ControlSetSpec::Rebalance { initial_prices } => {
                let s = prices_at(tree, node, initial_prices)?;
                if x.len() != s.len() {
                    return Err(Error::DimensionMismatch {
                        node,
                        expected: s.len(),
                        found: x.len(),
                    });
                }
                let budget: f64 = x.iter().zip(&s).map(|(a, b)| a * b).sum();
                let spent: f64 = z.iter().zip(&s).map(|(a, b)| a * b).sum();
                let scale = budget.abs().max(1.0);
                Ok(z.iter().all(|&v| v >= -tol) && (spent - budget).abs() <= FEASIBILITY_SLACK.max(tol) * scale)
            }
        }
    }

    /// `rho_t(theta . dS_{t+1})` at `node`.
    pub fn position_risk(&self, tree: &ScenarioTree, node: NodeId, risk: &RiskMeasure, theta: &[f64]) -> Result<f64> {
        let mut vals = Vec::with_capacity(tree.children(node).len());
        for &c in tree.children(node) {
            let ds = tree.shock(c);
            if ds.len() != theta.len() {
                return Err(Error::MissingShock { node: c });
            }
            vals.push(theta.iter().zip(ds).map(|(a, b)| a * b).sum::<f64>());
        }
        risk.evaluate_at(tree, node, &vals)
    }

    /// Nodewise feasibility of stage-`t` states and controls.
    pub fn is_feasible(
        &self,
        tree: &ScenarioTree,
        x: &ConditionalVector,
        z: &ConditionalVector,
    ) -> Result<ConditionalValue<bool>> {
        if x.stage() != z.stage() {
            return Err(Error::StageMismatch {
                expected: x.stage(),
                found: z.stage(),
            });
        }
        ConditionalValue::try_from_fn(tree, x.stage(), |n| self.contains(tree, n, x.at(tree, n), z.at(tree, n)))
    }

    /// A feasible point: the origin when feasible, otherwise a kind-specific
    /// candidate. `None` means no feasible point could be located.
    pub fn anchor(&self, tree: &ScenarioTree, node: NodeId, x: &[f64]) -> Result<Option<Vec<f64>>> {
        let d = self.dimension(tree, node, x)?;
        let origin = vec![0.0; d];
        if self.contains(tree, node, x, &origin)? {
            return Ok(Some(origin));
        }
        let xs = x.first().copied().unwrap_or(0.0);
        let candidate = match self {
            ControlSetSpec::Box { lower, upper, open } => {
                let z: Vec<f64> = lower
                    .iter()
                    .zip(upper)
                    .map(|(lo, hi)| {
                        let (lo, hi) = (lo.at(xs), hi.at(xs));
                        if *open {
                            0.5 * (lo + hi)
                        } else {
                            0.0f64.clamp(lo.min(hi), hi.max(lo))
                        }
                    })
                    .collect();
                Some(z)
            }
            ControlSetSpec::ExplicitGrid { grids } => grids[node.0].first().cloned(),
            ControlSetSpec::Rebalance { .. } => Some(x.to_vec()),
            _ => None,
        };
        match candidate {
            Some(z) if self.contains(tree, node, x, &z)? => Ok(Some(z)),
            _ => Ok(None),
        }
    }

    fn require_anchor(&self, tree: &ScenarioTree, node: NodeId, x: &[f64]) -> Result<Vec<f64>> {
        self.anchor(tree, node, x)?.ok_or(Error::EmptyControlSet {
            node,
            state: x.first().copied().unwrap_or(f64::NAN),
        })
    }

    /// Scan directions: `2d` axis directions then `2d` seeded random unit vectors.
    pub fn scan_directions(d: usize) -> Vec<Vec<f64>> {
        let mut dirs = Vec::with_capacity(4 * d);
        for i in 0..d {
            for s in [1.0, -1.0] {
                let mut e = vec![0.0; d];
                e[i] = s;
                dirs.push(e);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(SCAN_SEED);
        while dirs.len() < 4 * d {
            let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = norm(&v);
            if n > 1e-3 {
                dirs.push(v.into_iter().map(|c| c / n).collect());
            }
        }
        dirs
    }

    /// Largest `t` with `anchor + t * dir` feasible, by doubling then
    /// bisection to `precision`. Returns `(feasible t, infeasible t)`.
    pub fn ray_extent(
        &self,
        tree: &ScenarioTree,
        node: NodeId,
        x: &[f64],
        anchor: &[f64],
        dir: &[f64],
        precision: f64,
    ) -> Result<(f64, f64)> {
        let at = |t: f64| -> Vec<f64> { anchor.iter().zip(dir).map(|(a, d)| a + t * d).collect() };
        let mut lo = 0.0;
        let mut hi = 1.0;
        let mut doublings = 0;
        while self.contains(tree, node, x, &at(hi))? {
            lo = hi;
            hi *= 2.0;
            doublings += 1;
            if doublings > MAX_DOUBLINGS {
                return Err(Error::Unbounded { node });
            }
        }
        while hi - lo > precision {
            let mid = 0.5 * (lo + hi);
            if self.contains(tree, node, x, &at(mid))? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok((lo, hi))
    }

    /// Radius `M` with every feasible `z` satisfying `|z| <= M`.
    pub fn bounding_radius(&self, tree: &ScenarioTree, node: NodeId, x: &[f64]) -> Result<f64> {
        let xs = x.first().copied().unwrap_or(0.0);
        match self {
            ControlSetSpec::Box { lower, upper, .. } => {
                let r2: f64 = lower
                    .iter()
                    .zip(upper)
                    .map(|(lo, hi)| {
                        let m = lo.at(xs).abs().max(hi.at(xs).abs());
                        m * m
                    })
                    .sum();
                Ok(RADIUS_FACTOR * r2.sqrt())
            }
            ControlSetSpec::ExplicitGrid { grids } => Ok(RADIUS_FACTOR
                * grids[node.0].iter().map(|z| norm(z)).fold(0.0, f64::max)),
            ControlSetSpec::Rebalance { initial_prices } => {
                let s = prices_at(tree, node, initial_prices)?;
                let min_price = s.iter().copied().fold(f64::INFINITY, f64::min);
                if !(min_price > 0.0) {
                    return Err(Error::Unbounded { node });
                }
                let budget: f64 = x.iter().zip(&s).map(|(a, b)| a * b).sum();
                Ok(RADIUS_FACTOR * budget.max(0.0) / min_price)
            }
            ControlSetSpec::Unbounded { .. } => Err(Error::Unbounded { node }),
            _ => {
                let anchor = self.require_anchor(tree, node, x)?;
                let d = anchor.len();
                let dirs = Self::scan_directions(d);
                let mut axis = vec![0.0f64; d];
                let mut radial = 0.0f64;
                for (k, dir) in dirs.iter().enumerate() {
                    let (t, _) = self.ray_extent(tree, node, x, &anchor, dir, 1e-6)?;
                    if k < 2 * d {
                        axis[k / 2] = axis[k / 2].max(t);
                    } else {
                        radial = radial.max(t);
                    }
                }
                Ok(RADIUS_FACTOR * (norm(&anchor) + norm(&axis).max(radial)))
            }
        }
    }

    /// Feasible points on the boundary along every scan direction, plus the
    /// anchor. Used to bound reachable states.
    pub fn scan_extremes(&self, tree: &ScenarioTree, node: NodeId, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let xs = x.first().copied().unwrap_or(0.0);
        match self {
            ControlSetSpec::Box { lower, upper, open } => {
                let d = lower.len();
                let shrink = if *open { 1e-9 } else { 0.0 };
                let bounds: Vec<(f64, f64)> = lower
                    .iter()
                    .zip(upper)
                    .map(|(lo, hi)| (lo.at(xs) + shrink, hi.at(xs) - shrink))
                    .collect();
                if d <= 12 {
                    Ok((0..1usize << d)
                        .map(|mask| {
                            (0..d)
                                .map(|i| if mask >> i & 1 == 1 { bounds[i].1 } else { bounds[i].0 })
                                .collect()
                        })
                        .collect())
                } else {
                    Ok(vec![bounds.iter().map(|b| b.0).collect(), bounds.iter().map(|b| b.1).collect()])
                }
            }
            ControlSetSpec::ExplicitGrid { grids } => Ok(grids[node.0].clone()),
            ControlSetSpec::Rebalance { initial_prices } => {
                let s = prices_at(tree, node, initial_prices)?;
                let budget: f64 = x.iter().zip(&s).map(|(a, b)| a * b).sum();
                let mut pts = vec![x.to_vec()];
                for i in 0..s.len() {
                    let mut e = vec![0.0; s.len()];
                    e[i] = budget.max(0.0) / s[i];
                    pts.push(e);
                }
                Ok(pts)
            }
            ControlSetSpec::Unbounded { .. } => Err(Error::Unbounded { node }),
            _ => {
                let anchor = self.require_anchor(tree, node, x)?;
                let mut pts = vec![anchor.clone()];
                for dir in Self::scan_directions(anchor.len()) {
                    let (t, _) = self.ray_extent(tree, node, x, &anchor, &dir, 1e-9)?;
                    pts.push(anchor.iter().zip(&dir).map(|(a, d)| a + t * d).collect());
                }
                Ok(pts)
            }
        }
    }

    /// Finite feasible grid with spacing `h`, sorted lexicographically and
    /// always containing the anchor.
    pub fn discretize(&self, tree: &ScenarioTree, node: NodeId, x: &[f64], h: f64) -> Result<Vec<Vec<f64>>> {
        if !(h > 0.0) {
            return Err(Error::InvalidInput(format!("resolution must be positive, got {h}")));
        }
        if let ControlSetSpec::ExplicitGrid { grids } = self {
            let g = grids[node.0].clone();
            if g.is_empty() {
                return Err(Error::EmptyControlSet {
                    node,
                    state: x.first().copied().unwrap_or(f64::NAN),
                });
            }
            return Ok(g);
        }
        let anchor = self.require_anchor(tree, node, x)?;
        let xs = x.first().copied().unwrap_or(0.0);
        let d = anchor.len();

        let axes: Vec<Vec<f64>> = match self {
            ControlSetSpec::Box { lower, upper, open } => lower
                .iter()
                .zip(upper)
                .map(|(lo, hi)| axis_points(lo.at(xs), hi.at(xs), h, !*open))
                .collect(),
            ControlSetSpec::Rebalance { initial_prices } => {
                let s = prices_at(tree, node, initial_prices)?;
                let budget: f64 = x.iter().zip(&s).map(|(a, b)| a * b).sum();
                (0..d.saturating_sub(1))
                    .map(|i| axis_points(0.0, budget.max(0.0) / s[i], h, false))
                    .collect()
            }
            _ => {
                let m = self.bounding_radius(tree, node, x)?;
                vec![axis_points(-m, m, h, false); d]
            }
        };
        let count: u128 = axes.iter().map(|a| a.len() as u128).product();
        if count > MAX_GRID_POINTS {
            return Err(Error::GridTooLarge { node, points: count });
        }

        let ball = match self {
            ControlSetSpec::Box { .. } | ControlSetSpec::Rebalance { .. } => f64::INFINITY,
            _ => self.bounding_radius(tree, node, x)?,
        };
        let mut points = Vec::new();
        let mut idx = vec![0usize; axes.len()];
        if axes.iter().all(|a| !a.is_empty()) {
            loop {
                let mut z: Vec<f64> = idx.iter().enumerate().map(|(i, &k)| axes[i][k]).collect();
                if let ControlSetSpec::Rebalance { initial_prices } = self {
                    let s = prices_at(tree, node, initial_prices)?;
                    let budget: f64 = x.iter().zip(&s).map(|(a, b)| a * b).sum();
                    let used: f64 = z.iter().zip(&s).map(|(a, b)| a * b).sum();
                    z.push(((budget - used) / s[d - 1]).max(0.0));
                }
                if norm(&z) <= ball && self.contains(tree, node, x, &z)? {
                    points.push(z);
                }
                let mut i = 0;
                loop {
                    if i == idx.len() {
                        break;
                    }
                    idx[i] += 1;
                    if idx[i] < axes[i].len() {
                        break;
                    }
                    idx[i] = 0;
                    i += 1;
                }
                if i == idx.len() {
                    break;
                }
            }
        }
        points.push(anchor);
        sort_controls(&mut points);
        if points.is_empty() {
            return Err(Error::ResolutionTooCoarse {
                node,
                resolution: h,
                suggested: h / 2.0,
            });
        }
        Ok(points)
    }

    /// Feasible interval of the last control coordinate with the others
    /// fixed at `prefix`. `hint` must be a feasible last coordinate for the
    /// generic bisection fallback.
    pub fn last_coordinate_slice(
        &self,
        tree: &ScenarioTree,
        node: NodeId,
        x: &[f64],
        prefix: &[f64],
        hint: f64,
    ) -> Result<Option<(f64, f64)>> {
        let xs = x.first().copied().unwrap_or(0.0);
        let with = |c: f64| -> Vec<f64> {
            let mut z = prefix.to_vec();
            z.push(c);
            z
        };
        match self {
            ControlSetSpec::Box { lower, upper, open } => {
                let d = lower.len();
                let prefix_ok = prefix.iter().enumerate().all(|(i, &v)| {
                    let (lo, hi) = (lower[i].at(xs), upper[i].at(xs));
                    if *open {
                        v > lo && v < hi
                    } else {
                        v >= lo && v <= hi
                    }
                });
                if !prefix_ok {
                    return Ok(None);
                }
                let (lo, hi) = (lower[d - 1].at(xs), upper[d - 1].at(xs));
                if *open {
                    let eps = 1e-9 * (hi - lo).abs().max(1e-9);
                    Ok(Some((lo + eps, hi - eps)).filter(|(a, b)| a <= b))
                } else {
                    Ok(Some((lo, hi)).filter(|(a, b)| a <= b))
                }
            }
            ControlSetSpec::ExplicitGrid { .. } | ControlSetSpec::Unbounded { .. } => Ok(None),
            ControlSetSpec::RiskConstrained { risk, consumption: true } => {
                let rho = self.position_risk(tree, node, risk, prefix)?;
                let hi = xs.min(xs - rho + FEASIBILITY_SLACK);
                Ok(if hi >= 0.0 { Some((0.0, hi)) } else { None })
            }
            ControlSetSpec::Rebalance { initial_prices } => {
                let s = prices_at(tree, node, initial_prices)?;
                let d = s.len();
                let budget: f64 = x.iter().zip(&s).map(|(a, b)| a * b).sum();
                let used: f64 = prefix.iter().zip(&s).map(|(a, b)| a * b).sum();
                let last = (budget - used) / s[d - 1];
                Ok((last >= 0.0 && prefix.iter().all(|&v| v >= 0.0)).then_some((last, last)))
            }
            _ => {
                if !self.contains(tree, node, x, &with(hint))? {
                    return Ok(None);
                }
                let mut ends = [hint, hint];
                for (k, sign) in [1.0f64, -1.0].into_iter().enumerate() {
                    let mut dir = vec![0.0; prefix.len() + 1];
                    dir[prefix.len()] = sign;
                    let (t, _) = self.ray_extent(tree, node, x, &with(hint), &dir, 1e-10)?;
                    ends[k] = hint + sign * t;
                }
                Ok(Some((ends[1], ends[0])))
            }
        }
    }

    /// Sequential closedness and boundedness along `states -> limit_state`
    /// with feasible `picks`. The limit control defaults to the last pick.
    pub fn check_c4_surrogate(
        &self,
        tree: &ScenarioTree,
        node: NodeId,
        states: &[Vec<f64>],
        limit_state: &[f64],
        picks: &[Vec<f64>],
        limit_control: Option<&[f64]>,
    ) -> CheckReport {
        let mut report = CheckReport::new(format!("control set conditions at node {node}"));
        let mut nonempty = CheckEntry::new("(c1)", "control set nonempty along the sequence");
        let mut picked = CheckEntry::new("picks", "every pick is feasible for its state");
        let mut closed = CheckEntry::new("(i)-closed", "limit of feasible pairs is feasible (tol 1e-7)");
        let mut bounded = CheckEntry::new("(ii)-bounded", "radii uniformly bounded along the sequence");

        for x in states.iter().map(|s| s.as_slice()).chain(std::iter::once(limit_state)) {
            match self.anchor(tree, node, x) {
                Ok(Some(_)) => nonempty.pass(),
                Ok(None) => nonempty.fail(format!("empty at state {x:?}")),
                Err(e) => nonempty.fail(e.to_string()),
            }
        }
        for (x, z) in states.iter().zip(picks) {
            match self.contains(tree, node, x, z) {
                Ok(true) => picked.pass(),
                Ok(false) => picked.fail(format!("z = {z:?} infeasible at x = {x:?}")),
                Err(e) => picked.fail(e.to_string()),
            }
        }
        if let Some(z) = limit_control.map(|z| z.to_vec()).or_else(|| picks.last().cloned()) {
            match self.contains_with_tolerance(tree, node, limit_state, &z, 1e-7) {
                Ok(true) => closed.pass(),
                Ok(false) => closed.fail(format!("limit z = {z:?} infeasible at x = {limit_state:?}")),
                Err(e) => closed.fail(e.to_string()),
            }
        }
        let mut largest = 0.0f64;
        for x in states.iter().map(|s| s.as_slice()).chain(std::iter::once(limit_state)) {
            match self.bounding_radius(tree, node, x) {
                Ok(m) if m.is_finite() => {
                    largest = largest.max(m);
                    bounded.pass();
                }
                Ok(m) => bounded.fail(format!("radius {m} at x = {x:?}")),
                Err(e) => bounded.fail(format!("{e} at x = {x:?}")),
            }
        }
        bounded.worst = 0.0;
        if bounded.passed {
            bounded.description = format!("radii uniformly bounded along the sequence (max {largest:.4})");
        }
        for e in [nonempty, picked, closed, bounded] {
            report.push(e);
        }
        report
    }

    /// Standard closedness experiment: states `x + 2^-n`, picks on the
    /// boundary of `Theta(x_n)` along `dir` and the limit on the boundary of
    /// `Theta(x)` (the infeasible side of a `1e-12` bisection).
    pub fn boundary_sequence(
        &self,
        tree: &ScenarioTree,
        node: NodeId,
        x: &[f64],
        dir: &[f64],
        terms: usize,
    ) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>)> {
        let mut states = Vec::with_capacity(terms);
        let mut picks = Vec::with_capacity(terms);
        for n in 1..=terms {
            let mut xn = x.to_vec();
            xn[0] += (0.5f64).powi(n as i32);
            let anchor = self.require_anchor(tree, node, &xn)?;
            let (t, _) = self.ray_extent(tree, node, &xn, &anchor, dir, 1e-12)?;
            picks.push(anchor.iter().zip(dir).map(|(a, d)| a + t * d).collect());
            states.push(xn);
        }
        let anchor = self.require_anchor(tree, node, x)?;
        let (_, t_out) = self.ray_extent(tree, node, x, &anchor, dir, 1e-12)?;
        let limit = anchor.iter().zip(dir).map(|(a, d)| a + t_out * d).collect();
        Ok((states, picks, limit))
    }
}

/// First index from which the dimension sequence agrees with the limit
/// dimension, or `None` when it never settles.
pub fn dimension_stabilization_index(dims: &[usize], limit: usize) -> Option<usize> {
    match dims.iter().rposition(|&d| d != limit) {
        None => Some(0),
        Some(last) if last + 1 < dims.len() => Some(last + 1),
        Some(_) => None,
    }
}
