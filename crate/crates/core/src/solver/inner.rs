//! One-period maximization over a control set: grid search followed by a
//! derivative-free polish.
//!
//! The polish maximizes the profile `p(prefix) = max_c f(prefix, c)` where
//! `c` is the last control coordinate: the inner maximum is a golden-section
//! search over the feasible slice of `c`, the outer one a compass search
//! over the prefix with step halving down to the tolerance.

use crate::control::{lexicographic_cmp, ControlSetSpec};
use crate::error::{Error, Result};
use crate::tree::{NodeId, ScenarioTree};

/// Values within this distance of the maximum count as ties.
pub const TIE_TOLERANCE: f64 = 1e-9;
const MAX_PROFILE_EVALUATIONS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerSettings {
    pub resolution: f64,
    pub polish: bool,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerResult {
    pub value: f64,
    /// `None` when the control set is empty.
    pub control: Option<Vec<f64>>,
    pub candidates: usize,
}

impl InnerResult {
    pub fn empty() -> Self {
        Self {
            value: f64::NEG_INFINITY,
            control: None,
            candidates: 0,
        }
    }
}

/// Maximizes `objective` over `Theta(x)` at `node`. The reported value is the
/// exact maximum found; the control is the lexicographically smallest
/// candidate within [`TIE_TOLERANCE`] of it unless the polish improves on
/// the grid.
pub fn maximize<F>(
    tree: &ScenarioTree,
    node: NodeId,
    controls: &ControlSetSpec,
    x: &[f64],
    settings: &InnerSettings,
    objective: F,
) -> Result<InnerResult>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let candidates = match controls.discretize(tree, node, x, settings.resolution) {
        Ok(c) => c,
        Err(Error::EmptyControlSet { .. }) => return Ok(InnerResult::empty()),
        Err(e) => return Err(e),
    };
    maximize_over(tree, node, controls, x, settings, candidates, objective)
}

/// Same as [`maximize`] with a precomputed candidate list.
pub fn maximize_over<F>(
    tree: &ScenarioTree,
    node: NodeId,
    controls: &ControlSetSpec,
    x: &[f64],
    settings: &InnerSettings,
    mut candidates: Vec<Vec<f64>>,
    objective: F,
) -> Result<InnerResult>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if candidates.is_empty() {
        return Ok(InnerResult::empty());
    }
    candidates.sort_by(|a, b| lexicographic_cmp(a, b));
    let mut values = Vec::with_capacity(candidates.len());
    for z in &candidates {
        let v = objective(z)?;
        check_value(node, z, v)?;
        values.push(v);
    }
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    let top = values[best];
    let chosen = values
        .iter()
        .position(|&v| v >= top - TIE_TOLERANCE)
        .unwrap_or(best);
    let mut result = InnerResult {
        value: top,
        control: Some(candidates[chosen].clone()),
        candidates: candidates.len(),
    };
    if settings.polish && controls.is_continuous() && top.is_finite() {
        let (v, z) = polish(tree, node, controls, x, &candidates[best], top, settings, &objective)?;
        if v > top {
            result.value = v;
            result.control = Some(z);
        }
    }
    Ok(result)
}

fn check_value(node: NodeId, z: &[f64], v: f64) -> Result<()> {
    if v.is_nan() {
        return Err(Error::Divergence {
            node,
            reason: format!("objective is undefined at control {z:?}"),
        });
    }
    if v == f64::INFINITY {
        return Err(Error::Divergence {
            node,
            reason: format!("objective is +inf at control {z:?}"),
        });
    }
    Ok(())
}

/// Golden-section search for a maximum on `[lo, hi]`; returns the best point
/// evaluated, endpoints included.
pub fn golden_section<F>(lo: f64, hi: f64, tol: f64, mut f: F) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut best = (lo, f(lo)?);
    let consider = |x: f64, v: f64, best: &mut (f64, f64)| {
        if v > best.1 {
            *best = (x, v);
        }
    };
    if hi <= lo {
        return Ok(best);
    }
    let fh = f(hi)?;
    consider(hi, fh, &mut best);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    consider(c, fc, &mut best);
    consider(d, fd, &mut best);
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
            consider(c, fc, &mut best);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
            consider(d, fd, &mut best);
        }
    }
    Ok(best)
}

#[allow(clippy::too_many_arguments)]
fn polish<F>(
    tree: &ScenarioTree,
    node: NodeId,
    controls: &ControlSetSpec,
    x: &[f64],
    start: &[f64],
    start_value: f64,
    settings: &InnerSettings,
    objective: &F,
) -> Result<(f64, Vec<f64>)>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let d = start.len();
    if d == 0 {
        return Ok((start_value, start.to_vec()));
    }
    let h = settings.resolution;
    let tol = settings.tolerance;
    let eval = |z: &[f64]| -> Result<f64> {
        if !controls.contains(tree, node, x, z)? {
            return Ok(f64::NEG_INFINITY);
        }
        let v = objective(z)?;
        check_value(node, z, v)?;
        Ok(v)
    };
    let evaluations = std::cell::Cell::new(0usize);
    let profile = |prefix: &[f64], center: f64| -> Result<(f64, f64)> {
        evaluations.set(evaluations.get() + 1);
        let slice = controls.last_coordinate_slice(tree, node, x, prefix, center)?;
        let Some((a, b)) = slice else {
            return Ok((center, f64::NEG_INFINITY));
        };
        let lo = a.max(center - 2.0 * h);
        let hi = b.min(center + 2.0 * h);
        let mut z = prefix.to_vec();
        z.push(0.0);
        let mut at = |c: f64| -> Result<f64> {
            z[d - 1] = c;
            eval(&z)
        };
        if lo > hi {
            let c = center.clamp(a, b);
            return Ok((c, at(c)?));
        }
        let (c, v) = golden_section(lo, hi, tol, &mut at)?;
        if (lo..=hi).contains(&center) {
            let vc = at(center)?;
            if vc >= v {
                return Ok((center, vc));
            }
        }
        Ok((c, v))
    };

    let mut prefix = start[..d - 1].to_vec();
    let (mut last, mut best) = (start[d - 1], start_value);
    let (c, v) = profile(&prefix, last)?;
    if v > best {
        last = c;
        best = v;
    }
    if d >= 2 {
        let m = d - 1;
        let mut dirs: Vec<Vec<f64>> = Vec::new();
        for i in 0..m {
            for s in [1.0, -1.0] {
                let mut e = vec![0.0; m];
                e[i] = s;
                dirs.push(e);
            }
        }
        for i in 0..m {
            for j in i + 1..m {
                for (si, sj) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                    let mut e = vec![0.0; m];
                    e[i] = si;
                    e[j] = sj;
                    dirs.push(e);
                }
            }
        }
        let mut step = h;
        while step >= tol {
            let mut moved = false;
            for dir in &dirs {
                let trial: Vec<f64> = prefix.iter().zip(dir).map(|(p, e)| p + step * e).collect();
                let (c, v) = profile(&trial, last)?;
                if v > best {
                    prefix = trial;
                    last = c;
                    best = v;
                    moved = true;
                    break;
                }
            }
            if !moved {
                step *= 0.5;
            }
            if evaluations.get() > MAX_PROFILE_EVALUATIONS {
                break;
            }
        }
    }
    prefix.push(last);
    Ok((best, prefix))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_section_finds_interior_and_boundary_maxima() {
        let (x, v) = golden_section(-1.0, 3.0, 1e-10, |x| Ok(-(x - 0.3) * (x - 0.3))).unwrap();
        assert!((x - 0.3).abs() < 1e-8 && v <= 0.0);
        let (x, _) = golden_section(0.0, 1.0, 1e-10, |x| Ok(-x)).unwrap();
        assert_eq!(x, 0.0);
    }

    #[test]
    fn ties_pick_smallest_control() {
        let tree = ScenarioTree::binomial(1, 0.5, 1.0, -1.0).unwrap();
        let set = ControlSetSpec::ExplicitGrid {
            grids: vec![vec![vec![1.0], vec![-1.0], vec![0.5]], vec![], vec![]],
        };
        let settings = InnerSettings {
            resolution: 0.1,
            polish: true,
            tolerance: 1e-7,
        };
        let r = maximize(&tree, tree.root(), &set, &[0.0], &settings, |z| Ok(z[0] * z[0])).unwrap();
        assert_eq!(r.value, 1.0);
        assert_eq!(r.control, Some(vec![-1.0]));
    }

    #[test]
    fn polish_reaches_off_grid_optimum_in_two_dimensions() {
        let tree = ScenarioTree::binomial(1, 0.5, 1.0, -1.0).unwrap();
        let set = ControlSetSpec::closed_box(&[-1.0, -1.0], &[1.0, 1.0]);
        let settings = InnerSettings {
            resolution: 0.25,
            polish: true,
            tolerance: 1e-9,
        };
        let f = |z: &[f64]| Ok(-(z[0] - 0.123).powi(2) - 2.0 * (z[1] + 0.377).powi(2) - 0.5 * z[0] * z[1]);
        let r = maximize(&tree, tree.root(), &set, &[0.0], &settings, f).unwrap();
        let z = r.control.unwrap();
        // 2a + 0.5b = 0.246, 0.5a + 4b = -1.508
        let det = 2.0 * 4.0 - 0.25;
        let a = (0.246 * 4.0 + 0.5 * 1.508) / det;
        let b = (2.0 * -1.508 - 0.5 * 0.246) / det;
        assert!((z[0] - a).abs() < 1e-5 && (z[1] - b).abs() < 1e-5, "{z:?} vs {a}, {b}");
    }

    #[test]
    fn infinite_objective_is_divergence() {
        let tree = ScenarioTree::binomial(1, 0.5, 1.0, -1.0).unwrap();
        let set = ControlSetSpec::closed_box(&[0.0], &[1.0]);
        let settings = InnerSettings {
            resolution: 0.5,
            polish: false,
            tolerance: 1e-7,
        };
        let r = maximize(&tree, tree.root(), &set, &[0.0], &settings, |_| Ok(f64::INFINITY));
        assert!(matches!(r, Err(Error::Divergence { .. })));
    }
}
