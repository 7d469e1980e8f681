use super::{solve_backward, Problem, SolverConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementLevel {
    pub state_points: usize,
    pub control_resolution: f64,
    pub value: f64,
}

/// `y_0(x0)` along successive halvings of the state spacing and the control
/// resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementStudy {
    pub levels: Vec<RefinementLevel>,
    /// `|y^(k) - y^(k-1)|`.
    pub deltas: Vec<f64>,
    /// `delta_(k-1) / delta_k`.
    pub ratios: Vec<f64>,
    /// Richardson-style estimate of the error left at the finest level,
    /// `delta_last / (ratio_last - 1)`; `None` without convergence.
    pub remaining_error: Option<f64>,
}

impl RefinementStudy {
    /// Smallest ratio between consecutive deltas.
    pub fn min_ratio(&self) -> Option<f64> {
        self.ratios.iter().copied().reduce(f64::min)
    }
}

/// Solves at `levels` resolutions starting from `base`. Level `k` uses
/// `2^k (n - 1) + 1` state points and resolution `h / 2^k`, so coarse knots
/// stay knots.
pub fn refinement_study(problem: &Problem, x0: f64, base: &SolverConfig, levels: usize) -> Result<RefinementStudy> {
    if levels < 2 {
        return Err(Error::Config("a refinement study needs at least 2 levels".into()));
    }
    let mut out = Vec::with_capacity(levels);
    let mut config = base.clone();
    for k in 0..levels {
        if k > 0 {
            config.state_points = 2 * config.state_points - 1;
            config.control_resolution /= 2.0;
        }
        let sol = solve_backward(problem, x0, &config)?;
        out.push(RefinementLevel {
            state_points: config.state_points,
            control_resolution: config.control_resolution,
            value: sol.root_value(),
        });
    }
    let deltas: Vec<f64> = out.windows(2).map(|w| (w[1].value - w[0].value).abs()).collect();
    let ratios: Vec<f64> = deltas.windows(2).map(|d| d[0] / d[1]).collect();
    let remaining_error = match (deltas.last(), ratios.last()) {
        (Some(&d), Some(&r)) if r > 1.0 => Some(d / (r - 1.0)),
        (Some(&d), None) => Some(d),
        _ => None,
    };
    Ok(RefinementStudy {
        levels: out,
        deltas,
        ratios,
        remaining_error,
    })
}
