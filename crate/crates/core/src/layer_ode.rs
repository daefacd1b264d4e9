//! Leading-order layer dynamics
//!   xi_j' = (2 eps / qbar_j^2) (varsigma_{j+1} k_{j+1}^+ E_{j+1} - varsigma_j k_j^- E_j)
//! and the reduced energy whose weighted gradient it is.

use serde::Serialize;

use crate::chain::{interaction_bracket, ChainModel, LayerConfig};
use crate::error::{Error, Result};

pub fn rhs(chain: &ChainModel, cfg: &LayerConfig) -> Result<Vec<f64>> {
    cfg.validate(chain)?;
    Ok(rhs_unchecked(chain, &cfg.gaps(), cfg.eps))
}

fn rhs_unchecked(chain: &ChainModel, gaps: &[f64], eps: f64) -> Vec<f64> {
    interaction_bracket(chain, gaps, eps)
        .iter()
        .zip(&chain.qbar2)
        .map(|(b, q2)| 2.0 * eps / q2 * b)
        .collect()
}

/// J0 = base + interaction with base = eps sum qbar^2 and
/// interaction = -2 eps^2 sum varsigma_h k_h / mu_h E_h. The two parts are kept
/// apart because the interaction is far below the rounding level of the base.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ReducedEnergy {
    pub base: f64,
    pub interaction: f64,
}

impl ReducedEnergy {
    pub fn total(&self) -> f64 {
        self.base + self.interaction
    }
}

pub fn reduced_energy(chain: &ChainModel, cfg: &LayerConfig) -> Result<ReducedEnergy> {
    cfg.validate(chain)?;
    reduced_energy_unchecked(chain, &cfg.gaps(), cfg.eps)
}

fn reduced_energy_unchecked(chain: &ChainModel, gaps: &[f64], eps: f64) -> Result<ReducedEnergy> {
    if !chain.h4 {
        return Err(Error::Unsupported("the reduced energy without parallel tails".into()));
    }
    let base = eps * chain.qbar2.iter().sum::<f64>();
    let interaction = -2.0
        * eps
        * eps
        * (0..chain.len())
            .map(|h| chain.varsigma[h] * chain.k[h] / chain.mu[h] * (-chain.mu[h] * gaps[h] / eps).exp())
            .sum::<f64>();
    Ok(ReducedEnergy { base, interaction })
}

#[derive(Clone, Debug, Serialize)]
pub struct ReducedState {
    pub t: f64,
    pub xi: Vec<f64>,
    pub gaps: Vec<f64>,
    /// None when H4 fails.
    pub energy: Option<ReducedEnergy>,
}

#[derive(Clone, Debug, Serialize)]
pub struct OdeTrajectory {
    pub states: Vec<ReducedState>,
    /// True when integration stopped at the boundary of the admissible set.
    pub collided: bool,
    /// Index of the gap that hit its margin.
    pub collision_gap: Option<usize>,
    pub steps: usize,
    pub rejected: usize,
}

#[derive(Clone, Debug)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Relative time accuracy of the located collision.
    pub event_tol: f64,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self { rtol: 1e-10, atol: 1e-13, max_steps: 1_000_000, event_tol: 1e-10 }
    }
}

// Dormand-Prince 5(4); the field is autonomous so the nodes are not needed
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] =
    [5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0, -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0];

struct Field<'a> {
    chain: &'a ChainModel,
    eps: f64,
}

impl Field<'_> {
    fn eval(&self, xi: &[f64]) -> Vec<f64> {
        rhs_unchecked(self.chain, &gaps_of(xi), self.eps)
    }

    /// One step; returns the fifth-order update and the max-norm error estimate.
    fn step(&self, y: &[f64], h: f64) -> (Vec<f64>, f64) {
        let n = y.len();
        let mut k: Vec<Vec<f64>> = Vec::with_capacity(7);
        for s in 0..7 {
            let ys: Vec<f64> = (0..n).map(|i| y[i] + h * (0..s).map(|r| A[s][r] * k[r][i]).sum::<f64>()).collect();
            k.push(self.eval(&ys));
        }
        let y5: Vec<f64> = (0..n).map(|i| y[i] + h * (0..7).map(|s| B5[s] * k[s][i]).sum::<f64>()).collect();
        let err: Vec<f64> = (0..n).map(|i| h * (0..7).map(|s| (B5[s] - B4[s]) * k[s][i]).sum::<f64>()).collect();
        (y5, crate::linalg::max_abs(&err))
    }
}

fn gaps_of(xi: &[f64]) -> Vec<f64> {
    let n = xi.len();
    (0..n).map(|j| if j == 0 { xi[0] - xi[n - 1] + 1.0 } else { xi[j] - xi[j - 1] }).collect()
}

fn min_margin(chain: &ChainModel, xi: &[f64], rho: f64) -> (f64, usize) {
    gaps_of(xi)
        .iter()
        .zip(&chain.mu)
        .enumerate()
        .map(|(j, (g, mu))| (g - rho / mu, j))
        .fold((f64::INFINITY, 0), |a, b| if b.0 < a.0 { b } else { a })
}

fn state(chain: &ChainModel, t: f64, xi: Vec<f64>, eps: f64) -> ReducedState {
    let gaps = gaps_of(&xi);
    let energy = reduced_energy_unchecked(chain, &gaps, eps).ok();
    ReducedState { t, xi, gaps, energy }
}

/// Integrates to t_end, recording every accepted step.
pub fn integrate(chain: &ChainModel, cfg0: &LayerConfig, t_end: f64, opts: &OdeOptions) -> Result<OdeTrajectory> {
    integrate_inner(chain, cfg0, &[t_end], true, opts)
}

/// Integrates through the given increasing output times, recording only those
/// (plus the collision state if one occurs). states[0] is always the initial state.
pub fn integrate_at(chain: &ChainModel, cfg0: &LayerConfig, times: &[f64], opts: &OdeOptions) -> Result<OdeTrajectory> {
    integrate_inner(chain, cfg0, times, false, opts)
}

fn integrate_inner(
    chain: &ChainModel,
    cfg0: &LayerConfig,
    times: &[f64],
    every_step: bool,
    opts: &OdeOptions,
) -> Result<OdeTrajectory> {
    cfg0.validate(chain)?;
    if times.windows(2).any(|w| w[1] < w[0]) || times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(Error::InvalidInput("output times must be finite, nonnegative and increasing".into()));
    }
    let field = Field { chain, eps: cfg0.eps };
    let rho = cfg0.rho;
    let mut y = cfg0.xi.clone();
    let mut t = 0.0;
    let mut states = vec![state(chain, t, y.clone(), cfg0.eps)];
    let mut out = times.iter().copied().skip_while(|&s| s <= 0.0).peekable();
    let t_final = times.last().copied().unwrap_or(0.0);
    let speed0 = crate::linalg::max_abs(&field.eval(&y));
    let mut h = if speed0 > 0.0 { (1e-3 * cfg0.min_gap() / speed0).min(t_final.max(1e-300)) } else { t_final };
    let (mut steps, mut rejected) = (0, 0);
    while let Some(&target) = out.peek() {
        if t >= target {
            out.next();
            if !every_step {
                states.push(state(chain, t, y.clone(), cfg0.eps));
            }
            continue;
        }
        if steps >= opts.max_steps {
            return Err(Error::Stiffness { t, dt: h });
        }
        let hh = h.min(target - t);
        let (y5, err) = field.step(&y, hh);
        let scale = opts.atol + opts.rtol * crate::linalg::max_abs(&y);
        let ratio = err / scale;
        if ratio > 1.0 || y5.iter().any(|v| !v.is_finite()) {
            rejected += 1;
            h = if ratio.is_finite() { hh * (0.9 * ratio.powf(-0.2)).clamp(0.1, 0.5) } else { 0.1 * hh };
            continue;
        }
        steps += 1;
        let (margin, gap) = min_margin(chain, &y5, rho);
        if margin <= 0.0 {
            // bisect the step length for the crossing
            let (mut lo, mut hi) = (0.0, hh);
            let mut y_lo = y.clone();
            while hi - lo > opts.event_tol * (t + hh).max(f64::MIN_POSITIVE) {
                let mid = 0.5 * (lo + hi);
                let (ym, _) = field.step(&y, mid);
                if min_margin(chain, &ym, rho).0 > 0.0 {
                    lo = mid;
                    y_lo = ym;
                } else {
                    hi = mid;
                }
            }
            states.push(state(chain, t + lo, y_lo, cfg0.eps));
            return Ok(OdeTrajectory { states, collided: true, collision_gap: Some(gap), steps, rejected });
        }
        t = if hh == target - t { target } else { t + hh };
        y = y5;
        if every_step {
            states.push(state(chain, t, y.clone(), cfg0.eps));
        }
        let grow = if ratio > 0.0 { (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0) } else { 5.0 };
        // a step clipped to an output time says little about the admissible size
        h = if hh < h { h.max(hh * grow) } else { hh * grow };
    }
    Ok(OdeTrajectory { states, collided: false, collision_gap: None, steps, rejected })
}
