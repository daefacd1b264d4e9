//! Decomposition u = u^xi + w with w orthogonal to every d u^xi / d xi_j, and
//! layer trajectories measured from PDE snapshots.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::chain::{velocities_from_c, AnsatzFields, ChainModel, LayerConfig};
use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::layer_ode;

#[derive(Clone, Debug)]
pub struct ProjectOptions {
    /// |<u - u^xi, u_xi_j>| < tol * |u_xi_j| at convergence.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ProjectOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 50 }
    }
}

#[derive(Clone, Debug)]
pub struct Projection {
    pub cfg: LayerConfig,
    pub w: GridFunction,
    pub w_norm: f64,
    pub w_norm_w12: f64,
    /// |<w, u_xi_j>| / |u_xi_j|
    pub orthogonality: Vec<f64>,
    pub iterations: usize,
    /// Norm of the exact ansatz residual at the projected xi.
    pub ansatz_residual: f64,
    /// Projection of that residual on the normalised tangents.
    pub cbar: Vec<f64>,
}

fn nearest_minimum(chain: &ChainModel, v: &[f64], radius: f64) -> Option<usize> {
    let pot = chain.potential();
    pot.minima()
        .iter()
        .enumerate()
        .map(|(i, a)| (i, a.iter().zip(v).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()))
        .filter(|&(_, d)| d < radius)
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
}

/// Interface positions read off from u: plateau runs are labelled by the
/// nearest minimum, each change of label is placed at the maximum of |u_x|
/// between the runs, and the cyclic list is matched to the chain order.
pub fn seed_positions(u: &GridFunction, chain: &ChainModel) -> Result<Vec<f64>> {
    let n = u.n();
    let nl = chain.len();
    let minima = chain.potential().minima();
    let mut sep = f64::INFINITY;
    for (i, a) in minima.iter().enumerate() {
        for b in &minima[i + 1..] {
            sep = sep.min(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt());
        }
    }
    let labels: Vec<Option<usize>> = (0..n).map(|i| nearest_minimum(chain, u.point(i), 0.25 * sep)).collect();
    let Some(start) = labels.iter().position(|l| l.is_some()) else {
        return Err(Error::OutOfNeighborhood("no plateau values found".into()));
    };
    // runs of equal labels, cyclic, beginning at `start`
    let mut runs: Vec<(usize, usize, usize)> = Vec::new(); // (label, first, last) as offsets from start
    for off in 0..n {
        let Some(l) = labels[(start + off) % n] else { continue };
        match runs.last_mut() {
            Some(r) if r.0 == l => r.2 = off,
            _ => runs.push((l, off, off)),
        }
    }
    if runs.len() > 1 && runs[0].0 == runs[runs.len() - 1].0 {
        // the last run wraps around into the first
        let last = runs.pop().unwrap();
        let first = runs.remove(0);
        runs.push((first.0, last.1, first.2 + n));
    }
    if runs.len() != nl {
        return Err(Error::OutOfNeighborhood(format!("found {} transitions, chain has {nl}", runs.len())));
    }
    let speed2 = |i: usize| -> f64 {
        let (a, b) = (u.point((i + 1) % n), u.point((i + n - 1) % n));
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>()
    };
    let mut transitions = Vec::with_capacity(nl);
    for r in 0..nl {
        let (from, _, end) = runs[r];
        let (to, begin, _) = runs[(r + 1) % nl];
        let begin = if begin <= end { begin + n } else { begin };
        let best = (end..=begin).max_by(|&a, &b| speed2((start + a) % n).total_cmp(&speed2((start + b) % n))).unwrap();
        let (ym, y0, yp) = (speed2((start + best + n - 1) % n), speed2((start + best) % n), speed2((start + best + 1) % n));
        let den = ym - 2.0 * y0 + yp;
        let off = if den.abs() > 0.0 { (0.5 * (ym - yp) / den).clamp(-1.0, 1.0) } else { 0.0 };
        let pos = ((start + best) as f64 + off) / n as f64;
        transitions.push((pos.rem_euclid(1.0), from, to));
    }
    let seq = &chain.sequence;
    let offset = (0..nl)
        .find(|&r| (0..nl).all(|k| transitions[k].1 == seq[(r + k) % nl] && transitions[k].2 == seq[(r + k + 1) % nl]))
        .ok_or_else(|| Error::OutOfNeighborhood("transitions do not match the chain order".into()))?;
    let mut pos = vec![0.0; nl];
    for (k, t) in transitions.iter().enumerate() {
        pos[(offset + k) % nl] = t.0;
    }
    let mut xi = vec![pos[0]; nl];
    for j in 1..nl {
        xi[j] = xi[j - 1] + (pos[j] - pos[j - 1]).rem_euclid(1.0);
    }
    Ok(xi)
}

/// Newton on G_i(xi) = <u - u^xi, u_xi_i> = 0.
pub fn project(
    u: &GridFunction,
    chain: &ChainModel,
    guess: Option<&LayerConfig>,
    opts: &ProjectOptions,
) -> Result<Projection> {
    let nl = chain.len();
    let (mut xi, rho) = match guess {
        Some(g) => (g.xi.clone(), g.rho),
        None => (seed_positions(u, chain)?, chain.default_rho()),
    };
    if xi.len() != nl {
        return Err(Error::InvalidInput(format!("{} guessed positions for a chain of {nl}", xi.len())));
    }
    let eps = u.eps();
    let mut polish: Option<(Projection, usize)> = None;
    for it in 0..=opts.max_iter {
        let fields = AnsatzFields::evaluate(chain, &xi, eps, u.n())?;
        let w = u.sub(&fields.u);
        let g: Vec<f64> = fields.tangents.iter().map(|t| w.inner(t)).collect();
        let ortho: Vec<f64> = g.iter().zip(&fields.tangent_norms).map(|(gi, nt)| gi.abs() / nt).collect();
        let worst = ortho.iter().cloned().fold(0.0, f64::max);
        if let Some((best, left)) = polish.take() {
            // keep polishing only while it helps
            let prev = best.orthogonality.iter().cloned().fold(0.0, f64::max);
            if worst >= 0.5 * prev || left == 0 {
                return Ok(if worst < prev { finish(xi, eps, rho, w, ortho, it, &fields) } else { best });
            }
            polish = Some((finish(xi.clone(), eps, rho, w.clone(), ortho, it, &fields), left - 1));
        } else if worst < opts.tol {
            polish = Some((finish(xi.clone(), eps, rho, w.clone(), ortho, it, &fields), 2));
        }
        if it == opts.max_iter {
            break;
        }
        let jac = DMatrix::from_fn(nl, nl, |i, j| {
            let d = -fields.tangents[j].inner(&fields.tangents[i]);
            if i == j {
                d + w.inner(&fields.curvatures[i])
            } else {
                d
            }
        });
        let step = jac
            .lu()
            .solve(&-DVector::from_vec(g))
            .ok_or_else(|| Error::OutOfNeighborhood("singular projection Jacobian".into()))?;
        let min_gap = gaps(&xi).into_iter().fold(f64::INFINITY, f64::min);
        let size = step.amax();
        let scale = if size > 0.25 * min_gap { 0.25 * min_gap / size } else { 1.0 };
        for j in 0..nl {
            xi[j] += scale * step[j];
        }
        if gaps(&xi).iter().any(|&g| g <= 0.0) {
            return Err(Error::OutOfNeighborhood("layer positions collapsed during projection".into()));
        }
    }
    if let Some((best, _)) = polish {
        return Ok(best);
    }
    Err(Error::OutOfNeighborhood(format!("projection did not converge in {} iterations", opts.max_iter)))
}

fn finish(
    xi: Vec<f64>,
    eps: f64,
    rho: f64,
    w: GridFunction,
    orthogonality: Vec<f64>,
    iterations: usize,
    fields: &AnsatzFields,
) -> Projection {
    Projection {
        cfg: LayerConfig { xi, eps, rho },
        w_norm: w.norm(),
        w_norm_w12: w.norm_w12(),
        w,
        orthogonality,
        iterations,
        ansatz_residual: fields.residual_norm(),
        cbar: fields.cbar(),
    }
}

fn gaps(xi: &[f64]) -> Vec<f64> {
    let n = xi.len();
    (0..n).map(|j| if j == 0 { xi[0] - xi[n - 1] + 1.0 } else { xi[j] - xi[j - 1] }).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct TrackSample {
    pub t: f64,
    pub xi: Vec<f64>,
    pub gaps: Vec<f64>,
    pub w_norm: f64,
    pub w_norm_w12: f64,
    pub ansatz_residual: f64,
    /// eps^{1/2} cbar_j / qbar_j
    pub cbar_velocity: Vec<f64>,
    /// Right-hand side of the layer equation.
    pub ode_velocity: Vec<f64>,
    /// Central differences of xi; None where no stride fits.
    pub measured_velocity: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrackedTrajectory {
    pub samples: Vec<TrackSample>,
    /// Snapshot index and reason where tracking stopped early.
    pub failure: Option<(usize, String)>,
}

impl TrackedTrajectory {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    /// Fills measured velocities by central differences whose stride makes
    /// |dxi| about 100 times the projection tolerance.
    pub fn fill_velocities(&mut self, proj_tol: f64) {
        let k = self.samples.len();
        let target = 100.0 * proj_tol;
        let xi: Vec<Vec<f64>> = self.samples.iter().map(|s| s.xi.clone()).collect();
        let t: Vec<f64> = self.times();
        for i in 0..k {
            let mut found = None;
            for s in 1..k {
                if i < s || i + s >= k {
                    break;
                }
                let moved = (0..xi[i].len()).map(|j| (xi[i + s][j] - xi[i - s][j]).abs()).fold(0.0, f64::max);
                if moved >= 2.0 * target {
                    let dt = t[i + s] - t[i - s];
                    found = Some((0..xi[i].len()).map(|j| (xi[i + s][j] - xi[i - s][j]) / dt).collect());
                    break;
                }
            }
            self.samples[i].measured_velocity = found;
        }
    }
}

/// Projects every snapshot in order, warm-starting from the previous one.
pub fn track(
    snapshots: &[(f64, GridFunction)],
    chain: &ChainModel,
    guess: Option<&LayerConfig>,
    opts: &ProjectOptions,
) -> TrackedTrajectory {
    let mut samples = Vec::with_capacity(snapshots.len());
    let mut failure = None;
    let mut prev: Option<LayerConfig> = guess.cloned();
    for (idx, (t, u)) in snapshots.iter().enumerate() {
        match track_one(u, chain, prev.as_ref(), opts) {
            Ok((p, sample)) => {
                if let Some(q) = &prev {
                    let half = 0.5 * q.min_gap();
                    let jump = p.cfg.xi.iter().zip(&q.xi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                    if jump > half {
                        failure = Some((idx, format!("layer jump {jump:.4} exceeds half the minimum gap")));
                        break;
                    }
                }
                samples.push(TrackSample { t: *t, ..sample });
                prev = Some(p.cfg);
            }
            Err(e) => {
                failure = Some((idx, e.to_string()));
                break;
            }
        }
    }
    let mut out = TrackedTrajectory { samples, failure };
    out.fill_velocities(opts.tol);
    out
}

/// One projection plus the derived sample (time left at zero).
pub fn track_one(
    u: &GridFunction,
    chain: &ChainModel,
    guess: Option<&LayerConfig>,
    opts: &ProjectOptions,
) -> Result<(Projection, TrackSample)> {
    let p = project(u, chain, guess, opts)?;
    let gaps = p.cfg.gaps();
    let ode_velocity = match layer_ode::rhs(chain, &p.cfg) {
        Ok(v) => v,
        Err(Error::Domain(_)) => vec![f64::NAN; chain.len()],
        Err(e) => return Err(e),
    };
    let sample = TrackSample {
        t: 0.0,
        xi: p.cfg.xi.clone(),
        gaps,
        w_norm: p.w_norm,
        w_norm_w12: p.w_norm_w12,
        ansatz_residual: p.ansatz_residual,
        cbar_velocity: velocities_from_c(chain, u.eps(), &p.cbar),
        ode_velocity,
        measured_velocity: None,
    };
    Ok((p, sample))
}
