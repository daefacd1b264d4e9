use serde::Serialize;

use super::{ChainModel, LayerConfig};
use crate::error::{Error, Result};
use crate::grid::GridFunction;

/// Periodic images kept on each side in the lattice sum.
pub const IMAGES: i32 = 2;
pub const MIN_POINTS_PER_EPS: f64 = 16.0;

// Tail contributions below this are dropped from the sums.
const NEGLIGIBLE: f64 = 1e-30;

/// The glued profile u^xi on the grid together with its xi-derivatives and
/// the exact residual eps^2 u_xx - W_u(u).
#[derive(Clone, Debug)]
pub struct AnsatzFields {
    pub u: GridFunction,
    /// d u / d xi_j = -(1/eps) sum_images u_j'.
    pub tangents: Vec<GridFunction>,
    /// d^2 u / d xi_j^2 = (1/eps^2) sum_images W_u(u_j).
    pub curvatures: Vec<GridFunction>,
    /// sum_{h, images} W_u(u_h) - W_u(u^xi), the residual of the ansatz
    /// (each profile solves u'' = W_u(u), so no differencing is needed).
    pub residual: GridFunction,
    pub tangent_norms: Vec<f64>,
}

fn check_resolution(eps: f64, n: usize) -> Result<()> {
    let ppe = eps * n as f64;
    if ppe < MIN_POINTS_PER_EPS {
        return Err(Error::Resolution { points_per_eps: ppe, required: MIN_POINTS_PER_EPS });
    }
    Ok(())
}

impl AnsatzFields {
    /// Validates cfg against the admissible set first.
    pub fn new(chain: &ChainModel, cfg: &LayerConfig, n: usize) -> Result<Self> {
        cfg.validate(chain)?;
        for (j, (g, mu)) in cfg.gaps().iter().zip(&chain.mu).enumerate() {
            if (-mu * g / (2.0 * cfg.eps)).exp() >= 0.1 {
                log::warn!("gap {j} = {g:.4} is not resolved by the tails at eps = {}", cfg.eps);
            }
        }
        Self::evaluate(chain, &cfg.xi, cfg.eps, n)
    }

    /// No admissibility check on xi beyond cyclic order (used inside Newton loops).
    pub fn evaluate(chain: &ChainModel, xi: &[f64], eps: f64, n: usize) -> Result<Self> {
        check_resolution(eps, n)?;
        let nl = chain.len();
        if xi.len() != nl {
            return Err(Error::InvalidInput(format!("{} positions for a chain of {nl}", xi.len())));
        }
        if xi.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("layer positions {xi:?}")));
        }
        // integer shifts leave the ansatz unchanged; keep xi_0 in [0, 1)
        let shift = xi[0].floor();
        let xi: Vec<f64> = xi.iter().map(|x| x - shift).collect();
        let m = chain.dim();
        let pot = chain.potential();
        let mut u = GridFunction::zeros(n, m, eps);
        let mut tangents = vec![GridFunction::zeros(n, m, eps); nl];
        let mut curvatures = vec![GridFunction::zeros(n, m, eps); nl];
        let mut wsum = GridFunction::zeros(n, m, eps);
        let mut val = vec![0.0; m];
        let mut der = vec![0.0; m];
        let mut g = vec![0.0; m];
        let a0 = &chain.minima[0];
        for i in 0..n {
            let x = i as f64 / n as f64;
            let ui = &mut u.values_mut()[i * m..(i + 1) * m];
            ui.copy_from_slice(a0);
            for (h, het) in chain.connections.iter().enumerate() {
                let base_neg = &chain.minima[(h + 1) % nl];
                let base_pos = &chain.minima[h];
                for k in -IMAGES..=IMAGES {
                    let s = (x - k as f64 - xi[h]) / eps;
                    let base = if k < 0 { base_neg } else { base_pos };
                    let tail = if s > 0.0 {
                        het.right.kbar * (-het.right.mu * s).exp()
                    } else {
                        het.left.kbar * (het.left.mu * s).exp()
                    };
                    if tail < NEGLIGIBLE {
                        // the profile sits on its end state, which equals `base`
                        // unless the image lies on the other side of the cell
                        let end = if s > 0.0 { &het.a_plus } else { &het.a_minus };
                        for c in 0..m {
                            ui[c] += end[c] - base[c];
                        }
                        continue;
                    }
                    het.value_at(s, &mut val);
                    het.derivative_at(s, &mut der);
                    pot.grad(&val, &mut g);
                    let t = &mut tangents[h].values_mut()[i * m..(i + 1) * m];
                    let cv = &mut curvatures[h].values_mut()[i * m..(i + 1) * m];
                    let ws = &mut wsum.values_mut()[i * m..(i + 1) * m];
                    for c in 0..m {
                        ui[c] += val[c] - base[c];
                        t[c] -= der[c] / eps;
                        cv[c] += g[c] / (eps * eps);
                        ws[c] += g[c];
                    }
                }
            }
        }
        let mut residual = wsum;
        for i in 0..n {
            pot.grad(u.point(i), &mut g);
            for c in 0..m {
                residual.values_mut()[i * m + c] -= g[c];
            }
        }
        let tangent_norms = tangents.iter().map(|t| t.norm()).collect();
        Ok(Self { u, tangents, curvatures, residual, tangent_norms })
    }

    pub fn residual_norm(&self) -> f64 {
        self.residual.norm()
    }

    /// cbar_j = <F, u_xi_j / |u_xi_j|>.
    pub fn cbar(&self) -> Vec<f64> {
        self.tangents.iter().zip(&self.tangent_norms).map(|(t, nt)| self.residual.inner(t) / nt).collect()
    }

    /// Cosines between the tangent directions.
    pub fn tangent_overlaps(&self) -> Vec<Vec<f64>> {
        let n = self.tangents.len();
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| self.tangents[i].inner(&self.tangents[j]) / (self.tangent_norms[i] * self.tangent_norms[j]))
                    .collect()
            })
            .collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TailProducts {
    /// exp(-mu_j^- gap_j / eps)
    pub e_minus: Vec<f64>,
    /// exp(-mu_j^+ gap_j / eps)
    pub e_plus: Vec<f64>,
    /// exp(-mu_j gap_j / eps) = sqrt(e_minus e_plus)
    pub e: Vec<f64>,
}

pub fn tail_products(chain: &ChainModel, cfg: &LayerConfig) -> Result<TailProducts> {
    cfg.validate(chain)?;
    Ok(tail_products_unchecked(chain, &cfg.gaps(), cfg.eps))
}

pub(crate) fn tail_products_unchecked(chain: &ChainModel, gaps: &[f64], eps: f64) -> TailProducts {
    let f = |rates: &[f64]| -> Vec<f64> { gaps.iter().zip(rates).map(|(g, mu)| (-mu * g / eps).exp()).collect() };
    TailProducts { e_minus: f(&chain.mu_minus), e_plus: f(&chain.mu_plus), e: f(&chain.mu) }
}

/// varsigma_{j+1} k_{j+1}^+ E_{j+1} - varsigma_j k_j^- E_j, cyclically; the
/// common bracket of c0 and the layer equation.
pub fn interaction_bracket(chain: &ChainModel, gaps: &[f64], eps: f64) -> Vec<f64> {
    let n = chain.len();
    let tp = tail_products_unchecked(chain, gaps, eps);
    let (kp, km) = if chain.h4 { (&chain.k, &chain.k) } else { (&chain.k_plus, &chain.k_minus) };
    (0..n)
        .map(|j| {
            let jp = (j + 1) % n;
            chain.varsigma[jp] * kp[jp] * tp.e[jp] - chain.varsigma[j] * km[j] * tp.e[j]
        })
        .collect()
}

/// Leading-order bifurcation function (2 sqrt(eps) / qbar_j) * bracket_j.
pub fn c0(chain: &ChainModel, cfg: &LayerConfig) -> Result<Vec<f64>> {
    cfg.validate(chain)?;
    let b = interaction_bracket(chain, &cfg.gaps(), cfg.eps);
    Ok(b.iter().enumerate().map(|(j, v)| 2.0 * cfg.eps.sqrt() / chain.qbar(j) * v).collect())
}

/// Projection of the exact residual on the normalised tangents.
pub fn cbar(chain: &ChainModel, cfg: &LayerConfig, n: usize) -> Result<Vec<f64>> {
    Ok(AnsatzFields::new(chain, cfg, n)?.cbar())
}

/// Layer velocities eps^{1/2} c_j / qbar_j implied by a bifurcation vector.
pub fn velocities_from_c(chain: &ChainModel, eps: f64, c: &[f64]) -> Vec<f64> {
    c.iter().enumerate().map(|(j, cj)| eps.sqrt() / chain.qbar(j) * cj).collect()
}
