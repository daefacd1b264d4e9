//! Lyapunov-Schmidt reduction around the ansatz: the spectrum of the
//! linearised operator L = -eps^2 D^2 + W_uu(u^xi), the fast correction v^xi
//! and the finite-dimensional bifurcation vector c(xi).

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::chain::{default_grid_points, interaction_bracket, AnsatzFields, ChainModel, LayerConfig};
use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::linalg::{self, BlockTridiag, BlockTridiagLu, SubspaceOptions};
use crate::potential::Potential;
use crate::tracking::{self, ProjectOptions};

/// The periodic block-tridiagonal matrix of -eps^2 D^2 + W_uu(u).
pub fn linearized_operator(pot: &Potential, u: &GridFunction) -> BlockTridiag {
    let (n, m) = (u.n(), u.m());
    let mm = m * m;
    let e2h2 = (u.eps() / u.h()).powi(2);
    let mut op = BlockTridiag::zeros(n, m, true);
    let mut hess = vec![0.0; mm];
    for i in 0..n {
        pot.hess(u.point(i), &mut hess);
        let d = BlockTridiag::block_mut(&mut op.diag, i, m);
        d.copy_from_slice(&hess);
        for c in 0..m {
            d[c * m + c] += 2.0 * e2h2;
            op.lower[i * mm + c * m + c] = -e2h2;
            op.upper[i * mm + c * m + c] = -e2h2;
        }
    }
    op
}

#[derive(Clone, Debug)]
pub struct SpectrumOptions {
    /// Eigenpairs beyond the N slow ones.
    pub extra: usize,
    pub guard: usize,
    /// Residual tolerance relative to the operator norm.
    pub tol: f64,
    pub max_iter: usize,
    /// Shift for shift-invert; default -0.05 mu_min^2.
    pub shift: Option<f64>,
    pub seed: u64,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        Self { extra: 2, guard: 6, tol: 1e-13, max_iter: 3000, shift: None, seed: 7 }
    }
}

/// The operator, its shifted factorisation and the lowest eigenpairs.
#[derive(Clone, Debug)]
pub struct SpectralData {
    pub operator: BlockTridiag,
    pub shifted: BlockTridiagLu,
    pub shift: f64,
    pub operator_norm: f64,
    /// Ascending; the first N are the slow ones.
    pub values: Vec<f64>,
    /// Unit in the h-weighted norm; the slow ones sign-aligned with the tangents.
    pub vectors: Vec<GridFunction>,
    pub residuals: Vec<f64>,
    pub iterations: usize,
    /// Orthonormal basis of the slow eigenspace, phi_j close to u_xi_j / |u_xi_j|.
    pub slow_basis: Vec<GridFunction>,
    /// |phi_j - u_xi_j / |u_xi_j||
    pub eta: Vec<f64>,
    /// |<phi_j, u_xi_j / |u_xi_j|>|
    pub alignment: Vec<f64>,
    /// lambda_{N+1} / max_{j<=N} |lambda_j|
    pub gap_ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectrumSummary {
    pub values: Vec<f64>,
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub shift: f64,
    pub gap_ratio: f64,
    pub eta: Vec<f64>,
    pub alignment: Vec<f64>,
}

impl SpectralData {
    pub fn slow_count(&self) -> usize {
        self.slow_basis.len()
    }

    /// lambda_{N+1}, the bottom of the fast spectrum.
    pub fn fast_bottom(&self) -> f64 {
        self.values[self.slow_count()]
    }

    pub fn summary(&self) -> SpectrumSummary {
        SpectrumSummary {
            values: self.values.clone(),
            residuals: self.residuals.clone(),
            iterations: self.iterations,
            shift: self.shift,
            gap_ratio: self.gap_ratio,
            eta: self.eta.clone(),
            alignment: self.alignment.clone(),
        }
    }

    /// Euclidean-unit copies of the slow basis, for projectors on raw data.
    fn slow_euclidean(&self) -> Vec<Vec<f64>> {
        self.slow_basis
            .iter()
            .map(|p| {
                let s = p.h().sqrt();
                p.values().iter().map(|v| v * s).collect()
            })
            .collect()
    }
}

fn project_out(basis: &[Vec<f64>], x: &mut [f64]) {
    for e in basis {
        let a = linalg::dot(e, x);
        linalg::axpy(-a, e, x);
    }
}

/// Gram-Schmidt on the projections of the normalised tangents onto the span
/// of the slow eigenvectors. Returns (phi, eta, condition number of the
/// projected tangents' Gram matrix).
pub fn slow_basis_gram_schmidt(
    tangents: &[GridFunction],
    slow_vectors: &[GridFunction],
) -> (Vec<GridFunction>, Vec<f64>, f64) {
    let unit: Vec<GridFunction> = tangents
        .iter()
        .map(|t| {
            let mut u = t.clone();
            u.scale(1.0 / t.norm());
            u
        })
        .collect();
    let projected: Vec<GridFunction> = unit
        .iter()
        .map(|t| {
            let mut p = GridFunction::zeros(t.n(), t.m(), t.eps());
            for e in slow_vectors {
                p.axpy(t.inner(e), e);
            }
            p
        })
        .collect();
    let k = projected.len();
    let gram = DMatrix::from_fn(k, k, |i, j| projected[i].inner(&projected[j]));
    let sv = gram.singular_values();
    let cond = sv.max() / sv.min().max(f64::MIN_POSITIVE);
    if cond > 1e6 {
        log::warn!("slow basis is ill-conditioned (Gram condition {cond:.3e})");
    }
    let mut phi: Vec<GridFunction> = Vec::with_capacity(k);
    for p in projected {
        let mut q = p;
        for _ in 0..2 {
            for e in &phi {
                let a = q.inner(e);
                q.axpy(-a, e);
            }
        }
        let nq = q.norm();
        q.scale(1.0 / nq);
        phi.push(q);
    }
    let eta = phi.iter().zip(&unit).map(|(p, t)| p.sub(t).norm()).collect();
    (phi, eta, cond)
}

/// Lowest N + extra eigenpairs of L at u, with the tangents as starting
/// vectors and as the reference for the slow basis.
pub fn spectrum_at(
    pot: &Potential,
    u: &GridFunction,
    tangents: &[GridFunction],
    mu_min: f64,
    opts: &SpectrumOptions,
) -> Result<SpectralData> {
    let nl = tangents.len();
    let operator = linearized_operator(pot, u);
    let shift = opts.shift.unwrap_or(-0.05 * mu_min * mu_min);
    let mut shifted_op = operator.clone();
    shifted_op.shift_diagonal(-shift);
    let shifted = shifted_op.factor()?;
    let operator_norm = operator.norm_inf();
    let start: Vec<Vec<f64>> = tangents.iter().map(|t| t.values().to_vec()).collect();
    let sub = SubspaceOptions {
        count: nl + opts.extra,
        guard: opts.guard,
        tol: opts.tol,
        max_iter: opts.max_iter,
        seed: opts.seed,
    };
    let pairs = linalg::lowest_eigenpairs(
        operator.dim(),
        &|x, y| operator.apply(x, y),
        &|x| shifted.solve(x),
        operator_norm,
        &sub,
        &start,
    )?;
    let inv_sqrt_h = 1.0 / u.h().sqrt();
    let mut vectors: Vec<GridFunction> = pairs
        .vectors
        .iter()
        .map(|v| GridFunction::from_vec(u.n(), u.m(), u.eps(), v.iter().map(|x| x * inv_sqrt_h).collect()))
        .collect();
    for (i, v) in vectors.iter_mut().enumerate() {
        let sign = if i < nl {
            // align with the tangent it overlaps most
            let best = tangents
                .iter()
                .map(|t| v.inner(t))
                .max_by(|a, b| a.abs().total_cmp(&b.abs()))
                .unwrap_or(1.0);
            best.signum()
        } else {
            let first = v.values().iter().find(|x| x.abs() > 1e-8).copied().unwrap_or(1.0);
            first.signum()
        };
        if sign < 0.0 {
            v.scale(-1.0);
        }
    }
    let (slow_basis, eta, _) = slow_basis_gram_schmidt(tangents, &vectors[..nl]);
    let alignment = slow_basis
        .iter()
        .zip(tangents)
        .map(|(p, t)| p.inner(t).abs() / t.norm())
        .collect();
    let slow_max = pairs.values[..nl].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gap_ratio = pairs.values[nl] / slow_max.max(f64::MIN_POSITIVE);
    Ok(SpectralData {
        operator,
        shifted,
        shift,
        operator_norm,
        values: pairs.values,
        vectors,
        residuals: pairs.residuals,
        iterations: pairs.iterations,
        slow_basis,
        eta,
        alignment,
        gap_ratio,
    })
}

/// Spectrum of L^xi at the ansatz for cfg on an n-point grid.
pub fn linearized_spectrum(
    chain: &ChainModel,
    cfg: &LayerConfig,
    n: usize,
    opts: &SpectrumOptions,
) -> Result<(AnsatzFields, SpectralData)> {
    let fields = AnsatzFields::new(chain, cfg, n)?;
    let spec = spectrum_at(chain.potential(), &fields.u, &fields.tangents, chain.mu_min(), opts)?;
    log::debug!("slow eigenvalues {:?}, gap ratio {:.3e}", &spec.values[..chain.len()], spec.gap_ratio);
    Ok((fields, spec))
}

#[derive(Clone, Debug)]
pub struct CorrectionOptions {
    /// Stop when the W^{1,2}_eps change of v drops below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Relative tolerance of the inner PCG solves.
    pub pcg_tol: f64,
    pub pcg_max_iter: usize,
}

impl Default for CorrectionOptions {
    fn default() -> Self {
        Self { tol: 1e-13, max_iter: 50, pcg_tol: 1e-13, pcg_max_iter: 500 }
    }
}

/// N(v) = W_u(u + v) - W_u(u) - W_uu(u) v.
fn nonlinear_remainder(pot: &Potential, u: &GridFunction, v: &GridFunction) -> GridFunction {
    let (n, m) = (u.n(), u.m());
    let mut out = GridFunction::zeros(n, m, u.eps());
    let mut g1 = vec![0.0; m];
    let mut g0 = vec![0.0; m];
    let mut hs = vec![0.0; m * m];
    let mut w = vec![0.0; m];
    for i in 0..n {
        let (ui, vi) = (u.point(i), v.point(i));
        for c in 0..m {
            w[c] = ui[c] + vi[c];
        }
        pot.grad(&w, &mut g1);
        pot.grad(ui, &mut g0);
        pot.hess(ui, &mut hs);
        let o = &mut out.values_mut()[i * m..(i + 1) * m];
        for r in 0..m {
            o[r] = g1[r] - g0[r] - (0..m).map(|c| hs[r * m + c] * vi[c]).sum::<f64>();
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct ReductionResult {
    pub cfg: LayerConfig,
    /// c_j = <F - N(v), phi_j>.
    pub c: Vec<f64>,
    /// cbar_j = <F(u^xi), u_xi_j / |u_xi_j|> with the exact ansatz residual.
    pub cbar: Vec<f64>,
    pub v: GridFunction,
    pub v_norm: f64,
    pub v_norm_w12: f64,
    /// |F| with F the discrete residual eps^2 D^2 u^xi - W_u(u^xi).
    pub residual_norm: f64,
    /// (2 / lambda_{N+1}) |F|
    pub fast_bound: f64,
    /// Successive W^{1,2}_eps changes of v.
    pub trace: Vec<f64>,
    pub pcg_iterations: usize,
    /// Worst-case rounding level of each c_j.
    pub noise: Vec<f64>,
    /// u^xi + v^xi
    pub u: GridFunction,
}

/// Fixed point v = L^{-1} P_perp (F - N(v)) on the complement of the slow space.
pub fn correction_with(
    pot: &Potential,
    cfg: &LayerConfig,
    fields: &AnsatzFields,
    spec: &SpectralData,
    opts: &CorrectionOptions,
) -> Result<ReductionResult> {
    let u = &fields.u;
    let (n, m, eps) = (u.n(), u.m(), u.eps());
    let f = u.discrete_residual(pot);
    let basis = spec.slow_euclidean();
    let mut v = GridFunction::zeros(n, m, eps);
    let mut trace = Vec::new();
    let mut increases = 0;
    let mut pcg_iterations = 0;
    let mut c = vec![0.0; basis.len()];
    for it in 0..opts.max_iter {
        let mut r = f.sub(&nonlinear_remainder(pot, u, &v));
        for (j, p) in spec.slow_basis.iter().enumerate() {
            c[j] = r.inner(p);
        }
        project_out(&basis, r.values_mut());
        let (x, its) = linalg::pcg(
            &|x, y| spec.operator.apply(x, y),
            &|x| spec.shifted.solve(x),
            &|x| project_out(&basis, x),
            r.values(),
            opts.pcg_tol,
            opts.pcg_max_iter,
        )?;
        pcg_iterations += its;
        let v_new = GridFunction::from_vec(n, m, eps, x);
        let change = v_new.sub(&v).norm_w12();
        v = v_new;
        if let Some(&last) = trace.last() {
            increases = if change > last { increases + 1 } else { 0 };
        }
        trace.push(change);
        if increases >= 3 {
            return Err(Error::Divergence { trace });
        }
        if change < opts.tol || (it > 0 && change == 0.0) {
            break;
        }
        if it + 1 == opts.max_iter {
            return Err(Error::Divergence { trace });
        }
    }
    // c from the converged v
    let r = f.sub(&nonlinear_remainder(pot, u, &v));
    for (j, p) in spec.slow_basis.iter().enumerate() {
        c[j] = r.inner(p);
    }
    let residual_norm = f.norm();
    let noise = rounding_level(pot, u, &spec.slow_basis);
    let mut uv = u.clone();
    uv.axpy(1.0, &v);
    Ok(ReductionResult {
        cfg: cfg.clone(),
        c,
        cbar: fields.cbar(),
        v_norm: v.norm(),
        v_norm_w12: v.norm_w12(),
        v,
        residual_norm,
        fast_bound: 2.0 / spec.fast_bottom() * residual_norm,
        trace,
        pcg_iterations,
        noise,
        u: uv,
    })
}

/// Bound on the rounding error of <F_h(u), phi_j>: each grid value of
/// eps^2 D^2 u - W_u(u) is computed from terms of size 4 eps^2/h^2 |u| + |W_u|.
fn rounding_level(pot: &Potential, u: &GridFunction, basis: &[GridFunction]) -> Vec<f64> {
    let m = u.m();
    let e2h2 = (u.eps() / u.h()).powi(2);
    let mut g = vec![0.0; m];
    let mut size = 0.0f64;
    for i in 0..u.n() {
        pot.grad(u.point(i), &mut g);
        size = size.max(4.0 * e2h2 * linalg::max_abs(u.point(i)) + linalg::max_abs(&g));
    }
    basis
        .iter()
        .map(|p| f64::EPSILON * size * u.h() * p.values().iter().map(|x| x.abs()).sum::<f64>())
        .collect()
}

/// Spectrum plus fast correction at cfg.
pub fn orthogonal_correction(
    chain: &ChainModel,
    cfg: &LayerConfig,
    n: usize,
    spec_opts: &SpectrumOptions,
    opts: &CorrectionOptions,
) -> Result<(ReductionResult, SpectralData)> {
    let (fields, spec) = linearized_spectrum(chain, cfg, n, spec_opts)?;
    let red = correction_with(chain.potential(), cfg, &fields, &spec, opts)?;
    Ok((red, spec))
}

#[derive(Clone, Debug)]
pub struct BifurcationOptions {
    /// Position of layer 0, held fixed (phase condition).
    pub xi0: f64,
    pub n: Option<usize>,
    pub rho: Option<f64>,
    pub max_iter: usize,
    /// Step size at which the gap iteration stops.
    pub step_tol: f64,
    pub newton_iter: usize,
    pub spectrum: SpectrumOptions,
    pub correction: CorrectionOptions,
}

impl Default for BifurcationOptions {
    fn default() -> Self {
        Self {
            xi0: 0.25,
            n: None,
            rho: None,
            max_iter: 30,
            step_tol: 1e-12,
            newton_iter: 5,
            spectrum: SpectrumOptions::default(),
            correction: CorrectionOptions::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BifurcationResult {
    pub eps: f64,
    pub n: usize,
    /// Leading-order spacing (1/mu_j) / sum_h (1/mu_h).
    pub leading_gaps: Vec<f64>,
    /// First-order correction: gaps = leading + eps * delta_bar.
    pub delta_bar: Vec<f64>,
    pub initial: LayerConfig,
    /// False when c is below rounding level everywhere near the start, in
    /// which case the start (the exact zero of c0) is kept.
    pub c_resolved: bool,
    /// Root of the bifurcation vector, xi_0 fixed.
    pub root: LayerConfig,
    pub c: Vec<f64>,
    pub cbar: Vec<f64>,
    pub noise: Vec<f64>,
    pub gap_iterations: usize,
    pub newton_iterations: usize,
    /// Layer positions re-extracted from the stationary profile.
    pub xi_star: Vec<f64>,
    pub gaps_star: Vec<f64>,
    /// h-weighted L2 and max norms of eps^2 D^2 u - W_u(u).
    pub stationary_residual: f64,
    pub stationary_residual_max: f64,
    pub spectrum: SpectrumSummary,
    #[serde(skip)]
    pub u: GridFunction,
}

/// gaps_j = (1/mu_j) / sum(1/mu_h) + eps delta_bar_j, the zero of c0 with
/// gap sum one.
pub fn leading_spacing(chain: &ChainModel) -> (Vec<f64>, Vec<f64>) {
    let inv: Vec<f64> = chain.mu.iter().map(|m| 1.0 / m).collect();
    let total: f64 = inv.iter().sum();
    let leading: Vec<f64> = inv.iter().map(|i| i / total).collect();
    let (mu, k) = (&chain.mu, &chain.k);
    let d0 = -(1.0 / mu[0]) * (1..chain.len()).map(|h| inv[h] * (k[h] / k[0]).ln()).sum::<f64>() / total;
    let delta: Vec<f64> =
        (0..chain.len()).map(|j| if j == 0 { d0 } else { mu[0] / mu[j] * d0 + (k[j] / k[0]).ln() / mu[j] }).collect();
    (leading, delta)
}

fn gaps_of(xi: &[f64]) -> Vec<f64> {
    let n = xi.len();
    (0..n).map(|j| if j == 0 { xi[0] - xi[n - 1] + 1.0 } else { xi[j] - xi[j - 1] }).collect()
}

fn c0_of(chain: &ChainModel, xi: &[f64], eps: f64) -> Vec<f64> {
    interaction_bracket(chain, &gaps_of(xi), eps)
        .iter()
        .zip(&chain.qbar2)
        .map(|(b, q2)| 2.0 * eps.sqrt() / q2.sqrt() * b)
        .collect()
}

/// Stationary layered solution for a chain whose existence condition holds.
pub fn solve_bifurcation(chain: &ChainModel, eps: f64, opts: &BifurcationOptions) -> Result<BifurcationResult> {
    let ex = chain.existence_condition();
    if ex.exists != Some(true) {
        return Err(Error::Refused(ex.reason));
    }
    let nl = chain.len();
    let n = opts.n.unwrap_or_else(|| default_grid_points(eps, nl));
    let rho = opts.rho.unwrap_or_else(|| chain.default_rho());
    let (leading, delta_bar) = leading_spacing(chain);
    let gaps0: Vec<f64> = leading.iter().zip(&delta_bar).map(|(l, d)| l + eps * d).collect();
    if gaps0.iter().any(|&g| g <= 0.0) {
        return Err(Error::Domain(format!("first-order spacing {gaps0:?} has a nonpositive gap at eps = {eps}")));
    }
    let initial = LayerConfig::from_gaps(opts.xi0, &gaps0, eps, rho)?;
    initial.validate(chain)?;

    let (mut red, mut spec) = orthogonal_correction(chain, &initial, n, &opts.spectrum, &opts.correction)?;
    let c_scale = interaction_bracket(chain, &initial.gaps(), eps)
        .iter()
        .enumerate()
        .map(|(j, _)| {
            let e = (-chain.mu[j] * initial.gaps()[j] / eps).exp();
            2.0 * eps.sqrt() / chain.qbar(j) * chain.k[j] * e
        })
        .fold(0.0, f64::max);
    let noise_max = red.noise.iter().cloned().fold(0.0, f64::max);
    let c_resolved = c_scale > 10.0 * noise_max;
    log::info!("c scale {c_scale:.3e}, rounding level {noise_max:.3e}, resolved: {c_resolved}");

    let mut gap_iterations = 0;
    if c_resolved {
        let mut xi = initial.xi.clone();
        for it in 1..=opts.max_iter {
            gap_iterations = it;
            // chord Jacobian from c0 in the free positions xi_1 .. xi_{N-1}
            let d = 1e-6 * eps;
            let mut jac = DMatrix::zeros(nl, nl - 1);
            for k in 1..nl {
                let (mut p, mut q) = (xi.clone(), xi.clone());
                p[k] += d;
                q[k] -= d;
                let (cp, cq) = (c0_of(chain, &p, eps), c0_of(chain, &q, eps));
                for j in 0..nl {
                    jac[(j, k - 1)] = (cp[j] - cq[j]) / (2.0 * d);
                }
            }
            let rhs = -DVector::from_vec(red.c.clone());
            let step = jac
                .svd(true, true)
                .solve(&rhs, 1e-14 * c_scale.max(f64::MIN_POSITIVE))
                .map_err(|e| Error::Singular(e.to_string()))?;
            let min_gap = gaps_of(&xi).into_iter().fold(f64::INFINITY, f64::min);
            let size = step.amax();
            let scale = if size > 0.25 * min_gap { 0.25 * min_gap / size } else { 1.0 };
            for k in 1..nl {
                xi[k] += scale * step[k - 1];
            }
            let cfg = LayerConfig::new(xi.clone(), eps, rho)?;
            cfg.validate(chain)?;
            let (r, s) = orthogonal_correction(chain, &cfg, n, &opts.spectrum, &opts.correction)?;
            red = r;
            spec = s;
            log::debug!("gap iteration {it}: step {:.3e}, |c| {:.3e}", scale * size, linalg::max_abs(&red.c));
            if scale * size < opts.step_tol || linalg::max_abs(&red.c) < noise_max {
                break;
            }
            if it == opts.max_iter {
                return Err(Error::NewtonFailure { iterations: it, residual: linalg::max_abs(&red.c) });
            }
        }
    }

    // deflated Newton on the full discrete equation, slow directions frozen
    let pot = chain.potential();
    let basis = spec.slow_euclidean();
    let mut u = red.u.clone();
    let mut newton_iterations = 0;
    let mut fast_res = f64::INFINITY;
    for it in 1..=opts.newton_iter {
        let mut g = u.discrete_residual(pot);
        project_out(&basis, g.values_mut());
        let res = g.norm();
        if res >= fast_res || res < 1e-15 {
            break;
        }
        fast_res = res;
        newton_iterations = it;
        let op = linearized_operator(pot, &u);
        let (x, _) = linalg::pcg(
            &|x, y| op.apply(x, y),
            &|x| spec.shifted.solve(x),
            &|x| project_out(&basis, x),
            g.values(),
            opts.correction.pcg_tol,
            opts.correction.pcg_max_iter,
        )?;
        u.axpy(1.0, &GridFunction::from_vec(u.n(), u.m(), eps, x));
    }
    let f = u.discrete_residual(pot);
    let proj = tracking::project(&u, chain, Some(&red.cfg), &ProjectOptions::default())?;
    Ok(BifurcationResult {
        eps,
        n,
        leading_gaps: leading,
        delta_bar,
        initial,
        c_resolved,
        root: red.cfg.clone(),
        c: red.c.clone(),
        cbar: red.cbar.clone(),
        noise: red.noise.clone(),
        gap_iterations,
        newton_iterations,
        gaps_star: proj.cfg.gaps(),
        xi_star: proj.cfg.xi,
        stationary_residual: f.norm(),
        stationary_residual_max: f.max_abs(),
        spectrum: spec.summary(),
        u,
    })
}
