//! Action-minimising connections u'' = W_u(u) between two minima, with the
//! exponential tail data fitted from the computed profile.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, BlockTridiag, SubspaceOptions};
use crate::potential::{orient, MinimumData, Potential};

#[derive(Clone, Debug)]
pub struct ConnectionOptions {
    /// Half-length L of [-L, L]; default 20/mu_min.
    pub half_length: Option<f64>,
    pub points: usize,
    pub newton_tol: f64,
    pub max_newton: usize,
    pub relax_steps: usize,
    pub equi_tol: f64,
    pub eig0_tol: f64,
    pub recenter_tol: f64,
    pub max_recenter: usize,
}

impl Default for ConnectionOptions {
    fn default() -> Self {
        Self {
            half_length: None,
            points: 4096,
            newton_tol: 1e-10,
            max_newton: 60,
            relax_steps: 200,
            equi_tol: 1e-6,
            eig0_tol: 1e-4,
            recenter_tol: 1e-11,
            max_recenter: 10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

/// u - a ~ sigma * kbar * z * exp(-mu |s|) on one side.
#[derive(Clone, Debug, Serialize)]
pub struct Tail {
    /// Fitted decay rate (slope of log|u - a|).
    pub mu_fit: f64,
    /// sqrt of the Hessian eigenvalue whose eigenvector the tail is snapped to.
    pub mu: f64,
    pub z: Vec<f64>,
    pub kbar: f64,
    pub sigma: f64,
    pub fit_residual: f64,
    /// Range of s used by the fit.
    pub window: (f64, f64),
    /// |s| beyond which the fitted exponential replaces the sampled profile.
    pub cutoff: f64,
    /// Angle in degrees between the raw tail direction and the snapped eigenvector.
    pub angle_deg: f64,
    /// |mu_fit - mu| / mu.
    pub rate_mismatch: f64,
    pub warning: Option<String>,
}

impl Tail {
    /// sigma * z, the signed tail direction.
    pub fn direction(&self) -> Vec<f64> {
        self.z.iter().map(|v| self.sigma * v).collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ConnectionDiagnostics {
    /// max |-u'' + W_u(u)| over interior rows other than the phase pin.
    pub newton_residual: f64,
    /// Residual of the ODE at the pinned row (phase multiplier).
    pub pin_residual: f64,
    pub newton_iterations: usize,
    pub recenter_passes: usize,
    /// max |1/2 |u'|^2 - W(u)| at cell midpoints.
    pub equipartition: f64,
    pub seed_action: f64,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct Heteroclinic {
    pub a_minus: Vec<f64>,
    pub a_plus: Vec<f64>,
    m: usize,
    half_length: f64,
    h: f64,
    /// n * m values on s_i = -L + i h.
    profile: Vec<f64>,
    pub action: f64,
    pub left: Tail,
    pub right: Tail,
    pub diagnostics: ConnectionDiagnostics,
}

const LAGRANGE_DEN: [f64; 6] = [-120.0, 24.0, -12.0, 12.0, -24.0, 120.0];

impl Heteroclinic {
    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn points(&self) -> usize {
        self.profile.len() / self.m
    }

    pub fn half_length(&self) -> f64 {
        self.half_length
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn s(&self, i: usize) -> f64 {
        -self.half_length + i as f64 * self.h
    }

    pub fn profile(&self) -> &[f64] {
        &self.profile
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.profile[i * self.m..(i + 1) * self.m]
    }

    pub fn tail(&self, side: Side) -> &Tail {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }

    /// Action q^2; equal to the integral of |u'|^2 by equipartition.
    pub fn qbar2(&self) -> f64 {
        self.action
    }

    /// u(s) into `out`; the fitted tails are used beyond the fit windows.
    pub fn value_at(&self, s: f64, out: &mut [f64]) {
        if s > self.right.cutoff {
            let e = self.right.sigma * self.right.kbar * (-self.right.mu * s).exp();
            for c in 0..self.m {
                out[c] = self.a_plus[c] + e * self.right.z[c];
            }
        } else if s < -self.left.cutoff {
            let e = self.left.sigma * self.left.kbar * (self.left.mu * s).exp();
            for c in 0..self.m {
                out[c] = self.a_minus[c] + e * self.left.z[c];
            }
        } else {
            let (j0, w) = self.weights(s);
            for c in 0..self.m {
                let mut acc = 0.0;
                for k in 0..6 {
                    acc += w[k] * self.profile[(j0 + k) * self.m + c];
                }
                out[c] = acc;
            }
        }
    }

    /// u'(s) into `out`.
    pub fn derivative_at(&self, s: f64, out: &mut [f64]) {
        if s > self.right.cutoff {
            let e = -self.right.mu * self.right.sigma * self.right.kbar * (-self.right.mu * s).exp();
            for c in 0..self.m {
                out[c] = e * self.right.z[c];
            }
        } else if s < -self.left.cutoff {
            let e = self.left.mu * self.left.sigma * self.left.kbar * (self.left.mu * s).exp();
            for c in 0..self.m {
                out[c] = e * self.left.z[c];
            }
        } else {
            let (j0, w) = self.derivative_weights(s);
            for c in 0..self.m {
                let mut acc = 0.0;
                for k in 0..6 {
                    acc += w[k] * self.profile[(j0 + k) * self.m + c];
                }
                out[c] = acc;
            }
        }
    }

    fn stencil(&self, s: f64) -> (usize, f64) {
        let n = self.points();
        let x = (s + self.half_length) / self.h;
        let j0 = (x.floor() as i64 - 2).clamp(0, n as i64 - 6) as usize;
        (j0, x - j0 as f64)
    }

    fn weights(&self, s: f64) -> (usize, [f64; 6]) {
        let (j0, t) = self.stencil(s);
        let d: [f64; 6] = std::array::from_fn(|l| t - l as f64);
        let mut w = [0.0; 6];
        for k in 0..6 {
            let mut p = 1.0;
            for l in 0..6 {
                if l != k {
                    p *= d[l];
                }
            }
            w[k] = p / LAGRANGE_DEN[k];
        }
        (j0, w)
    }

    fn derivative_weights(&self, s: f64) -> (usize, [f64; 6]) {
        let (j0, t) = self.stencil(s);
        let d: [f64; 6] = std::array::from_fn(|l| t - l as f64);
        let mut w = [0.0; 6];
        for k in 0..6 {
            let mut acc = 0.0;
            for q in 0..6 {
                if q == k {
                    continue;
                }
                let mut p = 1.0;
                for l in 0..6 {
                    if l != k && l != q {
                        p *= d[l];
                    }
                }
                acc += p;
            }
            w[k] = acc / (LAGRANGE_DEN[k] * self.h);
        }
        (j0, w)
    }

    /// The connection from a_plus to a_minus, s -> u(-s).
    pub fn reversed(&self) -> Heteroclinic {
        let n = self.points();
        let m = self.m;
        let mut profile = vec![0.0; n * m];
        for i in 0..n {
            profile[i * m..(i + 1) * m].copy_from_slice(self.node(n - 1 - i));
        }
        let flip = |t: &Tail| {
            let mut t = t.clone();
            t.window = (-t.window.1, -t.window.0);
            t
        };
        Heteroclinic {
            a_minus: self.a_plus.clone(),
            a_plus: self.a_minus.clone(),
            m,
            half_length: self.half_length,
            h: self.h,
            profile,
            action: self.action,
            left: flip(&self.right),
            right: flip(&self.left),
            diagnostics: self.diagnostics.clone(),
        }
    }

    /// Image under an orthogonal symmetry R of the potential (row-major).
    pub fn transformed(&self, r: &[f64]) -> Heteroclinic {
        let m = self.m;
        let apply = |v: &[f64]| -> Vec<f64> { (0..m).map(|i| (0..m).map(|j| r[i * m + j] * v[j]).sum()).collect() };
        let profile = self.profile.chunks(m).flat_map(|c| apply(c)).collect();
        let map_tail = |t: &Tail| {
            let mut t = t.clone();
            let mut z = apply(&t.z);
            let before = z.clone();
            orient(&mut z);
            if z.iter().zip(&before).any(|(a, b)| (a - b).abs() > 0.0) {
                t.sigma = -t.sigma;
            }
            t.z = z;
            t
        };
        Heteroclinic {
            a_minus: apply(&self.a_minus),
            a_plus: apply(&self.a_plus),
            m,
            half_length: self.half_length,
            h: self.h,
            profile,
            action: self.action,
            left: map_tail(&self.left),
            right: map_tail(&self.right),
            diagnostics: self.diagnostics.clone(),
        }
    }
}

struct Grid {
    n: usize,
    m: usize,
    h: f64,
    half_length: f64,
}

impl Grid {
    fn s(&self, i: usize) -> f64 {
        -self.half_length + i as f64 * self.h
    }
}

fn discrete_action(pot: &Potential, g: &Grid, u: &[f64]) -> f64 {
    let m = g.m;
    let mut sum = 0.0;
    for i in 0..g.n - 1 {
        let a = &u[i * m..(i + 1) * m];
        let b = &u[(i + 1) * m..(i + 2) * m];
        let kin: f64 = a.iter().zip(b).map(|(x, y)| ((y - x) / g.h).powi(2)).sum();
        sum += g.h * (0.5 * kin + 0.5 * (pot.eval(a) + pot.eval(b)));
    }
    sum
}

fn equipartition_defect(pot: &Potential, g: &Grid, u: &[f64]) -> f64 {
    let m = g.m;
    let mut worst: f64 = 0.0;
    let mut mid = vec![0.0; m];
    for i in 0..g.n - 1 {
        let a = &u[i * m..(i + 1) * m];
        let b = &u[(i + 1) * m..(i + 2) * m];
        let kin: f64 = a.iter().zip(b).map(|(x, y)| ((y - x) / g.h).powi(2)).sum();
        for c in 0..m {
            mid[c] = 0.5 * (a[c] + b[c]);
        }
        worst = worst.max((0.5 * kin - pot.eval(&mid)).abs());
    }
    worst
}

/// Residual -u'' + W_u(u) at interior rows; zero on the clamped rows.
fn residual(pot: &Potential, g: &Grid, u: &[f64], out: &mut [f64]) {
    let m = g.m;
    let ih2 = 1.0 / (g.h * g.h);
    out[..m].iter_mut().for_each(|v| *v = 0.0);
    out[(g.n - 1) * m..].iter_mut().for_each(|v| *v = 0.0);
    for i in 1..g.n - 1 {
        pot.grad(&u[i * m..(i + 1) * m], &mut out[i * m..(i + 1) * m]);
        for c in 0..m {
            out[i * m + c] += (2.0 * u[i * m + c] - u[(i - 1) * m + c] - u[(i + 1) * m + c]) * ih2;
        }
    }
}

struct Pin {
    row: usize,
    comp: usize,
    value: f64,
}

/// Block system with clamped boundary rows and the pinned scalar row.
fn clamp_and_pin(a: &mut BlockTridiag, pin: &Pin) {
    let (n, m) = (a.n, a.m);
    let mm = m * m;
    for &i in &[0, n - 1] {
        for v in a.lower[i * mm..(i + 1) * mm].iter_mut() {
            *v = 0.0;
        }
        for v in a.upper[i * mm..(i + 1) * mm].iter_mut() {
            *v = 0.0;
        }
        let d = &mut a.diag[i * mm..(i + 1) * mm];
        d.iter_mut().for_each(|v| *v = 0.0);
        for c in 0..m {
            d[c * m + c] = 1.0;
        }
    }
    let base = pin.row * mm + pin.comp * m;
    for c in 0..m {
        a.lower[base + c] = 0.0;
        a.upper[base + c] = 0.0;
        a.diag[base + c] = if c == pin.comp { 1.0 } else { 0.0 };
    }
}

fn relax(pot: &Potential, g: &Grid, u: &mut [f64], pin: &Pin, steps: usize) -> Result<()> {
    let m = g.m;
    let ih2 = 1.0 / (g.h * g.h);
    let tau = 1.0;
    let stab = (0..g.n).map(|i| pot.hess_radius(&u[i * m..(i + 1) * m])).fold(0.0, f64::max) + 1.0;
    let mut a = BlockTridiag::zeros(g.n, m, false);
    for i in 0..g.n {
        for c in 0..m {
            a.diag[i * m * m + c * m + c] = 1.0 / tau + stab + 2.0 * ih2;
            a.lower[i * m * m + c * m + c] = -ih2;
            a.upper[i * m * m + c * m + c] = -ih2;
        }
    }
    clamp_and_pin(&mut a, pin);
    let lu = a.factor()?;
    let mut rhs = vec![0.0; g.n * m];
    let mut grad = vec![0.0; m];
    for _ in 0..steps {
        for i in 1..g.n - 1 {
            pot.grad(&u[i * m..(i + 1) * m], &mut grad);
            for c in 0..m {
                rhs[i * m + c] = (1.0 / tau + stab) * u[i * m + c] - grad[c];
            }
        }
        rhs[..m].copy_from_slice(&u[..m]);
        let last = (g.n - 1) * m;
        let tail = u[last..].to_vec();
        rhs[last..].copy_from_slice(&tail);
        rhs[pin.row * m + pin.comp] = pin.value;
        lu.solve(&mut rhs);
        if rhs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gradient-flow relaxation".into()));
        }
        u.copy_from_slice(&rhs);
    }
    Ok(())
}

/// Damped Newton for the pinned clamped BVP. Returns (residual, iterations).
fn newton(pot: &Potential, g: &Grid, u: &mut [f64], pin: &Pin, tol: f64, max_iter: usize) -> Result<(f64, usize)> {
    let m = g.m;
    let mm = m * m;
    let ih2 = 1.0 / (g.h * g.h);
    let dim = g.n * m;
    let mut r = vec![0.0; dim];
    let pinned = |r: &mut [f64], u: &[f64]| {
        r[pin.row * m + pin.comp] = u[pin.row * m + pin.comp] - pin.value;
    };
    residual(pot, g, u, &mut r);
    pinned(&mut r, u);
    let mut rnorm = linalg::max_abs(&r);
    let mut hess = vec![0.0; mm];
    let mut trial = vec![0.0; dim];
    let mut rt = vec![0.0; dim];
    for it in 0..max_iter {
        if rnorm <= 1e-3 * tol {
            return Ok((rnorm, it));
        }
        let mut a = BlockTridiag::zeros(g.n, m, false);
        for i in 0..g.n {
            pot.hess(&u[i * m..(i + 1) * m], &mut hess);
            for q in 0..mm {
                a.diag[i * mm + q] = hess[q];
            }
            for c in 0..m {
                a.diag[i * mm + c * m + c] += 2.0 * ih2;
                a.lower[i * mm + c * m + c] = -ih2;
                a.upper[i * mm + c * m + c] = -ih2;
            }
        }
        clamp_and_pin(&mut a, pin);
        let mut step = r.clone();
        a.factor()?.solve(&mut step);
        let mut lambda = 1.0;
        let mut accepted = false;
        while lambda > 1e-4 {
            for k in 0..dim {
                trial[k] = u[k] - lambda * step[k];
            }
            residual(pot, g, &trial, &mut rt);
            pinned(&mut rt, &trial);
            let tn = linalg::max_abs(&rt);
            if tn.is_finite() && tn < rnorm * (1.0 - 1e-4 * lambda) {
                u.copy_from_slice(&trial);
                r.copy_from_slice(&rt);
                rnorm = tn;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            // stagnation at round-off is acceptable once below tolerance
            return if rnorm <= tol { Ok((rnorm, it)) } else { Err(Error::NewtonFailure { iterations: it, residual: rnorm }) };
        }
        if linalg::max_abs(&step) * lambda < 1e-15 && rnorm <= tol {
            return Ok((rnorm, it + 1));
        }
    }
    if rnorm <= tol {
        Ok((rnorm, max_iter))
    } else {
        Err(Error::NewtonFailure { iterations: max_iter, residual: rnorm })
    }
}

fn interpolate_node(g: &Grid, u: &[f64], s: f64, comp: usize) -> f64 {
    let m = g.m;
    let x = (s + g.half_length) / g.h;
    if x <= 0.0 {
        return u[comp];
    }
    if x >= (g.n - 1) as f64 {
        return u[(g.n - 1) * m + comp];
    }
    let j0 = (x.floor() as i64 - 2).clamp(0, g.n as i64 - 6) as usize;
    let t = x - j0 as f64;
    let mut acc = 0.0;
    for k in 0..6 {
        let mut p = 1.0;
        for l in 0..6 {
            if l != k {
                p *= t - l as f64;
            }
        }
        acc += p / LAGRANGE_DEN[k] * u[(j0 + k) * m + comp];
    }
    acc
}

/// Location of max |u'|, from fourth-order differences and a parabolic fit.
fn speed_peak(g: &Grid, u: &[f64]) -> f64 {
    let m = g.m;
    let speed2 = |i: usize| -> f64 {
        (0..m)
            .map(|c| {
                let d = (-u[(i + 2) * m + c] + 8.0 * u[(i + 1) * m + c] - 8.0 * u[(i - 1) * m + c]
                    + u[(i - 2) * m + c])
                    / (12.0 * g.h);
                d * d
            })
            .sum()
    };
    let mut best = 3;
    let mut bv = f64::NEG_INFINITY;
    for i in 3..g.n - 3 {
        let v = speed2(i);
        if v > bv {
            bv = v;
            best = i;
        }
    }
    let (a, b, c) = (speed2(best - 1), bv, speed2(best + 1));
    let den = a - 2.0 * b + c;
    let off = if den.abs() > 0.0 { 0.5 * (a - c) / den } else { 0.0 };
    g.s(best) + off.clamp(-1.0, 1.0) * g.h
}

pub fn solve_connection(
    pot: &Potential,
    a_minus: &[f64],
    a_plus: &[f64],
    opts: &ConnectionOptions,
) -> Result<Heteroclinic> {
    let m = pot.dim();
    if a_minus.len() != m || a_plus.len() != m {
        return Err(Error::InvalidInput("endpoint dimension does not match the potential".into()));
    }
    let sep = a_minus.iter().zip(a_plus).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    if sep < 1e-12 {
        return Err(Error::InvalidInput("connection endpoints coincide (a- = a+)".into()));
    }
    for a in [a_minus, a_plus] {
        if pot.minimum_index(a, 1e-8).is_none() {
            return Err(Error::InvalidInput(format!("{a:?} is not a listed minimum of {}", pot.name())));
        }
    }
    if opts.points < 64 {
        return Err(Error::InvalidInput("connection grid needs at least 64 points".into()));
    }
    let md_minus = pot.minimum_data(a_minus)?;
    let md_plus = pot.minimum_data(a_plus)?;
    let mu_min = md_minus.eigenvalues[0].min(md_plus.eigenvalues[0]).sqrt();
    let half_length = opts.half_length.unwrap_or(20.0 / mu_min);
    let n = opts.points;
    let g = Grid { n, m, h: 2.0 * half_length / (n - 1) as f64, half_length };

    let mut u = vec![0.0; n * m];
    for i in 0..n {
        let t = i as f64 / (n - 1) as f64;
        for c in 0..m {
            u[i * m + c] = a_minus[c] + t * (a_plus[c] - a_minus[c]);
        }
    }
    let seed_action = discrete_action(pot, &g, &u);
    let comp = (0..m)
        .max_by(|&i, &j| (a_plus[i] - a_minus[i]).abs().total_cmp(&(a_plus[j] - a_minus[j]).abs()))
        .unwrap();
    let row = n / 2;
    let mut pin = Pin { row, comp, value: u[row * m + comp] };

    relax(pot, &g, &mut u, &pin, opts.relax_steps)?;
    let mut solved = newton(pot, &g, &mut u, &pin, opts.newton_tol, opts.max_newton);
    if solved.is_err() {
        log::warn!("Newton failed from the relaxed seed; relaxing further");
        relax(pot, &g, &mut u, &pin, 20 * opts.relax_steps.max(50))?;
        solved = newton(pot, &g, &mut u, &pin, opts.newton_tol, opts.max_newton);
    }
    let (mut rnorm, mut iters) = solved.map_err(|e| Error::NoConnection {
        from: a_minus.to_vec(),
        to: a_plus.to_vec(),
        reason: e.to_string(),
    })?;

    let mut passes = 0;
    loop {
        let sc = speed_peak(&g, &u);
        if sc.abs() <= opts.recenter_tol * half_length.max(1.0) || passes >= opts.max_recenter {
            break;
        }
        passes += 1;
        let old = u.clone();
        for i in 1..n - 1 {
            for c in 0..m {
                u[i * m + c] = interpolate_node(&g, &old, g.s(i) + sc, c);
            }
        }
        pin.value = u[row * m + comp];
        let (r, it) = newton(pot, &g, &mut u, &pin, opts.newton_tol, opts.max_newton).map_err(|e| {
            Error::NoConnection { from: a_minus.to_vec(), to: a_plus.to_vec(), reason: format!("after re-centring: {e}") }
        })?;
        rnorm = r;
        iters += it;
    }

    let mut r = vec![0.0; n * m];
    residual(pot, &g, &u, &mut r);
    let pin_residual = r[row * m + comp].abs();
    r[row * m + comp] = 0.0;
    let newton_residual = linalg::max_abs(&r);
    log::debug!("connection solved: pinned residual {rnorm:.2e}, {iters} Newton iterations, {passes} re-centrings");

    let mut warnings = Vec::new();
    if (-mu_min * half_length).exp() >= 1e-8 {
        warnings.push(format!("e^(-mu_min L) = {:.2e} is not below 1e-8; increase L", (-mu_min * half_length).exp()));
    }
    let equipartition = equipartition_defect(pot, &g, &u);
    if equipartition > opts.equi_tol {
        warnings.push(format!("equipartition defect {equipartition:.2e} above {:.1e}", opts.equi_tol));
    }
    let action = discrete_action(pot, &g, &u);
    let left = fit_tail(&g, &u, Side::Left, &md_minus)?;
    let right = fit_tail(&g, &u, Side::Right, &md_plus)?;
    for t in [&left, &right] {
        if let Some(w) = &t.warning {
            warnings.push(w.clone());
        }
    }
    for w in &warnings {
        log::warn!("connection {a_minus:?} -> {a_plus:?}: {w}");
    }
    Ok(Heteroclinic {
        a_minus: a_minus.to_vec(),
        a_plus: a_plus.to_vec(),
        m,
        half_length,
        h: g.h,
        profile: u,
        action,
        left,
        right,
        diagnostics: ConnectionDiagnostics {
            newton_residual,
            pin_residual,
            newton_iterations: iters,
            recenter_passes: passes,
            equipartition,
            seed_action,
            warnings,
        },
    })
}

const WINDOW_LO: f64 = 1e-7;
const WINDOW_HI: f64 = 1e-3;

fn fit_tail(g: &Grid, u: &[f64], side: Side, md: &MinimumData) -> Result<Tail> {
    let m = g.m;
    let a = &md.point;
    let mu_slow = md.eigenvalues[0].sqrt();
    let guard = g.half_length - 3.0 / mu_slow;
    let mut rows: Vec<(f64, f64, Vec<f64>)> = Vec::new();
    for i in 0..g.n {
        let s = g.s(i);
        let inside = match side {
            Side::Right => s > 0.0 && s <= guard,
            Side::Left => s < 0.0 && s >= -guard,
        };
        if !inside {
            continue;
        }
        let diff: Vec<f64> = (0..m).map(|c| u[i * m + c] - a[c]).collect();
        let d = linalg::norm(&diff);
        if (WINDOW_LO..=WINDOW_HI).contains(&d) {
            rows.push((s, d, diff));
        }
    }
    let side_name = match side {
        Side::Left => "left",
        Side::Right => "right",
    };
    if rows.len() < 8 {
        return Err(Error::IncreaseL { side: side_name, half_length: g.half_length });
    }
    let mut zraw = vec![0.0; m];
    for r in &rows {
        for c in 0..m {
            zraw[c] += r.2[c] / r.1;
        }
    }
    let zn = linalg::norm(&zraw);
    zraw.iter_mut().for_each(|v| *v /= zn);
    let (best, dotv) = md
        .eigenvectors
        .iter()
        .enumerate()
        .map(|(k, e)| (k, linalg::dot(e, &zraw)))
        .max_by(|p, q| p.1.abs().total_cmp(&q.1.abs()))
        .unwrap();
    let angle_deg = dotv.abs().min(1.0).acos().to_degrees();
    let sigma = if dotv >= 0.0 { 1.0 } else { -1.0 };
    let mu = md.eigenvalues[best].sqrt();

    let x: Vec<f64> = rows.iter().map(|r| r.0.abs()).collect();
    let d: Vec<f64> = rows.iter().map(|r| r.1).collect();
    // the clamped end turns e^{-mu s} into e^{-mu s} - e^{-mu (2L - s)}
    let y: Vec<f64> = (0..x.len())
        .map(|k| d[k].ln() - (1.0 - (-2.0 * mu * (g.half_length - x[k])).exp()).ln())
        .collect();
    // log d = b - mu |s| + gamma d; the d column absorbs the leading nonlinear remainder
    let fit = least_squares(&[vec![1.0; x.len()], x.iter().map(|v| -v).collect(), d.clone()], &y);
    let mu_fit = fit[1];
    let fit_residual = (0..x.len())
        .map(|k| (y[k] - fit[0] + fit[1] * x[k] - fit[2] * d[k]).abs())
        .fold(0.0, f64::max);
    let rate_mismatch = md
        .eigenvalues
        .iter()
        .map(|l| (mu_fit - l.sqrt()).abs() / l.sqrt())
        .fold(f64::INFINITY, f64::min);
    // amplitude with the rate fixed to the snapped eigenvalue
    let y2: Vec<f64> = (0..x.len()).map(|k| y[k] + mu * x[k]).collect();
    let amp = least_squares(&[vec![1.0; x.len()], d.clone()], &y2);
    let mut warning = None;
    if angle_deg > 5.0 {
        warning = Some(format!(
            "H4 diagnostic: {side_name} tail direction is {angle_deg:.2} deg from the nearest Hessian eigenvector"
        ));
    } else if rate_mismatch > 1e-3 {
        warning = Some(format!("{side_name} tail rate {mu_fit:.6} is {rate_mismatch:.2e} away from the Hessian rates"));
    }
    let (lo, hi) = (x.iter().cloned().fold(f64::INFINITY, f64::min), x.iter().cloned().fold(0.0, f64::max));
    let window = match side {
        Side::Right => (lo, hi),
        Side::Left => (-hi, -lo),
    };
    let cutoff = hi.min(g.half_length - 6.0 / mu).max(lo);
    Ok(Tail {
        mu_fit,
        mu,
        z: md.eigenvectors[best].clone(),
        kbar: amp[0].exp(),
        sigma,
        fit_residual,
        window,
        cutoff,
        angle_deg,
        rate_mismatch,
        warning,
    })
}

/// Normal-equation least squares for a handful of columns.
fn least_squares(cols: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let k = cols.len();
    let scale: Vec<f64> = cols.iter().map(|c| linalg::norm(c).max(1e-300)).collect();
    let a = nalgebra::DMatrix::from_fn(y.len(), k, |r, c| cols[c][r] / scale[c]);
    let b = nalgebra::DVector::from_column_slice(y);
    let svd = a.svd(true, true);
    let x = svd.solve(&b, 1e-14).expect("SVD solve");
    (0..k).map(|c| x[c] / scale[c]).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct ConnectionSpectrum {
    pub values: Vec<f64>,
    #[serde(skip)]
    pub vectors: Vec<Vec<f64>>,
    /// |cos| of the angle between the first eigenvector and u'.
    pub alignment: f64,
    pub iterations: usize,
}

/// Lowest `k` eigenpairs of -d^2/ds^2 + W_uu(u) with Dirichlet rows at +-L.
pub fn connection_spectrum(pot: &Potential, het: &Heteroclinic, k: usize) -> Result<ConnectionSpectrum> {
    if k < 2 {
        return Err(Error::InvalidInput("connection_spectrum needs k >= 2".into()));
    }
    let m = het.m;
    let mm = m * m;
    let n = het.points() - 2;
    let ih2 = 1.0 / (het.h * het.h);
    let mut a = BlockTridiag::zeros(n, m, false);
    let mut hess = vec![0.0; mm];
    for i in 0..n {
        pot.hess(het.node(i + 1), &mut hess);
        a.diag[i * mm..(i + 1) * mm].copy_from_slice(&hess);
        for c in 0..m {
            a.diag[i * mm + c * m + c] += 2.0 * ih2;
            a.lower[i * mm + c * m + c] = -ih2;
            a.upper[i * mm + c * m + c] = -ih2;
        }
    }
    let mu_min2 = pot.minimum_data(&het.a_minus)?.eigenvalues[0].min(pot.minimum_data(&het.a_plus)?.eigenvalues[0]);
    let sigma = -0.05 * mu_min2;
    let mut shifted = a.clone();
    shifted.shift_diagonal(-sigma);
    let lu = shifted.factor()?;
    let mut du = vec![0.0; n * m];
    for i in 0..n {
        for c in 0..m {
            du[i * m + c] = (het.profile[(i + 2) * m + c] - het.profile[i * m + c]) * 0.5 / het.h;
        }
    }
    let dn = linalg::norm(&du);
    du.iter_mut().for_each(|v| *v /= dn);
    let opts = SubspaceOptions { count: k, guard: 4.max(k), tol: 1e-12, max_iter: 3000, seed: 17 };
    let scale = a.norm_inf();
    let eig = linalg::lowest_eigenpairs(n * m, &|x, y| a.apply(x, y), &|x| lu.solve(x), scale, &opts, &[du.clone()])?;
    let alignment = linalg::dot(&eig.vectors[0], &du).abs();
    Ok(ConnectionSpectrum { values: eig.values, vectors: eig.vectors, alignment, iterations: eig.iterations })
}

/// Pairwise actions between minima (by index). `None` marks a missing entry.
pub fn triangle_test(actions: &[Vec<Option<f64>>]) -> Result<Vec<Vec<bool>>> {
    let k = actions.len();
    let get = |i: usize, j: usize| -> Result<f64> {
        actions[i][j].or(actions[j][i]).ok_or_else(|| Error::Incomplete(format!("action for pair ({i}, {j})")))
    };
    let mut out = vec![vec![true; k]; k];
    for i in 0..k {
        for j in 0..k {
            if i == j {
                continue;
            }
            let direct = get(i, j)?;
            for l in 0..k {
                if l == i || l == j {
                    continue;
                }
                if direct >= get(i, l)? + get(l, j)? {
                    out[i][j] = false;
                }
            }
        }
    }
    Ok(out)
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ")
}

fn fmt_tail(name: &str, t: &Tail) -> String {
    format!(
        "# {name}: mu={:?} mu_fit={:?} kbar={:?} sigma={:?} z={} fit_residual={:?} window={:?}:{:?} cutoff={:?} angle_deg={:?}\n",
        t.mu,
        t.mu_fit,
        t.kbar,
        t.sigma,
        fmt_vec(&t.z).replace(' ', ","),
        t.fit_residual,
        t.window.0,
        t.window.1,
        t.cutoff,
        t.angle_deg
    )
}

impl Heteroclinic {
    /// Self-describing CSV block: `extra_header`, then `#` lines with endpoints and tail
    /// data, then `s,u0[,u1..]` rows. Floats are written in round-trip form.
    pub fn to_csv(&self, extra_header: &str) -> String {
        let mut out = String::new();
        out.push_str(extra_header);
        out.push_str("# layerlab-heteroclinic v1\n");
        let _ = writeln!(out, "# dim={}", self.m);
        let _ = writeln!(out, "# a_minus={}", fmt_vec(&self.a_minus).replace(' ', ","));
        let _ = writeln!(out, "# a_plus={}", fmt_vec(&self.a_plus).replace(' ', ","));
        let _ = writeln!(out, "# half_length={:?} points={} action={:?}", self.half_length, self.points(), self.action);
        out.push_str(&fmt_tail("left", &self.left));
        out.push_str(&fmt_tail("right", &self.right));
        let d = &self.diagnostics;
        let _ = writeln!(
            out,
            "# diagnostics: newton_residual={:?} pin_residual={:?} equipartition={:?} iterations={} recenter={}",
            d.newton_residual, d.pin_residual, d.equipartition, d.newton_iterations, d.recenter_passes
        );
        let cols: Vec<String> = (0..self.m).map(|c| format!("u{c}")).collect();
        let _ = writeln!(out, "s,{}", cols.join(","));
        for i in 0..self.points() {
            let vals: Vec<String> = self.node(i).iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{:?},{}", self.s(i), vals.join(","));
        }
        out
    }

    pub fn write_csv(&self, path: &Path, extra_header: &str) -> Result<()> {
        std::fs::write(path, self.to_csv(extra_header))?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Heteroclinic> {
        let text = std::fs::read_to_string(path)?;
        Self::from_csv(&text)
    }

    pub fn from_csv(text: &str) -> Result<Heteroclinic> {
        let bad = |what: &str| Error::Format(what.to_string());
        let mut kv = std::collections::HashMap::new();
        let mut tails = std::collections::HashMap::new();
        let mut rows = Vec::new();
        let mut saw_magic = false;
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix("# ") {
                if rest.starts_with("layerlab-heteroclinic") {
                    saw_magic = true;
                    continue;
                }
                let (section, body) = match rest.split_once(": ") {
                    Some((s @ ("left" | "right" | "diagnostics"), b)) => (Some(s), b),
                    _ => (None, rest),
                };
                let mut map = std::collections::HashMap::new();
                for tok in body.split_whitespace() {
                    if let Some((k, v)) = tok.split_once('=') {
                        map.insert(k.to_string(), v.to_string());
                    }
                }
                match section {
                    Some(s) => {
                        tails.insert(s.to_string(), map);
                    }
                    None => kv.extend(map),
                }
            } else if line.starts_with('#') || line.starts_with("s,") || line.trim().is_empty() {
                continue;
            } else {
                let vals: std::result::Result<Vec<f64>, _> = line.split(',').map(|t| t.trim().parse::<f64>()).collect();
                rows.push(vals.map_err(|_| bad("non-numeric data row"))?);
            }
        }
        if !saw_magic {
            return Err(bad("missing layerlab-heteroclinic header"));
        }
        let num = |map: &std::collections::HashMap<String, String>, k: &str| -> Result<f64> {
            map.get(k).and_then(|v| v.parse().ok()).ok_or_else(|| bad(&format!("missing field {k}")))
        };
        let vecf = |map: &std::collections::HashMap<String, String>, k: &str| -> Result<Vec<f64>> {
            map.get(k)
                .ok_or_else(|| bad(&format!("missing field {k}")))?
                .split(',')
                .map(|t| t.parse::<f64>().map_err(|_| bad(&format!("bad vector {k}"))))
                .collect()
        };
        let m = num(&kv, "dim")? as usize;
        let half_length = num(&kv, "half_length")?;
        let points = num(&kv, "points")? as usize;
        if rows.len() != points || rows.iter().any(|r| r.len() != m + 1) || m == 0 {
            return Err(bad("row count or width does not match the header"));
        }
        let tail = |name: &str| -> Result<Tail> {
            let t = tails.get(name).ok_or_else(|| bad(&format!("missing {name} tail")))?;
            let w = t.get("window").ok_or_else(|| bad("missing window"))?;
            let (w0, w1) = w.split_once(':').ok_or_else(|| bad("bad window"))?;
            let mu = num(t, "mu")?;
            let mu_fit = num(t, "mu_fit")?;
            Ok(Tail {
                mu_fit,
                mu,
                z: vecf(t, "z")?,
                kbar: num(t, "kbar")?,
                sigma: num(t, "sigma")?,
                fit_residual: num(t, "fit_residual")?,
                window: (w0.parse().map_err(|_| bad("bad window"))?, w1.parse().map_err(|_| bad("bad window"))?),
                cutoff: num(t, "cutoff")?,
                angle_deg: num(t, "angle_deg")?,
                rate_mismatch: (mu_fit - mu).abs() / mu,
                warning: None,
            })
        };
        let empty = std::collections::HashMap::new();
        let dg = tails.get("diagnostics").unwrap_or(&empty);
        let diagnostics = ConnectionDiagnostics {
            newton_residual: num(dg, "newton_residual").unwrap_or(f64::NAN),
            pin_residual: num(dg, "pin_residual").unwrap_or(f64::NAN),
            newton_iterations: num(dg, "iterations").unwrap_or(0.0) as usize,
            recenter_passes: num(dg, "recenter").unwrap_or(0.0) as usize,
            equipartition: num(dg, "equipartition").unwrap_or(f64::NAN),
            seed_action: f64::NAN,
            warnings: Vec::new(),
        };
        let h = 2.0 * half_length / (points - 1) as f64;
        Ok(Heteroclinic {
            a_minus: vecf(&kv, "a_minus")?,
            a_plus: vecf(&kv, "a_plus")?,
            m,
            half_length,
            h,
            profile: rows.iter().flat_map(|r| r[1..].to_vec()).collect(),
            action: num(&kv, "action")?,
            left: tail("left")?,
            right: tail("right")?,
            diagnostics,
        })
    }
}
