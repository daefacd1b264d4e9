//! Multi-well potentials W: R^m -> [0, inf) with their derivatives and the
//! spectral data of the Hessian at each minimum.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::sym_eigen;

pub const TOL_MIN: f64 = 1e-10;
pub const GAP_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub enum Family {
    /// 1/4 (1 - u^2)^2
    DoubleWell,
    /// 1/4 u^2 (1 - u^2)^2
    TripleWell,
    /// (1 - u^2)^2 e^{beta u}
    SkewedDoubleWell { beta: f64 },
    /// |z^K - 1|^2 + anisotropy (|z|^2 - 1)^2 on the plane, z = u_0 + i u_1.
    Dihedral { k: u32, anisotropy: f64 },
    /// sum_k coeffs[k] u^k, scalar, with user supplied minima.
    Polynomial { coeffs: Vec<f64> },
}

#[derive(Clone, Debug)]
pub struct Potential {
    family: Family,
    dim: usize,
    minima: Vec<Vec<f64>>,
    /// Scalar multiplier (W -> scale W), used for scaling checks.
    scale: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MinimumData {
    pub point: Vec<f64>,
    /// Hessian eigenvalues mu_h^2, ascending.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors, first nonzero component positive.
    pub eigenvectors: Vec<Vec<f64>>,
    /// False when two eigenvalues are closer than the relative gap tolerance.
    pub h2_ok: bool,
}

impl MinimumData {
    pub fn rates(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|l| l.sqrt()).collect()
    }
}

fn cmul(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0)
}

fn cpow(z: (f64, f64), k: u32) -> (f64, f64) {
    let mut r = (1.0, 0.0);
    for _ in 0..k {
        r = cmul(r, z);
    }
    r
}

impl Potential {
    pub fn double_well() -> Self {
        Self { family: Family::DoubleWell, dim: 1, minima: vec![vec![-1.0], vec![1.0]], scale: 1.0 }
    }

    pub fn triple_well() -> Self {
        Self {
            family: Family::TripleWell,
            dim: 1,
            minima: vec![vec![-1.0], vec![0.0], vec![1.0]],
            scale: 1.0,
        }
    }

    pub fn skewed_double_well(beta: f64) -> Self {
        Self {
            family: Family::SkewedDoubleWell { beta },
            dim: 1,
            minima: vec![vec![-1.0], vec![1.0]],
            scale: 1.0,
        }
    }

    /// Minima are the K-th roots of unity, ordered by angle 2 pi j / K.
    pub fn dihedral(k: u32, anisotropy: f64) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidInput(format!("dihedral order K must be at least 2, got {k}")));
        }
        let minima = (0..k)
            .map(|j| {
                let th = 2.0 * std::f64::consts::PI * j as f64 / k as f64;
                vec![th.cos(), th.sin()]
            })
            .collect();
        Ok(Self { family: Family::Dihedral { k, anisotropy }, dim: 2, minima, scale: 1.0 })
    }

    /// Scalar polynomial with ascending coefficients; `minima` are validated.
    pub fn polynomial(coeffs: Vec<f64>, minima: Vec<f64>) -> Result<Self> {
        if coeffs.len() < 3 {
            return Err(Error::InvalidInput("polynomial potential needs degree at least 2".into()));
        }
        let mut minima = minima;
        minima.sort_by(f64::total_cmp);
        let pot = Self {
            family: Family::Polynomial { coeffs },
            dim: 1,
            minima: minima.into_iter().map(|a| vec![a]).collect(),
            scale: 1.0,
        };
        pot.validate_minima()?;
        Ok(pot)
    }

    /// The same potential multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut p = self.clone();
        p.scale *= factor;
        p
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn minima(&self) -> &[Vec<f64>] {
        &self.minima
    }

    pub fn name(&self) -> String {
        match &self.family {
            Family::DoubleWell => "double-well".into(),
            Family::TripleWell => "triple-well".into(),
            Family::SkewedDoubleWell { beta } => format!("skewed-double-well(beta={beta})"),
            Family::Dihedral { k, anisotropy } => format!("dihedral(K={k},anisotropy={anisotropy})"),
            Family::Polynomial { coeffs } => format!("polynomial{coeffs:?}"),
        }
    }

    pub fn eval(&self, u: &[f64]) -> f64 {
        let raw = match &self.family {
            Family::DoubleWell => {
                let q = 1.0 - u[0] * u[0];
                0.25 * q * q
            }
            Family::TripleWell => {
                let q = 1.0 - u[0] * u[0];
                0.25 * u[0] * u[0] * q * q
            }
            Family::SkewedDoubleWell { beta } => {
                let q = 1.0 - u[0] * u[0];
                q * q * (beta * u[0]).exp()
            }
            Family::Dihedral { k, anisotropy } => {
                let f = cpow((u[0], u[1]), *k);
                let (p, q) = (f.0 - 1.0, f.1);
                let r = u[0] * u[0] + u[1] * u[1] - 1.0;
                p * p + q * q + anisotropy * r * r
            }
            Family::Polynomial { coeffs } => coeffs.iter().rev().fold(0.0, |acc, c| acc * u[0] + c),
        };
        self.scale * raw
    }

    pub fn grad(&self, u: &[f64], out: &mut [f64]) {
        match &self.family {
            Family::DoubleWell => out[0] = u[0] * u[0] * u[0] - u[0],
            Family::TripleWell => {
                let x = u[0];
                out[0] = 0.5 * x * (1.0 - x * x) * (1.0 - 3.0 * x * x);
            }
            Family::SkewedDoubleWell { beta } => {
                let x = u[0];
                let q = 1.0 - x * x;
                out[0] = (beta * x).exp() * (-4.0 * x * q + beta * q * q);
            }
            Family::Dihedral { k, anisotropy } => {
                let z = (u[0], u[1]);
                let f = cpow(z, *k);
                let f = (f.0 - 1.0, f.1);
                let d = cpow(z, k - 1);
                let fp = (*k as f64 * d.0, *k as f64 * d.1);
                // 2 conj(f') f
                let g = cmul((fp.0, -fp.1), f);
                let r = u[0] * u[0] + u[1] * u[1] - 1.0;
                out[0] = 2.0 * g.0 + 4.0 * anisotropy * r * u[0];
                out[1] = 2.0 * g.1 + 4.0 * anisotropy * r * u[1];
            }
            Family::Polynomial { coeffs } => {
                let mut acc = 0.0;
                for (p, c) in coeffs.iter().enumerate().skip(1).rev() {
                    acc = acc * u[0] + p as f64 * c;
                }
                out[0] = acc;
            }
        }
        if self.scale != 1.0 {
            out[..self.dim].iter_mut().for_each(|v| *v *= self.scale);
        }
    }

    /// Row-major m x m Hessian.
    pub fn hess(&self, u: &[f64], out: &mut [f64]) {
        match &self.family {
            Family::DoubleWell => out[0] = 3.0 * u[0] * u[0] - 1.0,
            Family::TripleWell => {
                let x2 = u[0] * u[0];
                out[0] = 0.5 * (1.0 - 12.0 * x2 + 15.0 * x2 * x2);
            }
            Family::SkewedDoubleWell { beta } => {
                let x = u[0];
                let q = 1.0 - x * x;
                let p = q * q;
                let p1 = -4.0 * x * q;
                let p2 = 12.0 * x * x - 4.0;
                out[0] = (beta * x).exp() * (p2 + 2.0 * beta * p1 + beta * beta * p);
            }
            Family::Dihedral { k, anisotropy } => {
                let kf = *k as f64;
                let z = (u[0], u[1]);
                let f = cpow(z, *k);
                let f = (f.0 - 1.0, f.1);
                let d1 = cpow(z, k - 1);
                let fp = (kf * d1.0, kf * d1.1);
                let fpp = if *k >= 2 {
                    let d2 = cpow(z, k - 2);
                    (kf * (kf - 1.0) * d2.0, kf * (kf - 1.0) * d2.1)
                } else {
                    (0.0, 0.0)
                };
                let fp2 = fp.0 * fp.0 + fp.1 * fp.1;
                // conj(f) f''
                let cf = cmul((f.0, -f.1), fpp);
                let r2 = u[0] * u[0] + u[1] * u[1];
                let a = 4.0 * anisotropy;
                out[0] = 2.0 * (fp2 + cf.0) + a * (r2 - 1.0 + 2.0 * u[0] * u[0]);
                out[3] = 2.0 * (fp2 - cf.0) + a * (r2 - 1.0 + 2.0 * u[1] * u[1]);
                let off = -2.0 * cf.1 + a * 2.0 * u[0] * u[1];
                out[1] = off;
                out[2] = off;
            }
            Family::Polynomial { coeffs } => {
                let mut acc = 0.0;
                for (p, c) in coeffs.iter().enumerate().skip(2).rev() {
                    acc = acc * u[0] + (p * (p - 1)) as f64 * c;
                }
                out[0] = acc;
            }
        }
        if self.scale != 1.0 {
            let mm = self.dim * self.dim;
            out[..mm].iter_mut().for_each(|v| *v *= self.scale);
        }
    }

    /// (W, grad, hess) with a finiteness check.
    pub fn eval_all(&self, u: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        if u.len() != self.dim || u.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("point {u:?} is not a finite vector of dimension {}", self.dim)));
        }
        let w = self.eval(u);
        let mut g = vec![0.0; self.dim];
        let mut h = vec![0.0; self.dim * self.dim];
        self.grad(u, &mut g);
        self.hess(u, &mut h);
        if !w.is_finite() || g.iter().chain(&h).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("potential derivatives at {u:?}")));
        }
        Ok((w, g, h))
    }

    /// Largest Hessian eigenvalue magnitude at `u`.
    pub fn hess_radius(&self, u: &[f64]) -> f64 {
        let m = self.dim;
        let mut h = vec![0.0; m * m];
        self.hess(u, &mut h);
        if m == 1 {
            return h[0].abs();
        }
        let (vals, _) = sym_eigen(&DMatrix::from_row_slice(m, m, &h));
        vals.iter().fold(0.0, |a: f64, v| a.max(v.abs()))
    }

    pub fn validate_minima(&self) -> Result<()> {
        if self.minima.is_empty() {
            return Err(Error::InvalidInput("potential has no minima".into()));
        }
        let mut g = vec![0.0; self.dim];
        for a in &self.minima {
            let w = self.eval(a);
            self.grad(a, &mut g);
            let gn = g.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
            if w.abs() > TOL_MIN || gn > TOL_MIN {
                return Err(Error::NotAMinimum { point: a.clone(), value: w, grad: gn });
            }
        }
        Ok(())
    }

    pub fn classify_minima(&self) -> Result<Vec<MinimumData>> {
        self.validate_minima()?;
        self.minima.iter().map(|a| self.minimum_data(a)).collect()
    }

    pub fn minimum_data(&self, a: &[f64]) -> Result<MinimumData> {
        let m = self.dim;
        let mut h = vec![0.0; m * m];
        self.hess(a, &mut h);
        let (vals, vecs) = sym_eigen(&DMatrix::from_row_slice(m, m, &h));
        if vals[0] <= 0.0 {
            return Err(Error::H2Violation {
                point: a.to_vec(),
                reason: format!("Hessian not positive definite (eigenvalues {vals:?})"),
            });
        }
        let h2_ok = vals.windows(2).all(|w| (w[1] - w[0]) > GAP_TOL * w[1].abs());
        let eigenvectors = (0..m)
            .map(|c| {
                let mut v: Vec<f64> = (0..m).map(|r| vecs[(r, c)]).collect();
                orient(&mut v);
                v
            })
            .collect();
        Ok(MinimumData { point: a.to_vec(), eigenvalues: vals, eigenvectors, h2_ok })
    }

    /// Index of the listed minimum closest to `u` within `tol`.
    pub fn minimum_index(&self, u: &[f64], tol: f64) -> Option<usize> {
        self.minima.iter().position(|a| a.iter().zip(u).all(|(x, y)| (x - y).abs() <= tol))
    }

    /// Orthogonal maps R with W(Ru) = W(u), as row-major m x m matrices.
    pub fn symmetries(&self) -> Vec<Vec<f64>> {
        match &self.family {
            Family::DoubleWell | Family::TripleWell => vec![vec![-1.0]],
            Family::Dihedral { k, .. } => {
                let mut out = Vec::new();
                for j in 1..*k {
                    let th = 2.0 * std::f64::consts::PI * j as f64 / *k as f64;
                    let (c, s) = (th.cos(), th.sin());
                    out.push(vec![c, -s, s, c]);
                }
                out
            }
            _ => Vec::new(),
        }
    }

    /// Spot check W > 0 on `count` random points away from the minima.
    pub fn spot_check_positive(&self, count: usize, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let radius = 1.5 * self.minima.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()));
        for _ in 0..count {
            let u: Vec<f64> = (0..self.dim).map(|_| rng.gen_range(-radius..radius)).collect();
            let dist = self
                .minima
                .iter()
                .map(|a| a.iter().zip(&u).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
                .fold(f64::INFINITY, f64::min);
            if dist > 1e-3 && self.eval(&u) <= 0.0 {
                return Err(Error::InvalidInput(format!("W is not positive at {u:?}")));
            }
        }
        Ok(())
    }
}

/// Deterministic orientation: first component with |v_i| > 1e-12 positive.
pub fn orient(v: &mut [f64]) {
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}
