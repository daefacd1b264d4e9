//! Block-tridiagonal systems (open or periodic), small dense helpers and a
//! shift-invert subspace eigensolver for the lowest part of a symmetric spectrum.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Dense m x m LU with partial pivoting, row-major.
#[derive(Clone, Debug)]
pub struct SmallLu {
    m: usize,
    lu: Vec<f64>,
    piv: Vec<usize>,
}

impl SmallLu {
    pub fn new(a: &[f64], m: usize) -> Result<Self> {
        let mut lu = a.to_vec();
        let mut piv: Vec<usize> = (0..m).collect();
        let scale = max_abs(a).max(f64::MIN_POSITIVE);
        for k in 0..m {
            let mut p = k;
            for r in k + 1..m {
                if lu[r * m + k].abs() > lu[p * m + k].abs() {
                    p = r;
                }
            }
            if lu[p * m + k].abs() <= 1e-300_f64.max(scale * 1e-15) {
                return Err(Error::Singular(format!("pivot {k} vanishes in a {m}x{m} block")));
            }
            if p != k {
                piv.swap(p, k);
                for c in 0..m {
                    lu.swap(p * m + c, k * m + c);
                }
            }
            let d = lu[k * m + k];
            for r in k + 1..m {
                let f = lu[r * m + k] / d;
                lu[r * m + k] = f;
                for c in k + 1..m {
                    lu[r * m + c] -= f * lu[k * m + c];
                }
            }
        }
        Ok(Self { m, lu, piv })
    }

    /// Solves in place.
    pub fn solve(&self, b: &mut [f64]) {
        let m = self.m;
        if m == 1 {
            b[0] /= self.lu[0];
            return;
        }
        let mut tmp = [0.0; 8];
        let t: &mut [f64] = if m <= 8 { &mut tmp[..m] } else { unreachable!("block size above 8") };
        for i in 0..m {
            t[i] = b[self.piv[i]];
        }
        for i in 0..m {
            let mut s = t[i];
            for k in 0..i {
                s -= self.lu[i * m + k] * t[k];
            }
            t[i] = s;
        }
        for i in (0..m).rev() {
            let mut s = t[i];
            for k in i + 1..m {
                s -= self.lu[i * m + k] * t[k];
            }
            t[i] = s / self.lu[i * m + i];
        }
        b[..m].copy_from_slice(t);
    }

    /// Overwrites the m x m matrix `b` (row-major) with A^{-1} b.
    pub fn solve_matrix(&self, b: &mut [f64]) {
        let m = self.m;
        let mut col = vec![0.0; m];
        for c in 0..m {
            for r in 0..m {
                col[r] = b[r * m + c];
            }
            self.solve(&mut col);
            for r in 0..m {
                b[r * m + c] = col[r];
            }
        }
    }
}

fn gemm_sub(m: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    // c -= a * b
    for i in 0..m {
        for k in 0..m {
            let aik = a[i * m + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..m {
                c[i * m + j] -= aik * b[k * m + j];
            }
        }
    }
}

fn gemv_sub(m: usize, a: &[f64], x: &[f64], y: &mut [f64]) {
    // y -= a * x
    for i in 0..m {
        let mut s = 0.0;
        for k in 0..m {
            s += a[i * m + k] * x[k];
        }
        y[i] -= s;
    }
}

/// Block tridiagonal matrix with n block rows of size m. Row i reads
/// `lower[i] x[i-1] + diag[i] x[i] + upper[i] x[i+1]`; in the periodic case
/// indices wrap, otherwise `lower[0]` and `upper[n-1]` are ignored.
#[derive(Clone, Debug)]
pub struct BlockTridiag {
    pub n: usize,
    pub m: usize,
    pub periodic: bool,
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BlockTridiag {
    pub fn zeros(n: usize, m: usize, periodic: bool) -> Self {
        let len = n * m * m;
        Self { n, m, periodic, lower: vec![0.0; len], diag: vec![0.0; len], upper: vec![0.0; len] }
    }

    pub fn dim(&self) -> usize {
        self.n * self.m
    }

    pub fn block(v: &[f64], i: usize, m: usize) -> &[f64] {
        &v[i * m * m..(i + 1) * m * m]
    }

    pub fn block_mut(v: &mut [f64], i: usize, m: usize) -> &mut [f64] {
        &mut v[i * m * m..(i + 1) * m * m]
    }

    /// Adds `s` to every diagonal entry.
    pub fn shift_diagonal(&mut self, s: f64) {
        let m = self.m;
        for i in 0..self.n {
            for c in 0..m {
                self.diag[i * m * m + c * m + c] += s;
            }
        }
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let (n, m) = (self.n, self.m);
        let mm = m * m;
        for i in 0..n {
            let yi = &mut y[i * m..(i + 1) * m];
            yi.iter_mut().for_each(|v| *v = 0.0);
            let mut add = |blk: &[f64], j: usize| {
                let xj = &x[j * m..(j + 1) * m];
                for r in 0..m {
                    let mut s = 0.0;
                    for c in 0..m {
                        s += blk[r * m + c] * xj[c];
                    }
                    yi[r] += s;
                }
            };
            add(&self.diag[i * mm..(i + 1) * mm], i);
            if i > 0 {
                add(&self.lower[i * mm..(i + 1) * mm], i - 1);
            } else if self.periodic {
                add(&self.lower[..mm], n - 1);
            }
            if i + 1 < n {
                add(&self.upper[i * mm..(i + 1) * mm], i + 1);
            } else if self.periodic {
                add(&self.upper[i * mm..(i + 1) * mm], 0);
            }
        }
    }

    /// Frobenius-type bound on the infinity norm, used as an operator scale.
    pub fn norm_inf(&self) -> f64 {
        let (n, m) = (self.n, self.m);
        let mm = m * m;
        let mut best: f64 = 0.0;
        for i in 0..n {
            for r in 0..m {
                let mut s = 0.0;
                for c in 0..m {
                    s += self.lower[i * mm + r * m + c].abs()
                        + self.diag[i * mm + r * m + c].abs()
                        + self.upper[i * mm + r * m + c].abs();
                }
                best = best.max(s);
            }
        }
        best
    }

    pub fn factor(&self) -> Result<BlockTridiagLu> {
        BlockTridiagLu::new(self)
    }
}

/// Block Thomas factorisation of an open chain of blocks.
#[derive(Clone, Debug)]
struct OpenLu {
    n: usize,
    m: usize,
    lower: Vec<f64>,
    pivots: Vec<SmallLu>,
    g: Vec<f64>,
}

impl OpenLu {
    fn new(n: usize, m: usize, lower: &[f64], diag: &[f64], upper: &[f64]) -> Result<Self> {
        let mm = m * m;
        let mut pivots = Vec::with_capacity(n);
        let mut g = vec![0.0; n * mm];
        let mut dp = diag[..mm].to_vec();
        for i in 0..n {
            if i > 0 {
                dp.copy_from_slice(&diag[i * mm..(i + 1) * mm]);
                let (prev, _) = g.split_at(i * mm);
                gemm_sub(m, &lower[i * mm..(i + 1) * mm], &prev[(i - 1) * mm..], &mut dp);
            }
            let lu = SmallLu::new(&dp, m)?;
            if i + 1 < n {
                let gi = &mut g[i * mm..(i + 1) * mm];
                gi.copy_from_slice(&upper[i * mm..(i + 1) * mm]);
                lu.solve_matrix(gi);
            }
            pivots.push(lu);
        }
        Ok(Self { n, m, lower: lower[..n * mm].to_vec(), pivots, g })
    }

    fn solve(&self, x: &mut [f64]) {
        let (n, m) = (self.n, self.m);
        let mm = m * m;
        for i in 0..n {
            if i > 0 {
                let (done, rest) = x.split_at_mut(i * m);
                gemv_sub(m, &self.lower[i * mm..(i + 1) * mm], &done[(i - 1) * m..], &mut rest[..m]);
            }
            self.pivots[i].solve(&mut x[i * m..(i + 1) * m]);
        }
        for i in (0..n.saturating_sub(1)).rev() {
            let (head, tail) = x.split_at_mut((i + 1) * m);
            gemv_sub(m, &self.g[i * mm..(i + 1) * mm], &tail[..m], &mut head[i * m..]);
        }
    }
}

/// Factorisation of a [`BlockTridiag`]. The periodic case is reduced to an
/// open chain bordered by the last block row (Schur complement on one block).
#[derive(Clone, Debug)]
pub struct BlockTridiagLu {
    n: usize,
    m: usize,
    open: OpenLu,
    border: Option<Border>,
}

#[derive(Clone, Debug)]
struct Border {
    // columns of T^{-1} b, stored column-major: z[c] has length (n-1)m
    z: Vec<Vec<f64>>,
    c_first: Vec<f64>,
    c_last: Vec<f64>,
    schur: SmallLu,
}

impl BlockTridiagLu {
    fn new(a: &BlockTridiag) -> Result<Self> {
        let (n, m) = (a.n, a.m);
        let mm = m * m;
        if !a.periodic {
            let open = OpenLu::new(n, m, &a.lower, &a.diag, &a.upper)?;
            return Ok(Self { n, m, open, border: None });
        }
        if n < 3 {
            return Err(Error::InvalidInput("periodic block system needs at least 3 block rows".into()));
        }
        let k = n - 1;
        let open = OpenLu::new(k, m, &a.lower, &a.diag, &a.upper)?;
        // b: coupling of rows 0..k to x_{n-1}
        let b0 = BlockTridiag::block(&a.lower, 0, m);
        let bk = BlockTridiag::block(&a.upper, k - 1, m);
        let mut z = Vec::with_capacity(m);
        for c in 0..m {
            let mut col = vec![0.0; k * m];
            for r in 0..m {
                col[r] += b0[r * m + c];
                col[(k - 1) * m + r] += bk[r * m + c];
            }
            open.solve(&mut col);
            z.push(col);
        }
        let c_first = BlockTridiag::block(&a.upper, n - 1, m).to_vec();
        let c_last = BlockTridiag::block(&a.lower, n - 1, m).to_vec();
        let mut s = a.diag[(n - 1) * mm..n * mm].to_vec();
        for r in 0..m {
            for c in 0..m {
                let mut acc = 0.0;
                for q in 0..m {
                    acc += c_first[r * m + q] * z[c][q] + c_last[r * m + q] * z[c][(k - 1) * m + q];
                }
                s[r * m + c] -= acc;
            }
        }
        let schur = SmallLu::new(&s, m)?;
        Ok(Self { n, m, open, border: Some(Border { z, c_first, c_last, schur }) })
    }

    pub fn dim(&self) -> usize {
        self.n * self.m
    }

    /// Solves A x = b in place.
    pub fn solve(&self, x: &mut [f64]) {
        let m = self.m;
        match &self.border {
            None => self.open.solve(x),
            Some(bd) => {
                let k = self.n - 1;
                let (y, last) = x.split_at_mut(k * m);
                self.open.solve(y);
                let mut rhs = [0.0; 8];
                let rhs = &mut rhs[..m];
                rhs.copy_from_slice(&last[..m]);
                gemv_sub(m, &bd.c_first, &y[..m], rhs);
                gemv_sub(m, &bd.c_last, &y[(k - 1) * m..k * m], rhs);
                bd.schur.solve(rhs);
                last[..m].copy_from_slice(rhs);
                for c in 0..m {
                    axpy(-rhs[c], &bd.z[c], y);
                }
            }
        }
    }
}

/// Orthonormalises the columns in place (two passes of modified Gram-Schmidt).
/// Columns that collapse are replaced by deterministic pseudo-random vectors.
pub fn orthonormalize(cols: &mut [Vec<f64>], rng: &mut ChaCha8Rng) {
    for j in 0..cols.len() {
        for _attempt in 0..4 {
            let before = norm(&cols[j]);
            for _pass in 0..2 {
                for i in 0..j {
                    let (a, b) = cols.split_at_mut(j);
                    let p = dot(&a[i], &b[0]);
                    axpy(-p, &a[i], &mut b[0]);
                }
            }
            let nrm = norm(&cols[j]);
            if nrm > 1e-10 * before.max(1e-300) && nrm > 0.0 {
                cols[j].iter_mut().for_each(|v| *v /= nrm);
                break;
            }
            for v in cols[j].iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
    }
}

/// Dense symmetric eigen-decomposition, ascending eigenvalues.
pub fn sym_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(a.clone());
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(a.nrows(), idx.len(), |r, c| eig.eigenvectors[(r, idx[c])]);
    (vals, vecs)
}

#[derive(Clone, Debug)]
pub struct Eigenpairs {
    pub values: Vec<f64>,
    /// Euclidean-unit eigenvectors.
    pub vectors: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub struct SubspaceOptions {
    pub count: usize,
    pub guard: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for SubspaceOptions {
    fn default() -> Self {
        Self { count: 4, guard: 4, tol: 1e-10, max_iter: 500, seed: 7 }
    }
}

/// Lowest `count` eigenpairs of a symmetric operator by subspace iteration
/// with (A - sigma)^{-1} and Rayleigh-Ritz. `tol` is relative to `scale`.
pub fn lowest_eigenpairs(
    dim: usize,
    apply: &dyn Fn(&[f64], &mut [f64]),
    shift_solve: &dyn Fn(&mut [f64]),
    scale: f64,
    opts: &SubspaceOptions,
    start: &[Vec<f64>],
) -> Result<Eigenpairs> {
    let p = (opts.count + opts.guard).min(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(p);
    for v in start.iter().take(p) {
        q.push(v.clone());
    }
    while q.len() < p {
        q.push((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect());
    }
    orthonormalize(&mut q, &mut rng);
    let tol_abs = opts.tol * scale.max(1e-300);
    let mut aq = vec![vec![0.0; dim]; p];
    let mut last_res = f64::INFINITY;
    for it in 1..=opts.max_iter {
        for v in q.iter_mut() {
            shift_solve(v);
        }
        orthonormalize(&mut q, &mut rng);
        for (v, av) in q.iter().zip(aq.iter_mut()) {
            apply(v, av);
        }
        let h = DMatrix::from_fn(p, p, |i, j| 0.5 * (dot(&q[i], &aq[j]) + dot(&q[j], &aq[i])));
        let (vals, vecs) = sym_eigen(&h);
        let rotate = |src: &[Vec<f64>]| -> Vec<Vec<f64>> {
            (0..p)
                .map(|c| {
                    let mut out = vec![0.0; dim];
                    for (r, s) in src.iter().enumerate() {
                        axpy(vecs[(r, c)], s, &mut out);
                    }
                    out
                })
                .collect()
        };
        q = rotate(&q);
        aq = rotate(&aq);
        let residuals: Vec<f64> = (0..opts.count.min(p))
            .map(|c| {
                let mut r = aq[c].clone();
                axpy(-vals[c], &q[c], &mut r);
                norm(&r)
            })
            .collect();
        last_res = residuals.iter().cloned().fold(0.0, f64::max);
        if last_res <= tol_abs {
            let k = opts.count.min(p);
            return Ok(Eigenpairs {
                values: vals[..k].to_vec(),
                vectors: q.into_iter().take(k).collect(),
                residuals,
                iterations: it,
            });
        }
    }
    Err(Error::EigenNonConvergence { iterations: opts.max_iter, residual: last_res })
}

/// Preconditioned conjugate gradients for a symmetric positive definite
/// operator restricted by the orthogonal projector `project`.
pub fn pcg(
    apply: &dyn Fn(&[f64], &mut [f64]),
    precond: &dyn Fn(&mut [f64]),
    project: &dyn Fn(&mut [f64]),
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize)> {
    let dim = b.len();
    let mut x = vec![0.0; dim];
    let mut r = b.to_vec();
    project(&mut r);
    let bnorm = norm(&r);
    if bnorm == 0.0 {
        return Ok((x, 0));
    }
    let mut z = r.clone();
    precond(&mut z);
    project(&mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; dim];
    for it in 1..=max_iter {
        apply(&p, &mut ap);
        project(&mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::Singular(format!("operator not positive on the complement (p'Ap={pap:e})")));
        }
        let alpha = rz / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        if norm(&r) <= tol * bnorm {
            project(&mut x);
            return Ok((x, it));
        }
        z.copy_from_slice(&r);
        precond(&mut z);
        project(&mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    Err(Error::Singular(format!("PCG did not reach {tol:e} in {max_iter} iterations")))
}
