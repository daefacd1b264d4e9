use crate::potential::Potential;

/// R^m-valued field on the periodic grid x_i = i/n of [0, 1), carrying eps.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    n: usize,
    m: usize,
    eps: f64,
    data: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(n: usize, m: usize, eps: f64) -> Self {
        Self { n, m, eps, data: vec![0.0; n * m] }
    }

    pub fn from_vec(n: usize, m: usize, eps: f64, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * m, "grid data length");
        Self { n, m, eps, data }
    }

    pub fn from_fn(n: usize, m: usize, eps: f64, mut f: impl FnMut(f64, &mut [f64])) -> Self {
        let mut g = Self::zeros(n, m, eps);
        for i in 0..n {
            let x = i as f64 / n as f64;
            f(x, &mut g.data[i * m..(i + 1) * m]);
        }
        g
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 / self.n as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_values(self) -> Vec<f64> {
        self.data
    }

    pub fn point(&self, i: usize) -> &[f64] {
        let i = i % self.n;
        &self.data[i * self.m..(i + 1) * self.m]
    }

    pub fn same_shape(&self, other: &GridFunction) -> bool {
        self.n == other.n && self.m == other.m
    }

    /// <u, v> = h sum_i u_i . v_i
    pub fn inner(&self, other: &GridFunction) -> f64 {
        debug_assert!(self.same_shape(other));
        self.h() * crate::linalg::dot(&self.data, &other.data)
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        crate::linalg::max_abs(&self.data)
    }

    /// Central first difference.
    pub fn dx(&self) -> GridFunction {
        let (n, m) = (self.n, self.m);
        let mut out = GridFunction::zeros(n, m, self.eps);
        let s = 0.5 * n as f64;
        for i in 0..n {
            let ip = (i + 1) % n;
            let im = (i + n - 1) % n;
            for c in 0..m {
                out.data[i * m + c] = s * (self.data[ip * m + c] - self.data[im * m + c]);
            }
        }
        out
    }

    /// Second difference (u_{i+1} - 2 u_i + u_{i-1}) / h^2.
    pub fn dxx(&self) -> GridFunction {
        let (n, m) = (self.n, self.m);
        let mut out = GridFunction::zeros(n, m, self.eps);
        let s = (n * n) as f64;
        for i in 0..n {
            let ip = (i + 1) % n;
            let im = (i + n - 1) % n;
            for c in 0..m {
                out.data[i * m + c] =
                    s * (self.data[ip * m + c] - 2.0 * self.data[i * m + c] + self.data[im * m + c]);
            }
        }
        out
    }

    /// sum_i h |(u_{i+1} - u_i)/h|^2
    pub fn forward_gradient_sq(&self) -> f64 {
        let (n, m) = (self.n, self.m);
        let inv_h = n as f64;
        let mut sum = 0.0;
        for i in 0..n {
            let ip = (i + 1) % n;
            for c in 0..m {
                let d = (self.data[ip * m + c] - self.data[i * m + c]) * inv_h;
                sum += d * d;
            }
        }
        sum * self.h()
    }

    /// ||v||^2 + eps^2 ||v_x||^2, square-rooted.
    pub fn norm_w12(&self) -> f64 {
        (self.inner(self) + self.eps * self.eps * self.forward_gradient_sq()).sqrt()
    }

    /// J_eps(u) = sum_i h (1/2 eps^2 |(u_{i+1}-u_i)/h|^2 + W(u_i)); its exact
    /// gradient (divided by h) is -eps^2 D^2 u + W_u(u).
    pub fn energy(&self, pot: &Potential) -> f64 {
        let pe: f64 = (0..self.n).map(|i| pot.eval(self.point(i))).sum::<f64>() * self.h();
        0.5 * self.eps * self.eps * self.forward_gradient_sq() + pe
    }

    /// eps^2 D^2 u - W_u(u), the discrete right-hand side of the parabolic flow.
    pub fn discrete_residual(&self, pot: &Potential) -> GridFunction {
        let mut out = self.dxx();
        let e2 = self.eps * self.eps;
        let m = self.m;
        let mut g = vec![0.0; m];
        for i in 0..self.n {
            pot.grad(self.point(i), &mut g);
            for c in 0..m {
                out.data[i * m + c] = e2 * out.data[i * m + c] - g[c];
            }
        }
        out
    }

    /// Rolls the field so that the value at x moves to x + k/n.
    pub fn shifted(&self, k: usize) -> GridFunction {
        let (n, m) = (self.n, self.m);
        let mut out = GridFunction::zeros(n, m, self.eps);
        for i in 0..n {
            let j = (i + k) % n;
            out.data[j * m..(j + 1) * m].copy_from_slice(self.point(i));
        }
        out
    }

    pub fn axpy(&mut self, alpha: f64, x: &GridFunction) {
        crate::linalg::axpy(alpha, &x.data, &mut self.data);
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn sub(&self, other: &GridFunction) -> GridFunction {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }
}
