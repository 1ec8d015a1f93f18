//! Structured routes for the exponential kernels of the OU problem.
//!
//! On a uniform grid the midpoint samples of `exp(-theta |t - s|)` form the
//! matrix `rho^|i-j|` with `rho = exp(-theta dt)`. It is applied to a vector in
//! O(n) by one forward and one backward recursion, so every quantity below
//! except the contraction costs O(n^2).

use nalgebra::DMatrix;

use super::{GramMatrix, Grid};

/// `y_i = sum_j rho^|i-j| v_j`.
pub fn exp_kernel_apply(rho: f64, v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut fwd = vec![0.0; n];
    let mut acc = 0.0;
    for i in 0..n {
        acc = rho * acc + v[i];
        fwd[i] = acc;
    }
    acc = 0.0;
    for i in (0..n).rev() {
        acc = rho * acc + v[i];
        fwd[i] += acc - v[i];
    }
    fwd
}

/// `u_i = exp(-theta (T - m_i))`, so that `h_T = u (x) u`.
pub fn terminal_vector(grid: &Grid, theta: f64) -> Vec<f64> {
    let t = grid.horizon();
    grid.midpoints().iter().map(|m| (-theta * (t - m)).exp()).collect()
}

/// `E[x_k^2]`, `k = 0..=n`, for the scheme
/// `x_{k+1} = exp(-theta dt) x_k + exp(-theta dt / 2) dg_k`.
pub fn state_variances(gm: &GramMatrix, theta: f64) -> Vec<f64> {
    let n = gm.dim();
    let dt = gm.grid().step();
    let rho = (-theta * dt).exp();
    let half = (-0.5 * theta * dt).exp();
    // p[j] = sum_{i<k} exp(-theta (t_k - m_i)) gamma[i][j], kept for j >= k
    let mut p = vec![0.0; n];
    let mut var = vec![0.0; n + 1];
    for k in 0..n {
        let col = gm.gamma.column(k);
        var[k + 1] = rho * rho * var[k] + 2.0 * rho * half * p[k] + half * half * col[k];
        for j in k + 1..n {
            p[j] = rho * p[j] + half * col[j];
        }
    }
    var
}

/// `(1/t_m) int_0^{t_m} E[x^2]` by the trapezoid rule on the first `m` cells.
pub fn b_t_prefix(var: &[f64], m: usize) -> f64 {
    let inner: f64 = var[1..m].iter().sum();
    (0.5 * var[0] + inner + 0.5 * var[m]) / m as f64
}

/// Expected normalized energy `(1/T) E int_0^T X^2`.
pub fn b_t(gm: &GramMatrix, theta: f64) -> f64 {
    let var = state_variances(gm, theta);
    b_t_prefix(&var, gm.dim())
}

/// Mean of the pathwise integral `int X dG`, chosen so that the estimator
/// numerator `alpha - X_T^2 / 2 - theta int X^2` is exactly centred on the grid.
pub fn alpha_t(gm: &GramMatrix, theta: f64) -> f64 {
    let var = state_variances(gm, theta);
    let n = gm.dim();
    0.5 * var[n] + theta * gm.grid().horizon() * b_t_prefix(&var, n)
}

/// `(1/2) sum_ik rho^|i-k| gamma[i][k]`, the trace form of the same correction.
/// Converges to the same limit as `alpha_t`, but only at rate `dt^(2 beta - 1)`.
pub fn alpha_trace(gm: &GramMatrix, theta: f64) -> f64 {
    let (diag, strict) = split_trace(gm, theta);
    0.5 * diag + strict
}

/// `E[sum_k x_k dg_k]`, the forward Riemann sum of `int X dG`.
pub fn forward_sum_mean(gm: &GramMatrix, theta: f64) -> f64 {
    let (_, strict) = split_trace(gm, theta);
    strict * (0.5 * theta * gm.grid().step()).exp()
}

/// Diagonal and strictly lower parts of `sum_ik rho^|i-k| gamma[i][k]`.
fn split_trace(gm: &GramMatrix, theta: f64) -> (f64, f64) {
    let n = gm.dim();
    let rho = (-theta * gm.grid().step()).exp();
    let mut pow = vec![1.0; n];
    for d in 1..n {
        pow[d] = pow[d - 1] * rho;
    }
    let mut diag = 0.0;
    let mut strict = 0.0;
    for k in 0..n {
        let col = gm.gamma.column(k);
        diag += col[k];
        for i in 0..k {
            strict += pow[k - i] * col[i];
        }
    }
    (diag, strict)
}

/// Tensor norms of `f_T`, `h_T` and `g_T` on one grid.
#[derive(Debug, Clone)]
pub struct OuNorms {
    theta: f64,
    horizon: f64,
    /// `F Gamma`, where `F` holds the midpoint samples of `f_T`.
    a: DMatrix<f64>,
    pub f_norm_sq: f64,
    pub h_norm_sq: f64,
    pub fh_inner: f64,
    pub trace_f: f64,
    pub trace_h: f64,
}

impl OuNorms {
    pub fn new(gm: &GramMatrix, theta: f64) -> Self {
        let n = gm.dim();
        let grid = gm.grid();
        let rho = (-theta * grid.step()).exp();
        let mut a = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let col: Vec<f64> = gm.gamma.column(j).iter().copied().collect();
            let fc = exp_kernel_apply(rho, &col);
            a.column_mut(j).copy_from_slice(&fc);
        }
        let mut f_norm_sq = 0.0;
        for j in 0..n {
            for i in 0..n {
                f_norm_sq += a[(i, j)] * a[(j, i)];
            }
        }
        let u = terminal_vector(grid, theta);
        let gu: Vec<f64> = (0..n)
            .map(|i| gm.gamma.column(i).iter().zip(&u).map(|(g, u)| g * u).sum())
            .collect();
        let trace_h: f64 = u.iter().zip(&gu).map(|(a, b)| a * b).sum();
        let fgu = exp_kernel_apply(rho, &gu);
        let fh_inner = gu.iter().zip(&fgu).map(|(a, b)| a * b).sum();
        OuNorms {
            theta,
            horizon: grid.horizon(),
            trace_f: a.trace(),
            a,
            f_norm_sq,
            h_norm_sq: trace_h * trace_h,
            fh_inner,
            trace_h,
        }
    }

    fn g_scale(&self) -> f64 {
        1.0 / (2.0 * self.theta * self.horizon)
    }

    pub fn g_norm_sq(&self) -> f64 {
        let s = self.g_scale();
        s * s * (self.f_norm_sq - 2.0 * self.fh_inner + self.h_norm_sq)
    }

    pub fn trace_g(&self) -> f64 {
        self.g_scale() * (self.trace_f - self.trace_h)
    }

    /// `||f_T (x)_1 f_T||^2 = tr((F Gamma)^4)`; the only O(n^3) step.
    pub fn contraction_norm_sq(&self) -> f64 {
        let m = &self.a * &self.a;
        let n = m.nrows();
        let mut s = 0.0;
        for j in 0..n {
            for i in 0..n {
                s += m[(i, j)] * m[(j, i)];
            }
        }
        s
    }
}
