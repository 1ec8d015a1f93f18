//! Exact-in-law increment sampling, OU paths and discrete second chaos.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::hilbert::{exp_kernel_apply, terminal_vector, GramMatrix, Grid, GridFunction2};

/// Lower factor `L` with `L L^T = gamma + jitter I`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    n: usize,
    l: Vec<f64>,
    jitter: f64,
}

/// Pivots below this fraction of the largest diagonal entry are treated as
/// exact zeros of a semidefinite matrix.
const PIVOT_FLOOR: f64 = 1e-13;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for r in 0..4 {
            acc[r] += a[4 * c + r] * b[4 * c + r];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Row-oriented Cholesky. A pivot that is numerically zero produces a zero
/// column, which is the right factor for a semidefinite matrix; a clearly
/// negative pivot is a failure.
fn try_cholesky(a: &nalgebra::DMatrix<f64>, jitter: f64) -> Option<Vec<f64>> {
    let n = a.nrows();
    let max_diag = (0..n).map(|i| a[(i, i)]).fold(0.0f64, f64::max) + jitter;
    let floor = PIVOT_FLOOR * max_diag;
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s = a[(i, j)] - dot(&l[i * n..i * n + j], &l[j * n..j * n + j]);
            if i == j {
                let d = s + jitter;
                if d < -floor.max(f64::MIN_POSITIVE) {
                    return None;
                }
                l[i * n + i] = if d <= floor { 0.0 } else { d.sqrt() };
            } else {
                let p = l[j * n + j];
                l[i * n + j] = if p == 0.0 { 0.0 } else { s / p };
            }
        }
    }
    Some(l)
}

impl CholeskyFactor {
    /// Factor a Gram matrix; retries with jitter `1e-14 tr/n, 1e-13 tr/n, ...`
    /// up to `1e-8 tr/n`.
    pub fn new(gm: &GramMatrix) -> Result<Self> {
        Self::from_matrix(&gm.gamma).map_err(|e| match e {
            Error::NotPsd { cap, .. } => Error::NotPsd {
                kernel: gm.spec().to_string(),
                grid: gm.grid().to_string(),
                cap,
            },
            other => other,
        })
    }

    pub fn from_matrix(a: &nalgebra::DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension { expected: n, got: a.ncols() });
        }
        let scale = a.trace().abs() / n.max(1) as f64;
        let cap = 1e-8 * scale;
        let max_abs = a.amax();
        let mut jitter = 0.0;
        loop {
            if let Some(l) = try_cholesky(a, jitter) {
                let f = CholeskyFactor { n, l, jitter };
                if f.reconstruction_error(a) <= 1e-8 * max_abs + jitter {
                    return Ok(f);
                }
            }
            jitter = if jitter == 0.0 { 1e-14 * scale } else { jitter * 10.0 };
            if jitter > cap * (1.0 + 1e-12) || scale == 0.0 {
                return Err(Error::NotPsd { kernel: "matrix".into(), grid: format!("n={n}"), cap });
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.l[i * self.n + j]
    }

    /// Row `i` of `L` up to and including the diagonal.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.l[i * self.n..i * self.n + i + 1]
    }

    /// Factor of the leading `m x m` block, which is the leading block of `L`.
    pub fn leading(&self, m: usize) -> Result<CholeskyFactor> {
        if m == 0 || m > self.n {
            return Err(Error::Dimension { expected: self.n, got: m });
        }
        let mut l = vec![0.0; m * m];
        for i in 0..m {
            l[i * m..i * m + i + 1].copy_from_slice(self.row(i));
        }
        Ok(CholeskyFactor { n: m, l, jitter: self.jitter })
    }

    /// `max |L L^T - a|`.
    pub fn reconstruction_error(&self, a: &nalgebra::DMatrix<f64>) -> f64 {
        let n = self.n;
        let mut err = 0.0f64;
        for i in 0..n {
            for j in 0..=i {
                let v = dot(&self.l[i * n..i * n + j + 1], &self.l[j * n..j * n + j + 1]);
                err = err.max((v - a[(i, j)]).abs());
            }
        }
        err
    }

    /// `L z`, summed in increasing column order.
    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let mut acc = 0.0;
                for (l, z) in self.row(i).iter().zip(z) {
                    acc += l * z;
                }
                acc
            })
            .collect()
    }

    /// `L z` for a batch of vectors stored as `zs[k * batch + b]`. Each output
    /// accumulates in the same order as [`apply`](Self::apply), so results are
    /// bit-identical to the one-vector path for every batch size.
    pub fn apply_batch(&self, zs: &[f64], batch: usize) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n * batch];
        for i in 0..n {
            let acc = &mut out[i * batch..(i + 1) * batch];
            for (k, l) in self.row(i).iter().enumerate() {
                let zk = &zs[k * batch..(k + 1) * batch];
                for b in 0..batch {
                    acc[b] += l * zk[b];
                }
            }
        }
        out
    }
}

/// Standard normal vector for replication `rep_index` of root `seed`. The
/// stream is addressed directly, so replication `r` never depends on `0..r`.
pub fn normals(seed: u64, rep_index: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep_index);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

pub fn sample_increments(factor: &CholeskyFactor, seed: u64, rep_index: u64) -> Vec<f64> {
    factor.apply(&normals(seed, rep_index, factor.dim()))
}

/// Increments for replications `first..first + count`, one vector each.
pub fn sample_increments_batch(
    factor: &CholeskyFactor,
    seed: u64,
    first: u64,
    count: usize,
) -> Vec<Vec<f64>> {
    let n = factor.dim();
    let mut zs = vec![0.0; n * count];
    for b in 0..count {
        for (k, z) in normals(seed, first + b as u64, n).into_iter().enumerate() {
            zs[k * count + b] = z;
        }
    }
    let out = factor.apply_batch(&zs, count);
    (0..count)
        .map(|b| (0..n).map(|k| out[k * count + b]).collect())
        .collect()
}

/// One simulated trajectory on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub dg: Vec<f64>,
    pub g: Vec<f64>,
    pub x: Vec<f64>,
    pub seed: u64,
    pub rep_index: u64,
    pub grid: Grid,
}

/// `theta dt` above which the exponential scheme is considered coarse.
pub const COARSE_STEP: f64 = 0.1;

pub fn scheme_warning(theta: f64, grid: &Grid) -> Option<String> {
    let r = theta * grid.step();
    (r > COARSE_STEP).then(|| format!("theta*dt = {r:.3} exceeds {COARSE_STEP}; refine the grid"))
}

/// `x_{k+1} = exp(-theta dt) x_k + exp(-theta dt / 2) dg_k`, `x_0 = 0`.
pub fn build_ou_path(dg: Vec<f64>, theta: f64, grid: &Grid) -> Result<PathSample> {
    build_ou_path_tagged(dg, theta, grid, 0, 0)
}

pub fn build_ou_path_tagged(
    dg: Vec<f64>,
    theta: f64,
    grid: &Grid,
    seed: u64,
    rep_index: u64,
) -> Result<PathSample> {
    if dg.len() != grid.cells() {
        return Err(Error::Dimension { expected: grid.cells(), got: dg.len() });
    }
    if !(theta.is_finite() && theta >= 0.0) {
        return Err(Error::Domain(format!("theta = {theta} must be >= 0")));
    }
    let dt = grid.step();
    let decay = (-theta * dt).exp();
    let half = (-0.5 * theta * dt).exp();
    let n = dg.len();
    let mut g = vec![0.0; n + 1];
    let mut x = vec![0.0; n + 1];
    for k in 0..n {
        g[k + 1] = g[k] + dg[k];
        x[k + 1] = decay * x[k] + half * dg[k];
    }
    Ok(PathSample { dg, g, x, seed, rep_index, grid: *grid })
}

/// `sum_ij phi_ij (dg_i dg_j - gamma_ij)`.
pub fn chaos_i2(phi: &GridFunction2, dg: &[f64], gm: &GramMatrix) -> Result<f64> {
    gm.check_len(dg.len())?;
    gm.check_len(phi.values.nrows())?;
    gm.check_len(phi.values.ncols())?;
    let n = dg.len();
    let mut s = 0.0;
    for j in 0..n {
        for i in 0..n {
            s += phi.values[(i, j)] * (dg[i] * dg[j] - gm.gamma[(i, j)]);
        }
    }
    Ok(s)
}

/// Second-chaos values of `f_T`, `h_T` and `g_T` for one path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChaosValues {
    pub i2_f: f64,
    pub i2_h: f64,
    pub i2_g: f64,
}

/// O(n) evaluation of the OU chaos values, with the O(n^2) traces done once.
#[derive(Debug, Clone)]
pub struct OuChaos {
    rho: f64,
    horizon: f64,
    theta: f64,
    u: Vec<f64>,
    trace_f: f64,
    trace_h: f64,
}

impl OuChaos {
    pub fn new(gm: &GramMatrix, theta: f64) -> Self {
        let grid = gm.grid();
        let n = gm.dim();
        let rho = (-theta * grid.step()).exp();
        let u = terminal_vector(grid, theta);
        let mut trace_f = 0.0;
        let mut trace_h = 0.0;
        let mut pow = vec![1.0; n];
        for d in 1..n {
            pow[d] = pow[d - 1] * rho;
        }
        for j in 0..n {
            let col = gm.gamma.column(j);
            let mut fj = 0.0;
            let mut hj = 0.0;
            for i in 0..n {
                fj += pow[i.abs_diff(j)] * col[i];
                hj += u[i] * col[i];
            }
            trace_f += fj;
            trace_h += hj * u[j];
        }
        OuChaos { rho, horizon: grid.horizon(), theta, u, trace_f, trace_h }
    }

    pub fn eval(&self, dg: &[f64]) -> ChaosValues {
        let fdg = exp_kernel_apply(self.rho, dg);
        let quad: f64 = dg.iter().zip(&fdg).map(|(a, b)| a * b).sum();
        let ud: f64 = self.u.iter().zip(dg).map(|(a, b)| a * b).sum();
        let i2_f = quad - self.trace_f;
        let i2_h = ud * ud - self.trace_h;
        ChaosValues {
            i2_f,
            i2_h,
            i2_g: (i2_f - i2_h) / (2.0 * self.theta * self.horizon),
        }
    }
}
