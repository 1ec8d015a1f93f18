use nalgebra::DMatrix;

use super::{cell_weights, GramMatrix, Grid};
use crate::error::{Error, Result};

/// Bivariate function on `[0, T]^2` sampled at cell midpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction2 {
    pub values: DMatrix<f64>,
    pub symmetric: bool,
}

impl GridFunction2 {
    pub fn from_fn(grid: &Grid, symmetric: bool, f: impl Fn(f64, f64) -> f64) -> Self {
        let m = grid.midpoints();
        let n = m.len();
        GridFunction2 {
            values: DMatrix::from_fn(n, n, |i, j| f(m[i], m[j])),
            symmetric,
        }
    }

    /// `f_T(t, s) = exp(-theta |t - s|)`.
    pub fn f_t(grid: &Grid, theta: f64) -> Self {
        Self::from_fn(grid, true, |t, s| (-theta * (t - s).abs()).exp())
    }

    /// `h_T(t, s) = exp(-theta (T - t) - theta (T - s))`.
    pub fn h_t(grid: &Grid, theta: f64) -> Self {
        let big_t = grid.horizon();
        Self::from_fn(grid, true, |t, s| (-theta * (2.0 * big_t - t - s)).exp())
    }

    /// `g_T = (f_T - h_T) / (2 theta T)`.
    pub fn g_t(grid: &Grid, theta: f64) -> Self {
        let scale = 1.0 / (2.0 * theta * grid.horizon());
        let f = Self::f_t(grid, theta);
        let h = Self::h_t(grid, theta);
        GridFunction2 { values: (f.values - h.values) * scale, symmetric: true }
    }

    /// `u (x) v`.
    pub fn outer(u: &[f64], v: &[f64]) -> Self {
        let symmetric = u == v;
        GridFunction2 {
            values: DMatrix::from_fn(u.len(), v.len(), |i, j| u[i] * v[j]),
            symmetric,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    fn check(&self, gm: &GramMatrix) -> Result<()> {
        gm.check_len(self.values.nrows())?;
        gm.check_len(self.values.ncols())
    }
}

/// `<f, g>_H = sum_ij f_i g_j gamma_ij`.
pub fn inner_h(f: &[f64], g: &[f64], gm: &GramMatrix) -> Result<f64> {
    gm.check_len(f.len())?;
    gm.check_len(g.len())?;
    Ok(quadratic(&gm.gamma, f, g))
}

fn quadratic(m: &DMatrix<f64>, f: &[f64], g: &[f64]) -> f64 {
    let n = f.len();
    let mut acc = 0.0;
    for j in 0..n {
        let col = m.column(j);
        let mut s = 0.0;
        for i in 0..n {
            s += f[i] * col[i];
        }
        acc += s * g[j];
    }
    acc
}

/// `sum phi[i][k] g[i][j] psi[j][l] g[k][l]`.
fn pair_through(phi: &DMatrix<f64>, psi: &DMatrix<f64>, g: &DMatrix<f64>) -> f64 {
    let b = g * psi * g;
    phi.dot(&b)
}

/// Inner product on the tensor square.
pub fn inner_h2tensor(phi: &GridFunction2, psi: &GridFunction2, gm: &GramMatrix) -> Result<f64> {
    phi.check(gm)?;
    psi.check(gm)?;
    Ok(pair_through(&phi.values, &psi.values, &gm.gamma))
}

pub fn tensor_norm_sq(phi: &GridFunction2, gm: &GramMatrix) -> Result<f64> {
    inner_h2tensor(phi, phi, gm)
}

/// First contraction, `(phi (x)_1 psi)(u1, u2) = sum_ij phi(u1, i) psi(u2, j) gamma_ij`.
pub fn contract1(phi: &GridFunction2, psi: &GridFunction2, gm: &GramMatrix) -> Result<GridFunction2> {
    phi.check(gm)?;
    psi.check(gm)?;
    let values = &phi.values * &gm.gamma * psi.values.transpose();
    Ok(GridFunction2 {
        values,
        symmetric: phi.symmetric && std::ptr::eq(phi, psi),
    })
}

/// `||phi||^2` for the singular part alone.
pub fn norm_h1_sq(phi: &[f64], gm: &GramMatrix) -> Result<f64> {
    gm.check_len(phi.len())?;
    Ok(quadratic(gm.gamma1()?, phi, phi))
}

/// `C'_beta (int |phi(r)| r^(beta-1) dr)^2`.
pub fn norm_h2_sq(phi: &[f64], gm: &GramMatrix) -> Result<f64> {
    gm.check_len(phi.len())?;
    let s: f64 = phi.iter().zip(&gm.weights).map(|(p, w)| p.abs() * w).sum();
    Ok(gm.spec().c_beta_prime() * s * s)
}

pub fn tensor_norm_h1_sq(phi: &GridFunction2, gm: &GramMatrix) -> Result<f64> {
    phi.check(gm)?;
    Ok(pair_through(&phi.values, &phi.values, gm.gamma1()?))
}

/// The remainder majorant is rank one, so the tensor norm factorizes into
/// `C'^2 (w^T |phi| w)^2`.
pub fn tensor_norm_h2_sq(phi: &GridFunction2, gm: &GramMatrix) -> Result<f64> {
    phi.check(gm)?;
    let w = &gm.weights;
    let n = w.len();
    let mut s = 0.0;
    for j in 0..n {
        for i in 0..n {
            s += w[i] * phi.values[(i, j)].abs() * w[j];
        }
    }
    let c = gm.spec().c_beta_prime();
    Ok(c * c * s * s)
}

/// `(K phi)(r) = int_0^T |phi(r, u)| u^(beta-1) du` with exact cell weights.
pub fn k_operator(phi: &GridFunction2, grid: &Grid, beta: f64) -> Result<Vec<f64>> {
    let w = cell_weights(grid, beta);
    if phi.values.ncols() != w.len() {
        return Err(Error::Dimension { expected: w.len(), got: phi.values.ncols() });
    }
    Ok((0..phi.values.nrows())
        .map(|r| {
            phi.values
                .row(r)
                .iter()
                .zip(&w)
                .map(|(v, w)| v.abs() * w)
                .sum()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::gram;
    use crate::kernels::KernelSpec;

    fn brute_pair(phi: &DMatrix<f64>, psi: &DMatrix<f64>, g: &DMatrix<f64>) -> f64 {
        let n = phi.nrows();
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        s += phi[(i, k)] * g[(i, j)] * psi[(j, l)] * g[(k, l)];
                    }
                }
            }
        }
        s
    }

    fn small() -> (Grid, GramMatrix) {
        let grid = Grid::new(3.0, 8).unwrap();
        (grid, gram(&KernelSpec::subfbm(0.6).unwrap(), &grid))
    }

    #[test]
    fn telescoping_and_cells() {
        let spec = KernelSpec::bifbm(0.9, 0.7).unwrap();
        let grid = Grid::new(4.0, 10).unwrap();
        let gm = gram(&spec, &grid);
        let ones = vec![1.0; 10];
        let v = inner_h(&ones, &ones, &gm).unwrap();
        assert!((v - spec.cov(4.0, 4.0).unwrap()).abs() < 1e-12);
        let mut e0 = vec![0.0; 10];
        let mut e1 = vec![0.0; 10];
        e0[0] = 1.0;
        e1[1] = 1.0;
        assert_eq!(inner_h(&e0, &e1, &gm).unwrap(), gm.gamma[(0, 1)]);
        assert!(matches!(inner_h(&ones[..3], &ones, &gm), Err(Error::Dimension { .. })));
    }

    #[test]
    fn tensor_brute_force() {
        let (grid, gm) = small();
        let phi = GridFunction2::f_t(&grid, 1.3);
        let psi = GridFunction2::from_fn(&grid, false, |t, s| (t - 0.3 * s).sin());
        let fast = inner_h2tensor(&phi, &psi, &gm).unwrap();
        let brute = brute_pair(&phi.values, &psi.values, &gm.gamma);
        assert!((fast - brute).abs() < 1e-12 * brute.abs().max(1.0));

        let c = contract1(&phi, &phi, &gm).unwrap();
        assert!(c.symmetric);
        let one = GridFunction2::outer(&[1.0; 8], &[1.0; 8]);
        let via = inner_h2tensor(&c, &one, &gm).unwrap();
        // Four-index sum written out: sum phi[a][i] g[i][j] phi[b][j] * g[a][c] g[b][d].
        let g = &gm.gamma;
        let rowsum: Vec<f64> = (0..8).map(|a| (0..8).map(|c| g[(a, c)]).sum()).collect();
        let mut brute = 0.0;
        for a in 0..8 {
            for b in 0..8 {
                let mut cab = 0.0;
                for i in 0..8 {
                    for j in 0..8 {
                        cab += phi.values[(a, i)] * g[(i, j)] * phi.values[(b, j)];
                    }
                }
                brute += cab * rowsum[a] * rowsum[b];
            }
        }
        assert!((via - brute).abs() < 1e-12 * brute.abs().max(1.0));
    }

    #[test]
    fn rank_one_factorizes() {
        let (grid, gm) = small();
        let u: Vec<f64> = grid.midpoints().iter().map(|m| (-0.7 * m).exp()).collect();
        let uu = GridFunction2::outer(&u, &u);
        let n1 = inner_h(&u, &u, &gm).unwrap();
        assert!((tensor_norm_sq(&uu, &gm).unwrap() - n1 * n1).abs() < 1e-12);
        let c = contract1(&uu, &uu, &gm).unwrap();
        let want = &uu.values * n1;
        assert!((c.values - want).amax() < 1e-12);
    }

    #[test]
    fn comparison_norms() {
        let spec = KernelSpec::fbm(0.6).unwrap();
        let grid = Grid::new(7.0, 32).unwrap();
        let gm = gram(&spec, &grid);
        let f = GridFunction2::f_t(&grid, 1.0);
        assert_eq!(tensor_norm_h2_sq(&f, &gm).unwrap(), 0.0);
        assert_eq!(norm_h2_sq(&[1.0; 32], &gm).unwrap(), 0.0);
        let ones = vec![1.0; 32];
        let beta = 0.6;
        let want = spec.c_beta() * 7f64.powf(2.0 * beta) / (beta * (2.0 * beta - 1.0));
        assert!((norm_h1_sq(&ones, &gm).unwrap() - want).abs() < 1e-11 * want);
    }

    #[test]
    fn one_dim_sandwich_subfbm() {
        let spec = KernelSpec::subfbm(0.6).unwrap();
        let theta = 1.0;
        let grid = Grid::new(10.0, 512).unwrap();
        let gm = gram(&spec, &grid);
        let m = grid.midpoints();
        let cases: Vec<Vec<f64>> = vec![
            m.iter().map(|x| (-theta * (10.0 - x)).exp()).collect(),
            m.iter().map(|x| (-theta * x).exp()).collect(),
            vec![1.0; 512],
        ];
        for phi in cases {
            let h = inner_h(&phi, &phi, &gm).unwrap();
            let h1 = norm_h1_sq(&phi, &gm).unwrap();
            let h2 = norm_h2_sq(&phi, &gm).unwrap();
            assert!((h - h1).abs() <= h2, "{h} {h1} {h2}");
        }
    }

    #[test]
    fn k_operator_constant() {
        let grid = Grid::new(5.0, 20).unwrap();
        let one = GridFunction2::outer(&[1.0; 20], &[1.0; 20]);
        let k = k_operator(&one, &grid, 0.6).unwrap();
        let want = 5f64.powf(0.6) / 0.6;
        assert!(k.iter().all(|v| (v - want).abs() < 1e-12));
    }
}
