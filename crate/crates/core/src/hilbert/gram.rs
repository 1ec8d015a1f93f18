use nalgebra::DMatrix;

use super::Grid;
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;

/// Inner products of the cell indicators `1_[t_i, t_{i+1})`.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    spec: KernelSpec,
    grid: Grid,
    /// `gamma[i][j] = E[(G_{t_{i+1}} - G_{t_i})(G_{t_{j+1}} - G_{t_j})]`.
    pub gamma: DMatrix<f64>,
    /// Same pairing for the singular part `C_beta |t-s|^(2 beta - 2)` alone.
    pub gamma1: Option<DMatrix<f64>>,
    /// `(t_{i+1}^beta - t_i^beta) / beta`, the exact integral of `u^(beta-1)` over cell `i`.
    pub weights: Vec<f64>,
}

/// Exact integrals of `u^(beta - 1)` over each cell.
pub fn cell_weights(grid: &Grid, beta: f64) -> Vec<f64> {
    (0..grid.cells())
        .map(|i| (grid.node(i + 1).powf(beta) - grid.node(i).powf(beta)) / beta)
        .collect()
}

fn fill_symmetric(n: usize, mut entry: impl FnMut(usize, usize) -> f64) -> DMatrix<f64> {
    let mut m = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            let v = entry(i, j);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Increment covariance only; what the sampler needs.
pub fn increment_gram(spec: &KernelSpec, grid: &Grid) -> GramMatrix {
    let nodes = grid.nodes();
    let gamma = fill_symmetric(grid.cells(), |i, j| {
        spec.double_increment(nodes[i], nodes[i + 1], nodes[j], nodes[j + 1])
    });
    GramMatrix {
        spec: spec.clone(),
        grid: *grid,
        gamma,
        gamma1: None,
        weights: cell_weights(grid, spec.beta()),
    }
}

/// Full Gram data: increments, the singular-part Gram and the cell weights
/// behind the remainder majorant.
pub fn gram(spec: &KernelSpec, grid: &Grid) -> GramMatrix {
    let mut gm = increment_gram(spec, grid);
    let nodes = grid.nodes();
    let beta = spec.beta();
    let p = 2.0 * beta;
    let scale = spec.c_beta() / (p * (p - 1.0));
    let w = |x: f64| x.abs().powf(p);
    gm.gamma1 = Some(fill_symmetric(grid.cells(), |i, j| {
        let (a, b, c, d) = (nodes[i], nodes[i + 1], nodes[j], nodes[j + 1]);
        scale * (w(b - c) + w(a - d) - w(b - d) - w(a - c))
    }));
    gm
}

impl GramMatrix {
    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.cells()
    }

    pub fn gamma1(&self) -> Result<&DMatrix<f64>> {
        self.gamma1
            .as_ref()
            .ok_or_else(|| Error::Config("singular-part Gram not computed; use hilbert::gram".into()))
    }

    /// `C'_beta * w_i * w_j`, a cellwise majorant of `|int int Psi|`.
    pub fn gamma2_majorant(&self) -> DMatrix<f64> {
        let c = self.spec.c_beta_prime();
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| c * self.weights[i] * self.weights[j])
    }

    /// Gram data of the first `m` cells (a leading principal block).
    pub fn leading_block(&self, m: usize) -> Result<GramMatrix> {
        let grid = self.grid.prefix(m)?;
        Ok(GramMatrix {
            spec: self.spec.clone(),
            grid,
            gamma: self.gamma.view((0, 0), (m, m)).into_owned(),
            gamma1: self.gamma1.as_ref().map(|g| g.view((0, 0), (m, m)).into_owned()),
            weights: self.weights[..m].to_vec(),
        })
    }

    pub fn check_len(&self, len: usize) -> Result<()> {
        if len == self.dim() {
            Ok(())
        } else {
            Err(Error::Dimension { expected: self.dim(), got: len })
        }
    }
}
