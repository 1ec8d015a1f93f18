//! Discrete calculus on the Hilbert space generated by the noise.
//!
//! Every computation works with step functions on a uniform partition of
//! `[0, T]`. The inner product of two cell indicators is the double increment
//! of the covariance, which absorbs the `|t - s|^(2 beta - 2)` singularity
//! exactly; smooth integrands are sampled at cell midpoints.

mod gram;
mod ou;
mod table;
mod tensor;

pub use gram::{cell_weights, gram, increment_gram, GramMatrix};
pub use ou::{
    alpha_t, alpha_trace, b_t, b_t_prefix, exp_kernel_apply, forward_sum_mean, state_variances,
    terminal_vector, OuNorms,
};
pub use table::{norms_row, NormsRow};
pub use tensor::{
    contract1, inner_h, inner_h2tensor, k_operator, norm_h1_sq, norm_h2_sq, tensor_norm_h1_sq,
    tensor_norm_h2_sq, tensor_norm_sq, GridFunction2,
};

use std::fmt;

use crate::error::{Error, Result};

/// Uniform partition of `[0, T]` into `n` cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    horizon: f64,
    cells: usize,
}

impl Grid {
    pub fn new(horizon: f64, cells: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Config(format!("horizon T = {horizon} must be > 0")));
        }
        if cells == 0 {
            return Err(Error::Config("grid needs at least one cell".into()));
        }
        Ok(Grid { horizon, cells })
    }

    /// Grid with step as close to `dt` as an integer cell count allows.
    pub fn with_step(horizon: f64, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Config(format!("step dt = {dt} must be > 0")));
        }
        let n = (horizon / dt).round().max(1.0) as usize;
        Grid::new(horizon, n)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.cells as f64
    }

    /// `t_k = k T / n`, `k = 0..=n`.
    pub fn node(&self, k: usize) -> f64 {
        if k == self.cells {
            self.horizon
        } else {
            k as f64 * self.horizon / self.cells as f64
        }
    }

    pub fn midpoint(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.step()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.cells).map(|k| self.node(k)).collect()
    }

    pub fn midpoints(&self) -> Vec<f64> {
        (0..self.cells).map(|k| self.midpoint(k)).collect()
    }

    /// The first `m` cells, `[0, m T / n]`.
    pub fn prefix(&self, m: usize) -> Result<Grid> {
        if m == 0 || m > self.cells {
            return Err(Error::Config(format!(
                "prefix of {m} cells out of range 1..={}",
                self.cells
            )));
        }
        Ok(Grid { horizon: self.node(m), cells: m })
    }

    /// The same horizon with twice as many cells.
    pub fn refined(&self) -> Grid {
        Grid { horizon: self.horizon, cells: 2 * self.cells }
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "grid(T={}, n={})", self.horizon, self.cells)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_layout() {
        let g = Grid::new(10.0, 4).unwrap();
        assert_eq!(g.step(), 2.5);
        assert_eq!(g.nodes(), vec![0.0, 2.5, 5.0, 7.5, 10.0]);
        assert_eq!(g.midpoints(), vec![1.25, 3.75, 6.25, 8.75]);
        let p = g.prefix(2).unwrap();
        assert_eq!((p.horizon(), p.cells()), (5.0, 2));
        assert!(g.prefix(5).is_err());
        assert!(Grid::new(0.0, 3).is_err());
        assert!(Grid::new(1.0, 0).is_err());
        assert_eq!(Grid::with_step(40.0, 0.02).unwrap().cells(), 2000);
        let nodes = Grid::new(3.0, 7).unwrap().nodes();
        assert!(nodes.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(*nodes.last().unwrap(), 3.0);
    }
}
