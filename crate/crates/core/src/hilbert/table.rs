use serde::Serialize;

use super::{alpha_t, b_t, gram, increment_gram, Grid, OuNorms};
use crate::error::Result;
use crate::kernels::KernelSpec;

/// Relative change between `n` and `2n` cells above which a row is flagged.
pub const CONVERGENCE_TOL: f64 = 1e-3;

/// Deterministic quantities of the OU problem on one horizon.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormsRow {
    pub t: f64,
    pub n: usize,
    pub b_t: f64,
    pub a: f64,
    /// `||f_T||^2 / (2 theta sigma_beta^2 T)`; NaN outside `beta < 3/4`.
    pub f_ratio: f64,
    pub h_norm_sq: f64,
    /// `||f_T (x)_1 f_T|| / T`, when requested.
    pub contraction_over_t: Option<f64>,
    pub alpha_t: f64,
    /// Largest relative change of the scalars above under grid doubling.
    pub max_rel_change: f64,
    pub converged: bool,
}

struct Scalars {
    b: f64,
    f_ratio: f64,
    h: f64,
    contraction: Option<f64>,
    alpha: f64,
}

impl Scalars {
    fn values(&self) -> Vec<f64> {
        let mut v = vec![self.b, self.f_ratio, self.h, self.alpha];
        v.extend(self.contraction);
        v
    }
}

fn scalars(spec: &KernelSpec, theta: f64, grid: &Grid, sigma2: f64, contraction: bool) -> Scalars {
    let gm = if contraction { gram(spec, grid) } else { increment_gram(spec, grid) };
    let t = grid.horizon();
    let norms = OuNorms::new(&gm, theta);
    Scalars {
        b: b_t(&gm, theta),
        f_ratio: norms.f_norm_sq / (2.0 * theta * sigma2 * t),
        h: norms.h_norm_sq,
        contraction: contraction.then(|| norms.contraction_norm_sq().sqrt() / t),
        alpha: alpha_t(&gm, theta),
    }
}

/// One row of the norms table, with a refinement check at `2n`.
pub fn norms_row(
    spec: &KernelSpec,
    theta: f64,
    horizon: f64,
    n: usize,
    contraction: bool,
) -> Result<NormsRow> {
    let consts = spec.constants(theta)?;
    let sigma2 = consts.sigma_beta2.unwrap_or(f64::NAN);
    let grid = Grid::new(horizon, n)?;
    let coarse = scalars(spec, theta, &grid, sigma2, contraction);
    let fine = scalars(spec, theta, &grid.refined(), sigma2, contraction);
    let max_rel_change = coarse
        .values()
        .iter()
        .zip(fine.values())
        .filter(|(c, _)| !c.is_nan())
        .map(|(c, f)| (c - f).abs() / f.abs().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    Ok(NormsRow {
        t: horizon,
        n,
        b_t: coarse.b,
        a: consts.a,
        f_ratio: coarse.f_ratio,
        h_norm_sq: coarse.h,
        contraction_over_t: coarse.contraction,
        alpha_t: coarse.alpha,
        max_rel_change,
        converged: max_rel_change <= CONVERGENCE_TOL,
    })
}
