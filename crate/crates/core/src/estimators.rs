//! Second-moment and least squares drift estimators.

use serde::Serialize;
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::hilbert::{alpha_t, b_t_prefix, state_variances, GramMatrix, Grid};
use crate::kernels::KernelSpec;
use crate::simulate::{ChaosValues, PathSample};

/// Paths with `(1/T) int X^2` below this are dropped from aggregates.
pub const DEGENERATE_ENERGY: f64 = 1e-12;
pub const PLUGIN_TOL: f64 = 1e-8;
pub const PLUGIN_MAX_ITER: usize = 50;

/// `(1/T) int_0^T X^2` by the trapezoid rule on the grid nodes.
pub fn int_x2(x: &[f64], grid: &Grid) -> Result<f64> {
    let n = grid.cells();
    if x.len() != n + 1 {
        return Err(Error::Dimension { expected: n + 1, got: x.len() });
    }
    Ok(energy_prefix(x, n))
}

/// Same as [`int_x2`] over the first `m` cells.
pub fn energy_prefix(x: &[f64], m: usize) -> f64 {
    let inner: f64 = x[1..m].iter().map(|v| v * v).sum();
    (0.5 * x[0] * x[0] + inner + 0.5 * x[m] * x[m]) / m as f64
}

/// Inverts `energy = C_beta Gamma(2 beta - 1) theta^(-2 beta)`.
pub fn theta_tilde_from_energy(energy: f64, spec: &KernelSpec) -> Result<f64> {
    if !(energy >= DEGENERATE_ENERGY) {
        return Err(Error::DegeneratePath(energy));
    }
    let beta = spec.beta();
    let scale = spec.c_beta() * gamma(2.0 * beta - 1.0);
    Ok((energy / scale).powf(-1.0 / (2.0 * beta)))
}

pub fn theta_tilde(x: &[f64], grid: &Grid, spec: &KernelSpec) -> Result<f64> {
    theta_tilde_from_energy(int_x2(x, grid)?, spec)
}

/// `(alpha - X_T^2 / 2) / int_0^T X^2`.
pub fn theta_hat_with_alpha(alpha: f64, x_end: f64, energy: f64, horizon: f64) -> Result<f64> {
    if !(energy >= DEGENERATE_ENERGY) {
        return Err(Error::DegeneratePath(energy));
    }
    Ok((alpha - 0.5 * x_end * x_end) / (energy * horizon))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    /// Correction evaluated at the true drift.
    Oracle(f64),
    /// Correction evaluated at the estimate itself, by fixed-point iteration
    /// started from the second-moment estimator.
    Plugin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PluginOutcome {
    pub theta: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Least squares estimate from one path.
pub fn theta_hat(path: &PathSample, gm: &GramMatrix, mode: Mode) -> Result<f64> {
    match mode {
        Mode::Oracle(theta) => {
            let energy = int_x2(&path.x, &path.grid)?;
            let x_end = *path.x.last().unwrap();
            theta_hat_with_alpha(alpha_t(gm, theta), x_end, energy, path.grid.horizon())
        }
        Mode::Plugin => Ok(theta_hat_plugin(path, gm)?.theta),
    }
}

/// Plugin estimate; each step recomputes the correction in O(n^2). The map
/// contracts with factor about `|1 - 2 beta|`.
pub fn theta_hat_plugin(path: &PathSample, gm: &GramMatrix) -> Result<PluginOutcome> {
    let grid = &path.grid;
    gm.check_len(grid.cells())?;
    let energy = int_x2(&path.x, grid)?;
    let x_end = *path.x.last().unwrap();
    let mut current = theta_tilde_from_energy(energy, gm.spec())?;
    for it in 1..=PLUGIN_MAX_ITER {
        let next = theta_hat_with_alpha(alpha_t(gm, current), x_end, energy, grid.horizon())?;
        if !(next > 0.0) {
            return Ok(PluginOutcome { theta: next, iterations: it, converged: false });
        }
        let done = (next - current).abs() < PLUGIN_TOL;
        current = next;
        if done {
            return Ok(PluginOutcome { theta: current, iterations: it, converged: true });
        }
    }
    Ok(PluginOutcome { theta: current, iterations: PLUGIN_MAX_ITER, converged: false })
}

/// `theta + (-I2(f_T) / (2T)) / (I2(g_T) + b_T)`; `None` when the
/// denominator is not positive.
pub fn theta_hat_chaos(chaos: &ChaosValues, theta: f64, horizon: f64, b_t: f64) -> Option<f64> {
    let den = chaos.i2_g + b_t;
    (den > 0.0).then(|| theta - chaos.i2_f / (2.0 * horizon) / den)
}

/// `(sqrt(T / (theta sigma^2)) (hat - theta), sqrt(4 beta^2 T / (theta sigma^2)) (tilde - theta))`.
pub fn studentize(
    theta_hat: f64,
    theta_tilde: f64,
    theta: f64,
    horizon: f64,
    spec: &KernelSpec,
) -> Result<(f64, f64)> {
    let sigma2 = spec.constants(theta)?.sigma_beta2()?;
    let beta = spec.beta();
    let s = (horizon / (theta * sigma2)).sqrt();
    Ok((s * (theta_hat - theta), 2.0 * beta * s * (theta_tilde - theta)))
}

/// First-order expansion of the studentized second-moment statistic in the
/// energy: `-sqrt(T theta / sigma^2) (energy - a) / a`.
pub fn sme_linearized(energy: f64, theta: f64, horizon: f64, spec: &KernelSpec) -> Result<f64> {
    let c = spec.constants(theta)?;
    let sigma2 = c.sigma_beta2()?;
    Ok(-(horizon * theta / sigma2).sqrt() * (energy - c.a) / c.a)
}

/// `sum_k x_k (x_{k+1} - x_k) - x_n^2 / 2 = -(1/2) sum (dx)^2`: how far the
/// forward sum for `int X dX` is from its closed form on this path.
pub fn forward_sum_gap(x: &[f64]) -> f64 {
    -0.5 * x.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct RecordFlags {
    pub degenerate: bool,
    pub plugin_nonconverged: bool,
    pub chaos_denominator: bool,
}

impl RecordFlags {
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.degenerate {
            parts.push("degenerate");
        }
        if self.plugin_nonconverged {
            parts.push("plugin_nonconverged");
        }
        if self.chaos_denominator {
            parts.push("chaos_denominator");
        }
        parts.join("|")
    }
}

/// Everything estimated from one replication. Quantities that were not
/// requested or are undefined are NaN.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateRecord {
    pub rep: u64,
    pub seed: u64,
    pub t: f64,
    pub n: usize,
    pub theta_true: f64,
    pub theta_tilde: f64,
    pub theta_hat_oracle: f64,
    pub theta_hat_plugin: f64,
    pub theta_hat_chaos: f64,
    pub stat_lse: f64,
    pub stat_sme: f64,
    pub int_x2: f64,
    pub plugin_iterations: usize,
    pub flags: RecordFlags,
}

/// Deterministic ingredients shared by every replication on one horizon.
#[derive(Debug, Clone)]
pub struct Context {
    pub spec: KernelSpec,
    pub theta: f64,
    pub grid: Grid,
    pub alpha: f64,
    pub b_t: f64,
    studentizable: bool,
}

impl Context {
    pub fn new(gm: &GramMatrix, theta: f64) -> Self {
        let var = state_variances(gm, theta);
        let n = gm.dim();
        let b = b_t_prefix(&var, n);
        Context::from_parts(gm.spec().clone(), theta, *gm.grid(), 0.5 * var[n] + theta * gm.grid().horizon() * b, b)
    }

    pub fn from_parts(spec: KernelSpec, theta: f64, grid: Grid, alpha: f64, b_t: f64) -> Self {
        let studentizable = spec.constants(theta).map(|c| c.sigma_beta2.is_some()).unwrap_or(false);
        Context { spec, theta, grid, alpha, b_t, studentizable }
    }

    /// Record for one path. `chaos` enables the chaos route and `plugin`
    /// (the Gram of the same grid) the fixed-point estimate.
    pub fn record(
        &self,
        path: &PathSample,
        chaos: Option<&ChaosValues>,
        plugin: Option<&GramMatrix>,
    ) -> Result<EstimateRecord> {
        let grid = &self.grid;
        let horizon = grid.horizon();
        let energy = int_x2(&path.x, grid)?;
        let mut rec = EstimateRecord {
            rep: path.rep_index,
            seed: path.seed,
            t: horizon,
            n: grid.cells(),
            theta_true: self.theta,
            theta_tilde: f64::NAN,
            theta_hat_oracle: f64::NAN,
            theta_hat_plugin: f64::NAN,
            theta_hat_chaos: f64::NAN,
            stat_lse: f64::NAN,
            stat_sme: f64::NAN,
            int_x2: energy,
            plugin_iterations: 0,
            flags: RecordFlags::default(),
        };
        if !(energy >= DEGENERATE_ENERGY) {
            rec.flags.degenerate = true;
            return Ok(rec);
        }
        let x_end = *path.x.last().unwrap();
        rec.theta_tilde = theta_tilde_from_energy(energy, &self.spec)?;
        rec.theta_hat_oracle = theta_hat_with_alpha(self.alpha, x_end, energy, horizon)?;
        if let Some(c) = chaos {
            match theta_hat_chaos(c, self.theta, horizon, self.b_t) {
                Some(v) => rec.theta_hat_chaos = v,
                None => rec.flags.chaos_denominator = true,
            }
        }
        if let Some(gm) = plugin {
            let out = theta_hat_plugin(path, gm)?;
            rec.theta_hat_plugin = out.theta;
            rec.plugin_iterations = out.iterations;
            rec.flags.plugin_nonconverged = !out.converged;
        }
        if self.studentizable {
            let (lse, sme) =
                studentize(rec.theta_hat_oracle, rec.theta_tilde, self.theta, horizon, &self.spec)?;
            rec.stat_lse = lse;
            rec.stat_sme = sme;
        }
        Ok(rec)
    }
}
