//! Seeded replication farms and the statistical verdicts built on them.
//!
//! All horizons of one run share a grid step. The Gram matrix and its
//! Cholesky factor are computed once for the longest horizon; shorter
//! horizons use leading blocks, which are exactly their own factors.

mod consistency;
mod stats;

pub use consistency::{run_consistency, ConsistencyConfig, ConsistencyReport, ConsistencyRow};
pub use stats::{correlation, ks_distance, linear_fit, median, mix_seed, moments, Moments};

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::{Context, EstimateRecord};
use crate::hilbert::{increment_gram, GramMatrix, Grid};
use crate::kernels::KernelSpec;
use crate::simulate::{build_ou_path_tagged, sample_increments_batch, CholeskyFactor, OuChaos};

/// Replications per sampling batch. Batching changes speed only: every
/// replication is bit-identical to its unbatched value.
const BATCH: usize = 32;
/// Fewer replications than this give no KS verdict.
pub const MIN_KS_REPS: usize = 100;
pub const DEFAULT_BUDGET: f64 = 5e11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Modes {
    pub chaos: bool,
    pub plugin: bool,
}

impl Default for Modes {
    fn default() -> Self {
        Modes { chaos: true, plugin: false }
    }
}

#[derive(Debug, Clone)]
pub struct McConfig {
    pub spec: KernelSpec,
    pub theta: f64,
    pub t_list: Vec<f64>,
    pub dt: f64,
    pub reps: usize,
    pub seed: u64,
    pub modes: Modes,
    /// Worker cap; `None` uses the global pool. Results do not depend on it.
    pub threads: Option<usize>,
    /// Refuse runs whose estimated flop count exceeds this.
    pub budget: f64,
}

impl McConfig {
    pub fn new(spec: KernelSpec, theta: f64, t_list: Vec<f64>, reps: usize, seed: u64) -> Self {
        McConfig {
            spec,
            theta,
            t_list,
            dt: 0.02 / theta,
            reps,
            seed,
            modes: Modes::default(),
            threads: None,
            budget: DEFAULT_BUDGET,
        }
    }

    /// Largest grid and the cell count of every horizon on it.
    pub fn layout(&self) -> Result<(Grid, Vec<usize>)> {
        if self.reps == 0 {
            return Err(Error::Config("reps must be at least 1".into()));
        }
        if !(self.theta.is_finite() && self.theta > 0.0) {
            return Err(Error::Config(format!("theta = {} must be > 0", self.theta)));
        }
        if self.t_list.is_empty() {
            return Err(Error::Config("at least one horizon T is required".into()));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Config(format!("dt = {} must be > 0", self.dt)));
        }
        let mut cells = Vec::with_capacity(self.t_list.len());
        for &t in &self.t_list {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::Config(format!("horizon T = {t} must be > 0")));
            }
            let m = (t / self.dt).round();
            if m < 1.0 || (m * self.dt - t).abs() > 1e-9 * t {
                return Err(Error::Config(format!("horizon T = {t} is not a multiple of dt = {}", self.dt)));
            }
            cells.push(m as usize);
        }
        let n_max = *cells.iter().max().unwrap();
        let t_max = n_max as f64 * self.dt;
        let grid = Grid::new(t_max, n_max)?;
        let cost = self.cost(&cells);
        if cost > self.budget {
            return Err(Error::Config(format!(
                "estimated cost {cost:.3e} flops exceeds the budget {:.3e}; lower reps, T or raise the budget",
                self.budget
            )));
        }
        Ok((grid, cells))
    }

    /// Factorization plus one triangular product per replication.
    pub fn cost(&self, cells: &[usize]) -> f64 {
        let n_max = cells.iter().copied().max().unwrap_or(0) as f64;
        let per_rep: f64 = cells.iter().map(|&m| (m as f64).powi(2) / 2.0).sum();
        let plugin = if self.modes.plugin { 20.0 } else { 0.0 };
        let extra: f64 = cells.iter().map(|&m| plugin * (m as f64).powi(2)).sum();
        n_max.powi(3) / 6.0 + self.reps as f64 * (per_rep + extra)
    }

    pub fn echo(&self) -> ConfigEcho {
        ConfigEcho {
            kernel: self.spec.to_string(),
            theta: self.theta,
            t_list: self.t_list.clone(),
            dt: self.dt,
            reps: self.reps,
            seed: self.seed,
            modes: self.modes,
        }
    }
}

/// What the report records about the run that produced it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigEcho {
    pub kernel: String,
    pub theta: f64,
    #[serde(rename = "T")]
    pub t_list: Vec<f64>,
    pub dt: f64,
    pub reps: usize,
    pub seed: u64,
    pub modes: Modes,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstantsEcho {
    pub sigma_beta2: Option<f64>,
    pub gamma: Option<f64>,
    pub a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McRow {
    #[serde(rename = "T")]
    pub t: f64,
    pub n: usize,
    /// `None` below [`MIN_KS_REPS`] usable replications.
    pub ks_lse: Option<f64>,
    pub ks_sme: Option<f64>,
    pub mean_lse: f64,
    pub var_lse: f64,
    pub mean_sme: f64,
    pub var_sme: f64,
    /// Standard error of `mean_lse`.
    pub se: f64,
    pub se_sme: f64,
    pub mean_theta_hat: f64,
    pub mean_theta_tilde: f64,
    /// `Var(sqrt(T)(theta_hat_chaos - theta)) / (theta sigma^2)`.
    pub var_chaos_ratio: f64,
    pub dropped: usize,
    pub plugin_nonconverged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fits {
    pub slope_lse: f64,
    pub slope_sme: f64,
    pub r2_lse: f64,
    pub r2_sme: f64,
    /// `0.5 / sqrt(N)`: KS values near this are sampling noise.
    pub noise_floor: f64,
    /// `-gamma` and `-(3 - 4 beta) / 2`, the exponents the fits are read against.
    pub target_lse: f64,
    pub target_sme: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct McReport {
    pub version: String,
    pub config: ConfigEcho,
    pub constants: ConstantsEcho,
    pub rows: Vec<McRow>,
    pub fits: Option<Fits>,
    pub runtime_seconds: f64,
    #[serde(skip)]
    pub records: Vec<Vec<EstimateRecord>>,
}

pub fn version() -> String {
    format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))
}

fn in_pool<T: Send>(threads: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(job))
        }
        None => Ok(job()),
    }
}

/// Records for replications `0..reps` on one horizon.
pub fn replicate(
    factor: &CholeskyFactor,
    gm: &GramMatrix,
    theta: f64,
    reps: usize,
    seed: u64,
    modes: Modes,
) -> Result<Vec<EstimateRecord>> {
    let ctx = Context::new(gm, theta);
    let chaos = modes.chaos.then(|| OuChaos::new(gm, theta));
    let plugin = modes.plugin.then_some(gm);
    let grid = *gm.grid();
    let starts: Vec<usize> = (0..reps).step_by(BATCH).collect();
    let batches: Vec<Result<Vec<EstimateRecord>>> = starts
        .par_iter()
        .map(|&first| {
            let count = BATCH.min(reps - first);
            sample_increments_batch(factor, seed, first as u64, count)
                .into_iter()
                .enumerate()
                .map(|(b, dg)| {
                    let cv = chaos.as_ref().map(|c| c.eval(&dg));
                    let path = build_ou_path_tagged(dg, theta, &grid, seed, (first + b) as u64)?;
                    ctx.record(&path, cv.as_ref(), plugin)
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(reps);
    for b in batches {
        out.extend(b?);
    }
    Ok(out)
}

fn summarize(t: f64, n: usize, records: &[EstimateRecord], theta: f64, sigma2: Option<f64>) -> Result<McRow> {
    let kept: Vec<&EstimateRecord> = records.iter().filter(|r| !r.flags.degenerate).collect();
    let lse: Vec<f64> = kept.iter().map(|r| r.stat_lse).filter(|v| v.is_finite()).collect();
    let sme: Vec<f64> = kept.iter().map(|r| r.stat_sme).filter(|v| v.is_finite()).collect();
    let hat: Vec<f64> = kept.iter().map(|r| r.theta_hat_oracle).collect();
    let tilde: Vec<f64> = kept.iter().map(|r| r.theta_tilde).collect();
    let chaos: Vec<f64> = kept
        .iter()
        .map(|r| t.sqrt() * (r.theta_hat_chaos - theta))
        .filter(|v| v.is_finite())
        .collect();
    let ks = |xs: &[f64]| -> Result<Option<f64>> {
        if xs.len() >= MIN_KS_REPS {
            ks_distance(xs).map(Some)
        } else {
            Ok(None)
        }
    };
    let ml = moments(&lse);
    let ms = moments(&sme);
    Ok(McRow {
        t,
        n,
        ks_lse: ks(&lse)?,
        ks_sme: ks(&sme)?,
        mean_lse: ml.mean,
        var_lse: ml.var,
        mean_sme: ms.mean,
        var_sme: ms.var,
        se: ml.se,
        se_sme: ms.se,
        mean_theta_hat: moments(&hat).mean,
        mean_theta_tilde: moments(&tilde).mean,
        var_chaos_ratio: sigma2.map_or(f64::NAN, |s| moments(&chaos).var / (theta * s)),
        dropped: records.len() - kept.len(),
        plugin_nonconverged: kept.iter().filter(|r| r.flags.plugin_nonconverged).count(),
    })
}

/// Studentized statistics and their KS distances to `N(0, 1)` per horizon.
pub fn run_clt(config: &McConfig) -> Result<McReport> {
    let start = Instant::now();
    let consts = config.spec.constants(config.theta)?;
    consts.sigma_beta2()?;
    let (grid, cells) = config.layout()?;
    let (rows, records) = in_pool(config.threads, || -> Result<_> {
        let full = increment_gram(&config.spec, &grid);
        let factor = CholeskyFactor::new(&full)?;
        let mut rows = Vec::new();
        let mut records = Vec::new();
        for (i, (&t, &m)) in config.t_list.iter().zip(&cells).enumerate() {
            let gm = full.leading_block(m)?;
            let lf = factor.leading(m)?;
            let seed = mix_seed(config.seed, i as u64);
            let recs = replicate(&lf, &gm, config.theta, config.reps, seed, config.modes)?;
            rows.push(summarize(t, m, &recs, config.theta, consts.sigma_beta2)?);
            records.push(recs);
        }
        Ok((rows, records))
    })??;
    Ok(McReport {
        version: version(),
        config: config.echo(),
        constants: ConstantsEcho { sigma_beta2: consts.sigma_beta2, gamma: consts.gamma, a: consts.a },
        rows,
        fits: None,
        runtime_seconds: start.elapsed().as_secs_f64(),
        records,
    })
}

/// Checks that each horizon is at least 1.5 times the previous one.
pub fn check_geometric(t_list: &[f64]) -> Result<()> {
    if t_list.len() < 4 {
        return Err(Error::Config(format!(
            "a rate fit needs at least 4 horizons, got {}",
            t_list.len()
        )));
    }
    for w in t_list.windows(2) {
        if w[1] < 1.5 * w[0] {
            return Err(Error::Config(format!(
                "horizons must grow geometrically (each >= 1.5x the previous): {} after {}",
                w[1], w[0]
            )));
        }
    }
    Ok(())
}

/// Log-log slope of the KS distances against `T`.
pub fn run_rate(config: &McConfig) -> Result<McReport> {
    check_geometric(&config.t_list)?;
    let mut report = run_clt(config)?;
    let beta = config.spec.beta();
    let lt: Vec<f64> = report.rows.iter().map(|r| r.t.ln()).collect();
    let fit = |sel: fn(&McRow) -> Option<f64>| -> (f64, f64) {
        let ys: Option<Vec<f64>> = report.rows.iter().map(|r| sel(r).map(f64::ln)).collect();
        ys.map_or((f64::NAN, f64::NAN), |ys| linear_fit(&lt, &ys))
    };
    let (slope_lse, r2_lse) = fit(|r| r.ks_lse);
    let (slope_sme, r2_sme) = fit(|r| r.ks_sme);
    report.fits = Some(Fits {
        slope_lse,
        slope_sme,
        r2_lse,
        r2_sme,
        noise_floor: 0.5 / (config.reps as f64).sqrt(),
        target_lse: -report.constants.gamma.unwrap_or(f64::NAN),
        target_sme: -(3.0 - 4.0 * beta) / 2.0,
    });
    Ok(report)
}

impl McReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Zero the wall-clock field so reports compare byte for byte.
    pub fn reproducible(mut self) -> Self {
        self.runtime_seconds = 0.0;
        self
    }
}
