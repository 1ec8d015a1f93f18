use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::{in_pool, median, version};
use crate::error::{Error, Result};
use crate::estimators::{energy_prefix, theta_hat_with_alpha, theta_tilde_from_energy};
use crate::hilbert::{b_t_prefix, increment_gram, state_variances, Grid};
use crate::kernels::KernelSpec;
use crate::simulate::{build_ou_path, sample_increments, CholeskyFactor, OuChaos};

#[derive(Debug, Clone)]
pub struct ConsistencyConfig {
    pub spec: KernelSpec,
    pub theta: f64,
    /// Increasing horizons along one trajectory.
    pub checkpoints: Vec<f64>,
    pub dt: f64,
    /// Number of independent trajectories.
    pub paths: usize,
    pub seed: u64,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyEcho {
    pub kernel: String,
    pub theta: f64,
    pub checkpoints: Vec<f64>,
    pub dt: f64,
    pub paths: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyRow {
    #[serde(rename = "T")]
    pub t: f64,
    pub n: usize,
    pub median_abs_err_tilde: f64,
    pub median_abs_err_hat: f64,
    /// Median of `|I2(f_T)| / T` over the trajectories.
    pub median_abs_f_over_t: f64,
    pub theta_tilde: Vec<f64>,
    pub theta_hat: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub version: String,
    pub config: ConsistencyEcho,
    pub rows: Vec<ConsistencyRow>,
    /// Median `|theta_tilde - theta|` strictly decreases across checkpoints.
    pub tilde_decreasing: bool,
    pub runtime_seconds: f64,
}

impl ConsistencyReport {
    pub fn reproducible(mut self) -> Self {
        self.runtime_seconds = 0.0;
        self
    }
}

/// One trajectory per path index on the longest horizon; every checkpoint
/// reads a prefix of the same increments.
pub fn run_consistency(config: &ConsistencyConfig) -> Result<ConsistencyReport> {
    let start = Instant::now();
    let theta = config.theta;
    if config.paths == 0 {
        return Err(Error::Config("at least one path is required".into()));
    }
    if config.checkpoints.is_empty() || config.checkpoints.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("checkpoints must be non-empty and increasing".into()));
    }
    let mut cells = Vec::new();
    for &t in &config.checkpoints {
        let m = (t / config.dt).round();
        if !(t > 0.0) || m < 1.0 || (m * config.dt - t).abs() > 1e-9 * t {
            return Err(Error::Config(format!("checkpoint {t} is not a positive multiple of dt = {}", config.dt)));
        }
        cells.push(m as usize);
    }
    let n_max = *cells.last().unwrap();
    let grid = Grid::new(n_max as f64 * config.dt, n_max)?;
    let rows = in_pool(config.threads, || -> Result<Vec<ConsistencyRow>> {
        let gm = increment_gram(&config.spec, &grid);
        let factor = CholeskyFactor::new(&gm)?;
        let var = state_variances(&gm, theta);
        let chaos: Vec<OuChaos> = cells
            .iter()
            .map(|&m| gm.leading_block(m).map(|b| OuChaos::new(&b, theta)))
            .collect::<Result<_>>()?;
        let per_path: Vec<Result<Vec<(f64, f64, f64)>>> = (0..config.paths as u64)
            .into_par_iter()
            .map(|j| {
                let path = build_ou_path(sample_increments(&factor, config.seed, j), theta, &grid)?;
                cells
                    .iter()
                    .zip(&chaos)
                    .map(|(&m, ch)| {
                        let t = grid.node(m);
                        let energy = energy_prefix(&path.x, m);
                        let alpha = 0.5 * var[m] + theta * t * b_t_prefix(&var, m);
                        let tilde = theta_tilde_from_energy(energy, &config.spec)?;
                        let hat = theta_hat_with_alpha(alpha, path.x[m], energy, t)?;
                        let f = ch.eval(&path.dg[..m]).i2_f / t;
                        Ok((tilde, hat, f))
                    })
                    .collect()
            })
            .collect();
        let per_path: Vec<Vec<(f64, f64, f64)>> = per_path.into_iter().collect::<Result<_>>()?;
        Ok(cells
            .iter()
            .enumerate()
            .map(|(c, &m)| {
                let tilde: Vec<f64> = per_path.iter().map(|p| p[c].0).collect();
                let hat: Vec<f64> = per_path.iter().map(|p| p[c].1).collect();
                let f: Vec<f64> = per_path.iter().map(|p| p[c].2.abs()).collect();
                let err = |v: &[f64]| median(&v.iter().map(|x| (x - theta).abs()).collect::<Vec<_>>());
                ConsistencyRow {
                    t: config.checkpoints[c],
                    n: m,
                    median_abs_err_tilde: err(&tilde),
                    median_abs_err_hat: err(&hat),
                    median_abs_f_over_t: median(&f),
                    theta_tilde: tilde,
                    theta_hat: hat,
                }
            })
            .collect())
    })??;
    let tilde_decreasing = rows
        .windows(2)
        .all(|w| w[1].median_abs_err_tilde < w[0].median_abs_err_tilde);
    Ok(ConsistencyReport {
        version: version(),
        config: ConsistencyEcho {
            kernel: config.spec.to_string(),
            theta,
            checkpoints: config.checkpoints.clone(),
            dt: config.dt,
            paths: config.paths,
            seed: config.seed,
        },
        rows,
        tilde_decreasing,
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{theta_hat, theta_tilde, Mode};

    fn cfg(checkpoints: Vec<f64>) -> ConsistencyConfig {
        ConsistencyConfig {
            spec: KernelSpec::subfbm(0.6).unwrap(),
            theta: 1.0,
            checkpoints,
            dt: 0.05,
            paths: 3,
            seed: 17,
            threads: Some(2),
        }
    }

    #[test]
    fn checkpoints_read_prefixes() {
        let rep = run_consistency(&cfg(vec![1.0, 2.0, 4.0])).unwrap();
        assert_eq!(rep.rows.len(), 3);
        // Recompute the first checkpoint from a standalone path on [0, 1].
        let c = cfg(vec![4.0]);
        let grid = Grid::new(4.0, 80).unwrap();
        let gm = increment_gram(&c.spec, &grid);
        let f = CholeskyFactor::new(&gm).unwrap();
        let full = sample_increments(&f, 17, 1);
        let small = Grid::new(1.0, 20).unwrap();
        let sgm = gm.leading_block(20).unwrap();
        let p = build_ou_path(full[..20].to_vec(), 1.0, &small).unwrap();
        let tilde = theta_tilde(&p.x, &small, &c.spec).unwrap();
        let hat = theta_hat(&p, &sgm, Mode::Oracle(1.0)).unwrap();
        assert!((rep.rows[0].theta_tilde[1] - tilde).abs() < 1e-12);
        assert!((rep.rows[0].theta_hat[1] - hat).abs() < 1e-9);
    }

    #[test]
    fn degenerate_inputs() {
        let one = run_consistency(&cfg(vec![2.0])).unwrap();
        assert_eq!(one.rows.len(), 1);
        assert!(one.tilde_decreasing);
        assert!(run_consistency(&cfg(vec![2.0, 1.0])).is_err());
        assert!(run_consistency(&cfg(vec![])).is_err());
    }
}
