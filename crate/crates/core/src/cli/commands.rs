use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use super::config::Layers;
use super::output::{emit, fmt_f64, path_rows, read_paths_csv, CsvDoc, PATH_HEADER};
use super::{Cli, Command, Format};
use crate::error::{Error, Result};
use crate::estimators::{Context, EstimateRecord};
use crate::hilbert::{increment_gram, norms_row, Grid, NormsRow};
use crate::kernels::{probe_points, KernelSpec};
use crate::montecarlo::{
    mix_seed, replicate, run_clt, run_consistency, run_rate, version, ConsistencyConfig, McConfig,
    McReport, Modes, DEFAULT_BUDGET,
};
use crate::simulate::{build_ou_path_tagged, sample_increments, scheme_warning, CholeskyFactor, OuChaos};

const DEFAULT_KERNEL: &str = "fbm:H=0.6";
const DEFAULT_T: f64 = 10.0;
const DEFAULT_NORMS_CELLS: usize = 1024;
const DEFAULT_MC_REPS: usize = 1000;
const DEFAULT_PATHS: usize = 20;

pub const RECORD_HEADER: [&str; 13] = [
    "rep", "seed", "T", "n", "theta_true", "theta_tilde", "theta_hat_oracle", "theta_hat_plugin",
    "theta_hat_chaos", "stat_lse", "stat_sme", "int_x2", "flags",
];

const NORMS_HEADER: [&str; 9] = [
    "T", "n", "b_T", "a", "norm_fT_sq_over_2thetasigma2T", "norm_hT_sq", "contraction_over_T",
    "alpha_T", "converged_flag",
];

/// How the horizon was given, kept so the echo reproduces it.
enum Horizons {
    Single(f64),
    List(Vec<f64>),
}

impl Horizons {
    fn values(&self) -> Vec<f64> {
        match self {
            Horizons::Single(t) => vec![*t],
            Horizons::List(v) => v.clone(),
        }
    }
}

/// Fully resolved settings shared by every subcommand.
struct Settings {
    command: &'static str,
    spec: KernelSpec,
    theta: f64,
    horizons: Horizons,
    n: Option<usize>,
    dt: Option<f64>,
    reps: Option<usize>,
    seed: u64,
    out: Option<PathBuf>,
    format: Option<Format>,
    threads: Option<usize>,
    budget: f64,
    /// Command-specific keys, already formatted for the echo.
    extra: Vec<(&'static str, String)>,
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl Settings {
    fn resolve(cli: &Cli, layers: &Layers) -> Result<Self> {
        let c = &cli.common;
        let kernel = layers.get::<String>("kernel", c.kernel.clone())?;
        let spec: KernelSpec = kernel.as_deref().unwrap_or(DEFAULT_KERNEL).parse()?;
        let theta = layers.get("theta", c.theta)?.unwrap_or(1.0);
        if !(theta.is_finite() && theta > 0.0) {
            return Err(Error::Config(format!("theta = {theta} must be > 0")));
        }
        // Flags and environment form one layer, the file another; T and
        // T-list may not both appear in the layer that decides.
        let horizons = match (c.t, &c.t_list) {
            (Some(_), Some(_)) => return Err(Error::Config("give either T or T-list, not both".into())),
            (Some(t), None) => Horizons::Single(t),
            (None, Some(l)) => Horizons::List(l.clone()),
            (None, None) => match (layers.get::<f64>("T", None)?, layers.get_list("T-list", None)?) {
                (Some(_), Some(_)) => {
                    return Err(Error::Config("config file sets both T and T-list".into()))
                }
                (Some(t), None) => Horizons::Single(t),
                (None, Some(l)) => Horizons::List(l),
                (None, None) => Horizons::Single(DEFAULT_T),
            },
        };
        let ts = horizons.values();
        if ts.is_empty() || ts.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::Config(format!("horizons must be positive, got {}", join(&ts))));
        }
        let n = layers.get("n", c.n)?;
        let dt = layers.get("dt", c.dt)?;
        if n == Some(0) {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if let Some(d) = dt {
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::Config(format!("dt = {d} must be > 0")));
            }
        }
        let reps = layers.get("reps", c.reps)?;
        if reps == Some(0) {
            return Err(Error::Config("reps must be at least 1".into()));
        }
        let format = match c.format {
            Some(f) => Some(f),
            None => match layers.file.get("format").map(String::as_str) {
                None => None,
                Some("csv") => Some(Format::Csv),
                Some("json") => Some(Format::Json),
                Some(other) => return Err(Error::Config(format!("format must be csv or json, got `{other}`"))),
            },
        };
        let threads = layers.get("threads", c.threads)?;
        if threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        let budget = layers.get("budget", c.budget)?.unwrap_or(DEFAULT_BUDGET);
        Ok(Settings {
            command: cli.command.name(),
            spec,
            theta,
            horizons,
            n,
            dt,
            reps,
            seed: layers.get("seed", c.seed)?.unwrap_or(1),
            out: layers.get::<PathBuf>("out", c.out.clone())?,
            format,
            threads,
            budget,
            extra: Vec::new(),
        })
    }

    fn dt(&self) -> f64 {
        self.dt.unwrap_or(0.02 / self.theta)
    }

    fn reps_or(&self, default: usize) -> usize {
        self.reps.unwrap_or(default)
    }

    /// Grid for one horizon: `n` cells when given, otherwise step `dt`.
    fn grid(&self, t: f64) -> Result<Grid> {
        match self.n {
            Some(n) => Grid::new(t, n),
            None => Grid::with_step(t, self.dt()),
        }
    }

    /// Grid step for Monte Carlo runs, which share one step across horizons.
    fn mc_dt(&self) -> Result<f64> {
        match (self.n, self.dt) {
            (Some(_), Some(_)) => Err(Error::Config("give either n or dt, not both".into())),
            (Some(n), None) => match &self.horizons {
                Horizons::Single(t) => Ok(t / n as f64),
                Horizons::List(_) => Err(Error::Config("with several horizons set dt rather than n".into())),
            },
            _ => Ok(self.dt()),
        }
    }

    /// The resolved configuration as `key = value` pairs. Output paths and
    /// the thread count are left out: neither changes the numbers.
    fn echo(&self, reps: Option<usize>, seed: bool) -> Vec<(String, String)> {
        let mut e: Vec<(String, String)> = vec![
            ("version".into(), version()),
            ("command".into(), self.command.into()),
            ("kernel".into(), self.spec.to_string()),
            ("theta".into(), self.theta.to_string()),
        ];
        match &self.horizons {
            Horizons::Single(t) => e.push(("T".into(), t.to_string())),
            Horizons::List(v) => e.push(("T-list".into(), join(v))),
        }
        if let Some(n) = self.n {
            e.push(("n".into(), n.to_string()));
        }
        if let Some(dt) = self.dt {
            e.push(("dt".into(), dt.to_string()));
        }
        if let Some(r) = reps {
            e.push(("reps".into(), r.to_string()));
        }
        if seed {
            e.push(("seed".into(), self.seed.to_string()));
        }
        if let Some(f) = self.format {
            e.push(("format".into(), if f == Format::Csv { "csv" } else { "json" }.into()));
        }
        for (k, v) in &self.extra {
            e.push(((*k).into(), v.clone()));
        }
        e
    }

    fn format_or(&self, default: Format) -> Format {
        self.format.unwrap_or(default)
    }
}

fn warn_scheme(theta: f64, grid: &Grid) {
    if let Some(w) = scheme_warning(theta, grid) {
        eprintln!("warning: {w}");
    }
}

/// `payload` as a JSON object with `version` and the echo added.
fn json_with_echo<T: Serialize>(payload: &T, echo: &[(String, String)]) -> Result<String> {
    let mut v = serde_json::to_value(payload)?;
    let obj = v
        .as_object_mut()
        .ok_or_else(|| Error::Data("report is not a JSON object".into()))?;
    let map: serde_json::Map<String, Value> =
        echo.iter().map(|(k, v)| (k.clone(), Value::String(v.clone()))).collect();
    obj.insert("version".into(), Value::String(version()));
    obj.insert("echo".into(), Value::Object(map));
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

fn record_fields(r: &EstimateRecord) -> Vec<String> {
    vec![
        r.rep.to_string(),
        r.seed.to_string(),
        fmt_f64(r.t),
        r.n.to_string(),
        fmt_f64(r.theta_true),
        fmt_f64(r.theta_tilde),
        fmt_f64(r.theta_hat_oracle),
        fmt_f64(r.theta_hat_plugin),
        fmt_f64(r.theta_hat_chaos),
        fmt_f64(r.stat_lse),
        fmt_f64(r.stat_sme),
        fmt_f64(r.int_x2),
        r.flags.label(),
    ]
}

fn records_csv<'a>(echo: &[(String, String)], records: impl IntoIterator<Item = &'a EstimateRecord>) -> String {
    let mut doc = CsvDoc::new(echo, &RECORD_HEADER);
    for r in records {
        doc.row(&record_fields(r));
    }
    doc.into_string()
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn dispatch(cli: &Cli) -> Result<i32> {
    let layers = Layers::new(cli.common.config.as_ref())?;
    let mut s = Settings::resolve(cli, &layers)?;
    match &cli.command {
        Command::Constants => constants(&s),
        Command::CheckHypothesis { probes, lo, hi } => {
            let probes = layers.get("probes", *probes)?.unwrap_or(50);
            let lo = layers.get("lo", *lo)?.unwrap_or(0.01);
            let hi = layers.get("hi", *hi)?.unwrap_or(10.0);
            if probes < 2 || !(lo > 0.0 && hi > lo && hi.is_finite()) {
                return Err(Error::Config(format!(
                    "probe grid needs probes >= 2 and 0 < lo < hi (got {probes}, {lo}, {hi})"
                )));
            }
            s.extra = vec![("probes", probes.to_string()), ("lo", lo.to_string()), ("hi", hi.to_string())];
            check_hypothesis(&s, probes, lo, hi)
        }
        Command::Simulate { long } => {
            let long = layers.flag("long", *long)?;
            if long {
                s.extra.push(("long", "true".into()));
            }
            simulate(&s, long)
        }
        Command::Estimate { input, no_plugin } => {
            let plugin = if *no_plugin { false } else { layers.get("plugin", None)?.unwrap_or(true) };
            s.extra.push(("plugin", plugin.to_string()));
            estimate(&s, input.as_deref(), plugin)
        }
        Command::HilbertNorms { contraction } => {
            let contraction = layers.flag("contraction", *contraction)?;
            s.extra.push(("contraction", contraction.to_string()));
            hilbert_norms(&s, contraction)
        }
        Command::McClt { records, plugin } | Command::McRate { records, plugin } => {
            let plugin = layers.flag("plugin", *plugin)?;
            s.extra.push(("plugin", plugin.to_string()));
            let rate = matches!(cli.command, Command::McRate { .. });
            monte_carlo(&s, records.as_deref(), plugin, rate, cli.common.reproducible)
        }
        Command::McConsistency { checkpoints, paths } => {
            let checkpoints = layers.get_list("checkpoints", checkpoints.clone())?;
            let paths = layers.get("paths", *paths)?.unwrap_or(DEFAULT_PATHS);
            let checkpoints = checkpoints.unwrap_or_else(|| s.horizons.values());
            s.extra = vec![("checkpoints", join(&checkpoints)), ("paths", paths.to_string())];
            consistency(&s, checkpoints, paths, cli.common.reproducible)
        }
    }
}

fn constants(s: &Settings) -> Result<i32> {
    let c = s.spec.constants(s.theta)?;
    let echo = s.echo(None, false);
    let text = match s.format_or(Format::Json) {
        Format::Json => json_with_echo(&c, &echo)?,
        Format::Csv => {
            let mut doc = CsvDoc::new(&echo, &["name", "value"]);
            let rows = [
                ("beta", Some(c.beta)),
                ("c_beta", Some(c.c_beta)),
                ("c_beta_prime", Some(c.c_beta_prime)),
                ("theta", Some(c.theta)),
                ("a", Some(c.a)),
                ("sigma_beta2", c.sigma_beta2),
                ("gamma", c.gamma),
            ];
            for (k, v) in rows {
                doc.row(&[k.to_string(), opt(v)]);
            }
            doc.row(&["gamma_boundary".into(), c.gamma_boundary.to_string()]);
            doc.into_string()
        }
    };
    emit(s.out.as_deref(), &text)?;
    Ok(0)
}

fn check_hypothesis(s: &Settings, probes: usize, lo: f64, hi: f64) -> Result<i32> {
    let report = s.spec.hypothesis_report(&probe_points(lo, hi, probes));
    let echo = s.echo(None, false);
    let text = match s.format_or(Format::Json) {
        Format::Json => json_with_echo(&report, &echo)?,
        Format::Csv => {
            let mut doc = CsvDoc::new(&echo, &["kernel", "beta", "c_beta", "c_beta_prime", "max_ratio", "evaluated", "pass"]);
            doc.row(&[
                report.kernel.clone(),
                fmt_f64(report.beta),
                fmt_f64(report.c_beta),
                fmt_f64(report.c_beta_prime),
                fmt_f64(report.max_ratio),
                report.evaluated.to_string(),
                report.pass.to_string(),
            ]);
            doc.into_string()
        }
    };
    emit(s.out.as_deref(), &text)?;
    if !report.pass {
        eprintln!(
            "hypothesis check failed: max ratio {} exceeds C' = {}",
            report.max_ratio, report.c_beta_prime
        );
    }
    Ok(if report.pass { 0 } else { 1 })
}

/// File for replication `rep`: `paths.csv` becomes `paths_rep3.csv`.
fn rep_path(out: &Path, rep: usize) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match out.extension() {
        Some(ext) => format!("{stem}_rep{rep}.{}", ext.to_string_lossy()),
        None => format!("{stem}_rep{rep}"),
    };
    out.with_file_name(name)
}

fn simulate(s: &Settings, long: bool) -> Result<i32> {
    let t = match &s.horizons {
        Horizons::Single(t) => *t,
        Horizons::List(v) if v.len() == 1 => v[0],
        Horizons::List(_) => return Err(Error::Config("simulate takes a single horizon T".into())),
    };
    if s.format == Some(Format::Json) {
        return Err(Error::Config("simulate writes CSV only".into()));
    }
    let reps = s.reps_or(1);
    if reps > 1 && !long && s.out.is_none() {
        return Err(Error::Config("several replications need --out (one file each) or --long".into()));
    }
    let grid = s.grid(t)?;
    warn_scheme(s.theta, &grid);
    let gm = increment_gram(&s.spec, &grid);
    let factor = CholeskyFactor::new(&gm)?;
    let seed = mix_seed(s.seed, 0);
    let echo = s.echo(Some(reps), true);
    let paths = (0..reps).map(|r| {
        build_ou_path_tagged(sample_increments(&factor, seed, r as u64), s.theta, &grid, seed, r as u64)
    });
    if long {
        let mut header = vec!["rep"];
        header.extend(PATH_HEADER);
        let mut doc = CsvDoc::new(&echo, &header);
        for p in paths {
            let p = p?;
            for mut row in path_rows(&p) {
                row.insert(0, p.rep_index.to_string());
                doc.row(&row);
            }
        }
        emit(s.out.as_deref(), &doc.into_string())?;
    } else {
        for p in paths {
            let p = p?;
            let mut doc = CsvDoc::new(&echo, &PATH_HEADER);
            for row in path_rows(&p) {
                doc.row(&row);
            }
            let target = match (&s.out, reps) {
                (Some(o), 1) => Some(o.clone()),
                (Some(o), _) => Some(rep_path(o, p.rep_index as usize)),
                (None, _) => None,
            };
            emit(target.as_deref(), &doc.into_string())?;
        }
    }
    Ok(0)
}

fn estimate(s: &Settings, input: Option<&Path>, plugin: bool) -> Result<i32> {
    let records: Vec<EstimateRecord> = match input {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Io(format!("cannot read {}: {e}", path.display())))?;
            let mut cache: BTreeMap<(u64, usize), _> = BTreeMap::new();
            let mut out = Vec::new();
            for (rep, t, dg) in read_paths_csv(&text)? {
                let key = (t.to_bits(), dg.len());
                if !cache.contains_key(&key) {
                    let grid = Grid::new(t, dg.len())?;
                    warn_scheme(s.theta, &grid);
                    let gm = increment_gram(&s.spec, &grid);
                    let ctx = Context::new(&gm, s.theta);
                    let chaos = OuChaos::new(&gm, s.theta);
                    cache.insert(key, (grid, gm, ctx, chaos));
                }
                let (grid, gm, ctx, chaos) = &cache[&key];
                let cv = chaos.eval(&dg);
                let path = build_ou_path_tagged(dg, s.theta, grid, s.seed, rep)?;
                out.push(ctx.record(&path, Some(&cv), plugin.then_some(gm))?);
            }
            out
        }
        None => {
            let reps = s.reps_or(1);
            let modes = Modes { chaos: true, plugin };
            let mut out = Vec::new();
            for (i, t) in s.horizons.values().into_iter().enumerate() {
                let grid = s.grid(t)?;
                warn_scheme(s.theta, &grid);
                let gm = increment_gram(&s.spec, &grid);
                let factor = CholeskyFactor::new(&gm)?;
                out.extend(replicate(&factor, &gm, s.theta, reps, mix_seed(s.seed, i as u64), modes)?);
            }
            out
        }
    };
    let echo = s.echo(input.is_none().then(|| s.reps_or(1)), true);
    let text = match s.format_or(Format::Csv) {
        Format::Csv => records_csv(&echo, &records),
        Format::Json => {
            #[derive(Serialize)]
            struct Records<'a> {
                records: &'a [EstimateRecord],
            }
            json_with_echo(&Records { records: &records }, &echo)?
        }
    };
    emit(s.out.as_deref(), &text)?;
    Ok(0)
}

fn hilbert_norms(s: &Settings, contraction: bool) -> Result<i32> {
    let rows: Vec<NormsRow> = s
        .horizons
        .values()
        .into_iter()
        .map(|t| {
            let n = match (s.n, s.dt) {
                (Some(n), _) => n,
                (None, Some(dt)) => ((t / dt).round() as usize).max(1),
                (None, None) => DEFAULT_NORMS_CELLS,
            };
            norms_row(&s.spec, s.theta, t, n, contraction)
        })
        .collect::<Result<_>>()?;
    for r in rows.iter().filter(|r| !r.converged) {
        eprintln!(
            "warning: T = {} not converged at n = {} (relative change {:.2e} under refinement)",
            r.t, r.n, r.max_rel_change
        );
    }
    let echo = s.echo(None, false);
    let text = match s.format_or(Format::Csv) {
        Format::Csv => {
            let mut doc = CsvDoc::new(&echo, &NORMS_HEADER);
            for r in &rows {
                doc.row(&[
                    fmt_f64(r.t),
                    r.n.to_string(),
                    fmt_f64(r.b_t),
                    fmt_f64(r.a),
                    fmt_f64(r.f_ratio),
                    fmt_f64(r.h_norm_sq),
                    opt(r.contraction_over_t),
                    fmt_f64(r.alpha_t),
                    u8::from(r.converged).to_string(),
                ]);
            }
            doc.into_string()
        }
        Format::Json => {
            #[derive(Serialize)]
            struct Rows<'a> {
                rows: &'a [NormsRow],
            }
            json_with_echo(&Rows { rows: &rows }, &echo)?
        }
    };
    emit(s.out.as_deref(), &text)?;
    Ok(0)
}

fn mc_csv(report: &McReport, echo: &[(String, String)]) -> String {
    let mut doc = CsvDoc::new(
        echo,
        &[
            "T", "n", "ks_lse", "ks_sme", "mean_lse", "var_lse", "mean_sme", "var_sme", "se", "se_sme",
            "mean_theta_hat", "mean_theta_tilde", "var_chaos_ratio", "dropped", "plugin_nonconverged",
        ],
    );
    for r in &report.rows {
        doc.row(&[
            fmt_f64(r.t),
            r.n.to_string(),
            opt(r.ks_lse),
            opt(r.ks_sme),
            fmt_f64(r.mean_lse),
            fmt_f64(r.var_lse),
            fmt_f64(r.mean_sme),
            fmt_f64(r.var_sme),
            fmt_f64(r.se),
            fmt_f64(r.se_sme),
            fmt_f64(r.mean_theta_hat),
            fmt_f64(r.mean_theta_tilde),
            fmt_f64(r.var_chaos_ratio),
            r.dropped.to_string(),
            r.plugin_nonconverged.to_string(),
        ]);
    }
    doc.into_string()
}

fn monte_carlo(s: &Settings, records: Option<&Path>, plugin: bool, rate: bool, reproducible: bool) -> Result<i32> {
    let reps = s.reps_or(DEFAULT_MC_REPS);
    let mut cfg = McConfig::new(s.spec.clone(), s.theta, s.horizons.values(), reps, s.seed);
    cfg.dt = s.mc_dt()?;
    cfg.modes = Modes { chaos: true, plugin };
    cfg.threads = s.threads;
    cfg.budget = s.budget;
    let (grid, _) = cfg.layout()?;
    warn_scheme(s.theta, &grid);
    let report = if rate { run_rate(&cfg)? } else { run_clt(&cfg)? };
    let report = if reproducible { report.reproducible() } else { report };
    let echo = s.echo(Some(reps), true);
    let text = match s.format_or(Format::Json) {
        Format::Json => json_with_echo(&report, &echo)?,
        Format::Csv => mc_csv(&report, &echo),
    };
    emit(s.out.as_deref(), &text)?;
    if let Some(path) = records {
        emit(Some(path), &records_csv(&echo, report.records.iter().flatten()))?;
    }
    Ok(0)
}

fn consistency(s: &Settings, checkpoints: Vec<f64>, paths: usize, reproducible: bool) -> Result<i32> {
    let cfg = ConsistencyConfig {
        spec: s.spec.clone(),
        theta: s.theta,
        checkpoints,
        dt: s.mc_dt()?,
        paths,
        seed: s.seed,
        threads: s.threads,
    };
    let report = run_consistency(&cfg)?;
    let report = if reproducible { report.reproducible() } else { report };
    let echo = s.echo(None, true);
    let text = match s.format_or(Format::Json) {
        Format::Json => json_with_echo(&report, &echo)?,
        Format::Csv => {
            let mut doc = CsvDoc::new(
                &echo,
                &["T", "n", "median_abs_err_tilde", "median_abs_err_hat", "median_abs_f_over_t"],
            );
            for r in &report.rows {
                doc.row(&[
                    fmt_f64(r.t),
                    r.n.to_string(),
                    fmt_f64(r.median_abs_err_tilde),
                    fmt_f64(r.median_abs_err_hat),
                    fmt_f64(r.median_abs_f_over_t),
                ]);
            }
            doc.into_string()
        }
    };
    emit(s.out.as_deref(), &text)?;
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rep_file_names() {
        assert_eq!(rep_path(Path::new("/tmp/p.csv"), 3), PathBuf::from("/tmp/p_rep3.csv"));
        assert_eq!(rep_path(Path::new("out"), 0), PathBuf::from("out_rep0"));
    }

    #[test]
    fn echo_carries_json_strings() {
        let echo = vec![("kernel".to_string(), "fbm:H=0.6".to_string())];
        let text = json_with_echo(&serde_json::json!({"a": 1}), &echo).unwrap();
        let v: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["echo"]["kernel"], "fbm:H=0.6");
        assert!(v["version"].as_str().unwrap().starts_with("ou-gauss"));
    }
}
