//! Settings resolution: command line, then `OU_GAUSS_*` environment
//! variables, then a `key = value` config file, then defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Keys accepted in a config file. `version` and `command` appear in the
/// echo written into every output and are ignored on input.
pub const KEYS: &[&str] = &[
    "kernel", "theta", "T", "T-list", "n", "dt", "reps", "seed", "out", "format", "threads",
    "budget", "paths", "checkpoints", "probes", "lo", "hi", "contraction", "plugin", "long",
    "version", "command",
];

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("config line {}: expected `key = value`", no + 1)))?;
        let k = k.trim();
        if !KEYS.contains(&k) {
            return Err(Error::Config(format!("config line {}: unknown key `{k}`", no + 1)));
        }
        map.insert(k.to_string(), v.trim().to_string());
    }
    Ok(map)
}

/// Reads a config file. Outputs of the tool are accepted too: a CSV whose
/// leading `# key = value` comment lines are its echo, or a JSON report with
/// an `echo` object.
pub fn load_config(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    if text.trim_start().starts_with('{') {
        let v: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
        let echo = v
            .get("echo")
            .and_then(|e| e.as_object())
            .ok_or_else(|| Error::Config(format!("config {}: JSON without an echo object", path.display())))?;
        let mut lines = String::new();
        for (k, val) in echo {
            let val = val.as_str().map(str::to_string).unwrap_or_else(|| val.to_string());
            lines.push_str(&format!("{k} = {val}\n"));
        }
        return parse_config(&lines);
    }
    // A CSV's first data line is its header, which has no `=`.
    let is_csv = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .is_some_and(|l| !l.contains('='));
    let stripped: String = if is_csv {
        text.lines()
            .take_while(|l| l.starts_with('#'))
            .map(|l| format!("{}\n", l.trim_start_matches('#').trim()))
            .collect()
    } else {
        text
    };
    parse_config(&stripped)
}

pub fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>()
        .map_err(|e| Error::Config(format!("bad value `{v}` for {key}: {e}")))
}

pub fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|s| parse_value(key, s.trim())).collect()
}

/// Layered lookup for one key.
pub struct Layers {
    pub file: BTreeMap<String, String>,
}

impl Layers {
    pub fn new(config: Option<&PathBuf>) -> Result<Self> {
        let file = match config {
            Some(p) => load_config(p)?,
            None => BTreeMap::new(),
        };
        Ok(Layers { file })
    }

    /// `cli` already carries the environment layer (clap reads `env`).
    pub fn get<T: std::str::FromStr>(&self, key: &str, cli: Option<T>) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match cli {
            Some(v) => Ok(Some(v)),
            None => self.file.get(key).map(|v| parse_value(key, v)).transpose(),
        }
    }

    /// A switch is on when given on the command line or set true in the file.
    pub fn flag(&self, key: &str, cli: bool) -> Result<bool> {
        if cli {
            return Ok(true);
        }
        Ok(self.get::<bool>(key, None)?.unwrap_or(false))
    }

    pub fn get_list(&self, key: &str, cli: Option<Vec<f64>>) -> Result<Option<Vec<f64>>> {
        match cli {
            Some(v) => Ok(Some(v)),
            None => self.file.get(key).map(|v| parse_list(key, v)).transpose(),
        }
    }
}
