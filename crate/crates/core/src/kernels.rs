//! Covariance models satisfying the singular-plus-remainder decomposition
//!
//! ```text
//! d^2 R / dt ds = C_beta |t - s|^(2 beta - 2) + Psi(t, s),   |Psi(t, s)| <= C'_beta (t s)^(beta - 1)
//! ```
//!
//! for fractional, sub-fractional, bi-fractional and generalized
//! sub-fractional Brownian motion, plus weighted sums of independent copies.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};

/// Process family and its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Variant {
    Fbm { h: f64 },
    SubFbm { h: f64 },
    BiFbm { h: f64, k: f64 },
    GenSubFbm { h: f64, k: f64 },
    /// `G = sum_i w_i G_i` with independent components.
    Mixture(Vec<(f64, KernelSpec)>),
}

/// A covariance model together with its decomposition constants.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    variant: Variant,
    beta: f64,
    c_beta: f64,
    c_beta_prime: f64,
}

fn check_open(name: &str, x: f64, lo: f64, hi: f64) -> Result<()> {
    if x.is_finite() && x > lo && x < hi {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} = {x} must lie in ({lo}, {hi})")))
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.5 && beta < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "beta = {beta} is unsupported: beta must lie in (1/2, 1)"
        )))
    }
}

impl KernelSpec {
    /// Fractional Brownian motion, `R = (t^2H + s^2H - |t-s|^2H) / 2`.
    pub fn fbm(h: f64) -> Result<Self> {
        check_open("H", h, 0.0, 1.0)?;
        check_beta(h)?;
        Ok(KernelSpec {
            variant: Variant::Fbm { h },
            beta: h,
            c_beta: h * (2.0 * h - 1.0),
            c_beta_prime: 0.0,
        })
    }

    /// Standard Brownian motion (fBm with `H = 1/2`).
    ///
    /// Sits outside the `beta > 1/2` regime: the singular part degenerates to
    /// a Dirac mass, so only covariance evaluation, Gram matrices and
    /// sampling are meaningful. Used as a sanity case for the sampler.
    pub fn brownian() -> Self {
        KernelSpec {
            variant: Variant::Fbm { h: 0.5 },
            beta: 0.5,
            c_beta: 0.0,
            c_beta_prime: 0.0,
        }
    }

    /// Sub-fractional Brownian motion,
    /// `R = t^2H + s^2H - ((t+s)^2H + |t-s|^2H) / 2`.
    pub fn subfbm(h: f64) -> Result<Self> {
        check_open("H", h, 0.0, 1.0)?;
        check_beta(h)?;
        let c = h * (2.0 * h - 1.0);
        Ok(KernelSpec {
            variant: Variant::SubFbm { h },
            beta: h,
            c_beta: c,
            c_beta_prime: c,
        })
    }

    /// Bi-fractional Brownian motion,
    /// `R = 2^-K ((t^2H + s^2H)^K - |t-s|^2HK)`.
    pub fn bifbm(h: f64, k: f64) -> Result<Self> {
        check_open("H", h, 0.0, 1.0)?;
        if !(k > 0.0 && k <= 1.0) {
            return Err(Error::Domain(format!("K = {k} must lie in (0, 1]")));
        }
        let beta = h * k;
        check_beta(beta)?;
        Ok(KernelSpec {
            variant: Variant::BiFbm { h, k },
            beta,
            c_beta: 2f64.powf(1.0 - k) * beta * (2.0 * beta - 1.0),
            c_beta_prime: k * (2.0 - k) * h * h,
        })
    }

    /// Generalized sub-fractional Brownian motion,
    /// `R = (t^2H + s^2H)^K - ((t+s)^2HK + |t-s|^2HK) / 2`.
    ///
    /// Accepts `K` in `(0, 2)` with `HK` in `(1/2, 1)`; the remainder bound
    /// `C'_beta = 2^K H^2 K |K-1| + HK(2HK-1) 2^(2HK-2)` is valid on that
    /// whole range.
    pub fn gensubfbm(h: f64, k: f64) -> Result<Self> {
        check_open("H", h, 0.0, 1.0)?;
        check_open("K", k, 0.0, 2.0)?;
        let beta = h * k;
        check_beta(beta)?;
        let c_beta = beta * (2.0 * beta - 1.0);
        Ok(KernelSpec {
            variant: Variant::GenSubFbm { h, k },
            beta,
            c_beta,
            c_beta_prime: 2f64.powf(k) * h * h * k * (k - 1.0).abs()
                + c_beta * 2f64.powf(2.0 * beta - 2.0),
        })
    }

    /// Weighted sum `sum_i w_i G_i` of independent processes.
    ///
    /// `beta` is the smallest component exponent. Components sharing it add
    /// `w_i^2 C_beta_i` to the singular constant; every other component is
    /// folded into the remainder. Such a remainder still carries a
    /// `|t-s|^(2 beta_i - 2)` singularity, so no finite `C'_beta` exists and
    /// it is reported as infinite.
    pub fn mixture(components: Vec<(f64, KernelSpec)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Domain("mixture needs at least one component".into()));
        }
        for (w, _) in &components {
            if !(w.is_finite() && *w > 0.0) {
                return Err(Error::Domain(format!("mixture weight {w} must be > 0")));
            }
        }
        let beta = components
            .iter()
            .map(|(_, c)| c.beta)
            .fold(f64::INFINITY, f64::min);
        check_beta(beta)?;
        let mut c_beta = 0.0;
        let mut c_prime = 0.0;
        let mut all_minimal = true;
        for (w, c) in &components {
            let w2 = w * w;
            if c.beta == beta {
                c_beta += w2 * c.c_beta;
                c_prime += w2 * c.c_beta_prime;
            } else {
                all_minimal = false;
            }
        }
        Ok(KernelSpec {
            variant: Variant::Mixture(components),
            beta,
            c_beta,
            c_beta_prime: if all_minimal { c_prime } else { f64::INFINITY },
        })
    }

    pub fn variant(&self) -> &Variant {
        &self.variant
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn c_beta(&self) -> f64 {
        self.c_beta
    }

    pub fn c_beta_prime(&self) -> f64 {
        self.c_beta_prime
    }

    /// Covariance `R(t, s) = E[G_t G_s]`.
    pub fn cov(&self, t: f64, s: f64) -> Result<f64> {
        if !(t >= 0.0 && s >= 0.0) || !t.is_finite() || !s.is_finite() {
            return Err(Error::Domain(format!(
                "covariance needs finite t, s >= 0 (got t = {t}, s = {s})"
            )));
        }
        if t == 0.0 || s == 0.0 {
            return Ok(0.0);
        }
        Ok(self.cov_unchecked(t, s))
    }

    pub(crate) fn cov_unchecked(&self, t: f64, s: f64) -> f64 {
        match &self.variant {
            Variant::Fbm { h } => {
                let p = 2.0 * h;
                0.5 * (t.powf(p) + s.powf(p) - (t - s).abs().powf(p))
            }
            Variant::SubFbm { h } => {
                let p = 2.0 * h;
                t.powf(p) + s.powf(p) - 0.5 * ((t + s).powf(p) + (t - s).abs().powf(p))
            }
            Variant::BiFbm { h, k } => {
                let p = 2.0 * h;
                2f64.powf(-k)
                    * ((t.powf(p) + s.powf(p)).powf(*k) - (t - s).abs().powf(p * k))
            }
            Variant::GenSubFbm { h, k } => {
                let p = 2.0 * h;
                let q = p * k;
                (t.powf(p) + s.powf(p)).powf(*k) - 0.5 * ((t + s).powf(q) + (t - s).abs().powf(q))
            }
            Variant::Mixture(parts) => parts
                .iter()
                .map(|(w, c)| w * w * c.cov_unchecked(t, s))
                .sum(),
        }
    }

    /// `E[(G_b - G_a)(G_d - G_c)]`, evaluated term by term so that separable
    /// pieces such as `t^2H` cancel exactly and the `|t-s|` pieces only see
    /// node differences.
    pub fn double_increment(&self, a: f64, b: f64, c: f64, d: f64) -> f64 {
        match &self.variant {
            Variant::Fbm { h } => -0.5 * di_abs(2.0 * h, a, b, c, d),
            Variant::SubFbm { h } => {
                let p = 2.0 * h;
                -0.5 * (di_sum(p, a, b, c, d) + di_abs(p, a, b, c, d))
            }
            Variant::BiFbm { h, k } => {
                let p = 2.0 * h;
                2f64.powf(-k) * (di_power_sum(p, *k, a, b, c, d) - di_abs(p * k, a, b, c, d))
            }
            Variant::GenSubFbm { h, k } => {
                let p = 2.0 * h;
                let q = p * k;
                di_power_sum(p, *k, a, b, c, d)
                    - 0.5 * (di_sum(q, a, b, c, d) + di_abs(q, a, b, c, d))
            }
            Variant::Mixture(parts) => parts
                .iter()
                .map(|(w, s)| w * w * s.double_increment(a, b, c, d))
                .sum(),
        }
    }

    /// `d^2 R / dt ds` off the diagonal.
    pub fn mixed_partial(&self, t: f64, s: f64) -> Result<f64> {
        check_positive(t, s)?;
        if t == s {
            return Err(Error::Singularity(t));
        }
        Ok(self.c_beta * (t - s).abs().powf(2.0 * self.beta - 2.0) + self.psi_unchecked(t, s))
    }

    /// Remainder `Psi = d^2 R / dt ds - C_beta |t-s|^(2 beta - 2)`.
    ///
    /// Finite on the diagonal for every single-family kernel; mixtures whose
    /// components have different exponents keep a singular remainder and
    /// reject `t == s`.
    pub fn psi(&self, t: f64, s: f64) -> Result<f64> {
        check_positive(t, s)?;
        if t == s && self.c_beta_prime.is_infinite() {
            return Err(Error::Singularity(t));
        }
        Ok(self.psi_unchecked(t, s))
    }

    fn psi_unchecked(&self, t: f64, s: f64) -> f64 {
        match &self.variant {
            Variant::Fbm { .. } => 0.0,
            Variant::SubFbm { h } => -h * (2.0 * h - 1.0) * (t + s).powf(2.0 * h - 2.0),
            Variant::BiFbm { h, k } => 2f64.powf(-k) * power_sum_cross(*h, *k, t, s),
            Variant::GenSubFbm { h, k } => {
                let q = 2.0 * h * k;
                power_sum_cross(*h, *k, t, s) - 0.5 * q * (q - 1.0) * (t + s).powf(q - 2.0)
            }
            Variant::Mixture(parts) => parts
                .iter()
                .map(|(w, c)| {
                    let mut v = c.psi_unchecked(t, s);
                    if c.beta != self.beta {
                        v += c.c_beta * (t - s).abs().powf(2.0 * c.beta - 2.0);
                    }
                    w * w * v
                })
                .sum(),
        }
    }

    /// Sweeps `|Psi(t, s)| (t s)^(1 - beta)` over all off-diagonal pairs of
    /// probe coordinates and compares the maximum with `C'_beta`.
    pub fn hypothesis_report(&self, probes: &[f64]) -> HypothesisReport {
        let mut max_ratio = 0.0f64;
        let mut argmax = None;
        let mut evaluated = 0usize;
        for &t in probes {
            for &s in probes {
                if t == s || t <= 0.0 || s <= 0.0 {
                    continue;
                }
                evaluated += 1;
                let r = self.psi_unchecked(t, s).abs() * (t * s).powf(1.0 - self.beta);
                if argmax.is_none() || !(r <= max_ratio) {
                    max_ratio = r;
                    argmax = Some((t, s));
                }
            }
        }
        let pass = self.c_beta_prime.is_finite()
            && max_ratio.is_finite()
            && max_ratio <= self.c_beta_prime * (1.0 + 1e-9);
        HypothesisReport {
            kernel: self.to_string(),
            beta: self.beta,
            c_beta: self.c_beta,
            c_beta_prime: self.c_beta_prime,
            max_ratio,
            argmax,
            evaluated,
            pass,
        }
    }

    /// Limit constants for drift `theta`.
    pub fn constants(&self, theta: f64) -> Result<ConstantsBundle> {
        if !(theta.is_finite() && theta > 0.0) {
            return Err(Error::Domain(format!("theta = {theta} must be > 0")));
        }
        let beta = self.beta;
        let a = self.c_beta * gamma(2.0 * beta - 1.0) * theta.powf(-2.0 * beta);
        let (sigma_beta2, rate) = if beta > 0.5 && beta < 0.75 {
            (Some(sigma_beta2(beta)), Some(BerryEsseenRate::for_beta(beta)))
        } else {
            (None, None)
        };
        Ok(ConstantsBundle {
            beta,
            c_beta: self.c_beta,
            c_beta_prime: self.c_beta_prime,
            theta,
            a,
            sigma_beta2,
            gamma: rate.map(|r| r.exponent),
            gamma_boundary: rate.map(|r| r.boundary).unwrap_or(false),
        })
    }
}

/// `sigma_beta^2 = (4 beta - 1)(1 + G(3-4b) G(4b-1) / (G(2b) G(2-2b)))`.
pub fn sigma_beta2(beta: f64) -> f64 {
    (4.0 * beta - 1.0)
        * (1.0
            + gamma(3.0 - 4.0 * beta) * gamma(4.0 * beta - 1.0)
                / (gamma(2.0 * beta) * gamma(2.0 - 2.0 * beta)))
}

/// Kolmogorov-distance decay exponent of the studentized least squares
/// statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BerryEsseenRate {
    pub exponent: f64,
    /// `beta == 5/8`, where the exact exponent is "any value below 1/2".
    pub boundary: bool,
}

impl BerryEsseenRate {
    pub fn for_beta(beta: f64) -> Self {
        if beta < 0.625 {
            BerryEsseenRate { exponent: 0.5, boundary: false }
        } else if beta == 0.625 {
            BerryEsseenRate { exponent: 0.5, boundary: true }
        } else {
            BerryEsseenRate { exponent: 3.0 - 4.0 * beta, boundary: false }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstantsBundle {
    pub beta: f64,
    pub c_beta: f64,
    pub c_beta_prime: f64,
    pub theta: f64,
    /// Ergodic limit of `(1/T) int X^2 dt`, `C_beta Gamma(2 beta - 1) theta^(-2 beta)`.
    pub a: f64,
    pub sigma_beta2: Option<f64>,
    pub gamma: Option<f64>,
    pub gamma_boundary: bool,
}

impl ConstantsBundle {
    pub fn sigma_beta2(&self) -> Result<f64> {
        self.sigma_beta2.ok_or(Error::UnsupportedRegime {
            beta: self.beta,
            requirement: "beta in (1/2, 3/4)",
        })
    }

    pub fn gamma(&self) -> Result<f64> {
        self.gamma.ok_or(Error::UnsupportedRegime {
            beta: self.beta,
            requirement: "beta in (1/2, 3/4)",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisReport {
    pub kernel: String,
    pub beta: f64,
    pub c_beta: f64,
    pub c_beta_prime: f64,
    /// `max |Psi(t,s)| (ts)^(1-beta)` over the probes.
    pub max_ratio: f64,
    pub argmax: Option<(f64, f64)>,
    pub evaluated: usize,
    pub pass: bool,
}

/// `n` equispaced probe coordinates on `[lo, hi]`.
pub fn probe_points(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

fn check_positive(t: f64, s: f64) -> Result<()> {
    if t > 0.0 && s > 0.0 && t.is_finite() && s.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "mixed partial needs t, s > 0 (got t = {t}, s = {s})"
        )))
    }
}

/// `d^2/dt ds (t^2H + s^2H)^K = 4 H^2 K (K-1) (t^2H + s^2H)^(K-2) (ts)^(2H-1)`.
fn power_sum_cross(h: f64, k: f64, t: f64, s: f64) -> f64 {
    let p = 2.0 * h;
    4.0 * h * h * k * (k - 1.0) * (t.powf(p) + s.powf(p)).powf(k - 2.0) * (t * s).powf(p - 1.0)
}

/// Double increment of `|t - s|^p` over `[a,b] x [c,d]`.
fn di_abs(p: f64, a: f64, b: f64, c: f64, d: f64) -> f64 {
    let f = |x: f64| x.abs().powf(p);
    f(b - d) - f(b - c) - f(a - d) + f(a - c)
}

/// Double increment of `(t + s)^p`.
fn di_sum(p: f64, a: f64, b: f64, c: f64, d: f64) -> f64 {
    let f = |x: f64| x.powf(p);
    f(b + d) - f(b + c) - f(a + d) + f(a + c)
}

/// Double increment of `(t^p + s^p)^k`.
fn di_power_sum(p: f64, k: f64, a: f64, b: f64, c: f64, d: f64) -> f64 {
    let f = |x: f64, y: f64| (x.powf(p) + y.powf(p)).powf(k);
    f(b, d) - f(b, c) - f(a, d) + f(a, c)
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.variant {
            Variant::Fbm { h } => write!(f, "fbm:H={h}"),
            Variant::SubFbm { h } => write!(f, "subfbm:H={h}"),
            Variant::BiFbm { h, k } => write!(f, "bifbm:H={h},K={k}"),
            Variant::GenSubFbm { h, k } => write!(f, "gensubfbm:H={h},K={k}"),
            Variant::Mixture(parts) => {
                write!(f, "mix:[")?;
                for (i, (w, c)) in parts.iter().enumerate() {
                    if i > 0 {
                        write!(f, ";")?;
                    }
                    write!(f, "{w}*{c}")?;
                }
                write!(f, "]")
            }
        }
    }
}

const GRAMMAR: &str = "expected fbm:H=<h> | subfbm:H=<h> | bifbm:H=<h>,K=<k> | \
                       gensubfbm:H=<h>,K=<k> | mix:[<w>*<kernel>;<w>*<kernel>;...]";

fn grammar_error(input: &str, why: &str) -> Error {
    Error::Config(format!("malformed kernel '{input}': {why}; {GRAMMAR}"))
}

impl FromStr for KernelSpec {
    type Err = Error;

    fn from_str(input: &str) -> Result<Self> {
        let s = input.trim();
        let (family, rest) = s
            .split_once(':')
            .ok_or_else(|| grammar_error(input, "missing ':'"))?;
        if family == "mix" {
            let body = rest
                .strip_prefix('[')
                .and_then(|r| r.strip_suffix(']'))
                .ok_or_else(|| grammar_error(input, "mixture body must be [...]"))?;
            let mut parts = Vec::new();
            for item in split_top_level(body) {
                let (w, k) = item
                    .split_once('*')
                    .ok_or_else(|| grammar_error(input, "mixture item must be <w>*<kernel>"))?;
                let w: f64 = w
                    .trim()
                    .parse()
                    .map_err(|_| grammar_error(input, "bad mixture weight"))?;
                parts.push((w, k.parse::<KernelSpec>()?));
            }
            return KernelSpec::mixture(parts);
        }
        let mut h = None;
        let mut k = None;
        for kv in rest.split(',') {
            let (key, val) = kv
                .split_once('=')
                .ok_or_else(|| grammar_error(input, "parameters must be KEY=VALUE"))?;
            let v: f64 = val
                .trim()
                .parse()
                .map_err(|_| grammar_error(input, "parameter value is not a number"))?;
            match key.trim() {
                "H" | "h" => h = Some(v),
                "K" | "k" => k = Some(v),
                other => return Err(grammar_error(input, &format!("unknown parameter '{other}'"))),
            }
        }
        let need_h = || h.ok_or_else(|| grammar_error(input, "missing H"));
        let need_k = || k.ok_or_else(|| grammar_error(input, "missing K"));
        match family {
            "fbm" => KernelSpec::fbm(need_h()?),
            "subfbm" => KernelSpec::subfbm(need_h()?),
            "bifbm" => KernelSpec::bifbm(need_h()?, need_k()?),
            "gensubfbm" => KernelSpec::gensubfbm(need_h()?, need_k()?),
            other => Err(grammar_error(input, &format!("unknown family '{other}'"))),
        }
    }
}

fn split_top_level(body: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, ch) in body.char_indices() {
        match ch {
            '[' => depth += 1,
            ']' => depth -= 1,
            ';' if depth == 0 => {
                out.push(&body[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(&body[start..]);
    out
}
