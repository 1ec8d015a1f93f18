use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// `sup_z |F_N(z) - Phi(z)|`, checking both one-sided gaps at every order
/// statistic.
pub fn ks_distance(sample: &[f64]) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::Data("KS distance of an empty sample".into()));
    }
    if let Some(bad) = sample.iter().find(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite value {bad} in KS sample")));
    }
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let std = Normal::standard();
    let n = xs.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let p = std.cdf(x);
        d = d.max((i + 1) as f64 / n - p).max(p - i as f64 / n);
    }
    Ok(d)
}

/// Mean, unbiased variance and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    pub mean: f64,
    pub var: f64,
    pub se: f64,
}

pub fn moments(xs: &[f64]) -> Moments {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return Moments { mean: f64::NAN, var: f64::NAN, se: f64::NAN };
    }
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        f64::NAN
    };
    Moments { mean, var, se: (var / n).sqrt() }
}

/// Least squares line `y = a + b x`; returns `(b, r^2)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, r2)
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let (_, r2) = linear_fit(x, y);
    let mx = x.iter().sum::<f64>() / x.len() as f64;
    let my = y.iter().sum::<f64>() / y.len() as f64;
    let s: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    r2.sqrt().copysign(s)
}

/// SplitMix64 finalizer; derives independent sub-seeds from a root seed.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::ContinuousCDF;

    #[test]
    fn ks_examples() {
        let n = 1000;
        let std = Normal::standard();
        let q: Vec<f64> = (0..n).map(|i| std.inverse_cdf((i as f64 + 0.5) / n as f64)).collect();
        assert!(ks_distance(&q).unwrap() <= 0.5 / n as f64 + 1e-10);
        assert_eq!(ks_distance(&[0.0; 100]).unwrap(), 0.5);
        assert!(ks_distance(&[]).is_err());
        assert!(matches!(ks_distance(&[1.0, f64::NAN]), Err(Error::Data(_))));
    }

    #[test]
    fn ks_of_generator_sample() {
        let z = crate::simulate::normals(2024, 0, 5000);
        assert!(ks_distance(&z).unwrap() < 0.027);
    }

    #[test]
    fn ks_matches_brute_force_sup() {
        let xs = [-0.3, 1.2, 0.05, -2.0, 0.7];
        let std = Normal::standard();
        let mut sorted = xs.to_vec();
        sorted.sort_by(f64::total_cmp);
        // scan a dense z grid including just-left and just-right of jumps
        let mut d = 0.0f64;
        for &x in &sorted {
            for z in [x - 1e-12, x] {
                let f = sorted.iter().filter(|&&s| s <= z).count() as f64 / 5.0;
                d = d.max((f - std.cdf(z)).abs());
            }
        }
        assert!((ks_distance(&xs).unwrap() - d).abs() < 1e-9);
    }

    #[test]
    fn helpers() {
        let m = moments(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        assert!((m.var - 5.0 / 3.0).abs() < 1e-15);
        let (b, r2) = linear_fit(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]);
        assert!((b - 2.0).abs() < 1e-15 && (r2 - 1.0).abs() < 1e-15);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!((correlation(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        assert_ne!(mix_seed(1, 0), mix_seed(1, 1));
        assert_eq!(mix_seed(5, 9), mix_seed(5, 9));
    }
}
