//! Small statistical helpers: log-log rate fits, Kolmogorov–Smirnov tests
//! and cluster-adjusted sample sizes.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Confidence level of [`rate_fit`] intervals.
pub const FIT_CONFIDENCE: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub std_err: f64,
    pub ci: (f64, f64),
}

impl RateFit {
    pub fn covers(&self, slope: f64) -> bool {
        self.ci.0 <= slope && slope <= self.ci.1
    }
}

/// Least-squares fit of `log e = intercept + slope · log n` with a Student-t
/// interval on the slope.
pub fn rate_fit(ns: &[f64], errors: &[f64]) -> Result<RateFit> {
    if ns.len() != errors.len() {
        return Err(Error::DimensionMismatch {
            expected: ns.len(),
            found: errors.len(),
        });
    }
    if ns.len() < 3 {
        return Err(Error::DegenerateFit(format!(
            "need at least 3 points, got {}",
            ns.len()
        )));
    }
    if let Some(e) = errors.iter().find(|&&e| !(e > 0.0 && e.is_finite())) {
        return Err(Error::DegenerateFit(format!("errors must be positive, got {e}")));
    }
    if ns.iter().any(|&n| !(n > 0.0 && n.is_finite())) {
        return Err(Error::DegenerateFit("abscissae must be positive".into()));
    }
    let x: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
    let y: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let m = x.len() as f64;
    let xbar = x.iter().sum::<f64>() / m;
    let ybar = y.iter().sum::<f64>() / m;
    let sxx: f64 = x.iter().map(|v| (v - xbar).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::DegenerateFit("all abscissae coincide".into()));
    }
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - xbar) * (b - ybar)).sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let rss: f64 = x.iter().zip(&y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let df = m - 2.0;
    let std_err = (rss / df / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::DegenerateFit(e.to_string()))?
        .inverse_cdf(0.5 + FIT_CONFIDENCE / 2.0);
    Ok(RateFit {
        slope,
        intercept,
        std_err,
        ci: (slope - t * std_err, slope + t * std_err),
    })
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, var.sqrt())
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a − F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic Kolmogorov tail `P(D > d)` for effective size `n_eff`, with
/// the usual small-sample correction of the argument.
pub fn ks_pvalue(d: f64, n_eff: f64) -> f64 {
    let s = n_eff.sqrt();
    let lambda = (s + 0.12 + 0.11 / s) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub n_eff: f64,
    pub p_value: f64,
}

/// KS test where the samples have effective sizes `ea`, `eb` (which differ
/// from their lengths when observations are clustered).
pub fn ks_test(a: &[f64], b: &[f64], ea: f64, eb: f64) -> KsResult {
    let statistic = ks_statistic(a, b);
    let n_eff = ea * eb / (ea + eb);
    KsResult {
        statistic,
        n_eff,
        p_value: ks_pvalue(statistic, n_eff),
    }
}

/// Effective size of `groups` equal clusters: `n / (1 + (m − 1) ρ)` with the
/// one-way ANOVA intraclass correlation `ρ` (clamped to `[0, 1]`).
pub fn clustered_effective_size(groups: &[Vec<f64>]) -> f64 {
    let k = groups.len();
    let m = groups.first().map_or(0, Vec::len);
    let n = (k * m) as f64;
    if k < 2 || m < 2 {
        return n;
    }
    let means: Vec<f64> = groups.iter().map(|g| g.iter().sum::<f64>() / m as f64).collect();
    let grand = means.iter().sum::<f64>() / k as f64;
    let msb = m as f64 * means.iter().map(|g| (g - grand).powi(2)).sum::<f64>() / (k - 1) as f64;
    let msw = groups
        .iter()
        .zip(&means)
        .map(|(g, mu)| g.iter().map(|x| (x - mu).powi(2)).sum::<f64>())
        .sum::<f64>()
        / (n - k as f64);
    let denom = msb + (m as f64 - 1.0) * msw;
    let icc = if denom > 0.0 {
        ((msb - msw) / denom).clamp(0.0, 1.0)
    } else {
        1.0
    };
    n / (1.0 + (m as f64 - 1.0) * icc)
}

/// Distance of the empirical CDF of `sample` from the ε-band around an
/// atomic law: `max(sup F_emp(x) − F(x+ε), sup F((x−ε)⁻) − F_emp(x))`.
pub fn levy_band_statistic(sample: &[f64], atoms: &[(f64, f64)], eps: f64) -> f64 {
    let cdf = |x: f64| atoms.iter().filter(|(a, _)| *a <= x).map(|(_, w)| w).sum::<f64>();
    let cdf_left = |x: f64| atoms.iter().filter(|(a, _)| *a < x).map(|(_, w)| w).sum::<f64>();
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in s.iter().enumerate() {
        d = d.max((i + 1) as f64 / m - cdf(x + eps));
        d = d.max(cdf_left(x - eps) - i as f64 / m);
    }
    // beyond the largest sample point F_emp = 1
    d.max(cdf_left(f64::INFINITY) - 1.0)
}

/// Dvoretzky–Kiefer–Wolfowitz radius at level `alpha` for `m` samples.
pub fn dkw_radius(m: usize, alpha: f64) -> f64 {
    ((2.0 / alpha).ln() / (2.0 * m as f64)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::replicate_rng;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn exact_power_laws() {
        let ns = [100.0, 1000.0, 10000.0];
        let half: Vec<f64> = ns.iter().map(|n: &f64| 3.0 / n.sqrt()).collect();
        assert_abs_diff_eq!(rate_fit(&ns, &half).unwrap().slope, -0.5, epsilon = 1e-12);
        let one: Vec<f64> = ns.iter().map(|n| 0.7 / n).collect();
        let fit = rate_fit(&ns, &one).unwrap();
        assert_abs_diff_eq!(fit.slope, -1.0, epsilon = 1e-12);
        assert!(fit.std_err < 1e-10);
    }

    #[test]
    fn degenerate_fits() {
        assert!(matches!(
            rate_fit(&[1.0, 2.0, 3.0], &[1.0, 0.0, 1.0]),
            Err(Error::DegenerateFit(_))
        ));
        assert!(matches!(
            rate_fit(&[1.0, 2.0], &[1.0, 1.0]),
            Err(Error::DegenerateFit(_))
        ));
    }

    #[test]
    fn noisy_clt_fits_cover_half() {
        // mean of M |Z|/√N errors, as in an ensemble sup-error estimate
        let ns = [100.0, 1000.0, 10000.0];
        let mut covered = 0;
        for seed in 0..50 {
            let mut rng = replicate_rng(seed, 0);
            let errs: Vec<f64> = ns
                .iter()
                .map(|n| {
                    let s: f64 = (0..200)
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            z.abs()
                        })
                        .sum();
                    s / 200.0 / f64::sqrt(*n)
                })
                .collect();
            if rate_fit(&ns, &errs).unwrap().covers(-0.5) {
                covered += 1;
            }
        }
        assert!(covered >= 45, "covered {covered}/50");
    }

    #[test]
    fn ks_statistic_examples() {
        assert_eq!(ks_statistic(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 0.0);
        assert_eq!(ks_statistic(&[0.0, 0.0], &[1.0, 1.0]), 1.0);
        assert_abs_diff_eq!(ks_statistic(&[1.0, 2.0, 3.0, 4.0], &[3.5, 4.5]), 0.75, epsilon = 1e-15);
    }

    #[test]
    fn ks_pvalue_reference_points() {
        // Kolmogorov distribution: P(K > 1.3581) ≈ 0.05, P(K > 1.6276) ≈ 0.01
        assert_abs_diff_eq!(ks_pvalue(1.3581 / 1e4, 1e8), 0.05, epsilon = 1e-3);
        assert_abs_diff_eq!(ks_pvalue(1.6276 / 1e4, 1e8), 0.01, epsilon = 1e-3);
        assert_eq!(ks_pvalue(0.0, 100.0), 1.0);
    }

    #[test]
    fn ks_test_is_calibrated_under_the_null() {
        let mut rejections = 0;
        for seed in 0..200 {
            let mut rng = replicate_rng(seed, 1);
            let a: Vec<f64> = (0..300).map(|_| rng.random::<f64>()).collect();
            let b: Vec<f64> = (0..500).map(|_| rng.random::<f64>()).collect();
            if ks_test(&a, &b, 300.0, 500.0).p_value < 0.05 {
                rejections += 1;
            }
        }
        assert!(rejections <= 20, "{rejections}/200 rejections");
    }

    #[test]
    fn effective_size_limits() {
        let iid: Vec<Vec<f64>> = (0..50)
            .map(|g| (0..20).map(|i| ((g * 20 + i) as f64 * 0.618).fract()).collect())
            .collect();
        let n_eff = clustered_effective_size(&iid);
        assert!(n_eff > 600.0, "{n_eff}");
        let clustered: Vec<Vec<f64>> = (0..50).map(|g| vec![g as f64; 20]).collect();
        assert_abs_diff_eq!(clustered_effective_size(&clustered), 50.0, epsilon = 1e-9);
    }

    #[test]
    fn levy_band_of_atoms() {
        let atoms = [(0.25, 0.5), (0.75, 0.5)];
        let exact = vec![0.25, 0.25, 0.75, 0.75];
        assert_eq!(levy_band_statistic(&exact, &atoms, 0.0), 0.0);
        let blurred = vec![0.24, 0.26, 0.74, 0.76];
        assert!(levy_band_statistic(&blurred, &atoms, 0.0) > 0.2);
        assert_eq!(levy_band_statistic(&blurred, &atoms, 0.02), 0.0);
        let lopsided = vec![0.25, 0.25, 0.25, 0.75];
        assert_abs_diff_eq!(levy_band_statistic(&lopsided, &atoms, 0.02), 0.25, epsilon = 1e-15);
    }
}
