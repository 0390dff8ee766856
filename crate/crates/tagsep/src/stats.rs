//! Estimator summaries and the hypothesis tests used by the experiment
//! verdicts: chi-square goodness of fit, one- and two-sample
//! Kolmogorov-Smirnov, and z-scores against analytic targets.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Sample mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    assert!(n >= 1.0, "mean_se needs at least one sample");
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Unbiased sample variance.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    assert!(xs.len() >= 2, "variance needs at least two samples");
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
}

/// z-score of an estimate against a target value.
pub fn z_score(estimate: f64, se: f64, target: f64) -> f64 {
    (estimate - target) / se
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().cdf(x)
}

/// Chi-square goodness-of-fit against fully specified cell probabilities.
///
/// Returns `(statistic, dof, p_value)` with `dof = cells - 1`.
pub fn chi_square_gof(observed: &[f64], probs: &[f64]) -> (f64, usize, f64) {
    assert_eq!(observed.len(), probs.len());
    assert!(observed.len() >= 2);
    let total: f64 = observed.iter().sum();
    let mut stat = 0.0;
    for (&o, &p) in observed.iter().zip(probs) {
        let e = total * p;
        if e > 0.0 {
            stat += (o - e) * (o - e) / e;
        } else {
            assert!(o == 0.0, "observed mass in a zero-probability cell");
        }
    }
    let dof = observed.len() - 1;
    let p_value = chi_square_sf(stat, dof);
    (stat, dof, p_value)
}

/// Survival function of the chi-square distribution with `dof` degrees.
pub fn chi_square_sf(stat: f64, dof: usize) -> f64 {
    if stat <= 0.0 {
        return 1.0;
    }
    let dist = ChiSquared::new(dof as f64).unwrap();
    1.0 - dist.cdf(stat)
}

/// Kolmogorov distribution tail `Q(lambda) = 2 sum (-1)^{k-1} exp(-2 k^2 lambda^2)`.
fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64) * (k as f64) * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample KS test against the standard normal.
///
/// Returns `(d_statistic, p_value)` using the Stephens small-sample
/// adjustment of the asymptotic Kolmogorov tail.
pub fn ks_test_standard_normal(xs: &[f64]) -> (f64, f64) {
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let cdf = normal_cdf(x);
        let lo = i as f64 / n;
        let hi = (i as f64 + 1.0) / n;
        d = d.max((cdf - lo).abs()).max((hi - cdf).abs());
    }
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    (d, kolmogorov_tail(lambda))
}

/// Two-sample KS test. Ties are handled by stepping both empirical CDFs
/// through the pooled order before comparing.
pub fn ks_test_two_sample(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let mut a = xs.to_vec();
    let mut b = ys.to_vec();
    a.sort_by(|u, v| u.partial_cmp(v).unwrap());
    b.sort_by(|u, v| u.partial_cmp(v).unwrap());
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n1 - j as f64 / n2).abs());
    }
    let ne = n1 * n2 / (n1 + n2);
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    (d, kolmogorov_tail(lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::RngStream;
    use approx::assert_relative_eq;

    #[test]
    fn mean_se_basics() {
        let (m, se) = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_relative_eq!(m, 2.5);
        // Sample variance 5/3, SE = sqrt(5/3/4).
        assert_relative_eq!(se, (5.0 / 3.0f64 / 4.0).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn chi_square_known_quantiles() {
        // P(chi2_1 > 3.841) ~ 0.05, P(chi2_3 > 11.345) ~ 0.01.
        assert!((chi_square_sf(3.841, 1) - 0.05).abs() < 1e-3);
        assert!((chi_square_sf(11.345, 3) - 0.01).abs() < 1e-3);
    }

    #[test]
    fn chi_square_uniform_counts_pass() {
        let (_, dof, p) = chi_square_gof(&[250.0, 249.0, 251.0, 250.0], &[0.25; 4]);
        assert_eq!(dof, 3);
        assert!(p > 0.9);
    }

    #[test]
    fn ks_normal_accepts_normal_sample() {
        let mut rng = RngStream::new(3, 0);
        // Box-Muller from the stream keeps this test deterministic.
        let xs: Vec<f64> = (0..4000)
            .map(|_| {
                let u1: f64 = rng.uniform().max(1e-12);
                let u2: f64 = rng.uniform();
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect();
        let (_, p) = ks_test_standard_normal(&xs);
        assert!(p > 1e-3, "p = {p}");
    }

    #[test]
    fn ks_normal_rejects_shifted_sample() {
        let mut rng = RngStream::new(4, 0);
        let xs: Vec<f64> = (0..4000)
            .map(|_| {
                let u1: f64 = rng.uniform().max(1e-12);
                let u2: f64 = rng.uniform();
                1.0 + (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect();
        let (_, p) = ks_test_standard_normal(&xs);
        assert!(p < 1e-6, "p = {p}");
    }

    #[test]
    fn ks_two_sample_same_law_passes() {
        let mut rng = RngStream::new(5, 0);
        let xs: Vec<f64> = (0..3000).map(|_| rng.uniform()).collect();
        let ys: Vec<f64> = (0..3000).map(|_| rng.uniform()).collect();
        let (_, p) = ks_test_two_sample(&xs, &ys);
        assert!(p > 1e-3, "p = {p}");
        let zs: Vec<f64> = (0..3000).map(|_| rng.uniform() + 0.2).collect();
        let (_, p) = ks_test_two_sample(&xs, &zs);
        assert!(p < 1e-6, "p = {p}");
    }

    #[test]
    fn kolmogorov_tail_reference_value() {
        // Q(1.0) = 0.26999967... (classical table value).
        assert!((kolmogorov_tail(1.0) - 0.27).abs() < 1e-3);
    }
}
