//! Small estimators used by the fitting pipeline.

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

/// Median of a non-empty slice (mean of the middle pair for even lengths).
pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// Linear-interpolated sample quantile, `q` in [0, 1].
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    assert!(!xs.is_empty(), "quantile of an empty sample");
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Sample mean and standard deviation (n - 1 denominator; 0 for one value).
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

/// Least-squares line `y = a + b x`, with the residual standard deviation
/// on n - 2 degrees of freedom. A constant `x` gives `b = 0`.
pub fn linear_fit(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let a = my - b * mx;
    let dof = if sxx > 0.0 { n - 2.0 } else { n - 1.0 };
    let rss: f64 = points.iter().map(|p| (p.1 - a - b * p.0).powi(2)).sum();
    let sd = if dof > 0.0 { (rss / dof).sqrt() } else { 0.0 };
    (a, b, sd)
}

/// Two-regressor least squares without intercept: `y ~ c1 x1 + c2 x2`.
/// `None` when the design is singular.
pub fn ols2(rows: &[(f64, f64, f64)]) -> Option<(f64, f64)> {
    let (mut s11, mut s12, mut s22, mut s1y, mut s2y) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(x1, x2, y) in rows {
        s11 += x1 * x1;
        s12 += x1 * x2;
        s22 += x2 * x2;
        s1y += x1 * y;
        s2y += x2 * y;
    }
    let det = s11 * s22 - s12 * s12;
    if !(det.abs() > 1e-12 * (s11 * s22).max(1e-300)) {
        return None;
    }
    Some(((s22 * s1y - s12 * s2y) / det, (s11 * s2y - s12 * s1y) / det))
}

/// Maximum-likelihood `(mu, sigma)` of a Gaussian seen through censoring:
/// `exact` holds observed values, `below` holds upper bounds of values known
/// only to lie under them. A Gaussian clamped from below at zero is the case
/// where every clamped draw contributes a bound of 0. Expectation
/// maximisation; `None` without any observations.
pub fn censored_normal_fit(exact: &[f64], below: &[f64]) -> Option<(f64, f64)> {
    let n = (exact.len() + below.len()) as f64;
    if n == 0.0 {
        return None;
    }
    if exact.len() < 2 {
        return Some((0.0, 0.0));
    }
    let (m0, s0) = mean_sd(exact);
    if below.is_empty() {
        return Some((m0, s0));
    }
    let std = Normal::standard();
    let sum: f64 = exact.iter().sum();
    let (mut mu, mut sigma) = (m0, s0.max(1e-6));
    for _ in 0..10_000 {
        // conditional first and second moments of each bounded value
        let (mut e1_sum, mut e2_sum) = (0.0, 0.0);
        for &c in below {
            let a = (c - mu) / sigma;
            let cdf = std.cdf(a);
            // inverse Mills ratio, with its asymptote deep in the lower tail
            let lambda = if cdf > 1e-300 { std.pdf(a) / cdf } else { -a };
            let e1 = mu - sigma * lambda;
            let var = sigma * sigma * (1.0 - a * lambda - lambda * lambda);
            e1_sum += e1;
            e2_sum += var.max(0.0) + e1 * e1;
        }
        let mu_next = (sum + e1_sum) / n;
        let ss: f64 = exact.iter().map(|x| (x - mu_next).powi(2)).sum::<f64>() + e2_sum - 2.0 * mu_next * e1_sum
            + below.len() as f64 * mu_next * mu_next;
        let sigma_next = (ss / n).sqrt().max(1e-9);
        let done = (mu_next - mu).abs() < 1e-10 && (sigma_next - sigma).abs() < 1e-10;
        mu = mu_next;
        sigma = sigma_next;
        if done {
            break;
        }
    }
    Some((mu, sigma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastic::RngStream;

    #[test]
    fn quantiles() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(quantile(&[0.0, 10.0], 0.75), 7.5);
    }

    #[test]
    fn line_through_exact_points() {
        let pts: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 3.0 + 0.5 * i as f64)).collect();
        let (a, b, sd) = linear_fit(&pts);
        assert!((a - 3.0).abs() < 1e-12 && (b - 0.5).abs() < 1e-12 && sd < 1e-9);
    }

    #[test]
    fn ols2_exact() {
        let rows: Vec<(f64, f64, f64)> = (0..20)
            .map(|i| {
                let (x1, x2) = ((i as f64).ln_1p(), i as f64 * 0.3 - 2.0);
                (x1, x2, 0.4 * x1 - 1.5 * x2)
            })
            .collect();
        let (c1, c2) = ols2(&rows).unwrap();
        assert!((c1 - 0.4).abs() < 1e-10 && (c2 + 1.5).abs() < 1e-10);
        assert!(ols2(&[(1.0, 2.0, 0.0), (2.0, 4.0, 1.0)]).is_none());
    }

    #[test]
    fn censored_fit_recovers_clamped_gaussian() {
        let mut rng = RngStream::new(11);
        let (mu, sigma) = (0.8, 1.6);
        let draws: Vec<f64> = (0..200_000).map(|_| (mu + sigma * rng.standard_normal()).max(0.0)).collect();
        let pos: Vec<f64> = draws.iter().copied().filter(|&x| x > 0.0).collect();
        let zeros = vec![0.0; draws.len() - pos.len()];
        let (m, s) = censored_normal_fit(&pos, &zeros).unwrap();
        assert!((m - mu).abs() < 0.02, "{m}");
        assert!((s - sigma).abs() < 0.02, "{s}");
    }
}
