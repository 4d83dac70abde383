//! Small statistics toolkit: normal CDF, sample moments, Wilson intervals,
//! least-squares fits with AIC, and bootstrap standard errors.

use crate::rng::CounterRng;

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Total variation distance between two normals with equal variance:
/// `2 Phi(|mu1 - mu2| / (2 sigma)) - 1`.
pub fn gaussian_tv_equal_var(delta_mean: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return if delta_mean == 0.0 { 0.0 } else { 1.0 };
    }
    2.0 * normal_cdf(delta_mean.abs() / (2.0 * sigma)) - 1.0
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn standard_error(xs: &[f64]) -> f64 {
    (sample_variance(xs) / xs.len() as f64).sqrt()
}

/// Wilson score interval for a binomial proportion at `z` standard normal
/// quantiles (z = 1.96 for 95%).
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Ordinary least squares `y ~ a + b x`; returns `(slope, intercept,
/// slope_std_error, rss)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64, f64) {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y.iter()).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x
        .iter()
        .zip(y.iter())
        .map(|(a, b)| {
            let e = b - (intercept + slope * a);
            e * e
        })
        .sum();
    let dof = (n - 2.0).max(1.0);
    let slope_se = (rss / dof / sxx).sqrt();
    (slope, intercept, slope_se, rss)
}

/// AIC for a least-squares fit with `k` parameters.
pub fn aic_from_rss(rss: f64, n: usize, k: usize) -> f64 {
    let n = n as f64;
    n * (rss / n).max(1e-300).ln() + 2.0 * k as f64
}

/// Bootstrap standard error of a statistic of a sample.
pub fn bootstrap_se<F: Fn(&[f64]) -> f64>(
    xs: &[f64],
    stat: &F,
    replicates: usize,
    rng: &mut CounterRng,
) -> f64 {
    let n = xs.len();
    let mut vals = Vec::with_capacity(replicates);
    let mut buf = vec![0.0; n];
    for _ in 0..replicates {
        for slot in buf.iter_mut() {
            let pick = (rng.next_u64().expect("rng") % n as u64) as usize;
            *slot = xs[pick];
        }
        vals.push(stat(&buf));
    }
    sample_variance(&vals).sqrt()
}
