//! Small statistics toolbox shared by the Monte Carlo estimators.

use rand::Rng;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

/// Standard error of the sample mean.
pub fn std_error(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

/// Unbiased third cumulant (k-statistic k3).
pub fn third_cumulant(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if n < 3.0 {
        return 0.0;
    }
    let m = mean(xs);
    let m3 = xs.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n;
    n * n * m3 / ((n - 1.0) * (n - 2.0))
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn of_mean(xs: &[f64]) -> Self {
        Estimate {
            value: mean(xs),
            stderr: std_error(xs),
        }
    }

    /// Number of standard errors separating the estimate from `target`.
    pub fn z_score(&self, target: f64) -> f64 {
        if self.stderr > 0.0 {
            (self.value - target) / self.stderr
        } else if self.value == target {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// Straight-line least-squares fit `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub r_squared: f64,
}

/// Weighted least squares; `weights` are inverse variances (all ones for OLS).
pub fn weighted_line_fit(xs: &[f64], ys: &[f64], weights: &[f64]) -> LineFit {
    assert_eq!(xs.len(), ys.len());
    assert_eq!(xs.len(), weights.len());
    let n = xs.len();
    assert!(n >= 2, "line fit needs at least two points");
    let sw: f64 = weights.iter().sum();
    let xm = xs.iter().zip(weights).map(|(x, w)| x * w).sum::<f64>() / sw;
    let ym = ys.iter().zip(weights).map(|(y, w)| y * w).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for i in 0..n {
        let dx = xs[i] - xm;
        let dy = ys[i] - ym;
        sxx += weights[i] * dx * dx;
        sxy += weights[i] * dx * dy;
        syy += weights[i] * dy * dy;
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let rss: f64 = (0..n)
        .map(|i| weights[i] * (ys[i] - intercept - slope * xs[i]).powi(2))
        .sum();
    let dof = (n as f64 - 2.0).max(1.0);
    let slope_stderr = (rss / dof / sxx).sqrt();
    let r_squared = if syy > 0.0 { 1.0 - rss / syy } else { 1.0 };
    LineFit {
        slope,
        intercept,
        slope_stderr,
        r_squared,
    }
}

pub fn line_fit(xs: &[f64], ys: &[f64]) -> LineFit {
    weighted_line_fit(xs, ys, &vec![1.0; xs.len()])
}

/// Bootstrap standard deviation of `stat` over resamples of the `n` items.
pub fn bootstrap_stderr<R: Rng, F: FnMut(&[usize]) -> f64>(
    n: usize,
    resamples: usize,
    rng: &mut R,
    mut stat: F,
) -> f64 {
    let mut idx = vec![0usize; n];
    let values: Vec<f64> = (0..resamples)
        .map(|_| {
            for i in idx.iter_mut() {
                *i = rng.gen_range(0..n);
            }
            stat(&idx)
        })
        .filter(|v| v.is_finite())
        .collect();
    variance(&values).sqrt()
}

/// One-sample Kolmogorov–Smirnov statistic against a continuous CDF.
pub fn ks_statistic<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic p-value of the Kolmogorov distribution for statistic `d` and
/// sample size `n` (with the usual small-sample correction).
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let term = 2.0 * (-1f64).powi(k - 1) * (-2.0 * (k as f64 * lambda).powi(2)).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}
