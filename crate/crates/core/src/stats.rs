//! Small Monte-Carlo and Poisson helpers shared by the verification suites.

use serde::Serialize;

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub samples: usize,
}

impl Estimate {
    /// Mean and `sd / sqrt(n)` of `values` (sequential summation, so the
    /// result does not depend on how the values were produced).
    pub fn from_samples(values: &[f64]) -> Estimate {
        let n = values.len();
        if n == 0 {
            return Estimate { mean: f64::NAN, se: f64::NAN, samples: 0 };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Estimate { mean, se: 0.0, samples: 1 };
        }
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        Estimate { mean, se: (var / n as f64).sqrt(), samples: n }
    }

    /// Binomial proportion `hits / n` with `sqrt(p(1-p)/n)`.
    pub fn proportion(hits: usize, n: usize) -> Estimate {
        let p = hits as f64 / n as f64;
        Estimate { mean: p, se: (p * (1.0 - p) / n as f64).sqrt(), samples: n }
    }

    /// `|mean − target| <= z·se`.
    pub fn within(&self, target: f64, z: f64) -> bool {
        (self.mean - target).abs() <= z * self.se
    }
}

/// `P(N = n)` for `N ~ Poisson(rate)`.
pub fn poisson_pmf(rate: f64, n: usize) -> f64 {
    if rate == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let log_fact: f64 = (1..=n).map(|i| (i as f64).ln()).sum();
    (n as f64 * rate.ln() - rate - log_fact).exp()
}

/// `P(N >= n)` for `N ~ Poisson(rate)`.
pub fn poisson_tail(rate: f64, n: usize) -> f64 {
    let below: f64 = (0..n).map(|i| poisson_pmf(rate, i)).sum();
    (1.0 - below).max(0.0)
}

/// Smallest `q` with `P(N <= q) >= p`.
pub fn poisson_quantile(rate: f64, p: f64) -> usize {
    let mut cdf = 0.0;
    let mut q = 0;
    loop {
        cdf += poisson_pmf(rate, q);
        if cdf >= p || q > 10_000 {
            return q;
        }
        q += 1;
    }
}
