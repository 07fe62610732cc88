//! Small numerical helpers shared by the samplers, criteria and oracles.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use statrs::function::gamma::ln_gamma;

/// `log(sum(exp(xs)))`, stable for large magnitudes. Returns `-inf` for an
/// empty slice or when every entry is `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let s: f64 = xs.iter().map(|x| (x - max).exp()).sum();
    max + s.ln()
}

/// `log(mean(exp(xs)))`.
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    log_sum_exp(xs) - (xs.len() as f64).ln()
}

pub fn ln_factorial(n: u64) -> f64 {
    if n < 2 {
        0.0
    } else {
        ln_gamma(n as f64 + 1.0)
    }
}

/// Poisson log-pmf `log P(Y = y)` for `Y ~ Poisson(rate)`.
pub fn poisson_ln_pmf(y: u64, rate: f64) -> f64 {
    if rate == 0.0 {
        return if y == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    y as f64 * rate.ln() - rate - ln_factorial(y)
}

/// Draws from `Poisson(rate)`, accepting `rate == 0`.
pub fn sample_poisson<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    Poisson::new(rate).expect("finite positive Poisson rate").sample(rng) as u64
}

/// Draws from `Gamma(shape, rate)` (rate parameterization).
pub fn sample_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> f64 {
    Gamma::new(shape, 1.0 / rate)
        .expect("positive gamma parameters")
        .sample(rng)
}

/// Samples an index proportionally to `exp(log_weights)`.
pub fn sample_log_categorical<R: Rng + ?Sized>(rng: &mut R, log_weights: &[f64]) -> usize {
    let max = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = log_weights.iter().map(|w| (w - max).exp()).sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in log_weights.iter().enumerate() {
        u -= (w - max).exp();
        if u <= 0.0 {
            return i;
        }
    }
    // rounding can leave a sliver of mass past the last positive weight
    log_weights
        .iter()
        .rposition(|w| *w > f64::NEG_INFINITY)
        .unwrap_or(0)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (denominator `n - 1`); zero for fewer than two values.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}
