//! Brute-force and quadrature reference computations for small instances.
//! These are deliberately simple and share as little code with the samplers
//! as possible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::loglinear::{DesignMatrix, ModelSpec};
use crate::math::{ln_factorial, log_sum_exp, sample_poisson};
use crate::table::ContingencyTable;

pub const MAX_ENUMERATION_CELLS: usize = 9;

/// Bell numbers `B_0..=B_n` from `B_{k+1} = sum_s C(k, s) B_s`.
pub fn bell_numbers(n: usize) -> Vec<u64> {
    let mut bell = vec![1u64];
    for k in 0..n {
        let mut binom = 1u64;
        let mut next = 0u64;
        for s in 0..=k {
            next += binom * bell[s];
            binom = binom * (k - s) as u64 / (s + 1) as u64;
        }
        bell.push(next);
    }
    bell
}

/// All set partitions of `k` items as restricted growth strings: item `i`
/// carries label `<= 1 + max(labels before i)`, the first item label 0.
pub fn enumerate_partitions(k: usize) -> Result<Vec<Vec<usize>>> {
    if k == 0 || k > MAX_ENUMERATION_CELLS {
        return Err(Error::invalid(format!(
            "partition enumeration supports 1..={MAX_ENUMERATION_CELLS} items, got {k}"
        )));
    }
    let mut out = Vec::new();
    let mut labels = vec![0usize; k];
    fn rec(i: usize, max: usize, labels: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i == labels.len() {
            out.push(labels.clone());
            return;
        }
        for l in 0..=max + 1 {
            labels[i] = l;
            rec(i + 1, max.max(l), labels, out);
        }
    }
    if k == 1 {
        return Ok(vec![vec![0]]);
    }
    rec(1, 0, &mut labels, &mut out);
    Ok(out)
}

fn block_sizes(partition: &[usize]) -> Vec<usize> {
    let c = partition.iter().max().map_or(0, |m| m + 1);
    let mut n = vec![0; c];
    for &l in partition {
        n[l] += 1;
    }
    n
}

/// `log[Gamma(m) m^c prod_j Gamma(n_j) / Gamma(m + K)]`.
pub fn ewens_log_weight(partition: &[usize], m: f64) -> f64 {
    let sizes = block_sizes(partition);
    let k = partition.len() as f64;
    let mut w = ln_gamma(m) + sizes.len() as f64 * m.ln() - ln_gamma(m + k);
    for n in sizes {
        w += ln_gamma(n as f64);
    }
    w
}

pub fn ewens_weight(partition: &[usize], m: f64) -> f64 {
    ewens_log_weight(partition, m).exp()
}

#[derive(Debug, Clone)]
pub struct PartitionEnumeration {
    pub partitions: Vec<Vec<usize>>,
    pub log_ewens: Vec<f64>,
    /// Log of the product of per-cluster marginal likelihoods.
    pub log_marginal: Vec<f64>,
    /// Log of the total marginal likelihood.
    pub log_total: f64,
}

impl PartitionEnumeration {
    /// Posterior probability of each partition.
    pub fn posterior(&self) -> Vec<f64> {
        self.log_ewens
            .iter()
            .zip(&self.log_marginal)
            .map(|(e, l)| (e + l - self.log_total).exp())
            .collect()
    }
}

/// Closed-form log marginal of one cluster under a Gamma(a, b) base:
/// counts `f_k`, exposures `x_k = pi exp(w_k' beta)`.
fn cluster_log_marginal(f: &[u64], x: &[f64], members: &[usize], a: f64, b: f64) -> f64 {
    let mut sf = 0.0;
    let mut sx = 0.0;
    let mut t = 0.0;
    for &k in members {
        sf += f[k] as f64;
        sx += x[k];
        t += f[k] as f64 * x[k].ln() - ln_factorial(f[k]);
    }
    t + a * b.ln() - ln_gamma(a) + ln_gamma(a + sf) - (a + sf) * (b + sx).ln()
}

/// Exact DP marginal likelihood of the sample counts under a Gamma base,
/// summed over every partition of the active cells.
pub fn exact_marginal_likelihood(
    table: &ContingencyTable,
    spec: &ModelSpec,
    beta: &[f64],
    m: f64,
    a: f64,
    b: f64,
) -> Result<PartitionEnumeration> {
    if !(m > 0.0 && a > 0.0 && b > 0.0) {
        return Err(Error::invalid("m, a and b must be positive"));
    }
    let design = DesignMatrix::new(spec, table)?;
    let k = design.num_rows();
    let partitions = enumerate_partitions(k)?;
    let eta = design.linear_predictor(beta);
    let pi = table.sampling_fraction();
    let x: Vec<f64> = eta.iter().map(|e| pi * e.exp()).collect();
    let f: Vec<u64> = design
        .cells()
        .iter()
        .map(|&c| table.sample_counts()[c])
        .collect();
    let mut log_ewens = Vec::with_capacity(partitions.len());
    let mut log_marginal = Vec::with_capacity(partitions.len());
    let mut members: Vec<Vec<usize>> = Vec::new();
    for p in &partitions {
        log_ewens.push(ewens_log_weight(p, m));
        let c = p.iter().max().unwrap() + 1;
        members.clear();
        members.resize(c, Vec::new());
        for (i, &l) in p.iter().enumerate() {
            members[l].push(i);
        }
        log_marginal.push(members.iter().map(|mem| cluster_log_marginal(&f, &x, mem, a, b)).sum());
    }
    let terms: Vec<f64> = log_ewens.iter().zip(&log_marginal).map(|(e, l)| e + l).collect();
    let log_total = log_sum_exp(&terms);
    if !log_total.is_finite() {
        return Err(Error::numeric("exact marginal likelihood is not finite"));
    }
    Ok(PartitionEnumeration {
        partitions,
        log_ewens,
        log_marginal,
        log_total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureGrid {
    pub lower: f64,
    pub upper: f64,
    /// Number of grid points, at least 3.
    pub points: usize,
}

#[derive(Debug, Clone)]
pub struct QuadraturePosterior {
    pub grid: Vec<f64>,
    /// Normalized density on the grid.
    pub density: Vec<f64>,
    /// Cumulative distribution on the grid (trapezoid rule).
    pub cdf: Vec<f64>,
    pub mean: f64,
    pub variance: f64,
}

impl QuadraturePosterior {
    /// CDF at `x` by linear interpolation.
    pub fn cdf_at(&self, x: f64) -> f64 {
        if x <= self.grid[0] {
            return 0.0;
        }
        let n = self.grid.len();
        if x >= self.grid[n - 1] {
            return 1.0;
        }
        let h = self.grid[1] - self.grid[0];
        let i = (((x - self.grid[0]) / h) as usize).min(n - 2);
        let t = (x - self.grid[i]) / h;
        self.cdf[i] + t * (self.cdf[i + 1] - self.cdf[i])
    }

    /// Kolmogorov-Smirnov distance between samples and this posterior.
    pub fn ks_distance(&self, samples: &[f64]) -> f64 {
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len() as f64;
        let mut d: f64 = 0.0;
        for (i, &x) in s.iter().enumerate() {
            let f = self.cdf_at(x);
            d = d.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs());
        }
        d
    }
}

/// Normalizes `exp(log_lik(x) + log_prior(x))` on a uniform grid with the
/// trapezoid rule.
pub fn quadrature_posterior_1d(
    log_lik: impl Fn(f64) -> f64,
    log_prior: impl Fn(f64) -> f64,
    grid: QuadratureGrid,
) -> Result<QuadraturePosterior> {
    if grid.points < 3 || !(grid.upper > grid.lower) {
        return Err(Error::invalid("quadrature grid needs >= 3 points and upper > lower"));
    }
    let n = grid.points;
    let h = (grid.upper - grid.lower) / (n - 1) as f64;
    let xs: Vec<f64> = (0..n).map(|i| grid.lower + h * i as f64).collect();
    let mut logd = Vec::with_capacity(n);
    for &x in &xs {
        let v = log_lik(x) + log_prior(x);
        if v.is_nan() || v == f64::INFINITY {
            return Err(Error::numeric(format!("integrand is {v} at {x}")));
        }
        logd.push(v);
    }
    let max = logd.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::numeric("integrand vanishes on the whole grid"));
    }
    let un: Vec<f64> = logd.iter().map(|v| (v - max).exp()).collect();
    let trap = |g: &dyn Fn(usize) -> f64| -> f64 {
        let mut s = 0.5 * (g(0) + g(n - 1));
        for i in 1..n - 1 {
            s += g(i);
        }
        s * h
    };
    let z = trap(&|i| un[i]);
    let density: Vec<f64> = un.iter().map(|u| u / z).collect();
    let mean = trap(&|i| xs[i] * density[i]);
    let variance = trap(&|i| (xs[i] - mean).powi(2) * density[i]);
    let mut cdf = vec![0.0; n];
    for i in 1..n {
        cdf[i] = cdf[i - 1] + 0.5 * h * (density[i - 1] + density[i]);
    }
    let total = cdf[n - 1];
    for c in &mut cdf {
        *c /= total;
    }
    Ok(QuadraturePosterior {
        grid: xs,
        density,
        cdf,
        mean,
        variance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McRiskEstimate {
    pub tau1: f64,
    pub tau1_se: f64,
    pub tau2: f64,
    pub tau2_se: f64,
}

/// Monte Carlo estimate of `P(Y = 0)` and `E[1 / (1 + Y)]` for
/// `Y ~ Poisson((1 - pi) lambda)`.
pub fn mc_risk_oracle(lambda: f64, pi: f64, draws: usize, seed: u64) -> McRiskEstimate {
    let mu = (1.0 - pi) * lambda;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut s1, mut s2, mut q2) = (0.0, 0.0, 0.0);
    for _ in 0..draws {
        let y = sample_poisson(&mut rng, mu);
        if y == 0 {
            s1 += 1.0;
        }
        let v = 1.0 / (1.0 + y as f64);
        s2 += v;
        q2 += v * v;
    }
    let n = draws as f64;
    let p1 = s1 / n;
    let m2 = s2 / n;
    let var2 = (q2 / n - m2 * m2).max(0.0) * n / (n - 1.0);
    McRiskEstimate {
        tau1: p1,
        tau1_se: (p1 * (1.0 - p1) / (n - 1.0)).sqrt(),
        tau2: m2,
        tau2_se: (var2 / n).sqrt(),
    }
}
