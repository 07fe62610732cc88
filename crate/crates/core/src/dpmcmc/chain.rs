use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{BaseMeasure, Sampler, SamplerConfig, TrackScope};
use crate::error::{Error, Result};
use crate::loglinear::{fit_ml, FitOptions, ModelSpec};
use crate::math::mean;
use crate::table::ContingencyTable;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainSummary {
    pub seed: u64,
    pub draws: usize,
    pub acceptance_rate: Option<f64>,
    pub epsilon: f64,
    pub mean_clusters: f64,
    pub mean_m: f64,
}

/// Retained draws of the cell rates plus diagnostic traces.
#[derive(Debug, Clone, Default)]
pub struct PosteriorDraws {
    /// Table cell ids whose rates are stored, in table order.
    pub cells: Vec<usize>,
    pub num_draws: usize,
    /// `num_draws x cells.len()` rates, row-major by draw.
    pub lambda: Vec<f64>,
    /// Every active cell id, aligned with `lambda_mean`.
    pub active_cells: Vec<usize>,
    pub lambda_mean: Vec<f64>,
    pub c_trace: Vec<usize>,
    pub m_trace: Vec<f64>,
    pub beta_trace: Vec<Vec<f64>>,
    /// Canonical cluster labels per draw, when recorded.
    pub partitions: Vec<Vec<u32>>,
    pub chains: Vec<ChainSummary>,
}

impl PosteriorDraws {
    /// Wraps a plain draw matrix (no diagnostics).
    pub fn from_matrix(cells: Vec<usize>, lambda: Vec<f64>, num_draws: usize) -> Result<Self> {
        if num_draws == 0 || lambda.len() != num_draws * cells.len() {
            return Err(Error::invalid(format!(
                "draw matrix of length {} does not match {num_draws} draws x {} cells",
                lambda.len(),
                cells.len()
            )));
        }
        if lambda.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::invalid("rates must be finite and positive"));
        }
        let u = cells.len();
        let lambda_mean = (0..u)
            .map(|j| (0..num_draws).map(|h| lambda[h * u + j]).sum::<f64>() / num_draws as f64)
            .collect();
        Ok(Self {
            active_cells: cells.clone(),
            cells,
            num_draws,
            lambda,
            lambda_mean,
            ..Self::default()
        })
    }

    pub fn draw(&self, h: usize) -> &[f64] {
        let u = self.cells.len();
        &self.lambda[h * u..(h + 1) * u]
    }

    pub fn column_of(&self, cell: usize) -> Option<usize> {
        self.cells.binary_search(&cell).ok()
    }

    /// All draws of one tracked cell.
    pub fn cell_draws(&self, column: usize) -> Vec<f64> {
        let u = self.cells.len();
        (0..self.num_draws).map(|h| self.lambda[h * u + column]).collect()
    }

    /// Posterior mean rate of any active cell.
    pub fn posterior_mean(&self, cell: usize) -> Option<f64> {
        self.active_cells
            .binary_search(&cell)
            .ok()
            .map(|i| self.lambda_mean[i])
    }

    pub fn acceptance_rate(&self) -> Option<f64> {
        let rates: Vec<f64> = self.chains.iter().filter_map(|c| c.acceptance_rate).collect();
        (!rates.is_empty()).then(|| mean(&rates))
    }

    pub fn summary(&self) -> TraceSummary {
        let c: Vec<f64> = self.c_trace.iter().map(|&c| c as f64).collect();
        TraceSummary {
            draws: self.num_draws,
            tracked_cells: self.cells.len(),
            acceptance_rate: self.acceptance_rate(),
            clusters: SeriesSummary::of(&c),
            m: SeriesSummary::of(&self.m_trace),
            chains: self.chains.clone(),
        }
    }

    /// Concatenates draws of chains run on the same table and model.
    pub fn pool(parts: Vec<PosteriorDraws>) -> Result<Self> {
        let mut iter = parts.into_iter();
        let mut out = iter
            .next()
            .ok_or_else(|| Error::invalid("no chains to pool"))?;
        let mut weight = out.num_draws as f64;
        for p in iter {
            if p.cells != out.cells || p.active_cells != out.active_cells {
                return Err(Error::invalid("chains track different cells"));
            }
            let w = p.num_draws as f64;
            for (a, b) in out.lambda_mean.iter_mut().zip(&p.lambda_mean) {
                *a = (*a * weight + b * w) / (weight + w);
            }
            weight += w;
            out.num_draws += p.num_draws;
            out.lambda.extend(p.lambda);
            out.c_trace.extend(p.c_trace);
            out.m_trace.extend(p.m_trace);
            out.beta_trace.extend(p.beta_trace);
            out.partitions.extend(p.partitions);
            out.chains.extend(p.chains);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesSummary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl SeriesSummary {
    fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        Some(Self {
            mean: mean(xs),
            min: xs.iter().copied().fold(f64::INFINITY, f64::min),
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

/// JSON-ready chain diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceSummary {
    pub draws: usize,
    pub tracked_cells: usize,
    pub acceptance_rate: Option<f64>,
    pub clusters: Option<SeriesSummary>,
    pub m: Option<SeriesSummary>,
    pub chains: Vec<ChainSummary>,
}

fn initial_beta(table: &ContingencyTable, spec: &ModelSpec, config: &SamplerConfig) -> Result<Vec<f64>> {
    let q = spec.num_params();
    let checked = |b: &Vec<f64>, what: &str| {
        if b.len() == q {
            Ok(b.clone())
        } else {
            Err(Error::invalid(format!("{what} has {} entries, the model has {q}", b.len())))
        }
    };
    if let Some(b) = &config.fixed_beta {
        return checked(b, "fixed_beta");
    }
    if !config.empirical_bayes {
        if let Some(b) = &config.init_beta {
            return checked(b, "init_beta");
        }
    }
    let fit = fit_ml(table, spec, &FitOptions::default())?;
    if !fit.converged {
        warn!(
            "ML fit of {spec} did not converge ({}); starting from its last iterate",
            fit.diagnostic.as_deref().unwrap_or("no diagnostic")
        );
    }
    Ok(fit.beta)
}

/// Runs one chain. The result depends only on the inputs and `config.seed`.
pub fn run_chain(
    table: &ContingencyTable,
    spec: &ModelSpec,
    base: Option<BaseMeasure>,
    config: &SamplerConfig,
) -> Result<PosteriorDraws> {
    let mut sampler = Sampler::new(table, spec, base, config)?;
    let beta = initial_beta(table, spec, config)?;
    let m = config.fixed_m.unwrap_or_else(|| sampler.mass_prior().mean());
    let mut state = sampler.initial_state(beta, m);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let rows = sampler.design().cells().to_vec();
    let tracked: Vec<usize> = match config.track {
        TrackScope::All => (0..rows.len()).collect(),
        TrackScope::SampleUniques => (0..rows.len())
            .filter(|&i| sampler.counts()[i] == 1.0)
            .collect(),
    };

    for it in 0..config.burn_in {
        sampler.sweep(&mut state, &mut rng, it, true)?;
    }

    let h_total = config.draws;
    let mut lambda = Vec::with_capacity(h_total * tracked.len());
    let mut sums = vec![0.0; rows.len()];
    let mut c_trace = Vec::with_capacity(h_total);
    let mut m_trace = Vec::with_capacity(h_total);
    let mut beta_trace = Vec::with_capacity(h_total);
    let mut partitions = Vec::new();
    let mut accept_sum = 0.0;
    let mut accept_n = 0usize;
    let mut it = config.burn_in;
    for _ in 0..h_total {
        for _ in 0..config.thin {
            let stats = sampler.sweep(&mut state, &mut rng, it, false)?;
            if let Some(p) = stats.beta_accept_prob {
                accept_sum += p;
                accept_n += 1;
            }
            it += 1;
        }
        let rates = sampler.rates(&state);
        if let Some(i) = rates.iter().position(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::NonFinite {
                iteration: it,
                component: "rates",
                detail: format!("cell {} has rate {}", rows[i], rates[i]),
            });
        }
        lambda.extend(tracked.iter().map(|&i| rates[i]));
        for (s, r) in sums.iter_mut().zip(&rates) {
            *s += r;
        }
        c_trace.push(if state.has_random_effects() { state.num_clusters() } else { 0 });
        m_trace.push(state.m);
        beta_trace.push(state.beta.clone());
        if config.record_partitions && state.has_random_effects() {
            partitions.push(state.canonical_partition());
        }
    }
    let summary = ChainSummary {
        seed: config.seed,
        draws: h_total,
        acceptance_rate: (accept_n > 0).then(|| accept_sum / accept_n as f64),
        epsilon: sampler.epsilon(),
        mean_clusters: c_trace.iter().sum::<usize>() as f64 / h_total as f64,
        mean_m: mean(&m_trace),
    };
    Ok(PosteriorDraws {
        cells: tracked.iter().map(|&i| rows[i]).collect(),
        num_draws: h_total,
        lambda,
        lambda_mean: sums.iter().map(|s| s / h_total as f64).collect(),
        active_cells: rows,
        c_trace,
        m_trace,
        beta_trace,
        partitions,
        chains: vec![summary],
    })
}

/// Runs `chains` independent chains in parallel with seeds `seed, seed+1, ...`
/// and pools their draws in chain order.
pub fn run_chains(
    table: &ContingencyTable,
    spec: &ModelSpec,
    base: Option<BaseMeasure>,
    config: &SamplerConfig,
    chains: usize,
) -> Result<PosteriorDraws> {
    if chains == 0 {
        return Err(Error::invalid("at least one chain is required"));
    }
    let parts: Vec<PosteriorDraws> = (0..chains)
        .into_par_iter()
        .map(|i| {
            let mut c = config.clone();
            c.seed = config.seed.wrapping_add(i as u64);
            run_chain(table, spec, base, &c)
        })
        .collect::<Result<_>>()?;
    PosteriorDraws::pool(parts)
}

