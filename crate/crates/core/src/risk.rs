//! Disclosure-risk estimates from posterior rate draws.
//!
//! Under the Poisson model, `F_k - f_k | f_k ~ Poisson((1 - pi) lambda_k)`,
//! which gives closed forms for the per-cell probability that a sample
//! unique is a population unique and for the expected inverse frequency.

use std::path::Path;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dpmcmc::PosteriorDraws;
use crate::error::{Error, Result};
use crate::math::{mean, sample_poisson};
use crate::table::{ContingencyTable, TrueRisks};

pub const DEFAULT_QUANTILE_LEVELS: [f64; 5] = [0.005, 0.025, 0.5, 0.975, 0.995];

/// `(P(F_k = 1 | f_k = 1), E[1 / F_k | f_k = 1])` at rate `lambda`.
pub fn per_cell_risk(lambda: f64, pi: f64) -> Result<(f64, f64)> {
    if !(pi > 0.0 && pi <= 1.0) {
        return Err(Error::invalid(format!("sampling fraction {pi} outside (0, 1]")));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("rate {lambda} must be finite and non-negative")));
    }
    if pi == 1.0 {
        return Ok((1.0, 1.0));
    }
    Ok(risk_at(lambda, pi))
}

fn risk_at(lambda: f64, pi: f64) -> (f64, f64) {
    let mu = (1.0 - pi) * lambda;
    let t1 = (-mu).exp();
    let t2 = if mu < 1e-12 { 1.0 - 0.5 * mu } else { -(-mu).exp_m1() / mu };
    (t1, t2)
}

/// Risk contributions of the sample-unique cells, draw by draw.
#[derive(Debug, Clone)]
pub struct RiskTraces {
    /// Sample-unique cell ids.
    pub cells: Vec<usize>,
    pub num_draws: usize,
    /// `num_draws x cells.len()` per-cell values, row-major by draw.
    pub tau1_cells: Vec<f64>,
    pub tau2_cells: Vec<f64>,
    /// Per-draw global sums.
    pub tau1: Vec<f64>,
    pub tau2: Vec<f64>,
}

impl RiskTraces {
    pub fn tau1_estimate(&self) -> f64 {
        mean(&self.tau1)
    }

    pub fn tau2_estimate(&self) -> f64 {
        mean(&self.tau2)
    }
}

/// Columns of `draws` holding the sample-unique cells of `table`.
fn unique_columns(draws: &PosteriorDraws, table: &ContingencyTable) -> Result<(Vec<usize>, Vec<usize>)> {
    let uniques: Vec<usize> = table
        .sample_uniques()
        .into_iter()
        .filter(|&k| !table.is_structural_zero(k))
        .collect();
    let mut cols = Vec::with_capacity(uniques.len());
    for &k in &uniques {
        cols.push(draws.column_of(k).ok_or_else(|| {
            Error::invalid(format!(
                "draws do not cover sample-unique cell {:?}",
                table.multi_index(k)
            ))
        })?);
    }
    Ok((uniques, cols))
}

fn empty_traces(h: usize) -> RiskTraces {
    RiskTraces {
        cells: Vec::new(),
        num_draws: h,
        tau1_cells: Vec::new(),
        tau2_cells: Vec::new(),
        tau1: vec![0.0; h],
        tau2: vec![0.0; h],
    }
}

/// Per-draw sums of the closed-form per-cell risks over sample uniques.
pub fn global_risk_star(draws: &PosteriorDraws, table: &ContingencyTable) -> Result<RiskTraces> {
    let pi = table.sampling_fraction();
    let (cells, cols) = unique_columns(draws, table)?;
    let h = draws.num_draws;
    if cells.is_empty() {
        warn!("no sample uniques: risk estimates are zero");
        return Ok(empty_traces(h));
    }
    let u = cells.len();
    let mut t1c = Vec::with_capacity(h * u);
    let mut t2c = Vec::with_capacity(h * u);
    let mut t1 = Vec::with_capacity(h);
    let mut t2 = Vec::with_capacity(h);
    for d in 0..h {
        let row = draws.draw(d);
        let (mut s1, mut s2) = (0.0, 0.0);
        for &c in &cols {
            let (a, b) = per_cell_risk(row[c], pi)?;
            t1c.push(a);
            t2c.push(b);
            s1 += a;
            s2 += b;
        }
        t1.push(s1);
        t2.push(s2);
    }
    Ok(RiskTraces {
        cells,
        num_draws: h,
        tau1_cells: t1c,
        tau2_cells: t2c,
        tau1: t1,
        tau2: t2,
    })
}

/// Per-draw risks evaluated on simulated population counts
/// `F_k = 1 + Poisson((1 - pi) lambda_k)` of the sample uniques.
pub fn global_risk_sim(
    draws: &PosteriorDraws,
    table: &ContingencyTable,
    seed: u64,
) -> Result<RiskTraces> {
    let pi = table.sampling_fraction();
    let (cells, cols) = unique_columns(draws, table)?;
    let h = draws.num_draws;
    if cells.is_empty() {
        warn!("no sample uniques: risk estimates are zero");
        return Ok(empty_traces(h));
    }
    let u = cells.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t1c = Vec::with_capacity(h * u);
    let mut t2c = Vec::with_capacity(h * u);
    let mut t1 = Vec::with_capacity(h);
    let mut t2 = Vec::with_capacity(h);
    for d in 0..h {
        let row = draws.draw(d);
        let (mut s1, mut s2) = (0.0, 0.0);
        for &c in &cols {
            let big_f = 1 + sample_poisson(&mut rng, (1.0 - pi) * row[c]);
            let a = if big_f == 1 { 1.0 } else { 0.0 };
            let b = 1.0 / big_f as f64;
            t1c.push(a);
            t2c.push(b);
            s1 += a;
            s2 += b;
        }
        t1.push(s1);
        t2.push(s2);
    }
    Ok(RiskTraces {
        cells,
        num_draws: h,
        tau1_cells: t1c,
        tau2_cells: t2c,
        tau1: t1,
        tau2: t2,
    })
}

/// Empirical quantiles with linear interpolation between order statistics
/// (position `(n - 1) p`).
pub fn risk_quantiles(trace: &[f64], levels: &[f64]) -> Result<Vec<f64>> {
    if trace.is_empty() {
        return Err(Error::invalid("quantiles of an empty trace"));
    }
    if let Some(l) = levels.iter().find(|l| !(**l >= 0.0 && **l <= 1.0)) {
        return Err(Error::invalid(format!("quantile level {l} outside [0, 1]")));
    }
    let mut s = trace.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    Ok(levels
        .iter()
        .map(|&p| {
            let pos = (n - 1) as f64 * p;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
        })
        .collect())
}

pub fn median(trace: &[f64]) -> Result<f64> {
    Ok(risk_quantiles(trace, &[0.5])?[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeDecomposition {
    pub se: f64,
    /// Sum of the within-cell variances.
    pub v_w: f64,
    /// Deviance of the per-cell means around their average.
    pub d_b: f64,
    /// Cross-cell covariance term.
    pub c_b: f64,
}

/// Splits the posterior variance of a global risk (the `1/H` variance of
/// the per-draw sums) into within-cell, between-cell and cross-cell parts.
/// `values` is an `h x u` row-major matrix of per-cell contributions.
pub fn se_decomposition(values: &[f64], h: usize, u: usize) -> Result<SeDecomposition> {
    se_decomposition_padded(values, h, u, u)
}

/// As [`se_decomposition`], with the averages taken over `cells >= u`
/// cells of which the extra ones contribute zero in every draw.
pub fn se_decomposition_padded(
    values: &[f64],
    h: usize,
    u: usize,
    cells: usize,
) -> Result<SeDecomposition> {
    if h < 2 {
        return Err(Error::invalid("the s.e. decomposition needs at least two draws"));
    }
    if values.len() != h * u {
        return Err(Error::invalid("draw matrix has the wrong size"));
    }
    if cells < u || cells == 0 {
        return Err(Error::invalid("padded cell count must cover the columns"));
    }
    let hf = h as f64;
    let kf = cells as f64;
    let mut cell_mean = vec![0.0; u];
    let mut cell_sq = vec![0.0; u];
    let mut sum_sq_total = 0.0;
    let mut sum_sq_cells = 0.0;
    for d in 0..h {
        let row = &values[d * u..(d + 1) * u];
        let mut s = 0.0;
        for (j, &v) in row.iter().enumerate() {
            cell_mean[j] += v;
            cell_sq[j] += v * v;
            s += v;
        }
        sum_sq_total += s * s;
        sum_sq_cells += row.iter().map(|v| v * v).sum::<f64>();
    }
    for j in 0..u {
        cell_mean[j] /= hf;
        cell_sq[j] /= hf;
    }
    let total: f64 = cell_mean.iter().sum();
    let avg = total / kf;
    let sum_mean_sq: f64 = cell_mean.iter().map(|m| m * m).sum();
    let v_w = cell_sq.iter().sum::<f64>() - sum_mean_sq;
    let d_b = sum_mean_sq - kf * avg * avg;
    let c_b = (sum_sq_total - sum_sq_cells) / hf - kf * (kf - 1.0) * avg * avg;
    let var = v_w + d_b + c_b;
    Ok(SeDecomposition {
        se: var.max(0.0).sqrt(),
        v_w,
        d_b,
        c_b,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PerCellRisk {
    pub cell: usize,
    pub index: Vec<usize>,
    pub tau1_star: f64,
    pub tau2_star: f64,
    pub tau1_sd: f64,
    pub tau2_sd: f64,
}

/// Posterior mean and sd of each unique cell's risks.
pub fn per_cell_summary(traces: &RiskTraces, table: &ContingencyTable) -> Vec<PerCellRisk> {
    let u = traces.cells.len();
    let h = traces.num_draws as f64;
    let stats = |m: &[f64], j: usize| {
        let (mut s, mut q) = (0.0, 0.0);
        for d in 0..traces.num_draws {
            let v = m[d * u + j];
            s += v;
            q += v * v;
        }
        let mean = s / h;
        let var = if traces.num_draws > 1 {
            ((q - h * mean * mean) / (h - 1.0)).max(0.0)
        } else {
            0.0
        };
        (mean, var.sqrt())
    };
    traces
        .cells
        .iter()
        .enumerate()
        .map(|(j, &cell)| {
            let (m1, s1) = stats(&traces.tau1_cells, j);
            let (m2, s2) = stats(&traces.tau2_cells, j);
            PerCellRisk {
                cell,
                index: table.multi_index(cell),
                tau1_star: m1,
                tau2_star: m2,
                tau1_sd: s1,
                tau2_sd: s2,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub median: f64,
    pub sd: f64,
}

impl Estimate {
    fn of(trace: &[f64]) -> Result<Self> {
        let m = mean(trace);
        let sd = if trace.len() > 1 {
            crate::math::sample_variance(trace).sqrt()
        } else {
            0.0
        };
        Ok(Self {
            mean: m,
            median: median(trace)?,
            sd,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantileTable {
    pub levels: Vec<f64>,
    pub tau1: Vec<f64>,
    pub tau2: Vec<f64>,
}

impl QuantileTable {
    pub fn of(traces: &RiskTraces, levels: &[f64]) -> Result<Self> {
        Ok(Self {
            levels: levels.to_vec(),
            tau1: risk_quantiles(&traces.tau1, levels)?,
            tau2: risk_quantiles(&traces.tau2, levels)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SePair {
    pub tau1: SeDecomposition,
    pub tau2: SeDecomposition,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TruthComparison {
    pub tau1: u64,
    pub tau2: f64,
    /// Estimate minus truth, using posterior means.
    pub tau1_star_error: f64,
    pub tau2_star_error: f64,
    pub tau1_sim_error: f64,
    pub tau2_sim_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RiskReport {
    pub model: String,
    pub draws: usize,
    pub sample_uniques: usize,
    pub tau1_star: Estimate,
    pub tau2_star: Estimate,
    pub tau1_sim: Estimate,
    pub tau2_sim: Estimate,
    /// Quantiles of the closed-form traces.
    pub quantiles_star: QuantileTable,
    /// Quantiles of the simulation traces.
    pub quantiles_sim: QuantileTable,
    /// Present when at least two draws are available.
    pub se: Option<SePair>,
    pub truth: Option<TruthComparison>,
    #[serde(skip)]
    pub per_cell: Vec<PerCellRisk>,
}

/// Full risk report. Fails with a degenerate-input error when the sample
/// has no uniques.
pub fn risk_report(
    model: &str,
    draws: &PosteriorDraws,
    table: &ContingencyTable,
    levels: &[f64],
    seed: u64,
) -> Result<RiskReport> {
    let star = global_risk_star(draws, table)?;
    if star.cells.is_empty() {
        return Err(Error::Degenerate("the sample has no unique cells".into()));
    }
    let sim = global_risk_sim(draws, table, seed)?;
    let u = star.cells.len();
    let h = star.num_draws;
    let se = if h >= 2 {
        Some(SePair {
            tau1: se_decomposition(&star.tau1_cells, h, u)?,
            tau2: se_decomposition(&star.tau2_cells, h, u)?,
        })
    } else {
        None
    };
    let tau1_star = Estimate::of(&star.tau1)?;
    let tau2_star = Estimate::of(&star.tau2)?;
    let tau1_sim = Estimate::of(&sim.tau1)?;
    let tau2_sim = Estimate::of(&sim.tau2)?;
    let truth = match table.population_counts() {
        Some(_) => {
            let TrueRisks { tau1, tau2 } = table.true_risks()?;
            Some(TruthComparison {
                tau1,
                tau2,
                tau1_star_error: tau1_star.mean - tau1 as f64,
                tau2_star_error: tau2_star.mean - tau2,
                tau1_sim_error: tau1_sim.mean - tau1 as f64,
                tau2_sim_error: tau2_sim.mean - tau2,
            })
        }
        None => None,
    };
    Ok(RiskReport {
        model: model.to_string(),
        draws: h,
        sample_uniques: u,
        tau1_star,
        tau2_star,
        tau1_sim,
        tau2_sim,
        quantiles_star: QuantileTable::of(&star, levels)?,
        quantiles_sim: QuantileTable::of(&sim, levels)?,
        se,
        truth,
        per_cell: per_cell_summary(&star, table),
    })
}

/// Writes per-cell risks keyed by the level index of each variable.
pub fn write_per_cell_csv(path: &Path, table: &ContingencyTable, rows: &[PerCellRisk]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = table.variables().iter().map(|v| v.name().to_string()).collect();
    header.extend(["tau1_star", "tau2_star", "tau1_sd", "tau2_sd"].map(String::from));
    w.write_record(&header)?;
    for r in rows {
        let mut rec: Vec<String> = r.index.iter().map(|i| i.to_string()).collect();
        rec.extend([r.tau1_star, r.tau2_star, r.tau1_sd, r.tau2_sd].map(|x| format!("{x:.10e}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `(measure, level, value)` rows for plotting.
pub fn write_quantiles_csv(path: &Path, q: &QuantileTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["measure", "level", "value"])?;
    for (name, vals) in [("tau1", &q.tau1), ("tau2", &q.tau2)] {
        for (l, v) in q.levels.iter().zip(vals.iter()) {
            w.write_record([name.to_string(), l.to_string(), format!("{v:.10e}")])?;
        }
    }
    w.flush()?;
    Ok(())
}
