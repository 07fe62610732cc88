//! Stage-two predictive scoring on sample-unique cells and the two-stage
//! model selection procedure.

use std::fmt::Write as _;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::dpmcmc::{run_chains, BaseMeasure, PosteriorDraws, SamplerConfig};
use crate::error::{Error, Result};
use crate::loglinear::{c0_path_search, C0PathResult, ModelSpec, PathConfig};
use crate::math::{log_mean_exp, sample_variance};
use crate::risk::{global_risk_sim, global_risk_star, median};
use crate::table::{ContingencyTable, TrueRisks};

/// Per-draw `log Poisson(1; pi lambda)` of each sample unique, as
/// `cells x draws` rows.
fn unique_log_pmf(draws: &PosteriorDraws, table: &ContingencyTable) -> Result<Vec<Vec<f64>>> {
    let pi = table.sampling_fraction();
    let mut rows = Vec::new();
    for k in table.sample_uniques() {
        if table.is_structural_zero(k) {
            continue;
        }
        let col = draws.column_of(k).ok_or_else(|| {
            Error::invalid(format!("draws do not cover sample-unique cell {:?}", table.multi_index(k)))
        })?;
        rows.push(
            draws
                .cell_draws(col)
                .into_iter()
                .map(|l| {
                    let r = pi * l;
                    r.ln() - r
                })
                .collect(),
        );
    }
    if rows.is_empty() {
        return Err(Error::Degenerate(
            "the predictive criterion needs at least one sample unique".into(),
        ));
    }
    Ok(rows)
}

/// Sum over sample uniques of the log posterior-mean predictive probability
/// of observing one unit.
pub fn c1_score(draws: &PosteriorDraws, table: &ContingencyTable) -> Result<f64> {
    Ok(unique_log_pmf(draws, table)?.iter().map(|r| log_mean_exp(r)).sum())
}

/// `(WAIC_U, p_waic_u)`: C1 minus the summed posterior variances of the
/// per-unique log predictive terms.
pub fn waic_u_score(draws: &PosteriorDraws, table: &ContingencyTable) -> Result<(f64, f64)> {
    if draws.num_draws < 2 {
        return Err(Error::invalid("WAIC_U needs at least two draws"));
    }
    let rows = unique_log_pmf(draws, table)?;
    let c1: f64 = rows.iter().map(|r| log_mean_exp(r)).sum();
    let p: f64 = rows.iter().map(|r| sample_variance(r)).sum();
    Ok((c1 - p, p))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelScore {
    /// Display label, e.g. `NP: I + A*B`.
    pub model: String,
    pub spec: String,
    pub random_effects: bool,
    /// False for parametric counterparts reported for comparison only.
    pub candidate: bool,
    pub c1: f64,
    pub waic_u: f64,
    pub p_waic_u: f64,
    pub tau1_star_mean: f64,
    pub tau1_star_median: f64,
    pub tau2_star_mean: f64,
    pub tau2_star_median: f64,
    pub tau1_sim_mean: f64,
    pub tau2_sim_mean: f64,
    /// Posterior-mean estimate minus truth, when the population is known.
    pub tau1_error: Option<f64>,
    pub tau2_error: Option<f64>,
}

/// Scores one fitted model from its draws.
pub fn score_model(
    model: &str,
    spec: &ModelSpec,
    random_effects: bool,
    draws: &PosteriorDraws,
    table: &ContingencyTable,
    seed: u64,
) -> Result<ModelScore> {
    let c1 = c1_score(draws, table)?;
    let (waic_u, p_waic_u) = if draws.num_draws >= 2 {
        waic_u_score(draws, table)?
    } else {
        (c1, 0.0)
    };
    let star = global_risk_star(draws, table)?;
    let sim = global_risk_sim(draws, table, seed)?;
    let truth = table.population_counts().map(|_| table.true_risks()).transpose()?;
    let t1 = star.tau1_estimate();
    let t2 = star.tau2_estimate();
    Ok(ModelScore {
        model: model.to_string(),
        spec: spec.shorthand(),
        random_effects,
        candidate: random_effects,
        c1,
        waic_u,
        p_waic_u,
        tau1_star_mean: t1,
        tau1_star_median: median(&star.tau1)?,
        tau2_star_mean: t2,
        tau2_star_median: median(&star.tau2)?,
        tau1_sim_mean: sim.tau1_estimate(),
        tau2_sim_mean: sim.tau2_estimate(),
        tau1_error: truth.map(|t| t1 - t.tau1 as f64),
        tau2_error: truth.map(|t| t2 - t.tau2),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub path: PathConfig,
    pub sampler: SamplerConfig,
    pub base: BaseMeasure,
    pub chains: usize,
    /// Consecutive strict declines of C1 that stop the search.
    pub patience: usize,
    pub report_parametric: bool,
    /// C1 differences at or below this are flagged as near ties.
    pub near_tie: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            path: PathConfig::default(),
            sampler: SamplerConfig::default(),
            base: BaseMeasure::default_gamma(),
            chains: 1,
            patience: 1,
            report_parametric: false,
            near_tie: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// C1 declined `patience` times in a row; the field is the path index
    /// of the last evaluated candidate.
    Declined { at: usize },
    PathExhausted,
}

#[derive(Debug, Clone, Serialize)]
pub struct SelectionRun {
    pub path: C0PathResult,
    /// Candidate scores in path order (skipped candidates omitted).
    pub scores: Vec<ModelScore>,
    /// Path index of each score.
    pub path_index: Vec<usize>,
    pub parametric: Vec<ModelScore>,
    /// Index into `scores` of the chosen model.
    pub chosen: usize,
    pub chosen_spec: String,
    pub stop_reason: StopReason,
    pub truth: Option<TrueRisks>,
    pub ranking: Ranking,
}

/// Index at which a C1 sequence stops: the first position completing
/// `patience` consecutive strict declines, or `None`.
pub fn stop_index(c1: &[f64], patience: usize) -> Option<usize> {
    let patience = patience.max(1);
    let mut run = 0;
    for i in 1..c1.len() {
        if c1[i] < c1[i - 1] {
            run += 1;
            if run >= patience {
                return Some(i);
            }
        } else {
            run = 0;
        }
    }
    None
}

/// Index chosen from a C1 sequence evaluated in path order: the maximizer
/// over the prefix that ends at the stop index (earliest on ties).
pub fn chosen_index(c1: &[f64], patience: usize) -> Option<usize> {
    let end = stop_index(c1, patience).map_or(c1.len(), |i| i + 1);
    let mut best: Option<usize> = None;
    for (i, v) in c1[..end].iter().enumerate() {
        if best.is_none_or(|b| *v > c1[b]) {
            best = Some(i);
        }
    }
    best
}

fn label(prefix: &str, spec: &ModelSpec) -> String {
    format!("{prefix}: {}", spec.shorthand())
}

fn candidate_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add(1_000_003u64.wrapping_mul(index as u64))
}

/// Stage one builds a nested path of specs by penalized likelihood; stage
/// two attaches DP random effects to each in turn, scores it by C1 and stops
/// once C1 declines.
pub fn run_two_stage(
    table: &ContingencyTable,
    base_spec: &ModelSpec,
    config: &SelectionConfig,
) -> Result<SelectionRun> {
    if table.sample_uniques().iter().all(|&k| table.is_structural_zero(k)) {
        return Err(Error::Degenerate("the sample has no unique cells".into()));
    }
    let path = c0_path_search(table, base_spec, &config.path)?;
    info!("path search returned {} steps", path.steps.len());

    let mut scores: Vec<ModelScore> = Vec::new();
    let mut path_index = Vec::new();
    let mut stop_reason = StopReason::PathExhausted;
    let mut declines = 0usize;
    for (i, spec) in path.specs.iter().enumerate() {
        let mut sc = config.sampler.clone();
        sc.seed = candidate_seed(config.sampler.seed, i);
        if sc.init_beta.is_none() && path.fits[i].converged {
            sc.init_beta = Some(path.fits[i].beta.clone());
        }
        let result = run_chains(table, spec, Some(config.base), &sc, config.chains)
            .and_then(|d| score_model(&label("NP", spec), spec, true, &d, table, sc.seed));
        let score = match result {
            Ok(s) => s,
            Err(e) => {
                warn!("candidate {spec} skipped: {e}");
                continue;
            }
        };
        info!("{}: C1 = {:.4}", score.model, score.c1);
        if let Some(prev) = scores.last() {
            if score.c1 < prev.c1 {
                declines += 1;
            } else {
                declines = 0;
            }
        }
        scores.push(score);
        path_index.push(i);
        if declines >= config.patience.max(1) {
            stop_reason = StopReason::Declined { at: i };
            break;
        }
    }
    if scores.is_empty() {
        return Err(Error::numeric("every candidate chain failed"));
    }
    let c1: Vec<f64> = scores.iter().map(|s| s.c1).collect();
    let chosen = chosen_index(&c1, config.patience).expect("non-empty scores");

    let mut parametric = Vec::new();
    if config.report_parametric {
        for &i in &path_index {
            let spec = &path.specs[i];
            let mut sc = config.sampler.clone();
            sc.seed = candidate_seed(config.sampler.seed, i).wrapping_add(17);
            if sc.init_beta.is_none() && path.fits[i].converged {
                sc.init_beta = Some(path.fits[i].beta.clone());
            }
            let result = run_chains(table, spec, None, &sc, config.chains)
                .and_then(|d| score_model(&label("P", spec), spec, false, &d, table, sc.seed));
            match result {
                Ok(s) => parametric.push(s),
                Err(e) => warn!("parametric counterpart of {spec} failed: {e}"),
            }
        }
    }

    let truth = table.population_counts().map(|_| table.true_risks()).transpose()?;
    let mut all = scores.clone();
    all.extend(parametric.iter().cloned());
    let ranking = rank_models(&all, config.near_tie);
    Ok(SelectionRun {
        chosen_spec: scores[chosen].spec.clone(),
        path,
        scores,
        path_index,
        parametric,
        chosen,
        stop_reason,
        truth,
        ranking,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankRow {
    pub model: String,
    pub c1_rank: usize,
    pub waic_u_rank: usize,
    pub error_rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NearTie {
    pub first: String,
    pub second: String,
    pub c1_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ranking {
    pub rows: Vec<RankRow>,
    pub near_ties: Vec<NearTie>,
}

fn ranks_by(scores: &[ModelScore], key: impl Fn(&ModelScore) -> f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        key(&scores[a])
            .total_cmp(&key(&scores[b]))
            .then_with(|| scores[a].model.cmp(&scores[b].model))
    });
    let mut rank = vec![0; scores.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r + 1;
    }
    rank
}

/// Ranks by C1 and WAIC_U (larger is better) and by absolute true error of
/// the tau1 estimate when every score carries one. Ties break by label.
pub fn rank_models(scores: &[ModelScore], near_tie: f64) -> Ranking {
    let c1 = ranks_by(scores, |s| -s.c1);
    let waic = ranks_by(scores, |s| -s.waic_u);
    let err = scores
        .iter()
        .all(|s| s.tau1_error.is_some())
        .then(|| ranks_by(scores, |s| s.tau1_error.unwrap().abs()));
    let rows = scores
        .iter()
        .enumerate()
        .map(|(i, s)| RankRow {
            model: s.model.clone(),
            c1_rank: c1[i],
            waic_u_rank: waic[i],
            error_rank: err.as_ref().map(|e| e[i]),
        })
        .collect();
    let mut by_c1: Vec<usize> = (0..scores.len()).collect();
    by_c1.sort_by_key(|&i| c1[i]);
    let near_ties = by_c1
        .windows(2)
        .filter_map(|w| {
            let gap = scores[w[0]].c1 - scores[w[1]].c1;
            (gap.abs() <= near_tie).then(|| NearTie {
                first: scores[w[0]].model.clone(),
                second: scores[w[1]].model.clone(),
                c1_gap: gap,
            })
        })
        .collect();
    Ranking { rows, near_ties }
}

/// Plain-text table of estimates, criteria and ranks.
pub fn render_table(scores: &[ModelScore], ranking: &Ranking, truth: Option<TrueRisks>) -> String {
    let mut out = String::new();
    if let Some(t) = truth {
        let _ = writeln!(out, "true tau1 = {}, true tau2 = {:.3}", t.tau1, t.tau2);
    }
    let width = scores.iter().map(|s| s.model.len()).max().unwrap_or(5).max(5);
    let _ = writeln!(
        out,
        "{:<width$}  {:>10} {:>10} {:>12} {:>12} {:>6} {:>6} {:>6}  {}",
        "model", "tau1", "tau2", "C1", "WAIC_U", "r_err", "r_C1", "r_WAIC", "candidate"
    );
    for (s, r) in scores.iter().zip(&ranking.rows) {
        let e = r.error_rank.map_or("-".to_string(), |x| x.to_string());
        let _ = writeln!(
            out,
            "{:<width$}  {:>10.2} {:>10.2} {:>12.3} {:>12.3} {:>6} {:>6} {:>6}  {}",
            s.model,
            s.tau1_star_mean,
            s.tau2_star_mean,
            s.c1,
            s.waic_u,
            e,
            r.c1_rank,
            r.waic_u_rank,
            if s.candidate { "yes" } else { "no" }
        );
    }
    for t in &ranking.near_ties {
        let _ = writeln!(
            out,
            "near tie: {} vs {} (C1 gap {:.3})",
            t.first, t.second, t.c1_gap
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::KeyVariable;

    fn one_unique() -> ContingencyTable {
        let v = vec![KeyVariable::with_level_count("A", 2).unwrap()];
        ContingencyTable::from_counts(v, vec![1, 3], None, None, 0.5).unwrap()
    }

    fn score(model: &str, c1: f64, waic: f64, err: Option<f64>) -> ModelScore {
        ModelScore {
            model: model.into(),
            spec: "I".into(),
            random_effects: true,
            candidate: true,
            c1,
            waic_u: waic,
            p_waic_u: c1 - waic,
            tau1_star_mean: 0.0,
            tau1_star_median: 0.0,
            tau2_star_mean: 0.0,
            tau2_star_median: 0.0,
            tau1_sim_mean: 0.0,
            tau2_sim_mean: 0.0,
            tau1_error: err,
            tau2_error: err,
        }
    }

    #[test]
    fn c1_at_unit_rate() {
        let t = one_unique();
        let d = PosteriorDraws::from_matrix(vec![0], vec![2.0], 1).unwrap();
        assert!((c1_score(&d, &t).unwrap() + 1.0).abs() < 1e-12);
        let dup = PosteriorDraws::from_matrix(vec![0], vec![2.0, 3.0, 2.0, 3.0], 4).unwrap();
        let half = PosteriorDraws::from_matrix(vec![0], vec![2.0, 3.0], 2).unwrap();
        assert!((c1_score(&dup, &t).unwrap() - c1_score(&half, &t).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn waic_of_constant_draws() {
        let t = one_unique();
        let d = PosteriorDraws::from_matrix(vec![0], vec![2.0; 5], 5).unwrap();
        let (w, p) = waic_u_score(&d, &t).unwrap();
        assert_eq!(p, 0.0);
        assert!((w - c1_score(&d, &t).unwrap()).abs() < 1e-15);
        let single = PosteriorDraws::from_matrix(vec![0], vec![2.0], 1).unwrap();
        assert!(waic_u_score(&single, &t).is_err());
    }

    #[test]
    fn no_uniques_is_degenerate() {
        let v = vec![KeyVariable::with_level_count("A", 2).unwrap()];
        let t = ContingencyTable::from_counts(v, vec![2, 3], None, None, 0.5).unwrap();
        let d = PosteriorDraws::from_matrix(vec![0, 1], vec![1.0, 1.0], 1).unwrap();
        assert!(matches!(c1_score(&d, &t), Err(Error::Degenerate(_))));
    }

    #[test]
    fn stopping_rule() {
        assert_eq!(stop_index(&[-10.0, -8.0, -7.0, -9.0, -6.0], 1), Some(3));
        assert_eq!(stop_index(&[-10.0, -8.0, -9.0, -8.5, -9.0, -9.5], 2), Some(5));
        assert_eq!(stop_index(&[-3.0, -2.0, -1.0], 1), None);
    }

    #[test]
    fn ranks_and_ties() {
        let s = vec![score("a", -10.0, -12.0, None), score("b", -5.0, -20.0, None)];
        let r = rank_models(&s, 2.0);
        assert_eq!(r.rows[0].c1_rank, 2);
        assert_eq!(r.rows[1].c1_rank, 1);
        assert_eq!(r.rows[0].waic_u_rank, 1);
        assert!(r.rows[0].error_rank.is_none());
        assert!(r.near_ties.is_empty());
        let close = vec![
            score("a", -10.0, -10.0, Some(3.0)),
            score("b", -9.0, -9.0, Some(-1.0)),
        ];
        let r = rank_models(&close, 2.0);
        assert_eq!(r.near_ties.len(), 1);
        assert_eq!(r.rows[1].error_rank, Some(1));
        let tied = vec![score("b", -1.0, -1.0, None), score("a", -1.0, -1.0, None)];
        let r = rank_models(&tied, 0.0);
        assert_eq!(r.rows[1].c1_rank, 1);
        assert!(render_table(&close, &rank_models(&close, 2.0), None).contains("near tie"));
    }
}
