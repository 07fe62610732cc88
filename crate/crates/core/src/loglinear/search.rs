//! Stage-one path search: forward selection of two-way interactions under a
//! penalized log-likelihood, with the penalty lowered along a grid.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fit::{fit_ml, fit_ml_from, FitOptions, MlFit};
use super::ModelSpec;
use crate::error::{Error, Result};
use crate::table::ContingencyTable;

const C0_TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathConfig {
    /// Explicit penalty grid, strictly descending and positive. When absent
    /// a log-spaced grid is derived from the independence log-likelihood.
    pub gamma_grid: Option<Vec<f64>>,
    pub grid_points: usize,
    pub max_steps: usize,
    /// Skip candidates whose interaction graph is not chordal.
    pub decomposable_only: bool,
    pub fit: FitOptions,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self {
            gamma_grid: None,
            grid_points: 20,
            max_steps: 4,
            decomposable_only: true,
            fit: FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathStep {
    pub term: String,
    pub gamma: f64,
    pub c0: f64,
    pub d: usize,
    pub loglik: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct C0PathResult {
    pub base: String,
    pub base_loglik: f64,
    pub gamma_grid: Vec<f64>,
    pub steps: Vec<PathStep>,
    /// Nested specs, starting with the base model.
    #[serde(skip)]
    pub specs: Vec<ModelSpec>,
    /// ML fits aligned with `specs`.
    #[serde(skip)]
    pub fits: Vec<MlFit>,
}

/// `C0(gamma) = loglik - d * gamma`, with `d` the number of parameters
/// beyond the independence model.
pub fn c0_score(fit: &MlFit, spec: &ModelSpec, gamma: f64, baseline_q: usize) -> Result<f64> {
    if !fit.converged {
        return Err(Error::numeric(format!(
            "C0 needs a converged fit of {}: {}",
            spec,
            fit.diagnostic.as_deref().unwrap_or("not converged")
        )));
    }
    let q = spec.num_params();
    if q < baseline_q {
        return Err(Error::Spec(format!(
            "{spec} has fewer parameters ({q}) than the baseline ({baseline_q})"
        )));
    }
    Ok(fit.loglik - (q - baseline_q) as f64 * gamma)
}

/// `points` log-spaced values from `|loglik| / 2` down to 2.
pub fn default_gamma_grid(base_loglik: f64, points: usize) -> Vec<f64> {
    let top = base_loglik.abs() / 2.0;
    if top <= 2.0 || points < 2 {
        return vec![2.0];
    }
    let (lo, hi) = (2f64.ln(), top.ln());
    (0..points)
        .map(|i| (hi - (hi - lo) * i as f64 / (points - 1) as f64).exp())
        .collect()
}

/// Whether the undirected graph on `n` vertices is chordal, by repeatedly
/// eliminating simplicial vertices.
pub fn is_chordal(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut adj = vec![vec![false; n]; n];
    for &(a, b) in edges {
        adj[a][b] = true;
        adj[b][a] = true;
    }
    let mut alive = vec![true; n];
    for _ in 0..n {
        let simplicial = (0..n).find(|&v| {
            alive[v] && {
                let nb: Vec<usize> = (0..n).filter(|&u| alive[u] && adj[v][u]).collect();
                nb.iter()
                    .enumerate()
                    .all(|(i, &x)| nb[i + 1..].iter().all(|&y| adj[x][y]))
            }
        });
        match simplicial {
            Some(v) => alive[v] = false,
            None => return false,
        }
    }
    true
}

pub fn c0_path_search(
    table: &ContingencyTable,
    base: &ModelSpec,
    config: &PathConfig,
) -> Result<C0PathResult> {
    if !base.has_main_effects() {
        return Err(Error::Spec("the path search starts from a model with main effects".into()));
    }
    let baseline_q = ModelSpec::independence(base.variables().to_vec())?.num_params();
    let base_fit = fit_ml(table, base, &config.fit)?;
    if !base_fit.converged {
        return Err(Error::numeric(format!(
            "base model {base} did not converge: {}",
            base_fit.diagnostic.as_deref().unwrap_or("")
        )));
    }
    let grid = match &config.gamma_grid {
        Some(g) => g.clone(),
        None => default_gamma_grid(base_fit.loglik, config.grid_points),
    };
    if grid.is_empty() || grid.iter().any(|g| !(*g > 0.0) || !g.is_finite()) {
        return Err(Error::invalid("gamma grid must be non-empty, finite and positive"));
    }
    if grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid("gamma grid must be strictly descending"));
    }

    let nvars = base.variables().len();
    let mut current = base.clone();
    let mut current_fit = base_fit.clone();
    let mut specs = vec![current.clone()];
    let mut fits = vec![base_fit.clone()];
    let mut steps = Vec::new();
    let mut candidates: Option<Vec<(usize, usize, ModelSpec, MlFit)>> = None;

    'grid: for &gamma in &grid {
        loop {
            if steps.len() >= config.max_steps {
                break 'grid;
            }
            let cands = candidates.get_or_insert_with(|| {
                evaluate_candidates(table, &current, &current_fit, nvars, config)
            });
            let current_c0 = c0_score(&current_fit, &current, gamma, baseline_q)?;
            let mut best: Option<(f64, usize)> = None;
            for (i, (_, _, spec, fit)) in cands.iter().enumerate() {
                let c0 = c0_score(fit, spec, gamma, baseline_q)?;
                // candidates are in lexicographic pair order, so only a
                // strictly larger value (beyond the tie tolerance) replaces
                if best.is_none_or(|(b, _)| c0 > b + C0_TIE_TOL) {
                    best = Some((c0, i));
                }
            }
            match best {
                Some((c0, i)) if c0 > current_c0 + C0_TIE_TOL => {
                    let (_, _, spec, fit) = cands.swap_remove(i);
                    let term = {
                        let &(a, b) = spec.interactions().last().expect("added term");
                        format!("{}*{}", spec.variables()[a].name(), spec.variables()[b].name())
                    };
                    steps.push(PathStep {
                        term,
                        gamma,
                        c0,
                        d: spec.num_params() - baseline_q,
                        loglik: fit.loglik,
                    });
                    current = spec;
                    current_fit = fit;
                    specs.push(current.clone());
                    fits.push(current_fit.clone());
                    candidates = None;
                }
                _ => break,
            }
        }
    }

    Ok(C0PathResult {
        base: base.shorthand(),
        base_loglik: base_fit.loglik,
        gamma_grid: grid,
        steps,
        specs,
        fits,
    })
}

fn evaluate_candidates(
    table: &ContingencyTable,
    current: &ModelSpec,
    current_fit: &MlFit,
    nvars: usize,
    config: &PathConfig,
) -> Vec<(usize, usize, ModelSpec, MlFit)> {
    let mut pairs = Vec::new();
    for a in 0..nvars {
        for b in a + 1..nvars {
            if current.has_interaction(a, b) {
                continue;
            }
            if config.decomposable_only {
                let mut edges = current.interaction_set();
                edges.push((a, b));
                if !is_chordal(nvars, &edges) {
                    continue;
                }
            }
            pairs.push((a, b));
        }
    }
    let results: Vec<Option<(usize, usize, ModelSpec, MlFit)>> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let spec = current.clone().with_interaction(a, b).ok()?;
            let mut start = current_fit.beta.clone();
            start.resize(spec.num_params(), 0.0);
            match fit_ml_from(table, &spec, &start, &config.fit) {
                Ok(fit) if fit.converged => Some((a, b, spec, fit)),
                Ok(fit) => {
                    warn!(
                        "skipping candidate {spec}: {}",
                        fit.diagnostic.as_deref().unwrap_or("fit did not converge")
                    );
                    None
                }
                Err(e) => {
                    warn!("skipping candidate {spec}: {e}");
                    None
                }
            }
        })
        .collect();
    results.into_iter().flatten().collect()
}
