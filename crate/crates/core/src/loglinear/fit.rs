use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::{ModelSpec, PoissonLoglik};
use crate::error::{Error, Result};
use crate::table::ContingencyTable;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Relative log-likelihood change required for convergence.
    pub rel_tol: f64,
    /// Max-norm of the score required for convergence.
    pub grad_tol: f64,
    pub max_halvings: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            rel_tol: 1e-10,
            grad_tol: 1e-6,
            max_halvings: 50,
        }
    }
}

/// Maximum-likelihood fit of a Poisson log-linear model to sample counts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MlFit {
    pub spec: String,
    pub beta: Vec<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub max_gradient: f64,
    /// Asymptotic standard errors from the inverse Fisher information.
    pub standard_errors: Option<Vec<f64>>,
    /// Set when the fit did not converge or sits on the boundary of the
    /// parameter space (some coefficient heading to minus infinity).
    pub diagnostic: Option<String>,
}

impl MlFit {
    pub fn num_params(&self) -> usize {
        self.beta.len()
    }
}

/// Cholesky factor of a symmetric positive semi-definite matrix, adding a
/// growing ridge when the plain factorization fails.
pub(crate) fn robust_cholesky(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Some(c);
    }
    let scale = m.diagonal().iter().fold(0.0f64, |a, b| a.max(b.abs())).max(1e-300);
    let mut ridge = 1e-12 * scale;
    for _ in 0..6 {
        let mut jittered = m.clone();
        for i in 0..m.nrows() {
            jittered[(i, i)] += ridge;
        }
        if let Some(c) = Cholesky::new(jittered) {
            return Some(c);
        }
        ridge *= 100.0;
    }
    None
}

pub fn fit_ml(table: &ContingencyTable, spec: &ModelSpec, options: &FitOptions) -> Result<MlFit> {
    let n = table.sample_size();
    if n == 0 {
        return Err(Error::Degenerate("the sample is empty".into()));
    }
    let k = table.num_active_cells() as f64;
    let mut start = vec![0.0; spec.num_params()];
    start[0] = (n as f64 / (table.sampling_fraction() * k)).ln();
    fit_ml_from(table, spec, &start, options)
}

/// Newton iterations with step halving from a given starting point.
pub fn fit_ml_from(
    table: &ContingencyTable,
    spec: &ModelSpec,
    start: &[f64],
    options: &FitOptions,
) -> Result<MlFit> {
    let model = PoissonLoglik::new(spec, table)?;
    if start.len() != model.num_params() {
        return Err(Error::invalid(format!(
            "starting point has {} entries, model has {} parameters",
            start.len(),
            model.num_params()
        )));
    }
    let mut beta = DVector::from_column_slice(start);
    let mut last_rel = f64::INFINITY;
    let mut diagnostic = None;
    let mut converged = false;
    let mut iterations = 0;
    let mut eval = model.evaluate(beta.as_slice(), None);
    if !eval.loglik.is_finite() {
        return Err(Error::numeric("log-likelihood is not finite at the starting point"));
    }
    while iterations < options.max_iterations {
        let max_grad = eval.gradient.amax();
        if max_grad < options.grad_tol && last_rel < options.rel_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let Some(chol) = robust_cholesky(&eval.information) else {
            diagnostic = Some("information matrix is singular (rank-deficient design)".into());
            break;
        };
        let step = chol.solve(&eval.gradient);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=options.max_halvings {
            let cand = &beta + &step * t;
            let ll = model.loglik(cand.as_slice(), None);
            if ll.is_finite() && ll >= eval.loglik - 1e-12 * eval.loglik.abs() {
                accepted = Some((cand, ll));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, ll)) = accepted else {
            if max_grad < options.grad_tol {
                converged = true;
            } else {
                diagnostic = Some(format!(
                    "step halving failed to improve the log-likelihood (score max-norm {max_grad:.3e})"
                ));
            }
            break;
        };
        last_rel = (ll - eval.loglik).abs() / eval.loglik.abs().max(1.0);
        beta = cand;
        eval = model.evaluate(beta.as_slice(), None);
    }
    if !converged && diagnostic.is_none() {
        diagnostic = Some(format!(
            "no convergence after {} iterations (score max-norm {:.3e})",
            options.max_iterations,
            eval.gradient.amax()
        ));
    }
    if converged {
        // estimates drifting towards -inf signal a nonexistent finite MLE
        if let Some((j, b)) = beta
            .iter()
            .enumerate()
            .skip(1)
            .find(|(_, b)| **b < -20.0)
        {
            diagnostic = Some(format!(
                "coefficient {j} = {b:.1}: fitted rates on the boundary (zero margin)"
            ));
        }
    }
    let standard_errors = Cholesky::new(eval.information.clone()).map(|c| {
        let inv = c.inverse();
        (0..inv.nrows()).map(|i| inv[(i, i)].sqrt()).collect()
    });
    Ok(MlFit {
        spec: spec.shorthand(),
        beta: beta.as_slice().to_vec(),
        loglik: eval.loglik,
        converged,
        iterations,
        max_gradient: eval.gradient.amax(),
        standard_errors,
        diagnostic,
    })
}
