//! Poisson log-linear models over contingency tables.
//!
//! A [`ModelSpec`] always contains an intercept and, unless it is the
//! intercept-only model, the main effects of every key variable; two-way
//! interactions are added on top. Coefficients use treatment coding with
//! each variable's first declared level as the reference:
//!
//! ```text
//! [intercept | main effects per variable (L_v - 1 each) | interactions ((L_u - 1)(L_v - 1) each)]
//! ```
//!
//! Interaction columns for `A*B` run over the non-reference levels of `A`
//! (outer) and `B` (inner).

mod fit;
mod search;

pub use fit::{fit_ml, fit_ml_from, FitOptions, MlFit};
pub use search::{c0_path_search, c0_score, default_gamma_grid, is_chordal, C0PathResult, PathConfig, PathStep};

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::math::ln_factorial;
use crate::table::{ContingencyTable, KeyVariable};

#[derive(Debug, Clone)]
pub struct ModelSpec {
    variables: Vec<KeyVariable>,
    main_effects: bool,
    interactions: Vec<(usize, usize)>,
}

impl PartialEq for ModelSpec {
    fn eq(&self, other: &Self) -> bool {
        self.variables == other.variables
            && self.main_effects == other.main_effects
            && self.interaction_set() == other.interaction_set()
    }
}

impl ModelSpec {
    /// The independence model `I`: intercept plus all main effects.
    pub fn independence(variables: Vec<KeyVariable>) -> Result<Self> {
        if variables.is_empty() {
            return Err(Error::Spec("a model needs at least one variable".into()));
        }
        crate::table::check_unique_names(&variables)?;
        Ok(Self {
            variables,
            main_effects: true,
            interactions: Vec::new(),
        })
    }

    /// The intercept-only model `1` (equal rates in every cell).
    pub fn intercept_only(variables: Vec<KeyVariable>) -> Result<Self> {
        let mut s = Self::independence(variables)?;
        s.main_effects = false;
        Ok(s)
    }

    /// Independence plus every two-way interaction.
    pub fn all_two_way(variables: Vec<KeyVariable>) -> Result<Self> {
        let mut s = Self::independence(variables)?;
        let v = s.variables.len();
        for a in 0..v {
            for b in a + 1..v {
                s.interactions.push((a, b));
            }
        }
        Ok(s)
    }

    /// Adds an interaction between the variables at positions `a` and `b`.
    pub fn with_interaction(mut self, a: usize, b: usize) -> Result<Self> {
        self.add_interaction(a, b)?;
        Ok(self)
    }

    pub fn add_interaction(&mut self, a: usize, b: usize) -> Result<()> {
        if !self.main_effects {
            return Err(Error::Spec(
                "interactions require main effects (use I, not 1)".into(),
            ));
        }
        let v = self.variables.len();
        if a >= v || b >= v {
            return Err(Error::Spec(format!("no variable at position {}", a.max(b))));
        }
        if a == b {
            return Err(Error::Spec(format!(
                "{} interacts with itself",
                self.variables[a].name()
            )));
        }
        if self.has_interaction(a, b) {
            return Err(Error::Spec(format!(
                "duplicate interaction {}*{}",
                self.variables[a].name(),
                self.variables[b].name()
            )));
        }
        self.interactions.push((a, b));
        Ok(())
    }

    pub fn has_interaction(&self, a: usize, b: usize) -> bool {
        self.interactions
            .iter()
            .any(|&(x, y)| (x, y) == (a, b) || (y, x) == (a, b))
    }

    pub fn variables(&self) -> &[KeyVariable] {
        &self.variables
    }

    pub fn has_main_effects(&self) -> bool {
        self.main_effects
    }

    /// Interactions in the order they were added, as written.
    pub fn interactions(&self) -> &[(usize, usize)] {
        &self.interactions
    }

    /// Interactions as a sorted set of `(low, high)` positions.
    pub fn interaction_set(&self) -> Vec<(usize, usize)> {
        let mut v: Vec<(usize, usize)> = self
            .interactions
            .iter()
            .map(|&(a, b)| (a.min(b), a.max(b)))
            .collect();
        v.sort_unstable();
        v
    }

    fn interaction_size(&self, (a, b): (usize, usize)) -> usize {
        (self.variables[a].num_levels() - 1) * (self.variables[b].num_levels() - 1)
    }

    /// Number of coefficients `q`.
    pub fn num_params(&self) -> usize {
        let mains: usize = if self.main_effects {
            self.variables.iter().map(|v| v.num_levels() - 1).sum()
        } else {
            0
        };
        let inter: usize = self.interactions.iter().map(|&p| self.interaction_size(p)).sum();
        1 + mains + inter
    }

    /// Parses the shorthand `I + A*B + C*D` (or `1` for intercept only).
    pub fn parse(text: &str, variables: Vec<KeyVariable>) -> Result<Self> {
        let mut terms = text.split('+').map(str::trim);
        let head = terms.next().unwrap_or("");
        let mut spec = match head {
            "I" => Self::independence(variables)?,
            "1" => Self::intercept_only(variables)?,
            other => {
                return Err(Error::Spec(format!(
                    "model shorthand must start with I or 1, found {other:?}"
                )))
            }
        };
        for term in terms {
            let (a, b) = term
                .split_once('*')
                .ok_or_else(|| Error::Spec(format!("term {term:?} is not of the form A*B")))?;
            let pos = |name: &str| {
                let name = name.trim();
                spec.variables
                    .iter()
                    .position(|v| v.name() == name)
                    .ok_or_else(|| Error::Spec(format!("unknown variable {name:?} in {term:?}")))
            };
            let (a, b) = (pos(a)?, pos(b)?);
            spec.add_interaction(a, b)?;
        }
        Ok(spec)
    }

    pub fn shorthand(&self) -> String {
        self.to_string()
    }

    fn layout(&self) -> ColumnLayout {
        let mut main = Vec::with_capacity(self.variables.len());
        let mut off = 1;
        for v in &self.variables {
            main.push(off);
            if self.main_effects {
                off += v.num_levels() - 1;
            }
        }
        let inter = self
            .interactions
            .iter()
            .map(|&p| {
                let o = off;
                off += self.interaction_size(p);
                o
            })
            .collect();
        ColumnLayout { main, inter }
    }

    /// Column indices of the nonzero (unit) entries of the design row of a
    /// cell, in increasing order.
    pub fn nonzero_columns(&self, index: &[usize], out: &mut Vec<u32>) {
        self.nonzero_columns_with(&self.layout(), index, out)
    }

    fn nonzero_columns_with(&self, layout: &ColumnLayout, index: &[usize], out: &mut Vec<u32>) {
        out.clear();
        out.push(0);
        if self.main_effects {
            for (v, &l) in index.iter().enumerate() {
                if l > 0 {
                    out.push((layout.main[v] + l - 1) as u32);
                }
            }
        }
        for (&(a, b), &off) in self.interactions.iter().zip(&layout.inter) {
            let (la, lb) = (index[a], index[b]);
            if la > 0 && lb > 0 {
                let width = self.variables[b].num_levels() - 1;
                out.push((off + (la - 1) * width + (lb - 1)) as u32);
            }
        }
        out.sort_unstable();
    }

    /// Dense design row `w_k` of a cell.
    pub fn design_row(&self, index: &[usize]) -> Result<Vec<f64>> {
        if index.len() != self.variables.len() {
            return Err(Error::invalid("multi-index length does not match the model"));
        }
        for (l, v) in index.iter().zip(&self.variables) {
            if *l >= v.num_levels() {
                return Err(Error::invalid(format!("level {l} out of range for {}", v.name())));
            }
        }
        let mut cols = Vec::new();
        self.nonzero_columns(index, &mut cols);
        let mut row = vec![0.0; self.num_params()];
        for c in cols {
            row[c as usize] = 1.0;
        }
        Ok(row)
    }

    /// Human-readable coefficient names aligned with the design columns.
    pub fn coefficient_names(&self) -> Vec<String> {
        let mut names = vec!["(Intercept)".to_string()];
        if self.main_effects {
            for v in &self.variables {
                for l in &v.levels()[1..] {
                    names.push(format!("{}={}", v.name(), l));
                }
            }
        }
        for &(a, b) in &self.interactions {
            let (va, vb) = (&self.variables[a], &self.variables[b]);
            for la in &va.levels()[1..] {
                for lb in &vb.levels()[1..] {
                    names.push(format!("{}={}:{}={}", va.name(), la, vb.name(), lb));
                }
            }
        }
        names
    }

    pub(crate) fn check_table(&self, table: &ContingencyTable) -> Result<()> {
        if table.variables() != self.variables.as_slice() {
            return Err(Error::Spec("model variables do not match the table".into()));
        }
        Ok(())
    }
}

struct ColumnLayout {
    main: Vec<usize>,
    inter: Vec<usize>,
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(if self.main_effects { "I" } else { "1" })?;
        for &(a, b) in &self.interactions {
            write!(f, " + {}*{}", self.variables[a].name(), self.variables[b].name())?;
        }
        Ok(())
    }
}

/// Sparse 0/1 design matrix over the active cells of a table.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    num_params: usize,
    cells: Vec<usize>,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
}

impl DesignMatrix {
    pub fn new(spec: &ModelSpec, table: &ContingencyTable) -> Result<Self> {
        spec.check_table(table)?;
        let cells: Vec<usize> = table.active_cells().collect();
        let mut row_ptr = Vec::with_capacity(cells.len() + 1);
        let mut cols = Vec::new();
        let mut idx = vec![0; spec.variables.len()];
        let mut buf = Vec::new();
        let layout = spec.layout();
        row_ptr.push(0);
        for &k in &cells {
            table.multi_index_into(k, &mut idx);
            spec.nonzero_columns_with(&layout, &idx, &mut buf);
            cols.extend_from_slice(&buf);
            row_ptr.push(cols.len());
        }
        Ok(Self {
            num_params: spec.num_params(),
            cells,
            row_ptr,
            cols,
        })
    }

    pub fn num_params(&self) -> usize {
        self.num_params
    }

    pub fn num_rows(&self) -> usize {
        self.cells.len()
    }

    /// Table cell index of each row.
    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    /// `w_k' beta` for every row.
    pub fn linear_predictor(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.num_rows())
            .map(|i| self.row(i).iter().map(|&c| beta[c as usize]).sum())
            .collect()
    }

    /// Column sums of the design matrix.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.num_params];
        for &c in &self.cols {
            s[c as usize] += 1.0;
        }
        s
    }
}

/// Value, gradient and Fisher information of a Poisson log-likelihood.
#[derive(Debug, Clone)]
pub struct PoissonEval {
    pub loglik: f64,
    pub gradient: DVector<f64>,
    pub information: DMatrix<f64>,
}

/// The sample-count Poisson log-likelihood
/// `sum_k f_k (log pi + eta_k + o_k) - pi exp(eta_k + o_k) - log f_k!`
/// with `eta = W beta` and optional per-row offsets `o`.
#[derive(Debug, Clone)]
pub struct PoissonLoglik {
    design: DesignMatrix,
    counts: Vec<f64>,
    log_factorials: Vec<f64>,
    pi: f64,
}

impl PoissonLoglik {
    pub fn new(spec: &ModelSpec, table: &ContingencyTable) -> Result<Self> {
        let design = DesignMatrix::new(spec, table)?;
        let f = table.sample_counts();
        let counts: Vec<f64> = design.cells().iter().map(|&k| f[k] as f64).collect();
        let log_factorials = design.cells().iter().map(|&k| ln_factorial(f[k])).collect();
        Ok(Self {
            design,
            counts,
            log_factorials,
            pi: table.sampling_fraction(),
        })
    }

    pub fn design(&self) -> &DesignMatrix {
        &self.design
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn log_factorials(&self) -> &[f64] {
        &self.log_factorials
    }

    pub fn pi(&self) -> f64 {
        self.pi
    }

    pub fn num_params(&self) -> usize {
        self.design.num_params()
    }

    /// Replaces the per-row counts, keeping the design.
    pub fn set_counts(&mut self, counts: &[u64]) -> Result<()> {
        if counts.len() != self.counts.len() {
            return Err(Error::invalid("count vector does not match the design rows"));
        }
        self.counts = counts.iter().map(|&f| f as f64).collect();
        self.log_factorials = counts.iter().map(|&f| ln_factorial(f)).collect();
        Ok(())
    }

    pub fn loglik(&self, beta: &[f64], offsets: Option<&[f64]>) -> f64 {
        let ln_pi = self.pi.ln();
        let eta = self.design.linear_predictor(beta);
        let mut ll = 0.0;
        for (i, e) in eta.iter().enumerate() {
            let mu = e + offsets.map_or(0.0, |o| o[i]);
            ll += self.counts[i] * (ln_pi + mu) - self.pi * mu.exp() - self.log_factorials[i];
        }
        ll
    }

    pub fn evaluate(&self, beta: &[f64], offsets: Option<&[f64]>) -> PoissonEval {
        let q = self.num_params();
        let ln_pi = self.pi.ln();
        let eta = self.design.linear_predictor(beta);
        let mut ll = 0.0;
        let mut grad = DVector::zeros(q);
        let mut info = DMatrix::zeros(q, q);
        for (i, e) in eta.iter().enumerate() {
            let mu = e + offsets.map_or(0.0, |o| o[i]);
            let rate = self.pi * mu.exp();
            ll += self.counts[i] * (ln_pi + mu) - rate - self.log_factorials[i];
            let resid = self.counts[i] - rate;
            let row = self.design.row(i);
            for (a, &ca) in row.iter().enumerate() {
                let ca = ca as usize;
                grad[ca] += resid;
                for &cb in &row[a..] {
                    info[(ca, cb as usize)] += rate;
                }
            }
        }
        // rows are sorted, so only the upper triangle was filled
        for a in 0..q {
            for b in 0..a {
                info[(a, b)] = info[(b, a)];
            }
        }
        PoissonEval {
            loglik: ll,
            gradient: grad,
            information: info,
        }
    }
}
