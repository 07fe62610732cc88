use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

use super::{BaseMeasure, DpState, GammaPrior, SamplerConfig};
use crate::error::{Error, Result};
use crate::loglinear::{DesignMatrix, ModelSpec, PoissonLoglik};
use crate::math::{ln_factorial, sample_gamma, sample_log_categorical};
use crate::table::ContingencyTable;

const CLUSTER_STEP_TARGET: f64 = 0.44;
const METRIC_JITTER: f64 = 1e-10;

/// `log int prod_k Poisson(f_k; omega * x_k) Gamma(omega; a, b) d omega`
/// for a cluster with counts `f_k` and exposures `x_k`.
pub fn gamma_poisson_log_marginal(counts: &[u64], exposures: &[f64], a: f64, b: f64) -> f64 {
    let mut sf = 0.0;
    let mut sx = 0.0;
    let mut acc = 0.0;
    for (&f, &x) in counts.iter().zip(exposures) {
        sf += f as f64;
        sx += x;
        if f > 0 {
            acc += f as f64 * x.ln();
        }
        acc -= ln_factorial(f);
    }
    acc + ln_gamma(a + sf) - ln_gamma(a) + a * b.ln() - (a + sf) * (b + sx).ln()
}

/// One draw of the DP mass from its conditional given `c` clusters among
/// `k` cells, by the auxiliary-variable Gamma mixture.
pub fn escobar_west_update<R: Rng + ?Sized>(
    rng: &mut R,
    m: f64,
    c: usize,
    k: usize,
    prior: GammaPrior,
) -> f64 {
    let eta: f64 = Beta::new(m + 1.0, k as f64).expect("valid beta").sample(rng);
    let rate = prior.rate - eta.ln();
    let odds = (prior.shape + c as f64 - 1.0) / (k as f64 * rate);
    let shape = if rng.random::<f64>() < odds / (1.0 + odds) {
        prior.shape + c as f64
    } else {
        prior.shape + c as f64 - 1.0
    };
    sample_gamma(rng, shape, rate)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SweepStats {
    /// Metropolis acceptance probability of the fixed-effects move.
    pub beta_accept_prob: Option<f64>,
    /// Mean acceptance of the cluster-value moves (Gaussian base).
    pub cluster_accept: Option<f64>,
}

/// Data, hyperparameters and tuning for one chain. The chain state itself
/// is a separate [`DpState`].
#[derive(Debug, Clone)]
pub struct Sampler {
    lik: PoissonLoglik,
    pi: f64,
    ln_pi: f64,
    eta: Vec<f64>,
    exp_eta: Vec<f64>,
    base: Option<BaseMeasure>,
    m_prior: GammaPrior,
    beta_prior_var: f64,
    aux: usize,
    update_beta: bool,
    update_m: bool,
    epsilon: f64,
    target: f64,
    cluster_step: f64,
    adapt_steps: usize,
    log_w: Vec<f64>,
    slots: Vec<usize>,
    sum_f: Vec<f64>,
    sum_e: Vec<f64>,
}

impl Sampler {
    pub fn new(
        table: &ContingencyTable,
        spec: &ModelSpec,
        base: Option<BaseMeasure>,
        config: &SamplerConfig,
    ) -> Result<Self> {
        config.validate()?;
        if let Some(b) = &base {
            b.validate()?;
        }
        let lik = PoissonLoglik::new(spec, table)?;
        if lik.counts().is_empty() {
            return Err(Error::Degenerate("the table has no active cells".into()));
        }
        let pi = table.sampling_fraction();
        let m_prior = config
            .m_prior
            .or_else(|| base.map(|b| b.default_mass_prior()))
            .unwrap_or(GammaPrior { shape: 1.0, rate: 1.0 });
        let n = lik.counts().len();
        Ok(Self {
            lik,
            pi,
            ln_pi: pi.ln(),
            eta: vec![0.0; n],
            exp_eta: vec![1.0; n],
            base,
            m_prior,
            beta_prior_var: config.beta_prior_var,
            aux: config.aux_components,
            update_beta: config.fixed_beta.is_none() && !config.empirical_bayes,
            update_m: config.fixed_m.is_none() && base.is_some(),
            epsilon: config.epsilon,
            target: config.epsilon_adapt_target,
            cluster_step: config.cluster_step,
            adapt_steps: 0,
            log_w: Vec::new(),
            slots: Vec::new(),
            sum_f: Vec::new(),
            sum_e: Vec::new(),
        })
    }

    /// Number of active cells, i.e. rows of the design.
    pub fn num_rows(&self) -> usize {
        self.exp_eta.len()
    }

    pub fn design(&self) -> &DesignMatrix {
        self.lik.design()
    }

    pub fn counts(&self) -> &[f64] {
        self.lik.counts()
    }

    pub fn pi(&self) -> f64 {
        self.pi
    }

    pub fn base(&self) -> Option<BaseMeasure> {
        self.base
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn set_epsilon(&mut self, epsilon: f64) {
        self.epsilon = epsilon;
    }

    pub fn cluster_step(&self) -> f64 {
        self.cluster_step
    }

    pub fn mass_prior(&self) -> GammaPrior {
        self.m_prior
    }

    pub fn updates_beta(&self) -> bool {
        self.update_beta
    }

    /// Replaces the observed counts, for joint-distribution checks.
    pub fn set_counts(&mut self, counts: &[u64]) -> Result<()> {
        self.lik.set_counts(counts)
    }

    /// Starting state: one cluster with zero log-effect under a DP,
    /// no random effects otherwise.
    pub fn initial_state(&self, beta: Vec<f64>, m: f64) -> DpState {
        match self.base {
            None => DpState::parametric(beta),
            Some(b) => {
                let mut s = DpState::single_cluster(beta, m, self.num_rows(), 0.0);
                if let BaseMeasure::Gaussian { mean_prior_mean, .. } = b {
                    s.base_hyper = Some((mean_prior_mean, 1.0));
                }
                s
            }
        }
    }

    /// Per-row rates `exp(w_k' beta + phi_k)` of a state.
    pub fn rates(&self, state: &DpState) -> Vec<f64> {
        let eta = self.lik.design().linear_predictor(&state.beta);
        let off = state.offsets(eta.len());
        eta.iter().zip(&off).map(|(e, o)| (e + o).exp()).collect()
    }

    fn refresh_eta(&mut self, beta: &[f64]) {
        self.eta = self.lik.design().linear_predictor(beta);
        for (x, e) in self.exp_eta.iter_mut().zip(&self.eta) {
            *x = e.exp();
        }
    }

    /// Log posterior of the fixed effects given per-row offsets, with its
    /// gradient and the metric (Fisher information plus prior precision).
    pub fn log_posterior_beta(
        &self,
        beta: &[f64],
        offsets: &[f64],
    ) -> (f64, DVector<f64>, DMatrix<f64>) {
        let ev = self.lik.evaluate(beta, Some(offsets));
        let prec = 1.0 / self.beta_prior_var;
        let b = DVector::from_column_slice(beta);
        let lp = ev.loglik - 0.5 * prec * b.norm_squared();
        let grad = ev.gradient - &b * prec;
        let mut metric = ev.information;
        for i in 0..beta.len() {
            metric[(i, i)] += prec;
        }
        (lp, grad, metric)
    }

    /// One full sweep. `adapt` enables step-size adaptation (burn-in only).
    pub fn sweep<R: Rng + ?Sized>(
        &mut self,
        state: &mut DpState,
        rng: &mut R,
        iteration: usize,
        adapt: bool,
    ) -> Result<SweepStats> {
        let mut stats = SweepStats::default();
        if adapt {
            self.adapt_steps += 1;
        }
        let gain = (self.adapt_steps.max(1) as f64).powf(-0.6);
        self.refresh_eta(&state.beta);
        match self.base {
            None => {}
            Some(BaseMeasure::Gamma { .. }) => self.neal3_update(state, rng, iteration)?,
            Some(BaseMeasure::Gaussian { .. }) => {
                let acc = self.neal5_update(state, rng, iteration)?;
                if adapt {
                    self.cluster_step = (self.cluster_step.ln()
                        + gain * (acc - CLUSTER_STEP_TARGET))
                        .clamp(-10.0, 3.0)
                        .exp();
                }
                stats.cluster_accept = Some(acc);
            }
        }
        if self.update_beta {
            let (_, p) = self.smmala_update(state, rng, iteration)?;
            if adapt {
                self.epsilon = (self.epsilon.ln() + gain * (p - self.target))
                    .clamp(-15.0, 3.0)
                    .exp();
            }
            stats.beta_accept_prob = Some(p);
        }
        if self.update_m && state.has_random_effects() {
            state.m = escobar_west_update(
                rng,
                state.m,
                state.num_clusters(),
                self.num_rows(),
                self.m_prior,
            );
        }
        self.check_state(state, iteration)?;
        Ok(stats)
    }

    fn check_state(&self, state: &DpState, iteration: usize) -> Result<()> {
        if let Some(i) = state.beta.iter().position(|b| !b.is_finite()) {
            return Err(Error::NonFinite {
                iteration,
                component: "beta",
                detail: format!("coefficient {i} is {}", state.beta[i]),
            });
        }
        for &s in state.clusters() {
            let v = state.cluster_value(s);
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    iteration,
                    component: "cluster values",
                    detail: format!("cluster of size {} has log-effect {v}", state.cluster_size(s)),
                });
            }
        }
        if state.has_random_effects() && !(state.m > 0.0 && state.m.is_finite()) {
            return Err(Error::NonFinite {
                iteration,
                component: "mass",
                detail: format!("m = {}", state.m),
            });
        }
        Ok(())
    }

    /// Simplified manifold Langevin step on the fixed effects. Returns
    /// whether the proposal was accepted and its acceptance probability.
    pub fn smmala_update<R: Rng + ?Sized>(
        &mut self,
        state: &mut DpState,
        rng: &mut R,
        iteration: usize,
    ) -> Result<(bool, f64)> {
        let q = state.beta.len();
        let offsets = state.offsets(self.num_rows());
        let (lp, grad, metric) = self.log_posterior_beta(&state.beta, &offsets);
        if !lp.is_finite() {
            return Err(Error::NonFinite {
                iteration,
                component: "smmala",
                detail: format!("log posterior at the current state is {lp}"),
            });
        }
        let chol = metric_cholesky(metric, iteration)?;
        let eps2 = self.epsilon * self.epsilon;
        let beta = DVector::from_column_slice(&state.beta);
        let mean = &beta + chol.solve(&grad) * (0.5 * eps2);
        let z = DVector::from_fn(q, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = chol
            .l()
            .tr_solve_lower_triangular(&z)
            .ok_or_else(|| Error::numeric("triangular solve failed"))?;
        let prop = &mean + x * self.epsilon;
        let u: f64 = rng.random();

        let (lp_new, grad_new, metric_new) = self.log_posterior_beta(prop.as_slice(), &offsets);
        if !lp_new.is_finite() {
            return Ok((false, 0.0));
        }
        let chol_new = metric_cholesky(metric_new, iteration)?;
        let mean_new = &prop + chol_new.solve(&grad_new) * (0.5 * eps2);
        let fwd = log_density(&chol, &(&prop - &mean), eps2);
        let bwd = log_density(&chol_new, &(&beta - &mean_new), eps2);
        let log_r = lp_new - lp + bwd - fwd;
        let p = if log_r >= 0.0 { 1.0 } else { log_r.exp() };
        if u < p {
            state.beta.copy_from_slice(prop.as_slice());
            self.refresh_eta(&state.beta);
            Ok((true, p))
        } else {
            Ok((false, p))
        }
    }

    /// Conjugate Gibbs pass under the Gamma base: each cell is reassigned
    /// with existing clusters weighted by size times the Poisson likelihood
    /// at the cluster value, and a new cluster by the mass times the
    /// Gamma-Poisson marginal. Cluster values are then redrawn from their
    /// Gamma conditionals.
    pub fn neal3_update<R: Rng + ?Sized>(
        &mut self,
        state: &mut DpState,
        rng: &mut R,
        iteration: usize,
    ) -> Result<()> {
        let (a, b) = match self.base {
            Some(BaseMeasure::Gamma { shape, rate }) => (shape, rate),
            _ => return Err(Error::invalid("conjugate cluster update needs a Gamma base")),
        };
        let ln_m = state.m.ln();
        let ln_gamma_a = ln_gamma(a);
        let a_ln_b = a * b.ln();
        for i in 0..self.num_rows() {
            let f = self.lik.counts()[i];
            let x = self.pi * self.exp_eta[i];
            let ln_x = self.ln_pi + self.eta[i];
            state.detach(i);
            self.slots.clear();
            self.slots.extend_from_slice(state.clusters());
            self.log_w.clear();
            for &s in &self.slots {
                let phi = state.cluster_value(s);
                self.log_w.push(
                    (state.cluster_size(s) as f64).ln() + f * (ln_x + phi) - x * phi.exp(),
                );
            }
            // the 1/f! factor is common to every option and omitted
            let marginal =
                ln_gamma(a + f) - ln_gamma_a + a_ln_b + f * ln_x - (a + f) * (b + x).ln();
            self.log_w.push(ln_m + marginal);
            let pick = sample_log_categorical(rng, &self.log_w);
            let slot = if pick == self.slots.len() {
                let omega = sample_gamma(rng, a + f, b + x);
                state.open_cluster(omega.ln())
            } else {
                self.slots[pick]
            };
            state.attach(i, slot);
        }
        self.cluster_sums(state);
        let slots: Vec<usize> = state.clusters().to_vec();
        for s in slots {
            let omega = sample_gamma(rng, a + self.sum_f[s], b + self.pi * self.sum_e[s]);
            if !(omega > 0.0 && omega.is_finite()) {
                return Err(Error::NonFinite {
                    iteration,
                    component: "cluster values",
                    detail: format!("omega draw {omega}"),
                });
            }
            state.set_cluster_value(s, omega.ln());
        }
        Ok(())
    }

    /// Metropolis reassignment with proposals from the conditional prior
    /// (an existing cluster through a uniformly chosen other cell, or a fresh
    /// value from the base), repeated `aux_components` times per cell; then
    /// random-walk updates of cluster values and conjugate updates of the
    /// base mean and variance. Returns the mean cluster-value acceptance.
    pub fn neal5_update<R: Rng + ?Sized>(
        &mut self,
        state: &mut DpState,
        rng: &mut R,
        iteration: usize,
    ) -> Result<f64> {
        let (mu0, v0, s0, sc0) = match self.base {
            Some(BaseMeasure::Gaussian {
                mean_prior_mean,
                mean_prior_var,
                var_prior_shape,
                var_prior_scale,
            }) => (mean_prior_mean, mean_prior_var, var_prior_shape, var_prior_scale),
            _ => return Err(Error::invalid("auxiliary cluster update needs a Gaussian base")),
        };
        let (alpha, sigma2) = state.base_hyper.unwrap_or((mu0, 1.0));
        let sd = sigma2.sqrt();
        let n = self.num_rows();
        let p_new = state.m / (n as f64 - 1.0 + state.m);
        for i in 0..n {
            let f = self.lik.counts()[i];
            let x = self.pi * self.exp_eta[i];
            for _ in 0..self.aux {
                let cur = state.cluster_of(i);
                let phi_cur = state.cluster_value(cur);
                let (target, phi_star) = if rng.random::<f64>() < p_new {
                    let z: f64 = rng.sample(StandardNormal);
                    (None, alpha + sd * z)
                } else {
                    let mut r = rng.random_range(0..n - 1);
                    if r >= i {
                        r += 1;
                    }
                    let s = state.cluster_of(r);
                    if s == cur {
                        continue;
                    }
                    (Some(s), state.cluster_value(s))
                };
                let log_r = f * (phi_star - phi_cur) - x * (phi_star.exp() - phi_cur.exp());
                if log_r >= 0.0 || rng.random::<f64>().ln() < log_r {
                    state.detach(i);
                    let slot = target.unwrap_or_else(|| state.open_cluster(phi_star));
                    state.attach(i, slot);
                }
            }
        }

        self.cluster_sums(state);
        let slots: Vec<usize> = state.clusters().to_vec();
        let mut accepted = 0usize;
        let step = self.cluster_step;
        for &s in &slots {
            let (sf, se) = (self.sum_f[s], self.pi * self.sum_e[s]);
            let log_target =
                |phi: f64| sf * phi - se * phi.exp() - (phi - alpha) * (phi - alpha) / (2.0 * sigma2);
            let phi = state.cluster_value(s);
            let z: f64 = rng.sample(StandardNormal);
            let prop = phi + step * z;
            let log_r = log_target(prop) - log_target(phi);
            if log_r >= 0.0 || rng.random::<f64>().ln() < log_r {
                state.set_cluster_value(s, prop);
                accepted += 1;
            }
        }

        let c = slots.len() as f64;
        let sum_phi: f64 = slots.iter().map(|&s| state.cluster_value(s)).sum();
        let var = 1.0 / (1.0 / v0 + c / sigma2);
        let mean = var * (mu0 / v0 + sum_phi / sigma2);
        let z: f64 = rng.sample(StandardNormal);
        let alpha_new = mean + var.sqrt() * z;
        let ss: f64 = slots
            .iter()
            .map(|&s| (state.cluster_value(s) - alpha_new).powi(2))
            .sum();
        let sigma2_new = 1.0 / sample_gamma(rng, s0 + 0.5 * c, sc0 + 0.5 * ss);
        if !(sigma2_new > 0.0 && sigma2_new.is_finite() && alpha_new.is_finite()) {
            return Err(Error::NonFinite {
                iteration,
                component: "base hyperparameters",
                detail: format!("alpha = {alpha_new}, sigma2 = {sigma2_new}"),
            });
        }
        state.base_hyper = Some((alpha_new, sigma2_new));
        Ok(accepted as f64 / c)
    }

    /// Per-slot sums of counts and of `exp(w_k' beta)`.
    fn cluster_sums(&mut self, state: &DpState) {
        let slots = state
            .clusters()
            .iter()
            .copied()
            .max()
            .map_or(0, |s| s + 1);
        self.sum_f.clear();
        self.sum_f.resize(slots, 0.0);
        self.sum_e.clear();
        self.sum_e.resize(slots, 0.0);
        for i in 0..self.num_rows() {
            let s = state.cluster_of(i);
            self.sum_f[s] += self.lik.counts()[i];
            self.sum_e[s] += self.exp_eta[i];
        }
    }
}

fn metric_cholesky(metric: DMatrix<f64>, iteration: usize) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(metric.clone()) {
        return Ok(c);
    }
    let n = metric.nrows();
    let jittered = metric + DMatrix::identity(n, n) * METRIC_JITTER;
    Cholesky::new(jittered).ok_or(Error::NonFinite {
        iteration,
        component: "smmala",
        detail: "metric tensor is not positive definite".into(),
    })
}

/// Gaussian log density of `d` under covariance `eps2 * M^-1`, up to
/// constants shared by the forward and reverse moves.
fn log_density(chol: &Cholesky<f64, Dyn>, d: &DVector<f64>, eps2: f64) -> f64 {
    let l = chol.l_dirty();
    let mut half_logdet = 0.0;
    for i in 0..l.nrows() {
        half_logdet += l[(i, i)].ln();
    }
    // d' M d = |L' d|^2
    let mut quad = 0.0;
    for j in 0..l.ncols() {
        let mut s = 0.0;
        for i in j..l.nrows() {
            s += l[(i, j)] * d[i];
        }
        quad += s * s;
    }
    half_logdet - quad / (2.0 * eps2)
}
