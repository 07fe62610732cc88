//! MCMC for the Poisson log-linear model with Dirichlet-process random
//! effects on the cell rates.
//!
//! Each sweep updates the cluster structure (conjugate Gibbs under a Gamma
//! base, auxiliary-proposal Metropolis under a Gaussian base), then the fixed
//! effects with a simplified manifold Langevin step, then the DP mass.

mod chain;
mod io;
mod sampler;
mod state;

pub use chain::{
    run_chain, run_chains, ChainSummary, PosteriorDraws, SeriesSummary, TraceSummary,
};
pub use io::{read_draws_csv, write_draws_csv};
pub use sampler::{escobar_west_update, gamma_poisson_log_marginal, Sampler, SweepStats};
pub use state::DpState;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Base measure of the Dirichlet process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseMeasure {
    /// `omega = exp(phi) ~ Gamma(shape, rate)`.
    Gamma { shape: f64, rate: f64 },
    /// `phi ~ N(alpha, sigma2)` with `alpha ~ N(mean_prior_mean,
    /// mean_prior_var)` and `sigma2 ~ InvGamma(var_prior_shape,
    /// var_prior_scale)`.
    Gaussian {
        mean_prior_mean: f64,
        mean_prior_var: f64,
        var_prior_shape: f64,
        var_prior_scale: f64,
    },
}

impl BaseMeasure {
    pub fn default_gamma() -> Self {
        Self::Gamma { shape: 1.0, rate: 0.1 }
    }

    pub fn default_gaussian() -> Self {
        Self::Gaussian {
            mean_prior_mean: 0.0,
            mean_prior_var: 10.0,
            var_prior_shape: 1.0,
            var_prior_scale: 1.0,
        }
    }

    /// Default prior on the DP mass paired with this base.
    pub fn default_mass_prior(&self) -> GammaPrior {
        match self {
            Self::Gamma { .. } => GammaPrior { shape: 1.0, rate: 0.1 },
            Self::Gaussian { .. } => GammaPrior { shape: 1.0, rate: 1.0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Gamma { shape, rate } => pos(shape) && pos(rate),
            Self::Gaussian {
                mean_prior_mean,
                mean_prior_var,
                var_prior_shape,
                var_prior_scale,
            } => {
                mean_prior_mean.is_finite()
                    && pos(mean_prior_var)
                    && pos(var_prior_shape)
                    && pos(var_prior_scale)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid base measure {self:?}")))
        }
    }
}

fn pos(x: f64) -> bool {
    x > 0.0 && x.is_finite()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPrior {
    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }
}

/// Which cells get their per-draw rates stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackScope {
    #[default]
    SampleUniques,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub burn_in: usize,
    /// Number of retained draws `H`.
    pub draws: usize,
    pub thin: usize,
    /// Initial Langevin step size.
    pub epsilon: f64,
    pub epsilon_adapt_target: f64,
    /// Prior on the DP mass; defaults depend on the base measure.
    pub m_prior: Option<GammaPrior>,
    pub beta_prior_var: f64,
    /// Reassignment repetitions per cell under the Gaussian base.
    pub aux_components: usize,
    /// Initial random-walk scale for Gaussian-base cluster values.
    pub cluster_step: f64,
    pub seed: u64,
    pub fixed_m: Option<f64>,
    /// Holds the fixed effects at these values.
    pub fixed_beta: Option<Vec<f64>>,
    /// Starting fixed effects; the ML fit is used when absent.
    pub init_beta: Option<Vec<f64>>,
    /// Holds the fixed effects at their ML estimate.
    pub empirical_bayes: bool,
    pub track: TrackScope,
    pub record_partitions: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            burn_in: 5000,
            draws: 5000,
            thin: 2,
            epsilon: 0.5,
            epsilon_adapt_target: 0.574,
            m_prior: None,
            beta_prior_var: 10.0,
            aux_components: 3,
            cluster_step: 0.5,
            seed: 0,
            fixed_m: None,
            fixed_beta: None,
            init_beta: None,
            empirical_bayes: false,
            track: TrackScope::SampleUniques,
            record_partitions: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.draws == 0 {
            return Err(Error::invalid("at least one retained draw is required"));
        }
        if self.thin == 0 {
            return Err(Error::invalid("thinning interval must be at least 1"));
        }
        if !pos(self.epsilon) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        if !(self.epsilon_adapt_target > 0.0 && self.epsilon_adapt_target < 1.0) {
            return Err(Error::invalid("adaptation target must lie in (0, 1)"));
        }
        if !pos(self.beta_prior_var) {
            return Err(Error::invalid("beta prior variance must be positive"));
        }
        if self.aux_components == 0 {
            return Err(Error::invalid("aux_components must be at least 1"));
        }
        if !pos(self.cluster_step) {
            return Err(Error::invalid("cluster_step must be positive"));
        }
        if let Some(p) = &self.m_prior {
            if !pos(p.shape) || !pos(p.rate) {
                return Err(Error::invalid("mass prior parameters must be positive"));
            }
        }
        if let Some(m) = self.fixed_m {
            if !pos(m) {
                return Err(Error::invalid("fixed m must be positive"));
            }
        }
        Ok(())
    }
}
