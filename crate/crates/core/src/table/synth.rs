//! Synthetic populations drawn from a log-linear model, optionally with
//! cell-level random effects.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ContingencyTable;
use crate::error::{Error, Result};
use crate::loglinear::ModelSpec;
use crate::math::{sample_gamma, sample_poisson};

/// Law of a multiplicative cell effect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EffectDistribution {
    /// `omega ~ Gamma(shape, rate)` used directly as the multiplier.
    GammaOmega { shape: f64, rate: f64 },
    /// `phi ~ N(mean, sd^2)` with multiplier `exp(phi)`.
    NormalPhi { mean: f64, sd: f64 },
}

impl EffectDistribution {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::GammaOmega { shape, rate } => shape > 0.0 && rate > 0.0,
            Self::NormalPhi { mean, sd } => mean.is_finite() && sd >= 0.0 && sd.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid effect distribution {self:?}")))
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::GammaOmega { shape, rate } => sample_gamma(rng, shape, rate),
            Self::NormalPhi { mean, sd } => {
                if sd == 0.0 {
                    mean.exp()
                } else {
                    Normal::new(mean, sd).expect("valid normal").sample(rng).exp()
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum RandomEffectLaw {
    None,
    /// An independent effect per cell.
    Iid { effect: EffectDistribution },
    /// Effects shared within clusters of a Chinese-restaurant partition.
    Dp { mass: f64, effect: EffectDistribution },
}

#[derive(Debug, Clone)]
pub struct SyntheticPopulation {
    /// Census table: sample counts equal the population counts and `pi = 1`.
    pub table: ContingencyTable,
    /// Generating Poisson means, zero on structural zeros.
    pub rates: Vec<f64>,
    /// Multiplicative random effect per cell (1 without random effects).
    pub effects: Vec<f64>,
}

/// Draws `F_k ~ Poisson(lambda_k)` independently, with
/// `lambda_k = c * exp(w_k' beta) * effect_k` and `c` chosen so the expected
/// population size is `n_target`.
pub fn generate_population(
    spec: &ModelSpec,
    beta: &[f64],
    law: &RandomEffectLaw,
    n_target: u64,
    structural_zero: Option<&[bool]>,
    seed: u64,
) -> Result<SyntheticPopulation> {
    if n_target == 0 {
        return Err(Error::invalid("target population size must be positive"));
    }
    if beta.len() != spec.num_params() {
        return Err(Error::invalid(format!(
            "{} coefficients given for a model with {} parameters",
            beta.len(),
            spec.num_params()
        )));
    }
    let mut table = ContingencyTable::empty(spec.variables().to_vec())?;
    if let Some(mask) = structural_zero {
        table.apply_structural_zeros(mask)?;
    }
    let k = table.num_cells();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut effects = vec![1.0; k];
    match law {
        RandomEffectLaw::None => {}
        RandomEffectLaw::Iid { effect } => {
            effect.validate()?;
            for cell in table.active_cells() {
                effects[cell] = effect.draw(&mut rng);
            }
        }
        RandomEffectLaw::Dp { mass, effect } => {
            effect.validate()?;
            if !(*mass > 0.0 && mass.is_finite()) {
                return Err(Error::invalid("DP mass must be positive"));
            }
            let mut values: Vec<f64> = Vec::new();
            let mut sizes: Vec<f64> = Vec::new();
            let mut seated = 0.0;
            for cell in table.active_cells() {
                let u: f64 = rng.random::<f64>() * (seated + mass);
                let mut acc = 0.0;
                let mut chosen = None;
                for (j, &n) in sizes.iter().enumerate() {
                    acc += n;
                    if u < acc {
                        chosen = Some(j);
                        break;
                    }
                }
                let j = chosen.unwrap_or_else(|| {
                    values.push(effect.draw(&mut rng));
                    sizes.push(0.0);
                    values.len() - 1
                });
                sizes[j] += 1.0;
                seated += 1.0;
                effects[cell] = values[j];
            }
        }
    }

    let mut rates = vec![0.0; k];
    let mut index = vec![0usize; spec.variables().len()];
    let mut cols = Vec::new();
    for cell in table.active_cells() {
        table.multi_index_into(cell, &mut index);
        spec.nonzero_columns(&index, &mut cols);
        let eta: f64 = cols.iter().map(|&c| beta[c as usize]).sum();
        rates[cell] = eta.exp() * effects[cell];
    }
    let total: f64 = rates.iter().sum();
    if !total.is_finite() || total <= 0.0 {
        return Err(Error::numeric(format!(
            "generating rates sum to {total}; check the coefficients"
        )));
    }
    let scale = n_target as f64 / total;
    let mut pop = vec![0u64; k];
    for cell in 0..k {
        rates[cell] *= scale;
        if !rates[cell].is_finite() {
            return Err(Error::numeric(format!(
                "non-finite rate at cell {:?}",
                table.multi_index(cell)
            )));
        }
        pop[cell] = sample_poisson(&mut rng, rates[cell]);
    }
    table.set_population_counts(pop.clone())?;
    table.replace_sample(pop);
    Ok(SyntheticPopulation {
        table,
        rates,
        effects,
    })
}
