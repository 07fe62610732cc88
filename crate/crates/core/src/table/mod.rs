//! Contingency tables spanned by categorical key variables.
//!
//! Cells are stored densely in row-major order over the declared variables
//! (the last variable varies fastest). Structural-zero cells stay in the
//! index space so that multi-indices are stable, but they are skipped by
//! every likelihood and risk sum through [`ContingencyTable::active_cells`].

mod io;
mod synth;

pub use io::{metadata_path, read_mask, read_microdata, TableMetadata};
pub use synth::{generate_population, EffectDistribution, RandomEffectLaw, SyntheticPopulation};

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyVariable {
    name: String,
    levels: Vec<String>,
}

impl KeyVariable {
    pub fn new(name: impl Into<String>, levels: Vec<String>) -> Result<Self> {
        let name = name.into();
        if name.is_empty() || name.contains(['*', '+', ',', ':']) || name.trim() != name {
            return Err(Error::invalid(format!("invalid variable name {name:?}")));
        }
        if levels.len() < 2 {
            return Err(Error::invalid(format!(
                "variable {name} needs at least two levels, got {}",
                levels.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for l in &levels {
            if !seen.insert(l.as_str()) {
                return Err(Error::invalid(format!(
                    "variable {name} has duplicate level {l:?}"
                )));
            }
        }
        Ok(Self { name, levels })
    }

    /// A variable whose levels are labelled `0..count`.
    pub fn with_level_count(name: impl Into<String>, count: usize) -> Result<Self> {
        Self::new(name, (0..count).map(|i| i.to_string()).collect())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn levels(&self) -> &[String] {
        &self.levels
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level_index(&self, label: &str) -> Option<usize> {
        self.levels.iter().position(|l| l == label)
    }
}

/// Parses compact variable declarations of the form
/// `AGE:12,SEX:M|F,ESEC:4`: a count gives levels `0..count`, a `|`-separated
/// list gives explicit labels.
pub fn parse_variable_declarations(decl: &str) -> Result<Vec<KeyVariable>> {
    let mut out = Vec::new();
    for item in decl.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (name, levels) = item
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("declaration {item:?} lacks ':'")))?;
        let name = name.trim();
        let levels = levels.trim();
        let var = match levels.parse::<usize>() {
            Ok(count) => KeyVariable::with_level_count(name, count)?,
            Err(_) => KeyVariable::new(
                name,
                levels.split('|').map(|s| s.trim().to_string()).collect(),
            )?,
        };
        out.push(var);
    }
    if out.is_empty() {
        return Err(Error::EmptyInput("no variables declared".into()));
    }
    check_unique_names(&out)?;
    Ok(out)
}

pub(crate) fn check_unique_names(vars: &[KeyVariable]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for v in vars {
        if !seen.insert(v.name()) {
            return Err(Error::invalid(format!("duplicate variable {}", v.name())));
        }
    }
    Ok(())
}

/// One cell of a table: its multi-index and frequencies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellRecord {
    pub index: Vec<usize>,
    pub f: u64,
    pub big_f: Option<u64>,
    pub structural_zero: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrueRisks {
    pub tau1: u64,
    pub tau2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContingencyTable {
    variables: Vec<KeyVariable>,
    strides: Vec<usize>,
    sample: Vec<u64>,
    population: Option<Vec<u64>>,
    structural_zero: Vec<bool>,
    pi: f64,
}

impl ContingencyTable {
    /// An all-zero table with sampling fraction 1.
    pub fn empty(variables: Vec<KeyVariable>) -> Result<Self> {
        if variables.is_empty() {
            return Err(Error::invalid("a table needs at least one variable"));
        }
        check_unique_names(&variables)?;
        let mut cells: usize = 1;
        for v in &variables {
            cells = cells
                .checked_mul(v.num_levels())
                .ok_or_else(|| Error::invalid("cell count overflows usize"))?;
        }
        let mut strides = vec![1; variables.len()];
        for i in (0..variables.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * variables[i + 1].num_levels();
        }
        Ok(Self {
            variables,
            strides,
            sample: vec![0; cells],
            population: None,
            structural_zero: vec![false; cells],
            pi: 1.0,
        })
    }

    /// Builds a table from dense row-major vectors, validating every invariant.
    pub fn from_counts(
        variables: Vec<KeyVariable>,
        sample: Vec<u64>,
        population: Option<Vec<u64>>,
        structural_zero: Option<Vec<bool>>,
        pi: f64,
    ) -> Result<Self> {
        let mut t = Self::empty(variables)?;
        let k = t.num_cells();
        if sample.len() != k {
            return Err(Error::invalid(format!(
                "expected {k} sample counts, got {}",
                sample.len()
            )));
        }
        t.sample = sample;
        if let Some(mask) = structural_zero {
            if mask.len() != k {
                return Err(Error::invalid("structural-zero mask has wrong length"));
            }
            t.structural_zero = mask;
        }
        if let Some(pop) = population {
            if pop.len() != k {
                return Err(Error::invalid("population counts have wrong length"));
            }
            t.population = Some(pop);
        }
        t.set_sampling_fraction(pi)?;
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        for k in 0..self.num_cells() {
            if self.structural_zero[k] {
                if self.sample[k] != 0 {
                    return Err(Error::invalid(format!(
                        "structural-zero cell {:?} has sample count {}",
                        self.multi_index(k),
                        self.sample[k]
                    )));
                }
                if self.population.as_ref().is_some_and(|p| p[k] != 0) {
                    return Err(Error::invalid(format!(
                        "structural-zero cell {:?} has nonzero population count",
                        self.multi_index(k)
                    )));
                }
            }
            if let Some(p) = &self.population {
                if p[k] < self.sample[k] {
                    return Err(Error::invalid(format!(
                        "cell {:?}: population count {} below sample count {}",
                        self.multi_index(k),
                        p[k],
                        self.sample[k]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn variables(&self) -> &[KeyVariable] {
        &self.variables
    }

    /// Total number of cells including structural zeros.
    pub fn num_cells(&self) -> usize {
        self.sample.len()
    }

    /// Number of cells that enter likelihood and risk sums.
    pub fn num_active_cells(&self) -> usize {
        self.structural_zero.iter().filter(|z| !**z).count()
    }

    pub fn active_cells(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_cells()).filter(move |&k| !self.structural_zero[k])
    }

    pub fn is_structural_zero(&self, cell: usize) -> bool {
        self.structural_zero[cell]
    }

    pub fn structural_zero_mask(&self) -> &[bool] {
        &self.structural_zero
    }

    pub fn sample_counts(&self) -> &[u64] {
        &self.sample
    }

    pub fn population_counts(&self) -> Option<&[u64]> {
        self.population.as_deref()
    }

    pub fn sampling_fraction(&self) -> f64 {
        self.pi
    }

    pub fn set_sampling_fraction(&mut self, pi: f64) -> Result<()> {
        if !(pi > 0.0 && pi <= 1.0) {
            return Err(Error::invalid(format!(
                "sampling fraction must lie in (0, 1], got {pi}"
            )));
        }
        self.pi = pi;
        Ok(())
    }

    /// Declares extra structural zeros; fails if any of them holds a count.
    pub fn apply_structural_zeros(&mut self, mask: &[bool]) -> Result<()> {
        if mask.len() != self.num_cells() {
            return Err(Error::invalid("structural-zero mask has wrong length"));
        }
        for (k, &z) in mask.iter().enumerate() {
            if z {
                self.structural_zero[k] = true;
            }
        }
        self.validate()
    }

    /// Attaches population counts, e.g. when a sample was drawn elsewhere.
    pub fn set_population_counts(&mut self, population: Vec<u64>) -> Result<()> {
        if population.len() != self.num_cells() {
            return Err(Error::invalid("population counts have wrong length"));
        }
        self.population = Some(population);
        self.validate()
    }

    pub fn sample_size(&self) -> u64 {
        self.sample.iter().sum()
    }

    pub fn population_size(&self) -> Option<u64> {
        self.population.as_ref().map(|p| p.iter().sum())
    }

    /// Cell indices with `f_k = 1`.
    pub fn sample_uniques(&self) -> Vec<usize> {
        self.active_cells().filter(|&k| self.sample[k] == 1).collect()
    }

    pub fn cell_index(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.variables.len() {
            return Err(Error::invalid(format!(
                "multi-index has {} entries for {} variables",
                index.len(),
                self.variables.len()
            )));
        }
        let mut k = 0;
        for ((i, v), s) in index.iter().zip(&self.variables).zip(&self.strides) {
            if *i >= v.num_levels() {
                return Err(Error::invalid(format!(
                    "level {i} out of range for {} ({} levels)",
                    v.name(),
                    v.num_levels()
                )));
            }
            k += i * s;
        }
        Ok(k)
    }

    pub fn multi_index(&self, cell: usize) -> Vec<usize> {
        let mut out = vec![0; self.variables.len()];
        self.multi_index_into(cell, &mut out);
        out
    }

    pub fn multi_index_into(&self, cell: usize, out: &mut [usize]) {
        let mut rest = cell;
        for (i, s) in self.strides.iter().enumerate() {
            out[i] = rest / s;
            rest %= s;
        }
    }

    pub fn cell(&self, cell: usize) -> CellRecord {
        CellRecord {
            index: self.multi_index(cell),
            f: self.sample[cell],
            big_f: self.population.as_ref().map(|p| p[cell]),
            structural_zero: self.structural_zero[cell],
        }
    }

    /// Cross-classifies categorical records. Each record lists one label per
    /// variable, in variable order. Record numbers in errors start at 1.
    pub fn tabulate<I, R, S>(records: I, variables: Vec<KeyVariable>) -> Result<Self>
    where
        I: IntoIterator<Item = Result<R>>,
        R: AsRef<[S]>,
        S: AsRef<str>,
    {
        let mut table = Self::empty(variables)?;
        let lookups: Vec<HashMap<&str, usize>> = table
            .variables
            .iter()
            .map(|v| {
                v.levels()
                    .iter()
                    .enumerate()
                    .map(|(i, l)| (l.as_str(), i))
                    .collect()
            })
            .collect();
        let mut counts = vec![0u64; table.num_cells()];
        let mut n_records = 0usize;
        for (row, rec) in records.into_iter().enumerate() {
            let rec = rec?;
            let rec = rec.as_ref();
            if rec.len() != table.variables.len() {
                return Err(Error::invalid(format!(
                    "record {}: expected {} fields, got {}",
                    row + 1,
                    table.variables.len(),
                    rec.len()
                )));
            }
            let mut k = 0;
            for (j, label) in rec.iter().enumerate() {
                let label = label.as_ref();
                let level = lookups[j].get(label).ok_or_else(|| Error::UnknownLevel {
                    record: row + 1,
                    variable: table.variables[j].name().to_string(),
                    label: label.to_string(),
                })?;
                k += level * table.strides[j];
            }
            counts[k] += 1;
            n_records += 1;
        }
        if n_records == 0 {
            return Err(Error::EmptyInput("no records to tabulate".into()));
        }
        table.sample = counts;
        Ok(table)
    }

    /// Sums the table over every variable not listed in `keep` (given by
    /// position, in the order the reduced table should use).
    pub fn marginalize(&self, keep: &[usize]) -> Result<Self> {
        if keep.is_empty() {
            return Err(Error::invalid("marginal table needs at least one variable"));
        }
        for &v in keep {
            if v >= self.variables.len() {
                return Err(Error::invalid(format!("no variable at position {v}")));
            }
        }
        let vars: Vec<KeyVariable> = keep.iter().map(|&v| self.variables[v].clone()).collect();
        let mut out = Self::empty(vars)?;
        out.pi = self.pi;
        let mut pop = self.population.as_ref().map(|_| vec![0u64; out.num_cells()]);
        let mut idx = vec![0; self.variables.len()];
        let mut sub = vec![0; keep.len()];
        for k in 0..self.num_cells() {
            self.multi_index_into(k, &mut idx);
            for (s, &v) in sub.iter_mut().zip(keep) {
                *s = idx[v];
            }
            let j = out.cell_index(&sub)?;
            out.sample[j] += self.sample[k];
            if let (Some(p), Some(src)) = (pop.as_mut(), self.population.as_ref()) {
                p[j] += src[k];
            }
        }
        out.population = pop;
        Ok(out)
    }

    /// Draws a simple random sample without replacement of `round(pi * N)`
    /// units from the population counts. The result keeps the population
    /// counts and records `pi`.
    pub fn draw_sample(&self, pi: f64, seed: u64) -> Result<Self> {
        if !(pi > 0.0 && pi <= 1.0) {
            return Err(Error::invalid(format!(
                "sampling fraction must lie in (0, 1], got {pi}"
            )));
        }
        let pop = self
            .population
            .as_ref()
            .ok_or_else(|| Error::invalid("drawing a sample needs population counts"))?;
        let total: u64 = pop.iter().sum();
        let n = (pi * total as f64).round() as u64;
        let total = usize::try_from(total)
            .map_err(|_| Error::invalid("population too large to sample"))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // unit-level simple random sampling without replacement; units are
        // laid out cell by cell so sorted units map to cells in one sweep
        let mut units = rand::seq::index::sample(&mut rng, total, n as usize).into_vec();
        units.sort_unstable();
        let mut sample = vec![0u64; pop.len()];
        let mut upper = 0usize;
        let mut k = 0usize;
        for u in units {
            while u >= upper + pop[k] as usize {
                upper += pop[k] as usize;
                k += 1;
            }
            sample[k] += 1;
        }
        let mut out = self.clone();
        out.sample = sample;
        out.pi = pi;
        Ok(out)
    }

    /// The realised risks: sample uniques that are population uniques, and
    /// the expected number of correct matches of sample uniques.
    pub fn true_risks(&self) -> Result<TrueRisks> {
        let pop = self
            .population
            .as_ref()
            .ok_or_else(|| Error::invalid("true risks need population counts"))?;
        let mut tau1 = 0u64;
        let mut tau2 = 0.0;
        for k in self.active_cells() {
            if self.sample[k] == 1 {
                let big_f = pop[k];
                if big_f == 0 {
                    return Err(Error::invalid(format!(
                        "cell {:?} is a sample unique with zero population count",
                        self.multi_index(k)
                    )));
                }
                if big_f == 1 {
                    tau1 += 1;
                }
                tau2 += 1.0 / big_f as f64;
            }
        }
        Ok(TrueRisks { tau1, tau2 })
    }

    pub(crate) fn replace_sample(&mut self, sample: Vec<u64>) {
        debug_assert_eq!(sample.len(), self.num_cells());
        self.sample = sample;
    }
}
