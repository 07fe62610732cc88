#![allow(dead_code)]

use dprisk::loglinear::ModelSpec;
use dprisk::table::{ContingencyTable, KeyVariable};

/// One variable with one level per count; a lone count gets a structural
/// zero beside it so that the variable has two levels.
pub fn one_way(counts: &[u64], pi: f64) -> (ContingencyTable, ModelSpec) {
    let mut c = counts.to_vec();
    let mask = (c.len() == 1).then(|| vec![false, true]);
    if mask.is_some() {
        c.push(0);
    }
    let v = vec![KeyVariable::with_level_count("A", c.len()).unwrap()];
    let t = ContingencyTable::from_counts(v.clone(), c, None, mask, pi).unwrap();
    (t, ModelSpec::independence(v).unwrap())
}

pub fn intercept_only(counts: &[u64], pi: f64) -> (ContingencyTable, ModelSpec) {
    let (t, s) = one_way(counts, pi);
    let spec = ModelSpec::intercept_only(s.variables().to_vec()).unwrap();
    (t, spec)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Standard error of the mean of an autocorrelated series by batch means.
pub fn batch_se(xs: &[f64], batches: usize) -> f64 {
    let b = xs.len() / batches;
    let means: Vec<f64> = (0..batches).map(|i| mean(&xs[i * b..(i + 1) * b])).collect();
    (var(&means) / batches as f64).sqrt()
}
