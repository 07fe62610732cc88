mod common;

use std::collections::HashMap;

use dprisk::loglinear::{c0_path_search, fit_ml, FitOptions, ModelSpec, PathConfig};
use dprisk::table::{
    generate_population, ContingencyTable, EffectDistribution, KeyVariable, RandomEffectLaw,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn vars(levels: &[usize]) -> Vec<KeyVariable> {
    levels
        .iter()
        .enumerate()
        .map(|(i, &l)| KeyVariable::with_level_count(format!("V{i}"), l).unwrap())
        .collect()
}

#[test]
fn hypergeometric_sample_means() {
    let spec = ModelSpec::independence(vars(&[3, 4])).unwrap();
    let beta = vec![0.0, 0.4, -0.3, 0.2, 0.8, -0.5];
    let pop = generate_population(&spec, &beta, &RandomEffectLaw::None, 10_000, None, 1)
        .unwrap()
        .table;
    let big_f = pop.population_counts().unwrap().to_vec();
    let reps = 400;
    let k = big_f.len();
    let mut sum = vec![0.0; k];
    let mut sq = vec![0.0; k];
    for r in 0..reps {
        let s = pop.draw_sample(0.05, r).unwrap();
        assert_eq!(s.sample_size(), (0.05 * pop.population_size().unwrap() as f64).round() as u64);
        for (i, &f) in s.sample_counts().iter().enumerate() {
            assert!(f <= big_f[i]);
            sum[i] += f as f64;
            sq[i] += (f * f) as f64;
        }
    }
    let n = pop.population_size().unwrap() as f64;
    let frac = (0.05 * n).round() / n;
    for i in 0..k {
        let m = sum[i] / reps as f64;
        let v = (sq[i] / reps as f64 - m * m) * reps as f64 / (reps - 1) as f64;
        let se = (v / reps as f64).sqrt();
        assert!((m - frac * big_f[i] as f64).abs() < 3.0 * se.max(1e-9), "cell {i}");
    }
}

/// Unit-level records, tabulated and recounted independently of the table
/// code.
#[test]
fn true_risks_match_a_recount() {
    let v = vars(&[4, 4, 3, 5, 2, 6]);
    let spec = ModelSpec::independence(v.clone()).unwrap();
    let mut beta = vec![0.0; spec.num_params()];
    for (i, b) in beta.iter_mut().enumerate() {
        *b = ((i * 37) % 11) as f64 / 6.0 - 0.8;
    }
    let law = RandomEffectLaw::Iid {
        effect: EffectDistribution::GammaOmega { shape: 0.5, rate: 0.5 },
    };
    let pop = generate_population(&spec, &beta, &law, 6000, None, 5).unwrap().table;
    let mut units: Vec<Vec<String>> = Vec::new();
    for cell in 0..pop.num_cells() {
        let idx = pop.multi_index(cell);
        for _ in 0..pop.population_counts().unwrap()[cell] {
            units.push(idx.iter().map(|i| i.to_string()).collect());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    units.shuffle(&mut rng);
    let n = units.len() / 20;
    let sample: Vec<Vec<String>> = units[..n].to_vec();

    let mut pop_count: HashMap<Vec<String>, u64> = HashMap::new();
    for u in &units {
        *pop_count.entry(u.clone()).or_default() += 1;
    }
    let mut samp_count: HashMap<Vec<String>, u64> = HashMap::new();
    for u in &sample {
        *samp_count.entry(u.clone()).or_default() += 1;
    }
    let mut tau1 = 0u64;
    let mut tau2 = 0.0;
    for (key, f) in &samp_count {
        if *f == 1 {
            let big_f = pop_count[key];
            if big_f == 1 {
                tau1 += 1;
            }
            tau2 += 1.0 / big_f as f64;
        }
    }

    let sample_table = ContingencyTable::tabulate(sample.iter().map(Ok), v.clone()).unwrap();
    let pop_table = ContingencyTable::tabulate(units.iter().map(Ok), v).unwrap();
    let mut t = sample_table.clone();
    t.set_population_counts(pop_table.sample_counts().to_vec()).unwrap();
    let r = t.true_risks().unwrap();
    assert_eq!(r.tau1, tau1);
    assert!((r.tau2 - tau2).abs() < 1e-9);
    assert!(r.tau1 as f64 <= r.tau2);
}

#[test]
fn generated_means_match_rates() {
    let spec = ModelSpec::independence(vars(&[3, 4])).unwrap();
    let beta = vec![0.0, 0.5, -0.5, 0.3, -0.2, 0.7];
    let reps = 500;
    let mut sums = vec![0.0; 12];
    let mut rates = Vec::new();
    for r in 0..reps {
        let p = generate_population(&spec, &beta, &RandomEffectLaw::None, 300, None, r).unwrap();
        for (s, f) in sums.iter_mut().zip(p.table.population_counts().unwrap()) {
            *s += *f as f64;
        }
        rates = p.rates;
    }
    for (s, l) in sums.iter().zip(&rates) {
        let m = s / reps as f64;
        let se = (l / reps as f64).sqrt();
        assert!((m - l).abs() < 4.0 * se);
    }
}

#[test]
fn independence_fit_recovers_generating_coefficients() {
    let spec = ModelSpec::independence(vars(&[3, 3])).unwrap();
    let beta = vec![0.0, 0.6, -0.4, -0.3, 0.5];
    let mut within = 0;
    let mut total = 0;
    for seed in 0..20 {
        let p = generate_population(&spec, &beta, &RandomEffectLaw::None, 5000, None, seed).unwrap();
        let mut t = p.table.clone();
        t.set_sampling_fraction(1.0).unwrap();
        let fit = fit_ml(&t, &spec, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        let se = fit.standard_errors.clone().unwrap();
        // intercept is rescaled by the target size; compare contrasts only
        for j in 1..beta.len() {
            total += 1;
            if (fit.beta[j] - beta[j]).abs() < 3.0 * se[j] {
                within += 1;
            }
        }
    }
    assert!(within as f64 >= 0.95 * total as f64, "{within}/{total}");
}

#[test]
fn path_search_finds_the_planted_interaction() {
    let v = vars(&[4, 3, 3, 2]);
    let truth = ModelSpec::independence(v.clone())
        .unwrap()
        .with_interaction(0, 2)
        .unwrap();
    let mut beta = vec![0.0; truth.num_params()];
    beta[1] = 0.3;
    beta[4] = -0.4;
    beta[6] = 0.5;
    let q0 = ModelSpec::independence(v.clone()).unwrap().num_params();
    for (i, b) in beta[q0..].iter_mut().enumerate() {
        *b = if i % 2 == 0 { 1.2 } else { -1.0 };
    }
    let pop = generate_population(&truth, &beta, &RandomEffectLaw::None, 20_000, None, 3)
        .unwrap()
        .table;
    let sample = pop.draw_sample(0.2, 4).unwrap();
    let base = ModelSpec::independence(v).unwrap();
    let res = c0_path_search(&sample, &base, &PathConfig::default()).unwrap();
    assert!(!res.steps.is_empty());
    assert_eq!(res.steps[0].term, "V0*V2");
    assert_eq!(res.specs[1].interaction_set(), vec![(0, 2)]);
    let text = serde_json::to_string(&res).unwrap();
    assert!(text.contains("\"gamma\""));
}

#[test]
fn census_sample_is_identity() {
    let spec = ModelSpec::independence(vars(&[2, 3])).unwrap();
    let p = generate_population(&spec, &[0.0; 4], &RandomEffectLaw::None, 100, None, 1).unwrap();
    let s = p.table.draw_sample(1.0, 7).unwrap();
    assert_eq!(s.sample_counts(), p.table.population_counts().unwrap());
}
