use std::fs;
use std::path::{Path, PathBuf};

use dprisk::dpmcmc::{
    read_draws_csv, run_chains, write_draws_csv, BaseMeasure, PosteriorDraws, SamplerConfig,
    TrackScope,
};
use dprisk::loglinear::{c0_path_search, fit_ml, ModelSpec, PathConfig};
use dprisk::risk::{risk_report, write_per_cell_csv, write_quantiles_csv, DEFAULT_QUANTILE_LEVELS};
use dprisk::selection::{rank_models, render_table, run_two_stage, SelectionConfig};
use dprisk::table::{
    generate_population, parse_variable_declarations, read_mask, read_microdata,
    ContingencyTable, EffectDistribution, KeyVariable, RandomEffectLaw,
};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use serde_json::Value;

use crate::config::RunConfig;
use crate::{
    CliError, Command, FitDpArgs, FitMlArgs, GenerateArgs, ReportArgs, RiskArgs, SampleArgs,
    SamplerArgs, SearchArgs, SelectArgs, TabulateArgs,
};

type Res = Result<(), CliError>;

pub fn dispatch(command: Command, cfg: &RunConfig) -> Res {
    match command {
        Command::Tabulate(a) => tabulate(a, cfg),
        Command::Sample(a) => sample(a, cfg),
        Command::Generate(a) => generate(a, cfg),
        Command::FitMl(a) => fit_ml_cmd(a, cfg),
        Command::SearchC0(a) => search(a, cfg),
        Command::FitDp(a) => fit_dp(a, cfg),
        Command::Risk(a) => risk(a, cfg),
        Command::Select(a) => select(a, cfg),
        Command::Report(a) => report(a),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Res {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn output_dir(flag: Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = flag
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("dprisk-out"));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn load_table(path: &Path) -> Result<ContingencyTable, CliError> {
    Ok(ContingencyTable::read(path)?)
}

fn model_spec(flag: Option<&str>, cfg: &RunConfig, vars: &[KeyVariable]) -> Result<ModelSpec, CliError> {
    let text = flag.or(cfg.model.as_deref()).unwrap_or("I");
    Ok(ModelSpec::parse(text, vars.to_vec())?)
}

fn declared_variables(flag: Option<&str>, cfg: &RunConfig) -> Result<Option<Vec<KeyVariable>>, CliError> {
    flag.or(cfg.variables.as_deref())
        .map(parse_variable_declarations)
        .transpose()
        .map_err(CliError::from)
}

fn parse_floats(text: &str, what: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| CliError::input(format!("{what}: {s:?} is not a number")))
        })
        .collect()
}

/// Merges sampler flags over the config file. Returns the sampler settings,
/// base measure and chain count.
fn sampler_settings(
    args: &SamplerArgs,
    cfg: &RunConfig,
) -> Result<(SamplerConfig, Option<BaseMeasure>, usize), CliError> {
    let mut sc = cfg.sampler.clone();
    sc.seed = cfg.seed(args.seed)?;
    if let Some(v) = args.burn_in {
        sc.burn_in = v;
    }
    if let Some(v) = args.draws {
        sc.draws = v;
    }
    if let Some(v) = args.thin {
        sc.thin = v;
    }
    if let Some(v) = args.epsilon {
        sc.epsilon = v;
    }
    if let Some(v) = args.beta_prior_var {
        sc.beta_prior_var = v;
    }
    if let Some(v) = args.aux_components {
        sc.aux_components = v;
    }
    if args.fixed_m.is_some() {
        sc.fixed_m = args.fixed_m;
    }
    if args.empirical_bayes {
        sc.empirical_bayes = true;
    }
    sc.validate()?;
    let base = cfg.base_measure(args.base.as_deref())?;
    let chains = args.chains.or(cfg.chains).unwrap_or(1);
    if chains == 0 {
        return Err(CliError::input("--chains must be at least 1"));
    }
    Ok((sc, base, chains))
}

fn tabulate(a: TabulateArgs, cfg: &RunConfig) -> Res {
    let vars = declared_variables(a.variables.as_deref(), cfg)?;
    let mut table = match &a.input {
        Some(input) => read_microdata(input, vars)?,
        None => {
            let vars = vars.ok_or_else(|| {
                CliError::input("tabulate needs --input, --variables or both")
            })?;
            ContingencyTable::empty(vars)?
        }
    };
    if let Some(mask) = a.mask.as_ref().or(cfg.mask.as_ref()) {
        let m = read_mask(mask, table.variables())?;
        table.apply_structural_zeros(&m)?;
    }
    if let Some(pi) = a.pi.or(cfg.pi) {
        table.set_sampling_fraction(pi)?;
    }
    table.write(&a.output)?;
    println!("cells\t{}", table.num_cells());
    println!("active_cells\t{}", table.num_active_cells());
    println!("sample_size\t{}", table.sample_size());
    println!("sample_uniques\t{}", table.sample_uniques().len());
    Ok(())
}

fn sample(a: SampleArgs, cfg: &RunConfig) -> Res {
    let seed = cfg.seed(a.seed)?;
    let pi = a
        .pi
        .or(cfg.pi)
        .ok_or_else(|| CliError::input("sample needs --pi"))?;
    let population = load_table(&a.table)?;
    let drawn = population.draw_sample(pi, seed)?;
    drawn.write(&a.output)?;
    println!("sample_size\t{}", drawn.sample_size());
    println!("sample_uniques\t{}", drawn.sample_uniques().len());
    Ok(())
}

fn parse_law(text: &str) -> Result<RandomEffectLaw, CliError> {
    let bad = || CliError::input(format!("cannot parse random-effect law {text:?}"));
    if text == "none" {
        return Ok(RandomEffectLaw::None);
    }
    let (kind, params) = text.split_once(':').ok_or_else(bad)?;
    let p = parse_floats(params, "random-effect law")?;
    let law = match (kind, p.as_slice()) {
        ("iid-gamma", &[shape, rate]) => RandomEffectLaw::Iid {
            effect: EffectDistribution::GammaOmega { shape, rate },
        },
        ("iid-normal", &[mean, sd]) => RandomEffectLaw::Iid {
            effect: EffectDistribution::NormalPhi { mean, sd },
        },
        ("dp-gamma", &[mass, shape, rate]) => RandomEffectLaw::Dp {
            mass,
            effect: EffectDistribution::GammaOmega { shape, rate },
        },
        ("dp-normal", &[mass, mean, sd]) => RandomEffectLaw::Dp {
            mass,
            effect: EffectDistribution::NormalPhi { mean, sd },
        },
        _ => return Err(bad()),
    };
    Ok(law)
}

fn generate(a: GenerateArgs, cfg: &RunConfig) -> Res {
    let seed = cfg.seed(a.seed)?;
    let vars = declared_variables(a.variables.as_deref(), cfg)?
        .ok_or_else(|| CliError::input("generate needs --variables"))?;
    let spec = model_spec(a.model.as_deref(), cfg, &vars)?;
    let law = parse_law(&a.effects)?;
    let beta = match &a.beta {
        Some(text) => parse_floats(text, "--beta")?,
        None => {
            if !(a.beta_sd >= 0.0 && a.beta_sd.is_finite()) {
                return Err(CliError::input("--beta-sd must be finite and non-negative"));
            }
            // separate stream from the population draw
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_be7a_u64);
            let normal = Normal::new(0.0, a.beta_sd).map_err(|e| CliError::input(e.to_string()))?;
            let mut b: Vec<f64> = (0..spec.num_params()).map(|_| normal.sample(&mut rng)).collect();
            b[0] = 0.0;
            b
        }
    };
    let mask = match a.mask.as_ref().or(cfg.mask.as_ref()) {
        Some(p) => Some(read_mask(p, &vars)?),
        None => None,
    };
    let pop = generate_population(&spec, &beta, &law, a.population, mask.as_deref(), seed)?;
    pop.table.write(&a.output)?;
    write_json(
        &a.output.with_extension("generator.json"),
        &serde_json::json!({
            "model": spec.shorthand(),
            "coefficients": spec.coefficient_names().into_iter().zip(&beta)
                .map(|(n, b)| serde_json::json!({"name": n, "value": b}))
                .collect::<Vec<_>>(),
            "effects": law,
            "population_size": pop.table.sample_size(),
            "seed": seed,
        }),
    )?;
    println!("cells\t{}", pop.table.num_cells());
    println!("population_size\t{}", pop.table.sample_size());
    Ok(())
}

#[derive(Serialize)]
struct FitReport<'a> {
    model: String,
    converged: bool,
    iterations: usize,
    loglik: f64,
    max_gradient: f64,
    diagnostic: Option<&'a str>,
    coefficients: Vec<Coefficient>,
}

#[derive(Serialize)]
struct Coefficient {
    name: String,
    estimate: f64,
    standard_error: Option<f64>,
}

fn fit_ml_cmd(a: FitMlArgs, cfg: &RunConfig) -> Res {
    let table = load_table(&a.table)?;
    let spec = model_spec(a.model.as_deref(), cfg, table.variables())?;
    let fit = fit_ml(&table, &spec, &cfg.search.fit)?;
    let names = spec.coefficient_names();
    let report = FitReport {
        model: spec.shorthand(),
        converged: fit.converged,
        iterations: fit.iterations,
        loglik: fit.loglik,
        max_gradient: fit.max_gradient,
        diagnostic: fit.diagnostic.as_deref(),
        coefficients: names
            .into_iter()
            .enumerate()
            .map(|(i, name)| Coefficient {
                name,
                estimate: fit.beta[i],
                standard_error: fit.standard_errors.as_ref().map(|s| s[i]),
            })
            .collect(),
    };
    match a.output {
        Some(path) => write_json(&path, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    if !fit.converged {
        return Err(CliError {
            code: 4,
            message: format!(
                "ML fit did not converge: {}",
                fit.diagnostic.as_deref().unwrap_or("iteration limit")
            ),
        });
    }
    Ok(())
}

fn path_settings(
    grid: Option<&str>,
    max_steps: Option<usize>,
    allow_nondecomposable: bool,
    cfg: &RunConfig,
) -> Result<PathConfig, CliError> {
    let mut pc = cfg.search.clone();
    if let Some(g) = grid {
        pc.gamma_grid = Some(parse_floats(g, "--gamma-grid")?);
    }
    if let Some(s) = max_steps {
        pc.max_steps = s;
    }
    if allow_nondecomposable {
        pc.decomposable_only = false;
    }
    Ok(pc)
}

fn search(a: SearchArgs, cfg: &RunConfig) -> Res {
    let table = load_table(&a.table)?;
    let base = model_spec(a.model.as_deref(), cfg, table.variables())?;
    let pc = path_settings(a.gamma_grid.as_deref(), a.max_steps, a.allow_nondecomposable, cfg)?;
    let result = c0_path_search(&table, &base, &pc)?;
    match a.output {
        Some(path) => write_json(&path, &result)?,
        None => println!("{}", serde_json::to_string_pretty(&result)?),
    }
    for spec in &result.specs {
        eprintln!("{spec}");
    }
    Ok(())
}

fn sample_draws(
    table: &ContingencyTable,
    spec: &ModelSpec,
    args: &SamplerArgs,
    cfg: &RunConfig,
    track_all: bool,
) -> Result<(PosteriorDraws, u64), CliError> {
    let (mut sc, base, chains) = sampler_settings(args, cfg)?;
    if track_all {
        sc.track = TrackScope::All;
    }
    info!("running {chains} chain(s) of {spec}");
    let draws = run_chains(table, spec, base, &sc, chains)?;
    Ok((draws, sc.seed))
}

fn write_lambda_mean(path: &Path, draws: &PosteriorDraws) -> Res {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::input(e.to_string()))?;
    let io = |e: csv::Error| CliError::input(e.to_string());
    w.write_record(["cell", "lambda_mean"]).map_err(io)?;
    for (cell, m) in draws.active_cells.iter().zip(&draws.lambda_mean) {
        w.write_record([cell.to_string(), m.to_string()]).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

fn fit_dp(a: FitDpArgs, cfg: &RunConfig) -> Res {
    let table = load_table(&a.table)?;
    let spec = model_spec(a.model.as_deref(), cfg, table.variables())?;
    let (draws, _) = sample_draws(&table, &spec, &a.sampler, cfg, a.track_all)?;
    let dir = output_dir(a.output_dir, cfg)?;
    write_draws_csv(&dir.join("draws.csv"), &draws)?;
    write_json(
        &dir.join("diagnostics.json"),
        &serde_json::json!({ "model": spec.shorthand(), "trace": draws.summary() }),
    )?;
    write_lambda_mean(&dir.join("lambda_mean.csv"), &draws)?;
    println!("draws\t{}", draws.num_draws);
    println!("tracked_cells\t{}", draws.cells.len());
    Ok(())
}

fn risk(a: RiskArgs, cfg: &RunConfig) -> Res {
    let table = load_table(&a.table)?;
    if table.sample_uniques().is_empty() {
        return Err(dprisk::Error::Degenerate("the sample has no unique cells".into()).into());
    }
    let spec = model_spec(a.model.as_deref(), cfg, table.variables())?;
    let (draws, seed) = match &a.from_draws {
        Some(path) => (read_draws_csv(path)?, cfg.seed(a.sampler.seed)?),
        None => sample_draws(&table, &spec, &a.sampler, cfg, false)?,
    };
    let levels = cfg
        .quantile_levels
        .clone()
        .unwrap_or_else(|| DEFAULT_QUANTILE_LEVELS.to_vec());
    // the simulation estimator gets its own stream
    let report = risk_report(&spec.shorthand(), &draws, &table, &levels, seed.wrapping_add(1))?;
    let dir = output_dir(a.output_dir, cfg)?;
    write_json(&dir.join("risk.json"), &report)?;
    write_per_cell_csv(&dir.join("per_cell.csv"), &table, &report.per_cell)?;
    write_quantiles_csv(&dir.join("quantiles.csv"), &report.quantiles_star)?;
    write_quantiles_csv(&dir.join("quantiles_sim.csv"), &report.quantiles_sim)?;
    println!("tau1\t{}", report.tau1_star.mean);
    println!("tau2\t{}", report.tau2_star.mean);
    if let Some(t) = report.truth {
        println!("true_tau1\t{}", t.tau1);
        println!("true_tau2\t{}", t.tau2);
    }
    Ok(())
}

fn select(a: SelectArgs, cfg: &RunConfig) -> Res {
    let table = load_table(&a.table)?;
    if table.sample_uniques().is_empty() {
        return Err(dprisk::Error::Degenerate("the sample has no unique cells".into()).into());
    }
    let base_spec = model_spec(a.model.as_deref(), cfg, table.variables())?;
    let (sampler, base, chains) = sampler_settings(&a.sampler, cfg)?;
    let base = match base {
        Some(b) => b,
        None => return Err(CliError::input("selection needs a random-effect base (gamma or gaussian)")),
    };
    let defaults = SelectionConfig::default();
    let config = SelectionConfig {
        path: path_settings(a.gamma_grid.as_deref(), a.max_steps, false, cfg)?,
        sampler,
        base,
        chains,
        patience: a.patience.or(cfg.selection.patience).unwrap_or(defaults.patience),
        report_parametric: a.report_parametric
            || cfg.selection.report_parametric.unwrap_or(defaults.report_parametric),
        near_tie: cfg.selection.near_tie.unwrap_or(defaults.near_tie),
    };
    let run = run_two_stage(&table, &base_spec, &config)?;
    let dir = output_dir(a.output_dir, cfg)?;
    write_json(&dir.join("selection.json"), &run)?;
    let mut all = run.scores.clone();
    all.extend(run.parametric.iter().cloned());
    let ranking = rank_models(&all, config.near_tie);
    fs::write(dir.join("selection.txt"), render_table(&all, &ranking, run.truth))?;
    println!("{}", run.chosen_spec);
    Ok(())
}

fn num(v: &Value) -> String {
    match v.as_f64() {
        Some(x) => format!("{x:.4}"),
        None => "-".into(),
    }
}

fn report(a: ReportArgs) -> Res {
    let text = fs::read_to_string(&a.input)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", a.input.display())))?;
    let v: Value = serde_json::from_str(&text)?;
    if v.get("scores").is_some() {
        println!("chosen model: {}", v["chosen_spec"].as_str().unwrap_or("?"));
        println!("{:<32} {:>9} {:>12} {:>12} {:>10} {:>10}", "model", "candidate", "C1", "WAIC_U", "tau1", "tau2");
        let rows = v["scores"].as_array().into_iter().flatten()
            .chain(v["parametric"].as_array().into_iter().flatten());
        for s in rows {
            println!(
                "{:<32} {:>9} {:>12} {:>12} {:>10} {:>10}",
                s["model"].as_str().unwrap_or("?"),
                s["candidate"].as_bool().map_or("-", |c| if c { "yes" } else { "no" }),
                num(&s["c1"]),
                num(&s["waic_u"]),
                num(&s["tau1_star_mean"]),
                num(&s["tau2_star_mean"]),
            );
        }
        if let Some(t) = v["truth"].as_object() {
            println!("true tau1 {}  true tau2 {}", t["tau1"], num(&t["tau2"]));
        }
    } else if v.get("tau1_star").is_some() {
        println!("model: {}", v["model"].as_str().unwrap_or("?"));
        println!("draws: {}  sample uniques: {}", v["draws"], v["sample_uniques"]);
        for key in ["tau1_star", "tau2_star", "tau1_sim", "tau2_sim"] {
            let e = &v[key];
            println!("{key:<10} mean {}  median {}  sd {}", num(&e["mean"]), num(&e["median"]), num(&e["sd"]));
        }
        if let Some(t) = v["truth"].as_object() {
            println!("true tau1 {}  true tau2 {}", t["tau1"], num(&t["tau2"]));
        }
    } else {
        return Err(CliError::input(format!(
            "{} is neither a selection nor a risk report",
            a.input.display()
        )));
    }
    Ok(())
}
