use std::path::PathBuf;

use clap::Args;
use cpmdid::simulation::{true_values, run_replications, MttMethod, ReplicationConfig, ReplicationSummary, Scenario, TrueValues};
use cpmdid::{
    bootstrap, compare_links, counterfactual_cdfs, encode_support, fit_cpm, full_report, load_csv, omer_residuals, Dataset,
    EstimandRequest, FitOptions, FittedCpm, Link,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{
    load_scenario_file, resolve, CommonArgs, Resolved, RunConfig, RunSection, Settings, DEFAULT_ORACLE_SIZE,
    DEFAULT_REPLICATIONS, DEFAULT_SEED,
};
use crate::output::{num, opt_num, OutputDir, Provenance};
use crate::Failure;

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Reuse a model file written by `fit` instead of refitting.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub no_att: bool,
    #[arg(long)]
    pub no_mtt: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Bundled scenario name.
    #[arg(long, conflicts_with = "scenario_file")]
    pub scenario: Option<String>,
    /// TOML file with a `[scenario]` table and an optional `[run]` table.
    #[arg(long)]
    pub scenario_file: Option<PathBuf>,
    #[arg(long)]
    pub replications: Option<usize>,
    /// Comma-separated subject counts.
    #[arg(long, value_delimiter = ',')]
    pub n_grid: Option<Vec<usize>>,
    /// Pseudo-population size for the true values.
    #[arg(long)]
    pub oracle_size: Option<usize>,
    /// Also summarise the linear-model ATT comparator.
    #[arg(long)]
    pub att_prime: bool,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Links to compare, comma-separated (default: all three).
    #[arg(long, value_delimiter = ',')]
    pub links: Option<Vec<Link>>,
}

fn setup(common: &CommonArgs) -> Result<(RunConfig, Resolved), Failure> {
    let file = RunConfig::load(common.config.as_deref())?;
    let r = resolve(common, &file)?;
    Ok((file, r))
}

/// Runs `f` on a pool bounded by `threads`.
fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, Failure> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n);
    }
    let pool = b.build().map_err(|e| Failure::usage(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

fn load(r: &Resolved) -> Result<Dataset<f64>, Failure> {
    Ok(load_csv(r.input()?, &r.columns)?)
}

fn require_converged(fit: &FittedCpm<f64>) -> Result<(), Failure> {
    if fit.converged {
        return Ok(());
    }
    Err(Failure::numerical(format!(
        "model fit did not converge after {} iterations: {}",
        fit.iterations,
        fit.message.as_deref().unwrap_or("no diagnostic message")
    )))
}

/// Layout of `model.json`.
#[derive(Serialize, Deserialize)]
struct ModelFile<P> {
    provenance: P,
    options: FitOptions<f64>,
    model: FittedCpm<f64>,
}

pub fn fit(args: &FitArgs) -> Result<(), Failure> {
    let (_, r) = setup(&args.common)?;
    let data = load(&r)?;
    let fit = fit_cpm(&data, &r.fit)?;
    let settings = Settings {
        command: "fit",
        columns: Some(&r.columns),
        fit: Some(&r.fit),
        request: None,
        bootstrap: None,
        extra: None,
    };
    let prov = Provenance::new(&settings, Some(r.input()?), None)?;
    let out = OutputDir::create(&r.output_dir)?;
    let path = out.write_json(
        "model.json",
        &ModelFile {
            provenance: &prov,
            options: r.fit.clone(),
            model: fit.clone(),
        },
    )?;
    println!(
        "{} fit: {} rows, {} categories, loglik {:.6}, {} after {} iterations",
        fit.link,
        fit.n_obs,
        fit.n_categories(),
        fit.loglik,
        if fit.converged { "converged" } else { "NOT converged" },
        fit.iterations
    );
    for (name, b) in fit.coefficient_names.iter().zip(&fit.betas) {
        println!("  {name:<12} {b:>12.6}");
    }
    println!("wrote {}", path.display());
    require_converged(&fit)
}

fn load_model(path: &std::path::Path, data: &Dataset<f64>, options: &FitOptions<f64>) -> Result<FittedCpm<f64>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("cannot read '{}': {e}", path.display())))?;
    let file: ModelFile<serde_json::Value> =
        serde_json::from_str(&text).map_err(|e| Failure::usage(format!("'{}' is not a model file: {e}", path.display())))?;
    let mut enc = encode_support(data)?;
    if let Some((l, u)) = file.options.censor_bounds {
        enc = enc.censored(l, u)?;
    }
    let fit = file.model;
    if fit.support != enc.support || fit.n_obs != data.len() || fit.betas.len() != data.n_covariates() + 3 {
        return Err(Failure::usage(format!(
            "model '{}' was not fitted to this input (support, row count or covariates differ)",
            path.display()
        )));
    }
    if fit.link != options.link {
        eprintln!("note: using the model's {} link", fit.link);
    }
    Ok(fit)
}

pub fn estimate(args: &EstimateArgs) -> Result<(), Failure> {
    let (file, r) = setup(&args.common)?;
    let data = load(&r)?;
    let e = &file.estimate;
    let request = EstimandRequest {
        quantiles: r.quantiles.clone().or(e.quantiles.clone()).unwrap_or_else(|| vec![0.25, 0.5, 0.75]),
        thresholds: r.thresholds.clone().or(e.thresholds.clone()).unwrap_or_default(),
        att: !args.no_att && e.att.unwrap_or(true),
        mtt: !args.no_mtt && e.mtt.unwrap_or(true),
    };
    request.validate()?;
    if request.is_empty() {
        return Err(Failure::usage("no estimands requested"));
    }
    let seed = r.seed.unwrap_or(DEFAULT_SEED);
    let spec = r.bootstrap_spec(seed)?;
    let model_path = args.model.clone().or(e.model.clone());
    let fit = match &model_path {
        Some(p) => load_model(p, &data, &r.fit)?,
        None => fit_cpm(&data, &r.fit)?,
    };
    require_converged(&fit)?;
    let options = FitOptions { link: fit.link, ..r.fit.clone() };
    let pair = counterfactual_cdfs(&fit, &data)?;
    let mut report = full_report(&pair, &request)?;
    let intervals = match &spec {
        Some(s) => Some(with_threads(r.threads, || bootstrap(&data, &options, &request, s))??),
        None => None,
    };
    if let Some(iv) = &intervals {
        report.set_intervals(&iv.intervals)?;
    }

    let settings = Settings {
        command: "estimate",
        columns: Some(&r.columns),
        fit: Some(&options),
        request: Some(&request),
        bootstrap: spec,
        extra: None,
    };
    let prov = Provenance::new(&settings, Some(r.input()?), spec.map(|s| s.seed))?;
    let out = OutputDir::create(&r.output_dir)?;

    let entries = report.entries();
    let rows: Vec<Vec<String>> = entries
        .iter()
        .map(|en| {
            vec![
                en.label.kind.name().to_string(),
                opt_num(en.label.argument),
                num(en.estimate.value),
                opt_num(en.estimate.ci.map(|c| c.0)),
                opt_num(en.estimate.ci.map(|c| c.1)),
            ]
        })
        .collect();
    out.write_csv("estimates.csv", &prov, &["estimand", "argument", "estimate", "ci_low", "ci_high"], &rows)?;

    let cdf_rows: Vec<Vec<String>> = pair
        .support()
        .iter()
        .zip(pair.f1.values().iter().zip(pair.f0.values()))
        .map(|(y, (a, b))| vec![num(*y), num(*a), num(*b)])
        .collect();
    out.write_csv("counterfactual_cdfs.csv", &prov, &["y", "f1", "f0"], &cdf_rows)?;

    let json_entries: Vec<_> = entries
        .iter()
        .map(|en| {
            json!({
                "estimand": en.label.kind.name(),
                "argument": en.label.argument,
                "estimate": en.estimate.value,
                "ci_low": en.estimate.ci.map(|c| c.0),
                "ci_high": en.estimate.ci.map(|c| c.1),
            })
        })
        .collect();
    out.write_json(
        "estimates.json",
        &json!({
            "provenance": prov,
            "fit": {
                "link": fit.link,
                "loglik": fit.loglik,
                "converged": fit.converged,
                "iterations": fit.iterations,
                "n_obs": fit.n_obs,
                "n_categories": fit.n_categories(),
                "treated_post_rows": pair.n11,
            },
            "bootstrap": intervals.as_ref().map(|iv| json!({
                "replicates": iv.successful + iv.failed,
                "successful": iv.successful,
                "failed": iv.failed,
                "first_failure": iv.first_failure,
                "confidence": r.confidence,
                "seed": seed,
            })),
            "estimates": json_entries,
        }),
    )?;

    for en in &entries {
        match en.estimate.ci {
            Some((lo, hi)) => println!("{:<10} {:>12.6}  [{lo:.6}, {hi:.6}]", en.label.to_string(), en.estimate.value),
            None => println!("{:<10} {:>12.6}", en.label.to_string(), en.estimate.value),
        }
    }
    if let Some(iv) = &intervals {
        if iv.failed > 0 {
            eprintln!("warning: {} of {} bootstrap replicates failed and were dropped", iv.failed, iv.failed + iv.successful);
        }
    }
    println!("wrote {}", r.output_dir.display());
    Ok(())
}

fn simulation_request(r: &Resolved, scenario: &Scenario) -> EstimandRequest<f64> {
    let mut req = scenario.default_request();
    if let Some(q) = &r.quantiles {
        req.quantiles = q.clone();
    }
    if let Some(t) = &r.thresholds {
        req.thresholds = t.clone();
    }
    req
}

fn summary_rows(s: &ReplicationSummary) -> Vec<Vec<String>> {
    s.estimands
        .iter()
        .chain(&s.att_prime)
        .map(|e| {
            vec![
                s.scenario.clone(),
                s.n_subjects.to_string(),
                e.label.clone(),
                num(e.truth),
                num(e.mean_estimate),
                if e.bias_is_percent { num(e.bias) } else { String::new() },
                opt_num(e.coverage),
                num(e.mc_se),
                num(e.mean_estimate - e.truth),
                num(e.empirical_sd),
                num(e.mse),
                e.replicates.to_string(),
                s.failed.to_string(),
            ]
        })
        .collect()
}

pub fn simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let (file, r) = setup(&args.common)?;
    let cfg = &file.simulate;
    let scenario_file = args.scenario_file.clone().or(cfg.scenario_file.clone());
    let (mut scenario, from_file) = match (&args.scenario, &scenario_file) {
        (Some(name), _) => (Scenario::by_name(name)?, RunSection::default()),
        (None, Some(path)) => {
            let f = load_scenario_file(path)?;
            (f.scenario, f.run)
        }
        (None, None) => (Scenario::by_name(cfg.scenario.as_deref().unwrap_or("paper_fig1"))?, RunSection::default()),
    };
    if let Some(seed) = r.seed {
        scenario.seed = seed;
    }
    if args.common.link.is_some() || file.fit.link.is_some() {
        scenario.fit_link = r.fit.link;
    }
    scenario.validate()?;
    let pick = |a: Option<usize>, b: Option<usize>, c: Option<usize>| a.or(b).or(c);
    let replications =
        pick(args.replications, cfg.replications, from_file.replications).unwrap_or(DEFAULT_REPLICATIONS);
    let oracle_size = pick(args.oracle_size, cfg.oracle_size, from_file.oracle_size).unwrap_or(DEFAULT_ORACLE_SIZE);
    let n_grid = args
        .n_grid
        .clone()
        .or(cfg.n_grid.clone())
        .or(from_file.n_grid.clone())
        .unwrap_or_else(|| vec![scenario.n_subjects]);
    if n_grid.is_empty() || n_grid.contains(&0) {
        return Err(Failure::usage("--n-grid needs positive subject counts"));
    }
    let boot = pick(args.common.bootstrap, file.bootstrap.or(cfg.bootstrap), from_file.bootstrap);
    let confidence = args.common.confidence.or(file.confidence).or(cfg.confidence).or(from_file.confidence).unwrap_or(0.95);
    let r = Resolved {
        bootstrap: boot,
        confidence,
        ..r
    };
    // Per-replicate seeds are derived inside the engine; this one is unused.
    let spec = r.bootstrap_spec(0)?;
    let att_prime = args.att_prime || cfg.att_prime.or(from_file.att_prime).unwrap_or(false);
    let request = simulation_request(&r, &scenario);
    request.validate()?;
    let config = ReplicationConfig {
        replications,
        bootstrap: spec,
        request: request.clone(),
        att_prime,
    };

    let (truth, summaries) = with_threads(r.threads, || -> Result<(TrueValues, Vec<ReplicationSummary>), Failure> {
        let truth = true_values(&scenario, oracle_size, &request, MttMethod::Exact)?;
        let mut out = Vec::with_capacity(n_grid.len());
        for &n in &n_grid {
            let sc = Scenario {
                n_subjects: n,
                ..scenario.clone()
            };
            out.push(run_replications(&sc, &config, &truth)?);
        }
        Ok((truth, out))
    })??;

    let extra = json!({ "scenario": scenario, "n_grid": n_grid, "oracle_size": oracle_size, "mtt_truth": "exact" });
    let settings = Settings {
        command: "simulate",
        columns: None,
        fit: None,
        request: Some(&config.request),
        bootstrap: config.bootstrap,
        extra: Some(json!({ "replications": replications, "att_prime": att_prime, "setup": extra })),
    };
    let prov = Provenance::new(&settings, None, Some(scenario.seed))?;
    let out = OutputDir::create(&r.output_dir)?;
    let rows: Vec<Vec<String>> = summaries.iter().flat_map(summary_rows).collect();
    out.write_csv(
        "simulation.csv",
        &prov,
        &[
            "scenario", "n", "estimand", "truth", "mean_estimate", "pct_bias", "coverage", "mc_se", "bias", "empirical_sd",
            "mse", "replicates", "failed",
        ],
        &rows,
    )?;
    let truth_json: Vec<_> = truth
        .entries()
        .iter()
        .map(|e| json!({ "estimand": e.label.to_string(), "truth": e.estimate.value }))
        .collect();
    out.write_json(
        "simulation.json",
        &json!({
            "provenance": prov,
            "scenario": scenario,
            "replications": replications,
            "bootstrap": config.bootstrap.map(|b| json!({ "replicates": b.replicates, "confidence": b.confidence })),
            "oracle_size": oracle_size,
            "truth": truth_json,
            "results": summaries,
        }),
    )?;

    for s in &summaries {
        println!("{} n={} ({} replicates, {} failed)", s.scenario, s.n_subjects, s.replications, s.failed);
        for e in s.estimands.iter().chain(&s.att_prime) {
            let bias = if e.bias_is_percent { format!("{:+.2}%", e.bias) } else { format!("{:+.4}", e.bias) };
            let cov = e.coverage.map(|c| format!("{:.1}%", 100.0 * c)).unwrap_or_else(|| "-".into());
            println!("  {:<10} truth {:>10.4}  mean {:>10.4}  bias {:>9}  coverage {:>6}", e.label, e.truth, e.mean_estimate, bias, cov);
        }
    }
    println!("wrote {}", r.output_dir.display());
    Ok(())
}

pub fn diagnose(args: &DiagnoseArgs) -> Result<(), Failure> {
    let (file, r) = setup(&args.common)?;
    let data = load(&r)?;
    let links = args.links.clone().or(file.diagnose.links.clone()).unwrap_or_else(|| Link::ALL.to_vec());
    let fit = fit_cpm(&data, &r.fit)?;
    require_converged(&fit).map_err(|f| Failure {
        message: format!("refusing to compute residuals: {}", f.message),
        ..f
    })?;
    let residuals = omer_residuals(&fit, &data)?;
    let comparison = compare_links(&data, &links, &r.fit)?;

    let settings = Settings {
        command: "diagnose",
        columns: Some(&r.columns),
        fit: Some(&r.fit),
        request: None,
        bootstrap: None,
        extra: Some(json!({ "links": links })),
    };
    let prov = Provenance::new(&settings, Some(r.input()?), None)?;
    let out = OutputDir::create(&r.output_dir)?;
    let mut buf = prov.csv_header().into_bytes();
    residuals.write_csv(&mut buf)?;
    out.write("residuals.csv", &buf)?;
    out.write_json(
        "links.json",
        &json!({
            "provenance": prov,
            "residual_link": fit.link,
            "fits": comparison.fits,
            "preferred": comparison.preferred,
        }),
    )?;
    for f in &comparison.fits {
        let ll = f.loglik.map(|l| format!("{l:.4}")).unwrap_or_else(|| "failed".into());
        println!("{:<8} loglik {ll}{}", f.link.to_string(), if f.converged { "" } else { " (not converged)" });
    }
    println!("preferred: {}", comparison.preferred);
    println!("wrote {} residual rows to {}", residuals.len(), r.output_dir.display());
    Ok(())
}
