//! Run configuration: an optional TOML file overridden by command-line flags.

use std::path::{Path, PathBuf};

use clap::Args;
use cpmdid::simulation::Scenario;
use cpmdid::{BootstrapSpec, ColumnMapping, EstimandRequest, FitOptions, Link};
use serde::{Deserialize, Serialize};

use crate::Failure;

pub const DEFAULT_SEED: u64 = 20240101;
pub const DEFAULT_REPLICATIONS: usize = 500;
pub const DEFAULT_ORACLE_SIZE: usize = 1_000_000;

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input CSV with a header row.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for bootstrap and simulation (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// probit, logit or cloglog.
    #[arg(long)]
    pub link: Option<Link>,
    #[arg(long)]
    pub outcome: Option<String>,
    /// Group indicator column (1 = treated).
    #[arg(long)]
    pub group: Option<String>,
    /// Period indicator column (1 = post).
    #[arg(long)]
    pub period: Option<String>,
    #[arg(long)]
    pub cluster: Option<String>,
    /// Comma-separated covariate columns.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// `L,U`: collapse outcomes below L or above U into the end categories.
    #[arg(long, value_parser = parse_bounds)]
    pub censor_bounds: Option<(f64, f64)>,
    /// Bootstrap replicates; omit for point estimates only.
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long)]
    pub confidence: Option<f64>,
    /// Quantile levels, as `a,b,c` or `start:stop:step`.
    #[arg(long, value_parser = parse_grid)]
    pub quantiles: Option<Grid>,
    /// PTT thresholds, as `a,b,c` or `start:stop:step`.
    #[arg(long, value_parser = parse_grid)]
    pub thresholds: Option<Grid>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid(pub Vec<f64>);

fn parse_bounds(s: &str) -> Result<(f64, f64), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected L,U but got '{s}'"));
    }
    let l: f64 = parts[0].trim().parse().map_err(|_| format!("bad lower bound '{}'", parts[0]))?;
    let u: f64 = parts[1].trim().parse().map_err(|_| format!("bad upper bound '{}'", parts[1]))?;
    Ok((l, u))
}

/// `a,b,c` or an inclusive `start:stop:step` range.
pub fn parse_grid(s: &str) -> Result<Grid, String> {
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| format!("'{t}' is not a number"));
    if s.contains(':') {
        let p: Vec<&str> = s.split(':').collect();
        if p.len() != 3 {
            return Err(format!("range '{s}' must be start:stop:step"));
        }
        let (a, b, h) = (num(p[0])?, num(p[1])?, num(p[2])?);
        if !(h > 0.0) || b < a {
            return Err(format!("range '{s}' needs step > 0 and stop >= start"));
        }
        let n = ((b - a) / h + 1e-9).floor() as usize + 1;
        // Round away the accumulated representation error, e.g. 0.15000000000000002.
        let v = (0..n).map(|i| ((a + i as f64 * h) * 1e12).round() / 1e12).collect();
        return Ok(Grid(v));
    }
    s.split(',').filter(|t| !t.trim().is_empty()).map(num).collect::<Result<_, _>>().map(Grid)
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnsSection {
    pub outcome: Option<String>,
    pub group: Option<String>,
    pub period: Option<String>,
    pub cluster: Option<String>,
    pub covariates: Option<Vec<String>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub link: Option<Link>,
    pub tolerance: Option<f64>,
    pub max_iterations: Option<usize>,
    pub censor_bounds: Option<(f64, f64)>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateSection {
    pub quantiles: Option<Vec<f64>>,
    pub thresholds: Option<Vec<f64>>,
    pub att: Option<bool>,
    pub mtt: Option<bool>,
    pub model: Option<PathBuf>,
}

/// Run settings that may also appear in a scenario file's `[run]` table.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub scenario: Option<String>,
    pub scenario_file: Option<PathBuf>,
    pub replications: Option<usize>,
    pub n_grid: Option<Vec<usize>>,
    pub oracle_size: Option<usize>,
    pub att_prime: Option<bool>,
    pub bootstrap: Option<usize>,
    pub confidence: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseSection {
    pub links: Option<Vec<Link>>,
}

/// Layout of the `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub bootstrap: Option<usize>,
    pub confidence: Option<f64>,
    pub columns: ColumnsSection,
    pub fit: FitSection,
    pub estimate: EstimateSection,
    pub simulate: RunSection,
    pub diagnose: DiagnoseSection,
}

/// Layout of a `--scenario-file`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub scenario: Scenario,
    #[serde(default)]
    pub run: RunSection,
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("cannot read '{}': {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Failure::usage(format!("invalid TOML in '{}': {e}", path.display())))
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        match path {
            Some(p) => read_toml(p),
            None => Ok(RunConfig::default()),
        }
    }
}

pub fn load_scenario_file(path: &Path) -> Result<ScenarioFile, Failure> {
    read_toml(path)
}

/// Settings common to every command after merging file and flags.
pub struct Resolved {
    pub input: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub columns: ColumnMapping,
    pub fit: FitOptions<f64>,
    pub bootstrap: Option<usize>,
    pub confidence: f64,
    pub quantiles: Option<Vec<f64>>,
    pub thresholds: Option<Vec<f64>>,
}

pub fn resolve(args: &CommonArgs, file: &RunConfig) -> Result<Resolved, Failure> {
    let d = ColumnMapping::default();
    let c = &file.columns;
    let columns = ColumnMapping {
        outcome: args.outcome.clone().or(c.outcome.clone()).unwrap_or(d.outcome),
        group: args.group.clone().or(c.group.clone()).unwrap_or(d.group),
        period: args.period.clone().or(c.period.clone()).unwrap_or(d.period),
        cluster: args.cluster.clone().or(c.cluster.clone()),
        covariates: args.covariates.clone().or(c.covariates.clone()).unwrap_or_default(),
    };
    let base = FitOptions::<f64>::new(args.link.or(file.fit.link).unwrap_or(Link::Probit));
    let fit = FitOptions {
        tolerance: args.tolerance.or(file.fit.tolerance).unwrap_or(base.tolerance),
        max_iterations: args.max_iterations.or(file.fit.max_iterations).unwrap_or(base.max_iterations),
        censor_bounds: args.censor_bounds.or(file.fit.censor_bounds),
        ..base
    };
    fit.validate()?;
    if args.threads == Some(0) || file.threads == Some(0) {
        return Err(Failure::usage("--threads must be at least 1"));
    }
    let confidence = args.confidence.or(file.confidence).unwrap_or(0.95);
    Ok(Resolved {
        input: args.input.clone().or(file.input.clone()),
        output_dir: args.output_dir.clone().or(file.output_dir.clone()).unwrap_or_else(|| PathBuf::from(".")),
        seed: args.seed.or(file.seed),
        threads: args.threads.or(file.threads),
        columns,
        fit,
        bootstrap: args.bootstrap.or(file.bootstrap),
        confidence,
        quantiles: args.quantiles.clone().map(|g| g.0),
        thresholds: args.thresholds.clone().map(|g| g.0),
    })
}

impl Resolved {
    pub fn input(&self) -> Result<&Path, Failure> {
        self.input.as_deref().ok_or_else(|| Failure::usage("no input file (use --input or set `input` in the config)"))
    }

    pub fn bootstrap_spec(&self, seed: u64) -> Result<Option<BootstrapSpec>, Failure> {
        self.bootstrap
            .map(|b| {
                let spec = BootstrapSpec {
                    confidence: self.confidence,
                    ..BootstrapSpec::new(b, seed)
                };
                spec.validate().map(|_| spec)
            })
            .transpose()
            .map_err(Failure::from)
    }
}

/// Everything that determines a command's output, hashed into provenance.
/// Paths, thread counts and the output directory are excluded: they do not
/// change results.
#[derive(Debug, Serialize)]
pub struct Settings<'a> {
    pub command: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub columns: Option<&'a ColumnMapping>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<&'a FitOptions<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub request: Option<&'a EstimandRequest<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<BootstrapSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extra: Option<serde_json::Value>,
}
