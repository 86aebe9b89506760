//! Simulation studies: the two-group, two-period data generator, a
//! pseudo-population oracle for true estimand values, the replication
//! engine, and the linear-model comparators.
//!
//! Random streams follow [`crate::rng`]. Replicate `r` of a scenario with
//! seed `s` and `n` subjects generates its data from
//! `derive_seed(derive_seed(s, "n", n), "data", r)` and bootstraps from
//! `derive_seed(derive_seed(s, "n", n), "boot", r)`; the oracle draws from
//! `derive_seed(s, "oracle", 0)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::counterfactual::counterfactual_cdfs;
use crate::cpm::{fit_cpm, FitOptions};
use crate::data::{Dataset, Observation};
use crate::error::{Error, Result};
use crate::estimands::{full_report, EstimandKind, EstimandLabel, EstimandReport, EstimandRequest, Estimate};
use crate::inference::{bootstrap, BootstrapSpec};
use crate::links::Link;
use crate::rng::{derive_seed, stream};
use crate::scalar::{empirical_quantile, pairwise_sum};

/// Smallest pseudo-population accepted by [`true_values`].
pub const MIN_ORACLE_SIZE: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    Identity,
    #[serde(alias = "exp")]
    Exponential,
}

impl Transform {
    pub fn apply(self, y: f64) -> f64 {
        match self {
            Transform::Identity => y,
            Transform::Exponential => y.exp(),
        }
    }
}

/// Marginal law of the latent errors, both standard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorLaw {
    Normal,
    Logistic,
}

impl ErrorLaw {
    /// Maps a standard normal draw to this law through its quantile
    /// function; correlated pairs therefore share a Gaussian copula.
    pub fn from_normal(self, z: f64) -> f64 {
        match self {
            ErrorLaw::Normal => z,
            ErrorLaw::Logistic => Link::Probit.cdf(z).ln() - Link::Probit.cdf(-z).ln(),
        }
    }
}

/// How the errors of a two-period subject are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// `(ε_d0, ε_d1)` is a correlated pair for the subject's own arm.
    IndependentArms,
    /// `(ε00, ε01, ε10, ε11)` is equicorrelated and the subject keeps the
    /// pair for its arm.
    FullyCorrelated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "lowercase")]
pub enum CovariateLaw {
    Bernoulli { p: f64 },
    Normal { mean: f64, sd: f64 },
}

impl CovariateLaw {
    fn draw<R: Rng>(self, rng: &mut R) -> f64 {
        match self {
            CovariateLaw::Bernoulli { p } => rng.random_bool(p) as u8 as f64,
            CovariateLaw::Normal { mean, sd } => mean + sd * rng.sample::<f64, _>(StandardNormal),
        }
    }
}

/// A time-invariant subject covariate and its latent-scale slope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariate {
    pub name: String,
    pub beta: f64,
    #[serde(flatten)]
    pub law: CovariateLaw,
}

/// Data-generating process `Y = H(β₁D + β₂T + β₃DT + β₄ᵀX + ε_T)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// `(β₁, β₂, β₃)` for D, T and D·T.
    pub betas: [f64; 3],
    pub covariates: Vec<Covariate>,
    pub transform: Transform,
    pub error_law: ErrorLaw,
    pub pair_correlation: f64,
    pub coupling: Coupling,
    /// Probability that a subject is observed in both periods.
    pub two_period_probability: f64,
    pub fit_link: Link,
    pub n_subjects: usize,
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario::paper_fig1()
    }
}

fn standard_covariates() -> Vec<Covariate> {
    vec![
        Covariate {
            name: "x1".into(),
            beta: 0.25,
            law: CovariateLaw::Bernoulli { p: 0.5 },
        },
        Covariate {
            name: "x2".into(),
            beta: 0.5,
            law: CovariateLaw::Normal { mean: 0.0, sd: 1.0 },
        },
    ]
}

impl Scenario {
    pub const NAMES: [&'static str; 8] = [
        "paper_fig1",
        "null_effect",
        "correlated_errors",
        "logit_misspecified_exp",
        "logit_misspecified_identity",
        "comparator_identity_normal",
        "no_covariates",
        "logistic_errors",
    ];

    /// Skewed main scenario: exponential transform, normal errors, probit fit.
    pub fn paper_fig1() -> Self {
        Scenario {
            name: "paper_fig1".into(),
            betas: [1.0, 0.5, 0.5],
            covariates: standard_covariates(),
            transform: Transform::Exponential,
            error_law: ErrorLaw::Normal,
            pair_correlation: 0.5,
            coupling: Coupling::IndependentArms,
            two_period_probability: 0.5,
            fit_link: Link::Probit,
            n_subjects: 1000,
            seed: 20240101,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        let base = Scenario::paper_fig1();
        let s = match name {
            "paper_fig1" => base,
            "null_effect" => Scenario {
                betas: [1.0, 0.5, 0.0],
                ..base
            },
            "correlated_errors" => Scenario {
                coupling: Coupling::FullyCorrelated,
                ..base
            },
            "logit_misspecified_exp" => Scenario {
                fit_link: Link::Logit,
                ..base
            },
            "logit_misspecified_identity" => Scenario {
                transform: Transform::Identity,
                fit_link: Link::Logit,
                ..base
            },
            "comparator_identity_normal" => Scenario {
                transform: Transform::Identity,
                ..base
            },
            "no_covariates" => Scenario {
                transform: Transform::Identity,
                covariates: Vec::new(),
                ..base
            },
            "logistic_errors" => Scenario {
                transform: Transform::Identity,
                error_law: ErrorLaw::Logistic,
                fit_link: Link::Logit,
                ..base
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown scenario '{other}' (known: {})",
                    Scenario::NAMES.join(", ")
                )))
            }
        };
        Ok(Scenario { name: name.into(), ..s })
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.pair_correlation) {
            return Err(Error::Config(format!(
                "pair_correlation must lie in [0, 1), got {}",
                self.pair_correlation
            )));
        }
        if !(0.0..=1.0).contains(&self.two_period_probability) {
            return Err(Error::Config("two_period_probability must lie in [0, 1]".into()));
        }
        if self.n_subjects == 0 {
            return Err(Error::Config("n_subjects must be positive".into()));
        }
        if self.betas.iter().any(|b| !b.is_finite()) {
            return Err(Error::Config("betas must be finite".into()));
        }
        for c in &self.covariates {
            let ok = c.beta.is_finite()
                && match c.law {
                    CovariateLaw::Bernoulli { p } => (0.0..=1.0).contains(&p),
                    CovariateLaw::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd > 0.0,
                };
            if !ok {
                return Err(Error::Config(format!("invalid covariate '{}'", c.name)));
            }
        }
        Ok(())
    }

    pub fn covariate_names(&self) -> Vec<String> {
        self.covariates.iter().map(|c| c.name.clone()).collect()
    }

    /// ATT, QTT(0.25/0.5/0.75), PTT at 1, 3, 6 (exponential) or 1, 3
    /// (identity), and MTT.
    pub fn default_request(&self) -> EstimandRequest<f64> {
        match self.transform {
            Transform::Exponential => EstimandRequest::standard(vec![1.0, 3.0, 6.0]),
            Transform::Identity => EstimandRequest::standard(vec![1.0, 3.0]),
        }
    }

    fn draw_covariates<R: Rng>(&self, rng: &mut R) -> (Vec<f64>, f64) {
        let x: Vec<f64> = self.covariates.iter().map(|c| c.law.draw(rng)).collect();
        let xb = self.covariates.iter().zip(&x).map(|(c, v)| c.beta * v).sum();
        (x, xb)
    }

    fn latent_mean(&self, d: bool, t: bool, xb: f64) -> f64 {
        let [b1, b2, b3] = self.betas;
        let (d, t) = (d as u8 as f64, t as u8 as f64);
        b1 * d + b2 * t + b3 * d * t + xb
    }

    /// `(ε_d0, ε_d1)` for a two-period subject in arm `d`.
    fn error_pair<R: Rng>(&self, d: bool, rng: &mut R) -> (f64, f64) {
        let rho = self.pair_correlation;
        let (z0, z1) = match self.coupling {
            Coupling::IndependentArms => {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                (a, rho * a + (1.0 - rho * rho).sqrt() * b)
            }
            Coupling::FullyCorrelated => {
                let common: f64 = rng.sample(StandardNormal);
                let z: [f64; 4] = std::array::from_fn(|_| {
                    let e: f64 = rng.sample(StandardNormal);
                    rho.sqrt() * common + (1.0 - rho).sqrt() * e
                });
                if d {
                    (z[2], z[3])
                } else {
                    (z[0], z[1])
                }
            }
        };
        (self.error_law.from_normal(z0), self.error_law.from_normal(z1))
    }
}

/// One dataset from `scenario`, drawn from stream 0 of `scenario.seed`.
/// Every row carries its subject id as cluster id.
pub fn generate_dataset(scenario: &Scenario) -> Result<Dataset<f64>> {
    scenario.validate()?;
    let mut rng = stream(scenario.seed, 0);
    let mut rows = Vec::with_capacity(2 * scenario.n_subjects);
    for s in 0..scenario.n_subjects {
        let id = format!("s{s}");
        let two_period = rng.random_bool(scenario.two_period_probability);
        let d = rng.random_bool(0.5);
        let (x, xb) = scenario.draw_covariates(&mut rng);
        if two_period {
            let (e0, e1) = scenario.error_pair(d, &mut rng);
            for (t, e) in [(false, e0), (true, e1)] {
                let y = scenario.transform.apply(scenario.latent_mean(d, t, xb) + e);
                rows.push(Observation::new(y, d, t, x.clone()).with_cluster(id.clone()));
            }
        } else {
            let t = rng.random_bool(0.5);
            let e = scenario.error_law.from_normal(rng.sample(StandardNormal));
            let y = scenario.transform.apply(scenario.latent_mean(d, t, xb) + e);
            rows.push(Observation::new(y, d, t, x).with_cluster(id));
        }
    }
    Dataset::new(rows, scenario.covariate_names())
}

/// True values are reported in the same shape as estimates.
pub type TrueValues = EstimandReport<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MttMethod {
    /// Product measure of the two empirical distributions, ties counted half.
    #[default]
    Exact,
    /// Average of `h` over `oracle_size` random pairs `i ≠ j`.
    SampledPairs,
}

/// Potential outcomes `H(Y*₁₁)` and `H(Y*₀₁)` of a pseudo-population of
/// treated subjects in the post period. Both share a subject's covariates
/// and error.
pub struct PseudoPopulation {
    /// Subject-aligned draws.
    pub treated: Vec<f64>,
    pub untreated: Vec<f64>,
    sorted_treated: Vec<f64>,
    sorted_untreated: Vec<f64>,
}

impl PseudoPopulation {
    pub fn draw(scenario: &Scenario, size: usize) -> Result<Self> {
        scenario.validate()?;
        let mut rng = stream(derive_seed(scenario.seed, "oracle", 0), 0);
        let mut treated = Vec::with_capacity(size);
        let mut untreated = Vec::with_capacity(size);
        for _ in 0..size {
            let (_, xb) = scenario.draw_covariates(&mut rng);
            let e = scenario.error_law.from_normal(rng.sample(StandardNormal));
            treated.push(scenario.transform.apply(scenario.latent_mean(true, true, xb) + e));
            untreated.push(scenario.transform.apply(scenario.latent_mean(true, true, xb) - scenario.betas[2] + e));
        }
        Ok(PseudoPopulation::new(treated, untreated))
    }

    pub fn new(treated: Vec<f64>, untreated: Vec<f64>) -> Self {
        let mut sorted_treated = treated.clone();
        let mut sorted_untreated = untreated.clone();
        sorted_treated.sort_by(f64::total_cmp);
        sorted_untreated.sort_by(f64::total_cmp);
        PseudoPopulation {
            treated,
            untreated,
            sorted_treated,
            sorted_untreated,
        }
    }

    pub fn att(&self) -> f64 {
        let n = self.treated.len() as f64;
        (pairwise_sum(&self.treated) - pairwise_sum(&self.untreated)) / n
    }

    pub fn qtt(&self, p: f64) -> f64 {
        empirical_quantile(&self.sorted_treated, p) - empirical_quantile(&self.sorted_untreated, p)
    }

    pub fn ptt(&self, y: f64) -> f64 {
        let n = self.treated.len() as f64;
        let below = |v: &[f64]| v.partition_point(|&a| a <= y) as f64;
        (below(&self.sorted_treated) - below(&self.sorted_untreated)) / n
    }

    /// `P(A > B) + P(A = B)/2` over all `N²` pairs, in exact integer counts.
    pub fn mtt_exact(&self) -> f64 {
        let (a, b) = (&self.sorted_treated, &self.sorted_untreated);
        let (mut lt, mut le) = (0usize, 0usize);
        let mut twice: u128 = 0;
        for &v in a {
            while lt < b.len() && b[lt] < v {
                lt += 1;
            }
            le = le.max(lt);
            while le < b.len() && b[le] <= v {
                le += 1;
            }
            twice += (lt + le) as u128;
        }
        twice as f64 / (2.0 * a.len() as f64 * b.len() as f64)
    }

    /// Sampled-pairs MTT and its Monte-Carlo standard error.
    pub fn mtt_sampled(&self, pairs: usize, seed: u64) -> (f64, f64) {
        let n = self.treated.len();
        let mut rng = stream(derive_seed(seed, "mtt-pairs", 0), 0);
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..pairs {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            let h = match self.treated[i].total_cmp(&self.untreated[j]) {
                std::cmp::Ordering::Greater => 1.0,
                std::cmp::Ordering::Equal => 0.5,
                std::cmp::Ordering::Less => 0.0,
            };
            s += h;
            s2 += h * h;
        }
        let m = pairs as f64;
        let mean = s / m;
        (mean, ((s2 / m - mean * mean).max(0.0) / m).sqrt())
    }
}

/// True estimand values from a pseudo-population of `oracle_size`
/// treated subjects.
pub fn true_values(
    scenario: &Scenario,
    oracle_size: usize,
    request: &EstimandRequest<f64>,
    mtt_method: MttMethod,
) -> Result<TrueValues> {
    if oracle_size < MIN_ORACLE_SIZE {
        return Err(Error::Config(format!(
            "oracle_size must be at least {MIN_ORACLE_SIZE}, got {oracle_size}"
        )));
    }
    request.validate()?;
    let pop = PseudoPopulation::draw(scenario, oracle_size)?;
    let mtt = match mtt_method {
        MttMethod::Exact => pop.mtt_exact(),
        MttMethod::SampledPairs => pop.mtt_sampled(oracle_size, scenario.seed).0,
    };
    Ok(EstimandReport {
        att: request.att.then(|| Estimate::point(pop.att())),
        qtt: request.quantiles.iter().map(|&p| (p, Estimate::point(pop.qtt(p)))).collect(),
        ptt: request.thresholds.iter().map(|&y| (y, Estimate::point(pop.ptt(y)))).collect(),
        mtt: request.mtt.then(|| Estimate::point(mtt)),
    })
}

/// An OLS coefficient with its classical interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub ci: (f64, f64),
    pub df: usize,
}

/// OLS of `response` on `[1, D, T, DT, X…]`; returns the DT coefficient.
fn interaction_ols(dataset: &Dataset<f64>, response: &[f64], confidence: f64) -> Result<LinearEstimate> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::Config(format!("confidence must lie in (0, 1), got {confidence}")));
    }
    let n = dataset.len();
    let k = 4 + dataset.n_covariates();
    if n <= k {
        return Err(Error::Singular(format!("{n} rows for {k} coefficients")));
    }
    let x = DMatrix::from_fn(n, k, |i, j| {
        let o = &dataset.observations()[i];
        match j {
            0 => 1.0,
            1 => o.group as u8 as f64,
            2 => o.period as u8 as f64,
            3 => (o.group && o.period) as u8 as f64,
            _ => o.covariates[j - 4],
        }
    });
    let y = DVector::from_column_slice(response);
    let qr = x.clone().qr();
    let r = qr.r();
    let scale = (0..k).map(|j| x.column(j).norm()).fold(0.0, f64::max);
    let names = crate::data::coefficient_names(dataset.covariate_names());
    for j in 0..k {
        if r[(j, j)].abs() <= 1e-10 * scale {
            let column = if j == 0 { "intercept".to_string() } else { names[j - 1].clone() };
            return Err(Error::Singular(format!("column '{column}' is collinear with earlier columns")));
        }
    }
    let qty = qr.q().transpose() * &y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Singular("triangular solve failed".into()))?;
    let resid = &y - &x * &beta;
    let df = n - k;
    let sigma2 = resid.norm_squared() / df as f64;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::Singular("triangular solve failed".into()))?;
    let var = sigma2 * r_inv.row(3).norm_squared();
    let se = var.sqrt();
    let t = StudentsT::new(0.0, 1.0, df as f64)
        .map_err(|e| Error::Config(e.to_string()))?
        .inverse_cdf(0.5 + confidence / 2.0);
    let est = beta[3];
    Ok(LinearEstimate {
        estimate: est,
        std_error: se,
        ci: (est - t * se, est + t * se),
        df,
    })
}

/// Linear-model DiD: the D·T coefficient from OLS of Y.
pub fn att_prime(dataset: &Dataset<f64>, confidence: f64) -> Result<LinearEstimate> {
    interaction_ols(dataset, &dataset.outcomes(), confidence)
}

/// Linear probability DiD: the D·T coefficient from OLS of `I{Y ≤ threshold}`.
pub fn ptt_dichotomized(dataset: &Dataset<f64>, threshold: f64, confidence: f64) -> Result<LinearEstimate> {
    let z: Vec<f64> = dataset.outcomes().iter().map(|&y| (y <= threshold) as u8 as f64).collect();
    interaction_ols(dataset, &z, confidence)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationConfig {
    pub replications: usize,
    /// Percentile intervals per replicate; `None` skips coverage.
    pub bootstrap: Option<BootstrapSpec>,
    pub request: EstimandRequest<f64>,
    /// Also summarise the linear-model ATT comparator.
    pub att_prime: bool,
}

/// Performance of one estimator across replicates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimandSummary {
    pub label: String,
    pub truth: f64,
    pub mean_estimate: f64,
    /// `100·(mean − truth)/truth`, or `mean − truth` when the truth is zero.
    pub bias: f64,
    pub bias_is_percent: bool,
    /// Share of intervals containing the truth.
    pub coverage: Option<f64>,
    /// Standard deviation of the estimates.
    pub empirical_sd: f64,
    /// Monte-Carlo standard error of the mean estimate.
    pub mc_se: f64,
    pub mse: f64,
    pub replicates: usize,
}

impl EstimandSummary {
    fn new(label: String, truth: f64, estimates: &[f64], covered: Option<(usize, usize)>) -> Self {
        let r = estimates.len();
        let m = r as f64;
        let mean = pairwise_sum(estimates) / m;
        let dev: Vec<f64> = estimates.iter().map(|e| (e - mean).powi(2)).collect();
        let sq: Vec<f64> = estimates.iter().map(|e| (e - truth).powi(2)).collect();
        let sd = if r > 1 { (pairwise_sum(&dev) / (m - 1.0)).sqrt() } else { 0.0 };
        let bias_is_percent = truth != 0.0;
        EstimandSummary {
            label,
            truth,
            mean_estimate: mean,
            bias: if bias_is_percent { 100.0 * (mean - truth) / truth } else { mean - truth },
            bias_is_percent,
            coverage: covered.filter(|&(_, total)| total > 0).map(|(hit, total)| hit as f64 / total as f64),
            empirical_sd: sd,
            mc_se: sd / m.sqrt(),
            mse: pairwise_sum(&sq) / m,
            replicates: r,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationSummary {
    pub scenario: String,
    pub n_subjects: usize,
    pub replications: usize,
    pub failed: usize,
    pub first_failure: Option<String>,
    pub estimands: Vec<EstimandSummary>,
    pub att_prime: Option<EstimandSummary>,
}

struct ReplicateOutcome {
    estimates: Vec<f64>,
    intervals: Option<Vec<(f64, f64)>>,
    att_prime: Option<LinearEstimate>,
}

fn one_replicate(scenario: &Scenario, config: &ReplicationConfig, r: usize) -> Result<ReplicateOutcome> {
    let base = derive_seed(scenario.seed, "n", scenario.n_subjects as u64);
    let sc = Scenario {
        seed: derive_seed(base, "data", r as u64),
        ..scenario.clone()
    };
    let data = generate_dataset(&sc)?;
    let options = FitOptions::new(scenario.fit_link);
    let fit = fit_cpm(&data, &options)?;
    if !fit.converged {
        return Err(Error::NonConvergence(fit.message.unwrap_or_default()));
    }
    let pair = counterfactual_cdfs(&fit, &data)?;
    let estimates = full_report(&pair, &config.request)?.values();
    let intervals = match config.bootstrap {
        Some(spec) => {
            let spec = BootstrapSpec {
                seed: derive_seed(base, "boot", r as u64),
                ..spec
            };
            Some(bootstrap(&data, &options, &config.request, &spec)?.intervals)
        }
        None => None,
    };
    let att_prime = if config.att_prime {
        Some(att_prime(&data, config.bootstrap.map_or(0.95, |b| b.confidence))?)
    } else {
        None
    };
    Ok(ReplicateOutcome {
        estimates,
        intervals,
        att_prime,
    })
}

/// Generate → fit → estimate (→ bootstrap) for each replicate and compare
/// against `truth`, which must hold every requested estimand.
pub fn run_replications(scenario: &Scenario, config: &ReplicationConfig, truth: &TrueValues) -> Result<ReplicationSummary> {
    scenario.validate()?;
    config.request.validate()?;
    if config.replications == 0 {
        return Err(Error::Config("replications must be positive".into()));
    }
    if let Some(b) = &config.bootstrap {
        b.validate()?;
    }
    let labels: Vec<EstimandLabel<f64>> = config.request.labels();
    let truth_entries = truth.entries();
    let truths: Vec<f64> = labels
        .iter()
        .map(|l| {
            truth_entries
                .iter()
                .find(|e| e.label == *l)
                .map(|e| e.estimate.value)
                .ok_or_else(|| Error::Config(format!("no true value for {l}")))
        })
        .collect::<Result<_>>()?;
    if config.att_prime && truth.att.is_none() {
        return Err(Error::Config("the ATT' comparator needs a true ATT".into()));
    }

    let outcomes: Vec<Result<ReplicateOutcome>> = (0..config.replications)
        .into_par_iter()
        .map(|r| one_replicate(scenario, config, r))
        .collect();

    let mut failed = 0;
    let mut first_failure = None;
    let mut ok = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        match o {
            Ok(o) => ok.push(o),
            Err(e) => {
                failed += 1;
                first_failure.get_or_insert_with(|| e.to_string());
            }
        }
    }
    if ok.is_empty() {
        return Err(Error::NonConvergence(format!(
            "all {} replicates failed: {}",
            config.replications,
            first_failure.unwrap_or_default()
        )));
    }

    let estimands = labels
        .iter()
        .zip(&truths)
        .enumerate()
        .map(|(j, (label, &t))| {
            let est: Vec<f64> = ok.iter().map(|o| o.estimates[j]).collect();
            let covered = config.bootstrap.map(|_| {
                let hits = ok
                    .iter()
                    .filter_map(|o| o.intervals.as_ref())
                    .filter(|iv| iv[j].0 <= t && t <= iv[j].1)
                    .count();
                (hits, ok.len())
            });
            EstimandSummary::new(label.to_string(), t, &est, covered)
        })
        .collect();

    let att_prime = truth.att.filter(|_| config.att_prime).map(|t| {
        let fits: Vec<LinearEstimate> = ok.iter().filter_map(|o| o.att_prime).collect();
        let est: Vec<f64> = fits.iter().map(|f| f.estimate).collect();
        let hits = fits.iter().filter(|f| f.ci.0 <= t.value && t.value <= f.ci.1).count();
        EstimandSummary::new("ATT'".into(), t.value, &est, Some((hits, fits.len())))
    });

    Ok(ReplicationSummary {
        scenario: scenario.name.clone(),
        n_subjects: scenario.n_subjects,
        replications: config.replications,
        failed,
        first_failure,
        estimands,
        att_prime,
    })
}

/// The label used for an estimand in summaries, e.g. `PTT(3)`.
pub fn label_text(kind: EstimandKind, argument: Option<f64>) -> String {
    EstimandLabel::new(kind, argument).to_string()
}
