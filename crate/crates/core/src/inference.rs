//! Percentile bootstrap intervals, resampling whole clusters when the data
//! carry cluster ids and single rows otherwise.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counterfactual::counterfactual_cdfs;
use crate::cpm::{fit_cpm, FitOptions};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimands::{full_report, EstimandLabel, EstimandRequest};
use crate::rng;
use crate::scalar::{empirical_quantile, Scalar};

/// Replicates whose fits fail beyond this fraction abort the bootstrap.
pub const MAX_FAILED_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSpec {
    pub replicates: usize,
    pub seed: u64,
    pub confidence: f64,
}

impl BootstrapSpec {
    pub fn new(replicates: usize, seed: u64) -> Self {
        BootstrapSpec {
            replicates,
            seed,
            confidence: 0.95,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates < 2 {
            return Err(Error::Config(format!("bootstrap needs at least 2 replicates, got {}", self.replicates)));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::Config(format!("confidence must lie in (0, 1), got {}", self.confidence)));
        }
        Ok(())
    }
}

/// Percentile intervals in the request's label order.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalSet<T> {
    pub labels: Vec<EstimandLabel<T>>,
    pub intervals: Vec<(T, T)>,
    pub successful: usize,
    pub failed: usize,
    /// First failure message, if any replicate failed.
    pub first_failure: Option<String>,
}

/// Draws one resample: clusters (or rows) with replacement, in draw order.
pub fn resample<T: Scalar, R: Rng>(dataset: &Dataset<T>, clusters: &[Vec<usize>], rng: &mut R) -> Result<Dataset<T>> {
    let obs = dataset.observations();
    let mut rows = Vec::with_capacity(obs.len());
    for _ in 0..clusters.len() {
        let c = rng.random_range(0..clusters.len());
        rows.extend(clusters[c].iter().map(|&i| obs[i].clone()));
    }
    dataset.with_observations(rows)
}

/// Refits the whole pipeline on one resample and returns the estimates in
/// report order.
pub fn replicate_estimates<T: Scalar>(
    dataset: &Dataset<T>,
    options: &FitOptions<T>,
    request: &EstimandRequest<T>,
) -> Result<Vec<T>> {
    let fit = fit_cpm(dataset, options)?;
    if !fit.converged {
        return Err(Error::NonConvergence(fit.message.unwrap_or_default()));
    }
    let pair = counterfactual_cdfs(&fit, dataset)?;
    Ok(full_report(&pair, request)?.values())
}

/// Percentile bootstrap. Replicate `r` uses stream `r` of `spec.seed`, so the
/// output is identical for any degree of parallelism.
pub fn bootstrap<T: Scalar>(
    dataset: &Dataset<T>,
    options: &FitOptions<T>,
    request: &EstimandRequest<T>,
    spec: &BootstrapSpec,
) -> Result<IntervalSet<T>> {
    spec.validate()?;
    options.validate()?;
    request.validate()?;
    let clusters = dataset.clusters();
    let results: Vec<Result<Vec<T>>> = (0..spec.replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(spec.seed, r as u64);
            let sample = resample(dataset, &clusters, &mut rng)?;
            replicate_estimates(&sample, options, request)
        })
        .collect();

    let mut failed = 0;
    let mut first_failure = None;
    let mut columns: Vec<Vec<T>> = vec![Vec::with_capacity(spec.replicates); request.len()];
    for res in results {
        match res {
            Ok(values) => {
                for (col, v) in columns.iter_mut().zip(values) {
                    col.push(v);
                }
            }
            Err(e) => {
                failed += 1;
                first_failure.get_or_insert_with(|| e.to_string());
            }
        }
    }
    if failed as f64 > MAX_FAILED_FRACTION * spec.replicates as f64 {
        return Err(Error::Bootstrap {
            failed,
            total: spec.replicates,
            reason: first_failure.unwrap_or_default(),
        });
    }
    let successful = spec.replicates - failed;
    let alpha = T::lit((1.0 - spec.confidence) / 2.0);
    let intervals = columns
        .iter_mut()
        .map(|col| {
            col.sort_by(|a, b| a.partial_cmp(b).expect("finite replicate estimates"));
            (empirical_quantile(col, alpha), empirical_quantile(col, T::one() - alpha))
        })
        .collect();
    Ok(IntervalSet {
        labels: request.labels(),
        intervals,
        successful,
        failed,
        first_failure,
    })
}
