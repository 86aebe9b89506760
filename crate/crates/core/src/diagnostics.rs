//! Model checks: observed-minus-expected residuals and link comparison.
//!
//! The OMER of row `i` is defined here as `y_i - Ê[Y | W_i]`, where the
//! conditional mean is taken under the fitted model CDF,
//! `Ê[Y | W_i] = Σ_k y_k [F̂(y_k | W_i) - F̂(y_{k-1} | W_i)]`.

use rayon::prelude::*;
use serde::Serialize;

use crate::cpm::{fit_cpm, FitOptions, FittedCpm};
use crate::data::{Dataset, DesignRow};
use crate::error::{Error, Result};
use crate::links::Link;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualRow<T> {
    pub outcome: T,
    pub expected: T,
    pub residual: T,
    pub covariates: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualTable<T> {
    pub covariate_names: Vec<String>,
    pub rows: Vec<ResidualRow<T>>,
}

impl<T: Scalar> ResidualTable<T> {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["outcome".to_string(), "expected".into(), "omer".into()];
        header.extend(self.covariate_names.iter().cloned());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![format!("{:?}", r.outcome), format!("{:?}", r.expected), format!("{:?}", r.residual)];
            rec.extend(r.covariates.iter().map(|x| format!("{x:?}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `Ê[Y | w]` under the fitted model.
pub fn conditional_mean<T: Scalar>(fit: &FittedCpm<T>, w: &[T]) -> T {
    let mut eta = T::zero();
    for (&b, &x) in fit.betas.iter().zip(w) {
        eta += b * x;
    }
    let mut prev = T::zero();
    let mut mean = T::zero();
    for (k, &y) in fit.support.iter().enumerate() {
        let cur = match fit.alphas.get(k) {
            Some(&a) => fit.link.cdf(a - eta).max(prev),
            None => T::one(),
        };
        mean += y * (cur - prev);
        prev = cur;
    }
    mean
}

pub fn omer_residuals<T: Scalar>(fit: &FittedCpm<T>, dataset: &Dataset<T>) -> Result<ResidualTable<T>> {
    if !fit.converged {
        return Err(Error::NonConvergence(format!(
            "residuals need a converged fit ({})",
            fit.message.as_deref().unwrap_or("no diagnostic message")
        )));
    }
    if fit.betas.len() != dataset.n_covariates() + 3 {
        return Err(Error::InvalidData(format!(
            "model has {} slopes but the data imply {}",
            fit.betas.len(),
            dataset.n_covariates() + 3
        )));
    }
    let rows = dataset
        .observations()
        .par_iter()
        .map(|o| {
            let expected = conditional_mean(fit, DesignRow::from_observation(o).as_slice());
            ResidualRow {
                outcome: o.outcome,
                expected,
                residual: o.outcome - expected,
                covariates: o.covariates.clone(),
            }
        })
        .collect();
    Ok(ResidualTable {
        covariate_names: dataset.covariate_names().to_vec(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkFit<T> {
    pub link: Link,
    /// `None` when the fit raised an error.
    pub loglik: Option<T>,
    pub converged: bool,
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkComparison<T> {
    pub fits: Vec<LinkFit<T>>,
    /// Converged link with the largest log-likelihood; first listed wins ties.
    pub preferred: Link,
}

/// Fits every link on the same data. Non-converged fits are reported but
/// never preferred.
pub fn compare_links<T: Scalar>(dataset: &Dataset<T>, links: &[Link], options: &FitOptions<T>) -> Result<LinkComparison<T>> {
    if links.is_empty() {
        return Err(Error::Config("no links to compare".into()));
    }
    let fits: Vec<LinkFit<T>> = links
        .iter()
        .map(|&link| {
            let opts = FitOptions { link, ..options.clone() };
            match fit_cpm(dataset, &opts) {
                Ok(fit) => LinkFit {
                    link,
                    loglik: Some(fit.loglik),
                    converged: fit.converged,
                    message: fit.message,
                },
                Err(e) => LinkFit {
                    link,
                    loglik: None,
                    converged: false,
                    message: Some(e.to_string()),
                },
            }
        })
        .collect();
    let mut best: Option<(Link, T)> = None;
    for f in &fits {
        if let (true, Some(ll)) = (f.converged, f.loglik) {
            if best.is_none_or(|(_, b)| ll > b) {
                best = Some((f.link, ll));
            }
        }
    }
    match best {
        Some((preferred, _)) => Ok(LinkComparison { fits, preferred }),
        None => Err(Error::NonConvergence(format!(
            "no link produced a converged fit: {}",
            fits.iter()
                .map(|f| format!("{}: {}", f.link, f.message.as_deref().unwrap_or("not converged")))
                .collect::<Vec<_>>()
                .join("; ")
        ))),
    }
}
