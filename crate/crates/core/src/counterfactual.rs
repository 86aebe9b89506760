//! Marginal potential-outcome distributions of the treated-post cell.
//!
//! Both CDFs average the fitted model over the covariates of the observed
//! treated-post rows:
//!
//! ```text
//! F̂₁(y) = mean_x F(Ĥ⁻¹(y) - β̂₁ - β̂₂ - β̂₃ - β̂₄ᵀx)
//! F̂₀(y) = mean_x F(Ĥ⁻¹(y) - β̂₁ - β̂₂ - β̂₄ᵀx)
//! ```
//!
//! The untreated version drops the interaction because, under latent
//! parallel trends, the treated group's untreated trend equals the control
//! group's trend.

use crate::cpm::FittedCpm;
use crate::data::{step_position, Dataset};
use crate::error::{Error, Result};
use crate::scalar::{interpolated_inverse, Scalar};

/// Discrete CDF over an outcome support; the last value is exactly one.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteCdf<T> {
    support: Vec<T>,
    values: Vec<T>,
    masses: Vec<T>,
}

impl<T: Scalar> DiscreteCdf<T> {
    /// Builds a CDF from values at each support point. Values are clipped
    /// into `[0, 1]`, made non-decreasing and the final one set to one.
    pub fn from_values(support: Vec<T>, mut values: Vec<T>) -> Result<Self> {
        if support.is_empty() || support.len() != values.len() {
            return Err(Error::InvalidData("CDF needs one value per support point".into()));
        }
        if support.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidData("CDF support must be strictly increasing".into()));
        }
        let mut running = T::zero();
        for v in values.iter_mut() {
            if !v.is_finite() {
                return Err(Error::InvalidData("non-finite CDF value".into()));
            }
            running = running.max(*v).min(T::one());
            *v = running;
        }
        *values.last_mut().unwrap() = T::one();
        let masses = values
            .iter()
            .scan(T::zero(), |prev, &v| {
                let m = v - *prev;
                *prev = v;
                Some(m)
            })
            .collect();
        Ok(DiscreteCdf {
            support,
            values,
            masses,
        })
    }

    /// Builds a CDF from point masses (normalised to sum to one).
    pub fn from_masses(support: Vec<T>, masses: &[T]) -> Result<Self> {
        let total: T = masses.iter().copied().sum();
        if !(total > T::zero()) || masses.iter().any(|&m| m < T::zero()) {
            return Err(Error::InvalidData("masses must be non-negative with positive total".into()));
        }
        let values = masses
            .iter()
            .scan(T::zero(), |acc, &m| {
                *acc += m / total;
                Some(*acc)
            })
            .collect();
        DiscreteCdf::from_values(support, values)
    }

    pub fn support(&self) -> &[T] {
        &self.support
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn masses(&self) -> &[T] {
        &self.masses
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// `F(y)` with the step convention (0 below the support).
    pub fn eval(&self, y: T) -> T {
        step_position(&self.support, y).map_or(T::zero(), |i| self.values[i])
    }

    /// Linearly interpolated inverse; `p` at or below `F(y₁)` maps to `y₁`.
    pub fn inverse(&self, p: T) -> T {
        interpolated_inverse(&self.support, &self.values, p)
    }

    /// `Σ y_i · mass_i`.
    pub fn mean(&self) -> T {
        let mut s = T::zero();
        for (&y, &m) in self.support.iter().zip(&self.masses) {
            s += y * m;
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualPair<T> {
    /// Distribution of the potential outcome under treatment.
    pub f1: DiscreteCdf<T>,
    /// Distribution of the potential outcome without treatment.
    pub f0: DiscreteCdf<T>,
    /// Number of treated-post rows averaged over.
    pub n11: usize,
}

impl<T: Scalar> CounterfactualPair<T> {
    pub fn new(f1: DiscreteCdf<T>, f0: DiscreteCdf<T>, n11: usize) -> Result<Self> {
        if f1.support() != f0.support() {
            return Err(Error::InvalidData("counterfactual CDFs must share one support".into()));
        }
        Ok(CounterfactualPair { f1, f0, n11 })
    }

    pub fn support(&self) -> &[T] {
        self.f1.support()
    }
}

/// Rows per leaf of the pairwise reduction across rows.
const LEAF_ROWS: usize = 8;

/// Sums per-row CDF curves by pairwise reduction so the result depends only
/// on the row order.
fn accumulate<T: Scalar>(fit: &FittedCpm<T>, offsets: &[(T, T)]) -> (Vec<T>, Vec<T>) {
    let m = fit.alphas.len();
    if offsets.len() <= LEAF_ROWS {
        let mut s1 = vec![T::zero(); m];
        let mut s0 = vec![T::zero(); m];
        let link = fit.link;
        for &(o1, o0) in offsets {
            for ((a, v1), v0) in fit.alphas.iter().zip(s1.iter_mut()).zip(s0.iter_mut()) {
                *v1 += link.cdf(*a - o1);
                *v0 += link.cdf(*a - o0);
            }
        }
        return (s1, s0);
    }
    let mid = offsets.len() / 2;
    let (mut l1, mut l0) = accumulate(fit, &offsets[..mid]);
    let (r1, r0) = accumulate(fit, &offsets[mid..]);
    for (a, b) in l1.iter_mut().zip(r1) {
        *a += b;
    }
    for (a, b) in l0.iter_mut().zip(r0) {
        *a += b;
    }
    (l1, l0)
}

/// Estimated treated and untreated potential-outcome CDFs for the
/// treated-post cell, averaging over its observed rows (a subject observed
/// in both periods contributes its treated-post row once).
pub fn counterfactual_cdfs<T: Scalar>(fit: &FittedCpm<T>, dataset: &Dataset<T>) -> Result<CounterfactualPair<T>> {
    if fit.betas.len() != dataset.n_covariates() + 3 {
        return Err(Error::InvalidData(format!(
            "model has {} slopes but the data imply {}",
            fit.betas.len(),
            dataset.n_covariates() + 3
        )));
    }
    let (b1, b2, b3) = (fit.betas[0], fit.betas[1], fit.betas[2]);
    let bx = fit.covariate_betas();
    let offsets: Vec<(T, T)> = dataset
        .observations()
        .iter()
        .filter(|o| o.is_treated_post())
        .map(|o| {
            let mut xb = T::zero();
            for (&b, &x) in bx.iter().zip(&o.covariates) {
                xb += b * x;
            }
            let o0 = b1 + b2 + xb;
            (o0 + b3, o0)
        })
        .collect();
    if offsets.is_empty() {
        return Err(Error::InvalidData("empty treated-post cell".into()));
    }
    let (s1, s0) = accumulate(fit, &offsets);
    let n = T::from_count(offsets.len());
    let finish = |sums: Vec<T>| -> Result<DiscreteCdf<T>> {
        let mut values: Vec<T> = sums.into_iter().map(|s| s / n).collect();
        values.push(T::one());
        DiscreteCdf::from_values(fit.support.clone(), values)
    };
    CounterfactualPair::new(finish(s1)?, finish(s0)?, offsets.len())
}
