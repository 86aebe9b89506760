//! ATT, QTT, PTT and MTT from a pair of counterfactual CDFs.
//!
//! All four contrast the two *marginal* distributions. In particular QTT(p)
//! inverts each CDF separately; it is never a quantile of differences.
//!
//! MTT is the full product-measure sum of `h(u, v) = 1{u > v} + ½·1{u = v}`
//! over the two discrete distributions, including the half-weighted tie
//! term on the diagonal. It is evaluated in `O(K)` as
//! `Σ_i mass₁(y_i) · (F₀(y_{i-1}) + ½ mass₀(y_i))`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::counterfactual::CounterfactualPair;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Difference in means, `Σ y dF̂₁ - Σ y dF̂₀`.
pub fn att<T: Scalar>(pair: &CounterfactualPair<T>) -> T {
    pair.f1.mean() - pair.f0.mean()
}

/// Difference of the interpolated marginal quantiles.
pub fn qtt<T: Scalar>(pair: &CounterfactualPair<T>, p: T) -> Result<T> {
    check_probability(p)?;
    Ok(pair.f1.inverse(p) - pair.f0.inverse(p))
}

/// `F̂₁(y) - F̂₀(y)`.
pub fn ptt<T: Scalar>(pair: &CounterfactualPair<T>, y: T) -> T {
    pair.f1.eval(y) - pair.f0.eval(y)
}

pub fn mtt<T: Scalar>(pair: &CounterfactualPair<T>) -> T {
    let half = T::lit(0.5);
    let mut below = T::zero();
    let mut total = T::zero();
    for (&m1, &m0) in pair.f1.masses().iter().zip(pair.f0.masses()) {
        total += m1 * (below + half * m0);
        below += m0;
    }
    total.max(T::zero()).min(T::one())
}

fn check_probability<T: Scalar>(p: T) -> Result<()> {
    if p > T::zero() && p < T::one() {
        Ok(())
    } else {
        Err(Error::Domain(format!("quantile level must lie strictly inside (0, 1), got {p}")))
    }
}

/// Which estimands to compute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimandRequest<T> {
    #[serde(default)]
    pub quantiles: Vec<T>,
    #[serde(default)]
    pub thresholds: Vec<T>,
    #[serde(default)]
    pub att: bool,
    #[serde(default)]
    pub mtt: bool,
}

impl<T: Scalar> EstimandRequest<T> {
    pub fn empty() -> Self {
        EstimandRequest {
            quantiles: Vec::new(),
            thresholds: Vec::new(),
            att: false,
            mtt: false,
        }
    }

    /// ATT, QTT(0.25/0.5/0.75), PTT at `thresholds` and MTT.
    pub fn standard(thresholds: Vec<T>) -> Self {
        EstimandRequest {
            quantiles: vec![T::lit(0.25), T::lit(0.5), T::lit(0.75)],
            thresholds,
            att: true,
            mtt: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.quantiles.iter().try_for_each(|&p| check_probability(p))?;
        if let Some(y) = self.thresholds.iter().find(|y| !y.is_finite()) {
            return Err(Error::Domain(format!("threshold must be finite, got {y}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.att as usize + self.quantiles.len() + self.thresholds.len() + self.mtt as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Labels in report order: ATT, QTT…, PTT…, MTT.
    pub fn labels(&self) -> Vec<EstimandLabel<T>> {
        let mut out = Vec::with_capacity(self.len());
        if self.att {
            out.push(EstimandLabel::new(EstimandKind::Att, None));
        }
        out.extend(self.quantiles.iter().map(|&p| EstimandLabel::new(EstimandKind::Qtt, Some(p))));
        out.extend(self.thresholds.iter().map(|&y| EstimandLabel::new(EstimandKind::Ptt, Some(y))));
        if self.mtt {
            out.push(EstimandLabel::new(EstimandKind::Mtt, None));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EstimandKind {
    Att,
    Qtt,
    Ptt,
    Mtt,
}

impl EstimandKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimandKind::Att => "ATT",
            EstimandKind::Qtt => "QTT",
            EstimandKind::Ptt => "PTT",
            EstimandKind::Mtt => "MTT",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimandLabel<T> {
    pub kind: EstimandKind,
    pub argument: Option<T>,
}

impl<T> EstimandLabel<T> {
    pub fn new(kind: EstimandKind, argument: Option<T>) -> Self {
        EstimandLabel { kind, argument }
    }
}

impl<T: Scalar> fmt::Display for EstimandLabel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.argument {
            Some(a) => write!(f, "{}({})", self.kind.name(), a),
            None => f.write_str(self.kind.name()),
        }
    }
}

/// A point estimate with an optional `(lower, upper)` interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate<T> {
    pub value: T,
    pub ci: Option<(T, T)>,
}

impl<T> Estimate<T> {
    pub fn point(value: T) -> Self {
        Estimate { value, ci: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimandReport<T> {
    pub att: Option<Estimate<T>>,
    pub qtt: Vec<(T, Estimate<T>)>,
    pub ptt: Vec<(T, Estimate<T>)>,
    pub mtt: Option<Estimate<T>>,
}

/// One row of a flattened report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportEntry<T> {
    pub label: EstimandLabel<T>,
    pub estimate: Estimate<T>,
}

impl<T: Scalar> EstimandReport<T> {
    pub fn len(&self) -> usize {
        self.att.is_some() as usize + self.qtt.len() + self.ptt.len() + self.mtt.is_some() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entries(&self) -> Vec<ReportEntry<T>> {
        let mut out = Vec::with_capacity(self.len());
        if let Some(e) = self.att {
            out.push(ReportEntry {
                label: EstimandLabel::new(EstimandKind::Att, None),
                estimate: e,
            });
        }
        for &(p, e) in &self.qtt {
            out.push(ReportEntry {
                label: EstimandLabel::new(EstimandKind::Qtt, Some(p)),
                estimate: e,
            });
        }
        for &(y, e) in &self.ptt {
            out.push(ReportEntry {
                label: EstimandLabel::new(EstimandKind::Ptt, Some(y)),
                estimate: e,
            });
        }
        if let Some(e) = self.mtt {
            out.push(ReportEntry {
                label: EstimandLabel::new(EstimandKind::Mtt, None),
                estimate: e,
            });
        }
        out
    }

    /// Point estimates in entry order.
    pub fn values(&self) -> Vec<T> {
        self.entries().iter().map(|e| e.estimate.value).collect()
    }

    /// Attaches intervals given in entry order.
    pub fn set_intervals(&mut self, intervals: &[(T, T)]) -> Result<()> {
        if intervals.len() != self.len() {
            return Err(Error::InvalidData(format!(
                "{} intervals for {} estimands",
                intervals.len(),
                self.len()
            )));
        }
        let mut it = intervals.iter().copied();
        if let Some(e) = self.att.as_mut() {
            e.ci = it.next();
        }
        for (_, e) in self.qtt.iter_mut().chain(self.ptt.iter_mut()) {
            e.ci = it.next();
        }
        if let Some(e) = self.mtt.as_mut() {
            e.ci = it.next();
        }
        Ok(())
    }
}

/// Computes every requested estimand from one counterfactual pair.
pub fn full_report<T: Scalar>(pair: &CounterfactualPair<T>, request: &EstimandRequest<T>) -> Result<EstimandReport<T>> {
    request.validate()?;
    Ok(EstimandReport {
        att: request.att.then(|| Estimate::point(att(pair))),
        qtt: request
            .quantiles
            .iter()
            .map(|&p| Ok((p, Estimate::point(qtt(pair, p)?))))
            .collect::<Result<_>>()?,
        ptt: request.thresholds.iter().map(|&y| (y, Estimate::point(ptt(pair, y)))).collect(),
        mtt: request.mtt.then(|| Estimate::point(mtt(pair))),
    })
}
