//! Difference-in-differences estimation with semi-parametric cumulative
//! probability models.
//!
//! The outcome is modelled through a latent linear model for an unknown
//! monotone transformation of it, fitted by non-parametric maximum
//! likelihood. From the fit, the two marginal potential-outcome CDFs of the
//! treated-post cell are built and the ATT, QTT, PTT and MTT follow by
//! plug-in, with percentile (cluster) bootstrap intervals.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar for the common cases.

pub mod counterfactual;
pub mod cpm;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod estimands;
pub mod inference;
pub mod links;
pub mod rng;
pub mod scalar;
pub mod simulation;

pub use counterfactual::{counterfactual_cdfs, CounterfactualPair, DiscreteCdf};
pub use cpm::{conditional_cdf, fit_cpm, FitOptions, FittedCpm};
pub use data::{design_rows, encode_support, load_csv, ColumnMapping, Dataset, DesignRow, Observation, SupportEncoding};
pub use diagnostics::{compare_links, omer_residuals, LinkComparison, ResidualTable};
pub use error::{Error, Result};
pub use estimands::{att, full_report, mtt, ptt, qtt, EstimandReport, EstimandRequest};
pub use inference::{bootstrap, BootstrapSpec, IntervalSet};
pub use links::Link;
pub use scalar::Scalar;

pub type DatasetF64 = Dataset<f64>;
pub type DatasetF32 = Dataset<f32>;
pub type ObservationF64 = Observation<f64>;
pub type FitOptionsF64 = FitOptions<f64>;
pub type FitOptionsF32 = FitOptions<f32>;
pub type FittedCpmF64 = FittedCpm<f64>;
pub type FittedCpmF32 = FittedCpm<f32>;
pub type CounterfactualPairF64 = CounterfactualPair<f64>;
pub type DiscreteCdfF64 = DiscreteCdf<f64>;
pub type EstimandRequestF64 = EstimandRequest<f64>;
pub type EstimandReportF64 = EstimandReport<f64>;
pub type IntervalSetF64 = IntervalSet<f64>;
pub type ResidualTableF64 = ResidualTable<f64>;
pub type LinkComparisonF64 = LinkComparison<f64>;
