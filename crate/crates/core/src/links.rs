//! Link functions `G = F⁻¹` and the latent error distributions `F` of the
//! cumulative probability model.
//!
//! `cdf` is the inverse link (the error CDF), `quantile` the link itself.
//! Upper-tail quantities are available through [`Link::survival`], which is
//! computed directly rather than as `1 - cdf` so it keeps full relative
//! precision where the CDF rounds to one.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Probit,
    Logit,
    Cloglog,
}

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

impl Link {
    pub const ALL: [Link; 3] = [Link::Probit, Link::Logit, Link::Cloglog];

    pub fn name(self) -> &'static str {
        match self {
            Link::Probit => "probit",
            Link::Logit => "logit",
            Link::Cloglog => "cloglog",
        }
    }

    /// Inverse link: the latent error CDF `F(z)`.
    #[inline]
    pub fn cdf<T: Scalar>(self, z: T) -> T {
        match self {
            Link::Probit => T::lit(0.5 * libm::erfc(-z.as_f64() * std::f64::consts::FRAC_1_SQRT_2)),
            Link::Logit => {
                if z >= T::zero() {
                    T::one() / (T::one() + (-z).exp())
                } else {
                    let e = z.exp();
                    e / (T::one() + e)
                }
            }
            Link::Cloglog => -(-z.exp()).exp_m1(),
        }
    }

    /// Upper tail `1 - F(z)`.
    #[inline]
    pub fn survival<T: Scalar>(self, z: T) -> T {
        match self {
            Link::Probit => T::lit(0.5 * libm::erfc(z.as_f64() * std::f64::consts::FRAC_1_SQRT_2)),
            Link::Logit => self.cdf(-z),
            Link::Cloglog => (-z.exp()).exp(),
        }
    }

    /// Density `F'(z)`; strictly positive for finite `z` (until underflow).
    #[inline]
    pub fn density<T: Scalar>(self, z: T) -> T {
        match self {
            Link::Probit => {
                let z = z.as_f64();
                T::lit(INV_SQRT_2PI * (-0.5 * z * z).exp())
            }
            Link::Logit => {
                let e = (-z.abs()).exp();
                let d = T::one() + e;
                e / (d * d)
            }
            Link::Cloglog => (z - z.exp()).exp(),
        }
    }

    /// Derivative of the density, `F''(z)`.
    #[inline]
    pub fn density_gradient<T: Scalar>(self, z: T) -> T {
        match self {
            Link::Probit => -z * self.density(z),
            Link::Logit => {
                // f (1 - 2F), with 1 - 2F = tanh(-z/2)
                self.density(z) * (-z / T::lit(2.0)).tanh()
            }
            Link::Cloglog => self.density(z) * (T::one() - z.exp()),
        }
    }

    /// Link function `G(p) = F⁻¹(p)`.
    pub fn quantile<T: Scalar>(self, p: T) -> Result<T> {
        if !(p > T::zero() && p < T::one()) {
            return Err(Error::Domain(format!(
                "{} link is defined only for probabilities strictly inside (0, 1), got {p}",
                self.name()
            )));
        }
        Ok(match self {
            Link::Probit => T::lit(probit_quantile(p.as_f64())),
            Link::Logit => p.ln() - (-p).ln_1p(),
            Link::Cloglog => (-(-p).ln_1p()).ln(),
        })
    }

    /// Link evaluated from an upper-tail probability `q = 1 - p`, i.e. the `z`
    /// with `survival(z) = q`. Accurate where `1 - q` is not representable.
    pub fn quantile_upper<T: Scalar>(self, q: T) -> Result<T> {
        if !(q > T::zero() && q < T::one()) {
            return Err(Error::Domain(format!(
                "{} link is defined only for probabilities strictly inside (0, 1), got upper tail {q}",
                self.name()
            )));
        }
        Ok(match self {
            Link::Probit => T::lit(-probit_quantile(q.as_f64())),
            Link::Logit => -(q.ln() - (-q).ln_1p()),
            Link::Cloglog => (-q.ln()).ln(),
        })
    }

    /// Probability of the interval `(lower, upper]` on the latent scale, where
    /// `None` stands for the corresponding infinite endpoint.
    #[inline]
    pub fn interval_probability<T: Scalar>(self, lower: Option<T>, upper: Option<T>) -> T {
        match (lower, upper) {
            (None, None) => T::one(),
            (None, Some(u)) => self.cdf(u),
            (Some(l), None) => self.survival(l),
            (Some(l), Some(u)) => {
                if l > T::zero() {
                    self.survival(l) - self.survival(u)
                } else {
                    self.cdf(u) - self.cdf(l)
                }
            }
        }
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Link {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "probit" => Ok(Link::Probit),
            "logit" => Ok(Link::Logit),
            "cloglog" => Ok(Link::Cloglog),
            other => Err(Error::Config(format!(
                "unknown link '{other}' (expected probit, logit or cloglog)"
            ))),
        }
    }
}

/// `Φ⁻¹(p)`: the `erfc_inv` estimate polished by one Newton step against
/// `erfc`, working in whichever tail is below one half.
fn probit_quantile(p: f64) -> f64 {
    if p > 0.5 {
        return -probit_quantile(1.0 - p);
    }
    let z = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
    let cdf = 0.5 * libm::erfc(-z * std::f64::consts::FRAC_1_SQRT_2);
    let density = INV_SQRT_2PI * (-0.5 * z * z).exp();
    if density > 0.0 {
        z - (cdf - p) / density
    } else {
        z
    }
}
