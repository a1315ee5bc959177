use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{ln_factorial, ln_gamma};

/// Response distribution. The negative binomial carries its overdispersion
/// `v`, with `Var(N) = μ + vμ²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Family {
    Poisson,
    NegativeBinomial { v: f64 },
    Gamma,
    InverseGaussian,
    Bernoulli,
}

/// Family without parameters, used to request a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Poisson,
    NegativeBinomial,
    Gamma,
    InverseGaussian,
    Bernoulli,
}

impl FamilyKind {
    pub fn default_link(self) -> Link {
        match self {
            FamilyKind::Bernoulli => Link::Logit,
            _ => Link::Log,
        }
    }
}

impl FromStr for FamilyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_lowercase().replace('-', "_").as_str() {
            "poisson" => FamilyKind::Poisson,
            "negative_binomial" | "negbin" | "nb" => FamilyKind::NegativeBinomial,
            "gamma" => FamilyKind::Gamma,
            "inverse_gaussian" | "ig" => FamilyKind::InverseGaussian,
            "bernoulli" | "binomial" | "logistic" => FamilyKind::Bernoulli,
            other => return Err(Error::InvalidArgument(format!("unknown family `{other}`"))),
        })
    }
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FamilyKind::Poisson => "poisson",
            FamilyKind::NegativeBinomial => "negative_binomial",
            FamilyKind::Gamma => "gamma",
            FamilyKind::InverseGaussian => "inverse_gaussian",
            FamilyKind::Bernoulli => "bernoulli",
        })
    }
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

fn is_count(y: f64) -> bool {
    y >= 0.0 && y.is_finite() && y.fract() == 0.0
}

impl Family {
    pub fn kind(&self) -> FamilyKind {
        match self {
            Family::Poisson => FamilyKind::Poisson,
            Family::NegativeBinomial { .. } => FamilyKind::NegativeBinomial,
            Family::Gamma => FamilyKind::Gamma,
            Family::InverseGaussian => FamilyKind::InverseGaussian,
            Family::Bernoulli => FamilyKind::Bernoulli,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::Poisson => "poisson",
            Family::NegativeBinomial { .. } => "negative_binomial",
            Family::Gamma => "gamma",
            Family::InverseGaussian => "inverse_gaussian",
            Family::Bernoulli => "bernoulli",
        }
    }

    /// `V(μ)`.
    pub fn variance(&self, mu: f64) -> f64 {
        match *self {
            Family::Poisson => mu,
            Family::NegativeBinomial { v } => mu + v * mu * mu,
            Family::Gamma => mu * mu,
            Family::InverseGaussian => mu * mu * mu,
            Family::Bernoulli => mu * (1.0 - mu),
        }
    }

    /// Unit deviance `d(y, μ)`; the deviance is `Σ wᵢ d(yᵢ, μᵢ)`.
    pub fn unit_deviance(&self, y: f64, mu: f64) -> f64 {
        let d = match *self {
            Family::Poisson => 2.0 * (xlogy(y, y / mu) - (y - mu)),
            Family::NegativeBinomial { v } if v > 0.0 => {
                let theta = 1.0 / v;
                2.0 * (xlogy(y, y / mu) - (y + theta) * ((v * y).ln_1p() - (v * mu).ln_1p()))
            }
            Family::NegativeBinomial { .. } => 2.0 * (xlogy(y, y / mu) - (y - mu)),
            Family::Gamma => 2.0 * (-(y / mu).ln() + (y - mu) / mu),
            Family::InverseGaussian => (y - mu).powi(2) / (mu * mu * y),
            Family::Bernoulli => 2.0 * (xlogy(y, y / mu) + xlogy(1.0 - y, (1.0 - y) / (1.0 - mu))),
        };
        d.max(0.0)
    }

    pub fn valid_response(&self, y: f64) -> bool {
        match self {
            Family::Poisson | Family::NegativeBinomial { .. } => is_count(y),
            Family::Gamma | Family::InverseGaussian => y > 0.0 && y.is_finite(),
            Family::Bernoulli => y == 0.0 || y == 1.0,
        }
    }

    /// Starting mean, pulled off the boundary of the mean domain.
    pub fn initial_mean(&self, y: f64, eps: f64) -> f64 {
        match self {
            Family::Poisson | Family::NegativeBinomial { .. } => y + 0.1,
            Family::Gamma | Family::InverseGaussian => y.max(eps),
            Family::Bernoulli => (y + 0.5) / 2.0,
        }
    }

    pub fn clamp_mean(&self, mu: f64, eps: f64) -> f64 {
        match self {
            Family::Bernoulli => mu.clamp(eps, 1.0 - eps),
            _ => mu.max(eps),
        }
    }

    /// Gamma and inverse Gaussian estimate φ; the others fix it at 1.
    pub fn estimates_dispersion(&self) -> bool {
        matches!(self, Family::Gamma | Family::InverseGaussian)
    }

    /// Parameters beyond β counted by AIC/BIC.
    pub fn extra_parameters(&self) -> usize {
        match self {
            Family::Gamma | Family::InverseGaussian | Family::NegativeBinomial { .. } => 1,
            _ => 0,
        }
    }

    /// Log-density of one observation with prior weight `w` at dispersion `phi`.
    pub fn log_density(&self, y: f64, mu: f64, w: f64, phi: f64) -> f64 {
        match *self {
            Family::Poisson => w * (xlogy(y, mu) - mu - ln_factorial(y)),
            Family::NegativeBinomial { v } => w * negbin_log_density(y, mu, v),
            Family::Gamma => {
                let shape = w / phi;
                shape * (shape * y / mu).ln() - shape * y / mu - y.ln() - ln_gamma(shape)
            }
            Family::InverseGaussian => {
                let lambda = w / phi;
                0.5 * (lambda / (2.0 * std::f64::consts::PI * y.powi(3))).ln()
                    - lambda * (y - mu).powi(2) / (2.0 * mu * mu * y)
            }
            Family::Bernoulli => w * (xlogy(y, mu) + xlogy(1.0 - y, 1.0 - mu)),
        }
    }
}

/// NB log-probability with `Var = μ + vμ²`; `v = 0` is the Poisson limit.
pub(crate) fn negbin_log_density(y: f64, mu: f64, v: f64) -> f64 {
    if v <= 0.0 {
        return xlogy(y, mu) - mu - ln_factorial(y);
    }
    let lead = if y.fract() == 0.0 && y <= 10_000.0 {
        // ln Γ(y + θ) − ln Γ(θ) − y ln θ, exactly as a finite sum
        (0..y as u64).map(|j| (j as f64 * v).ln_1p()).sum::<f64>()
    } else {
        let theta = 1.0 / v;
        ln_gamma(y + theta) - ln_gamma(theta) + y * v.ln()
    };
    lead + xlogy(y, mu) - (y + 1.0 / v) * (v * mu).ln_1p() - ln_factorial(y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Log,
    Logit,
    Identity,
}

impl Link {
    pub fn name(&self) -> &'static str {
        match self {
            Link::Log => "log",
            Link::Logit => "logit",
            Link::Identity => "identity",
        }
    }

    /// `g(μ)`
    pub fn link(&self, mu: f64) -> f64 {
        match self {
            Link::Log => mu.ln(),
            Link::Logit => (mu / (1.0 - mu)).ln(),
            Link::Identity => mu,
        }
    }

    /// `g⁻¹(η)`
    pub fn inverse(&self, eta: f64) -> f64 {
        match self {
            Link::Log => eta.exp(),
            Link::Logit => {
                if eta >= 0.0 {
                    1.0 / (1.0 + (-eta).exp())
                } else {
                    let e = eta.exp();
                    e / (1.0 + e)
                }
            }
            Link::Identity => eta,
        }
    }

    /// `g′(μ)`
    pub fn derivative(&self, mu: f64) -> f64 {
        match self {
            Link::Log => 1.0 / mu,
            Link::Logit => 1.0 / (mu * (1.0 - mu)),
            Link::Identity => 1.0,
        }
    }
}

impl FromStr for Link {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_lowercase().as_str() {
            "log" => Link::Log,
            "logit" => Link::Logit,
            "identity" => Link::Identity,
            other => return Err(Error::InvalidArgument(format!("unknown link `{other}`"))),
        })
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
