//! Generalized linear models fitted by iteratively reweighted least squares.
//!
//! A [`FittedModel`] keeps its design, so diagnostics and prediction need
//! nothing else. [`ModelDocument`] is the serializable form.

mod document;
pub mod family;
mod irls;
mod negbin;
mod simulate;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::design::{parse_column_label, DesignMatrix, INTERCEPT};
use crate::error::{Error, Result};
use crate::ingest::RatingFactors;
use crate::special::{chi_square_survival, digamma, trigamma, two_sided_normal_p};

pub use document::{CoefficientRow, DataView, FitSummary, ModelDocument, MODEL_DOCUMENT_VERSION};
pub use family::{Family, FamilyKind, Link};
pub use irls::fit;
pub use negbin::{fit_negbin, POISSON_LIMIT_FLOOR, POISSON_LIMIT_LR};
pub use simulate::sample_response;

pub(crate) use irls::{deviance, fit_from};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitControl {
    pub max_iter: usize,
    /// Relative change in deviance that ends the iteration.
    pub tolerance: f64,
    pub max_halving: usize,
    /// Means are kept at least this far from the boundary of their domain.
    pub mean_floor: f64,
}

impl Default for FitControl {
    fn default() -> Self {
        FitControl {
            max_iter: 50,
            tolerance: 1e-10,
            max_halving: 10,
            mean_floor: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispersionMethod {
    Pearson,
    Deviance,
    MaximumLikelihood,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaldTest {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

#[derive(Debug, Clone)]
pub struct FittedModel {
    pub design: DesignMatrix,
    pub family: Family,
    pub link: Link,
    pub control: FitControl,
    pub coefficients: Vec<f64>,
    /// `(XᵀWX)⁻¹`
    pub(crate) cov_unscaled: DMatrix<f64>,
    /// `R⁻¹` from the QR factor of `√W X`.
    pub(crate) r_inv: DMatrix<f64>,
    /// `Xβ` without the offset.
    pub linear_predictor: Vec<f64>,
    pub fitted: Vec<f64>,
    pub working_weights: Vec<f64>,
    pub deviance: f64,
    pub pearson_chi2: f64,
    /// φ̂ scaling the covariance: Pearson for gamma and inverse Gaussian, 1 otherwise.
    pub dispersion: f64,
    /// Maximum likelihood φ̂, used for the log-likelihood.
    pub dispersion_ml: Option<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Negative binomial requested but the Poisson fit was kept.
    pub poisson_limit: bool,
    /// Deviance after each accepted iteration.
    pub deviance_trace: Vec<f64>,
}

/// Fit `kind` with `link` (or its default link).
pub fn fit_family(
    design: &DesignMatrix,
    kind: FamilyKind,
    link: Option<Link>,
    control: &FitControl,
) -> Result<FittedModel> {
    let link = link.unwrap_or(kind.default_link());
    match kind {
        FamilyKind::Poisson => fit(design, Family::Poisson, link, control),
        FamilyKind::NegativeBinomial => fit_negbin(design, link, control),
        FamilyKind::Gamma => fit(design, Family::Gamma, link, control),
        FamilyKind::InverseGaussian => fit(design, Family::InverseGaussian, link, control),
        FamilyKind::Bernoulli => fit(design, Family::Bernoulli, link, control),
    }
}

/// Maximum likelihood dispersion for gamma or inverse Gaussian means.
pub fn dispersion_ml(family: Family, y: &[f64], mu: &[f64], w: &[f64]) -> f64 {
    let dev = deviance(family, y, mu, w);
    let total_w: f64 = w.iter().sum();
    match family {
        Family::InverseGaussian => dev / y.len() as f64,
        Family::Gamma => {
            if dev <= 0.0 {
                return 0.0;
            }
            1.0 / gamma_ml_shape(w, dev, total_w)
        }
        _ => 1.0,
    }
}

/// Root in `k` of `Σ wᵢ[ln(wᵢk) − ψ(wᵢk)] = D/2`; the left side decreases in `k`.
fn gamma_ml_shape(w: &[f64], dev: f64, total_w: f64) -> f64 {
    let score = |k: f64| -> f64 {
        w.iter()
            .filter(|&&w| w > 0.0)
            .map(|&w| w * ((w * k).ln() - digamma(w * k)))
            .sum::<f64>()
            - 0.5 * dev
    };
    let slope = |k: f64| -> f64 {
        w.iter()
            .filter(|&&w| w > 0.0)
            .map(|&w| w * (1.0 / k - w * trigamma(w * k)))
            .sum()
    };
    let guess = total_w / dev;
    let (mut lo, mut hi) = (guess, guess);
    while score(lo) < 0.0 && lo > 1e-300 {
        lo *= 0.5;
    }
    while score(hi) > 0.0 && hi < 1e300 {
        hi *= 2.0;
    }
    let mut k = guess.clamp(lo, hi);
    for _ in 0..200 {
        let s = score(k);
        if s == 0.0 {
            break;
        }
        if s > 0.0 {
            lo = k;
        } else {
            hi = k;
        }
        let newton = k - s / slope(k);
        k = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (hi - lo) <= 1e-15 * k || (s / slope(k)).abs() <= 1e-14 * k {
            break;
        }
    }
    k
}

impl FittedModel {
    pub fn n(&self) -> usize {
        self.design.nrows()
    }

    pub fn p(&self) -> usize {
        self.design.ncols()
    }

    pub fn labels(&self) -> &[String] {
        &self.design.labels
    }

    pub fn coefficient(&self, label: &str) -> Option<f64> {
        self.design
            .labels
            .iter()
            .position(|l| l == label)
            .map(|j| self.coefficients[j])
    }

    /// The negative binomial `v`, when that family was fitted.
    pub fn nb_v(&self) -> Option<f64> {
        match self.family {
            Family::NegativeBinomial { v } => Some(v),
            _ => None,
        }
    }

    /// Parameters counted by AIC and BIC.
    pub fn n_parameters(&self) -> usize {
        self.p() + self.family.extra_parameters()
    }

    pub fn aic(&self) -> f64 {
        -2.0 * self.log_likelihood + 2.0 * self.n_parameters() as f64
    }

    pub fn bic(&self) -> f64 {
        -2.0 * self.log_likelihood + self.n_parameters() as f64 * (self.n() as f64).ln()
    }

    pub fn residual_df(&self) -> usize {
        self.n().saturating_sub(self.p())
    }

    pub fn scaled_deviance(&self) -> f64 {
        self.deviance / self.dispersion
    }

    pub fn estimate_dispersion(&self, method: DispersionMethod) -> Result<f64> {
        let (n, p) = (self.n(), self.p());
        if method != DispersionMethod::MaximumLikelihood && n <= p {
            return Err(Error::NoResidualDf { n, p });
        }
        Ok(match method {
            DispersionMethod::Pearson => self.pearson_chi2 / (n - p) as f64,
            DispersionMethod::Deviance => self.deviance / (n - p) as f64,
            DispersionMethod::MaximumLikelihood => {
                dispersion_ml(self.family, &self.design.y, &self.fitted, &self.design.weights)
            }
        })
    }

    /// `φ̂ (XᵀWX)⁻¹`
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.cov_unscaled * self.dispersion
    }

    pub fn covariance_unscaled(&self) -> &DMatrix<f64> {
        &self.cov_unscaled
    }

    pub fn std_errors(&self) -> Vec<f64> {
        (0..self.p())
            .map(|j| (self.cov_unscaled[(j, j)] * self.dispersion).sqrt())
            .collect()
    }

    /// Two-sided normal p-values of `β̂ⱼ / se(β̂ⱼ)`.
    pub fn p_values(&self) -> Vec<f64> {
        self.coefficients
            .iter()
            .zip(self.std_errors())
            .map(|(b, se)| two_sided_normal_p(b / se))
            .collect()
    }

    /// Score vector `Xᵀ W g′(μ)(y − μ)`, zero at the maximum.
    pub fn score(&self) -> Vec<f64> {
        let u: Vec<f64> = (0..self.n())
            .map(|i| {
                let m = self.fitted[i];
                self.working_weights[i] * self.link.derivative(m) * (self.design.y[i] - m)
            })
            .collect();
        let u = DVector::from_vec(u);
        (self.design.x.transpose() * u).iter().copied().collect()
    }

    /// Wald test of `Cβ = 0` with the rows of `c` as contrasts.
    pub fn wald_test(&self, c: &DMatrix<f64>) -> Result<WaldTest> {
        if c.ncols() != self.p() {
            return Err(Error::InvalidArgument(format!(
                "contrast has {} columns, model has {}",
                c.ncols(),
                self.p()
            )));
        }
        let beta = DVector::from_column_slice(&self.coefficients);
        let cb = c * beta;
        let middle = c * self.covariance() * c.transpose();
        let inv = middle
            .try_inverse()
            .ok_or_else(|| Error::InvalidArgument("contrast covariance is singular".into()))?;
        let statistic = (cb.transpose() * inv * &cb)[(0, 0)];
        let df = c.nrows();
        Ok(WaldTest {
            statistic,
            df,
            p_value: chi_square_survival(statistic, df as f64),
        })
    }

    /// Wald test that the named coefficients are jointly zero.
    pub fn wald_test_labels(&self, labels: &[&str]) -> Result<WaldTest> {
        let mut c = DMatrix::zeros(labels.len(), self.p());
        for (r, label) in labels.iter().enumerate() {
            let j = self
                .design
                .labels
                .iter()
                .position(|l| l == label)
                .ok_or_else(|| Error::InvalidArgument(format!("no coefficient `{label}`")))?;
            c[(r, j)] = 1.0;
        }
        self.wald_test(&c)
    }

    /// `Xβ` (without offset) for one row of levels.
    pub fn linear_predictor_for(&self, factors: &RatingFactors) -> Result<f64> {
        let row = self.design.row_for(factors)?;
        Ok(row.iter().zip(&self.coefficients).map(|(x, b)| x * b).sum())
    }

    /// Mean response for `factors`; frequency models scale by `exposure`.
    pub fn predict(&self, factors: &RatingFactors, exposure: f64) -> Result<f64> {
        let eta = self.linear_predictor_for(factors)?;
        let offset = if self.design.formula.has_offset() {
            exposure.ln()
        } else {
            0.0
        };
        Ok(self.link.inverse(eta + offset))
    }

    /// A response vector drawn at the fitted means.
    pub fn simulate<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let phi = if self.dispersion.is_finite() {
            self.dispersion
        } else {
            1.0
        };
        self.fitted
            .iter()
            .zip(&self.design.weights)
            .map(|(&m, &w)| sample_response(self.family, m, w, phi, rng))
            .collect()
    }

    /// Same family, link and design fitted to a new response. A negative
    /// binomial keeps its `v`.
    pub fn refit_with_response(&self, y: Vec<f64>) -> Result<FittedModel> {
        fit(&self.design.with_response(y), self.family, self.link, &self.control)
    }

    /// Coefficient table in design order, with NA rows for aliased columns.
    pub fn coefficient_rows(&self) -> Vec<CoefficientRow> {
        let se = self.std_errors();
        let mut rows: Vec<CoefficientRow> = self
            .design
            .labels
            .iter()
            .enumerate()
            .map(|(j, label)| CoefficientRow::estimated(label, self.coefficients[j], se[j]))
            .collect();
        for label in &self.design.aliased {
            let dims = term_dimensions(label);
            let at = rows
                .iter()
                .rposition(|r| term_dimensions(&r.label) == dims)
                .map(|i| i + 1)
                .unwrap_or(rows.len());
            rows.insert(at, CoefficientRow::aliased(label));
        }
        rows
    }

    pub fn summary(&self) -> FitSummary {
        FitSummary {
            n: self.n(),
            p: self.p(),
            deviance: self.deviance,
            scaled_deviance: finite(self.scaled_deviance()),
            pearson_chi2: self.pearson_chi2,
            dispersion: finite(self.dispersion),
            dispersion_ml: self.dispersion_ml,
            nb_v: self.nb_v(),
            log_likelihood: self.log_likelihood,
            aic: self.aic(),
            bic: self.bic(),
            iterations: self.iterations,
            converged: self.converged,
            poisson_limit: self.poisson_limit,
        }
    }

    pub fn to_document(&self, data: Option<DataView>) -> ModelDocument {
        ModelDocument {
            version: MODEL_DOCUMENT_VERSION,
            formula: self.design.formula.clone(),
            family: self.family,
            link: self.link,
            coefficients: self.coefficient_rows(),
            factors: self.design.factors.clone(),
            summary: Some(self.summary()),
            data,
        }
    }
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// Sorted dimension names of a coefficient label; empty for the intercept.
pub(crate) fn term_dimensions(label: &str) -> Vec<String> {
    if label == INTERCEPT {
        return Vec::new();
    }
    let mut dims: Vec<String> = parse_column_label(label)
        .map(|spec| spec.into_iter().map(|(d, _)| d).collect())
        .unwrap_or_default();
    dims.sort();
    dims
}
