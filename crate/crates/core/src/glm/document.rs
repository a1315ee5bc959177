use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::design::{parse_column_label, DesignFactor, Formula, INTERCEPT};
use crate::error::{Error, Result};
use crate::glm::family::{Family, Link};
use crate::special::two_sided_normal_p;

pub const MODEL_DOCUMENT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub label: String,
    /// `None` for a column with no supporting data.
    pub estimate: Option<f64>,
    pub std_error: Option<f64>,
    pub z: Option<f64>,
    pub p_value: Option<f64>,
    pub exp_estimate: Option<f64>,
}

impl CoefficientRow {
    pub fn estimated(label: &str, estimate: f64, std_error: f64) -> Self {
        let se = std_error.is_finite().then_some(std_error);
        CoefficientRow {
            label: label.to_string(),
            estimate: Some(estimate),
            std_error: se,
            z: se.map(|se| estimate / se),
            p_value: se.map(|se| two_sided_normal_p(estimate / se)),
            exp_estimate: Some(estimate.exp()),
        }
    }

    pub fn aliased(label: &str) -> Self {
        CoefficientRow {
            label: label.to_string(),
            estimate: None,
            std_error: None,
            z: None,
            p_value: None,
            exp_estimate: None,
        }
    }

    /// Dimension names joined by `:` and the matching level names.
    fn term_and_level(&self) -> (String, String) {
        if self.label == INTERCEPT {
            return ("(Intercept)".into(), String::new());
        }
        match parse_column_label(&self.label) {
            Ok(spec) => (
                spec.iter().map(|(d, _)| d.as_str()).collect::<Vec<_>>().join(":"),
                spec.iter().map(|(_, l)| l.as_str()).collect::<Vec<_>>().join(":"),
            ),
            Err(_) => (self.label.clone(), String::new()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub n: usize,
    pub p: usize,
    pub deviance: f64,
    /// `D / φ̂`
    pub scaled_deviance: Option<f64>,
    pub pearson_chi2: f64,
    pub dispersion: Option<f64>,
    pub dispersion_ml: Option<f64>,
    pub nb_v: Option<f64>,
    pub log_likelihood: f64,
    pub aic: f64,
    pub bic: f64,
    pub iterations: usize,
    pub converged: bool,
    pub poisson_limit: bool,
}

/// How the modelling rows were prepared from raw policies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct DataView {
    pub scheme: String,
    /// Dimensions the rows were aggregated over; empty for policy-level rows.
    #[serde(default)]
    pub aggregate: Vec<String>,
    /// Drop rules in `dim=level&dim=level` form.
    #[serde(default)]
    pub drops: Vec<String>,
}

/// Serializable fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub version: u32,
    pub formula: Formula,
    pub family: Family,
    pub link: Link,
    pub coefficients: Vec<CoefficientRow>,
    pub factors: Vec<DesignFactor>,
    #[serde(default)]
    pub summary: Option<FitSummary>,
    #[serde(default)]
    pub data: Option<DataView>,
}

impl ModelDocument {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn to_json_string(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json_string()?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MODEL_DOCUMENT_VERSION {
            return Err(Error::Config(format!(
                "model document version {} (expected {MODEL_DOCUMENT_VERSION})",
                self.version
            )));
        }
        if !self.coefficients.iter().any(|c| c.label == INTERCEPT) {
            return Err(Error::Config("model document has no intercept".into()));
        }
        for row in &self.coefficients {
            for (dim, level) in parse_column_label(&row.label)? {
                let factor = self
                    .factor(&dim)
                    .ok_or_else(|| Error::UnknownDimension(dim.clone()))?;
                if !factor.declared.contains(&level) {
                    return Err(Error::UnknownLevel {
                        dimension: dim,
                        level,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn factor(&self, name: &str) -> Option<&DesignFactor> {
        self.factors.iter().find(|f| f.name == name)
    }

    /// Estimate for `label`; `None` when absent or not estimable.
    pub fn estimate(&self, label: &str) -> Option<f64> {
        self.row(label).and_then(|r| r.estimate)
    }

    pub fn row(&self, label: &str) -> Option<&CoefficientRow> {
        self.coefficients.iter().find(|r| r.label == label)
    }

    pub fn intercept(&self) -> Option<f64> {
        self.estimate(INTERCEPT)
    }

    /// Fixed-width coefficient table: term, level, β̂, standard error,
    /// two-sided p-value and `exp(β̂)`.
    pub fn render_table(&self) -> String {
        let rows: Vec<(String, String, &CoefficientRow)> = self
            .coefficients
            .iter()
            .map(|r| {
                let (t, l) = r.term_and_level();
                (t, l, r)
            })
            .collect();
        let term_w = rows.iter().map(|r| r.0.chars().count()).max().unwrap_or(4).max(4);
        let level_w = rows.iter().map(|r| r.1.chars().count()).max().unwrap_or(5).max(5);
        let num = |x: Option<f64>, digits: usize| match x {
            Some(v) => format!("{v:.digits$}"),
            None => "NA".to_string(),
        };
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<term_w$}  {:<level_w$}  {:>9}  {:>10}  {:>8}  {:>9}",
            "Term", "Level", "Estimate", "Std.Error", "Pr(>|z|)", "exp(Est)"
        );
        let mut last_term = String::new();
        for (term, level, r) in &rows {
            let shown = if *term == last_term { "" } else { term.as_str() };
            let _ = writeln!(
                out,
                "{:<term_w$}  {:<level_w$}  {:>9}  {:>10}  {:>8}  {:>9}",
                shown,
                level,
                num(r.estimate, 3),
                num(r.std_error, 3),
                num(r.p_value, 3),
                num(r.exp_estimate, 3),
            );
            last_term = term.clone();
        }
        if let Some(s) = &self.summary {
            let _ = writeln!(out);
            let _ = writeln!(
                out,
                "family {} ({} link), n = {}, p = {}",
                self.family.name(),
                self.link,
                s.n,
                s.p
            );
            let _ = writeln!(out, "deviance {:.4}, Pearson X2 {:.4}", s.deviance, s.pearson_chi2);
            if let Some(phi) = s.dispersion.filter(|_| matches!(self.family, Family::Gamma | Family::InverseGaussian)) {
                let _ = writeln!(out, "dispersion {phi:.6}");
            }
            if let Some(v) = s.nb_v {
                let _ = writeln!(out, "negative binomial v {v:.6}");
            }
            if s.poisson_limit {
                let _ = writeln!(out, "poisson_limit: overdispersion not supported by the data");
            }
            let _ = writeln!(
                out,
                "log-likelihood {:.4}, AIC {:.4}, BIC {:.4}",
                s.log_likelihood, s.aic, s.bic
            );
            if !s.converged {
                let _ = writeln!(out, "warning: not converged after {} iterations", s.iterations);
            }
        }
        out
    }

    /// Coefficient table as CSV.
    pub fn coefficients_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["label", "estimate", "std_error", "z", "p_value", "exp_estimate"])?;
        let cell = |x: Option<f64>| x.map(|v| format!("{v:.10}")).unwrap_or_else(|| "NA".into());
        for r in &self.coefficients {
            w.write_record([
                r.label.clone(),
                cell(r.estimate),
                cell(r.std_error),
                cell(r.z),
                cell(r.p_value),
                cell(r.exp_estimate),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}
