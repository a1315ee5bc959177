//! Synthetic portfolios drawn from known frequency and severity models.
//!
//! A generator spec gives independent marginal distributions for each raw
//! policy column and the true coefficients of both models. Covariates are
//! banded with a scheme, claim counts are drawn from the frequency model
//! and each claim gets an amount from the severity model.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design::{parse_column_label, ColumnSpec, Formula, ResponseRole, INTERCEPT};
use crate::error::{Error, Result};
use crate::glm::{sample_response, Family, FamilyKind, Link};
use crate::ingest::{
    band_policy, BandingScheme, ClaimRecord, PolicyRecord, RatingFactors, SourceField, MAX_AGE, MIN_AGE,
    MIN_MODEL_YEAR, POLICY_COLUMNS,
};

/// One entry of a column's marginal: a category value or a range.
///
/// Integer columns (`age`, `model_year_offset`) use inclusive ranges;
/// `insured_value` uses `[low, high)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginal {
    pub weight: f64,
    #[serde(default)]
    pub value: Option<String>,
    #[serde(default)]
    pub range: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureSpec {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub formula: Formula,
    pub family: Family,
    #[serde(default = "log_link")]
    pub link: Link,
    #[serde(default = "unit")]
    pub dispersion: f64,
    /// Column label to true coefficient; absent columns are zero.
    pub coefficients: BTreeMap<String, f64>,
}

fn log_link() -> Link {
    Link::Log
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    /// Banding scheme name in the scheme file.
    pub scheme: String,
    pub exposure: ExposureSpec,
    pub columns: BTreeMap<String, Vec<Marginal>>,
    pub frequency: ModelSpec,
    pub severity: ModelSpec,
}

impl GeneratorSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

struct Column {
    field: SourceField,
    entries: Vec<Marginal>,
    cumulative: Vec<f64>,
}

impl Column {
    fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> &Marginal {
        let u = rng.gen::<f64>() * self.cumulative.last().copied().unwrap_or(0.0);
        let i = self.cumulative.partition_point(|c| *c <= u);
        &self.entries[i.min(self.entries.len() - 1)]
    }
}

struct TrueModel {
    family: Family,
    link: Link,
    dispersion: f64,
    terms: Vec<(ColumnSpec, f64)>,
    intercept: f64,
}

impl TrueModel {
    fn new(spec: &ModelSpec, role: ResponseRole, scheme: &BandingScheme) -> Result<Self> {
        if spec.formula.response != role {
            return Err(Error::Config(format!("{role:?} model has response `{}`", spec.formula.response.response_name())));
        }
        let kind = spec.family.kind();
        let allowed = match role {
            ResponseRole::Frequency => matches!(kind, FamilyKind::Poisson | FamilyKind::NegativeBinomial),
            _ => matches!(kind, FamilyKind::Gamma | FamilyKind::InverseGaussian),
        };
        if !allowed {
            return Err(Error::Config(format!("family {} cannot generate {role:?} data", spec.family.name())));
        }
        if !(spec.dispersion.is_finite() && spec.dispersion > 0.0) {
            return Err(Error::Config("dispersion must be positive".into()));
        }
        let catalog = scheme.catalog();
        let dims = spec.formula.dimensions();
        let mut terms = Vec::new();
        let mut intercept = 0.0;
        for (label, &beta) in &spec.coefficients {
            if label == INTERCEPT {
                intercept = beta;
                continue;
            }
            let cols = parse_column_label(label)?;
            for (d, l) in &cols {
                if !dims.contains(d) {
                    return Err(Error::Config(format!("coefficient `{label}` uses `{d}`, absent from the formula")));
                }
                let f = catalog.get(d).ok_or_else(|| Error::UnknownDimension(d.clone()))?;
                if f.position(l).is_none() {
                    return Err(Error::UnknownLevel { dimension: d.clone(), level: l.clone() });
                }
            }
            terms.push((cols, beta));
        }
        Ok(TrueModel {
            family: spec.family,
            link: spec.link,
            dispersion: spec.dispersion,
            terms,
            intercept,
        })
    }

    fn eta(&self, factors: &RatingFactors) -> f64 {
        self.intercept
            + self
                .terms
                .iter()
                .filter(|(cols, _)| cols.iter().all(|(d, l)| factors.get(d) == Some(l.as_str())))
                .map(|(_, b)| b)
                .sum::<f64>()
    }

    fn mean(&self, factors: &RatingFactors) -> f64 {
        self.link.inverse(self.eta(factors))
    }
}

/// Simulated policies and their claims.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Portfolio {
    pub policies: Vec<PolicyRecord>,
    pub claims: Vec<ClaimRecord>,
}

pub struct Generator {
    scheme: BandingScheme,
    columns: Vec<Column>,
    exposure: ExposureSpec,
    frequency: TrueModel,
    severity: TrueModel,
}

fn round_to(x: f64, digits: i32) -> f64 {
    let s = 10f64.powi(digits);
    (x * s).round() / s
}

impl Generator {
    pub fn new(spec: &GeneratorSpec, scheme: BandingScheme) -> Result<Self> {
        if scheme.name != spec.scheme {
            return Err(Error::Config(format!(
                "generator expects scheme `{}`, got `{}`",
                spec.scheme, scheme.name
            )));
        }
        let e = &spec.exposure;
        if !(e.min > 0.0 && e.max >= e.min && e.max.is_finite()) {
            return Err(Error::Config("exposure needs 0 < min <= max".into()));
        }
        let mut columns = Vec::new();
        for name in POLICY_COLUMNS {
            let Some(field) = SourceField::from_column(name) else {
                continue;
            };
            let entries = spec
                .columns
                .get(name)
                .ok_or_else(|| Error::Config(format!("no marginal for column `{name}`")))?
                .clone();
            columns.push(Self::column(field, entries, &scheme)?);
        }
        if let Some(extra) = spec.columns.keys().find(|k| SourceField::from_column(k).is_none()) {
            return Err(Error::Config(format!("unknown column `{extra}`")));
        }
        Ok(Generator {
            frequency: TrueModel::new(&spec.frequency, ResponseRole::Frequency, &scheme)?,
            severity: TrueModel::new(&spec.severity, ResponseRole::Severity, &scheme)?,
            scheme,
            columns,
            exposure: spec.exposure.clone(),
        })
    }

    fn column(field: SourceField, entries: Vec<Marginal>, scheme: &BandingScheme) -> Result<Column> {
        let name = field.column();
        if entries.is_empty() {
            return Err(Error::Config(format!("column `{name}` has an empty marginal")));
        }
        let mut cumulative = Vec::with_capacity(entries.len());
        let mut total = 0.0;
        for m in &entries {
            if !(m.weight.is_finite() && m.weight >= 0.0) {
                return Err(Error::Config(format!("column `{name}` has a negative weight")));
            }
            total += m.weight;
            cumulative.push(total);
            match (field.is_numeric(), &m.value, m.range) {
                (false, Some(v), None) => {
                    for dim in scheme.dimensions.iter().filter(|d| d.source == field) {
                        if dim.band_category(v).is_none() {
                            return Err(Error::Config(format!("`{v}` has no level in `{}`", dim.name)));
                        }
                    }
                }
                (true, None, Some([lo, hi])) => {
                    let top = if field == SourceField::InsuredValue { hi - 1e-3 } else { hi };
                    if !(lo <= top) || lo <= 0.0 && field == SourceField::InsuredValue {
                        return Err(Error::Config(format!("bad range [{lo}, {hi}] for `{name}`")));
                    }
                    if field != SourceField::InsuredValue && (lo.fract() != 0.0 || hi.fract() != 0.0) {
                        return Err(Error::Config(format!("`{name}` ranges must be integers")));
                    }
                    if field == SourceField::Age && (lo < MIN_AGE as f64 || hi > MAX_AGE as f64) {
                        return Err(Error::Config(format!("age range [{lo}, {hi}] outside [{MIN_AGE}, {MAX_AGE}]")));
                    }
                    if field == SourceField::ModelYearOffset
                        && scheme.subscription_year as f64 - hi < MIN_MODEL_YEAR as f64
                    {
                        return Err(Error::Config(format!("model year offset {hi} predates {MIN_MODEL_YEAR}")));
                    }
                    for dim in scheme.dimensions.iter().filter(|d| d.source == field) {
                        let (a, b) = (dim.band_numeric(lo), dim.band_numeric(top));
                        if a.is_none() || a != b {
                            return Err(Error::Config(format!(
                                "range [{lo}, {hi}] of `{name}` is not inside one `{}` band",
                                dim.name
                            )));
                        }
                    }
                }
                _ => {
                    return Err(Error::Config(format!(
                        "column `{name}` entries need {}",
                        if field.is_numeric() { "`range`" } else { "`value`" }
                    )))
                }
            }
        }
        if total <= 0.0 {
            return Err(Error::Config(format!("column `{name}` has zero total weight")));
        }
        Ok(Column { field, entries, cumulative })
    }

    pub fn scheme(&self) -> &BandingScheme {
        &self.scheme
    }

    fn draw_policy<R: Rng + ?Sized>(&self, index: usize, rng: &mut R) -> PolicyRecord {
        let mut p = PolicyRecord {
            policy_id: format!("P{:07}", index + 1),
            exposure: 0.0,
            claim_count: 0,
            vehicle_class: String::new(),
            make: String::new(),
            model_year_offset: 0,
            policy_class: String::new(),
            region: String::new(),
            gender: String::new(),
            age: 0,
            insured_value: 0.0,
        };
        for col in &self.columns {
            let m = col.pick(rng);
            match (col.field, &m.value, m.range) {
                (SourceField::Age, _, Some([lo, hi])) => p.age = rng.gen_range(lo as u32..=hi as u32),
                (SourceField::ModelYearOffset, _, Some([lo, hi])) => {
                    p.model_year_offset = rng.gen_range(lo as i32..=hi as i32)
                }
                (SourceField::InsuredValue, _, Some([lo, hi])) => {
                    let x = round_to(lo + (hi - lo) * rng.gen::<f64>(), 3);
                    p.insured_value = x.clamp(lo, hi - 1e-3);
                }
                (SourceField::Class, Some(v), _) => p.vehicle_class = v.clone(),
                (SourceField::Make, Some(v), _) => p.make = v.clone(),
                (SourceField::Region, Some(v), _) => p.region = v.clone(),
                (SourceField::Gender, Some(v), _) => p.gender = v.clone(),
                (SourceField::PolicyClass, Some(v), _) => p.policy_class = v.clone(),
                _ => unreachable!("marginals are validated"),
            }
        }
        let e = self.exposure.min + (self.exposure.max - self.exposure.min) * rng.gen::<f64>();
        p.exposure = round_to(e, 6).max(1e-6);
        p
    }

    fn push_policy<R: Rng + ?Sized>(&self, out: &mut Portfolio, rng: &mut R) -> Result<()> {
        let mut p = self.draw_policy(out.policies.len(), rng);
        let factors = band_policy(&p, &self.scheme)?;
        let mu = p.exposure * self.frequency.mean(&factors);
        p.claim_count = sample_response(self.frequency.family, mu, 1.0, 1.0, rng) as u32;
        let mean = self.severity.mean(&factors);
        for _ in 0..p.claim_count {
            let y = sample_response(self.severity.family, mean, 1.0, self.severity.dispersion, rng);
            out.claims.push(ClaimRecord {
                policy_id: p.policy_id.clone(),
                amount: round_to(y, 6).max(1e-6),
            });
        }
        out.policies.push(p);
        Ok(())
    }

    /// Draw `n` policies with claims; the same seed gives the same portfolio.
    pub fn portfolio(&self, n: usize, seed: u64) -> Result<Portfolio> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Portfolio::default();
        for _ in 0..n {
            self.push_policy(&mut out, &mut rng)?;
        }
        Ok(out)
    }

    /// Policies drawn until at least `claims` claims exist.
    pub fn portfolio_with_claims(&self, claims: usize, seed: u64) -> Result<Portfolio> {
        if claims > 0 && !(self.implied_claim_mean() > 0.0) {
            return Err(Error::Config("frequency model has zero mean".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Portfolio::default();
        while out.claims.len() < claims {
            self.push_policy(&mut out, &mut rng)?;
        }
        Ok(out)
    }

    fn column_of(&self, field: SourceField) -> &Column {
        self.columns.iter().find(|c| c.field == field).expect("every column present")
    }

    /// Level of `dim` for every value a marginal entry can produce.
    fn entry_level(&self, dim: &str, m: &Marginal) -> &str {
        let d = self.scheme.dimension(dim).expect("dimension in scheme");
        match (&m.value, m.range) {
            (Some(v), _) => d.band_category(v),
            (None, Some([lo, _])) => d.band_numeric(lo),
            _ => None,
        }
        .expect("marginals are validated")
    }

    /// Expected claim count per policy under the true model.
    pub fn implied_claim_mean(&self) -> f64 {
        let dims = self.frequency_dimensions();
        // joint distribution over the source columns feeding the frequency model
        let mut by_field: Vec<(SourceField, Vec<&str>)> = Vec::new();
        for d in &dims {
            let field = self.scheme.dimension(d).expect("dimension in scheme").source;
            match by_field.iter_mut().find(|(f, _)| *f == field) {
                Some((_, v)) => v.push(d),
                None => by_field.push((field, vec![d])),
            }
        }
        let mut cells: Vec<(RatingFactors, f64)> = vec![(RatingFactors::new(), 1.0)];
        for (field, names) in &by_field {
            let col = self.column_of(*field);
            let total = *col.cumulative.last().unwrap();
            let mut next = Vec::new();
            for (f, p) in &cells {
                for m in &col.entries {
                    let mut g = f.clone();
                    for name in names {
                        g.insert(name, self.entry_level(name, m));
                    }
                    next.push((g, p * m.weight / total));
                }
            }
            cells = next;
        }
        let rate: f64 = cells.iter().map(|(f, p)| p * self.frequency.mean(f)).sum();
        rate * 0.5 * (self.exposure.min + self.exposure.max)
    }

    fn frequency_dimensions(&self) -> Vec<String> {
        let mut dims: Vec<String> = Vec::new();
        for (cols, _) in &self.frequency.terms {
            for (d, _) in cols {
                if !dims.contains(d) {
                    dims.push(d.clone());
                }
            }
        }
        dims
    }

    /// Marginal level distribution of one scheme dimension.
    pub fn level_distribution(&self, dim: &str) -> Result<Vec<(String, f64)>> {
        let d = self
            .scheme
            .dimension(dim)
            .ok_or_else(|| Error::UnknownDimension(dim.to_string()))?;
        let col = self.column_of(d.source);
        let total = *col.cumulative.last().unwrap();
        let mut probs: BTreeMap<String, f64> = BTreeMap::new();
        for m in &col.entries {
            *probs.entry(self.entry_level(dim, m).to_string()).or_default() += m.weight / total;
        }
        Ok(probs.into_iter().collect())
    }
}
