//! Banding schemes: how raw policy covariates map onto rating levels.
//!
//! Schemes are data, not code. A scheme file holds any number of named
//! schemes; each dimension is either a list of half-open numeric bands
//! `[low, high)` or a list of levels that collect raw category values.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PolicyRecord, RatingFactors};
use crate::error::{Error, Result};

/// The shipped default schemes (`raw` and `tariff`).
pub const DEFAULT_SCHEMES: &str = include_str!("../../fixtures/bands.toml");

/// Raw policy field that feeds a rating dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceField {
    Age,
    ModelYearOffset,
    InsuredValue,
    Class,
    Make,
    Region,
    Gender,
    PolicyClass,
}

impl SourceField {
    pub fn column(self) -> &'static str {
        match self {
            SourceField::Age => "age",
            SourceField::ModelYearOffset => "model_year_offset",
            SourceField::InsuredValue => "insured_value",
            SourceField::Class => "class",
            SourceField::Make => "make",
            SourceField::Region => "region",
            SourceField::Gender => "gender",
            SourceField::PolicyClass => "policy_class",
        }
    }

    pub fn is_numeric(self) -> bool {
        matches!(
            self,
            SourceField::Age | SourceField::ModelYearOffset | SourceField::InsuredValue
        )
    }

    pub fn from_column(name: &str) -> Option<Self> {
        Some(match name {
            "age" => SourceField::Age,
            "model_year_offset" => SourceField::ModelYearOffset,
            "insured_value" => SourceField::InsuredValue,
            "class" => SourceField::Class,
            "make" => SourceField::Make,
            "region" => SourceField::Region,
            "gender" => SourceField::Gender,
            "policy_class" => SourceField::PolicyClass,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelDef {
    pub level: String,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DimensionKind {
    /// `labels.len() == breaks.len() + 1`; label `i` covers `[breaks[i-1], breaks[i])`.
    Bands { breaks: Vec<f64>, labels: Vec<String> },
    Levels { levels: Vec<LevelDef> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub source: SourceField,
    pub reference: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ordered: Option<bool>,
    #[serde(flatten)]
    pub kind: DimensionKind,
}

impl Dimension {
    pub fn level_names(&self) -> Vec<String> {
        match &self.kind {
            DimensionKind::Bands { labels, .. } => labels.clone(),
            DimensionKind::Levels { levels } => levels.iter().map(|l| l.level.clone()).collect(),
        }
    }

    /// Banded dimensions are ordered unless the file says otherwise.
    pub fn is_ordered(&self) -> bool {
        self.ordered
            .unwrap_or(matches!(self.kind, DimensionKind::Bands { .. }))
    }

    pub fn band_numeric(&self, value: f64) -> Option<&str> {
        match &self.kind {
            DimensionKind::Bands { breaks, labels } => {
                let idx = breaks.partition_point(|&b| b <= value);
                Some(labels[idx].as_str())
            }
            DimensionKind::Levels { .. } => None,
        }
    }

    pub fn band_category(&self, raw: &str) -> Option<&str> {
        let key = normalize(raw);
        match &self.kind {
            DimensionKind::Levels { levels } => levels
                .iter()
                .find(|l| l.values.iter().any(|v| normalize(v) == key))
                .map(|l| l.level.as_str()),
            DimensionKind::Bands { .. } => None,
        }
    }

    fn validate(&self) -> Result<()> {
        let names = self.level_names();
        let unique: BTreeSet<_> = names.iter().collect();
        if unique.len() != names.len() {
            return Err(Error::Config(format!("dimension `{}` repeats a level", self.name)));
        }
        if !names.contains(&self.reference) {
            return Err(Error::Config(format!(
                "reference `{}` is not a level of `{}`",
                self.reference, self.name
            )));
        }
        match &self.kind {
            DimensionKind::Bands { breaks, labels } => {
                if !self.source.is_numeric() {
                    return Err(Error::Config(format!(
                        "`{}` bands a categorical field",
                        self.name
                    )));
                }
                if labels.len() != breaks.len() + 1 {
                    return Err(Error::Config(format!(
                        "`{}` needs exactly one more label than breakpoints",
                        self.name
                    )));
                }
                if breaks.windows(2).any(|w| !(w[0] < w[1])) || breaks.iter().any(|b| !b.is_finite())
                {
                    return Err(Error::Config(format!(
                        "`{}` breakpoints must be finite and strictly increasing",
                        self.name
                    )));
                }
            }
            DimensionKind::Levels { levels } => {
                if self.source.is_numeric() {
                    return Err(Error::Config(format!(
                        "`{}` lists levels for a numeric field",
                        self.name
                    )));
                }
                let mut seen = BTreeSet::new();
                for value in levels.iter().flat_map(|l| &l.values) {
                    if !seen.insert(normalize(value)) {
                        return Err(Error::Config(format!(
                            "raw value `{value}` appears twice in `{}`",
                            self.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

fn normalize(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Level set of one rating dimension as seen by model building.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorSpec {
    pub name: String,
    pub levels: Vec<String>,
    pub reference: String,
    pub ordered: bool,
}

impl FactorSpec {
    pub fn position(&self, level: &str) -> Option<usize> {
        self.levels.iter().position(|l| l == level)
    }
}

/// Dimension name to level set; the input to design construction.
pub type Catalog = BTreeMap<String, FactorSpec>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandingScheme {
    pub name: String,
    #[serde(default = "default_subscription_year")]
    pub subscription_year: i32,
    #[serde(rename = "dimension")]
    pub dimensions: Vec<Dimension>,
}

fn default_subscription_year() -> i32 {
    2008
}

#[derive(Debug, Deserialize, Serialize)]
struct SchemeFile {
    scheme: Vec<BandingScheme>,
}

impl BandingScheme {
    pub fn dimension(&self, name: &str) -> Option<&Dimension> {
        self.dimensions.iter().find(|d| d.name == name)
    }

    pub fn catalog(&self) -> Catalog {
        self.dimensions
            .iter()
            .map(|d| {
                (
                    d.name.clone(),
                    FactorSpec {
                        name: d.name.clone(),
                        levels: d.level_names(),
                        reference: d.reference.clone(),
                        ordered: d.is_ordered(),
                    },
                )
            })
            .collect()
    }

    /// Tables 1/2 style raw levels.
    pub fn default_raw() -> Self {
        load_schemes_str(DEFAULT_SCHEMES)
            .and_then(|s| take_scheme(s, "raw"))
            .expect("shipped scheme file is valid")
    }

    /// Regrouped levels used by the shipped frequency and severity models.
    pub fn default_tariff() -> Self {
        load_schemes_str(DEFAULT_SCHEMES)
            .and_then(|s| take_scheme(s, "tariff"))
            .expect("shipped scheme file is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        for dim in &self.dimensions {
            if !names.insert(dim.name.as_str()) {
                return Err(Error::Config(format!("dimension `{}` defined twice", dim.name)));
            }
            if dim.name.contains(':') || dim.name.contains('×') {
                return Err(Error::Config(format!(
                    "dimension name `{}` may not contain `:` or `×`",
                    dim.name
                )));
            }
            dim.validate()?;
        }
        Ok(())
    }

    /// Categorical fields the scheme cannot place, if any.
    pub(crate) fn unknown_category(&self, record: &PolicyRecord) -> Option<(String, String)> {
        for dim in &self.dimensions {
            if dim.source.is_numeric() {
                continue;
            }
            let raw = record.categorical(dim.source);
            if dim.band_category(raw).is_none() {
                return Some((dim.name.clone(), raw.to_string()));
            }
        }
        None
    }
}

pub fn load_schemes_str(text: &str) -> Result<Vec<BandingScheme>> {
    let file: SchemeFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    for scheme in &file.scheme {
        scheme.validate()?;
    }
    Ok(file.scheme)
}

pub fn load_schemes(path: &Path) -> Result<Vec<BandingScheme>> {
    load_schemes_str(&std::fs::read_to_string(path)?)
}

pub fn take_scheme(schemes: Vec<BandingScheme>, name: &str) -> Result<BandingScheme> {
    schemes
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::Config(format!("no scheme named `{name}`")))
}

/// Map one policy's raw covariates to rating levels.
pub fn band_policy(record: &PolicyRecord, scheme: &BandingScheme) -> Result<RatingFactors> {
    let mut factors = RatingFactors::default();
    for dim in &scheme.dimensions {
        let level = if dim.source.is_numeric() {
            dim.band_numeric(record.numeric(dim.source))
        } else {
            dim.band_category(record.categorical(dim.source))
        };
        let level = level.ok_or_else(|| Error::UnknownLevel {
            dimension: dim.name.clone(),
            level: record.categorical(dim.source).to_string(),
        })?;
        factors.insert(&dim.name, level);
    }
    Ok(factors)
}

/// Band raw field values keyed by CSV column name. Dimensions whose source
/// column is absent are skipped.
pub fn band_fields(fields: &BTreeMap<String, String>, scheme: &BandingScheme) -> Result<RatingFactors> {
    let mut factors = RatingFactors::default();
    for dim in &scheme.dimensions {
        let Some(raw) = fields.get(dim.source.column()) else {
            continue;
        };
        let level = if dim.source.is_numeric() {
            let value: f64 = raw.trim().parse().map_err(|_| {
                Error::InvalidArgument(format!("`{}` is not a number: {raw}", dim.source.column()))
            })?;
            dim.band_numeric(value)
        } else {
            dim.band_category(raw)
        };
        let level = level.ok_or_else(|| Error::UnknownLevel {
            dimension: dim.name.clone(),
            level: raw.clone(),
        })?;
        factors.insert(&dim.name, level);
    }
    Ok(factors)
}
