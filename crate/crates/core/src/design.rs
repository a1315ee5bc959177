//! Formulas, treatment-coded design matrices and covariate-pattern cells.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{
    band_policy, link_claims, BandingScheme, Catalog, ClaimRecord, LinkedClaims, PolicyRecord,
    RatingFactors,
};

pub const INTERCEPT: &str = "(Intercept)";
/// Separates the factors of an interaction column label.
pub const INTERACTION_SEP: char = '×';

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseRole {
    /// Claim counts with a log-exposure offset.
    Frequency,
    /// Claim amounts, one row per claim.
    Severity,
    /// Claim indicator (at least one claim), no offset.
    Occurrence,
}

impl ResponseRole {
    pub fn response_name(self) -> &'static str {
        match self {
            ResponseRole::Frequency => "count",
            ResponseRole::Severity => "amount",
            ResponseRole::Occurrence => "claimed",
        }
    }
}

/// A main effect (one dimension) or an interaction (two or more).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Term(pub Vec<String>);

impl Term {
    pub fn is_main(&self) -> bool {
        self.0.len() == 1
    }

    fn key(&self) -> BTreeSet<&str> {
        self.0.iter().map(String::as_str).collect()
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(":"))
    }
}

/// `count ~ model + region + age + model:region`
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Formula {
    pub response: ResponseRole,
    pub terms: Vec<Term>,
}

impl Formula {
    pub fn new(response: ResponseRole, terms: Vec<Term>) -> Result<Self> {
        let formula = Formula { response, terms };
        formula.validate()?;
        Ok(formula)
    }

    pub fn parse(text: &str) -> Result<Self> {
        text.parse()
    }

    /// Frequency fits carry `ln(exposure)` as an offset.
    pub fn has_offset(&self) -> bool {
        self.response == ResponseRole::Frequency
    }

    /// Distinct dimensions in order of first appearance.
    pub fn dimensions(&self) -> Vec<String> {
        let mut seen = Vec::<String>::new();
        for dim in self.terms.iter().flat_map(|t| &t.0) {
            if !seen.contains(dim) {
                seen.push(dim.clone());
            }
        }
        seen
    }

    pub fn main_effects(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().filter(|t| t.is_main()).map(|t| t.0[0].as_str())
    }

    pub fn has_main(&self, dim: &str) -> bool {
        self.main_effects().any(|d| d == dim)
    }

    fn validate(&self) -> Result<()> {
        let mut keys = BTreeSet::new();
        for term in &self.terms {
            if term.0.is_empty() {
                return Err(Error::Formula("empty term".into()));
            }
            let key = term.key();
            if key.len() != term.0.len() {
                return Err(Error::Formula(format!("term `{term}` repeats a dimension")));
            }
            if !keys.insert(key) {
                return Err(Error::Formula(format!("duplicate term `{term}`")));
            }
            if let Some(bad) = term.0.iter().find(|d| {
                d.is_empty() || !d.chars().all(|c| c.is_alphanumeric() || c == '_')
            }) {
                return Err(Error::Formula(format!("invalid dimension name `{bad}`")));
            }
        }
        for term in self.terms.iter().filter(|t| !t.is_main()) {
            for dim in &term.0 {
                if !self.has_main(dim) {
                    return Err(Error::Formula(format!(
                        "interaction `{term}` uses `{dim}`, which is not a main effect"
                    )));
                }
            }
        }
        Ok(())
    }
}

impl FromStr for Formula {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let (lhs, rhs) = text
            .split_once('~')
            .ok_or_else(|| Error::Formula(format!("missing `~` in `{text}`")))?;
        let response = match lhs.trim() {
            "count" | "claim_count" => ResponseRole::Frequency,
            "amount" => ResponseRole::Severity,
            "claimed" | "any_claim" => ResponseRole::Occurrence,
            other => {
                return Err(Error::Formula(format!(
                    "unknown response `{other}` (expected count, amount or claimed)"
                )))
            }
        };
        let mut terms = Vec::new();
        for raw in rhs.split('+').map(str::trim) {
            match raw {
                "" => return Err(Error::Formula(format!("empty term in `{text}`"))),
                "1" => continue,
                "offset(log(exposure))" if response == ResponseRole::Frequency => continue,
                _ => terms.push(Term(raw.split(':').map(|s| s.trim().to_string()).collect())),
            }
        }
        Formula::new(response, terms)
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ~ ", self.response.response_name())?;
        if self.terms.is_empty() {
            return f.write_str("1");
        }
        let terms: Vec<String> = self.terms.iter().map(Term::to_string).collect();
        f.write_str(&terms.join(" + "))
    }
}

impl Serialize for Formula {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Formula {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// One modelling row: rating levels, response, exposure and prior weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub factors: RatingFactors,
    pub response: f64,
    pub exposure: f64,
    pub weight: f64,
}

/// Frequency rows (claim counts) from policies.
pub fn frequency_observations(
    policies: &[PolicyRecord],
    scheme: &BandingScheme,
) -> Result<Vec<Observation>> {
    policies
        .iter()
        .map(|p| {
            Ok(Observation {
                factors: band_policy(p, scheme)?,
                response: p.claim_count as f64,
                exposure: p.exposure,
                weight: 1.0,
            })
        })
        .collect()
}

/// Severity rows: one per claim, carrying the levels of its policy.
pub fn severity_observations(
    policies: &[PolicyRecord],
    claims: &[ClaimRecord],
    scheme: &BandingScheme,
) -> Result<(Vec<Observation>, LinkedClaims)> {
    let linked = link_claims(policies, claims);
    let mut rows = Vec::with_capacity(linked.pairs.len());
    for &(ci, pi) in &linked.pairs {
        rows.push(Observation {
            factors: band_policy(&policies[pi], scheme)?,
            response: claims[ci].amount,
            exposure: 1.0,
            weight: 1.0,
        });
    }
    Ok((rows, linked))
}

/// Rows for `role`: counts, per-claim amounts or claim indicators.
pub fn observations_for(
    role: ResponseRole,
    policies: &[PolicyRecord],
    claims: &[ClaimRecord],
    scheme: &BandingScheme,
) -> Result<Vec<Observation>> {
    match role {
        ResponseRole::Frequency => frequency_observations(policies, scheme),
        ResponseRole::Severity => Ok(severity_observations(policies, claims, scheme)?.0),
        ResponseRole::Occurrence => {
            let mut rows = frequency_observations(policies, scheme)?;
            for r in &mut rows {
                r.response = if r.response > 0.0 { 1.0 } else { 0.0 };
            }
            Ok(rows)
        }
    }
}

/// Removes rows whose levels match every condition, e.g. `make=B5&class=C3`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropRule(pub Vec<(String, String)>);

impl DropRule {
    pub fn matches(&self, factors: &RatingFactors) -> bool {
        self.0.iter().all(|(d, l)| factors.get(d) == Some(l.as_str()))
    }
}

impl FromStr for DropRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let conditions = s
            .split('&')
            .map(|c| {
                let (d, l) = c
                    .split_once('=')
                    .ok_or_else(|| Error::InvalidArgument(format!("bad drop rule `{s}`")))?;
                Ok((d.trim().to_string(), l.trim().to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        if conditions.is_empty() {
            return Err(Error::InvalidArgument("empty drop rule".into()));
        }
        Ok(DropRule(conditions))
    }
}

impl fmt::Display for DropRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|(d, l)| format!("{d}={l}")).collect();
        f.write_str(&parts.join("&"))
    }
}

pub fn apply_drops(rows: Vec<Observation>, rules: &[DropRule]) -> Vec<Observation> {
    if rules.is_empty() {
        return rows;
    }
    rows.into_iter()
        .filter(|r| !rules.iter().any(|rule| rule.matches(&r.factors)))
        .collect()
}

/// Level structure of a dimension used in a design.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignFactor {
    pub name: String,
    pub reference: String,
    /// Levels present in the data, in catalog order.
    pub levels: Vec<String>,
    /// Every level the catalog declares.
    pub declared: Vec<String>,
    pub ordered: bool,
}

/// `(dimension, level)` conditions whose product defines a column; empty for the intercept.
pub type ColumnSpec = Vec<(String, String)>;

pub fn column_label(spec: &ColumnSpec) -> String {
    if spec.is_empty() {
        return INTERCEPT.to_string();
    }
    let parts: Vec<String> = spec.iter().map(|(d, l)| format!("{d}:{l}")).collect();
    parts.join(&INTERACTION_SEP.to_string())
}

pub fn parse_column_label(label: &str) -> Result<ColumnSpec> {
    if label == INTERCEPT {
        return Ok(Vec::new());
    }
    label
        .split(INTERACTION_SEP)
        .map(|part| {
            part.split_once(':')
                .map(|(d, l)| (d.to_string(), l.to_string()))
                .ok_or_else(|| Error::InvalidArgument(format!("bad coefficient label `{label}`")))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub formula: Formula,
    /// n × p, first column the intercept.
    pub x: DMatrix<f64>,
    pub labels: Vec<String>,
    pub columns: Vec<ColumnSpec>,
    pub y: Vec<f64>,
    /// `ln(exposure)` for frequency fits, zero otherwise.
    pub offset: Vec<f64>,
    pub exposure: Vec<f64>,
    pub weights: Vec<f64>,
    pub factors: Vec<DesignFactor>,
    /// Interaction columns with no observed support (estimates reported as NA).
    pub aliased: Vec<String>,
}

impl DesignMatrix {
    pub fn nrows(&self) -> usize {
        self.x.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.x.ncols()
    }

    pub fn factor(&self, name: &str) -> Option<&DesignFactor> {
        self.factors.iter().find(|f| f.name == name)
    }

    /// Design row for a set of levels (used for prediction).
    pub fn row_for(&self, factors: &RatingFactors) -> Result<Vec<f64>> {
        for f in &self.factors {
            let level = factors.get(&f.name).ok_or_else(|| {
                Error::InvalidArgument(format!("no level given for `{}`", f.name))
            })?;
            if !f.levels.iter().any(|l| l == level) {
                return Err(Error::UnknownLevel {
                    dimension: f.name.clone(),
                    level: level.to_string(),
                });
            }
        }
        Ok(self
            .columns
            .iter()
            .map(|spec| {
                let hit = spec.iter().all(|(d, l)| factors.get(d) == Some(l.as_str()));
                if hit {
                    1.0
                } else {
                    0.0
                }
            })
            .collect())
    }

    /// Same design with a different response vector.
    pub fn with_response(&self, y: Vec<f64>) -> DesignMatrix {
        assert_eq!(y.len(), self.nrows());
        DesignMatrix {
            y,
            ..self.clone()
        }
    }

    /// Same design without row `index`.
    pub fn without_row(&self, index: usize) -> DesignMatrix {
        let keep = |v: &Vec<f64>| {
            v.iter()
                .enumerate()
                .filter(|(i, _)| *i != index)
                .map(|(_, x)| *x)
                .collect::<Vec<_>>()
        };
        DesignMatrix {
            x: self.x.clone().remove_row(index),
            y: keep(&self.y),
            offset: keep(&self.offset),
            exposure: keep(&self.exposure),
            weights: keep(&self.weights),
            ..self.clone()
        }
    }
}

/// Treatment-coded design for `formula` over `rows`.
///
/// Columns exist only for levels present in the data; interaction columns
/// with no supporting rows are listed in `aliased` instead of being emitted.
pub fn build_design(rows: &[Observation], formula: &Formula, catalog: &Catalog) -> Result<DesignMatrix> {
    let dims = formula.dimensions();
    let specs = dims
        .iter()
        .map(|d| catalog.get(d).ok_or_else(|| Error::UnknownDimension(d.clone())))
        .collect::<Result<Vec<_>>>()?;

    // level index of every row in every dimension
    let mut codes = vec![Vec::with_capacity(rows.len()); dims.len()];
    let mut seen = vec![vec![false; 0]; dims.len()];
    for (k, spec) in specs.iter().enumerate() {
        seen[k] = vec![false; spec.levels.len()];
    }
    for (i, row) in rows.iter().enumerate() {
        for (k, spec) in specs.iter().enumerate() {
            let level = row.factors.get(&spec.name).ok_or_else(|| {
                Error::InvalidArgument(format!("row {} has no level for `{}`", i + 1, spec.name))
            })?;
            let idx = spec.position(level).ok_or_else(|| Error::UnknownLevel {
                dimension: spec.name.clone(),
                level: level.to_string(),
            })?;
            seen[k][idx] = true;
            codes[k].push(idx);
        }
    }

    let mut factors = Vec::with_capacity(dims.len());
    for (k, spec) in specs.iter().enumerate() {
        let reference = spec.position(&spec.reference).expect("catalog reference is a level");
        if !rows.is_empty() && !seen[k][reference] {
            return Err(Error::InvalidArgument(format!(
                "reference level `{}` of `{}` does not occur in the data",
                spec.reference, spec.name
            )));
        }
        factors.push(DesignFactor {
            name: spec.name.clone(),
            reference: spec.reference.clone(),
            levels: spec
                .levels
                .iter()
                .zip(&seen[k])
                .filter(|(_, s)| **s)
                .map(|(l, _)| l.clone())
                .collect(),
            declared: spec.levels.clone(),
            ordered: spec.ordered,
        });
    }

    // (dimension slot, level index) pairs for every candidate column
    let dim_slot = |name: &str| dims.iter().position(|d| d == name).expect("term dimension");
    let non_reference = |k: usize| -> Vec<usize> {
        let spec = specs[k];
        (0..spec.levels.len())
            .filter(|&i| seen[k][i] && spec.levels[i] != spec.reference)
            .collect()
    };
    let mut candidates: Vec<Vec<(usize, usize)>> = vec![Vec::new()];
    for term in &formula.terms {
        let slots: Vec<usize> = term.0.iter().map(|d| dim_slot(d)).collect();
        // first dimension varies fastest
        let mut combos: Vec<Vec<(usize, usize)>> = vec![Vec::new()];
        for &slot in &slots {
            let mut next = Vec::new();
            for lvl in non_reference(slot) {
                for combo in &combos {
                    let mut c = combo.clone();
                    c.push((slot, lvl));
                    next.push(c);
                }
            }
            combos = next;
        }
        candidates.extend(combos);
    }

    let n = rows.len();
    let mut columns = Vec::new();
    let mut data: Vec<f64> = Vec::with_capacity(n * candidates.len());
    let mut aliased = Vec::new();
    for cand in &candidates {
        let spec: ColumnSpec = cand
            .iter()
            .map(|&(k, l)| (specs[k].name.clone(), specs[k].levels[l].clone()))
            .collect();
        let start = data.len();
        let mut any = cand.is_empty();
        for i in 0..n {
            let hit = cand.iter().all(|&(k, l)| codes[k][i] == l);
            any |= hit;
            data.push(if hit { 1.0 } else { 0.0 });
        }
        if any {
            columns.push(spec);
        } else {
            data.truncate(start);
            aliased.push(column_label(&spec));
        }
    }
    let p = columns.len();
    if n < p {
        return Err(Error::Unidentifiable { rows: n, columns: p });
    }
    let x = DMatrix::from_vec(n, p, data);
    let offset = if formula.has_offset() {
        rows.iter().map(|r| r.exposure.ln()).collect()
    } else {
        vec![0.0; n]
    };
    Ok(DesignMatrix {
        formula: formula.clone(),
        x,
        labels: columns.iter().map(column_label).collect(),
        columns,
        y: rows.iter().map(|r| r.response).collect(),
        offset,
        exposure: rows.iter().map(|r| r.exposure).collect(),
        weights: rows.iter().map(|r| r.weight).collect(),
        factors,
        aliased,
    })
}

/// Policies sharing one level combination.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingCell {
    pub factors: RatingFactors,
    pub exposure: f64,
    pub claim_count: u64,
    pub policy_count: usize,
}

impl RatingCell {
    pub fn observation(&self) -> Observation {
        Observation {
            factors: self.factors.clone(),
            response: self.claim_count as f64,
            exposure: self.exposure,
            weight: 1.0,
        }
    }
}

/// Collapse frequency rows into one cell per observed level combination of
/// `dimensions`. Cells come out sorted by their levels; zero-exposure cells
/// are omitted.
pub fn aggregate_cells(rows: &[Observation], dimensions: &[String]) -> Result<Vec<RatingCell>> {
    if dimensions.is_empty() {
        return Err(Error::InvalidArgument("aggregation needs at least one dimension".into()));
    }
    let mut cells: BTreeMap<RatingFactors, RatingCell> = BTreeMap::new();
    for (i, row) in rows.iter().enumerate() {
        let mut key = RatingFactors::new();
        for d in dimensions {
            let level = row.factors.get(d).ok_or_else(|| {
                Error::InvalidArgument(format!("row {} has no level for `{d}`", i + 1))
            })?;
            key.insert(d, level);
        }
        let cell = cells.entry(key.clone()).or_insert_with(|| RatingCell {
            factors: key,
            exposure: 0.0,
            claim_count: 0,
            policy_count: 0,
        });
        cell.exposure += row.exposure;
        cell.claim_count += row.response.round() as u64;
        cell.policy_count += 1;
    }
    Ok(cells.into_values().filter(|c| c.exposure > 0.0).collect())
}

pub fn cells_to_observations(cells: &[RatingCell]) -> Vec<Observation> {
    cells.iter().map(RatingCell::observation).collect()
}

/// Rows for `role` after drop rules, aggregated over `aggregate` when it is
/// nonempty (frequency only).
pub fn prepare_rows(
    role: ResponseRole,
    policies: &[PolicyRecord],
    claims: &[ClaimRecord],
    scheme: &BandingScheme,
    drops: &[DropRule],
    aggregate: &[String],
) -> Result<Vec<Observation>> {
    let rows = apply_drops(observations_for(role, policies, claims, scheme)?, drops);
    if aggregate.is_empty() {
        return Ok(rows);
    }
    if role != ResponseRole::Frequency {
        return Err(Error::InvalidArgument("only claim counts can be aggregated into cells".into()));
    }
    Ok(cells_to_observations(&aggregate_cells(&rows, aggregate)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::FactorSpec;

    fn spec(name: &str, levels: &[&str], reference: &str) -> FactorSpec {
        FactorSpec {
            name: name.into(),
            levels: levels.iter().map(|s| s.to_string()).collect(),
            reference: reference.into(),
            ordered: false,
        }
    }

    fn obs(levels: &[(&str, &str)], y: f64, e: f64) -> Observation {
        Observation {
            factors: levels.iter().copied().collect(),
            response: y,
            exposure: e,
            weight: 1.0,
        }
    }

    fn full_cross(catalog: &Catalog, dims: &[&str]) -> Vec<Observation> {
        let mut rows = vec![RatingFactors::new()];
        for d in dims {
            let mut next = Vec::new();
            for r in &rows {
                for l in &catalog[*d].levels {
                    next.push(r.clone().with(d, l));
                }
            }
            rows = next;
        }
        rows.into_iter()
            .map(|f| Observation { factors: f, response: 1.0, exposure: 1.0, weight: 1.0 })
            .collect()
    }

    #[test]
    fn formula_round_trips_through_text() {
        let f = Formula::parse("count ~ model + region + age + model:region").unwrap();
        assert!(f.has_offset());
        assert_eq!(f.to_string(), "count ~ model + region + age + model:region");
        assert_eq!(f.dimensions(), ["model", "region", "age"]);
        assert_eq!(Formula::parse("amount ~ 1").unwrap().to_string(), "amount ~ 1");
    }

    #[test]
    fn formula_rejects_bad_terms() {
        assert!(Formula::parse("count ~ model + model:region").is_err());
        assert!(Formula::parse("count ~ model + model").is_err());
        assert!(Formula::parse("count ~ a + b + a:b + b:a").is_err());
        assert!(Formula::parse("premium ~ a").is_err());
        assert!(Formula::parse("count model").is_err());
    }

    #[test]
    fn two_binary_dimensions_with_interaction_give_four_columns() {
        let catalog: Catalog = [spec("a", &["a0", "a1"], "a0"), spec("b", &["b0", "b1"], "b0")]
            .into_iter()
            .map(|s| (s.name.clone(), s))
            .collect();
        let rows = full_cross(&catalog, &["a", "b"]);
        let f = Formula::parse("count ~ a + b + a:b").unwrap();
        let d = build_design(&rows, &f, &catalog).unwrap();
        assert_eq!(d.ncols(), 4);
        assert_eq!(d.labels, ["(Intercept)", "a:a1", "b:b1", "a:a1×b:b1"]);
        // interaction column is the product of the dummies
        for i in 0..d.nrows() {
            assert_eq!(d.x[(i, 3)], d.x[(i, 1)] * d.x[(i, 2)]);
        }
    }

    #[test]
    fn final_frequency_and_severity_designs() {
        let scheme = BandingScheme::default_tariff();
        let catalog = scheme.catalog();
        let rows = full_cross(&catalog, &["model", "region", "age"]);
        let f = Formula::parse("count ~ model + region + age + model:region").unwrap();
        let d = build_design(&rows, &f, &catalog).unwrap();
        assert_eq!(d.ncols(), 26);
        assert_eq!(aggregate_cells(&rows, &f.dimensions()).unwrap().len(), 126);

        let rows: Vec<_> = full_cross(&catalog, &["value_sev", "gender", "make", "class"])
            .into_iter()
            .filter(|r| r.factors.get("make") != Some("B4"))
            .collect();
        let f = Formula::parse("amount ~ value_sev + gender + make + class + make:class").unwrap();
        let d = build_design(&rows, &f, &catalog).unwrap();
        assert_eq!(d.ncols(), 16);
        assert!(!f.has_offset());
        assert_eq!(d.factor("make").unwrap().levels, ["B1", "B2", "B3", "B5"]);
        assert_eq!(d.factor("make").unwrap().declared.len(), 5);
    }

    #[test]
    fn empty_interaction_cell_is_aliased() {
        let catalog = BandingScheme::default_tariff().catalog();
        let rows: Vec<_> = full_cross(&catalog, &["make", "class"])
            .into_iter()
            .filter(|r| r.factors.get("make") != Some("B4"))
            .filter(|r| !(r.factors.get("make") == Some("B5") && r.factors.get("class") == Some("C3")))
            .collect();
        let f = Formula::parse("amount ~ make + class + make:class").unwrap();
        let d = build_design(&rows, &f, &catalog).unwrap();
        assert_eq!(d.aliased, ["make:B5×class:C3"]);
        assert_eq!(d.ncols(), 11);
    }

    #[test]
    fn unseen_level_and_too_few_rows_are_errors() {
        let catalog = BandingScheme::default_tariff().catalog();
        let f = Formula::parse("count ~ region").unwrap();
        let rows = vec![obs(&[("region", "R9")], 0.0, 1.0)];
        match build_design(&rows, &f, &catalog) {
            Err(Error::UnknownLevel { level, .. }) => assert_eq!(level, "R9"),
            other => panic!("{other:?}"),
        }
        let rows = vec![obs(&[("region", "R2")], 0.0, 1.0), obs(&[("region", "R1")], 0.0, 1.0)];
        let f = Formula::parse("count ~ region").unwrap();
        assert!(build_design(&rows, &f, &catalog).is_ok());
        let rows = vec![
            obs(&[("region", "R2"), ("age", "E4")], 0.0, 1.0),
            obs(&[("region", "R1"), ("age", "E1")], 0.0, 1.0),
        ];
        let f = Formula::parse("count ~ region + age").unwrap();
        assert!(matches!(
            build_design(&rows, &f, &catalog),
            Err(Error::Unidentifiable { rows: 2, columns: 3 })
        ));
    }

    #[test]
    fn identical_levels_merge_into_one_cell() {
        let rows = vec![obs(&[("a", "x")], 0.0, 1.0), obs(&[("a", "x")], 2.0, 1.0)];
        let cells = aggregate_cells(&rows, &["a".to_string()]).unwrap();
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].exposure, 2.0);
        assert_eq!(cells[0].claim_count, 2);
        assert_eq!(cells[0].policy_count, 2);
    }

    #[test]
    fn column_labels_parse_back() {
        let spec = vec![("model".to_string(), "M1".to_string()), ("region".to_string(), "R1".to_string())];
        assert_eq!(parse_column_label(&column_label(&spec)).unwrap(), spec);
        assert!(parse_column_label(INTERCEPT).unwrap().is_empty());
    }

    #[test]
    fn drop_rules() {
        let rule: DropRule = "make=B5&class=C3".parse().unwrap();
        let f: RatingFactors = [("make", "B5"), ("class", "C3")].into_iter().collect();
        assert!(rule.matches(&f));
        assert!(!rule.matches(&f.clone().with("class", "C2")));
        assert_eq!(rule.to_string(), "make=B5&class=C3");
    }

    proptest::proptest! {
        #[test]
        fn aggregation_conserves_totals(
            rows in proptest::collection::vec((0usize..3, 0usize..2, 0u32..4, 0.01f64..2.0), 1..60)
        ) {
            let obs: Vec<_> = rows
                .iter()
                .map(|&(a, b, y, e)| Observation {
                    factors: [("a", ["x", "y", "z"][a]), ("b", ["u", "v"][b])].into_iter().collect(),
                    response: y as f64,
                    exposure: e,
                    weight: 1.0,
                })
                .collect();
            let cells = aggregate_cells(&obs, &["a".to_string(), "b".to_string()]).unwrap();
            let e_cells: f64 = cells.iter().map(|c| c.exposure).sum();
            let e_rows: f64 = obs.iter().map(|o| o.exposure).sum();
            proptest::prop_assert!((e_cells - e_rows).abs() < 1e-9);
            let n_cells: u64 = cells.iter().map(|c| c.claim_count).sum();
            let n_rows: u64 = rows.iter().map(|r| r.2 as u64).sum();
            proptest::prop_assert_eq!(n_cells, n_rows);
            proptest::prop_assert!(cells.len() <= 6);
            proptest::prop_assert_eq!(cells.iter().map(|c| c.policy_count).sum::<usize>(), obs.len());
        }

        #[test]
        fn column_count_matches_level_algebra(la in 2usize..5, lb in 2usize..4, lc in 2usize..3) {
            let names = |p: &str, n: usize| (0..n).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
            let mk = |name: &str, n: usize| {
                let levels = names(name, n);
                (name.to_string(), FactorSpec { name: name.into(), reference: levels[0].clone(), levels, ordered: false })
            };
            let catalog: Catalog = [mk("a", la), mk("b", lb), mk("c", lc)].into_iter().collect();
            let rows = full_cross(&catalog, &["a", "b", "c"]);
            let f = Formula::parse("count ~ a + b + c + a:b + a:b:c").unwrap();
            let d = build_design(&rows, &f, &catalog).unwrap();
            let expected = 1 + (la - 1) + (lb - 1) + (lc - 1) + (la - 1) * (lb - 1) + (la - 1) * (lb - 1) * (lc - 1);
            proptest::prop_assert_eq!(d.ncols(), expected);
            let unique: BTreeSet<_> = d.labels.iter().collect();
            proptest::prop_assert_eq!(unique.len(), d.labels.len());
        }
    }
}
