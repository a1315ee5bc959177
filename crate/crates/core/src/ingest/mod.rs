//! Policy and claim ingestion: CSV parsing, row validation and banding.

mod scheme;

pub use scheme::{
    band_fields, band_policy, load_schemes, load_schemes_str, take_scheme, BandingScheme, Catalog, Dimension,
    DimensionKind, FactorSpec, LevelDef, SourceField, DEFAULT_SCHEMES,
};

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const POLICY_COLUMNS: [&str; 11] = [
    "policy_id",
    "exposure",
    "claim_count",
    "class",
    "make",
    "model_year_offset",
    "policy_class",
    "region",
    "gender",
    "age",
    "insured_value",
];

pub const CLAIM_COLUMNS: [&str; 2] = ["policy_id", "amount"];

pub const MIN_AGE: u32 = 16;
pub const MAX_AGE: u32 = 100;
pub const MIN_MODEL_YEAR: i32 = 1900;

/// One insured policy-year.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyRecord {
    pub policy_id: String,
    /// Years at risk, > 0.
    pub exposure: f64,
    pub claim_count: u32,
    pub vehicle_class: String,
    pub make: String,
    /// Subscription year minus vehicle model year.
    pub model_year_offset: i32,
    pub policy_class: String,
    pub region: String,
    pub gender: String,
    pub age: u32,
    /// Insured value in SMMLV, > 0.
    pub insured_value: f64,
}

impl PolicyRecord {
    pub(crate) fn numeric(&self, field: SourceField) -> f64 {
        match field {
            SourceField::Age => self.age as f64,
            SourceField::ModelYearOffset => self.model_year_offset as f64,
            SourceField::InsuredValue => self.insured_value,
            _ => f64::NAN,
        }
    }

    pub(crate) fn categorical(&self, field: SourceField) -> &str {
        match field {
            SourceField::Class => &self.vehicle_class,
            SourceField::Make => &self.make,
            SourceField::Region => &self.region,
            SourceField::Gender => &self.gender,
            SourceField::PolicyClass => &self.policy_class,
            _ => "",
        }
    }
}

/// One claim, amount in SMMLV.
#[derive(Debug, Clone, PartialEq)]
pub struct ClaimRecord {
    pub policy_id: String,
    pub amount: f64,
}

/// One level per rating dimension.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RatingFactors(BTreeMap<String, String>);

impl RatingFactors {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, dimension: &str) -> Option<&str> {
        self.0.get(dimension).map(String::as_str)
    }

    pub fn insert(&mut self, dimension: &str, level: &str) {
        self.0.insert(dimension.to_string(), level.to_string());
    }

    pub fn with(mut self, dimension: &str, level: &str) -> Self {
        self.insert(dimension, level);
        self
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<K: Into<String>, V: Into<String>> FromIterator<(K, V)> for RatingFactors {
    fn from_iter<I: IntoIterator<Item = (K, V)>>(iter: I) -> Self {
        Self(iter.into_iter().map(|(k, v)| (k.into(), v.into())).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionReason {
    BadModelYear,
    BadAge,
    NonpositiveValue,
    NonpositiveExposure,
    NonpositiveAmount,
    MissingField,
    Unparseable,
    UnknownCategory,
    UnknownPolicy,
}

impl fmt::Display for RejectionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RejectionReason::BadModelYear => "bad_model_year",
            RejectionReason::BadAge => "bad_age",
            RejectionReason::NonpositiveValue => "nonpositive_value",
            RejectionReason::NonpositiveExposure => "nonpositive_exposure",
            RejectionReason::NonpositiveAmount => "nonpositive_amount",
            RejectionReason::MissingField => "missing_field",
            RejectionReason::Unparseable => "unparseable",
            RejectionReason::UnknownCategory => "unknown_category",
            RejectionReason::UnknownPolicy => "unknown_policy",
        };
        f.write_str(s)
    }
}

/// A rejected input row. `row` counts data rows from 1 (the header is row 0).
#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub row: usize,
    pub reason: RejectionReason,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct Parsed<T> {
    pub accepted: Vec<T>,
    pub rejected: Vec<Rejection>,
    /// Data rows read, accepted or not.
    pub rows: usize,
}

impl<T> Parsed<T> {
    pub fn rejection_counts(&self) -> BTreeMap<RejectionReason, usize> {
        rejection_counts(&self.rejected)
    }
}

pub fn rejection_counts(rejected: &[Rejection]) -> BTreeMap<RejectionReason, usize> {
    let mut counts = BTreeMap::new();
    for r in rejected {
        *counts.entry(r.reason).or_insert(0) += 1;
    }
    counts
}

struct Columns(Vec<usize>);

impl Columns {
    fn locate(headers: &csv::StringRecord, wanted: &[&str]) -> Result<Self> {
        let mut idx = Vec::with_capacity(wanted.len());
        for name in wanted {
            let pos = headers
                .iter()
                .position(|h| h.trim() == *name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
            idx.push(pos);
        }
        Ok(Columns(idx))
    }
}

struct RowReader<'a> {
    record: &'a csv::StringRecord,
    columns: &'a Columns,
    names: &'a [&'a str],
}

impl RowReader<'_> {
    fn text(&self, i: usize) -> std::result::Result<&str, (RejectionReason, String)> {
        match self.record.get(self.columns.0[i]).map(str::trim) {
            Some(s) if !s.is_empty() => Ok(s),
            _ => Err((RejectionReason::MissingField, self.names[i].to_string())),
        }
    }

    fn parse<T: std::str::FromStr>(&self, i: usize) -> std::result::Result<T, (RejectionReason, String)> {
        let s = self.text(i)?;
        s.parse()
            .map_err(|_| (RejectionReason::Unparseable, format!("{} = `{s}`", self.names[i])))
    }
}

fn csv_reader<R: Read>(source: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source)
}

fn read_header<R: Read>(reader: &mut csv::Reader<R>) -> Result<csv::StringRecord> {
    let headers = reader.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::MissingColumn("<header>".into()));
    }
    Ok(headers)
}

fn policy_from_row(
    row: &RowReader<'_>,
    scheme: &BandingScheme,
) -> std::result::Result<PolicyRecord, (RejectionReason, String)> {
    let record = PolicyRecord {
        policy_id: row.text(0)?.to_string(),
        exposure: row.parse(1)?,
        claim_count: row.parse(2)?,
        vehicle_class: row.text(3)?.to_string(),
        make: row.text(4)?.to_string(),
        model_year_offset: row.parse(5)?,
        policy_class: row.text(6)?.to_string(),
        region: row.text(7)?.to_string(),
        gender: row.text(8)?.to_string(),
        age: row.parse(9)?,
        insured_value: row.parse(10)?,
    };
    if !(record.exposure > 0.0) || !record.exposure.is_finite() {
        return Err((
            RejectionReason::NonpositiveExposure,
            format!("exposure = {}", record.exposure),
        ));
    }
    if !(MIN_AGE..=MAX_AGE).contains(&record.age) {
        return Err((RejectionReason::BadAge, format!("age = {}", record.age)));
    }
    let model_year = scheme.subscription_year as i64 - record.model_year_offset as i64;
    if model_year < MIN_MODEL_YEAR as i64 {
        return Err((
            RejectionReason::BadModelYear,
            format!("model year {model_year} before {MIN_MODEL_YEAR}"),
        ));
    }
    if !(record.insured_value > 0.0) || !record.insured_value.is_finite() {
        return Err((
            RejectionReason::NonpositiveValue,
            format!("insured_value = {}", record.insured_value),
        ));
    }
    if let Some((dim, raw)) = scheme.unknown_category(&record) {
        return Err((RejectionReason::UnknownCategory, format!("{dim} = `{raw}`")));
    }
    Ok(record)
}

/// Parse `policies.csv`. A missing or unusable header aborts; bad rows are
/// collected in `rejected` and never stop the parse.
pub fn parse_policies<R: Read>(source: R, scheme: &BandingScheme) -> Result<Parsed<PolicyRecord>> {
    let mut reader = csv_reader(source);
    let headers = read_header(&mut reader)?;
    let columns = Columns::locate(&headers, &POLICY_COLUMNS)?;
    let mut out = Parsed {
        accepted: Vec::new(),
        rejected: Vec::new(),
        rows: 0,
    };
    for (i, result) in reader.records().enumerate() {
        out.rows += 1;
        let row = i + 1;
        let record = match result {
            Ok(r) => r,
            Err(e) => {
                out.rejected.push(Rejection {
                    row,
                    reason: RejectionReason::Unparseable,
                    detail: e.to_string(),
                });
                continue;
            }
        };
        let reader = RowReader {
            record: &record,
            columns: &columns,
            names: &POLICY_COLUMNS,
        };
        match policy_from_row(&reader, scheme) {
            Ok(p) => out.accepted.push(p),
            Err((reason, detail)) => out.rejected.push(Rejection { row, reason, detail }),
        }
    }
    Ok(out)
}

/// Parse `claims.csv`; amounts must be strictly positive.
pub fn parse_claims<R: Read>(source: R) -> Result<Parsed<ClaimRecord>> {
    let mut reader = csv_reader(source);
    let headers = read_header(&mut reader)?;
    let columns = Columns::locate(&headers, &CLAIM_COLUMNS)?;
    let mut out = Parsed {
        accepted: Vec::new(),
        rejected: Vec::new(),
        rows: 0,
    };
    for (i, result) in reader.records().enumerate() {
        out.rows += 1;
        let row = i + 1;
        let parsed = result
            .map_err(|e| (RejectionReason::Unparseable, e.to_string()))
            .and_then(|record| {
                let r = RowReader {
                    record: &record,
                    columns: &columns,
                    names: &CLAIM_COLUMNS,
                };
                let claim = ClaimRecord {
                    policy_id: r.text(0)?.to_string(),
                    amount: r.parse(1)?,
                };
                if !(claim.amount > 0.0) || !claim.amount.is_finite() {
                    return Err((
                        RejectionReason::NonpositiveAmount,
                        format!("amount = {}", claim.amount),
                    ));
                }
                Ok(claim)
            });
        match parsed {
            Ok(c) => out.accepted.push(c),
            Err((reason, detail)) => out.rejected.push(Rejection { row, reason, detail }),
        }
    }
    Ok(out)
}

/// Claims joined to their policies by index.
#[derive(Debug, Clone, Default)]
pub struct LinkedClaims {
    /// `(claim index, policy index)` in claim order.
    pub pairs: Vec<(usize, usize)>,
    /// Claims whose policy id matches no accepted policy; `row` is the claim's
    /// position in the accepted claim list, counted from 1.
    pub rejected: Vec<Rejection>,
}

/// Join claims to policies. When a policy id repeats, the first record wins.
pub fn link_claims(policies: &[PolicyRecord], claims: &[ClaimRecord]) -> LinkedClaims {
    let mut index: HashMap<&str, usize> = HashMap::with_capacity(policies.len());
    for (i, p) in policies.iter().enumerate() {
        index.entry(p.policy_id.as_str()).or_insert(i);
    }
    let mut out = LinkedClaims::default();
    for (ci, claim) in claims.iter().enumerate() {
        match index.get(claim.policy_id.as_str()) {
            Some(&pi) => out.pairs.push((ci, pi)),
            None => out.rejected.push(Rejection {
                row: ci + 1,
                reason: RejectionReason::UnknownPolicy,
                detail: format!("policy_id = `{}`", claim.policy_id),
            }),
        }
    }
    out
}

pub fn write_policies<W: Write>(sink: W, policies: &[PolicyRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(POLICY_COLUMNS)?;
    for p in policies {
        w.write_record([
            p.policy_id.clone(),
            format!("{:.6}", p.exposure),
            p.claim_count.to_string(),
            p.vehicle_class.clone(),
            p.make.clone(),
            p.model_year_offset.to_string(),
            p.policy_class.clone(),
            p.region.clone(),
            p.gender.clone(),
            p.age.to_string(),
            format!("{:.3}", p.insured_value),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_claims<W: Write>(sink: W, claims: &[ClaimRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(CLAIM_COLUMNS)?;
    for c in claims {
        w.write_record([c.policy_id.clone(), format!("{:.6}", c.amount)])?;
    }
    w.flush()?;
    Ok(())
}
