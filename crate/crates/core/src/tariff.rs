//! Multiplicative tariff composed from a frequency and a severity model.
//!
//! The base premium is the product of the two exponentiated intercepts.
//! Dimensions linked by interaction terms form one joint dimension whose
//! cells carry pre-composed factors, so quoting is lookup and multiply.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::design::{parse_column_label, INTERCEPT};
use crate::error::{Error, Result};
use crate::glm::{Link, ModelDocument};
use crate::ingest::RatingFactors;

pub const TARIFF_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    Frequency,
    Severity,
}

impl Section {
    /// Heading used in rendered tables.
    pub fn heading(self) -> &'static str {
        match self {
            Section::Frequency => "Frecuencia",
            Section::Severity => "Severidad",
        }
    }
}

/// One rating key: a single dimension or a set of interacting dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingKey {
    /// `model` or `model:region`.
    pub key: String,
    pub dimensions: Vec<String>,
    pub section: Section,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionKind {
    /// No estimate for the level; quoting is refused.
    Excluded,
    /// Interaction estimate missing; quoted from main effects and flagged.
    MainsOnly,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub key: String,
    /// Level, or `:`-joined levels of a joint cell.
    pub level: String,
    pub kind: ExclusionKind,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub frequency: ModelDocument,
    pub severity: ModelDocument,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TariffTable {
    pub version: u32,
    pub base_premium_smmlv: f64,
    pub base_frequency: f64,
    pub base_severity: f64,
    /// Dimension to base level.
    pub base_class: BTreeMap<String, String>,
    pub keys: Vec<RatingKey>,
    /// Single-dimension relativities.
    pub factors: BTreeMap<String, BTreeMap<String, f64>>,
    /// Joint relativities keyed by `dim:dim` then `level:level`.
    pub joint_factors: BTreeMap<String, BTreeMap<String, f64>>,
    pub exclusions: Vec<Exclusion>,
    pub provenance: Option<Provenance>,
}

fn check_model(doc: &ModelDocument, what: &str) -> Result<()> {
    if doc.link != Link::Log {
        return Err(Error::NonLogLink(format!("{what} model uses the {} link", doc.link)));
    }
    if let Some(s) = &doc.summary {
        if !s.converged {
            return Err(Error::Tariff(format!("{what} model did not converge")));
        }
    }
    Ok(())
}

/// Group formula dimensions into connected components of the interaction graph,
/// each in order of first appearance.
fn components(doc: &ModelDocument) -> Vec<Vec<String>> {
    let dims = doc.formula.dimensions();
    let mut root: Vec<usize> = (0..dims.len()).collect();
    fn find(root: &mut [usize], i: usize) -> usize {
        let mut i = i;
        while root[i] != i {
            root[i] = root[root[i]];
            i = root[i];
        }
        i
    }
    for term in &doc.formula.terms {
        let idx: Vec<usize> = term.0.iter().map(|d| dims.iter().position(|x| x == d).unwrap()).collect();
        for w in idx.windows(2) {
            let (a, b) = (find(&mut root, w[0]), find(&mut root, w[1]));
            root[a.max(b)] = a.min(b);
        }
    }
    let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (i, d) in dims.iter().enumerate() {
        let r = find(&mut root, i);
        groups.entry(r).or_default().push(d.clone());
    }
    groups.into_values().collect()
}

fn cartesian(levels: &[Vec<String>]) -> Vec<Vec<String>> {
    levels.iter().fold(vec![Vec::new()], |acc, ls| {
        acc.iter()
            .flat_map(|prefix| {
                ls.iter().map(move |l| {
                    let mut v = prefix.clone();
                    v.push(l.clone());
                    v
                })
            })
            .collect()
    })
}

struct Source<'a> {
    doc: &'a ModelDocument,
    section: Section,
}

impl Source<'_> {
    /// Sum of estimates whose conditions all hold in `cell`, and whether an
    /// interaction coefficient that should apply is not estimable.
    fn compose(&self, cell: &BTreeMap<&str, &str>) -> Result<(f64, bool)> {
        let mut eta = 0.0;
        let mut missing = false;
        for row in &self.doc.coefficients {
            if row.label == INTERCEPT {
                continue;
            }
            let spec = parse_column_label(&row.label)?;
            if !spec.iter().all(|(d, l)| cell.get(d.as_str()) == Some(&l.as_str())) {
                continue;
            }
            match row.estimate {
                Some(b) => eta += b,
                None => missing = true,
            }
        }
        Ok((eta, missing))
    }
}

impl TariffTable {
    /// Compose a tariff from serialized log-link frequency and severity models.
    pub fn build(freq: &ModelDocument, sev: &ModelDocument) -> Result<Self> {
        check_model(freq, "frequency")?;
        check_model(sev, "severity")?;
        let f_dims = freq.formula.dimensions();
        if let Some(shared) = sev.formula.dimensions().iter().find(|d| f_dims.contains(d)) {
            return Err(Error::Tariff(format!(
                "dimension `{shared}` appears in both models; each rating dimension must belong to one"
            )));
        }
        let base_frequency = freq
            .intercept()
            .ok_or_else(|| Error::Tariff("frequency model has no intercept estimate".into()))?
            .exp();
        let base_severity = sev
            .intercept()
            .ok_or_else(|| Error::Tariff("severity model has no intercept estimate".into()))?
            .exp();
        let mut table = TariffTable {
            version: TARIFF_VERSION,
            base_premium_smmlv: base_frequency * base_severity,
            base_frequency,
            base_severity,
            base_class: BTreeMap::new(),
            keys: Vec::new(),
            factors: BTreeMap::new(),
            joint_factors: BTreeMap::new(),
            exclusions: Vec::new(),
            provenance: Some(Provenance {
                frequency: freq.clone(),
                severity: sev.clone(),
            }),
        };
        for src in [
            Source { doc: freq, section: Section::Frequency },
            Source { doc: sev, section: Section::Severity },
        ] {
            for dims in components(src.doc) {
                table.add_component(&src, dims)?;
            }
        }
        Ok(table)
    }

    fn add_component(&mut self, src: &Source<'_>, dims: Vec<String>) -> Result<()> {
        let key = dims.join(":");
        let mut usable = Vec::new();
        for d in &dims {
            let factor = src
                .doc
                .factor(d)
                .ok_or_else(|| Error::UnknownDimension(d.clone()))?;
            self.base_class.insert(d.clone(), factor.reference.clone());
            for level in &factor.declared {
                if !factor.levels.contains(level) && *level != factor.reference {
                    self.exclusions.push(Exclusion {
                        key: d.clone(),
                        level: level.clone(),
                        kind: ExclusionKind::Excluded,
                        reason: format!("no {} estimate for {d} = {level}", section_word(src.section)),
                    });
                }
            }
            let mut levels: Vec<String> = factor
                .declared
                .iter()
                .filter(|l| factor.levels.contains(l) || **l == factor.reference)
                .cloned()
                .collect();
            levels.dedup();
            usable.push(levels);
        }
        let mut map = BTreeMap::new();
        for cell in cartesian(&usable) {
            let lookup: BTreeMap<&str, &str> = dims.iter().map(String::as_str).zip(cell.iter().map(String::as_str)).collect();
            let (eta, missing) = src.compose(&lookup)?;
            let name = cell.join(":");
            if missing {
                self.exclusions.push(Exclusion {
                    key: key.clone(),
                    level: name.clone(),
                    kind: ExclusionKind::MainsOnly,
                    reason: "interaction not estimable; quoted from main effects only".into(),
                });
            }
            map.insert(name, eta.exp());
        }
        self.keys.push(RatingKey {
            key: key.clone(),
            dimensions: dims.clone(),
            section: src.section,
        });
        if dims.len() == 1 {
            self.factors.insert(key, map);
        } else {
            self.joint_factors.insert(key, map);
        }
        Ok(())
    }

    pub fn key(&self, key: &str) -> Option<&RatingKey> {
        self.keys.iter().find(|k| k.key == key)
    }

    /// Factor map for a single or joint key.
    pub fn factor_map(&self, key: &str) -> Option<&BTreeMap<String, f64>> {
        self.factors.get(key).or_else(|| self.joint_factors.get(key))
    }

    /// Relativity of one level (or `:`-joined joint cell).
    pub fn factor(&self, key: &str, level: &str) -> Option<f64> {
        self.factor_map(key).and_then(|m| m.get(level)).copied()
    }

    fn base_cell(&self, k: &RatingKey) -> Option<String> {
        k.dimensions
            .iter()
            .map(|d| self.base_class.get(d).cloned())
            .collect::<Option<Vec<_>>>()
            .map(|v| v.join(":"))
    }

    /// Check the structural invariants of a loaded or built table.
    pub fn validate(&self) -> Result<()> {
        if self.version != TARIFF_VERSION {
            return Err(Error::Tariff(format!(
                "tariff version {} (expected {TARIFF_VERSION})",
                self.version
            )));
        }
        if !(self.base_premium_smmlv.is_finite() && self.base_premium_smmlv > 0.0) {
            return Err(Error::Tariff("base premium must be positive".into()));
        }
        let mut seen = BTreeSet::new();
        for k in &self.keys {
            for d in &k.dimensions {
                if !seen.insert(d.clone()) {
                    return Err(Error::Tariff(format!("dimension `{d}` is rated twice")));
                }
            }
            let map = self
                .factor_map(&k.key)
                .ok_or_else(|| Error::Tariff(format!("no factors for `{}`", k.key)))?;
            let base = self
                .base_cell(k)
                .ok_or_else(|| Error::Tariff(format!("no base class for `{}`", k.key)))?;
            match map.get(&base) {
                Some(f) if *f == 1.0 => {}
                Some(f) => {
                    return Err(Error::Tariff(format!("base cell {}={base} has factor {f}", k.key)))
                }
                None => return Err(Error::Tariff(format!("base cell {}={base} is missing", k.key))),
            }
            if let Some((level, f)) = map.iter().find(|(_, f)| !(f.is_finite() && **f > 0.0)) {
                return Err(Error::Tariff(format!("factor {}={level} is {f}", k.key)));
            }
        }
        for key in self.factors.keys().chain(self.joint_factors.keys()) {
            if self.key(key).is_none() {
                return Err(Error::Tariff(format!("factor map `{key}` has no rating key")));
            }
        }
        Ok(())
    }

    pub fn to_json_string(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let t: TariffTable = serde_json::from_str(text)?;
        t.validate()?;
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json_string()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&fs::read_to_string(path)?)
    }

    /// Factor layout grouped by model, with joint two-way keys as grids.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Base premium {:.3} = {:.3} x {:.3} SMMLV",
            self.base_premium_smmlv, self.base_frequency, self.base_severity
        );
        let base: Vec<String> = self.base_class.iter().map(|(d, l)| format!("{d}={l}")).collect();
        let _ = writeln!(out, "Base class: {}", base.join(", "));
        for section in [Section::Frequency, Section::Severity] {
            let _ = writeln!(out);
            let _ = writeln!(out, "{}", section.heading());
            for k in self.keys.iter().filter(|k| k.section == section) {
                let map = match self.factor_map(&k.key) {
                    Some(m) => m,
                    None => continue,
                };
                if k.dimensions.len() == 2 {
                    self.render_grid(&mut out, k, map);
                } else {
                    let _ = writeln!(out, "  {}", k.key);
                    for (level, f) in self.ordered_cells(k, map) {
                        let _ = writeln!(out, "    {level:<12} {}", self.cell_text(&k.key, &level, f));
                    }
                }
            }
        }
        let blocking: Vec<&Exclusion> = self.exclusions.iter().filter(|e| e.kind == ExclusionKind::Excluded).collect();
        if !blocking.is_empty() || self.exclusions.len() > blocking.len() {
            let _ = writeln!(out);
        }
        if self.exclusions.iter().any(|e| e.kind == ExclusionKind::MainsOnly) {
            let _ = writeln!(out, "* estimate excludes interaction (main effects only)");
        }
        for e in blocking {
            let _ = writeln!(out, "not covered: {}={} ({})", e.key, e.level, e.reason);
        }
        out
    }

    fn cell_text(&self, key: &str, level: &str, f: f64) -> String {
        let star = if self.is_mains_only(key, level) { "*" } else { "" };
        format!("{f:.3}{star}")
    }

    fn is_mains_only(&self, key: &str, level: &str) -> bool {
        self.exclusions
            .iter()
            .any(|e| e.kind == ExclusionKind::MainsOnly && e.key == key && e.level == level)
    }

    /// Cells in declared level order where the provenance is available.
    fn ordered_cells(&self, k: &RatingKey, map: &BTreeMap<String, f64>) -> Vec<(String, f64)> {
        let mut cells: Vec<(String, f64)> = map.iter().map(|(l, f)| (l.clone(), *f)).collect();
        if let Some(order) = self.declared_order(k) {
            cells.sort_by_key(|(l, _)| {
                l.split(':')
                    .zip(&order)
                    .map(|(x, o)| o.iter().position(|y| y == x).unwrap_or(usize::MAX))
                    .collect::<Vec<_>>()
            });
        }
        cells
    }

    fn declared_order(&self, k: &RatingKey) -> Option<Vec<Vec<String>>> {
        let prov = self.provenance.as_ref()?;
        let doc = match k.section {
            Section::Frequency => &prov.frequency,
            Section::Severity => &prov.severity,
        };
        k.dimensions
            .iter()
            .map(|d| doc.factor(d).map(|f| f.declared.clone()))
            .collect()
    }

    fn render_grid(&self, out: &mut String, k: &RatingKey, map: &BTreeMap<String, f64>) {
        let mut rows: Vec<String> = Vec::new();
        let mut cols: Vec<String> = Vec::new();
        for (cell, _) in self.ordered_cells(k, map) {
            let (r, c) = cell.split_once(':').expect("two-way cell");
            if !rows.iter().any(|x| x == r) {
                rows.push(r.to_string());
            }
            if !cols.iter().any(|x| x == c) {
                cols.push(c.to_string());
            }
        }
        if let Some(order) = self.declared_order(k) {
            cols.sort_by_key(|c| order[1].iter().position(|y| y == c));
        }
        let _ = write!(out, "  {:<8}", k.key);
        for c in &cols {
            let _ = write!(out, " {c:>9}");
        }
        let _ = writeln!(out);
        for r in &rows {
            let _ = write!(out, "    {r:<6}");
            for c in &cols {
                let cell = format!("{r}:{c}");
                let text = match map.get(&cell) {
                    Some(f) => self.cell_text(&k.key, &cell, *f),
                    None => "-".into(),
                };
                let _ = write!(out, " {text:>9}");
            }
            let _ = writeln!(out);
        }
    }

    /// Price one risk.
    pub fn quote(&self, request: &QuoteRequest) -> Result<Quote> {
        if !(request.exposure.is_finite() && request.exposure > 0.0) {
            return Err(Error::InvalidArgument(format!("exposure must be positive, got {}", request.exposure)));
        }
        if let Some(c) = request.conversion {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::InvalidArgument(format!("conversion must be positive, got {c}")));
            }
        }
        let rated: BTreeSet<&str> = self.keys.iter().flat_map(|k| k.dimensions.iter().map(String::as_str)).collect();
        if let Some((d, _)) = request.factors.iter().find(|(d, _)| !rated.contains(d)) {
            return Err(Error::UnknownDimension(d.to_string()));
        }
        let mut applied = Vec::new();
        let mut mains_only = Vec::new();
        let mut premium = self.base_premium_smmlv;
        for k in &self.keys {
            let mut levels = Vec::new();
            for d in &k.dimensions {
                let level = request.factors.get(d).ok_or_else(|| {
                    Error::InvalidArgument(format!("quote request has no level for `{d}`"))
                })?;
                if let Some(e) = self
                    .exclusions
                    .iter()
                    .find(|e| e.kind == ExclusionKind::Excluded && e.key == *d && e.level == level)
                {
                    return Err(Error::Excluded(format!(
                        "{d} = {level}: {}; the tariff does not rate this level (e.g. luxury makes)",
                        e.reason
                    )));
                }
                levels.push(level.to_string());
            }
            let cell = levels.join(":");
            let factor = self.factor(&k.key, &cell).ok_or_else(|| {
                if k.dimensions.len() == 1 {
                    Error::UnknownLevel { dimension: k.key.clone(), level: cell.clone() }
                } else {
                    Error::Excluded(format!("{} = {cell} has no factor", k.key))
                }
            })?;
            if self.is_mains_only(&k.key, &cell) {
                mains_only.push(format!("{}={cell}", k.key));
            }
            premium *= factor;
            applied.push(AppliedFactor {
                key: k.key.clone(),
                level: cell,
                factor,
                section: k.section,
            });
        }
        let premium = premium * request.exposure;
        Ok(Quote {
            base_premium_smmlv: self.base_premium_smmlv,
            factors: applied,
            exposure: request.exposure,
            premium_smmlv: premium,
            conversion: request.conversion,
            premium_currency: request.conversion.map(|c| premium * c),
            mains_only,
        })
    }
}

fn section_word(s: Section) -> &'static str {
    match s {
        Section::Frequency => "frequency",
        Section::Severity => "severity",
    }
}

pub fn build_tariff(freq: &ModelDocument, sev: &ModelDocument) -> Result<TariffTable> {
    TariffTable::build(freq, sev)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuoteRequest {
    pub factors: RatingFactors,
    /// Years of cover.
    pub exposure: f64,
    /// Currency units per SMMLV.
    pub conversion: Option<f64>,
}

impl QuoteRequest {
    pub fn new(factors: RatingFactors) -> Self {
        QuoteRequest {
            factors,
            exposure: 1.0,
            conversion: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppliedFactor {
    pub key: String,
    pub level: String,
    pub factor: f64,
    pub section: Section,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quote {
    pub base_premium_smmlv: f64,
    pub factors: Vec<AppliedFactor>,
    pub exposure: f64,
    pub premium_smmlv: f64,
    pub conversion: Option<f64>,
    pub premium_currency: Option<f64>,
    /// Joint cells priced without their interaction estimate.
    pub mains_only: Vec<String>,
}

impl Quote {
    /// `0.951 x 1.349 x ... = 1.206 SMMLV`, then the currency amount when converted.
    pub fn render(&self) -> String {
        let mut chain = vec![format!("{:.3}", self.base_premium_smmlv)];
        chain.extend(self.factors.iter().filter(|f| f.factor != 1.0).map(|f| format!("{:.3}", f.factor)));
        if self.exposure != 1.0 {
            chain.push(format!("{} (exposure)", self.exposure));
        }
        let mut out = format!("{} = {:.3} SMMLV", chain.join(" x "), self.premium_smmlv);
        if let (Some(c), Some(v)) = (self.conversion, self.premium_currency) {
            let _ = write!(out, " = {v:.3} at {c} per SMMLV");
        }
        for m in &self.mains_only {
            let _ = write!(out, "\nwarning: {m} priced from main effects only");
        }
        out.push('\n');
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(name: &str) -> ModelDocument {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name);
        ModelDocument::load(&path).unwrap()
    }

    fn fixture_tariff() -> TariffTable {
        build_tariff(&fixture("freq_table6.json"), &fixture("sev_table9.json")).unwrap()
    }

    fn base_request(t: &TariffTable) -> RatingFactors {
        let mut f = RatingFactors::new();
        for (d, l) in &t.base_class {
            f.insert(d, l);
        }
        f
    }

    #[test]
    fn base_premium_and_joint_cells() {
        let t = fixture_tariff();
        assert!((t.base_frequency - 0.143).abs() < 5e-4);
        assert!((t.base_severity - 6.649).abs() < 5e-4);
        assert!((t.base_premium_smmlv - 0.951).abs() < 1e-3);
        assert!((t.factor("model:region", "M3:R1").unwrap() - 1.094).abs() < 2e-3);
        assert!((t.factor("make:class", "B2:C2").unwrap() - 1.513).abs() < 2e-3);
        assert_eq!(t.factor("model:region", "M2:R2"), Some(1.0));
        assert_eq!(t.factor("age", "E4"), Some(1.0));
    }

    #[test]
    fn base_quote_is_the_base_premium_and_single_factors_divide_out() {
        let t = fixture_tariff();
        let base = base_request(&t);
        let q0 = t.quote(&QuoteRequest::new(base.clone())).unwrap();
        assert_eq!(q0.premium_smmlv, t.base_premium_smmlv);
        for (dim, map) in &t.factors {
            for (level, f) in map {
                let q = t.quote(&QuoteRequest::new(base.clone().with(dim, level))).unwrap();
                assert!((q.premium_smmlv / q0.premium_smmlv - f).abs() < 1e-12 * f);
            }
        }
        let mut two = QuoteRequest::new(base.with("age", "E1"));
        let one = t.quote(&two).unwrap().premium_smmlv;
        two.exposure = 2.0;
        assert!((t.quote(&two).unwrap().premium_smmlv - 2.0 * one).abs() < 1e-12);
    }

    #[test]
    fn exclusions_and_mains_only() {
        let t = fixture_tariff();
        let base = base_request(&t);
        let lux = t.quote(&QuoteRequest::new(base.clone().with("make", "B4")));
        assert!(matches!(lux, Err(Error::Excluded(_))));
        let q = t
            .quote(&QuoteRequest::new(base.clone().with("make", "B5").with("class", "C3")))
            .unwrap();
        assert_eq!(q.mains_only, vec!["make:class=B5:C3"]);
        let f = t.factor("make:class", "B5:C3").unwrap();
        assert!((f - 1.282).abs() < 2e-3);
        assert!(matches!(
            t.quote(&QuoteRequest::new(base.clone().with("age", "E9"))),
            Err(Error::UnknownLevel { .. })
        ));
        assert!(t.render().contains("1.282*"));
    }

    #[test]
    fn round_trip_and_tamper_detection() {
        let t = fixture_tariff();
        let text = t.to_json_string().unwrap();
        assert_eq!(TariffTable::from_json_str(&text).unwrap(), t);
        let mut bad = t.clone();
        bad.factors.get_mut("age").unwrap().insert("E1".into(), -0.5);
        assert!(TariffTable::from_json_str(&bad.to_json_string().unwrap()).is_err());
        let mut bad = t.clone();
        bad.factors.get_mut("age").unwrap().remove("E4");
        assert!(TariffTable::from_json_str(&bad.to_json_string().unwrap()).is_err());
        let mut bad = t;
        bad.version = 99;
        assert!(TariffTable::from_json_str(&bad.to_json_string().unwrap()).is_err());
    }

    #[test]
    fn non_log_link_is_rejected() {
        let mut f = fixture("freq_table6.json");
        f.link = Link::Identity;
        assert!(matches!(build_tariff(&f, &fixture("sev_table9.json")), Err(Error::NonLogLink(_))));
    }

    #[test]
    fn shared_dimension_is_rejected() {
        let f = fixture("freq_table6.json");
        assert!(matches!(build_tariff(&f, &f), Err(Error::Tariff(_))));
    }
}
