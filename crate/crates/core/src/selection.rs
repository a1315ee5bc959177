//! Candidate comparison by information criteria and greedy level merging.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{build_design, Formula, Observation};
use crate::error::{Error, Result};
use crate::glm::{fit_family, FamilyKind, FitControl, FittedModel, Link};
use crate::ingest::{Catalog, FactorSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub formula: String,
    pub k: usize,
    pub log_likelihood: f64,
    pub aic: f64,
    pub bic: f64,
    pub deviance: f64,
    pub converged: bool,
    pub best_aic: bool,
    pub best_bic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub family: FamilyKind,
    pub link: Link,
    pub n: usize,
    /// Sorted by AIC, then fewer parameters, then formula text.
    pub rows: Vec<ComparisonRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    Aic,
    Bic,
}

fn order(a: &ComparisonRow, b: &ComparisonRow, c: Criterion) -> std::cmp::Ordering {
    let (x, y) = match c {
        Criterion::Aic => (a.aic, b.aic),
        Criterion::Bic => (a.bic, b.bic),
    };
    x.total_cmp(&y)
        .then(a.k.cmp(&b.k))
        .then(a.formula.cmp(&b.formula))
}

impl ComparisonTable {
    pub fn sort_by(&mut self, criterion: Criterion) {
        self.rows.sort_by(|a, b| order(a, b, criterion));
    }

    pub fn best(&self, criterion: Criterion) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| match criterion {
            Criterion::Aic => r.best_aic,
            Criterion::Bic => r.best_bic,
        })
    }

    pub fn render(&self) -> String {
        let width = self.rows.iter().map(|r| r.formula.chars().count()).max().unwrap_or(7).max(7);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>3}  {:>14}  {:>14}  {:>14}  {}",
            "Formula", "k", "logLik", "AIC", "BIC", "note"
        );
        for r in &self.rows {
            let mut note = Vec::new();
            if r.best_aic {
                note.push("best AIC");
            }
            if r.best_bic {
                note.push("best BIC");
            }
            if !r.converged {
                note.push("not converged");
            }
            let _ = writeln!(
                out,
                "{:<width$}  {:>3}  {:>14.1}  {:>14.1}  {:>14.1}  {}",
                r.formula,
                r.k,
                r.log_likelihood,
                r.aic,
                r.bic,
                note.join(", ")
            );
        }
        out
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["formula", "k", "log_likelihood", "aic", "bic", "converged", "best_aic", "best_bic"])?;
        for r in &self.rows {
            w.write_record([
                r.formula.clone(),
                r.k.to_string(),
                format!("{:.6}", r.log_likelihood),
                format!("{:.6}", r.aic),
                format!("{:.6}", r.bic),
                r.converged.to_string(),
                r.best_aic.to_string(),
                r.best_bic.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Fit every formula to the same rows and rank them. Fits run on the
/// current rayon pool.
pub fn compare_models(
    rows: &[Observation],
    catalog: &Catalog,
    family: FamilyKind,
    link: Option<Link>,
    formulas: &[Formula],
    control: &FitControl,
) -> Result<ComparisonTable> {
    if formulas.len() < 2 {
        return Err(Error::InvalidArgument("comparison needs at least two formulas".into()));
    }
    let role = formulas[0].response;
    if formulas.iter().any(|f| f.response != role) {
        return Err(Error::InvalidArgument("formulas must share one response".into()));
    }
    let fits: Vec<Result<FittedModel>> = formulas
        .par_iter()
        .map(|f| {
            let design = build_design(rows, f, catalog)?;
            fit_family(&design, family, link, control)
        })
        .collect();
    let mut out = Vec::with_capacity(fits.len());
    for (f, m) in formulas.iter().zip(fits) {
        let m = m?;
        out.push(ComparisonRow {
            formula: f.to_string(),
            k: m.n_parameters(),
            log_likelihood: m.log_likelihood,
            aic: m.aic(),
            bic: m.bic(),
            deviance: m.deviance,
            converged: m.converged,
            best_aic: false,
            best_bic: false,
        });
    }
    let pick = |out: &[ComparisonRow], c: Criterion| {
        out.iter()
            .enumerate()
            .filter(|(_, r)| r.converged)
            .min_by(|a, b| order(a.1, b.1, c))
            .map(|(i, _)| i)
    };
    if let Some(i) = pick(&out, Criterion::Bic) {
        out[i].best_bic = true;
    }
    if let Some(i) = pick(&out, Criterion::Aic) {
        out[i].best_aic = true;
    }
    let mut table = ComparisonTable {
        family,
        link: link.unwrap_or(family.default_link()),
        n: rows.len(),
        rows: out,
    };
    table.sort_by(Criterion::Aic);
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeStep {
    pub first: String,
    pub second: String,
    pub merged: String,
    pub statistic: f64,
    pub p_value: f64,
}

/// Result of merging levels of one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelGrouping {
    pub dimension: String,
    /// Original level to merged level.
    pub mapping: BTreeMap<String, String>,
    /// Merged levels in order.
    pub levels: Vec<String>,
    pub reference: String,
    pub history: Vec<MergeStep>,
    pub alpha: f64,
}

impl LevelGrouping {
    /// Original levels that ended up in `merged`.
    pub fn members(&self, merged: &str) -> Vec<&str> {
        self.mapping
            .iter()
            .filter(|(_, m)| m.as_str() == merged)
            .map(|(o, _)| o.as_str())
            .collect()
    }

    /// Partition of the original levels, each group sorted.
    pub fn groups(&self) -> Vec<Vec<String>> {
        self.levels
            .iter()
            .map(|l| self.members(l).into_iter().map(String::from).collect())
            .collect()
    }

    pub fn relabel(&self, rows: &[Observation]) -> Vec<Observation> {
        rows.iter()
            .map(|r| {
                let mut r = r.clone();
                if let Some(level) = r.factors.get(&self.dimension) {
                    if let Some(m) = self.mapping.get(level) {
                        let m = m.clone();
                        r.factors.insert(&self.dimension, &m);
                    }
                }
                r
            })
            .collect()
    }

    pub fn apply_to_catalog(&self, catalog: &Catalog) -> Catalog {
        let mut out = catalog.clone();
        if let Some(spec) = out.get_mut(&self.dimension) {
            spec.levels = self.levels.clone();
            spec.reference = self.reference.clone();
        }
        out
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} (alpha {})", self.dimension, self.alpha);
        for (i, step) in self.history.iter().enumerate() {
            let _ = writeln!(
                out,
                "  merge {}: {} + {} -> {}  (Wald {:.3}, p {:.4})",
                i + 1,
                step.first,
                step.second,
                step.merged,
                step.statistic,
                step.p_value
            );
        }
        for level in &self.levels {
            let star = if *level == self.reference { "*" } else { "" };
            let _ = writeln!(out, "  {level}{star}: {}", self.members(level).join(", "));
        }
        out
    }
}

/// Pair-difference Wald test between two levels of `dim`; the reference
/// level has an implicit zero coefficient.
fn pair_test(model: &FittedModel, dim: &str, a: &str, b: &str) -> Result<(f64, f64)> {
    let p = model.p();
    let mut c = DMatrix::zeros(1, p);
    for (level, sign) in [(a, 1.0), (b, -1.0)] {
        let label = format!("{dim}:{level}");
        if let Some(j) = model.labels().iter().position(|l| *l == label) {
            c[(0, j)] = sign;
        }
    }
    let t = model.wald_test(&c)?;
    Ok((t.statistic, t.p_value))
}

/// Greedy merging: repeatedly merge the admissible pair with the largest
/// Wald p-value while it exceeds `alpha`. Ordered dimensions only merge
/// adjacent groups.
#[allow(clippy::too_many_arguments)]
pub fn merge_levels(
    rows: &[Observation],
    catalog: &Catalog,
    family: FamilyKind,
    link: Option<Link>,
    formula: &Formula,
    dimension: &str,
    alpha: f64,
    control: &FitControl,
) -> Result<LevelGrouping> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must be in (0, 1), got {alpha}")));
    }
    if !formula.has_main(dimension) {
        return Err(Error::InvalidArgument(format!("`{dimension}` is not a main effect of the formula")));
    }
    let spec: &FactorSpec = catalog
        .get(dimension)
        .ok_or_else(|| Error::UnknownDimension(dimension.to_string()))?;
    let observed: Vec<String> = spec
        .levels
        .iter()
        .filter(|l| rows.iter().any(|r| r.factors.get(dimension) == Some(l.as_str())))
        .cloned()
        .collect();
    // each group holds original levels in catalog order
    let mut groups: Vec<Vec<String>> = observed.iter().map(|l| vec![l.clone()]).collect();
    let name_of = |g: &[String]| -> String {
        if g.contains(&spec.reference) {
            spec.reference.clone()
        } else {
            g.join("+")
        }
    };
    let grouping = |groups: &[Vec<String>], history: Vec<MergeStep>| {
        let mut mapping = BTreeMap::new();
        for g in groups {
            for l in g {
                mapping.insert(l.clone(), name_of(g));
            }
        }
        LevelGrouping {
            dimension: dimension.to_string(),
            mapping,
            levels: groups.iter().map(|g| name_of(g)).collect(),
            reference: spec.reference.clone(),
            history,
            alpha,
        }
    };
    let mut history = Vec::new();
    loop {
        if groups.len() < 2 {
            return Err(Error::SingleLevel(dimension.to_string()));
        }
        let current = grouping(&groups, Vec::new());
        let design = build_design(&current.relabel(rows), formula, &current.apply_to_catalog(catalog))?;
        let model = fit_family(&design, family, link, control)?;
        let names: Vec<String> = groups.iter().map(|g| name_of(g)).collect();
        let pairs: Vec<(usize, usize)> = if spec.ordered {
            (1..groups.len()).map(|i| (i - 1, i)).collect()
        } else {
            (0..groups.len())
                .flat_map(|i| (i + 1..groups.len()).map(move |j| (i, j)))
                .collect()
        };
        let mut best: Option<(usize, usize, f64, f64)> = None;
        for (i, j) in pairs {
            let (stat, p) = pair_test(&model, dimension, &names[i], &names[j])?;
            let better = match best {
                None => true,
                Some((bi, bj, _, bp)) => {
                    p > bp || (p == bp && (&names[i], &names[j]) < (&names[bi], &names[bj]))
                }
            };
            if better {
                best = Some((i, j, stat, p));
            }
        }
        let (i, j, stat, p) = best.expect("at least one pair");
        if p <= alpha {
            break;
        }
        if groups.len() == 2 {
            return Err(Error::SingleLevel(dimension.to_string()));
        }
        let second = groups.remove(j);
        groups[i].extend(second);
        let mut g = groups[i].clone();
        g.sort_by_key(|l| spec.position(l));
        groups[i] = g;
        history.push(MergeStep {
            first: names[i].clone(),
            second: names[j].clone(),
            merged: name_of(&groups[i]),
            statistic: stat,
            p_value: p,
        });
    }
    Ok(grouping(&groups, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glm::{sample_response, Family};
    use crate::ingest::RatingFactors;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn catalog() -> Catalog {
        let mut c = Catalog::new();
        c.insert(
            "grp".into(),
            FactorSpec {
                name: "grp".into(),
                levels: ["a", "b", "c", "d", "e"].iter().map(|s| s.to_string()).collect(),
                reference: "b".into(),
                ordered: false,
            },
        );
        c.insert(
            "band".into(),
            FactorSpec {
                name: "band".into(),
                levels: ["x1", "x2", "x3", "x4"].iter().map(|s| s.to_string()).collect(),
                reference: "x1".into(),
                ordered: true,
            },
        );
        c.insert(
            "noise".into(),
            FactorSpec {
                name: "noise".into(),
                levels: vec!["n0".into(), "n1".into()],
                reference: "n0".into(),
                ordered: false,
            },
        );
        c
    }

    fn data(seed: u64, n: usize) -> Vec<Observation> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grp = ["a", "b", "c", "d", "e"];
        // a, b, c share an effect; d and e share another
        let effect = [0.0f64, 0.0, 0.0, 0.6, 0.6];
        let band = ["x1", "x2", "x3", "x4"];
        let band_effect = [0.0, 0.0, 0.5, 0.5];
        (0..n)
            .map(|_| {
                let g = rng.gen_range(0..5);
                let b = rng.gen_range(0..4);
                let e = 0.5 + rng.gen::<f64>();
                let mu = e * (-1.0 + effect[g] + band_effect[b]).exp();
                Observation {
                    factors: RatingFactors::new()
                        .with("grp", grp[g])
                        .with("band", band[b])
                        .with("noise", if rng.gen::<bool>() { "n1" } else { "n0" }),
                    response: sample_response(Family::Poisson, mu, 1.0, 1.0, &mut rng),
                    exposure: e,
                    weight: 1.0,
                }
            })
            .collect()
    }

    #[test]
    fn comparison_marks_best_and_sorts() {
        let rows = data(1, 20_000);
        let formulas: Vec<Formula> = ["count ~ grp", "count ~ grp + band", "count ~ grp + band", "count ~ band"]
            .iter()
            .map(|f| f.parse().unwrap())
            .collect();
        let t = compare_models(&rows, &catalog(), FamilyKind::Poisson, None, &formulas, &FitControl::default()).unwrap();
        assert_eq!(t.rows[0].formula, "count ~ grp + band");
        assert_eq!(t.rows[0].aic, t.rows[1].aic);
        assert!(t.rows[0].best_aic && !t.rows[1].best_aic);
        assert!(t.rows.windows(2).all(|w| w[0].aic <= w[1].aic));
        assert!(t.to_csv().unwrap().starts_with("formula,k,"));
    }

    #[test]
    fn nested_deviance_is_monotone() {
        let rows = data(2, 5000);
        let formulas: Vec<Formula> = ["count ~ grp", "count ~ grp + band", "count ~ grp + band + noise"]
            .iter()
            .map(|f| f.parse().unwrap())
            .collect();
        let t = compare_models(&rows, &catalog(), FamilyKind::Poisson, None, &formulas, &FitControl::default()).unwrap();
        let dev = |f: &str| t.rows.iter().find(|r| r.formula == f).unwrap().deviance;
        assert!(dev("count ~ grp + band") <= dev("count ~ grp"));
        assert!(dev("count ~ grp + band + noise") <= dev("count ~ grp + band"));
    }

    #[test]
    fn merging_recovers_planted_groups() {
        let rows = data(3, 40_000);
        let f: Formula = "count ~ grp + band".parse().unwrap();
        let g = merge_levels(&rows, &catalog(), FamilyKind::Poisson, None, &f, "grp", 0.01, &FitControl::default()).unwrap();
        assert_eq!(g.groups(), vec![vec!["a", "b", "c"], vec!["d", "e"]]);
        assert_eq!(g.levels, vec!["b", "d+e"]);
        assert_eq!(g.history.len(), 3);
        let b = merge_levels(&rows, &catalog(), FamilyKind::Poisson, None, &f, "band", 0.01, &FitControl::default()).unwrap();
        assert_eq!(b.groups(), vec![vec!["x1", "x2"], vec!["x3", "x4"]]);
    }

    #[test]
    fn merging_to_one_level_is_an_error() {
        let rows = data(4, 3000);
        let f: Formula = "count ~ grp + noise".parse().unwrap();
        let r = merge_levels(&rows, &catalog(), FamilyKind::Poisson, None, &f, "noise", 0.999_999, &FitControl::default());
        assert!(matches!(r, Err(Error::SingleLevel(_))) || r.unwrap().levels.len() == 2);
    }
}
