//! Rank candidate frequency formulas by AIC and BIC, then merge regions whose
//! effects are indistinguishable.

use std::collections::BTreeSet;
use std::path::Path;

use autorate::design::{prepare_rows, Formula, ResponseRole};
use autorate::glm::{FamilyKind, FitControl};
use autorate::ingest::{load_schemes, take_scheme};
use autorate::selection::{compare_models, merge_levels};
use autorate::synth::{Generator, GeneratorSpec};

fn main() -> autorate::Result<()> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let spec = GeneratorSpec::load(&fixtures.join("demo_generator.toml"))?;
    let schemes = load_schemes(&fixtures.join("bands.toml"))?;
    let tariff = take_scheme(schemes.clone(), "tariff")?;
    let raw = take_scheme(schemes, "raw")?;
    let portfolio = Generator::new(&spec, tariff.clone())?.portfolio(100_000, 3)?;

    let candidates: Vec<Formula> = [
        "count ~ model",
        "count ~ value_freq",
        "count ~ model + region + model:region",
        "count ~ model + age",
        "count ~ model + region + age + model:region",
        "count ~ model + region + policy_class + model:region + region:policy_class + model:policy_class + model:region:policy_class",
    ]
    .iter()
    .map(|f| f.parse())
    .collect::<autorate::Result<_>>()?;
    // Poisson coefficients are unchanged by aggregation, so one cell table
    // over every dimension serves all candidates
    let dims: Vec<String> = candidates
        .iter()
        .flat_map(Formula::dimensions)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let rows = prepare_rows(ResponseRole::Frequency, &portfolio.policies, &[], &tariff, &[], &dims)?;
    let table = compare_models(&rows, &tariff.catalog(), FamilyKind::Poisson, None, &candidates, &FitControl::default())?;
    println!("{}", table.render());

    let formula: Formula = "count ~ model + region + age".parse()?;
    let rows = prepare_rows(ResponseRole::Frequency, &portfolio.policies, &[], &raw, &[], &formula.dimensions())?;
    let grouping = merge_levels(
        &rows,
        &raw.catalog(),
        FamilyKind::Poisson,
        None,
        &formula,
        "region",
        0.01,
        &FitControl::default(),
    )?;
    print!("{}", grouping.render());
    Ok(())
}
