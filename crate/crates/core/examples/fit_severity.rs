//! Fit the gamma severity model with a log link and compare dispersion
//! estimators.

use std::path::Path;

use autorate::design::{build_design, prepare_rows, DropRule, Formula, ResponseRole};
use autorate::diagnostics::goodness_of_fit;
use autorate::glm::{fit_family, DispersionMethod, FamilyKind, FitControl};
use autorate::ingest::{load_schemes, take_scheme};
use autorate::synth::{Generator, GeneratorSpec};

fn main() -> autorate::Result<()> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let spec = GeneratorSpec::load(&fixtures.join("demo_generator.toml"))?;
    let scheme = take_scheme(load_schemes(&fixtures.join("bands.toml"))?, "tariff")?;
    let portfolio = Generator::new(&spec, scheme.clone())?.portfolio_with_claims(10_000, 2)?;

    let formula: Formula = "amount ~ value_sev + gender + make + class + make:class".parse()?;
    // luxury makes are not rated
    let drops: Vec<DropRule> = vec!["make=B4".parse()?];
    let rows = prepare_rows(
        ResponseRole::Severity,
        &portfolio.policies,
        &portfolio.claims,
        &scheme,
        &drops,
        &[],
    )?;
    let design = build_design(&rows, &formula, &scheme.catalog())?;
    let model = fit_family(&design, FamilyKind::Gamma, None, &FitControl::default())?;

    print!("{}", model.to_document(None).render_table());
    for method in [DispersionMethod::Pearson, DispersionMethod::Deviance, DispersionMethod::MaximumLikelihood] {
        println!("phi ({method:?}) = {:.4}", model.estimate_dispersion(method)?);
    }
    let gof = goodness_of_fit(&model, None, None)?;
    println!("D* = {:.1} on {} df, p = {:.2}", gof.scaled_deviance, gof.df, gof.p_deviance);
    Ok(())
}
