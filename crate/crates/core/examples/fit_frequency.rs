//! Fit the Poisson frequency model to aggregated rating cells and check its
//! goodness of fit.

use std::path::Path;

use autorate::design::{build_design, prepare_rows, Formula, ResponseRole};
use autorate::diagnostics::goodness_of_fit;
use autorate::glm::{fit_family, FamilyKind, FitControl};
use autorate::ingest::{load_schemes, take_scheme};
use autorate::synth::{Generator, GeneratorSpec};

fn main() -> autorate::Result<()> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let spec = GeneratorSpec::load(&fixtures.join("demo_generator.toml"))?;
    let scheme = take_scheme(load_schemes(&fixtures.join("bands.toml"))?, "tariff")?;
    let portfolio = Generator::new(&spec, scheme.clone())?.portfolio(100_000, 1)?;

    let formula: Formula = "count ~ model + region + age + model:region".parse()?;
    let cells = prepare_rows(
        ResponseRole::Frequency,
        &portfolio.policies,
        &portfolio.claims,
        &scheme,
        &[],
        &formula.dimensions(),
    )?;
    let design = build_design(&cells, &formula, &scheme.catalog())?;
    let model = fit_family(&design, FamilyKind::Poisson, None, &FitControl::default())?;

    print!("{}", model.to_document(None).render_table());
    let gof = goodness_of_fit(&model, None, None)?;
    println!(
        "{} cells, p = {}: D* = {:.1}, X2 = {:.1} on {} df, p-values {:.2} / {:.2}",
        model.n(),
        model.p(),
        gof.scaled_deviance,
        gof.pearson_chi2,
        gof.df,
        gof.p_deviance,
        gof.p_pearson
    );
    Ok(())
}
