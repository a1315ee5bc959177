//! Leverage, Cook's distance and a simulated envelope for the frequency model.
//! Writes the half-normal plot to `out/envelope.svg`.

use std::path::Path;

use autorate::design::{build_design, prepare_rows, Formula, ResponseRole};
use autorate::diagnostics::{diagnose, goodness_of_fit, simulated_envelope, EnvelopeConfig, Thresholds};
use autorate::glm::{fit_family, FamilyKind, FitControl};
use autorate::ingest::{load_schemes, take_scheme};
use autorate::synth::{Generator, GeneratorSpec};

fn main() -> autorate::Result<()> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let spec = GeneratorSpec::load(&fixtures.join("demo_generator.toml"))?;
    let scheme = take_scheme(load_schemes(&fixtures.join("bands.toml"))?, "tariff")?;
    let portfolio = Generator::new(&spec, scheme.clone())?.portfolio(100_000, 4)?;

    let formula: Formula = "count ~ model + region + age + model:region".parse()?;
    let cells = prepare_rows(ResponseRole::Frequency, &portfolio.policies, &[], &scheme, &[], &formula.dimensions())?;
    let design = build_design(&cells, &formula, &scheme.catalog())?;
    let model = fit_family(&design, FamilyKind::Poisson, None, &FitControl::default())?;

    let report = diagnose(&model, &Thresholds::default());
    println!("sum of leverages {:.6} (p = {})", report.leverage.iter().sum::<f64>(), model.p());
    println!("{}", report.flags.summary());
    let gof = goodness_of_fit(&model, None, None)?;
    println!("D* = {:.1} on {} df (p = {:.2})", gof.scaled_deviance, gof.df, gof.p_deviance);

    let envelope = simulated_envelope(&model, &EnvelopeConfig::default())?;
    println!("{:.1}% of ordered residuals inside the envelope", 100.0 * envelope.coverage());
    std::fs::create_dir_all("out")?;
    std::fs::write("out/envelope.svg", envelope.to_svg())?;
    println!("half-normal plot written to out/envelope.svg");
    Ok(())
}
