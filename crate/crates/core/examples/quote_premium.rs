//! Price a 21-year-old man's three-year-old Toyota pickup worth 160 SMMLV,
//! written in Bogota.

use std::path::Path;

use autorate::glm::ModelDocument;
use autorate::ingest::RatingFactors;
use autorate::tariff::{build_tariff, QuoteRequest};

fn main() -> autorate::Result<()> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let table = build_tariff(
        &ModelDocument::load(&fixtures.join("freq_table6.json"))?,
        &ModelDocument::load(&fixtures.join("sev_table9.json"))?,
    )?;

    let factors = RatingFactors::new()
        .with("age", "E1")
        .with("model", "M5")
        .with("region", "R2")
        .with("make", "B2")
        .with("class", "C2")
        .with("value_sev", "V3")
        .with("gender", "M");
    let mut request = QuoteRequest::new(factors.clone());
    // million pesos per SMMLV in the year of the data
    request.conversion = Some(0.433);
    println!("{}", table.quote(&request)?.render());

    let half_year = QuoteRequest {
        exposure: 0.5,
        ..QuoteRequest::new(factors.clone())
    };
    println!("{}", table.quote(&half_year)?.render());

    let luxury = factors.with("make", "B4");
    match table.quote(&QuoteRequest::new(luxury)) {
        Ok(q) => println!("{}", q.render()),
        Err(e) => println!("luxury make: {e}"),
    }
    Ok(())
}
